//! LaMP and CPoLS classifiers assembled from the `nn` layers.
//!
//! LaMP embeds the byte sequence, runs a stacked LSTM, max-pools the top
//! layer over valid timesteps and classifies the pooled vector with dense
//! ReLU layers and a sigmoid. CPoLS first cuts the valid bytes into
//! fixed-length partitions (the last one padded), turns every partition into
//! one vector by embedding, convolution and max pooling, and feeds that much
//! shorter sequence to the same recurrent head.

mod config;
mod tape;

pub use config::{
    published_minibatch, CpolsConfig, LampConfig, ModelConfig, ModelKind, ScriptLanguage,
    DEFAULT_CLASSIFIER_WIDTH, DEFAULT_PARTITION_LEN,
};
pub use tape::{check_model_gradients, gradcheck_config, GradientTape, ModelObjective};

use rand::SeedableRng;
use thiserror::Error;

use crate::corpus::PAD_CODE;
use crate::nn::dense::{dense_relu, dense_relu_backward, sigmoid_output, sigmoid_output_backward};
use crate::nn::init::InitRng;
use crate::nn::loss::{cross_entropy, cross_entropy_grad_logit};
use crate::nn::lstm::{lstm_sequence, lstm_sequence_backward, LstmTrace};
use crate::nn::pool::{temporal_max_pool, temporal_max_pool_backward};
use crate::nn::{
    ConvParams, DenseParams, EmbeddingParams, LstmParams, NnError, OutputParams, Parameters, Real,
    Tensor,
};
use crate::normalizer::{self, EncodedSequence, RawScript};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("empty input sequence")]
    EmptyInput,
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("model is {actual:?}, operation requires {expected:?}")]
    WrongKind {
        expected: ModelKind,
        actual: ModelKind,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Every trainable tensor of a classifier. Also used, zero-initialized, as
/// the gradient accumulator of the same model.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams<F> {
    pub embedding: EmbeddingParams<F>,
    pub conv: Option<ConvParams<F>>,
    pub lstm: Vec<LstmParams<F>>,
    pub dense: Vec<DenseParams<F>>,
    pub output: OutputParams<F>,
}

impl<F: Real> ClassifierParams<F> {
    fn build(config: &ModelConfig, rng: Option<&mut InitRng>) -> Self {
        let (embed, hidden, layers, classifier_layers, width) = config.head_dims();
        match rng {
            Some(rng) => {
                let embedding = EmbeddingParams::new(rng, embed);
                let (conv, seq_dim) = match config {
                    ModelConfig::Lamp(_) => (None, embed),
                    ModelConfig::Cpols(c) => (
                        Some(ConvParams::new(rng, c.filters, c.window, embed, c.stride)),
                        c.filters,
                    ),
                };
                let lstm = (0..layers)
                    .map(|l| LstmParams::new(rng, if l == 0 { seq_dim } else { hidden }, hidden))
                    .collect();
                let dense = (0..classifier_layers)
                    .map(|l| DenseParams::new(rng, if l == 0 { hidden } else { width }, width))
                    .collect();
                let output = OutputParams::new(rng, width);
                Self {
                    embedding,
                    conv,
                    lstm,
                    dense,
                    output,
                }
            }
            None => {
                let (conv, seq_dim) = match config {
                    ModelConfig::Lamp(_) => (None, embed),
                    ModelConfig::Cpols(c) => (
                        Some(ConvParams::zeros(c.filters, c.window, embed, c.stride)),
                        c.filters,
                    ),
                };
                Self {
                    embedding: EmbeddingParams::zeros(embed),
                    conv,
                    lstm: (0..layers)
                        .map(|l| LstmParams::zeros(if l == 0 { seq_dim } else { hidden }, hidden))
                        .collect(),
                    dense: (0..classifier_layers)
                        .map(|l| DenseParams::zeros(if l == 0 { hidden } else { width }, width))
                        .collect(),
                    output: OutputParams::zeros(width),
                }
            }
        }
    }

    /// All-zero tensors with the same layout.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(F::zero());
        }
        z
    }

    pub fn cast<G: Real>(&self) -> ClassifierParams<G> {
        ClassifierParams {
            embedding: EmbeddingParams {
                table: self.embedding.table.cast(),
            },
            conv: self.conv.as_ref().map(|c| ConvParams {
                filters: c.filters.cast(),
                bias: c.bias.cast(),
                stride: c.stride,
            }),
            lstm: self
                .lstm
                .iter()
                .map(|p| LstmParams {
                    w_xi: p.w_xi.cast(),
                    w_xf: p.w_xf.cast(),
                    w_xo: p.w_xo.cast(),
                    w_xc: p.w_xc.cast(),
                    w_hi: p.w_hi.cast(),
                    w_hf: p.w_hf.cast(),
                    w_ho: p.w_ho.cast(),
                    w_hc: p.w_hc.cast(),
                    b_i: p.b_i.cast(),
                    b_f: p.b_f.cast(),
                    b_o: p.b_o.cast(),
                    b_c: p.b_c.cast(),
                })
                .collect(),
            dense: self
                .dense
                .iter()
                .map(|d| DenseParams {
                    weight: d.weight.cast(),
                })
                .collect(),
            output: OutputParams {
                weight: self.output.weight.cast(),
            },
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: F) {
        for (_, t) in self.tensors_mut() {
            t.scale(s);
        }
    }

    pub fn global_norm(&self) -> F {
        self.tensors()
            .iter()
            .map(|(_, t)| t.sum_squares())
            .fold(F::zero(), |a, b| a + b)
            .sqrt()
    }
}

impl<F: Real> Parameters<F> for ClassifierParams<F> {
    fn tensors(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out: Vec<(String, &Tensor<F>)> = self
            .embedding
            .tensors()
            .into_iter()
            .map(|(n, t)| (format!("embedding.{n}"), t))
            .collect();
        if let Some(conv) = &self.conv {
            out.extend(
                conv.tensors()
                    .into_iter()
                    .map(|(n, t)| (format!("conv.{n}"), t)),
            );
        }
        for (l, p) in self.lstm.iter().enumerate() {
            out.extend(
                p.tensors()
                    .into_iter()
                    .map(|(n, t)| (format!("lstm{l}.{n}"), t)),
            );
        }
        for (l, p) in self.dense.iter().enumerate() {
            out.extend(
                p.tensors()
                    .into_iter()
                    .map(|(n, t)| (format!("dense{l}.{n}"), t)),
            );
        }
        out.extend(
            self.output
                .tensors()
                .into_iter()
                .map(|(n, t)| (format!("output.{n}"), t)),
        );
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        let mut out: Vec<(String, &mut Tensor<F>)> = self
            .embedding
            .tensors_mut()
            .into_iter()
            .map(|(n, t)| (format!("embedding.{n}"), t))
            .collect();
        if let Some(conv) = &mut self.conv {
            out.extend(
                conv.tensors_mut()
                    .into_iter()
                    .map(|(n, t)| (format!("conv.{n}"), t)),
            );
        }
        for (l, p) in self.lstm.iter_mut().enumerate() {
            out.extend(
                p.tensors_mut()
                    .into_iter()
                    .map(|(n, t)| (format!("lstm{l}.{n}"), t)),
            );
        }
        for (l, p) in self.dense.iter_mut().enumerate() {
            out.extend(
                p.tensors_mut()
                    .into_iter()
                    .map(|(n, t)| (format!("dense{l}.{n}"), t)),
            );
        }
        out.extend(
            self.output
                .tensors_mut()
                .into_iter()
                .map(|(n, t)| (format!("output.{n}"), t)),
        );
        out
    }
}

/// A LaMP or CPoLS model: configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptClassifier<F> {
    pub config: ModelConfig,
    pub params: ClassifierParams<F>,
}

struct PartitionTrace<F> {
    codes: Vec<u8>,
    embedded: Tensor<F>,
    conv_rows: usize,
    argmax: Vec<usize>,
}

enum FrontendTrace<F> {
    Lamp { codes: Vec<u8> },
    Cpols { partitions: Vec<PartitionTrace<F>> },
}

/// Everything the backward pass needs from one forward pass.
pub struct ForwardTrace<F> {
    frontend: FrontendTrace<F>,
    lstm: LstmTrace<F>,
    pool_argmax: Vec<usize>,
    /// Input of every dense layer followed by the input of the output layer.
    dense_inputs: Vec<Vec<F>>,
    logit: F,
    probability: F,
}

impl<F: Real> ForwardTrace<F> {
    pub fn probability(&self) -> F {
        self.probability
    }

    pub fn logit(&self) -> F {
        self.logit
    }

    /// Length of the sequence the LSTM stack was unrolled over.
    pub fn recurrent_steps(&self) -> usize {
        self.lstm.steps()
    }

    /// Recurrent steps that took part in pooling.
    pub fn valid_recurrent_steps(&self) -> usize {
        self.lstm.valid_length()
    }

    pub fn n_partitions(&self) -> Option<usize> {
        match &self.frontend {
            FrontendTrace::Lamp { .. } => None,
            FrontendTrace::Cpols { partitions } => Some(partitions.len()),
        }
    }
}

impl<F: Real> ScriptClassifier<F> {
    /// Seeded initialization; the seed fixes every parameter bit.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = InitRng::seed_from_u64(seed);
        Ok(Self {
            config,
            params: ClassifierParams::build(&config, Some(&mut rng)),
        })
    }

    /// All parameters zero; predicts exactly 0.5 for every input.
    pub fn zeros(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(Self {
            config,
            params: ClassifierParams::build(&config, None),
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind()
    }

    pub fn max_len(&self) -> usize {
        self.config.max_len()
    }

    pub fn cast<G: Real>(&self) -> ScriptClassifier<G> {
        ScriptClassifier {
            config: self.config,
            params: self.params.cast(),
        }
    }

    /// Checks that the parameter shapes agree with the configuration.
    pub fn validate(&self) -> Result<(), ModelError> {
        let reference = ScriptClassifier::<F>::zeros(self.config)?;
        let ours = self.params.tensors();
        let theirs = reference.params.tensors();
        let same = ours.len() == theirs.len()
            && ours
                .iter()
                .zip(&theirs)
                .all(|((na, a), (nb, b))| na == nb && a.shape() == b.shape());
        let stride_ok = match (&self.params.conv, &self.config) {
            (Some(c), ModelConfig::Cpols(cfg)) => c.stride == cfg.stride,
            (None, ModelConfig::Lamp(_)) => true,
            _ => false,
        };
        if same && stride_ok {
            Ok(())
        } else {
            Err(ModelError::Config(
                "parameter shapes do not match the configuration".into(),
            ))
        }
    }

    /// Probability that the sequence is malicious.
    pub fn forward(&self, seq: &EncodedSequence) -> Result<F, ModelError> {
        Ok(self.forward_trace(seq)?.probability)
    }

    pub fn forward_trace(&self, seq: &EncodedSequence) -> Result<ForwardTrace<F>, ModelError> {
        match self.config {
            ModelConfig::Lamp(_) => self.lamp_forward(seq),
            ModelConfig::Cpols(_) => self.cpols_forward(seq),
        }
    }

    /// Embeds up to `max_len` codes, padding included; only the first
    /// `valid_length` steps reach the pooling layer.
    pub fn lamp_forward(&self, seq: &EncodedSequence) -> Result<ForwardTrace<F>, ModelError> {
        if self.kind() != ModelKind::Lamp {
            return Err(ModelError::WrongKind {
                expected: ModelKind::Lamp,
                actual: self.kind(),
            });
        }
        let valid = seq.valid_length.min(self.max_len());
        if valid == 0 {
            return Err(ModelError::EmptyInput);
        }
        let len = seq.codes.len().min(self.max_len());
        let codes = seq.codes[..len].to_vec();
        let embedded = self.params.embedding.forward(&codes);
        self.head_forward(FrontendTrace::Lamp { codes }, &embedded, valid)
    }

    /// Reads only the valid bytes; partitions are rebuilt and padded here, so
    /// whatever follows `valid_length` in the input is never looked at.
    pub fn cpols_forward(&self, seq: &EncodedSequence) -> Result<ForwardTrace<F>, ModelError> {
        let (cfg, conv) = match (&self.config, &self.params.conv) {
            (ModelConfig::Cpols(cfg), Some(conv)) => (cfg, conv),
            _ => {
                return Err(ModelError::WrongKind {
                    expected: ModelKind::Cpols,
                    actual: self.kind(),
                })
            }
        };
        let valid = seq.valid_length.min(cfg.max_len);
        if valid == 0 {
            return Err(ModelError::EmptyInput);
        }
        let codes = &seq.codes[..valid];
        let n_parts = cfg.partitions(valid);
        let mut pooled = Tensor::zeros(&[n_parts, cfg.filters]);
        let mut partitions = Vec::with_capacity(n_parts);
        for (i, piece) in codes.chunks(cfg.partition_len).enumerate() {
            let mut padded = piece.to_vec();
            padded.resize(cfg.partition_len, PAD_CODE);
            let embedded = self.params.embedding.forward(&padded);
            let conv_out = conv.forward(&embedded)?;
            // Windows starting inside the padding are masked.
            let valid_windows = piece.len().div_ceil(cfg.stride).min(conv_out.rows());
            let (vec, argmax) = temporal_max_pool(&conv_out, valid_windows)?;
            pooled.row_mut(i).copy_from_slice(&vec);
            partitions.push(PartitionTrace {
                codes: padded,
                embedded,
                conv_rows: conv_out.rows(),
                argmax,
            });
        }
        self.head_forward(FrontendTrace::Cpols { partitions }, &pooled, n_parts)
    }

    fn head_forward(
        &self,
        frontend: FrontendTrace<F>,
        inputs: &Tensor<F>,
        valid: usize,
    ) -> Result<ForwardTrace<F>, ModelError> {
        let (states, lstm) = lstm_sequence(&self.params.lstm, inputs, valid)?;
        let (mut x, pool_argmax) = temporal_max_pool(&states, valid)?;
        let mut dense_inputs = Vec::with_capacity(self.params.dense.len() + 1);
        for layer in &self.params.dense {
            let y = dense_relu(layer, &x)?;
            dense_inputs.push(x);
            x = y;
        }
        let (logit, probability) = sigmoid_output(&self.params.output, &x)?;
        dense_inputs.push(x);
        Ok(ForwardTrace {
            frontend,
            lstm,
            pool_argmax,
            dense_inputs,
            logit,
            probability,
        })
    }

    /// Cross-entropy of a recorded forward pass.
    pub fn loss(&self, trace: &ForwardTrace<F>, malicious: bool) -> F {
        cross_entropy(trace.probability, malicious)
    }

    /// Accumulates `∂ loss / ∂ θ` of one example into `grads`.
    pub fn backward(
        &self,
        trace: &ForwardTrace<F>,
        malicious: bool,
        grads: &mut ClassifierParams<F>,
    ) -> Result<(), ModelError> {
        let p = &self.params;
        let d_logit = cross_entropy_grad_logit(trace.probability, malicious);
        let n_dense = p.dense.len();
        let mut d = sigmoid_output_backward(
            &p.output,
            &trace.dense_inputs[n_dense],
            d_logit,
            &mut grads.output,
        );
        for l in (0..n_dense).rev() {
            let x = &trace.dense_inputs[l];
            let y = &trace.dense_inputs[l + 1];
            d = dense_relu_backward(&p.dense[l], x, y, &d, &mut grads.dense[l]);
        }
        let d_states = temporal_max_pool_backward(&trace.pool_argmax, &d, trace.lstm.steps());
        let d_inputs = lstm_sequence_backward(&p.lstm, &trace.lstm, &d_states, &mut grads.lstm)?;
        match &trace.frontend {
            FrontendTrace::Lamp { codes } => {
                p.embedding.backward(codes, &d_inputs, &mut grads.embedding)
            }
            FrontendTrace::Cpols { partitions } => {
                let conv = p.conv.as_ref().ok_or(ModelError::WrongKind {
                    expected: ModelKind::Cpols,
                    actual: self.kind(),
                })?;
                let g_conv = grads
                    .conv
                    .as_mut()
                    .ok_or_else(|| ModelError::Config("gradient layout lacks conv".into()))?;
                for (i, part) in partitions.iter().enumerate() {
                    if d_inputs.row(i).iter().all(|v| *v == F::zero()) {
                        continue;
                    }
                    let d_conv =
                        temporal_max_pool_backward(&part.argmax, d_inputs.row(i), part.conv_rows);
                    let d_emb = conv.backward(&part.embedded, &d_conv, g_conv);
                    p.embedding
                        .backward(&part.codes, &d_emb, &mut grads.embedding);
                }
            }
        }
        Ok(())
    }

    /// Normalize, truncate to `max_len`, classify.
    pub fn predict(&self, raw: &RawScript) -> Result<f64, ModelError> {
        let seq = normalizer::encode(&normalizer::normalize(raw), self.max_len());
        Ok(self.forward(&seq)?.as_f64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_lamp() -> ModelConfig {
        ModelConfig::Lamp(LampConfig {
            embed_dim: 3,
            hidden: 4,
            lstm_layers: 1,
            classifier_layers: 1,
            classifier_width: 5,
            max_len: 6,
        })
    }

    pub(crate) fn tiny_cpols() -> ModelConfig {
        ModelConfig::Cpols(CpolsConfig {
            embed_dim: 3,
            hidden: 4,
            lstm_layers: 1,
            classifier_layers: 1,
            classifier_width: 5,
            partition_len: 8,
            window: 3,
            stride: 2,
            filters: 4,
            max_len: 40,
        })
    }

    #[test]
    fn zero_model_predicts_half() {
        for cfg in [tiny_lamp(), tiny_cpols()] {
            let m = ScriptClassifier::<f32>::zeros(cfg).unwrap();
            assert_eq!(
                m.forward(&EncodedSequence::new(b"var x=1;".to_vec()))
                    .unwrap(),
                0.5
            );
            assert_eq!(
                m.predict(&RawScript::new("s", "WScript.Echo 1")).unwrap(),
                0.5
            );
        }
    }

    #[test]
    fn empty_input_is_rejected() {
        for cfg in [tiny_lamp(), tiny_cpols()] {
            let m = ScriptClassifier::<f32>::new(cfg, 1).unwrap();
            assert_eq!(
                m.forward(&EncodedSequence::default()),
                Err(ModelError::EmptyInput)
            );
            let padded = EncodedSequence::with_valid_length(vec![0, 0, 0], 0);
            assert_eq!(m.forward(&padded), Err(ModelError::EmptyInput));
        }
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let m = ScriptClassifier::<f32>::new(tiny_lamp(), 1).unwrap();
        assert!(matches!(
            m.cpols_forward(&EncodedSequence::new(vec![1])),
            Err(ModelError::WrongKind { .. })
        ));
    }

    #[test]
    fn lamp_matches_manual_composition() {
        let m = ScriptClassifier::<f64>::new(tiny_lamp(), 3).unwrap();
        let seq = EncodedSequence::new(b"eval(x".to_vec());
        let p = &m.params;

        let e = p.embedding.forward(&seq.codes);
        let mut state = crate::nn::LstmState::zeros(4);
        let mut pooled = [f64::NEG_INFINITY; 4];
        for t in 0..6 {
            state = crate::nn::lstm::lstm_step(&p.lstm[0], e.row(t), &state)
                .unwrap()
                .0;
            for (m, h) in pooled.iter_mut().zip(&state.h) {
                *m = m.max(*h);
            }
        }
        let hidden: Vec<f64> = (0..5)
            .map(|o| {
                let z: f64 = (0..4)
                    .map(|i| p.dense[0].weight.row(o)[i] * pooled[i])
                    .sum();
                z.max(0.0)
            })
            .collect();
        let logit: f64 = (0..5).map(|i| p.output.weight.row(0)[i] * hidden[i]).sum();
        let expected = 1.0 / (1.0 + (-logit).exp());
        assert!((m.forward(&seq).unwrap() - expected).abs() < 1e-6);
    }

    #[test]
    fn cpols_partition_counts() {
        let mut cfg = CpolsConfig::published(ScriptLanguage::JavaScript);
        cfg.hidden = 4;
        cfg.embed_dim = 2;
        cfg.filters = 3;
        cfg.classifier_width = 2;
        cfg.max_len = 2000;
        let m = ScriptClassifier::<f32>::new(ModelConfig::Cpols(cfg), 0).unwrap();
        let t = m
            .forward_trace(&EncodedSequence::new(vec![b'a'; 1000]))
            .unwrap();
        assert_eq!(t.n_partitions(), Some(10));
        assert_eq!(t.recurrent_steps(), 10);
        let t = m
            .forward_trace(&EncodedSequence::new(vec![b'a'; 1005]))
            .unwrap();
        assert_eq!(t.n_partitions(), Some(11));
        assert_eq!(t.recurrent_steps(), 11);
    }

    #[test]
    fn padding_never_changes_predictions() {
        for cfg in [tiny_lamp(), tiny_cpols()] {
            let m = ScriptClassifier::<f32>::new(cfg, 8).unwrap();
            let base = EncodedSequence::with_valid_length(vec![b'a', b'(', b'x', 0, 0, 0], 3);
            let noisy = EncodedSequence::with_valid_length(vec![b'a', b'(', b'x', 200, 7, 99], 3);
            assert_eq!(
                m.forward(&base).unwrap().to_bits(),
                m.forward(&noisy).unwrap().to_bits()
            );
        }
        // A whole extra padded partition.
        let m = ScriptClassifier::<f32>::new(tiny_cpols(), 2).unwrap();
        let short = EncodedSequence::new(b"abcdefghijk".to_vec());
        let mut codes = short.codes.clone();
        codes.resize(short.len() + 8 + 5, 0);
        let long = EncodedSequence::with_valid_length(codes, short.valid_length);
        assert_eq!(
            m.forward(&short).unwrap().to_bits(),
            m.forward(&long).unwrap().to_bits()
        );
    }

    #[test]
    fn initialization_is_seed_determined() {
        let a = ScriptClassifier::<f32>::new(tiny_cpols(), 5).unwrap();
        let b = ScriptClassifier::<f32>::new(tiny_cpols(), 5).unwrap();
        let c = ScriptClassifier::<f32>::new(tiny_cpols(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.validate().is_ok());
    }

    #[test]
    fn config_validation() {
        let mut cfg = CpolsConfig::published(ScriptLanguage::JavaScript);
        cfg.window = 200;
        assert!(matches!(
            ScriptClassifier::<f32>::zeros(ModelConfig::Cpols(cfg)),
            Err(ModelError::Config(_))
        ));
        let mut lamp = LampConfig::published(ScriptLanguage::JavaScript);
        lamp.lstm_layers = 0;
        assert!(ScriptClassifier::<f32>::zeros(ModelConfig::Lamp(lamp)).is_err());
    }

    #[test]
    fn published_minibatches() {
        assert_eq!(
            published_minibatch(ScriptLanguage::JavaScript, ModelKind::Lamp),
            200
        );
        assert_eq!(
            published_minibatch(ScriptLanguage::JavaScript, ModelKind::Cpols),
            50
        );
        assert_eq!(
            published_minibatch(ScriptLanguage::VBScript, ModelKind::Lamp),
            100
        );
        assert_eq!(
            published_minibatch(ScriptLanguage::VBScript, ModelKind::Cpols),
            100
        );
    }
}
