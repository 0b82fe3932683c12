//! Central-difference gradient checking in `f64`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::conv::ConvParams;
use super::dense::{
    dense_relu, dense_relu_backward, sigmoid_output, sigmoid_output_backward, DenseParams,
    OutputParams,
};
use super::embedding::EmbeddingParams;
use super::init::InitRng;
use super::loss::{cross_entropy, cross_entropy_grad_logit};
use super::lstm::{lstm_sequence, lstm_sequence_backward, LstmParams};
use super::pool::{temporal_max_pool, temporal_max_pool_backward};
use super::{Parameters, Tensor};

/// Perturbation used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor of the relative error. Central differences at
/// `FD_STEP` carry roundoff near 1e-12, so coordinates with gradients below
/// this floor are compared on an absolute scale instead.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

/// A scalar function of named `f64` tensors with an analytic gradient.
pub trait Objective {
    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<f64>)>;
    fn loss(&self) -> f64;
    /// Same order and shapes as `parameters_mut`.
    fn gradient(&self) -> Vec<Tensor<f64>>;
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_parameter: String,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares analytic and central-difference gradients. With
/// `samples_per_tensor = Some(k)` at most `k` seeded coordinates of each
/// tensor are checked, otherwise all of them.
pub fn finite_difference_check<O: Objective + ?Sized>(
    objective: &mut O,
    tolerance: f64,
    samples_per_tensor: Option<usize>,
    seed: u64,
) -> GradCheckReport {
    let analytic = objective.gradient();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_parameter: String::new(),
        checked: 0,
        tolerance,
        passed: true,
    };
    let count = objective.parameters_mut().len();
    for k in 0..count {
        let (name, len) = {
            let params = objective.parameters_mut();
            (params[k].0.clone(), params[k].1.len())
        };
        let indices: Vec<usize> = match samples_per_tensor {
            Some(s) if s < len => {
                let mut v = sample(&mut rng, len, s).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        for idx in indices {
            let original = objective.parameters_mut()[k].1.data()[idx];
            objective.parameters_mut()[k].1.data_mut()[idx] = original + FD_STEP;
            let plus = objective.loss();
            objective.parameters_mut()[k].1.data_mut()[idx] = original - FD_STEP;
            let minus = objective.loss();
            objective.parameters_mut()[k].1.data_mut()[idx] = original;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = relative_error(analytic[k].data()[idx], numeric);
            report.checked += 1;
            if err > report.max_relative_error || err.is_nan() {
                report.max_relative_error = err;
                report.worst_parameter = format!("{name}[{idx}]");
            }
        }
    }
    report.passed = report.max_relative_error < tolerance;
    report
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
    .expect("shape")
}

fn weighted_sum(weights: &[f64], values: &[f64]) -> f64 {
    weights.iter().zip(values).map(|(a, b)| a * b).sum()
}

/// Loss `Σ r ⊙ embedding(codes)` over the table.
pub struct EmbeddingProbe {
    pub params: EmbeddingParams<f64>,
    pub codes: Vec<u8>,
    pub readout: Tensor<f64>,
}

impl Objective for EmbeddingProbe {
    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<f64>)> {
        self.params.tensors_mut()
    }

    fn loss(&self) -> f64 {
        weighted_sum(self.readout.data(), self.params.forward(&self.codes).data())
    }

    fn gradient(&self) -> Vec<Tensor<f64>> {
        let mut g = EmbeddingParams::zeros(self.params.embed_dim());
        self.params.backward(&self.codes, &self.readout, &mut g);
        vec![g.table]
    }
}

/// Loss `Σ r ⊙ H` over a stacked LSTM, differentiated in weights and inputs.
pub struct LstmProbe {
    pub layers: Vec<LstmParams<f64>>,
    pub inputs: Tensor<f64>,
    pub readout: Tensor<f64>,
}

impl Objective for LstmProbe {
    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<f64>)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.extend(
                layer
                    .tensors_mut()
                    .into_iter()
                    .map(|(n, t)| (format!("lstm{l}.{n}"), t)),
            );
        }
        out.push(("inputs".into(), &mut self.inputs));
        out
    }

    fn loss(&self) -> f64 {
        let (h, _) =
            lstm_sequence(&self.layers, &self.inputs, self.inputs.rows()).expect("probe shapes");
        weighted_sum(self.readout.data(), h.data())
    }

    fn gradient(&self) -> Vec<Tensor<f64>> {
        let (_, trace) =
            lstm_sequence(&self.layers, &self.inputs, self.inputs.rows()).expect("probe shapes");
        let mut grads: Vec<LstmParams<f64>> = self
            .layers
            .iter()
            .map(|p| LstmParams::zeros(p.input_dim(), p.hidden()))
            .collect();
        let d_in = lstm_sequence_backward(&self.layers, &trace, &self.readout, &mut grads)
            .expect("probe shapes");
        let mut out: Vec<Tensor<f64>> = grads
            .into_iter()
            .flat_map(|g| {
                g.tensors()
                    .into_iter()
                    .map(|(_, t)| t.clone())
                    .collect::<Vec<_>>()
            })
            .collect();
        out.push(d_in);
        out
    }
}

/// Loss `r · maxpool(S)` with respect to the pooled sequence.
pub struct PoolProbe {
    pub seq: Tensor<f64>,
    pub valid: usize,
    pub readout: Vec<f64>,
}

impl Objective for PoolProbe {
    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<f64>)> {
        vec![("seq".into(), &mut self.seq)]
    }

    fn loss(&self) -> f64 {
        let (out, _) = temporal_max_pool(&self.seq, self.valid).expect("probe shapes");
        weighted_sum(&self.readout, &out)
    }

    fn gradient(&self) -> Vec<Tensor<f64>> {
        let (_, arg) = temporal_max_pool(&self.seq, self.valid).expect("probe shapes");
        vec![temporal_max_pool_backward(
            &arg,
            &self.readout,
            self.seq.rows(),
        )]
    }
}

/// Loss `Σ r ⊙ conv(S)` in filters, bias and input.
pub struct ConvProbe {
    pub params: ConvParams<f64>,
    pub seq: Tensor<f64>,
    pub readout: Tensor<f64>,
}

impl Objective for ConvProbe {
    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<f64>)> {
        let mut v = self.params.tensors_mut();
        v.push(("seq".into(), &mut self.seq));
        v
    }

    fn loss(&self) -> f64 {
        weighted_sum(
            self.readout.data(),
            self.params.forward(&self.seq).expect("probe shapes").data(),
        )
    }

    fn gradient(&self) -> Vec<Tensor<f64>> {
        let mut g = ConvParams::zeros(
            self.params.n_filters(),
            self.params.window(),
            self.params.input_dim(),
            self.params.stride,
        );
        let d_seq = self.params.backward(&self.seq, &self.readout, &mut g);
        vec![g.filters, g.bias, d_seq]
    }
}

/// Loss `r · relu(W x)` in weight and input.
pub struct DenseReluProbe {
    pub params: DenseParams<f64>,
    pub x: Tensor<f64>,
    pub readout: Vec<f64>,
}

impl Objective for DenseReluProbe {
    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<f64>)> {
        vec![
            ("weight".into(), &mut self.params.weight),
            ("x".into(), &mut self.x),
        ]
    }

    fn loss(&self) -> f64 {
        weighted_sum(
            &self.readout,
            &dense_relu(&self.params, self.x.data()).expect("probe shapes"),
        )
    }

    fn gradient(&self) -> Vec<Tensor<f64>> {
        let y = dense_relu(&self.params, self.x.data()).expect("probe shapes");
        let mut g = DenseParams::zeros(self.params.input_dim(), self.params.output_dim());
        let dx = dense_relu_backward(&self.params, self.x.data(), &y, &self.readout, &mut g);
        vec![
            g.weight,
            Tensor::from_vec(self.x.shape(), dx).expect("shape"),
        ]
    }
}

/// Cross-entropy of `σ(W_D x)` in weight and input.
pub struct SigmoidCrossEntropyProbe {
    pub params: OutputParams<f64>,
    pub x: Tensor<f64>,
    pub malicious: bool,
}

impl Objective for SigmoidCrossEntropyProbe {
    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<f64>)> {
        vec![
            ("weight".into(), &mut self.params.weight),
            ("x".into(), &mut self.x),
        ]
    }

    fn loss(&self) -> f64 {
        let (_, p) = sigmoid_output(&self.params, self.x.data()).expect("probe shapes");
        cross_entropy(p, self.malicious)
    }

    fn gradient(&self) -> Vec<Tensor<f64>> {
        let (_, p) = sigmoid_output(&self.params, self.x.data()).expect("probe shapes");
        let d_logit = cross_entropy_grad_logit(p, self.malicious);
        let mut g = OutputParams::zeros(self.params.input_dim());
        let dx = sigmoid_output_backward(&self.params, self.x.data(), d_logit, &mut g);
        vec![
            g.weight,
            Tensor::from_vec(self.x.shape(), dx).expect("shape"),
        ]
    }
}

/// One seeded probe per layer type.
pub fn layer_probes(seed: u64) -> Vec<(&'static str, Box<dyn Objective>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = InitRng::seed_from_u64(seed.wrapping_add(1));

    let mut embedding = EmbeddingParams::new(&mut init, 3);
    embedding.table = random_tensor(&mut rng, &[256, 3], 1.0);
    let codes = vec![97u8, 3, 97, 255, 0, 10];
    let emb_readout = random_tensor(&mut rng, &[codes.len(), 3], 1.0);

    let lstm_layers = vec![
        LstmParams::new(&mut init, 3, 4),
        LstmParams::new(&mut init, 4, 4),
    ];
    let lstm_inputs = random_tensor(&mut rng, &[5, 3], 1.0);
    let lstm_readout = random_tensor(&mut rng, &[5, 4], 1.0);

    let pool_seq = random_tensor(&mut rng, &[6, 4], 1.0);
    let pool_readout: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let mut conv = ConvParams::new(&mut init, 3, 3, 2, 2);
    conv.bias = random_tensor(&mut rng, &[3], 0.5);
    let conv_seq = random_tensor(&mut rng, &[9, 2], 1.0);
    let conv_readout = random_tensor(&mut rng, &[4, 3], 1.0);

    let dense = DenseParams::new(&mut init, 5, 4);
    let dense_x = random_tensor(&mut rng, &[5], 1.0);
    let dense_readout: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let out = OutputParams::new(&mut init, 4);
    let out_x = random_tensor(&mut rng, &[4], 1.0);

    vec![
        (
            "embedding",
            Box::new(EmbeddingProbe {
                params: embedding,
                codes,
                readout: emb_readout,
            }) as Box<dyn Objective>,
        ),
        (
            "lstm",
            Box::new(LstmProbe {
                layers: lstm_layers,
                inputs: lstm_inputs,
                readout: lstm_readout,
            }),
        ),
        (
            "temporal_max_pool",
            Box::new(PoolProbe {
                seq: pool_seq,
                valid: 5,
                readout: pool_readout,
            }),
        ),
        (
            "conv1d",
            Box::new(ConvProbe {
                params: conv,
                seq: conv_seq,
                readout: conv_readout,
            }),
        ),
        (
            "dense_relu",
            Box::new(DenseReluProbe {
                params: dense,
                x: dense_x,
                readout: dense_readout,
            }),
        ),
        (
            "sigmoid_cross_entropy",
            Box::new(SigmoidCrossEntropyProbe {
                params: out,
                x: out_x,
                malicious: true,
            }),
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_passes_at_1e_6() {
        for (name, mut probe) in layer_probes(5) {
            let report = finite_difference_check(probe.as_mut(), 1e-6, None, 0);
            assert!(report.passed, "{name}: {report:?}");
            assert!(report.checked > 0);
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        struct Wrong(Tensor<f64>);
        impl Objective for Wrong {
            fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<f64>)> {
                vec![("w".into(), &mut self.0)]
            }
            fn loss(&self) -> f64 {
                self.0.data()[0].powi(2)
            }
            fn gradient(&self) -> Vec<Tensor<f64>> {
                vec![Tensor::from_vec(&[1], vec![self.0.data()[0]]).unwrap()]
            }
        }
        let mut w = Wrong(Tensor::from_vec(&[1], vec![0.8]).unwrap());
        let report = finite_difference_check(&mut w, 1e-6, None, 0);
        assert!(!report.passed);
        assert!((report.max_relative_error - 0.5).abs() < 1e-6);
    }

    #[test]
    fn constant_objective_has_zero_gradient() {
        struct Constant(Tensor<f64>);
        impl Objective for Constant {
            fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<f64>)> {
                vec![("w".into(), &mut self.0)]
            }
            fn loss(&self) -> f64 {
                3.0
            }
            fn gradient(&self) -> Vec<Tensor<f64>> {
                vec![Tensor::zeros(self.0.shape())]
            }
        }
        let mut c = Constant(Tensor::zeros(&[4]));
        let report = finite_difference_check(&mut c, 1e-6, None, 0);
        assert_eq!(report.max_relative_error, 0.0);
    }
}
