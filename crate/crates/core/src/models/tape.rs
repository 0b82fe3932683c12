use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    ClassifierParams, CpolsConfig, ForwardTrace, LampConfig, ModelConfig, ModelError, ModelKind,
    ScriptClassifier,
};
use crate::nn::gradcheck::{finite_difference_check, GradCheckReport, Objective};
use crate::nn::{NnError, Parameters, Real, Tensor};
use crate::normalizer::EncodedSequence;

/// Records forward passes and turns them into accumulated gradients.
///
/// `record` runs the model and keeps the trace; `backward` consumes every
/// pending trace. Calling `backward` with nothing recorded is an error.
pub struct GradientTape<F> {
    grads: ClassifierParams<F>,
    pending: Vec<(ForwardTrace<F>, bool)>,
    loss_sum: F,
    examples: usize,
}

impl<F: Real> GradientTape<F> {
    pub fn new(model: &ScriptClassifier<F>) -> Self {
        Self {
            grads: model.params.zeros_like(),
            pending: Vec::new(),
            loss_sum: F::zero(),
            examples: 0,
        }
    }

    /// Forward pass on one example; returns its loss.
    pub fn record(
        &mut self,
        model: &ScriptClassifier<F>,
        seq: &EncodedSequence,
        malicious: bool,
    ) -> Result<F, ModelError> {
        let trace = model.forward_trace(seq)?;
        let loss = model.loss(&trace, malicious);
        self.loss_sum += loss;
        self.examples += 1;
        self.pending.push((trace, malicious));
        Ok(loss)
    }

    pub fn backward(&mut self, model: &ScriptClassifier<F>) -> Result<(), ModelError> {
        if self.pending.is_empty() {
            return Err(ModelError::Nn(NnError::NoForward));
        }
        for (trace, malicious) in self.pending.drain(..) {
            model.backward(&trace, malicious, &mut self.grads)?;
        }
        Ok(())
    }

    pub fn examples(&self) -> usize {
        self.examples
    }

    pub fn loss_sum(&self) -> F {
        self.loss_sum
    }

    /// Summed gradients, without averaging.
    pub fn gradients(&self) -> &ClassifierParams<F> {
        &self.grads
    }

    /// Mean loss and mean gradient over the recorded examples.
    pub fn into_mean(mut self) -> (F, ClassifierParams<F>) {
        let n = F::of(self.examples.max(1) as f64);
        self.grads.scale(F::one() / n);
        (self.loss_sum / n, self.grads)
    }
}

/// Mean cross-entropy of a model over fixed examples, as a gradient-check objective.
pub struct ModelObjective {
    pub model: ScriptClassifier<f64>,
    pub examples: Vec<(EncodedSequence, bool)>,
}

impl ModelObjective {
    fn mean(&self) -> Result<(f64, ClassifierParams<f64>), ModelError> {
        let mut tape = GradientTape::new(&self.model);
        for (seq, label) in &self.examples {
            tape.record(&self.model, seq, *label)?;
        }
        tape.backward(&self.model)?;
        Ok(tape.into_mean())
    }
}

impl Objective for ModelObjective {
    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<f64>)> {
        self.model.params.tensors_mut()
    }

    fn loss(&self) -> f64 {
        self.mean().map_or(f64::NAN, |(l, _)| l)
    }

    fn gradient(&self) -> Vec<Tensor<f64>> {
        let (_, g) = self.mean().expect("gradient-check examples must be valid");
        g.tensors().into_iter().map(|(_, t)| t.clone()).collect()
    }
}

/// Small configuration used for whole-model gradient checks.
pub fn gradcheck_config(kind: ModelKind) -> ModelConfig {
    match kind {
        ModelKind::Lamp => ModelConfig::Lamp(LampConfig {
            embed_dim: 3,
            hidden: 4,
            lstm_layers: 1,
            classifier_layers: 1,
            classifier_width: 5,
            max_len: 6,
        }),
        ModelKind::Cpols => ModelConfig::Cpols(CpolsConfig {
            embed_dim: 3,
            hidden: 4,
            lstm_layers: 1,
            classifier_layers: 1,
            classifier_width: 5,
            partition_len: 6,
            window: 3,
            stride: 2,
            filters: 4,
            max_len: 20,
        }),
    }
}

/// Builds `config` in `f64` with random weights, draws a few short inputs and
/// compares analytic against central-difference gradients on every parameter
/// the inputs touch.
pub fn check_model_gradients(
    config: ModelConfig,
    seed: u64,
    tolerance: f64,
) -> Result<GradCheckReport, ModelError> {
    let mut model = ScriptClassifier::<f64>::new(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    // Larger weights than the initializer gives keep gradients well above roundoff.
    for (_, t) in model.params.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    let max_len = config.max_len();
    let examples = (0..3)
        .map(|i| {
            let len = rng.gen_range(max_len / 2..=max_len).max(1);
            let codes: Vec<u8> = (0..len).map(|_| rng.gen_range(b'a'..=b'h')).collect();
            (EncodedSequence::new(codes), i % 2 == 0)
        })
        .collect();
    let mut objective = ModelObjective { model, examples };
    objective.mean()?;
    Ok(finite_difference_check(
        &mut objective,
        tolerance,
        None,
        seed,
    ))
}
