//! Minibatch training with Adam, gradient clipping and early stopping on
//! validation error, plus checkpoints, run configuration files and sweeps.

mod checkpoint;
mod settings;
mod sweep;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CheckpointError, TrainingMetadata, FORMAT_VERSION, MAGIC,
};
pub use settings::{parse_run_config, RunConfig, SettingsError, CONFIG_KEYS};
pub use sweep::{parse_grid, sweep, SweepError, SweepRow};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{batches, DatasetSplit, LabeledExample};
use crate::models::{ClassifierParams, GradientTape, ModelError, ScriptClassifier};
use crate::nn::{Adam, AdamConfig};

/// Global gradient norm above which updates are rescaled.
pub const CLIP_NORM: f64 = 5.0;

/// Examples per gradient work unit. Fixed so results never depend on the
/// number of threads.
const CHUNK: usize = 8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged: loss {loss} at epoch {epoch}, batch {batch}")]
    Divergence {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    /// Epochs without a strictly lower validation error tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 50,
            max_epochs: 15,
            learning_rate: AdamConfig::default().learning_rate,
            patience: 3,
            seed: 0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.threads == 0 {
            return Err(TrainError::Config(
                "batch_size, max_epochs and threads must be ≥ 1".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::Config(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }

    fn shuffle_seed(&self, epoch: usize) -> u64 {
        self.seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(epoch as u64 + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_error: f64,
    pub improved: bool,
}

/// Progress of a run between epochs.
pub struct TrainState {
    pub epoch: usize,
    pub best_validation_error: f64,
    pub epochs_since_improvement: usize,
    pub optimizer: Adam<f32>,
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation error.
    pub model: ScriptClassifier<f32>,
    pub best_epoch: usize,
    pub best_validation_error: f64,
    pub history: Vec<EpochRecord>,
}

/// Fraction of examples where `p ≥ 0.5` disagrees with the label.
pub fn evaluate_validation_error(
    model: &ScriptClassifier<f32>,
    examples: &[LabeledExample],
) -> Result<f64, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptySet("evaluation"));
    }
    let mut wrong = 0usize;
    for ex in examples {
        let p = model.forward(&ex.sequence)?;
        if (p >= 0.5) != ex.label.is_malicious() {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / examples.len() as f64)
}

/// Summed loss and gradient over `items`, reduced in a fixed order.
fn batch_gradient(
    model: &ScriptClassifier<f32>,
    items: &[(crate::normalizer::EncodedSequence, bool)],
    parallel: bool,
) -> Result<(f64, ClassifierParams<f32>), ModelError> {
    let chunk = |part: &[(crate::normalizer::EncodedSequence, bool)]| -> Result<(f64, ClassifierParams<f32>), ModelError> {
        let mut tape = GradientTape::new(model);
        let mut loss = 0.0;
        for (seq, label) in part {
            loss += tape.record(model, seq, *label)? as f64;
            tape.backward(model)?;
        }
        Ok((loss, tape.gradients().clone()))
    };
    let parts: Vec<Result<(f64, ClassifierParams<f32>), ModelError>> = if parallel {
        items.par_chunks(CHUNK).map(chunk).collect()
    } else {
        items.chunks(CHUNK).map(chunk).collect()
    };
    let mut total = 0.0;
    let mut grads = model.params.zeros_like();
    for part in parts {
        let (l, g) = part?;
        total += l;
        grads.add_assign(&g);
    }
    Ok((total, grads))
}

/// Trains `model` on `split.train`, checking `split.validation` after every
/// epoch, and returns the best-validation parameters.
pub fn train(
    model: ScriptClassifier<f32>,
    split: &DatasetSplit,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    train_with_progress(model, split, cfg, |_| {})
}

pub fn train_with_progress(
    mut model: ScriptClassifier<f32>,
    split: &DatasetSplit,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    model.config.validate()?;
    if split.train.is_empty() {
        return Err(TrainError::EmptySet("training"));
    }
    if split.validation.is_empty() {
        return Err(TrainError::EmptySet("validation"));
    }
    let pool = if cfg.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build()
                .map_err(|e| TrainError::Config(e.to_string()))?,
        )
    } else {
        None
    };
    let mut state = TrainState {
        epoch: 0,
        best_validation_error: f64::INFINITY,
        epochs_since_improvement: 0,
        optimizer: Adam::new(AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        }),
    };
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let max_len = model.max_len();

    while state.epoch < cfg.max_epochs {
        state.epoch += 1;
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (b, batch) in batches(
            &split.train,
            cfg.batch_size,
            max_len,
            Some(cfg.shuffle_seed(state.epoch)),
        )
        .enumerate()
        {
            let items: Vec<_> = (0..batch.len())
                .map(|i| (batch.sequence(i), batch.labels[i].is_malicious()))
                .collect();
            let (loss, mut grads) = match &pool {
                Some(pool) => pool.install(|| batch_gradient(&model, &items, true))?,
                None => batch_gradient(&model, &items, false)?,
            };
            if !loss.is_finite() {
                return Err(TrainError::Divergence {
                    epoch: state.epoch,
                    batch: b,
                    loss,
                });
            }
            grads.scale(1.0 / items.len() as f32);
            let norm = grads.global_norm() as f64;
            if !norm.is_finite() {
                return Err(TrainError::Divergence {
                    epoch: state.epoch,
                    batch: b,
                    loss: norm,
                });
            }
            if norm > CLIP_NORM {
                grads.scale((CLIP_NORM / norm) as f32);
            }
            state.optimizer.step(&mut model.params, &grads);
            loss_sum += loss;
            seen += items.len();
        }

        let validation_error = evaluate_validation_error(&model, &split.validation)?;
        let improved = validation_error < state.best_validation_error;
        if improved {
            state.best_validation_error = validation_error;
            state.epochs_since_improvement = 0;
            best = model.clone();
            best_epoch = state.epoch;
        } else {
            state.epochs_since_improvement += 1;
        }
        let record = EpochRecord {
            epoch: state.epoch,
            train_loss: loss_sum / seen as f64,
            validation_error,
            improved,
        };
        on_epoch(&record);
        history.push(record);
        if state.epochs_since_improvement > cfg.patience {
            break;
        }
    }
    Ok(TrainOutcome {
        model: best,
        best_epoch,
        best_validation_error: state.best_validation_error,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, split_dataset, Label, SyntheticSpec, DEFAULT_RATIOS};
    use crate::models::{LampConfig, ModelConfig};
    use crate::normalizer::EncodedSequence;

    pub(super) fn small_lamp() -> ModelConfig {
        ModelConfig::Lamp(LampConfig {
            embed_dim: 4,
            hidden: 6,
            lstm_layers: 1,
            classifier_layers: 1,
            classifier_width: 4,
            max_len: 30,
        })
    }

    pub(super) fn small_split(n: usize, seed: u64) -> DatasetSplit {
        let data = generate_synthetic(&SyntheticSpec::new(n, 0.5, seed).with_length_range(15, 30))
            .unwrap();
        split_dataset(data, DEFAULT_RATIOS, seed).unwrap()
    }

    fn example(id: &str, codes: &[u8], label: Label) -> LabeledExample {
        LabeledExample {
            id: id.into(),
            label,
            sequence: EncodedSequence::new(codes.to_vec()),
        }
    }

    #[test]
    fn validation_error_counts() {
        let m = ScriptClassifier::<f32>::zeros(small_lamp()).unwrap();
        // A zero model says 0.5, which counts as malicious.
        let all_mal: Vec<_> = (0..4)
            .map(|i| example(&format!("{i}"), b"ab", Label::Malicious))
            .collect();
        assert_eq!(evaluate_validation_error(&m, &all_mal).unwrap(), 0.0);
        let all_ben: Vec<_> = (0..4)
            .map(|i| example(&format!("{i}"), b"ab", Label::Benign))
            .collect();
        assert_eq!(evaluate_validation_error(&m, &all_ben).unwrap(), 1.0);
        let mut mixed = all_mal.clone();
        mixed[0].label = Label::Benign;
        assert_eq!(evaluate_validation_error(&m, &mixed).unwrap(), 0.25);
        assert!(matches!(
            evaluate_validation_error(&m, &[]),
            Err(TrainError::EmptySet(_))
        ));
    }

    #[test]
    fn training_is_deterministic_and_keeps_best() {
        let split = small_split(60, 3);
        let cfg = TrainConfig {
            batch_size: 8,
            max_epochs: 4,
            learning_rate: 0.01,
            patience: 10,
            seed: 5,
            threads: 1,
        };
        let a = train(
            ScriptClassifier::new(small_lamp(), 1).unwrap(),
            &split,
            &cfg,
        )
        .unwrap();
        let b = train(
            ScriptClassifier::new(small_lamp(), 1).unwrap(),
            &split,
            &cfg,
        )
        .unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
        let min = a
            .history
            .iter()
            .map(|r| r.validation_error)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(a.best_validation_error, min);
        assert_eq!(
            evaluate_validation_error(&a.model, &split.validation).unwrap(),
            min
        );
        assert!(a.history[0].train_loss.is_finite());
        assert!(a.history[0].train_loss <= std::f64::consts::LN_2 + 1.0);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let split = small_split(40, 9);
        let mut cfg = TrainConfig {
            batch_size: 20,
            max_epochs: 2,
            learning_rate: 0.01,
            patience: 5,
            seed: 1,
            threads: 1,
        };
        let a = train(
            ScriptClassifier::new(small_lamp(), 2).unwrap(),
            &split,
            &cfg,
        )
        .unwrap();
        cfg.threads = 3;
        let b = train(
            ScriptClassifier::new(small_lamp(), 2).unwrap(),
            &split,
            &cfg,
        )
        .unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn patience_zero_stops_after_a_worse_epoch() {
        // A learning rate this large pushes the model off the good region
        // after the first epoch; whatever the trajectory, stopping must
        // happen on the first non-improving epoch.
        let split = small_split(40, 4);
        let cfg = TrainConfig {
            batch_size: 4,
            max_epochs: 15,
            learning_rate: 0.02,
            patience: 0,
            seed: 2,
            threads: 1,
        };
        let out = train(
            ScriptClassifier::new(small_lamp(), 3).unwrap(),
            &split,
            &cfg,
        )
        .unwrap();
        let first_stall = out.history.iter().position(|r| !r.improved);
        match first_stall {
            Some(i) => assert_eq!(out.history.len(), i + 1),
            None => assert_eq!(out.history.len(), 15),
        }
    }

    #[test]
    fn empty_sets_are_rejected() {
        let mut split = small_split(20, 1);
        split.validation.clear();
        let m = ScriptClassifier::new(small_lamp(), 0).unwrap();
        assert!(matches!(
            train(m, &split, &TrainConfig::default()),
            Err(TrainError::EmptySet("validation"))
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let split = small_split(20, 1);
        let mut m = ScriptClassifier::<f32>::new(small_lamp(), 0).unwrap();
        m.params.output.weight.data_mut()[0] = f32::NAN;
        let r = train(m, &split, &TrainConfig::default());
        assert!(
            matches!(r, Err(TrainError::Divergence { epoch: 1, .. })),
            "{:?}",
            r.err()
        );
    }
}
