use rayon::prelude::*;
use serde::Serialize;

use super::settings::{assignments, RunConfig, SettingsError};
use super::{train, TrainError};
use crate::corpus::DatasetSplit;
use crate::models::ScriptClassifier;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub parameter: String,
    pub value: String,
    pub validation_error: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Reads `key = v1, v2, ...` lines.
pub fn parse_grid(text: &str) -> Result<Vec<(String, Vec<String>)>, SettingsError> {
    assignments(text)?
        .into_iter()
        .map(|(line, k, v)| {
            let values: Vec<String> = v.split(',').map(|s| s.trim().to_string()).collect();
            if values.iter().any(String::is_empty) {
                return Err(SettingsError::Syntax {
                    line,
                    reason: format!("empty value in the list for {k}"),
                });
            }
            Ok((k, values))
        })
        .collect()
}

/// Varies one key at a time around `base`, training each variant from the
/// same seed, and returns rows ranked by validation error (ties keep grid order).
pub fn sweep(
    base: &RunConfig,
    grid: &[(String, Vec<String>)],
    split: &DatasetSplit,
) -> Result<Vec<SweepRow>, SweepError> {
    let mut runs = Vec::new();
    for (key, values) in grid {
        for value in values {
            let mut cfg = *base;
            cfg.set(key, value)?;
            cfg.validate().map_err(SweepError::Invalid)?;
            runs.push((key.clone(), value.clone(), cfg));
        }
    }
    let results: Vec<Result<SweepRow, TrainError>> = runs
        .par_iter()
        .map(|(key, value, cfg)| {
            let model = ScriptClassifier::new(cfg.model, cfg.train.seed)?;
            let mut single = cfg.train;
            single.threads = 1;
            let out = train(model, split, &single)?;
            Ok(SweepRow {
                parameter: key.clone(),
                value: value.clone(),
                validation_error: out.best_validation_error,
                best_epoch: out.best_epoch,
                epochs_run: out.history.len(),
            })
        })
        .collect();
    let mut rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    rows.sort_by(|a, b| a.validation_error.total_cmp(&b.validation_error));
    Ok(rows)
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error(transparent)]
    Settings(#[from] SettingsError),
    #[error("invalid sweep configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Train(#[from] TrainError),
}

impl From<crate::models::ModelError> for SweepError {
    fn from(e: crate::models::ModelError) -> Self {
        SweepError::Train(e.into())
    }
}
