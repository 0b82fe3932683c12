//! ROC analysis of scored examples.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Label, LabeledExample};
use crate::models::{ModelError, ScriptClassifier};
use crate::nn::Real;

/// Decision threshold for hard classifications.
pub const DECISION_THRESHOLD: f64 = 0.5;

/// False positive rates reported by default.
pub const DEFAULT_FPR_TARGETS: [f64; 3] = [0.001, 0.01, 0.05];

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no scored examples")]
    Empty,
    #[error("need both classes for a ROC curve ({n_pos} malicious, {n_neg} benign)")]
    SingleClass { n_pos: usize, n_neg: usize },
    #[error("score {0} is not a finite probability")]
    BadScore(f64),
    #[error("target false positive rate {0} outside [0, 1]")]
    BadTarget(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredExample {
    pub id: String,
    pub score: f64,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    /// Examples with `score >= threshold` are called malicious.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
    pub true_positives: usize,
    pub false_positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    /// Sorted by decreasing threshold, from (0, 0) to (1, 1).
    pub points: Vec<RocPoint>,
    pub n_pos: usize,
    pub n_neg: usize,
}

fn class_counts(scored: &[ScoredExample]) -> Result<(usize, usize), EvalError> {
    if scored.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(bad) = scored.iter().find(|s| !s.score.is_finite()) {
        return Err(EvalError::BadScore(bad.score));
    }
    let n_pos = scored.iter().filter(|s| s.label.is_malicious()).count();
    Ok((n_pos, scored.len() - n_pos))
}

/// One point per distinct score plus the origin; tied scores move together.
pub fn roc_curve(scored: &[ScoredExample]) -> Result<RocCurve, EvalError> {
    let (n_pos, n_neg) = class_counts(scored)?;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass { n_pos, n_neg });
    }
    let mut sorted: Vec<&ScoredExample> = scored.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
        true_positives: 0,
        false_positives: 0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].score;
        while i < sorted.len() && sorted[i].score == threshold {
            if sorted[i].label.is_malicious() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
            true_positives: tp,
            false_positives: fp,
        });
    }
    Ok(RocCurve {
        points,
        n_pos,
        n_neg,
    })
}

impl RocCurve {
    /// Highest TPR among operating points with FPR at most `target`.
    pub fn tpr_at_fpr(&self, target: f64) -> Result<f64, EvalError> {
        if !(0.0..=1.0).contains(&target) {
            return Err(EvalError::BadTarget(target));
        }
        // Compare in integer counts so a target like 0.05 admits exactly
        // floor(0.05 · n_neg) false positives.
        let allowed = (target * self.n_neg as f64 + 1e-9).floor() as usize;
        Ok(self
            .points
            .iter()
            .filter(|p| p.false_positives <= allowed)
            .map(|p| p.tpr)
            .fold(0.0, f64::max))
    }

    /// Trapezoidal area, computed exactly in integer counts before one division.
    pub fn auc(&self) -> f64 {
        let twice_area: u128 = self
            .points
            .windows(2)
            .map(|w| {
                let dx = (w[1].false_positives - w[0].false_positives) as u128;
                dx * (w[0].true_positives + w[1].true_positives) as u128
            })
            .sum();
        twice_area as f64 / (2.0 * self.n_pos as f64 * self.n_neg as f64)
    }
}

pub fn auc(scored: &[ScoredExample]) -> Result<f64, EvalError> {
    Ok(roc_curve(scored)?.auc())
}

pub fn tpr_at_fpr(scored: &[ScoredExample], target: f64) -> Result<f64, EvalError> {
    roc_curve(scored)?.tpr_at_fpr(target)
}

/// Fraction misclassified at [`DECISION_THRESHOLD`].
pub fn error_rate(scored: &[ScoredExample]) -> Result<f64, EvalError> {
    class_counts(scored)?;
    let wrong = scored
        .iter()
        .filter(|s| (s.score >= DECISION_THRESHOLD) != s.label.is_malicious())
        .count();
    Ok(wrong as f64 / scored.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub error_rate: f64,
    pub auc: f64,
    /// Keyed by the target rate as written, e.g. `"0.01"`.
    pub tpr_at_fpr: BTreeMap<String, f64>,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl std::fmt::Display for EvaluationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "examples    {} malicious, {} benign",
            self.n_pos, self.n_neg
        )?;
        writeln!(f, "error rate  {:.4}", self.error_rate)?;
        writeln!(f, "AUC         {:.4}", self.auc)?;
        for (fpr, tpr) in &self.tpr_at_fpr {
            writeln!(f, "TPR @ FPR {fpr:<6} {tpr:.4}")?;
        }
        Ok(())
    }
}

/// Scores every example with `model`.
pub fn score_examples<F: Real>(
    model: &ScriptClassifier<F>,
    examples: &[LabeledExample],
) -> Result<Vec<ScoredExample>, ModelError> {
    examples
        .iter()
        .map(|e| {
            Ok(ScoredExample {
                id: e.id.clone(),
                score: model.forward(&e.sequence)?.as_f64(),
                label: e.label,
            })
        })
        .collect()
}

pub fn report(
    scored: &[ScoredExample],
    fpr_targets: &[f64],
) -> Result<EvaluationReport, EvalError> {
    let curve = roc_curve(scored)?;
    let mut tprs = BTreeMap::new();
    for &t in fpr_targets {
        tprs.insert(format!("{t}"), curve.tpr_at_fpr(t)?);
    }
    Ok(EvaluationReport {
        error_rate: error_rate(scored)?,
        auc: curve.auc(),
        tpr_at_fpr: tprs,
        n_pos: curve.n_pos,
        n_neg: curve.n_neg,
    })
}
