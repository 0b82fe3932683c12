//! Flat `key = value` run configuration files.
//!
//! Lines are `key = value`; `#` starts a comment. Unset keys keep the
//! published defaults of the chosen model and language.

use serde::Serialize;
use thiserror::Error;

use super::TrainConfig;
use crate::models::{
    published_minibatch, CpolsConfig, LampConfig, ModelConfig, ModelKind, ScriptLanguage,
};

/// Every accepted key.
pub const CONFIG_KEYS: [&str; 18] = [
    "language",
    "minibatch_size",
    "hidden_size",
    "embed_dim",
    "window",
    "stride",
    "filters",
    "lstm_layers",
    "classifier_layers",
    "classifier_width",
    "partition_len",
    "max_len",
    "learning_rate",
    "max_epochs",
    "patience",
    "seed",
    "threads",
    "split",
];

const CPOLS_ONLY: [&str; 4] = ["window", "stride", "filters", "partition_len"];

#[derive(Debug, Error, PartialEq)]
pub enum SettingsError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),
    #[error("key {key:?} does not apply to {model}")]
    NotApplicable { key: String, model: &'static str },
    #[error("bad value {value:?} for {key}: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
}

/// Model architecture plus optimization settings for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split_ratios: (f64, f64, f64),
}

impl RunConfig {
    pub fn defaults(kind: ModelKind, language: ScriptLanguage) -> Self {
        let model = match kind {
            ModelKind::Lamp => ModelConfig::Lamp(LampConfig::published(language)),
            ModelKind::Cpols => ModelConfig::Cpols(CpolsConfig::published(language)),
        };
        Self {
            model,
            train: TrainConfig {
                batch_size: published_minibatch(language, kind),
                ..TrainConfig::default()
            },
            split_ratios: crate::corpus::DEFAULT_RATIOS,
        }
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SettingsError> {
        let bad = |reason: &str| SettingsError::BadValue {
            key: key.into(),
            value: value.into(),
            reason: reason.into(),
        };
        let int = || {
            value
                .parse::<usize>()
                .map_err(|_| bad("expected a non-negative integer"))
        };
        if !CONFIG_KEYS.contains(&key) {
            return Err(SettingsError::UnknownKey(key.into()));
        }
        if CPOLS_ONLY.contains(&key) && self.model.kind() == ModelKind::Lamp {
            return Err(SettingsError::NotApplicable {
                key: key.into(),
                model: "lamp",
            });
        }
        match key {
            "language" => return Err(bad("language must be the first assignment")),
            "minibatch_size" => self.train.batch_size = int()?,
            "learning_rate" => {
                self.train.learning_rate = value.parse().map_err(|_| bad("expected a number"))?;
            }
            "max_epochs" => self.train.max_epochs = int()?,
            "patience" => self.train.patience = int()?,
            "seed" => {
                self.train.seed = value
                    .parse()
                    .map_err(|_| bad("expected an unsigned 64-bit integer"))?
            }
            "threads" => self.train.threads = int()?,
            "split" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad("expected three comma-separated fractions"))?;
                match parts.as_slice() {
                    &[a, b, c] => self.split_ratios = (a, b, c),
                    _ => return Err(bad("expected three comma-separated fractions")),
                }
            }
            _ => {
                let v = int()?;
                match &mut self.model {
                    ModelConfig::Lamp(c) => match key {
                        "hidden_size" => c.hidden = v,
                        "embed_dim" => c.embed_dim = v,
                        "lstm_layers" => c.lstm_layers = v,
                        "classifier_layers" => c.classifier_layers = v,
                        "classifier_width" => c.classifier_width = v,
                        "max_len" => c.max_len = v,
                        _ => unreachable!("key list covers every field"),
                    },
                    ModelConfig::Cpols(c) => match key {
                        "hidden_size" => c.hidden = v,
                        "embed_dim" => c.embed_dim = v,
                        "lstm_layers" => c.lstm_layers = v,
                        "classifier_layers" => c.classifier_layers = v,
                        "classifier_width" => c.classifier_width = v,
                        "max_len" => c.max_len = v,
                        "window" => c.window = v,
                        "stride" => c.stride = v,
                        "filters" => c.filters = v,
                        "partition_len" => c.partition_len = v,
                        _ => unreachable!("key list covers every field"),
                    },
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        self.model.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())?;
        crate::corpus::split_sizes(1, self.split_ratios).map_err(|e| e.to_string())?;
        Ok(())
    }
}

fn parse_language(value: &str) -> Option<ScriptLanguage> {
    match value.to_ascii_lowercase().as_str() {
        "javascript" | "js" => Some(ScriptLanguage::JavaScript),
        "vbscript" | "vbs" => Some(ScriptLanguage::VBScript),
        _ => None,
    }
}

/// Splits a file into `(line number, key, value)` triples.
pub(crate) fn assignments(text: &str) -> Result<Vec<(usize, String, String)>, SettingsError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| SettingsError::Syntax {
            line: i + 1,
            reason: format!("expected key = value, got {line:?}"),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(SettingsError::Syntax {
                line: i + 1,
                reason: "empty key or value".into(),
            });
        }
        out.push((i + 1, k.to_string(), v.to_string()));
    }
    Ok(out)
}

pub fn parse_run_config(kind: ModelKind, text: &str) -> Result<RunConfig, SettingsError> {
    let pairs = assignments(text)?;
    let mut language = ScriptLanguage::JavaScript;
    for (_, k, v) in &pairs {
        if k == "language" {
            language = parse_language(v).ok_or_else(|| SettingsError::BadValue {
                key: k.clone(),
                value: v.clone(),
                reason: "expected javascript or vbscript".into(),
            })?;
        }
    }
    let mut cfg = RunConfig::defaults(kind, language);
    for (_, k, v) in pairs.iter().filter(|(_, k, _)| k != "language") {
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_published_table() {
        let c = parse_run_config(ModelKind::Cpols, "").unwrap();
        assert_eq!(c.train.batch_size, 50);
        assert_eq!(c.train.max_epochs, 15);
        match c.model {
            ModelConfig::Cpols(p) => assert_eq!(
                (p.hidden, p.embed_dim, p.window, p.stride, p.filters),
                (1500, 64, 10, 5, 128)
            ),
            _ => panic!("wrong kind"),
        }
        let v = parse_run_config(ModelKind::Lamp, "language = vbscript").unwrap();
        assert_eq!(v.train.batch_size, 100);
        assert!(matches!(
            v.model,
            ModelConfig::Lamp(LampConfig { embed_dim: 128, .. })
        ));
    }

    #[test]
    fn keys_are_applied() {
        let text = "# tiny\nhidden_size = 8\nembed_dim=4 # inline\nlearning_rate = 0.01\nseed = 42\nmax_len = 50\nsplit = 0.6,0.2,0.2\n";
        let c = parse_run_config(ModelKind::Lamp, text).unwrap();
        assert_eq!(c.train.learning_rate, 0.01);
        assert_eq!(c.train.seed, 42);
        assert_eq!(c.split_ratios, (0.6, 0.2, 0.2));
        assert!(matches!(
            c.model,
            ModelConfig::Lamp(LampConfig {
                hidden: 8,
                embed_dim: 4,
                max_len: 50,
                ..
            })
        ));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            parse_run_config(ModelKind::Lamp, "bogus = 1"),
            Err(SettingsError::UnknownKey(_))
        ));
        assert!(matches!(
            parse_run_config(ModelKind::Lamp, "window = 3"),
            Err(SettingsError::NotApplicable { .. })
        ));
        assert!(matches!(
            parse_run_config(ModelKind::Lamp, "seed"),
            Err(SettingsError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            parse_run_config(ModelKind::Lamp, "hidden_size = -3"),
            Err(SettingsError::BadValue { .. })
        ));
        assert!(matches!(
            parse_run_config(ModelKind::Lamp, "language = perl"),
            Err(SettingsError::BadValue { .. })
        ));
    }
}
