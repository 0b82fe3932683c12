use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::normalizer::{CPOLS_MAX_LEN, LAMP_MAX_LEN};

/// Width of each dense ReLU classifier layer when not configured.
pub const DEFAULT_CLASSIFIER_WIDTH: usize = 64;

/// Bytes per CPoLS partition when not configured.
pub const DEFAULT_PARTITION_LEN: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lamp,
    Cpols,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lamp => "lamp",
            ModelKind::Cpols => "cpols",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lamp" => Ok(ModelKind::Lamp),
            "cpols" => Ok(ModelKind::Cpols),
            other => Err(format!("unknown model {other:?} (expected lamp or cpols)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScriptLanguage {
    JavaScript,
    VBScript,
}

/// Embedding → stacked LSTM → max pool → dense ReLU layers → sigmoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LampConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub lstm_layers: usize,
    pub classifier_layers: usize,
    pub classifier_width: usize,
    pub max_len: usize,
}

impl LampConfig {
    /// Published hyperparameters: hidden size 1500 and embedding 64 (JS) or 128 (VBS).
    pub fn published(language: ScriptLanguage) -> Self {
        Self {
            embed_dim: match language {
                ScriptLanguage::JavaScript => 64,
                ScriptLanguage::VBScript => 128,
            },
            hidden: 1500,
            lstm_layers: 1,
            classifier_layers: 1,
            classifier_width: DEFAULT_CLASSIFIER_WIDTH,
            max_len: LAMP_MAX_LEN,
        }
    }
}

/// Partition → per-piece embedding, convolution and max pool → LaMP-style head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CpolsConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub lstm_layers: usize,
    pub classifier_layers: usize,
    pub classifier_width: usize,
    pub partition_len: usize,
    pub window: usize,
    pub stride: usize,
    pub filters: usize,
    pub max_len: usize,
}

impl CpolsConfig {
    /// Published hyperparameters: window 10, stride 5, 128 filters.
    pub fn published(language: ScriptLanguage) -> Self {
        let lamp = LampConfig::published(language);
        Self {
            embed_dim: lamp.embed_dim,
            hidden: lamp.hidden,
            lstm_layers: 1,
            classifier_layers: 1,
            classifier_width: DEFAULT_CLASSIFIER_WIDTH,
            partition_len: DEFAULT_PARTITION_LEN,
            window: 10,
            stride: 5,
            filters: 128,
            max_len: CPOLS_MAX_LEN,
        }
    }

    /// `ceil(valid / partition_len)`.
    pub fn partitions(&self, valid: usize) -> usize {
        valid.div_ceil(self.partition_len)
    }
}

/// Published minibatch sizes.
pub fn published_minibatch(language: ScriptLanguage, kind: ModelKind) -> usize {
    match (language, kind) {
        (ScriptLanguage::JavaScript, ModelKind::Lamp) => 200,
        (ScriptLanguage::JavaScript, ModelKind::Cpols) => 50,
        (ScriptLanguage::VBScript, _) => 100,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Lamp(LampConfig),
    Cpols(CpolsConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Lamp(_) => ModelKind::Lamp,
            ModelConfig::Cpols(_) => ModelKind::Cpols,
        }
    }

    pub fn max_len(&self) -> usize {
        match self {
            ModelConfig::Lamp(c) => c.max_len,
            ModelConfig::Cpols(c) => c.max_len,
        }
    }

    /// `(embed_dim, hidden, lstm_layers, classifier_layers, classifier_width)`
    pub(crate) fn head_dims(&self) -> (usize, usize, usize, usize, usize) {
        match *self {
            ModelConfig::Lamp(c) => (
                c.embed_dim,
                c.hidden,
                c.lstm_layers,
                c.classifier_layers,
                c.classifier_width,
            ),
            ModelConfig::Cpols(c) => (
                c.embed_dim,
                c.hidden,
                c.lstm_layers,
                c.classifier_layers,
                c.classifier_width,
            ),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let (e, h, l, c, w) = self.head_dims();
        let bad = |msg: String| Err(ModelError::Config(msg));
        if e == 0 || h == 0 || l == 0 || c == 0 || w == 0 {
            return bad(format!(
                "embed_dim, hidden, lstm_layers, classifier_layers and classifier_width must be ≥ 1 \
                 (got {e}, {h}, {l}, {c}, {w})"
            ));
        }
        if self.max_len() == 0 {
            return bad("max_len must be ≥ 1".into());
        }
        if let ModelConfig::Cpols(p) = self {
            if p.stride == 0 || p.filters == 0 || p.window == 0 {
                return bad("window, stride and filters must be ≥ 1".into());
            }
            if p.window > p.partition_len {
                return bad(format!(
                    "window {} exceeds partition length {}",
                    p.window, p.partition_len
                ));
            }
        }
        Ok(())
    }
}
