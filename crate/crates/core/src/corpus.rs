//! Labeled corpora: manifests, deterministic splits, padded minibatches and a
//! synthetic motif-planting generator.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::normalizer::{self, EncodedSequence, NormalizeError};

/// Code written past `valid_length` when rows are padded.
pub const PAD_CODE: u8 = 0;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("dataset is empty")]
    Empty,
    #[error("split ratios must be positive and sum to 1, got {0:?}")]
    BadRatios((f64, f64, f64)),
    #[error("duplicate example id {0:?}")]
    DuplicateId(String),
    #[error("invalid synthetic spec: {0}")]
    BadSpec(String),
    #[error("manifest {path}:{line}: {reason}")]
    Manifest {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{path}: {source}")]
    Encoded {
        path: String,
        #[source]
        source: NormalizeError,
    },
    #[error("i/o error on {path}: {reason}")]
    Io { path: String, reason: String },
}

fn io_err(path: &Path, e: impl ToString) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Benign,
    Malicious,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Benign => 0,
            Label::Malicious => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Benign),
            1 => Some(Label::Malicious),
            _ => None,
        }
    }

    pub fn is_malicious(self) -> bool {
        self == Label::Malicious
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub id: String,
    pub label: Label,
    pub sequence: EncodedSequence,
}

#[derive(Debug, Clone, Default)]
pub struct DatasetSplit {
    pub train: Vec<LabeledExample>,
    pub validation: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
}

/// `(train, validation, test)` fractions.
pub type SplitRatios = (f64, f64, f64);

/// The 70/10/20 partition used for both script corpora.
pub const DEFAULT_RATIOS: SplitRatios = (0.70, 0.10, 0.20);

/// Sizes for `n` examples: train and validation are rounded to the nearest
/// integer, test receives the remainder.
pub fn split_sizes(n: usize, ratios: SplitRatios) -> Result<(usize, usize, usize), CorpusError> {
    let (a, b, c) = ratios;
    let ok =
        [a, b, c].iter().all(|r| r.is_finite() && *r > 0.0) && ((a + b + c) - 1.0).abs() < 1e-9;
    if !ok {
        return Err(CorpusError::BadRatios(ratios));
    }
    let train = ((n as f64) * a).round() as usize;
    let train = train.min(n);
    let val = (((n as f64) * b).round() as usize).min(n - train);
    Ok((train, val, n - train - val))
}

/// Uniform, unstratified random assignment driven entirely by `seed`.
pub fn split_dataset(
    examples: Vec<LabeledExample>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<DatasetSplit, CorpusError> {
    if examples.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut seen = HashSet::with_capacity(examples.len());
    for ex in &examples {
        if !seen.insert(ex.id.as_str()) {
            return Err(CorpusError::DuplicateId(ex.id.clone()));
        }
    }
    let (n_train, n_val, _) = split_sizes(examples.len(), ratios)?;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut slots: Vec<Option<LabeledExample>> = examples.into_iter().map(Some).collect();
    let mut split = DatasetSplit::default();
    for (pos, &idx) in order.iter().enumerate() {
        let ex = slots[idx]
            .take()
            .expect("permutation visits each index once");
        if pos < n_train {
            split.train.push(ex);
        } else if pos < n_train + n_val {
            split.validation.push(ex);
        } else {
            split.test.push(ex);
        }
    }
    Ok(split)
}

/// A padded batch; row `i` occupies `padded_codes[i * max_len..(i + 1) * max_len]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    pub ids: Vec<String>,
    pub padded_codes: Vec<u8>,
    pub max_len: usize,
    pub valid_lengths: Vec<usize>,
    pub labels: Vec<Label>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.padded_codes[i * self.max_len..(i + 1) * self.max_len]
    }

    pub fn sequence(&self, i: usize) -> EncodedSequence {
        EncodedSequence::with_valid_length(self.row(i).to_vec(), self.valid_lengths[i])
    }
}

/// One epoch of minibatches over `examples`. Sequences longer than `max_len`
/// are truncated; shorter ones are padded with [`PAD_CODE`]. With a shuffle
/// seed the visiting order is a seeded permutation, otherwise input order.
pub fn batches(
    examples: &[LabeledExample],
    batch_size: usize,
    max_len: usize,
    shuffle_seed: Option<u64>,
) -> impl Iterator<Item = Minibatch> + '_ {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..examples.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    chunks.into_iter().map(move |chunk| {
        let mut batch = Minibatch {
            ids: Vec::with_capacity(chunk.len()),
            padded_codes: vec![PAD_CODE; chunk.len() * max_len],
            max_len,
            valid_lengths: Vec::with_capacity(chunk.len()),
            labels: Vec::with_capacity(chunk.len()),
        };
        for (row, &idx) in chunk.iter().enumerate() {
            let ex = &examples[idx];
            let codes = ex.sequence.valid_codes();
            let n = codes.len().min(max_len);
            batch.padded_codes[row * max_len..row * max_len + n].copy_from_slice(&codes[..n]);
            batch.ids.push(ex.id.clone());
            batch.valid_lengths.push(n);
            batch.labels.push(ex.label);
        }
        batch
    })
}

/// Parameters for [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_examples: usize,
    pub malicious_fraction: f64,
    /// Planted only in malicious examples.
    pub motif_set: Vec<Vec<u8>>,
    pub length_range: (usize, usize),
    pub noise_alphabet: Vec<u8>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Default motifs and noise resemble normalized script text.
    pub fn new(n_examples: usize, malicious_fraction: f64, seed: u64) -> Self {
        Self {
            n_examples,
            malicious_fraction,
            motif_set: default_motifs(),
            length_range: (50, 200),
            noise_alphabet: default_noise_alphabet(),
            seed,
        }
    }

    pub fn with_length_range(mut self, min: usize, max: usize) -> Self {
        self.length_range = (min, max);
        self
    }

    pub fn n_malicious(&self) -> usize {
        (self.n_examples as f64 * self.malicious_fraction).round() as usize
    }

    fn validate(&self) -> Result<(), CorpusError> {
        if !(0.0..=1.0).contains(&self.malicious_fraction) {
            return Err(CorpusError::BadSpec(format!(
                "malicious_fraction {} outside [0, 1]",
                self.malicious_fraction
            )));
        }
        let (min, max) = self.length_range;
        if min > max || max == 0 {
            return Err(CorpusError::BadSpec(format!(
                "bad length range [{min}, {max}]"
            )));
        }
        if self.noise_alphabet.is_empty() {
            return Err(CorpusError::BadSpec("empty noise alphabet".into()));
        }
        if self.n_malicious() > 0 && self.motif_set.is_empty() {
            return Err(CorpusError::BadSpec(
                "no motifs for malicious examples".into(),
            ));
        }
        if let Some(m) = self
            .motif_set
            .iter()
            .find(|m| m.is_empty() || m.len() > min)
        {
            return Err(CorpusError::BadSpec(format!(
                "motif {:?} is empty or longer than the minimum length {min}",
                String::from_utf8_lossy(m)
            )));
        }
        Ok(())
    }
}

pub fn default_motifs() -> Vec<Vec<u8>> {
    [
        "eval(unescape(",
        "activexobject(",
        "wscript.shell",
        "fromcharcode(",
        "createobject(",
        "adodb.stream",
    ]
    .iter()
    .map(|s| s.as_bytes().to_vec())
    .collect()
}

/// Lowercase letters, digits, common punctuation and line feed.
pub fn default_noise_alphabet() -> Vec<u8> {
    let mut a: Vec<u8> = (b'a'..=b'z').chain(b'0'..=b'9').collect();
    a.extend_from_slice(b"();=.,'\"+-*/[]{}<>!&|_:\n");
    a
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    needle.len() <= haystack.len() && haystack.windows(needle.len()).any(|w| w == needle)
}

pub fn contains_any_motif(text: &[u8], motifs: &[Vec<u8>]) -> bool {
    motifs.iter().any(|m| contains(text, m))
}

/// Malicious examples get one motif at a random offset over random noise;
/// benign noise is redrawn until it contains no motif. Malicious and benign
/// examples are interleaved in a seeded order, ids are `syn-00000` onwards.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<LabeledExample>, CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_mal = spec.n_malicious();
    let mut labels: Vec<Label> = (0..spec.n_examples)
        .map(|i| {
            if i < n_mal {
                Label::Malicious
            } else {
                Label::Benign
            }
        })
        .collect();
    labels.shuffle(&mut rng);

    let (min, max) = spec.length_range;
    let width = format!("{}", spec.n_examples.saturating_sub(1))
        .len()
        .max(5);
    let mut out = Vec::with_capacity(spec.n_examples);
    for (i, label) in labels.into_iter().enumerate() {
        let len = rng.gen_range(min..=max);
        let noise = |rng: &mut ChaCha8Rng| -> Vec<u8> {
            (0..len)
                .map(|_| spec.noise_alphabet[rng.gen_range(0..spec.noise_alphabet.len())])
                .collect()
        };
        let text = match label {
            Label::Malicious => {
                let mut text = noise(&mut rng);
                let motif = &spec.motif_set[rng.gen_range(0..spec.motif_set.len())];
                let at = rng.gen_range(0..=len - motif.len());
                text[at..at + motif.len()].copy_from_slice(motif);
                text
            }
            Label::Benign => loop {
                let text = noise(&mut rng);
                if !contains_any_motif(&text, &spec.motif_set) {
                    break text;
                }
            },
        };
        out.push(LabeledExample {
            id: format!("syn-{i:0width$}"),
            label,
            sequence: EncodedSequence::new(text),
        });
    }
    Ok(out)
}

/// One manifest record: `<id>,<label>,<relative path>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub label: Label,
    pub path: PathBuf,
}

pub fn parse_manifest(text: &str, origin: &str) -> Result<Vec<ManifestEntry>, CorpusError> {
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: &str| CorpusError::Manifest {
            path: origin.to_string(),
            line: lineno + 1,
            reason: reason.to_string(),
        };
        let mut fields = line.splitn(3, ',');
        let (id, label, path) = match (fields.next(), fields.next(), fields.next()) {
            (Some(id), Some(label), Some(path)) => (id, label, path),
            _ => return Err(bad("expected <id>,<label>,<path>")),
        };
        if id.is_empty() || path.is_empty() {
            return Err(bad("empty id or path"));
        }
        let label = match label {
            "0" => Label::Benign,
            "1" => Label::Malicious,
            _ => return Err(bad("label must be 0 or 1")),
        };
        entries.push(ManifestEntry {
            id: id.to_string(),
            label,
            path: PathBuf::from(path),
        });
    }
    Ok(entries)
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut s = String::from("# id,label,path\n");
    for e in entries {
        s.push_str(&format!(
            "{},{},{}\n",
            e.id,
            e.label.as_u8(),
            e.path.display()
        ));
    }
    s
}

/// Reads a manifest and every encoded file it names (relative to the
/// manifest's directory).
pub fn load_manifest(path: &Path) -> Result<Vec<LabeledExample>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let entries = parse_manifest(&text, &path.display().to_string())?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    entries
        .into_iter()
        .map(|e| {
            let file = base.join(&e.path);
            let bytes = fs::read(&file).map_err(|err| io_err(&file, err))?;
            let sequence =
                normalizer::parse_encoded(&bytes).map_err(|source| CorpusError::Encoded {
                    path: file.display().to_string(),
                    source,
                })?;
            Ok(LabeledExample {
                id: e.id,
                label: e.label,
                sequence,
            })
        })
        .collect()
}

/// Writes `scripts/<id>.enc` for every example plus `manifest.csv` under `dir`.
pub fn write_corpus(dir: &Path, examples: &[LabeledExample]) -> Result<PathBuf, CorpusError> {
    let scripts = dir.join("scripts");
    fs::create_dir_all(&scripts).map_err(|e| io_err(&scripts, e))?;
    let mut entries = Vec::with_capacity(examples.len());
    for ex in examples {
        let rel = PathBuf::from("scripts").join(format!("{}.enc", ex.id));
        let file = dir.join(&rel);
        crate::io::write_atomic(&file, normalizer::format_encoded(&ex.sequence).as_bytes())
            .map_err(|e| io_err(&file, e))?;
        entries.push(ManifestEntry {
            id: ex.id.clone(),
            label: ex.label,
            path: rel,
        });
    }
    let manifest = dir.join("manifest.csv");
    crate::io::write_atomic(&manifest, format_manifest(&entries).as_bytes())
        .map_err(|e| io_err(&manifest, e))?;
    Ok(manifest)
}
