//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::corpus::{
    self, generate_synthetic, load_manifest, split_dataset, CorpusError, LabeledExample,
    SyntheticSpec,
};
use crate::evaluator::{self, EvalError, DEFAULT_FPR_TARGETS};
use crate::io::write_atomic;
use crate::models::{
    check_model_gradients, gradcheck_config, ModelError, ModelKind, ScriptClassifier,
};
use crate::nn::gradcheck::{finite_difference_check, layer_probes};
use crate::normalizer::{self, NormalizeError, RawScript};
use crate::trainer::{
    self, load_checkpoint, parse_grid, parse_run_config, save_checkpoint, Checkpoint,
    CheckpointError, RunConfig, SettingsError, SweepError, TrainError, TrainingMetadata,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Byte-level LSTM and convolutional classifiers for malicious scripts.
#[derive(Debug, Parser)]
#[command(name = "scriptnet", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize a raw script and write its comma-separated byte codes.
    Normalize(NormalizeArgs),
    /// Generate a synthetic labeled corpus with a manifest.
    GenCorpus(GenCorpusArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Score a manifest with a checkpoint and write a JSON metrics report.
    Evaluate(EvaluateArgs),
    /// Print the malicious probability of one raw script.
    Predict(PredictArgs),
    /// Vary one hyperparameter at a time and rank the runs by validation error.
    Sweep(SweepArgs),
    /// Compare analytic gradients against central differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct NormalizeArgs {
    /// Raw script file.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Truncation length; no truncation when omitted.
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    /// Number of examples.
    #[arg(long)]
    pub n: usize,
    /// Fraction of malicious examples.
    #[arg(long, default_value_t = 0.5)]
    pub malicious_frac: f64,
    #[arg(long)]
    pub seed: u64,
    /// Shortest example in bytes.
    #[arg(long, default_value_t = 50)]
    pub min_len: usize,
    /// Longest example in bytes.
    #[arg(long, default_value_t = 200)]
    pub max_len: usize,
    /// Output directory; receives manifest.csv and scripts/.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Lamp,
    Cpols,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Lamp => ModelKind::Lamp,
            ModelArg::Cpols => ModelKind::Cpols,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    /// Corpus manifest (`id,label,path` lines).
    #[arg(long)]
    pub manifest: PathBuf,
    /// `key = value` run configuration; published defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configuration's thread count.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional JSON file for the per-epoch history.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    All,
    Train,
    Validation,
    Test,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Target false positive rates.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_FPR_TARGETS.to_vec())]
    pub fpr: Vec<f64>,
    /// Which part of the manifest to score. Partitions are recomputed from
    /// the seed and ratios stored in the checkpoint.
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    pub split: SplitArg,
    /// JSON report path.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional CSV of ROC points (threshold,fpr,tpr) for plotting.
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Raw script file.
    #[arg(long = "in")]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Base run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Grid file with `key = v1, v2, ...` lines.
    #[arg(long)]
    pub grid: PathBuf,
    /// Optional JSON output of the ranked table.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GradcheckTarget {
    Lamp,
    Cpols,
    Layers,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum)]
    pub model: GradcheckTarget,
    /// Use the small built-in configuration (required for whole models).
    #[arg(long)]
    pub tiny: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pass threshold on the maximum relative error; 1e-4 for models and
    /// 1e-6 for layers when omitted.
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}
data_error!(
    CorpusError,
    NormalizeError,
    CheckpointError,
    SettingsError,
    EvalError,
    ModelError
);

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Divergence { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Train(t) => t.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn report_io(e: std::io::Error) -> CliError {
    CliError::Data(format!("cannot write output: {e}"))
}

fn load_run_config(kind: ModelKind, path: Option<&Path>) -> Result<RunConfig, CliError> {
    let text = match path {
        Some(p) => String::from_utf8(read(p)?)
            .map_err(|_| CliError::Data(format!("{} is not UTF-8", p.display())))?,
        None => String::new(),
    };
    let cfg = parse_run_config(kind, &text)?;
    cfg.validate().map_err(CliError::Data)?;
    Ok(cfg)
}

fn cmd_normalize(a: &NormalizeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let raw = RawScript::new(a.input.display().to_string(), read(&a.input)?);
    let norm = normalizer::normalize(&raw);
    let seq = normalizer::encode(&norm, a.max_len.unwrap_or(norm.len()));
    let text = normalizer::format_encoded(&seq);
    match &a.out {
        Some(p) => write(p, text.as_bytes()),
        None => writeln!(out, "{text}").map_err(report_io),
    }
}

fn cmd_gen_corpus(a: &GenCorpusArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let spec =
        SyntheticSpec::new(a.n, a.malicious_frac, a.seed).with_length_range(a.min_len, a.max_len);
    let examples = generate_synthetic(&spec)?;
    let manifest = corpus::write_corpus(&a.out, &examples)?;
    let n_mal = examples.iter().filter(|e| e.label.is_malicious()).count();
    writeln!(
        out,
        "wrote {} examples ({n_mal} malicious) to {}",
        examples.len(),
        manifest.display()
    )
    .map_err(report_io)
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = load_run_config(a.model.into(), a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    if let Some(t) = a.threads {
        cfg.train.threads = t;
    }
    let examples = load_manifest(&a.manifest)?;
    let split = split_dataset(examples, cfg.split_ratios, cfg.train.seed)?;
    writeln!(
        err,
        "{} model: {} train, {} validation, {} test",
        cfg.model.kind().name(),
        split.train.len(),
        split.validation.len(),
        split.test.len()
    )
    .map_err(report_io)?;
    let model = ScriptClassifier::new(cfg.model, cfg.train.seed)?;
    let outcome = trainer::train_with_progress(model, &split, &cfg.train, |r| {
        let _ = writeln!(
            err,
            "epoch {:>3}  loss {:.5}  validation error {:.4}{}",
            r.epoch,
            r.train_loss,
            r.validation_error,
            if r.improved { "  *" } else { "" }
        );
    })?;
    let ckpt = Checkpoint {
        model: outcome.model,
        metadata: TrainingMetadata {
            epoch: outcome.best_epoch,
            validation_error: outcome.best_validation_error,
            seed: cfg.train.seed,
            split_ratios: cfg.split_ratios,
        },
    };
    save_checkpoint(&ckpt, &a.out)?;
    if let Some(h) = &a.history {
        let json = serde_json::to_vec_pretty(&outcome.history).expect("history serializes");
        write(h, &json)?;
    }
    writeln!(
        out,
        "best epoch {} validation error {:.4}; checkpoint {}",
        outcome.best_epoch,
        outcome.best_validation_error,
        a.out.display()
    )
    .map_err(report_io)
}

fn select_split(
    examples: Vec<LabeledExample>,
    which: SplitArg,
    meta: &TrainingMetadata,
) -> Result<Vec<LabeledExample>, CliError> {
    if which == SplitArg::All {
        return Ok(examples);
    }
    let split = split_dataset(examples, meta.split_ratios, meta.seed)?;
    Ok(match which {
        SplitArg::Train => split.train,
        SplitArg::Validation => split.validation,
        _ => split.test,
    })
}

fn cmd_evaluate(a: &EvaluateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.fpr.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(CliError::Usage(format!(
            "--fpr values must lie in [0, 1], got {:?}",
            a.fpr
        )));
    }
    let ckpt = load_checkpoint(&a.ckpt)?;
    let examples = select_split(load_manifest(&a.manifest)?, a.split, &ckpt.metadata)?;
    let scored = evaluator::score_examples(&ckpt.model, &examples)?;
    let report = evaluator::report(&scored, &a.fpr)?;
    let mut json = serde_json::to_vec_pretty(&report).expect("report serializes");
    json.push(b'\n');
    write(&a.out, &json)?;
    if let Some(c) = &a.curve {
        let curve = evaluator::roc_curve(&scored)?;
        let mut csv = String::from("threshold,fpr,tpr\n");
        for p in &curve.points {
            csv.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
        }
        write(c, csv.as_bytes())?;
    }
    write!(out, "{report}").map_err(report_io)
}

fn cmd_predict(a: &PredictArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let raw = RawScript::new(a.input.display().to_string(), read(&a.input)?);
    let p = ckpt.model.predict(&raw)?;
    writeln!(out, "{p:.6}").map_err(report_io)
}

fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let base = load_run_config(a.model.into(), a.config.as_deref())?;
    let grid_text = String::from_utf8(read(&a.grid)?)
        .map_err(|_| CliError::Data("grid file is not UTF-8".into()))?;
    let grid = parse_grid(&grid_text)?;
    let split = split_dataset(
        load_manifest(&a.manifest)?,
        base.split_ratios,
        base.train.seed,
    )?;
    let rows = trainer::sweep(&base, &grid, &split)?;
    writeln!(
        out,
        "{:<4} {:<20} {:<10} {:>10} {:>6}",
        "rank", "parameter", "value", "val_error", "epoch"
    )
    .map_err(report_io)?;
    for (i, r) in rows.iter().enumerate() {
        writeln!(
            out,
            "{:<4} {:<20} {:<10} {:>10.4} {:>6}",
            i + 1,
            r.parameter,
            r.value,
            r.validation_error,
            r.best_epoch
        )
        .map_err(report_io)?;
    }
    if let Some(p) = &a.out {
        write(
            p,
            &serde_json::to_vec_pretty(&rows).expect("rows serialize"),
        )?;
    }
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut worst = 0.0f64;
    let tolerance;
    match a.model {
        GradcheckTarget::Layers => {
            tolerance = a.tolerance.unwrap_or(1e-6);
            for (name, mut probe) in layer_probes(a.seed) {
                let r = finite_difference_check(probe.as_mut(), tolerance, None, a.seed);
                writeln!(
                    out,
                    "{name:<24} max relative error {:.3e}",
                    r.max_relative_error
                )
                .map_err(report_io)?;
                worst = worst.max(r.max_relative_error);
            }
        }
        GradcheckTarget::Lamp | GradcheckTarget::Cpols => {
            if !a.tiny {
                return Err(CliError::Usage(
                    "whole-model gradient checks need --tiny; full-size models are too large to difference".into(),
                ));
            }
            tolerance = a.tolerance.unwrap_or(1e-4);
            let kind = if a.model == GradcheckTarget::Lamp {
                ModelKind::Lamp
            } else {
                ModelKind::Cpols
            };
            let r = check_model_gradients(gradcheck_config(kind), a.seed, tolerance)?;
            writeln!(
                out,
                "{} ({} coordinates, worst {})",
                kind.name(),
                r.checked,
                r.worst_parameter
            )
            .map_err(report_io)?;
            worst = r.max_relative_error;
        }
    }
    writeln!(
        out,
        "max relative error {worst:.3e} (tolerance {tolerance:.0e})"
    )
    .map_err(report_io)?;
    if worst < tolerance {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check failed: {worst:.3e} ≥ {tolerance:.0e}"
        )))
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Normalize(a) => cmd_normalize(a, out),
        Command::GenCorpus(a) => cmd_gen_corpus(a, out),
        Command::Train(a) => cmd_train(a, out, err),
        Command::Evaluate(a) => cmd_evaluate(a, out),
        Command::Predict(a) => cmd_predict(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{rendered}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{rendered}");
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(&cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(
            std::iter::once("scriptnet").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn usage_errors_exit_one() {
        let (code, _, err) = run_capture(&["train", "--model", "lamp"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("--manifest"), "{err}");
        assert_eq!(run_capture(&["evaluate", "--bogus"]).0, EXIT_USAGE);
        assert_eq!(run_capture(&[]).0, EXIT_USAGE);
        assert_eq!(run_capture(&["gradcheck", "--model", "lamp"]).0, EXIT_USAGE);
    }

    #[test]
    fn help_lists_flags() {
        let (code, out, _) = run_capture(&["evaluate", "--help"]);
        assert_eq!(code, EXIT_OK);
        for flag in [
            "--ckpt",
            "--manifest",
            "--fpr",
            "--split",
            "--out",
            "--curve",
        ] {
            assert!(out.contains(flag), "{flag} missing from help");
        }
    }

    #[test]
    fn missing_files_are_data_errors() {
        let (code, _, err) = run_capture(&[
            "predict",
            "--ckpt",
            "/nonexistent/x.ckpt",
            "--in",
            "/nonexistent/y.js",
        ]);
        assert_eq!(code, EXIT_DATA);
        assert!(err.starts_with("error:"));
    }

    #[test]
    fn normalize_prints_codes() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.js");
        std::fs::write(&f, "A b\n\u{e9}").unwrap();
        let (code, out, _) = run_capture(&["normalize", "--in", f.to_str().unwrap()]);
        assert_eq!(code, EXIT_OK);
        assert_eq!(out.trim(), "97,98,10,63,63");
    }

    #[test]
    fn gradcheck_tiny_models_pass() {
        for m in ["lamp", "cpols"] {
            let (code, out, _) = run_capture(&["gradcheck", "--model", m, "--tiny"]);
            assert_eq!(code, EXIT_OK, "{out}");
            assert!(out.contains("max relative error"));
        }
        let (code, _, _) = run_capture(&["gradcheck", "--model", "layers"]);
        assert_eq!(code, EXIT_OK);
    }
}
