//! The `logmlm` command line. Stages communicate only through files in the
//! output directory, so any stage can be rerun on its own:
//!
//! ```text
//! synth            train.log test.log                  (synthetic benchmark)
//! preprocess       train.txt test.tsv manifest.toml
//! train-tokenizer  vocab.txt
//! train            model.ckpt loss.csv train_report.toml
//! score            scores.csv score_report.toml
//! eval             report.toml roc_error.csv roc_prob.csv
//! e2e              all of the above, then a pass/fail summary
//! ```
//!
//! Each stage also writes `<stage>.config.toml`, the effective
//! configuration (defaults, then the `--config` file, then flags). No
//! environment variables are read.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{CacheError, CacheStats, ScoreCache};
use crate::eval::{orient, read_scores_csv, roc_curve, write_roc_csv, EvalError, EvalReport, ScoreKind};
use crate::ingest::{
    line_labeled_stream, load_hdfs, split_train_test, IngestError, Label, LogRecord, LogSource,
    NormalizationRuleSet,
};
use crate::model::{Checkpoint, CheckpointError, ModelConfig};
use crate::scorer::{score_records, write_scores_csv, MaskMode, ScoreError, ScoringContext, DEFAULT_TOP_K};
use crate::synthgen::{generate_benchmark, write_tagged, AnomalyKind, BenchmarkConfig, LogGrammar, SynthError};
use crate::tokenizer::{encode, train_wordpiece, TokenizerError, Vocab, WordPieceConfig};
use crate::trainer::{train_with_sink, write_loss_csv, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::CheckpointMismatch(_) => 4,
        }
    }
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(m) => CliError::Config(format!("train: {m}")),
            TrainError::Model(crate::model::ModelError::InvalidConfig(m)) => CliError::Config(format!("model: {m}")),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::VocabMismatch | ScoreError::Checkpoint(CheckpointError::VocabMismatch) => {
                CliError::CheckpointMismatch(e.to_string())
            }
            ScoreError::Cache(CacheError::CheckpointMismatch) => CliError::CheckpointMismatch(e.to_string()),
            ScoreError::InvalidK => CliError::Config("score.k must be at least 1".into()),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// hdfs, bgl, thunderbird, synthetic or generic.
    pub source: String,
    pub log: Option<PathBuf>,
    /// HDFS `BlockId,Label` file.
    pub labels: Option<PathBuf>,
    /// Separate test log; when set, `log` is the training log and no split
    /// is made. For the synthetic source both default to the files written
    /// by `synth`.
    pub test_log: Option<PathBuf>,
    /// Normalization rules file; built-in rules when absent.
    pub rules: Option<PathBuf>,
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: "generic".into(),
            log: None,
            labels: None,
            test_log: None,
            rules: None,
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Grammar file; the built-in benchmark grammar when absent.
    pub grammar: Option<PathBuf>,
    pub train_lines: usize,
    pub test_lines: usize,
    pub anomaly_rate: f64,
    pub kinds: Vec<AnomalyKind>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let b = BenchmarkConfig::default();
        Self {
            grammar: None,
            train_lines: b.train_lines,
            test_lines: b.test_lines,
            anomaly_rate: b.anomaly_rate,
            kinds: b.kinds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreConfig {
    pub k: usize,
    pub mask_mode: MaskMode,
    /// Score cache file, read if present and rewritten after scoring.
    pub cache: Option<PathBuf>,
    /// LRU bound on cached entries; unbounded when absent.
    pub cache_capacity: Option<usize>,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_TOP_K,
            mask_mode: MaskMode::Token,
            cache: None,
            cache_capacity: None,
        }
    }
}

/// Everything a run needs. `seed` overrides `train.seed` and the synthetic
/// benchmark seed; `model.vocab_size` is always taken from the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub tokenizer: WordPieceConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub score: ScoreConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            tokenizer: WordPieceConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            score: ScoreConfig::default(),
        }
    }
}

impl RunConfig {
    /// Defaults of the `e2e` command: tiny model on the synthetic benchmark.
    pub fn synthetic_benchmark() -> Self {
        Self {
            seed: 7,
            data: DataConfig {
                source: "synthetic".into(),
                ..DataConfig::default()
            },
            model: ModelConfig::tiny(0),
            train: TrainConfig {
                batch_size: 64,
                steps: 2000,
                learning_rate: 2e-3,
                ..TrainConfig::default()
            },
            ..Self::default()
        }
    }

    /// Reads a TOML file on top of `base`: keys present in the file replace
    /// the base values, tables merge recursively.
    pub fn load_over(base: &RunConfig, path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let file: toml::Table = text
            .parse()
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut merged = toml::Table::try_from(base).map_err(|e| CliError::Config(e.to_string()))?;
        merge_tables(&mut merged, file);
        let cfg: RunConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn source(&self) -> Result<LogSource, CliError> {
        self.data.source.parse().map_err(|e| CliError::Config(format!("data.source: {e}")))
    }

    fn rules(&self) -> Result<NormalizationRuleSet, CliError> {
        match &self.data.rules {
            None => Ok(NormalizationRuleSet::default()),
            Some(p) => NormalizationRuleSet::from_file(p).map_err(|e| CliError::Config(format!("data.rules: {e}"))),
        }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "logmlm", version, about = "Log anomaly detection with a masked language model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args, Default)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for training and the synthetic benchmark.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of extreme positions averaged into each abnormal score.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub mask_mode: Option<MaskMode>,
    /// Score cache file.
    #[arg(long, global = true)]
    pub cache: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, short, global = true)]
    pub out: Option<PathBuf>,
    /// Replace existing outputs.
    #[arg(long, global = true)]
    pub overwrite: bool,
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Normalize logs and split them into train.txt and test.tsv.
    Preprocess,
    /// Train a WordPiece vocabulary on train.txt.
    TrainTokenizer,
    /// Train the masked language model.
    Train,
    /// Score test.tsv with a trained checkpoint.
    Score,
    /// Best F1 and AUROC of a scores file.
    Eval {
        /// Scores CSV; `<out>/scores.csv` by default.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Generate the synthetic benchmark logs.
    Synth,
    /// Run every stage on the synthetic benchmark.
    E2e,
}

impl CommonArgs {
    /// Defaults, then the config file, then flags.
    pub fn effective_config(&self, base: RunConfig) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load_over(&base, p)?,
            None => base,
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(k) = self.k {
            cfg.score.k = k;
        }
        if let Some(m) = self.mask_mode {
            cfg.score.mask_mode = m;
        }
        if let Some(c) = &self.cache {
            cfg.score.cache = Some(c.clone());
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        Ok(cfg)
    }
}

/// Parses already-split arguments and runs the command.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let base = match cli.command {
        Command::E2e => RunConfig::synthetic_benchmark(),
        _ => RunConfig::default(),
    };
    let cfg = cli.common.effective_config(base)?;
    let ow = cli.common.overwrite;
    match cli.command {
        Command::Preprocess => {
            let m = cmd_preprocess(&cfg, ow)?;
            println!("{}", toml::to_string(&m).expect("manifest serializes"));
        }
        Command::TrainTokenizer => {
            let v = cmd_train_tokenizer(&cfg, ow)?;
            println!("vocabulary: {} tokens", v.len());
        }
        Command::Train => {
            let r = cmd_train(&cfg, ow)?;
            println!("{}", toml::to_string(&r).expect("report serializes"));
        }
        Command::Score => {
            let r = cmd_score(&cfg, ow)?;
            println!("{}", toml::to_string(&r).expect("report serializes"));
        }
        Command::Eval { scores } => {
            let r = cmd_eval(&cfg, scores.as_deref(), ow)?;
            print!("{}", r.to_text());
        }
        Command::Synth => {
            let (train, test) = cmd_synth(&cfg, ow)?;
            println!("wrote {train} training and {test} test lines");
        }
        Command::E2e => {
            let s = cmd_e2e(&cfg, ow)?;
            print!("{}", s.render());
        }
    }
    Ok(())
}

/// Opens `path` for writing unless it exists and `overwrite` is off.
fn create(path: &Path, overwrite: bool) -> Result<BufWriter<File>, CliError> {
    if path.exists() && !overwrite {
        return Err(CliError::Config(format!(
            "{} exists; pass --overwrite to replace it",
            path.display()
        )));
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| data_err(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| data_err(path, e))
}

fn check_free(paths: &[PathBuf], overwrite: bool) -> Result<(), CliError> {
    for p in paths {
        if p.exists() && !overwrite {
            return Err(CliError::Config(format!("{} exists; pass --overwrite to replace it", p.display())));
        }
    }
    Ok(())
}

fn check_exists(field: &str, path: &Path) -> Result<(), CliError> {
    if !path.is_file() {
        return Err(CliError::Data(format!("{field}: {} not found", path.display())));
    }
    Ok(())
}

fn write_text(path: &Path, text: &str, overwrite: bool) -> Result<(), CliError> {
    let mut w = create(path, overwrite)?;
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| data_err(path, e))
}

fn echo_config(cfg: &RunConfig, stage: &str, overwrite: bool) -> Result<(), CliError> {
    let mut effective = cfg.clone();
    effective.train.seed = cfg.seed;
    write_text(&cfg.out(&format!("{stage}.config.toml")), &effective.to_toml(), overwrite)
}

/// Writes the synthetic train and test logs. Returns their line counts.
pub fn cmd_synth(cfg: &RunConfig, overwrite: bool) -> Result<(usize, usize), CliError> {
    let (train_path, test_path) = (cfg.out("train.log"), cfg.out("test.log"));
    check_free(&[train_path.clone(), test_path.clone()], overwrite)?;
    let grammar = match &cfg.synth.grammar {
        Some(p) => LogGrammar::from_file(p).map_err(|e| CliError::Config(format!("synth.grammar: {e}")))?,
        None => LogGrammar::default_benchmark(),
    };
    let bench_cfg = BenchmarkConfig {
        train_lines: cfg.synth.train_lines,
        test_lines: cfg.synth.test_lines,
        anomaly_rate: cfg.synth.anomaly_rate,
        kinds: cfg.synth.kinds.clone(),
        seed: cfg.seed,
    };
    let bench = generate_benchmark(&grammar, &bench_cfg).map_err(|e| match e {
        SynthError::Io(io) => CliError::Data(io.to_string()),
        other => CliError::Config(format!("synth: {other}")),
    })?;
    echo_config(cfg, "synth", overwrite)?;
    for (path, lines) in [(&train_path, &bench.train), (&test_path, &bench.test)] {
        let w = create(path, overwrite)?;
        write_tagged(w, lines).map_err(|e| data_err(path, e))?;
    }
    Ok((bench.train.len(), bench.test.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub source: String,
    pub rules_version: String,
    pub lines_read: usize,
    pub skipped_empty: usize,
    pub invalid_utf8: usize,
    pub train_records: usize,
    pub test_records: usize,
    pub test_normal: usize,
    pub test_abnormal: usize,
    /// Abnormal lines found in a separate training log and dropped.
    pub train_abnormal_dropped: usize,
}

fn ingest_err(field: &str, e: IngestError) -> CliError {
    match e {
        IngestError::InvalidFraction(_) => CliError::Config(format!("data.train_fraction: {e}")),
        other => CliError::Data(format!("{field}: {other}")),
    }
}

fn read_line_labeled(path: &Path, source: LogSource, rules: &NormalizationRuleSet) -> Result<(Vec<LogRecord>, crate::ingest::LoadStats), CliError> {
    let reader = BufReader::new(File::open(path).map_err(|e| data_err(path, e))?);
    let mut stream = line_labeled_stream(reader, source, rules);
    let records: Vec<LogRecord> = stream.by_ref().collect();
    if let Some(e) = stream.take_error() {
        return Err(data_err(path, e));
    }
    Ok((records, stream.stats().clone()))
}

/// Normalizes the configured logs and writes `train.txt` (one normalized
/// line per row) and `test.tsv` (`line_no, label, group_id, normalized`).
pub fn cmd_preprocess(cfg: &RunConfig, overwrite: bool) -> Result<Manifest, CliError> {
    let source = cfg.source()?;
    let rules = cfg.rules()?;
    let mut cfg = cfg.clone();
    if source == LogSource::Synthetic && cfg.data.log.is_none() {
        cfg.data.log = Some(cfg.out("train.log"));
        if cfg.data.test_log.is_none() {
            cfg.data.test_log = Some(cfg.out("test.log"));
        }
    }
    let cfg = &cfg;
    let log = cfg.data.log.clone().ok_or_else(|| CliError::Config("data.log is required".into()))?;
    check_exists("data.log", &log)?;
    if let Some(t) = &cfg.data.test_log {
        check_exists("data.test_log", t)?;
    }
    let outputs = [cfg.out("train.txt"), cfg.out("test.tsv"), cfg.out("manifest.toml")];
    check_free(&outputs, overwrite)?;

    let mut dropped = 0;
    let (split, stats) = if source == LogSource::Hdfs {
        let labels_path = cfg.data.labels.clone().ok_or_else(|| CliError::Config("data.labels is required for hdfs".into()))?;
        check_exists("data.labels", &labels_path)?;
        let mut stream = load_hdfs(&log, &labels_path, &rules).map_err(|e| ingest_err("data.labels", e))?;
        let records: Vec<LogRecord> = stream.by_ref().collect();
        if let Some(e) = stream.take_error() {
            return Err(data_err(&log, e));
        }
        let stats = stream.stats().clone();
        (split_train_test(records, cfg.data.train_fraction).map_err(|e| ingest_err("data", e))?, stats)
    } else if let Some(test_log) = &cfg.data.test_log {
        let (train_all, mut stats) = read_line_labeled(&log, source, &rules)?;
        let (test, test_stats) = read_line_labeled(test_log, source, &rules)?;
        let train: Vec<LogRecord> = train_all.into_iter().filter(|r| r.label == Label::Normal).collect();
        dropped = stats.abnormal;
        stats.lines += test_stats.lines;
        stats.skipped_empty += test_stats.skipped_empty;
        stats.invalid_utf8 += test_stats.invalid_utf8;
        if train.is_empty() {
            return Err(CliError::Data(format!("data.log: {} has no normal lines", log.display())));
        }
        (crate::ingest::Split { train, test }, stats)
    } else {
        let (records, stats) = read_line_labeled(&log, source, &rules)?;
        (split_train_test(records, cfg.data.train_fraction).map_err(|e| ingest_err("data", e))?, stats)
    };

    echo_config(cfg, "preprocess", overwrite)?;
    let mut w = create(&outputs[0], overwrite)?;
    for r in &split.train {
        writeln!(w, "{}", r.normalized).map_err(|e| data_err(&outputs[0], e))?;
    }
    w.flush().map_err(|e| data_err(&outputs[0], e))?;
    let mut w = create(&outputs[1], overwrite)?;
    let mut body = String::from("line_no\tlabel\tgroup_id\tnormalized\n");
    for r in &split.test {
        body.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.line_no,
            r.label,
            r.group_id.as_deref().unwrap_or(""),
            r.normalized
        ));
    }
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(|e| data_err(&outputs[1], e))?;

    let manifest = Manifest {
        source: source.to_string(),
        rules_version: rules.version.clone(),
        lines_read: stats.lines,
        skipped_empty: stats.skipped_empty,
        invalid_utf8: stats.invalid_utf8,
        train_records: split.train.len(),
        test_records: split.test.len(),
        test_normal: split.test.iter().filter(|r| r.label == Label::Normal).count(),
        test_abnormal: split.test.iter().filter(|r| r.label == Label::Abnormal).count(),
        train_abnormal_dropped: dropped,
    };
    write_text(&outputs[2], &toml::to_string(&manifest).expect("manifest serializes"), overwrite)?;
    Ok(manifest)
}

fn read_lines(path: &Path) -> Result<Vec<String>, CliError> {
    let f = File::open(path).map_err(|e| data_err(path, e))?;
    BufReader::new(f)
        .lines()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| data_err(path, e))
}

fn tok_err(path: &Path, e: TokenizerError) -> CliError {
    match e {
        TokenizerError::VocabTooSmall(_) => CliError::Config(format!("tokenizer.vocab_size: {e}")),
        other => data_err(path, other),
    }
}

pub fn cmd_train_tokenizer(cfg: &RunConfig, overwrite: bool) -> Result<Vocab, CliError> {
    let corpus = cfg.out("train.txt");
    check_exists("train.txt (run preprocess)", &corpus)?;
    let vocab_path = cfg.out("vocab.txt");
    check_free(std::slice::from_ref(&vocab_path), overwrite)?;
    let lines = read_lines(&corpus)?;
    let vocab = train_wordpiece(lines.iter().map(String::as_str), cfg.tokenizer).map_err(|e| tok_err(&corpus, e))?;
    echo_config(cfg, "train-tokenizer", overwrite)?;
    write_text(&vocab_path, &vocab.to_text(), overwrite)?;
    Ok(vocab)
}

fn load_vocab(cfg: &RunConfig) -> Result<Vocab, CliError> {
    let path = cfg.out("vocab.txt");
    check_exists("vocab.txt (run train-tokenizer)", &path)?;
    Vocab::load(&path).map_err(|e| tok_err(&path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: u64,
    pub sequences: usize,
    pub truncated: usize,
    pub parameters: usize,
    pub final_loss: f64,
    pub holdout_loss: Option<f64>,
    pub holdout_accuracy: Option<f64>,
    /// Relative to the output directory.
    pub checkpoint: PathBuf,
}

pub fn cmd_train(cfg: &RunConfig, overwrite: bool) -> Result<TrainReport, CliError> {
    let corpus = cfg.out("train.txt");
    check_exists("train.txt (run preprocess)", &corpus)?;
    let vocab = load_vocab(cfg)?;
    let ckpt_path = cfg.out("model.ckpt");
    check_free(&[ckpt_path.clone(), cfg.out("loss.csv"), cfg.out("train_report.toml")], overwrite)?;
    let mut model_cfg = cfg.model;
    model_cfg.vocab_size = vocab.len();
    model_cfg.validate().map_err(|e| CliError::Config(format!("model: {e}")))?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.seed;
    train_cfg.validate()?;

    let lines = read_lines(&corpus)?;
    let mut truncated = 0;
    let seqs: Vec<_> = lines
        .iter()
        .map(|l| {
            let enc = encode(l, &vocab, model_cfg.max_seq_len);
            truncated += usize::from(enc.truncated);
            enc.sequence
        })
        .collect();
    echo_config(cfg, "train", overwrite)?;

    let outcome = train_with_sink(&seqs, &model_cfg, &train_cfg, |step, params| {
        if step == train_cfg.steps {
            return Ok(());
        }
        let path = cfg.out(&format!("model-step{step}.ckpt"));
        Checkpoint::new(model_cfg, &vocab, step, params.clone())
            .save(&path)
            .map_err(|e| TrainError::Sink(format!("{}: {e}", path.display())))
    })?;
    write_loss_csv(&cfg.out("loss.csv"), &outcome.loss_curve).map_err(|e| data_err(&cfg.out("loss.csv"), e))?;
    let report = TrainReport {
        steps: outcome.steps,
        sequences: seqs.len(),
        truncated,
        parameters: outcome.params.num_parameters(),
        final_loss: outcome.loss_curve.last().map(|x| x.1).unwrap_or(f64::NAN),
        holdout_loss: outcome.holdout.as_ref().map(|h| h.loss),
        holdout_accuracy: outcome.holdout.as_ref().map(|h| h.accuracy),
        checkpoint: PathBuf::from("model.ckpt"),
    };
    outcome
        .into_checkpoint(&vocab)
        .save(&ckpt_path)
        .map_err(|e| data_err(&ckpt_path, e))?;
    write_text(&cfg.out("train_report.toml"), &toml::to_string(&report).expect("report serializes"), overwrite)?;
    Ok(report)
}

/// Reads `test.tsv` back into records.
pub fn read_test_tsv(path: &Path) -> Result<Vec<LogRecord>, CliError> {
    let lines = read_lines(path)?;
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate().skip(1) {
        let bad = |what: &str| CliError::Data(format!("{}: row {}: {what}", path.display(), i + 1));
        let fields: Vec<&str> = line.splitn(4, '\t').collect();
        if fields.len() != 4 {
            return Err(bad("expected 4 tab-separated fields"));
        }
        out.push(LogRecord {
            raw: String::new(),
            normalized: fields[3].to_string(),
            source: LogSource::Generic,
            group_id: (!fields[2].is_empty()).then(|| fields[2].to_string()),
            label: fields[1].parse().map_err(|_| bad("bad label"))?,
            line_no: fields[0].parse().map_err(|_| bad("bad line number"))?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub units: usize,
    pub truncated: usize,
    pub skipped_empty: usize,
    pub forward_passes: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub cache_entries: usize,
}

pub fn cmd_score(cfg: &RunConfig, overwrite: bool) -> Result<ScoreReport, CliError> {
    let test_path = cfg.out("test.tsv");
    check_exists("test.tsv (run preprocess)", &test_path)?;
    let ckpt_path = cfg.out("model.ckpt");
    check_exists("model.ckpt (run train)", &ckpt_path)?;
    let vocab = load_vocab(cfg)?;
    let scores_path = cfg.out("scores.csv");
    check_free(&[scores_path.clone(), cfg.out("score_report.toml")], overwrite)?;

    let ckpt = Checkpoint::load(&ckpt_path, &vocab).map_err(|e| match e {
        CheckpointError::VocabMismatch => CliError::CheckpointMismatch(format!("{}: {e}", ckpt_path.display())),
        other => data_err(&ckpt_path, other),
    })?;
    let ctx = ScoringContext::new(ckpt, vocab, cfg.score.k, cfg.score.mask_mode)?;
    let cache = match &cfg.score.cache {
        Some(p) if p.exists() => {
            let mut c = ScoreCache::load(p, ctx.binding()).map_err(|e| match e {
                CacheError::CheckpointMismatch => CliError::CheckpointMismatch(format!("score.cache {}: {e}", p.display())),
                other => CliError::Data(format!("score.cache {}: {other}", p.display())),
            })?;
            if let Some(cap) = cfg.score.cache_capacity {
                c.set_capacity(cap);
            }
            c
        }
        _ => match cfg.score.cache_capacity {
            Some(cap) => ScoreCache::with_capacity(ctx.binding(), cap),
            None => ScoreCache::new(ctx.binding()),
        },
    };
    let records = read_test_tsv(&test_path)?;
    echo_config(cfg, "score", overwrite)?;
    let run = score_records(&ctx, Some(&cache), &records)?;
    let w = create(&scores_path, overwrite)?;
    write_scores_csv(w, &run.units)?;
    if let Some(p) = &cfg.score.cache {
        cache.save(p).map_err(|e| CliError::Data(format!("score.cache {}: {e}", p.display())))?;
    }
    let stats: CacheStats = cache.stats();
    let report = ScoreReport {
        units: run.units.len(),
        truncated: run.truncated,
        skipped_empty: run.skipped_empty,
        forward_passes: ctx.forward_passes(),
        cache_hits: stats.hits,
        cache_misses: stats.misses,
        cache_entries: stats.entries,
    };
    write_text(&cfg.out("score_report.toml"), &toml::to_string(&report).expect("report serializes"), overwrite)?;
    Ok(report)
}

fn eval_err(e: EvalError) -> CliError {
    CliError::Data(e.to_string())
}

pub fn cmd_eval(cfg: &RunConfig, scores: Option<&Path>, overwrite: bool) -> Result<EvalReport, CliError> {
    let scores_path = scores.map(Path::to_path_buf).unwrap_or_else(|| cfg.out("scores.csv"));
    check_exists("scores", &scores_path)?;
    let outputs = [cfg.out("report.toml"), cfg.out("roc_error.csv"), cfg.out("roc_prob.csv")];
    check_free(&outputs, overwrite)?;
    let f = File::open(&scores_path).map_err(|e| data_err(&scores_path, e))?;
    let units = read_scores_csv(f).map_err(|e| data_err(&scores_path, e))?;
    let report = EvalReport::from_units(&units).map_err(eval_err)?;
    echo_config(cfg, "eval", overwrite)?;
    write_text(&outputs[0], &report.to_text(), overwrite)?;
    for (path, kind) in [(&outputs[1], ScoreKind::Error), (&outputs[2], ScoreKind::Prob)] {
        let points = roc_curve(&orient(&units, kind).map_err(eval_err)?).map_err(eval_err)?;
        write_roc_csv(create(path, overwrite)?, &points).map_err(eval_err)?;
    }
    Ok(report)
}

/// Targets checked by the `e2e` summary.
pub const E2E_PROB_AUROC: f64 = 0.95;
pub const E2E_PROB_F1: f64 = 0.90;
pub const E2E_ERROR_AUROC: f64 = 0.85;

#[derive(Debug, Clone, PartialEq)]
pub struct E2eSummary {
    pub report: EvalReport,
    pub train: TrainReport,
    pub score: ScoreReport,
    pub seconds: f64,
}

impl E2eSummary {
    pub fn prob_auroc_ok(&self) -> bool {
        self.report.abnormal_prob.auroc >= E2E_PROB_AUROC
    }

    pub fn prob_f1_ok(&self) -> bool {
        self.report.abnormal_prob.best_f1 >= E2E_PROB_F1
    }

    pub fn error_auroc_ok(&self) -> bool {
        self.report.abnormal_error.auroc >= E2E_ERROR_AUROC
    }

    pub fn render(&self) -> String {
        let mark = |ok: bool| if ok { "PASS" } else { "FAIL" };
        let (p, e) = (&self.report.abnormal_prob, &self.report.abnormal_error);
        format!(
            "holdout accuracy {:.4}, {} forward passes, {:.1}s\n\
             {} abnormal_prob auroc {:.4} (target >= {E2E_PROB_AUROC})\n\
             {} abnormal_prob best_f1 {:.4} (target >= {E2E_PROB_F1})\n\
             {} abnormal_error auroc {:.4} (target >= {E2E_ERROR_AUROC})\n\
             abnormal_error best_f1 {:.4}\n",
            self.train.holdout_accuracy.unwrap_or(f64::NAN),
            self.score.forward_passes,
            self.seconds,
            mark(self.prob_auroc_ok()),
            p.auroc,
            mark(self.prob_f1_ok()),
            p.best_f1,
            mark(self.error_auroc_ok()),
            e.auroc,
            e.best_f1,
        )
    }
}

/// Runs synth, preprocess, train-tokenizer, train, score and eval in
/// `cfg.output_dir`. The data section is pointed at the generated logs.
pub fn cmd_e2e(cfg: &RunConfig, overwrite: bool) -> Result<E2eSummary, CliError> {
    let start = std::time::Instant::now();
    let mut cfg = cfg.clone();
    cfg.data.source = "synthetic".into();
    cfg.data.log = Some(cfg.out("train.log"));
    cfg.data.test_log = Some(cfg.out("test.log"));
    cfg.data.labels = None;
    cmd_synth(&cfg, overwrite)?;
    cmd_preprocess(&cfg, overwrite)?;
    cmd_train_tokenizer(&cfg, overwrite)?;
    let train = cmd_train(&cfg, overwrite)?;
    let score = cmd_score(&cfg, overwrite)?;
    let report = cmd_eval(&cfg, None, overwrite)?;
    Ok(E2eSummary {
        report,
        train,
        score,
        seconds: start.elapsed().as_secs_f64(),
    })
}
