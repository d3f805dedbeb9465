//! The `compbench` command line.

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::annotation::{self, AnnotationError, AnnotationService, Catalog};
use crate::backends::{BackendError, Backends, ReplayCache, ReplayMode};
use crate::geometry::GeometryConfig;
use crate::gors::{self, AdaptationScope, EngineReward, SelectionConfig, ThresholdAblation};
use crate::metrics::{evaluate_suite, EvalConfig, ImageIndex, MetricError, MetricKind, QuestionMode, ScoreStore};
use crate::report::{ReportError, ReportTable};
use crate::stats::{correlation_report, HumanScore};
use crate::suite::{
    load_prompt_file, validate_suite_with, Category, PromptRecord, Split, SuiteBuilder, SuiteError,
    SuiteExpectations, SuiteManifest,
};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const UNKNOWN_NAME: i32 = 4;
    pub const REPLAY_MISS: i32 = 5;
    pub const LIVE_UNAVAILABLE: i32 = 6;
    pub const IO: i32 = 7;
    pub const INVALID_SUITE: i32 = 8;
}

pub const CACHE_ENV: &str = "COMPBENCH_CACHE";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    UnknownName(String),
    #[error("{0}")]
    ReplayMiss(String),
    #[error("live backends are not built into this binary; use fake, record or replay")]
    LiveUnavailable,
    #[error("{0}")]
    Io(String),
    #[error("suite is invalid: {0}")]
    InvalidSuite(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::UnknownName(_) => exit::UNKNOWN_NAME,
            CliError::ReplayMiss(_) => exit::REPLAY_MISS,
            CliError::LiveUnavailable => exit::LIVE_UNAVAILABLE,
            CliError::Io(_) => exit::IO,
            CliError::InvalidSuite(_) => exit::INVALID_SUITE,
            CliError::Failed(_) => exit::FAILURE,
        }
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::ReplayMiss { .. } => CliError::ReplayMiss(e.to_string()),
            BackendError::Cache(m) => CliError::Io(format!("replay cache: {m}")),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::UnknownMetric(_) => CliError::UnknownName(e.to_string()),
            MetricError::Backend(b) => b.into(),
            MetricError::File { .. } => CliError::Io(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<SuiteError> for CliError {
    fn from(e: SuiteError) -> Self {
        match e {
            SuiteError::Config(m) => CliError::Config(m),
            SuiteError::Invalid(m) => CliError::InvalidSuite(m),
            other => CliError::Io(other.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::UnknownColumn(_) => CliError::UnknownName(e.to_string()),
            other => CliError::Io(other.to_string()),
        }
    }
}

impl From<AnnotationError> for CliError {
    fn from(e: AnnotationError) -> Self {
        match e {
            AnnotationError::Log(_) => CliError::Io(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<gors::GorsError> for CliError {
    fn from(e: gors::GorsError) -> Self {
        match e {
            gors::GorsError::Config(m) => CliError::Config(m),
            other => CliError::Failed(other.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendMode {
    /// Deterministic offline fakes.
    #[default]
    Fake,
    /// Answer only from the replay cache; a miss is an error.
    Replay,
    /// Answer with fakes and append every response to the replay cache.
    Record,
    Live,
}

#[derive(Debug, Parser)]
#[command(name = "compbench", version, about = "Compositional text-to-image evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Suite manifest (JSON).
    #[arg(long, global = true)]
    pub suite: Option<PathBuf>,
    /// Image index (JSON lines of prompt_id plus image reference).
    #[arg(long, global = true)]
    pub images: Option<PathBuf>,
    /// Comma-separated metric names.
    #[arg(long, global = true)]
    pub metrics: Option<String>,
    #[arg(long = "backend-mode", visible_alias = "backends", global = true, value_enum)]
    pub backend_mode: Option<BackendMode>,
    /// Replay cache file; defaults to $COMPBENCH_CACHE.
    #[arg(long, global = true)]
    pub replay_cache: Option<PathBuf>,
    /// Output file or run directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to every available core.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build or check a prompt suite.
    #[command(subcommand)]
    Suite(SuiteCommand),
    /// Score every image of a suite with the selected metrics.
    Evaluate(EvaluateArgs),
    /// Rank-correlate stored metric scores with human ratings.
    Correlate(CorrelateArgs),
    /// Reward-driven sample selection.
    #[command(subcommand)]
    Gors(GorsCommand),
    /// Human rating collection.
    #[command(subcommand)]
    Annotate(AnnotateCommand),
    /// Per-category, per-model tables.
    Report(ReportArgs),
}

#[derive(Debug, Subcommand)]
pub enum SuiteCommand {
    Generate(GenerateArgs),
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Replace one generated cell with prompts from a file: CATEGORY:SPLIT:PATH.
    /// A `.meta.jsonl` sidecar next to the file supplies structure.
    #[arg(long)]
    pub ingest: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, default_value_t = 1000)]
    pub per_category: usize,
    #[arg(long, default_value_t = 700)]
    pub train: usize,
    #[arg(long, default_value_t = 200)]
    pub seen: usize,
    #[arg(long, default_value_t = 100)]
    pub unseen: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Images generated per prompt when no image index is given.
    #[arg(long)]
    pub images_per_prompt: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// Score store, or a run directory containing scores.jsonl.
    #[arg(long)]
    pub scores: PathBuf,
    /// Human scores: an export response, a JSON array, or JSON lines.
    #[arg(long)]
    pub human: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum GorsCommand {
    Select(SelectArgs),
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Images per prompt.
    #[arg(long)]
    pub k: Option<usize>,
    /// Fixed threshold for a category: CATEGORY=VALUE. Others use the median reward.
    #[arg(long)]
    pub threshold: Vec<String>,
    #[arg(long, value_enum)]
    pub ablation: Option<AblationArg>,
    #[arg(long, value_enum)]
    pub adaptation: Option<AdaptationArg>,
    /// Restrict to these categories (comma-separated).
    #[arg(long)]
    pub categories: Option<String>,
    /// Which split the prompts come from.
    #[arg(long, default_value = "train")]
    pub split: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AblationArg {
    Full,
    Half,
    Zero,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AdaptationArg {
    Both,
    TextEncoder,
    Unet,
}

#[derive(Debug, Subcommand)]
pub enum AnnotateCommand {
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Image index per model: NAME=PATH. `--images` alone registers model `default`.
    #[arg(long)]
    pub model: Vec<String>,
    /// Event log; defaults to annotations.jsonl in --out or the working directory.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 600)]
    pub lease_secs: u64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Published numbers to include as reference rows.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    /// Evaluation run to include: NAME=RUN_DIR.
    #[arg(long)]
    pub run: Vec<String>,
    #[arg(long)]
    pub json: bool,
}

/// Contents of `--config`. Every field is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub suite: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub metrics: Option<Vec<String>>,
    pub backend_mode: BackendMode,
    pub replay_cache: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub workers: Option<usize>,
    pub images_per_prompt: usize,
    pub geometry: GeometryConfig,
    pub question_mode: QuestionMode,
    pub selection: SelectionConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            suite: None,
            images: None,
            metrics: None,
            backend_mode: BackendMode::Fake,
            replay_cache: None,
            out: None,
            seed: 0,
            workers: None,
            images_per_prompt: 10,
            geometry: GeometryConfig::default(),
            question_mode: QuestionMode::default(),
            selection: SelectionConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Config file, then flags, then the cache environment variable.
    pub fn resolve(common: &CommonArgs, env_cache: Option<PathBuf>) -> CliResult<Self> {
        let mut cfg = match &common.config {
            Some(p) => Self::read(p)?,
            None => Self::default(),
        };
        if let Some(v) = &common.suite {
            cfg.suite = Some(v.clone());
        }
        if let Some(v) = &common.images {
            cfg.images = Some(v.clone());
        }
        if let Some(v) = &common.metrics {
            cfg.metrics = Some(v.split(',').map(|s| s.trim().to_owned()).filter(|s| !s.is_empty()).collect());
        }
        if let Some(v) = common.backend_mode {
            cfg.backend_mode = v;
        }
        if let Some(v) = &common.replay_cache {
            cfg.replay_cache = Some(v.clone());
        }
        if cfg.replay_cache.is_none() {
            cfg.replay_cache = env_cache;
        }
        if let Some(v) = &common.out {
            cfg.out = Some(v.clone());
        }
        if let Some(v) = common.seed {
            cfg.seed = v;
        }
        if let Some(v) = common.workers {
            cfg.workers = Some(v);
        }
        Ok(cfg)
    }

    pub fn metric_kinds(&self) -> CliResult<Vec<MetricKind>> {
        match &self.metrics {
            None => Ok(MetricKind::ALL.to_vec()),
            Some(names) => Ok(MetricKind::parse_list(&names.join(","))?),
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            geometry: self.geometry,
            question_mode: self.question_mode,
            workers: self.workers,
            ..EvalConfig::default()
        }
    }

    pub fn records(&self) -> CliResult<Vec<PromptRecord>> {
        let path = self.suite.as_ref().ok_or_else(|| CliError::Config("no suite given (--suite)".into()))?;
        Ok(SuiteManifest::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?.records)
    }

    pub fn backends(&self) -> CliResult<Backends> {
        let cache = || -> CliResult<Arc<ReplayCache>> {
            let path = self
                .replay_cache
                .as_ref()
                .ok_or_else(|| CliError::Config(format!("replay and record modes need --replay-cache or ${CACHE_ENV}")))?;
            Ok(Arc::new(ReplayCache::open(path)?))
        };
        match self.backend_mode {
            BackendMode::Fake => Ok(Backends::fake(self.seed).with_lanes()),
            BackendMode::Record => Ok(Backends::fake(self.seed).with_lanes().replayed(cache()?, ReplayMode::Record)),
            BackendMode::Replay => {
                let cache = cache()?;
                Ok(Backends::strict_replay(&cache.descriptors(), cache))
            }
            BackendMode::Live => Err(CliError::LiveUnavailable),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

fn parse_category(s: &str) -> CliResult<Category> {
    s.parse().map_err(|_| CliError::UnknownName(format!("unknown category `{s}`")))
}

fn split_pair<'a>(s: &'a str, sep: char, what: &str) -> CliResult<(&'a str, &'a str)> {
    s.split_once(sep).ok_or_else(|| CliError::Config(format!("expected {what}, got `{s}`")))
}

fn read_index(path: &Path) -> CliResult<ImageIndex> {
    ImageIndex::read(path).map_err(CliError::from)
}

/// Parses arguments and runs one command, writing human-readable output to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Config(e.to_string()))?;
    let cfg = RunConfig::resolve(&cli.common, std::env::var_os(CACHE_ENV).map(PathBuf::from))?;
    dispatch(&cli.command, &cfg, out)
}

pub fn dispatch(command: &Command, cfg: &RunConfig, out: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::Suite(SuiteCommand::Generate(a)) => suite_generate(a, cfg, out),
        Command::Suite(SuiteCommand::Validate(a)) => suite_validate(a, cfg, out),
        Command::Evaluate(a) => evaluate(a, cfg, out),
        Command::Correlate(a) => correlate(a, cfg, out),
        Command::Gors(GorsCommand::Select(a)) => gors_select(a, cfg, out),
        Command::Annotate(AnnotateCommand::Serve(a)) => annotate_serve(a, cfg, out),
        Command::Report(a) => report(a, out),
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    let result = RunConfig::resolve(&cli.common, std::env::var_os(CACHE_ENV).map(PathBuf::from))
        .and_then(|cfg| dispatch(&cli.command, &cfg, &mut std::io::stdout().lock()));
    match result {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("compbench: {e}");
            e.exit_code()
        }
    }
}

fn emit(out: &mut dyn Write, text: impl AsRef<str>) -> CliResult<()> {
    out.write_all(text.as_ref().as_bytes()).map_err(|e| CliError::Io(format!("stdout: {e}")))
}

fn suite_generate(args: &GenerateArgs, cfg: &RunConfig, out: &mut dyn Write) -> CliResult<()> {
    let mut manifest = SuiteBuilder::with_seed(cfg.seed).build()?;
    for spec in &args.ingest {
        let (cell, path) = split_pair(spec, ':', "CATEGORY:SPLIT:PATH")?;
        let (category, split) = split_pair(cell, ':', "CATEGORY:SPLIT:PATH")?;
        let category = parse_category(category)?;
        let split: Split = split.parse().map_err(|_| CliError::UnknownName(format!("unknown split `{split}`")))?;
        let ingested = load_prompt_file(Path::new(path), category, split)?;
        let mut records: Vec<PromptRecord> =
            manifest.records.into_iter().filter(|r| !(r.category == category && r.split == split)).collect();
        records.extend(ingested);
        manifest = SuiteManifest::new(records);
    }
    let path = cfg.out.clone().unwrap_or_else(|| PathBuf::from("suite.json"));
    manifest.write(&path).map_err(|e| io_err(&path, e))?;
    emit(out, format!("wrote {} prompts to {}\n", manifest.records.len(), path.display()))?;
    for (category, n) in &manifest.counts.per_category {
        emit(out, format!("  {category:<12} {n}\n"))?;
    }
    Ok(())
}

fn suite_validate(args: &ValidateArgs, cfg: &RunConfig, out: &mut dyn Write) -> CliResult<()> {
    let path = cfg.suite.as_ref().ok_or_else(|| CliError::Config("no suite given (--suite)".into()))?;
    let manifest = SuiteManifest::read(path).map_err(|e| io_err(path, e))?;
    let expect = SuiteExpectations {
        per_category: args.per_category,
        train: args.train,
        seen: args.seen,
        unseen: args.unseen,
    };
    let report = validate_suite_with(&manifest, expect);
    emit(out, format!("{:<12} {:>6} {:>6} {:>6} {:>6} {:>7}\n", "category", "total", "train", "test", "seen", "unseen"))?;
    for (c, r) in &report.categories {
        emit(out, format!("{c:<12} {:>6} {:>6} {:>6} {:>6} {:>7}\n", r.total, r.train, r.test, r.seen, r.unseen))?;
    }
    if report.structure_missing > 0 {
        emit(out, format!("{} prompts without structure\n", report.structure_missing))?;
    }
    if report.ok {
        emit(out, "ok\n")?;
        return Ok(());
    }
    for p in report.problems.iter().take(20) {
        emit(out, format!("problem: {p}\n"))?;
    }
    Err(CliError::InvalidSuite(format!("{} problems", report.problems.len())))
}

fn run_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| {
        PathBuf::from("runs").join(chrono::Utc::now().format("run-%Y%m%d-%H%M%S").to_string())
    })
}

fn evaluate(args: &EvaluateArgs, cfg: &RunConfig, out: &mut dyn Write) -> CliResult<()> {
    let metrics = cfg.metric_kinds()?;
    let records = cfg.records()?;
    let backends = cfg.backends()?;
    let dir = run_dir(cfg);
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;

    let k = args.images_per_prompt.unwrap_or(cfg.images_per_prompt);
    let index = match &cfg.images {
        Some(p) => read_index(p)?,
        None => ImageIndex::generate(&records, backends.generator.as_ref(), cfg.seed, k)?,
    };
    let index_path = dir.join("images.jsonl");
    if cfg.images.as_deref() != Some(index_path.as_path()) {
        index.write(&index_path)?;
    }

    let mut frozen = cfg.clone();
    frozen.images = Some(index_path);
    frozen.out = Some(dir.clone());
    frozen.images_per_prompt = k;
    frozen.metrics = Some(metrics.iter().map(|m| m.as_str().to_owned()).collect());
    write_file(&dir.join("config.json"), &to_json(&frozen))?;
    write_file(&dir.join("backends.json"), &to_json(&backends.descriptors()))?;

    let mut store = ScoreStore::open(&dir.join("scores.jsonl"))?;
    let report = evaluate_suite(&records, &index, &metrics, &backends, &cfg.eval_config(), &mut store)?;
    let table = report.summary.to_table();
    write_file(&dir.join("summary.json"), &to_json(&report.summary))?;
    write_file(&dir.join("summary.txt"), &table)?;
    write_file(&dir.join("report.json"), &to_json(&report))?;

    emit(
        out,
        format!(
            "{} new scores, {} reused, {} skipped, {} prompts without images\nrun directory: {}\n\n{table}",
            report.new_scores,
            report.reused,
            report.skipped.len(),
            report.missing_images.len(),
            dir.display()
        ),
    )
}

fn read_human(path: &Path) -> CliResult<Vec<HumanScore>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    if let Ok(value) = serde_json::from_str::<Value>(&text) {
        let list = match value {
            Value::Object(mut m) => m.remove("human_scores").unwrap_or(Value::Null),
            other => other,
        };
        return serde_json::from_value(list).map_err(|e| io_err(path, e));
    }
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| io_err(path, format!("line {}: {e}", i + 1))))
        .collect()
}

fn correlate(args: &CorrelateArgs, cfg: &RunConfig, out: &mut dyn Write) -> CliResult<()> {
    let records = cfg.records()?;
    let scores_path = if args.scores.is_dir() { args.scores.join("scores.jsonl") } else { args.scores.clone() };
    if !scores_path.exists() {
        return Err(io_err(&scores_path, "not found"));
    }
    let store = ScoreStore::open(&scores_path)?;
    let mut scores: Vec<_> = store.scores().cloned().collect();
    if let Some(names) = &cfg.metrics {
        let wanted = MetricKind::parse_list(&names.join(","))?;
        scores.retain(|s| wanted.contains(&s.metric));
    }
    let human = read_human(&args.human)?;
    let report = correlation_report(&scores, &human, &records);
    if let Some(path) = &cfg.out {
        write_file(path, &to_json(&report))?;
    }
    emit(out, format!("variant: {}\n{}", report.variant, report.to_table()))?;
    for (m, c, reason) in &report.undefined {
        emit(out, format!("undefined {m}/{c}: {reason}\n"))?;
    }
    Ok(())
}

fn gors_select(args: &SelectArgs, cfg: &RunConfig, out: &mut dyn Write) -> CliResult<()> {
    let mut sel = cfg.selection.clone();
    sel.seed = cfg.seed;
    if let Some(k) = args.k {
        sel.k_per_prompt = k;
    }
    for t in &args.threshold {
        let (c, v) = split_pair(t, '=', "CATEGORY=VALUE")?;
        let v: f64 = v.parse().map_err(|_| CliError::Config(format!("threshold `{v}` is not a number")))?;
        sel.thresholds.insert(parse_category(c)?, v);
    }
    if let Some(a) = args.ablation {
        sel.ablation = match a {
            AblationArg::Full => ThresholdAblation::Full,
            AblationArg::Half => ThresholdAblation::Half,
            AblationArg::Zero => ThresholdAblation::Zero,
        };
    }
    if let Some(a) = args.adaptation {
        sel.adaptation = match a {
            AdaptationArg::Both => AdaptationScope::Both,
            AdaptationArg::TextEncoder => AdaptationScope::TextEncoderOnly,
            AdaptationArg::Unet => AdaptationScope::UnetOnly,
        };
    }
    sel.check()?;
    let split: Split = args.split.parse().map_err(|_| CliError::UnknownName(format!("unknown split `{}`", args.split)))?;
    let categories = match &args.categories {
        Some(list) => list.split(',').map(|c| parse_category(c.trim())).collect::<CliResult<Vec<_>>>()?,
        None => Category::ALL.to_vec(),
    };
    let records: Vec<PromptRecord> = cfg
        .records()?
        .into_iter()
        .filter(|r| r.split == split && categories.contains(&r.category))
        .collect();

    let backends = cfg.backends()?;
    let eval = cfg.eval_config();
    let reward = EngineReward { backends: &backends, config: &eval };
    let generation = gors::generate_and_score(&records, backends.generator.as_ref(), &reward, &sel)?;
    if cfg.backend_mode == BackendMode::Replay {
        if let Some(f) = generation.failures.first() {
            return Err(CliError::ReplayMiss(format!("{}: {}", f.prompt_id, f.reason)));
        }
    }
    let selection = gors::select(&generation.samples, &sel);
    let manifest = gors::build_manifest(&selection, &sel)?;

    let dir = run_dir(cfg);
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let mut frozen = cfg.clone();
    frozen.selection = sel;
    frozen.out = Some(dir.clone());
    write_file(&dir.join("config.json"), &to_json(&frozen))?;
    write_file(&dir.join("backends.json"), &to_json(&backends.descriptors()))?;
    write_file(&dir.join("manifest.json"), &manifest.to_json()?)?;
    let samples: String =
        generation.samples.iter().map(|s| serde_json::to_string(s).expect("serializable") + "\n").collect();
    write_file(&dir.join("samples.jsonl"), &samples)?;

    emit(
        out,
        format!(
            "selected {} of {} samples ({} prompts failed)\n",
            selection.samples.len(),
            selection.considered,
            generation.failures.len()
        ),
    )?;
    for (c, t) in &selection.thresholds {
        let kept = selection.samples.iter().filter(|s| s.category == *c).count();
        emit(out, format!("  {c:<12} threshold {t:.4}  kept {kept}\n"))?;
    }
    for f in &generation.failures {
        emit(out, format!("  failed {}: {}\n", f.prompt_id, f.reason))?;
    }
    emit(out, format!("run directory: {}\n", dir.display()))
}

fn annotate_serve(args: &ServeArgs, cfg: &RunConfig, out: &mut dyn Write) -> CliResult<()> {
    let mut catalog = Catalog::new(cfg.records()?);
    for spec in &args.model {
        let (name, path) = split_pair(spec, '=', "NAME=PATH")?;
        catalog = catalog.with_model(name, read_index(Path::new(path))?);
    }
    if args.model.is_empty() {
        let path = cfg.images.as_ref().ok_or_else(|| CliError::Config("no image index (--images or --model)".into()))?;
        catalog = catalog.with_model("default", read_index(path)?);
    }
    let log = args.log.clone().unwrap_or_else(|| cfg.out.clone().unwrap_or_default().join("annotations.jsonl"));
    if let Some(parent) = log.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let service = AnnotationService::open(catalog, &log)?.with_lease(Duration::from_secs(args.lease_secs));
    emit(out, format!("listening on http://{} (log {})\n", args.addr, log.display()))?;
    out.flush().ok();
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
    runtime
        .block_on(annotation::serve(Arc::new(service), args.addr))
        .map_err(|e| CliError::Io(format!("{}: {e}", args.addr)))
}

fn report(args: &ReportArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut table = match &args.fixture {
        Some(p) => ReportTable::read(p)?,
        None => ReportTable::default(),
    };
    for spec in &args.run {
        let (name, dir) = split_pair(spec, '=', "NAME=RUN_DIR")?;
        let path = Path::new(dir).join("summary.json");
        let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let summary = serde_json::from_str(&text).map_err(|e| io_err(&path, e))?;
        table = table.merge(ReportTable::from_summaries([(name, &summary)]))?;
    }
    if table.cells.is_empty() {
        return Err(CliError::Config("nothing to report (--fixture or --run)".into()));
    }
    if args.json {
        emit(out, to_json(&serde_json::json!({ "cells": table.cells, "rankings": table.rankings() })) + "\n")
    } else {
        emit(out, table.render())
    }
}
