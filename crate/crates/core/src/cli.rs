//! Command-line front-end: `ablate`, `compress`, `report`, `triplet` and
//! `score`, each writing a [`RunManifest`] next to its artifacts.
//!
//! Exit codes are a stable scripting contract: see [`exit`].

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::ablation::{
    apply_ablation, build_metadata_definition, shuffle_definition, AblatedDefinition, AblationKind, AblationSpec,
    VerbalizerIndex, NO_DEFINITION,
};
use crate::annotations::{load_annotations, AnnotationError, AnnotationSet};
use crate::corpus::{load_task_dir, split_examples, CorpusError, PromptTemplate, Strictness, Task, TaskKind};
use crate::digest::{derive_seed, file_sha256, sha256_hex};
use crate::metrics::{aggregate, ScoreReport, ScoreRow};
use crate::par::{self, Execution};
use crate::parse::{load_parse_file, ParseError, ParseTree};
use crate::scorer::{BackendKind, Scorer, ScorerConfig, ScorerError};
use crate::stdc::{
    category_retention, compress, evaluate_holdout, BaselineMode, CompressionResult, CoverageRule, HoldoutReport,
    Retention, StdcConfig, StdcError,
};
use crate::triplet::{build_triplet, meta_tuning_instances_with, render_triplet, OutputTargets, TripletRow};

pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const IO: i32 = 1;
    pub const VALIDATION: i32 = 2;
    pub const BACKEND: i32 = 3;
    pub const USAGE: i32 = 64;
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    /// Unreadable or malformed input content.
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Io { .. } | CliError::Input(_) => exit::IO,
            CliError::Validation(_) => exit::VALIDATION,
            CliError::Backend(_) => exit::BACKEND,
        }
    }

    fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io { .. } => CliError::Input(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<AnnotationError> for CliError {
    fn from(e: AnnotationError) -> Self {
        match e {
            AnnotationError::Io(_) => CliError::Input(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<ScorerError> for CliError {
    fn from(e: ScorerError) -> Self {
        match e {
            ScorerError::Backend { .. } | ScorerError::Timeout(_) => CliError::Backend(e.to_string()),
            ScorerError::Io(_) | ScorerError::StoreCorruption(_) => CliError::Input(e.to_string()),
            ScorerError::Config(_) => CliError::Usage(e.to_string()),
            ScorerError::Corpus(_) | ScorerError::EmptyExampleSet => CliError::Validation(e.to_string()),
        }
    }
}

impl From<StdcError> for CliError {
    fn from(e: StdcError) -> Self {
        match e {
            StdcError::Scorer { source, .. } => source.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "defkit", version, about = "Task-definition ablation, compression, scoring and triplet tooling")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Worker threads for per-task parallelism (default: logical cores; 1 runs sequentially).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Seed for splits, shuffles and backend sampling.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Warn about unknown keys in task files instead of rejecting them.
    #[arg(long, global = true)]
    pub lenient: bool,
    /// Print tables as CSV.
    #[arg(long, global = true)]
    pub csv: bool,
}

impl GlobalArgs {
    fn strictness(&self) -> Strictness {
        if self.lenient {
            Strictness::Lenient
        } else {
            Strictness::Strict
        }
    }

    fn execution(&self) -> Execution {
        if self.jobs == Some(1) {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build annotated-ablation variants of every definition.
    Ablate(AblateArgs),
    /// Compress definitions by greedy constituent removal.
    Compress(CompressArgs),
    /// Aggregate score files into All / Cls. / Gen. tables.
    Report(ReportArgs),
    /// Emit triplet definitions and meta-tuning instances.
    Triplet(TripletArgs),
    /// Score definitions against a backend.
    Score(ScoreArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendChoice {
    Remote,
    Constant,
    Planted,
    Keyword,
}

#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    /// Scoring backend.
    #[arg(long, value_enum)]
    pub backend: BackendChoice,
    /// Generation endpoint for the remote backend.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Score returned by the constant backend.
    #[arg(long, default_value_t = 0.0)]
    pub constant_value: f64,
    /// Phrase the planted backend rewards.
    #[arg(long)]
    pub phrase: Option<String>,
    /// Generation length cap forwarded to the backend.
    #[arg(long, default_value_t = 128)]
    pub max_new_tokens: usize,
    /// Sampling temperature forwarded to the backend.
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
    /// Concurrent requests to the remote backend.
    #[arg(long, default_value_t = 4)]
    pub max_in_flight: usize,
    /// Per-request timeout for the remote backend.
    #[arg(long, default_value_t = 60.0)]
    pub timeout_secs: f64,
    /// Prompt template file (default: the benchmark template).
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Append-only JSONL score store shared across runs.
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

impl BackendArgs {
    fn scorer_config(&self, seed: u64) -> Result<ScorerConfig, CliError> {
        let template = match &self.template {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::io(p.display().to_string(), e))?;
                PromptTemplate::new(text).map_err(|e| CliError::Usage(e.to_string()))?
            }
            None => PromptTemplate::default(),
        };
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(CliError::Usage("--timeout-secs must be positive".into()));
        }
        Ok(ScorerConfig {
            backend: match self.backend {
                BackendChoice::Remote => BackendKind::Remote,
                BackendChoice::Constant => BackendKind::Constant,
                BackendChoice::Planted => BackendKind::PlantedPhrase,
                BackendChoice::Keyword => BackendKind::KeywordLabel,
            },
            endpoint_url: self.endpoint.clone(),
            max_new_tokens: self.max_new_tokens,
            temperature: self.temperature,
            seed: Some(seed),
            request_timeout: Duration::from_secs_f64(self.timeout_secs),
            max_in_flight: self.max_in_flight,
            constant_value: self.constant_value,
            planted_phrase: self.phrase.clone(),
            template,
            cache_path: self.cache.clone(),
            ..ScorerConfig::default()
        })
    }

    fn manifest_config(&self) -> Value {
        json!({
            "backend": format!("{:?}", self.backend).to_lowercase(),
            "endpoint": self.endpoint,
            "constant_value": self.constant_value,
            "phrase": self.phrase,
            "max_new_tokens": self.max_new_tokens,
            "temperature": self.temperature,
            "max_in_flight": self.max_in_flight,
            "timeout_secs": self.timeout_secs,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    /// Directory of task JSON files.
    #[arg(long)]
    pub tasks: PathBuf,
    /// Annotation JSONL, one record per task and annotator.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Ablation name, comma-separated names, or "all".
    #[arg(long, default_value = "all")]
    pub spec: String,
    /// Use this annotator's spans (default: first record per task).
    #[arg(long)]
    pub annotator: Option<String>,
    /// Also emit the shuffled, metadata and no-definition baselines.
    #[arg(long)]
    pub baselines: bool,
    /// Output directory; must be empty or absent unless --force.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite a non-empty output location.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeChoice {
    Current,
    Paper,
}

#[derive(Debug, Clone, Args)]
pub struct CompressArgs {
    /// Directory of task JSON files.
    #[arg(long)]
    pub tasks: PathBuf,
    /// One bracketed tree per line, aligned to the task list.
    #[arg(long)]
    pub parses: PathBuf,
    /// Task ids, one per line, giving the parse-file order (default: sorted ids).
    #[arg(long)]
    pub task_list: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Instances in the fit set that drives removal decisions.
    #[arg(long, default_value_t = 4)]
    pub fit_n: usize,
    /// Disjoint held-out instances for before/after evaluation.
    #[arg(long, default_value_t = 16)]
    pub holdout_n: usize,
    /// Tolerance: a removal is accepted if it loses at most this much.
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
    /// Baseline the candidate is compared against.
    #[arg(long, value_enum, default_value_t = ModeChoice::Current)]
    pub mode: ModeChoice,
    /// Accept a fully deleted definition instead of failing.
    #[arg(long)]
    pub allow_empty: bool,
    /// Count ties as holdout improvements.
    #[arg(long)]
    pub non_strict_coverage: bool,
    /// Annotations for per-category retention.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Output directory; must be empty or absent unless --force.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite a non-empty output location.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Score JSONL files; each file is a condition unless rows name one.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Task directory, for rows that omit `kind` and for verbalizer grouping.
    #[arg(long)]
    pub tasks: Option<PathBuf>,
    /// Training tasks; enables seen / unseen verbalizer grouping.
    #[arg(long)]
    pub train_tasks: Option<PathBuf>,
    /// Condition deltas are taken against (default: the first one).
    #[arg(long)]
    pub baseline: Option<String>,
    /// Write artifacts here instead of printing only.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite a non-empty output location.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TripletArgs {
    /// Directory of task JSON files.
    #[arg(long)]
    pub tasks: PathBuf,
    /// Annotation JSONL, one record per task and annotator.
    #[arg(long)]
    pub annotations: PathBuf,
    /// One bracketed tree per line, aligned to the task list.
    #[arg(long)]
    pub parses: PathBuf,
    /// Task ids, one per line, giving the parse-file order (default: sorted ids).
    #[arg(long)]
    pub task_list: Option<PathBuf>,
    /// Use this annotator's spans (default: first record per task).
    #[arg(long)]
    pub annotator: Option<String>,
    /// One meta-tuning instance per output entry instead of a joined target.
    #[arg(long)]
    pub split_output: bool,
    /// Output directory; must be empty or absent unless --force.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite a non-empty output location.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantChoice {
    Full,
    Shuffled,
    Metadata,
    NoDef,
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    /// Directory of task JSON files.
    #[arg(long)]
    pub tasks: PathBuf,
    /// Restrict to these task ids (repeatable).
    #[arg(long = "task")]
    pub task_ids: Vec<String>,
    /// Score this literal definition for every selected task.
    #[arg(long, conflicts_with_all = ["definitions", "variant"])]
    pub definition: Option<String>,
    /// JSONL of `{"task_id","spec","text"}` rows, as written by `ablate`.
    #[arg(long, conflicts_with = "variant")]
    pub definitions: Option<PathBuf>,
    /// Built-in definition variant.
    #[arg(long, value_enum)]
    pub variant: Option<VariantChoice>,
    /// Condition name recorded on each row.
    #[arg(long)]
    pub condition: Option<String>,
    /// Score a seeded sample of this many instances (default: all).
    #[arg(long)]
    pub n: Option<usize>,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Write artifacts here instead of printing only.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite a non-empty output location.
    #[arg(long)]
    pub force: bool,
}

/// Provenance record written next to every artifact set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command_line: String,
    pub config_digest: String,
    pub config: Value,
    pub input_digests: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    pub version: String,
    pub timestamp: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_calls: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_hits: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree_form: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub outputs: Vec<String>,
    pub failures: Vec<String>,
}

impl RunManifest {
    pub fn new(command_line: &[String], config: Value, seeds: Vec<u64>) -> Self {
        RunManifest {
            command_line: shell_join(command_line),
            config_digest: sha256_hex(config.to_string()),
            config,
            input_digests: BTreeMap::new(),
            seeds,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            backend_id: None,
            backend_calls: None,
            cache_hits: None,
            tree_form: None,
            mode: None,
            epsilon: None,
            outputs: Vec::new(),
            failures: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), CliError> {
        let digest = file_sha256(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
        self.input_digests.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Digests every regular file directly inside `dir`.
    pub fn add_input_dir(&mut self, dir: &Path) -> Result<(), CliError> {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| CliError::io(dir.display().to_string(), e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        files.iter().try_for_each(|p| self.add_input(p))
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        write_file(path, &text)
    }

    pub fn load(path: &Path) -> Result<RunManifest, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }

    /// Inputs whose current digest differs from the recorded one (or that
    /// no longer exist). A non-empty result marks the run stale.
    pub fn stale_inputs(&self) -> Vec<String> {
        self.input_digests
            .iter()
            .filter(|(path, digest)| file_sha256(Path::new(path)).ok().as_ref() != Some(*digest))
            .map(|(path, _)| path.clone())
            .collect()
    }
}

fn shell_join(args: &[String]) -> String {
    args.iter()
        .map(|a| {
            if !a.is_empty() && a.chars().all(|c| c.is_ascii_alphanumeric() || "-_./=:,@%+".contains(c)) {
                a.clone()
            } else {
                format!("'{}'", a.replace('\'', r"'\''"))
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Plain-text / CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>) -> Self {
        Table {
            headers: headers.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<S: Into<String>>(&mut self, row: impl IntoIterator<Item = S>) {
        self.rows.push(row.into_iter().map(Into::into).collect());
    }

    /// Columns padded to width; the first column left-aligned, the rest right-aligned.
    pub fn to_text(&self) -> String {
        let width = |i: usize| {
            std::iter::once(&self.headers)
                .chain(&self.rows)
                .filter_map(|r| r.get(i))
                .map(|c| c.chars().count())
                .max()
                .unwrap_or(0)
        };
        let widths: Vec<usize> = (0..self.headers.len()).map(width).collect();
        let line = |row: &Vec<String>| {
            row.iter()
                .enumerate()
                .map(|(i, c)| {
                    if i == 0 {
                        format!("{c:<w$}", w = widths[i])
                    } else {
                        format!("{c:>w$}", w = widths[i])
                    }
                })
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = line(&self.headers) + "\n";
        out += &widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  ");
        out.push('\n');
        for r in &self.rows {
            out += &line(r);
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    pub fn render(&self, csv: bool) -> String {
        if csv {
            self.to_csv()
        } else {
            self.to_text()
        }
    }

    /// Writes `<stem>.txt` and `<stem>.csv` into `dir`.
    fn write_both(&self, dir: &Path, stem: &str) -> Result<Vec<String>, CliError> {
        let txt = format!("{stem}.txt");
        let csv = format!("{stem}.csv");
        write_file(&dir.join(&txt), &self.to_text())?;
        write_file(&dir.join(&csv), &self.to_csv())?;
        Ok(vec![txt, csv])
    }
}

fn fmt_score(x: f64) -> String {
    format!("{x:.4}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), fmt_score)
}

fn fmt_delta(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |d| format!("{d:+.4}"))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path.display().to_string(), e))
}

fn jsonl<T: Serialize>(rows: impl IntoIterator<Item = T>) -> String {
    rows.into_iter()
        .map(|r| serde_json::to_string(&r).expect("row serializes") + "\n")
        .collect()
}

/// Creates `dir`, refusing to reuse a non-empty one unless `force`.
fn prepare_out_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    if let Ok(mut entries) = fs::read_dir(dir) {
        if entries.next().is_some() && !force {
            return Err(CliError::Usage(format!(
                "output directory {} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display().to_string(), e))
}

fn prepare_out_file(path: &Path, force: bool) -> Result<(), CliError> {
    if path.exists() && !force {
        return Err(CliError::Usage(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => {
            fs::create_dir_all(p).map_err(|e| CliError::io(p.display().to_string(), e))
        }
        _ => Ok(()),
    }
}

fn sidecar_manifest(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

fn annotation_index(path: &Path, annotator: Option<&str>) -> Result<HashMap<String, AnnotationSet>, CliError> {
    let mut index = HashMap::new();
    for set in load_annotations(path)? {
        if annotator.is_some_and(|a| a != set.annotator) {
            continue;
        }
        index.entry(set.task_id.clone()).or_insert(set);
    }
    Ok(index)
}

fn read_task_list(path: &Path) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// A task paired with the tree parsed from its line.
type TaskTree = (Task, Result<ParseTree, ParseError>);

/// Tasks in parse-file order, each with the tree on its line.
fn tasks_with_trees(
    tasks: Vec<Task>,
    parses: &Path,
    task_list: Option<&Path>,
) -> Result<Vec<TaskTree>, CliError> {
    let trees = load_parse_file(parses).map_err(|e| CliError::io(parses.display().to_string(), e))?;
    let order: Vec<Task> = match task_list {
        Some(p) => {
            let mut by_id: HashMap<String, Task> = tasks.into_iter().map(|t| (t.id.clone(), t)).collect();
            read_task_list(p)?
                .into_iter()
                .map(|id| {
                    by_id
                        .remove(&id)
                        .ok_or_else(|| CliError::Validation(format!("task list names unknown or repeated task `{id}`")))
                })
                .collect::<Result<_, _>>()?
        }
        None => tasks,
    };
    if trees.len() != order.len() {
        return Err(CliError::Validation(format!(
            "{} has {} trees but {} tasks are listed",
            parses.display(),
            trees.len(),
            order.len()
        )));
    }
    Ok(order.into_iter().zip(trees).collect())
}

fn tree_form<'a>(trees: impl IntoIterator<Item = &'a ParseTree>) -> String {
    let (mut joined, mut single) = (0, 0);
    for t in trees {
        if t.has_synthetic_root() {
            joined += 1;
        } else {
            single += 1;
        }
    }
    match (joined, single) {
        (0, _) => "single_tree",
        (_, 0) => "joined_sentences",
        _ => "mixed",
    }
    .to_string()
}

/// Parses `args` (program name first) and runs the command. Returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => exit::SUCCESS,
                _ => exit::USAGE,
            };
        }
    };
    let command_line: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(&cli, &command_line) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command; `Ok` carries 0, or 2 when some tasks failed validation.
pub fn run(cli: &Cli, command_line: &[String]) -> Result<i32, CliError> {
    par::configure_jobs(cli.global.jobs.unwrap_or(0));
    match &cli.command {
        Command::Ablate(a) => cmd_ablate(&cli.global, a, command_line),
        Command::Compress(a) => cmd_compress(&cli.global, a, command_line),
        Command::Report(a) => cmd_report(&cli.global, a, command_line),
        Command::Triplet(a) => cmd_triplet(&cli.global, a, command_line),
        Command::Score(a) => cmd_score(&cli.global, a, command_line),
    }
}

fn report_failures(failures: &[String]) -> i32 {
    for f in failures {
        eprintln!("failed: {f}");
    }
    if failures.is_empty() {
        exit::SUCCESS
    } else {
        exit::VALIDATION
    }
}

#[derive(Debug, Serialize)]
struct AblationRow<'a> {
    task_id: &'a str,
    spec: &'a str,
    text: &'a str,
    ratio: f64,
}

fn parse_specs(spec: &str) -> Result<Vec<AblationKind>, CliError> {
    if spec.trim() == "all" {
        return Ok(AblationKind::ALL.to_vec());
    }
    spec.split(',')
        .map(|s| s.trim().parse::<AblationKind>().map_err(|e| CliError::Usage(e.to_string())))
        .collect()
}

pub fn cmd_ablate(g: &GlobalArgs, a: &AblateArgs, command_line: &[String]) -> Result<i32, CliError> {
    let specs = parse_specs(&a.spec)?;
    let tasks = load_task_dir(&a.tasks, g.strictness())?;
    let anns = annotation_index(&a.annotations, a.annotator.as_deref())?;
    prepare_out_dir(&a.out, a.force)?;

    let mut manifest = RunManifest::new(
        command_line,
        json!({
            "command": "ablate",
            "specs": specs.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
            "annotator": a.annotator,
            "baselines": a.baselines,
        }),
        vec![g.seed],
    );
    manifest.add_input_dir(&a.tasks)?;
    manifest.add_input(&a.annotations)?;

    // per task: one result per spec, in spec order
    let per_task: Vec<Result<Vec<AblatedDefinition>, String>> = par::map(g.execution(), &tasks, |task| {
        let ann = anns
            .get(&task.id)
            .ok_or_else(|| format!("task {}: no annotation record", task.id))?;
        specs
            .iter()
            .map(|&kind| {
                let spec = AblationSpec::from(kind);
                if !spec.removed_categories.iter().any(|c| ann.has(*c)) {
                    log::warn!("task {}: no spans for {kind}; definition kept whole", task.id);
                }
                apply_ablation(task, ann, &spec).map_err(|e| format!("task {}: {e}", task.id))
            })
            .collect()
    });

    let mut failures = Vec::new();
    let mut by_spec: Vec<Vec<AblatedDefinition>> = vec![Vec::new(); specs.len()];
    for r in per_task {
        match r {
            Ok(defs) => defs.into_iter().enumerate().for_each(|(i, d)| by_spec[i].push(d)),
            Err(e) => failures.push(e),
        }
    }

    let mut table = Table::new(["spec", "tasks", "%C"]);
    for (kind, defs) in specs.iter().zip(&by_spec) {
        let file = format!("{}.jsonl", kind.as_str());
        write_file(
            &a.out.join(&file),
            &jsonl(defs.iter().map(|d| AblationRow {
                task_id: &d.task_id,
                spec: &d.spec_name,
                text: &d.text,
                ratio: d.ratio(),
            })),
        )?;
        manifest.outputs.push(file);
        let mean = (!defs.is_empty()).then(|| defs.iter().map(AblatedDefinition::ratio).sum::<f64>() / defs.len() as f64);
        table.push([
            kind.as_str().to_string(),
            defs.len().to_string(),
            mean.map_or_else(|| "-".into(), |m| format!("{:.1}", 100.0 * m)),
        ]);
    }

    if a.baselines {
        let seed = g.seed.to_string();
        let shuffled: Vec<Value> = tasks
            .iter()
            .map(|t| {
                let text = shuffle_definition(&t.definition, derive_seed(["shuffle", &seed, &t.id]));
                json!({"task_id": t.id, "spec": "shuffled", "text": text, "ratio": 1.0})
            })
            .collect();
        let mut metadata = Vec::new();
        for t in &tasks {
            match build_metadata_definition(t) {
                Ok(text) => {
                    let ratio = crate::ablation::compression_ratio(&t.definition, &text).unwrap_or(0.0);
                    metadata.push(json!({"task_id": t.id, "spec": "metadata", "text": text, "ratio": ratio}));
                }
                Err(e) => failures.push(format!("task {}: {e}", t.id)),
            }
        }
        let no_def: Vec<Value> = tasks
            .iter()
            .map(|t| json!({"task_id": t.id, "spec": "no_def", "text": NO_DEFINITION, "ratio": 0.0}))
            .collect();
        for (name, rows) in [("shuffled", shuffled), ("metadata", metadata), ("no_def", no_def)] {
            let file = format!("{name}.jsonl");
            write_file(&a.out.join(&file), &jsonl(&rows))?;
            manifest.outputs.push(file);
        }
    }

    manifest.outputs.extend(table.write_both(&a.out, "summary")?);
    manifest.failures = failures.clone();
    manifest.write(&a.out.join(MANIFEST_FILE))?;
    print!("{}", table.render(g.csv));
    Ok(report_failures(&failures))
}

/// Per-task artifact written by `compress`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCompression {
    pub compression: CompressionResult,
    pub holdout: HoldoutReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retention: Option<BTreeMap<String, Retention>>,
}

pub fn cmd_compress(g: &GlobalArgs, a: &CompressArgs, command_line: &[String]) -> Result<i32, CliError> {
    if !(a.epsilon >= 0.0 && a.epsilon.is_finite()) {
        return Err(CliError::Usage("--epsilon must be a non-negative number".into()));
    }
    let scorer_cfg = a.backend.scorer_config(g.seed)?;
    let tasks = load_task_dir(&a.tasks, g.strictness())?;
    let pairs = tasks_with_trees(tasks, &a.parses, a.task_list.as_deref())?;
    let anns = a
        .annotations
        .as_deref()
        .map(|p| annotation_index(p, None))
        .transpose()?;
    let scorer = Scorer::from_config(&scorer_cfg)?.with_execution(g.execution());
    prepare_out_dir(&a.out, a.force)?;

    let stdc_cfg = StdcConfig {
        baseline_mode: match a.mode {
            ModeChoice::Current => BaselineMode::Current,
            ModeChoice::Paper => BaselineMode::PaperLiteral,
        },
        epsilon: a.epsilon,
        allow_empty_result: a.allow_empty,
        ..StdcConfig::default()
    };
    let rule = if a.non_strict_coverage {
        CoverageRule::NonStrict
    } else {
        CoverageRule::Strict
    };
    let mode_name = format!("{:?}", a.mode).to_lowercase();
    let mut manifest = RunManifest::new(
        command_line,
        json!({
            "command": "compress",
            "scorer": a.backend.manifest_config(),
            "fit_n": a.fit_n,
            "holdout_n": a.holdout_n,
            "mode": mode_name,
            "epsilon": a.epsilon,
            "allow_empty": a.allow_empty,
            "coverage_rule": rule,
            "candidate_order": stdc_cfg.candidate_order,
        }),
        vec![g.seed],
    );
    manifest.add_input_dir(&a.tasks)?;
    manifest.add_input(&a.parses)?;
    for p in [&a.task_list, &a.annotations, &a.backend.template].into_iter().flatten() {
        manifest.add_input(p)?;
    }
    manifest.tree_form = Some(tree_form(pairs.iter().filter_map(|(_, t)| t.as_ref().ok())));
    manifest.mode = Some(mode_name);
    manifest.epsilon = Some(a.epsilon);
    manifest.backend_id = Some(scorer.backend_id());

    // Candidate evaluation within a task is sequential; tasks fan out.
    let results: Vec<Result<TaskCompression, CliError>> = par::map(g.execution(), &pairs, |(task, tree)| {
        let tree = tree
            .as_ref()
            .map_err(|e| CliError::Validation(format!("task {}: parse: {e}", task.id)))?;
        let (fit, holdout) = split_examples(task, a.fit_n, a.holdout_n, g.seed)?;
        let compression = compress(task, tree, &fit, &scorer, &stdc_cfg)?;
        let holdout = evaluate_holdout(task, &compression, &holdout, &scorer, rule)?;
        let retention = match anns.as_ref().and_then(|m| m.get(&task.id)) {
            Some(ann) => Some(category_retention(&compression, ann)?),
            None => None,
        };
        Ok(TaskCompression {
            compression,
            holdout,
            retention,
        })
    });

    let mut failures = Vec::new();
    let mut backend_failed = false;
    let mut done = Vec::new();
    for ((task, _), r) in pairs.iter().zip(results) {
        match r {
            Ok(tc) => {
                let file = format!("{}.json", task.id);
                let text = serde_json::to_string_pretty(&tc).expect("result serializes") + "\n";
                write_file(&a.out.join(&file), &text)?;
                manifest.outputs.push(file);
                done.push(tc);
            }
            Err(e) => {
                backend_failed |= e.exit_code() == exit::BACKEND;
                failures.push(format!("task {}: {e}", task.id));
            }
        }
    }

    let mut table = Table::new(["tasks", "ratio", "before", "after", "coverage"]);
    let n = done.len() as f64;
    let mean = |f: &dyn Fn(&TaskCompression) -> f64| (n > 0.0).then(|| done.iter().map(f).sum::<f64>() / n);
    table.push([
        done.len().to_string(),
        fmt_opt(mean(&|t| t.compression.ratio)),
        fmt_opt(mean(&|t| t.holdout.before)),
        fmt_opt(mean(&|t| t.holdout.after)),
        fmt_opt(mean(&|t| t.holdout.coverage)),
    ]);
    manifest.outputs.extend(table.write_both(&a.out, "summary")?);

    if anns.is_some() {
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for r in done.iter().filter_map(|t| t.retention.as_ref()) {
            for (cat, ret) in r {
                let e = sums.entry(cat.clone()).or_default();
                e.0 += ret.kept_fraction;
                e.1 += 1;
            }
        }
        let mut ret_table = Table::new(["category", "tasks", "kept"]);
        for (cat, (sum, k)) in sums {
            ret_table.push([cat, k.to_string(), fmt_score(sum / k as f64)]);
        }
        manifest.outputs.extend(ret_table.write_both(&a.out, "retention")?);
        print!("{}", ret_table.render(g.csv));
    }

    manifest.backend_calls = Some(scorer.backend_calls());
    manifest.cache_hits = Some(scorer.cache_hits());
    manifest.failures = failures.clone();
    manifest.write(&a.out.join(MANIFEST_FILE))?;
    print!("{}", table.render(g.csv));

    let code = report_failures(&failures);
    Ok(if backend_failed { exit::BACKEND } else { code })
}

/// One row of a score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFileRow {
    pub task_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<TaskKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_instances: Option<usize>,
}

/// Seen / unseen verbalizer means for one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScores {
    pub seen: Option<f64>,
    pub unseen: Option<f64>,
    pub seen_tasks: usize,
    pub unseen_tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: String,
    pub report: ScoreReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<GroupScores>,
}

fn read_score_rows(path: &Path) -> Result<Vec<ScoreFileRow>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let mut row: ScoreFileRow = serde_json::from_str(l)
                .map_err(|e| CliError::Input(format!("{}:{}: malformed score row: {e}", path.display(), i + 1)))?;
            if !row.score.is_finite() {
                return Err(CliError::Input(format!("{}:{}: non-finite score", path.display(), i + 1)));
            }
            row.condition.get_or_insert_with(|| stem.clone());
            Ok(row)
        })
        .collect()
}

fn mean_of(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn cmd_report(g: &GlobalArgs, a: &ReportArgs, command_line: &[String]) -> Result<i32, CliError> {
    if a.train_tasks.is_some() && a.tasks.is_none() {
        return Err(CliError::Usage("--train-tasks needs --tasks for the evaluated label sets".into()));
    }
    let mut rows = Vec::new();
    for p in &a.inputs {
        rows.extend(read_score_rows(p)?);
    }
    if rows.is_empty() {
        return Err(CliError::Input("no score rows in the given inputs".into()));
    }
    let tasks: HashMap<String, Task> = match &a.tasks {
        Some(dir) => load_task_dir(dir, g.strictness())?
            .into_iter()
            .map(|t| (t.id.clone(), t))
            .collect(),
        None => HashMap::new(),
    };
    let verbalizers = match &a.train_tasks {
        Some(dir) => Some(VerbalizerIndex::from_training(&load_task_dir(dir, g.strictness())?)),
        None => None,
    };

    let mut conditions: Vec<String> = Vec::new();
    let mut by_condition: HashMap<String, Vec<ScoreRow>> = HashMap::new();
    for r in rows {
        let kind = match r.kind.or_else(|| tasks.get(&r.task_id).map(|t| t.kind)) {
            Some(k) => k,
            None => {
                return Err(CliError::Input(format!(
                    "row for task `{}` has no kind and no task file supplies one",
                    r.task_id
                )))
            }
        };
        let cond = r.condition.unwrap_or_default();
        if !conditions.contains(&cond) {
            conditions.push(cond.clone());
        }
        by_condition.entry(cond).or_default().push(ScoreRow {
            task_id: r.task_id,
            kind,
            score: r.score,
        });
    }
    let baseline = match &a.baseline {
        Some(b) if !conditions.contains(b) => {
            return Err(CliError::Usage(format!("baseline condition `{b}` not found in inputs")));
        }
        Some(b) => b.clone(),
        None => conditions[0].clone(),
    };

    let reports: Vec<ConditionReport> = conditions
        .iter()
        .map(|c| {
            let report = aggregate(&by_condition[c]).expect("condition has rows");
            let groups = verbalizers.as_ref().map(|index| {
                let (mut seen, mut unseen) = (Vec::new(), Vec::new());
                for (task_id, score) in &report.per_task {
                    match tasks.get(task_id).and_then(|t| index.is_seen(t)) {
                        Some(true) => seen.push(*score),
                        Some(false) => unseen.push(*score),
                        None => {}
                    }
                }
                GroupScores {
                    seen: mean_of(&seen),
                    unseen: mean_of(&unseen),
                    seen_tasks: seen.len(),
                    unseen_tasks: unseen.len(),
                }
            });
            ConditionReport {
                condition: c.clone(),
                report,
                groups,
            }
        })
        .collect();
    let base = reports.iter().find(|r| r.condition == baseline).expect("baseline exists").clone();
    let delta = |x: Option<f64>, y: Option<f64>| x.zip(y).map(|(x, y)| x - y);

    let mut table = Table::new(["condition", "tasks", "All", "Cls.", "Gen.", "ΔAll", "ΔCls.", "ΔGen."]);
    for r in &reports {
        let rep = &r.report;
        table.push([
            r.condition.clone(),
            rep.per_task.len().to_string(),
            fmt_score(rep.overall),
            fmt_opt(rep.cls),
            fmt_opt(rep.gen),
            fmt_delta(Some(rep.overall - base.report.overall)),
            fmt_delta(delta(rep.cls, base.report.cls)),
            fmt_delta(delta(rep.gen, base.report.gen)),
        ]);
    }
    let mut out = table.render(g.csv);

    let group_table = verbalizers.is_some().then(|| {
        let bg = base.groups.clone().expect("groups computed");
        let mut t = Table::new(["group", "condition", "tasks", "score", "Δ"]);
        for (name, pick) in [
            ("seen", (|g: &GroupScores| (g.seen, g.seen_tasks)) as fn(&GroupScores) -> (Option<f64>, usize)),
            ("unseen", |g: &GroupScores| (g.unseen, g.unseen_tasks)),
        ] {
            for r in &reports {
                let (score, n) = pick(r.groups.as_ref().expect("groups computed"));
                t.push([
                    name.to_string(),
                    r.condition.clone(),
                    n.to_string(),
                    fmt_opt(score),
                    fmt_delta(delta(score, pick(&bg).0)),
                ]);
            }
        }
        t
    });
    if let Some(t) = &group_table {
        out.push('\n');
        out += &t.render(g.csv);
    }
    print!("{out}");

    if let Some(dir) = &a.out {
        prepare_out_dir(dir, a.force)?;
        let mut manifest = RunManifest::new(
            command_line,
            json!({"command": "report", "baseline": baseline, "conditions": conditions}),
            vec![g.seed],
        );
        for p in &a.inputs {
            manifest.add_input(p)?;
        }
        for d in [&a.tasks, &a.train_tasks].into_iter().flatten() {
            manifest.add_input_dir(d)?;
        }
        let json = serde_json::to_string_pretty(&json!({"baseline": baseline, "conditions": reports}))
            .expect("report serializes")
            + "\n";
        write_file(&dir.join("report.json"), &json)?;
        manifest.outputs.push("report.json".into());
        manifest.outputs.extend(table.write_both(dir, "report")?);
        if let Some(t) = &group_table {
            manifest.outputs.extend(t.write_both(dir, "verbalizers")?);
        }
        manifest.write(&dir.join(MANIFEST_FILE))?;
    }
    Ok(exit::SUCCESS)
}

pub fn cmd_triplet(g: &GlobalArgs, a: &TripletArgs, command_line: &[String]) -> Result<i32, CliError> {
    let tasks = load_task_dir(&a.tasks, g.strictness())?;
    let anns = annotation_index(&a.annotations, a.annotator.as_deref())?;
    let pairs = tasks_with_trees(tasks, &a.parses, a.task_list.as_deref())?;
    prepare_out_dir(&a.out, a.force)?;
    let outputs = if a.split_output {
        OutputTargets::Split
    } else {
        OutputTargets::Joined
    };

    let mut manifest = RunManifest::new(
        command_line,
        json!({"command": "triplet", "split_output": a.split_output, "annotator": a.annotator}),
        vec![g.seed],
    );
    manifest.add_input_dir(&a.tasks)?;
    manifest.add_input(&a.annotations)?;
    manifest.add_input(&a.parses)?;
    if let Some(p) = &a.task_list {
        manifest.add_input(p)?;
    }
    manifest.tree_form = Some(tree_form(pairs.iter().filter_map(|(_, t)| t.as_ref().ok())));

    let results = par::map(g.execution(), &pairs, |(task, tree)| {
        let tree = tree.as_ref().map_err(|e| format!("task {}: parse: {e}", task.id))?;
        let ann = anns
            .get(&task.id)
            .ok_or_else(|| format!("task {}: no annotation record", task.id))?;
        let triplet = build_triplet(task, ann, tree).map_err(|e| e.to_string())?;
        let instances = meta_tuning_instances_with(task, &triplet, outputs).map_err(|e| e.to_string())?;
        Ok::<_, String>((triplet, instances))
    });

    let mut failures = Vec::new();
    let (mut triplets, mut meta, mut rendered) = (Vec::new(), Vec::new(), String::new());
    for r in results {
        match r {
            Ok((t, inst)) => {
                if t.needs_review {
                    log::warn!("task {}: triplet fell back to raw span text; review it", t.task_id);
                }
                rendered += &format!("{}\t{}\n", t.task_id, render_triplet(&t));
                triplets.push(t);
                meta.extend(inst);
            }
            Err(e) => failures.push(e),
        }
    }
    write_file(&a.out.join("triplets.jsonl"), &jsonl(triplets.iter().map(TripletRow::from)))?;
    write_file(&a.out.join("meta_tuning.jsonl"), &jsonl(&meta))?;
    write_file(&a.out.join("rendered.tsv"), &rendered)?;
    manifest.outputs = vec!["triplets.jsonl".into(), "meta_tuning.jsonl".into(), "rendered.tsv".into()];

    let mut table = Table::new(["tasks", "triplets", "needs_review", "instances"]);
    table.push([
        pairs.len().to_string(),
        triplets.len().to_string(),
        triplets.iter().filter(|t| t.needs_review).count().to_string(),
        meta.len().to_string(),
    ]);
    manifest.outputs.extend(table.write_both(&a.out, "summary")?);
    manifest.failures = failures.clone();
    manifest.write(&a.out.join(MANIFEST_FILE))?;
    print!("{}", table.render(g.csv));
    Ok(report_failures(&failures))
}

#[derive(Debug, Deserialize)]
struct DefinitionRow {
    task_id: String,
    #[serde(default)]
    spec: Option<String>,
    text: String,
}

pub fn cmd_score(g: &GlobalArgs, a: &ScoreArgs, command_line: &[String]) -> Result<i32, CliError> {
    let scorer_cfg = a.backend.scorer_config(g.seed)?;
    let mut tasks = load_task_dir(&a.tasks, g.strictness())?;
    if !a.task_ids.is_empty() {
        if let Some(missing) = a.task_ids.iter().find(|id| !tasks.iter().any(|t| &t.id == *id)) {
            return Err(CliError::Validation(format!("unknown task `{missing}`")));
        }
        tasks.retain(|t| a.task_ids.contains(&t.id));
    }
    if let Some(out) = &a.out {
        prepare_out_file(out, a.force)?;
    }

    // (task index, condition, definition text)
    let mut jobs: Vec<(usize, String, String)> = Vec::new();
    match (&a.definition, &a.definitions) {
        (Some(text), _) => {
            let cond = a.condition.clone().unwrap_or_else(|| "custom".into());
            jobs.extend((0..tasks.len()).map(|i| (i, cond.clone(), text.clone())));
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
            for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let row: DefinitionRow = serde_json::from_str(line)
                    .map_err(|e| CliError::Input(format!("{}:{}: {e}", path.display(), n + 1)))?;
                if let Some(i) = tasks.iter().position(|t| t.id == row.task_id) {
                    let cond = a.condition.clone().or(row.spec).unwrap_or_else(|| "custom".into());
                    jobs.push((i, cond, row.text));
                }
            }
        }
        (None, None) => {
            let variant = a.variant.unwrap_or(VariantChoice::Full);
            let cond = a.condition.clone().unwrap_or_else(|| {
                match variant {
                    VariantChoice::Full => "full",
                    VariantChoice::Shuffled => "shuffled",
                    VariantChoice::Metadata => "metadata",
                    VariantChoice::NoDef => "no_def",
                }
                .into()
            });
            let seed = g.seed.to_string();
            for (i, t) in tasks.iter().enumerate() {
                let text = match variant {
                    VariantChoice::Full => t.definition.clone(),
                    VariantChoice::Shuffled => shuffle_definition(&t.definition, derive_seed(["shuffle", &seed, &t.id])),
                    VariantChoice::Metadata => {
                        build_metadata_definition(t).map_err(|e| CliError::Validation(format!("task {}: {e}", t.id)))?
                    }
                    VariantChoice::NoDef => NO_DEFINITION.to_string(),
                };
                jobs.push((i, cond.clone(), text));
            }
        }
    }

    let scorer = Scorer::from_config(&scorer_cfg)?.with_execution(g.execution());
    let results: Vec<Result<ScoreFileRow, CliError>> = par::map(g.execution(), &jobs, |(i, cond, text)| {
        let task = &tasks[*i];
        let n = a.n.unwrap_or(task.instances.len()).min(task.instances.len());
        let (examples, _) = split_examples(task, n, 0, g.seed)?;
        let record = scorer.score(text, task, &examples)?;
        Ok(ScoreFileRow {
            task_id: task.id.clone(),
            kind: Some(task.kind),
            condition: Some(cond.clone()),
            score: record.mean_score,
            n_instances: Some(record.per_instance.len()),
        })
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut worst = exit::SUCCESS;
    for ((i, cond, _), r) in jobs.iter().zip(results) {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                worst = worst.max(e.exit_code());
                failures.push(format!("task {} ({cond}): {e}", tasks[*i].id));
            }
        }
    }

    let mut table = Table::new(["task", "condition", "n", "score"]);
    for r in &rows {
        table.push([
            r.task_id.clone(),
            r.condition.clone().unwrap_or_default(),
            r.n_instances.unwrap_or(0).to_string(),
            fmt_score(r.score),
        ]);
    }
    print!("{}", table.render(g.csv));

    if let Some(out) = &a.out {
        write_file(out, &jsonl(&rows))?;
        let mut manifest = RunManifest::new(
            command_line,
            json!({"command": "score", "scorer": a.backend.manifest_config(), "n": a.n, "variant": a.variant.map(|v| format!("{v:?}"))}),
            vec![g.seed],
        );
        manifest.add_input_dir(&a.tasks)?;
        for p in [&a.definitions, &a.backend.template].into_iter().flatten() {
            manifest.add_input(p)?;
        }
        manifest.backend_id = Some(scorer.backend_id());
        manifest.backend_calls = Some(scorer.backend_calls());
        manifest.cache_hits = Some(scorer.cache_hits());
        manifest.outputs.push(out.display().to_string());
        manifest.failures = failures.clone();
        manifest.write(&sidecar_manifest(out))?;
    }
    for f in &failures {
        eprintln!("failed: {f}");
    }
    Ok(worst)
}
