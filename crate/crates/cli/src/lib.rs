//! The `tabinsight` command line: `analyze` runs the pipeline and writes a
//! report, `qa` answers a question from a cached report.
//!
//! Everything the binary does is reachable from here so tests can drive it
//! in-process.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | analysis, configuration or QA failure |
//! | 2 | input file unreadable or not a valid CSV |
//! | 3 | `qa` found no cached analysis and `--auto-analyze` was not given |
//! | 64 | command-line usage error |

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use tabinsight::feature_profile::ClusterConfig;
use tabinsight::llm_gateway::{LlmClient, LlmConfig, PLACEHOLDER_DESCRIPTION};
use tabinsight::model_zoo::ModelConfig;
use tabinsight::pairwise_stats::SignificanceThresholds;
use tabinsight::pipeline::{analyze_table, timestamp_now, AnalysisConfig};
use tabinsight::report_builder::{answer_question, cache_load, cache_store, CacheEntry};
use tabinsight::shap_engine::ShapConfig;
use tabinsight::table_ingest::{content_hash, parse_csv, CleaningPolicy};
use thiserror::Error;

pub const DEFAULT_OUTPUT: &str = "tabinsight_report.txt";
pub const DEFAULT_CACHE_DIR: &str = ".tabinsight_cache";
pub const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser)]
#[command(name = "tabinsight", version, about = "Mine insights from a CSV table")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analyse a table and write the text report.
    Analyze(CommonArgs),
    /// Answer a question about a previously analysed table.
    Qa(QaArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// Report destination [default: tabinsight_report.txt].
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Directory holding cached analyses [default: .tabinsight_cache].
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// TOML configuration file. Flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base URL of an OpenAI-compatible API, e.g. http://localhost:8000/v1.
    #[arg(long)]
    pub llm_endpoint: Option<String>,
    #[arg(long)]
    pub llm_model: Option<String>,
    /// Use the deterministic in-process LLM stand-in.
    #[arg(long)]
    pub mock_llm: bool,
    /// Recompute even when a matching cached analysis exists.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Analysis threads [default: available parallelism].
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct QaArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub question: String,
    /// Run `analyze` first when no cached analysis exists.
    #[arg(long)]
    pub auto_analyze: bool,
}

/// Contents of the `--config` file. Every key is optional.
///
/// ```toml
/// seed = 7
/// workers = 4
///
/// [llm]
/// endpoint_url = "http://localhost:8000/v1"
/// model_name = "Qwen3-8B"
///
/// [thresholds]
/// pearson_abs = 0.5
/// ```
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub output: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub dataset_description: Option<String>,
    pub llm: LlmConfig,
    pub cleaning: CleaningPolicy,
    pub thresholds: SignificanceThresholds,
    pub cluster: ClusterConfig,
    pub shap: ShapConfig,
    pub model: ModelConfig,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config file {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("invalid config file {}: {e}", path.display())))
    }
}

/// Fully resolved settings for one command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input_path: PathBuf,
    pub output_path: PathBuf,
    pub cache_dir: PathBuf,
    pub llm: LlmConfig,
    pub analysis: AnalysisConfig,
    pub workers: usize,
    pub force: bool,
}

impl RunConfig {
    /// Defaults with the mock LLM, as used by tests and examples.
    pub fn mock(input: impl Into<PathBuf>, output: impl Into<PathBuf>, cache_dir: impl Into<PathBuf>) -> RunConfig {
        RunConfig {
            input_path: input.into(),
            output_path: output.into(),
            cache_dir: cache_dir.into(),
            llm: LlmConfig::mock(),
            analysis: AnalysisConfig::default(),
            workers: default_workers(),
            force: false,
        }
    }

    /// Merges flags over the config file over built-in defaults.
    pub fn resolve(args: &CommonArgs) -> Result<RunConfig, CliError> {
        let file = match &args.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let mut llm = file.llm;
        if let Some(url) = &args.llm_endpoint {
            llm.endpoint_url = url.clone();
        }
        if let Some(model) = &args.llm_model {
            llm.model_name = model.clone();
        }
        llm.mock_mode |= args.mock_llm;
        let analysis = AnalysisConfig {
            seed: args.seed.or(file.seed).unwrap_or(42),
            cleaning: file.cleaning,
            thresholds: file.thresholds,
            cluster: file.cluster,
            shap: file.shap,
            model: file.model,
            dataset_description: file.dataset_description,
        };
        analysis.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let workers = args.workers.or(file.workers).unwrap_or_else(default_workers);
        if workers == 0 {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        if args.input.as_os_str().is_empty() {
            return Err(CliError::Config("--input must not be empty".into()));
        }
        Ok(RunConfig {
            input_path: args.input.clone(),
            output_path: args.output.clone().or(file.output).unwrap_or_else(|| DEFAULT_OUTPUT.into()),
            cache_dir: args.cache_dir.clone().or(file.cache_dir).unwrap_or_else(|| DEFAULT_CACHE_DIR.into()),
            llm,
            analysis,
            workers,
            force: args.force,
        })
    }

    fn table_name(&self) -> String {
        self.input_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.input_path.display().to_string())
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read input {}: {source}", path.display())]
    InputUnreadable { path: PathBuf, source: std::io::Error },
    #[error("input {} is not a usable CSV table: {source}", path.display())]
    InputMalformed { path: PathBuf, source: tabinsight::Error },
    #[error("no cached analysis for {} with this configuration; run analyze first", path.display())]
    NoCache { path: PathBuf },
    #[error("{0}")]
    Config(String),
    #[error("analysis failed: {0}")]
    Analysis(#[from] tabinsight::Error),
    #[error("cannot write {}: {source}", path.display())]
    Output { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::InputUnreadable { .. } | CliError::InputMalformed { .. } => 2,
            CliError::NoCache { .. } => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeOutcome {
    pub report_text: String,
    pub cache_hit: bool,
}

/// Runs the pipeline (or reuses a cached run), writes the report to
/// `output_path` and refreshes the cache.
pub fn run_analyze(cfg: &RunConfig) -> Result<AnalyzeOutcome, CliError> {
    let bytes = read_input(&cfg.input_path)?;
    let name = cfg.table_name();
    let hash = content_hash(&bytes);
    let digest = cfg.analysis.digest(&cfg.llm)?;

    if !cfg.force {
        if let Some(entry) = cache_load(&cfg.cache_dir, &name, &hash, &digest) {
            tracing::info!(table = %name, "cache hit, reusing previous analysis");
            write_output(&cfg.output_path, &entry.report_text)?;
            return Ok(AnalyzeOutcome { report_text: entry.report_text, cache_hit: true });
        }
    }

    let raw =
        parse_csv(&bytes, &name).map_err(|source| CliError::InputMalformed { path: cfg.input_path.clone(), source })?;
    let llm = LlmClient::new(cfg.llm.clone());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    tracing::info!(table = %name, workers = cfg.workers, "analysing");
    let report = pool.install(|| analyze_table(&raw, &cfg.analysis, &llm, timestamp_now()))?;
    if !llm.is_mock() && !report.features.is_empty() {
        let all_placeholder = report.features.iter().all(|f| f.description == PLACEHOLDER_DESCRIPTION);
        if all_placeholder {
            tracing::warn!("LLM endpoint unavailable; heuristic typing and placeholder descriptions were used");
        }
    }
    let report_text = report.render();
    write_output(&cfg.output_path, &report_text)?;
    tracing::info!(path = %cfg.output_path.display(), "report written");

    let entry = CacheEntry {
        table_name: name,
        content_hash: hash,
        config_digest: digest,
        report_text: report_text.clone(),
        created_at: report.generated_at.clone(),
        report,
    };
    if let Err(e) = cache_store(&cfg.cache_dir, &entry) {
        tracing::warn!(error = %e, "could not store cache entry");
    }
    Ok(AnalyzeOutcome { report_text, cache_hit: false })
}

/// Answers `question` from the cached report for the input table.
pub fn run_qa(cfg: &RunConfig, question: &str, auto_analyze: bool) -> Result<String, CliError> {
    let bytes = read_input(&cfg.input_path)?;
    let digest = cfg.analysis.digest(&cfg.llm)?;
    let cached = cache_load(&cfg.cache_dir, &cfg.table_name(), &content_hash(&bytes), &digest);
    let report_text = match cached {
        Some(entry) if !cfg.force => entry.report_text,
        _ if auto_analyze => run_analyze(cfg)?.report_text,
        _ => return Err(CliError::NoCache { path: cfg.input_path.clone() }),
    };
    let llm = LlmClient::new(cfg.llm.clone());
    Ok(answer_question(&report_text, question, &llm)?)
}

/// Dispatches a parsed command line and returns the process exit code.
/// Answers go to stdout; diagnostics go to stderr.
pub fn run(cli: Cli) -> u8 {
    let result = match &cli.command {
        Command::Analyze(args) => RunConfig::resolve(args).and_then(|cfg| run_analyze(&cfg)).map(|_| ()),
        Command::Qa(args) => RunConfig::resolve(&args.common)
            .and_then(|cfg| run_qa(&cfg, &args.question, args.auto_analyze))
            .map(|answer| println!("{}", answer.trim_end())),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|source| CliError::InputUnreadable { path: path.to_path_buf(), source })
}

fn write_output(path: &Path, text: &str) -> Result<(), CliError> {
    let wrap = |source| CliError::Output { path: path.to_path_buf(), source };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(wrap)?;
    }
    fs::write(path, text).map_err(wrap)
}
