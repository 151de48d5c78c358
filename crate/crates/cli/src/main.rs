//! `qaharvest`: build location-specific QA datasets from search-engine
//! related-question panels.

mod error;
mod harvest;
mod reports;
mod seeds;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qaharvest::engines::SearchType;
use qaharvest::Reliability;
use tracing_subscriber::EnvFilter;

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "qaharvest", version, about = "Harvest location-specific question-answer datasets from search engines")]
struct Cli {
    /// Log filter, e.g. `info` or `qaharvest=debug`.
    #[arg(long, global = true, env = "QAHARVEST_LOG", default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the pipeline: seeds, harvesting, domain checks, annotation, splits.
    Harvest(HarvestArgs),
    /// Build seed-query files.
    #[command(subcommand)]
    Seeds(SeedsCommand),
    /// Print the per-language/location split distribution of an output directory.
    Stats(StatsArgs),
    /// Agreement statistics over rating files.
    Agree(AgreeArgs),
    /// Export blinded answer-preference tasks from annotated records.
    Preference(PreferenceArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotateMode {
    Off,
    Llm,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum LlmKind {
    /// OpenAI-compatible chat endpoint configured through the env file.
    Openai,
    /// Offline deterministic stand-in.
    Stub,
}

#[derive(Args, Debug, Clone)]
pub struct HarvestArgs {
    /// Search backend: `mock` (needs --fixture) or a SerpApi engine name such as `google`.
    #[arg(long, default_value = "google")]
    pub engine: String,
    /// Result type to collect: text or images.
    #[arg(long = "search_type", alias = "search-type", default_value = "text")]
    pub search_type: SearchType,
    /// Seed queries CSV with columns id (optional), topic, query.
    #[arg(long = "input_file", alias = "input-file")]
    pub input_file: PathBuf,
    /// Two-letter lowercase country code passed to the engine.
    #[arg(long = "country_code", alias = "country-code")]
    pub country_code: String,
    /// Location string passed to the engine, e.g. "Doha, Qatar".
    #[arg(long)]
    pub location: String,
    /// Language tag recorded on every pair.
    #[arg(long, default_value = "en")]
    pub language: String,
    /// Env file with API keys (SERPAPI_API_KEY, LLM_API_KEY, LLM_MODEL).
    #[arg(long, env = "NATIVQA_ENV")]
    pub env: Option<PathBuf>,
    /// Number of expansion rounds. `--limit` is a deprecated alias.
    #[arg(long = "n_iter", alias = "n-iter", alias = "limit", default_value_t = 1)]
    pub n_iter: u32,
    /// Persistent response cache directory [default: <out_dir>/cache].
    #[arg(long = "cache_dir", alias = "cache-dir", env = "NATIVQA_CACHE_DIR")]
    pub cache_dir: Option<PathBuf>,
    /// Ignore cache entries older than this many seconds.
    #[arg(long = "cache-max-age")]
    pub cache_max_age: Option<u64>,
    /// Output directory for splits, manifest, stats and run report.
    #[arg(long = "out_dir", alias = "out-dir", default_value = "output")]
    pub out_dir: PathBuf,
    /// Concurrent engine requests and annotation calls.
    #[arg(long, default_value_t = 4)]
    pub parallelism: usize,
    /// Engine requests per second; unlimited when omitted.
    #[arg(long = "rate-limit")]
    pub rate_limit: Option<f64>,
    /// Reliability labels kept after domain checking (comma separated).
    #[arg(long = "reliability_keep", alias = "reliability-keep", value_delimiter = ',', default_value = "very_reliable")]
    pub reliability_keep: Vec<Reliability>,
    /// Reliable-domain list, one host per line. Without it domain checking is skipped.
    #[arg(long = "domain_list", alias = "domain-list")]
    pub domain_list: Option<PathBuf>,
    /// User-generated-content hosts; listed matches become partially_reliable.
    #[arg(long = "ugc_list", alias = "ugc-list")]
    pub ugc_list: Option<PathBuf>,
    /// LLM annotation of question quality, answer edits and location relevance.
    #[arg(long, value_enum, default_value = "off")]
    pub annotate: AnnotateMode,
    #[arg(long = "llm_backend", alias = "llm-backend", value_enum, default_value = "openai")]
    pub llm_backend: LlmKind,
    /// Directory overriding the annotation prompt templates.
    #[arg(long = "prompt_dir", alias = "prompt-dir")]
    pub prompt_dir: Option<PathBuf>,
    /// Drop pairs the annotator marked as not about the location.
    #[arg(long = "drop-irrelevant")]
    pub drop_irrelevant: bool,
    /// Split seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Regions smaller than this go entirely to the test split.
    #[arg(long = "min-split-size", default_value_t = qaharvest::dataset::MIN_SPLIT_SIZE)]
    pub min_split_size: usize,
    /// Re-query the whole pool every round instead of only the newest queries.
    #[arg(long = "full-pool")]
    pub full_pool: bool,
    /// JSON fixture for the mock engine.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    /// Continue from <out_dir>/checkpoint.jsonl.
    #[arg(long)]
    pub resume: bool,
    /// Extra seed templates (CSV id,topic,pattern or one pattern per line) with [LOCATION].
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Canonical query forms to exclude from the seeds, one per line.
    #[arg(long)]
    pub denylist: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum SeedsCommand {
    /// Substitute the location into query templates.
    Expand {
        #[arg(long)]
        templates: PathBuf,
        #[arg(long)]
        location: String,
        #[arg(long, default_value = "en")]
        language: String,
        #[arg(long)]
        denylist: Option<PathBuf>,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ask an LLM for seed queries per topic.
    Generate {
        #[arg(long, value_enum, default_value = "openai")]
        backend: LlmKind,
        #[arg(long = "topic", required = true)]
        topics: Vec<String>,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value = "")]
        location: String,
        #[arg(long, default_value = "en")]
        language: String,
        #[arg(long, env = "NATIVQA_ENV")]
        env: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        parallelism: usize,
        #[arg(long)]
        denylist: Option<PathBuf>,
        /// Prompt template file overriding the built-in one.
        #[arg(long)]
        prompt: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Review sheet for manual checking of generated seeds.
        #[arg(long)]
        review: Option<PathBuf>,
    },
    /// Union of seed CSVs with duplicates and near duplicates removed.
    Merge {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long, default_value = "")]
        location: String,
        #[arg(long, default_value = "en")]
        language: String,
        #[arg(long)]
        denylist: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    pub out_dir: PathBuf,
    /// Also write the table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgreeKind {
    Preference,
    Likert,
}

#[derive(Args, Debug)]
pub struct AgreeArgs {
    #[arg(long, value_enum)]
    pub kind: AgreeKind,
    /// Points on the Likert scale.
    #[arg(long, default_value_t = 5)]
    pub scale: u8,
    /// Rating JSONL files; each file is one report row, labelled by its file stem.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Print the reports as JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct PreferenceArgs {
    /// Annotated records JSONL.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Blinded tasks JSONL.
    #[arg(long)]
    pub out: PathBuf,
    /// Unblinding key CSV.
    #[arg(long)]
    pub key: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = EnvFilter::try_new(&cli.log).unwrap_or_else(|_| EnvFilter::new("warn"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
    if std::env::args().any(|a| a == "--limit" || a.starts_with("--limit=")) {
        tracing::warn!("--limit is deprecated; use --n_iter");
    }
    let result = match cli.command {
        Command::Harvest(args) => harvest::run(args),
        Command::Seeds(cmd) => seeds::run(cmd),
        Command::Stats(args) => reports::stats(args),
        Command::Agree(args) => reports::agree(args),
        Command::Preference(args) => reports::preference(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn llm_backend(
    kind: LlmKind,
    env: Option<&std::path::Path>,
) -> Result<Box<dyn qaharvest::llm::CompletionBackend>, CliError> {
    use qaharvest::llm::{OpenAiChatBackend, StubBackend};
    match kind {
        LlmKind::Stub => Ok(Box::new(StubBackend::echo())),
        LlmKind::Openai => {
            let path = env.ok_or_else(|| CliError::config("the openai backend needs --env or NATIVQA_ENV"))?;
            let vars = qaharvest::dataset::load_env_file(path)?;
            Ok(Box::new(OpenAiChatBackend::from_env(&vars)?))
        }
    }
}
