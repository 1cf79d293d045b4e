use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use djmc_core::agent::AgentKind;
use djmc_core::experiments::{ExperimentConfig, RewardFeedback};

#[derive(Debug, Parser)]
#[command(
    name = "djmc",
    version,
    about = "Adaptive playlist agent: data generation, benchmarks, statistics and serving"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate or inspect song corpora.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Generate synthetic playlists.
    #[command(subcommand)]
    Playlists(PlaylistsCommand),
    /// Run the simulated-listener benchmark.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Transition-profile analysis of playlist sets.
    #[command(subcommand)]
    Profile(ProfileCommand),
    /// Statistics over CSV columns.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Start the HTTP session service.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum CorpusCommand {
    /// Write a synthetic corpus as JSON lines.
    Gen(CorpusGenArgs),
    /// Print summary statistics of a corpus file.
    Stats(CorpusStatsArgs),
}

#[derive(Debug, Args)]
pub struct CorpusGenArgs {
    #[arg(long, default_value_t = 1000)]
    pub songs: usize,
    #[arg(long, default_value_t = 50)]
    pub artists: usize,
    #[arg(long, default_value_t = 2)]
    pub albums_per_artist: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CorpusStatsArgs {
    pub corpus: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum PlaylistsCommand {
    /// Write random-walk playlists over a corpus, one per line.
    Gen(PlaylistsGenArgs),
}

#[derive(Debug, Args)]
pub struct PlaylistsGenArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    #[arg(long, default_value_t = 20)]
    pub length: usize,
    #[arg(long, default_value_t = 0.8)]
    pub coherence: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Run every agent against the same simulated listeners.
    Run(Box<BenchRunArgs>),
}

fn parse_reward_mode(s: &str) -> Result<RewardFeedback, String> {
    match s {
        "continuous" => Ok(RewardFeedback::Continuous),
        "binary" => Ok(RewardFeedback::Binary),
        other => Err(format!("unknown reward mode `{other}` (expected continuous or binary)")),
    }
}

fn parse_agent(s: &str) -> Result<AgentKind, String> {
    s.parse().map_err(|e: djmc_core::Error| e.to_string())
}

/// Flags named after the benchmark configuration fields. Unset flags fall
/// back to the config file, then to the defaults.
#[derive(Debug, Args)]
pub struct BenchRunArgs {
    /// TOML file with configuration fields; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for report.json and the CSV tables.
    #[arg(long, default_value = "bench-out")]
    pub out_dir: PathBuf,
    /// Spread listeners over threads (results are unchanged).
    #[arg(long)]
    pub parallel: bool,
    /// Corpus file to use instead of the synthetic corpus.
    #[arg(long, requires = "playlists")]
    pub corpus: Option<PathBuf>,
    /// Playlist file to build listeners from (requires --corpus).
    #[arg(long, requires = "corpus")]
    pub playlists: Option<PathBuf>,
    #[arg(long)]
    pub corpus_size: Option<usize>,
    #[arg(long)]
    pub n_artists: Option<usize>,
    #[arg(long)]
    pub albums_per_artist: Option<usize>,
    #[arg(long)]
    pub n_playlists: Option<usize>,
    #[arg(long)]
    pub playlist_length: Option<usize>,
    #[arg(long)]
    pub coherence: Option<f64>,
    #[arg(long)]
    pub session_length: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub use_song_types: Option<bool>,
    #[arg(long)]
    pub k_s: Option<usize>,
    #[arg(long)]
    pub k_t: Option<usize>,
    #[arg(long)]
    pub n_listeners: Option<usize>,
    #[arg(long)]
    pub n_clusters: Option<usize>,
    #[arg(long)]
    pub transition_fraction: Option<f64>,
    /// Comma-separated subset of djmc, greedy, random.
    #[arg(long, value_delimiter = ',', value_parser = parse_agent)]
    pub agents: Option<Vec<AgentKind>>,
    #[arg(long, value_parser = parse_reward_mode)]
    pub reward_mode: Option<RewardFeedback>,
    #[arg(long)]
    pub early_step: Option<usize>,
    #[arg(long)]
    pub bootstrap_subset: Option<usize>,
    #[arg(long)]
    pub bootstrap_resamples: Option<usize>,
    #[arg(long)]
    pub histogram_bins: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl BenchRunArgs {
    pub fn apply(&self, c: &mut ExperimentConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { c.$field = v.clone(); })*
            };
        }
        set!(
            corpus_size,
            n_artists,
            albums_per_artist,
            n_playlists,
            playlist_length,
            coherence,
            session_length,
            horizon,
            budget,
            use_song_types,
            k_s,
            k_t,
            n_listeners,
            n_clusters,
            transition_fraction,
            agents,
            reward_mode,
            early_step,
            bootstrap_subset,
            bootstrap_resamples,
            histogram_bins,
            seed
        );
    }
}

#[derive(Debug, Subcommand)]
pub enum ProfileCommand {
    /// Per-descriptor transition deltas of a fair and a poor playlist set.
    /// Without input files, a small album-structured fixture is generated.
    Transitions(ProfileArgs),
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long, requires_all = ["fair", "poor"])]
    pub corpus: Option<PathBuf>,
    #[arg(long, requires = "corpus")]
    pub fair: Option<PathBuf>,
    #[arg(long, requires = "corpus")]
    pub poor: Option<PathBuf>,
    /// Albums in the generated fixture.
    #[arg(long, default_value_t = 5)]
    pub albums: usize,
    /// Songs per album in the generated fixture.
    #[arg(long, default_value_t = 4)]
    pub songs_per_album: usize,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON output path (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optional CSV table with one row per descriptor.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Bootstrap distribution of subset means of one CSV column.
    Bootstrap(BootstrapArgs),
    /// Welch's t-test of column values in two CSV files.
    Ttest(TtestArgs),
}

#[derive(Debug, Args)]
pub struct ColumnArgs {
    /// Column to read; defaults to the last column.
    #[arg(long)]
    pub column: Option<String>,
    /// Keep only rows where COLUMN equals VALUE (`COLUMN=VALUE`, repeatable).
    #[arg(long = "filter", value_name = "COLUMN=VALUE")]
    pub filters: Vec<String>,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    pub input: PathBuf,
    #[command(flatten)]
    pub column: ColumnArgs,
    #[arg(long, default_value_t = 8)]
    pub subset: usize,
    #[arg(long, default_value_t = 10_000)]
    pub resamples: usize,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Include every resampled mean in the output.
    #[arg(long)]
    pub emit_means: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TtestArgs {
    /// Sample x.
    pub a: PathBuf,
    /// Sample y.
    pub b: PathBuf,
    #[command(flatten)]
    pub column: ColumnArgs,
    /// Extra row filter for the first file only.
    #[arg(long = "filter-a", value_name = "COLUMN=VALUE")]
    pub filters_a: Vec<String>,
    /// Extra row filter for the second file only.
    #[arg(long = "filter-b", value_name = "COLUMN=VALUE")]
    pub filters_b: Vec<String>,
    /// Subtracted from x before testing, to test for a gap of at least this size.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub offset: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// TOML service configuration; DJMC_* variables and flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub listen: Option<String>,
    /// Path of the default corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}
