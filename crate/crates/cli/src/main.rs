//! `djmc` command-line entry point.
//!
//! Exit codes: 0 on success, 2 on usage errors, 1 on runtime errors.

mod analyze;
mod cli;

use std::fs;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use djmc_core::corpus::{
    generate_synthetic_corpus, generate_synthetic_playlists, load_corpus, load_playlists, save_playlists,
};
use djmc_core::experiments::profile::{album_profile_fixture, transition_profile, TransitionProfile};
use djmc_core::experiments::{run_benchmark_on, synthetic_inputs, ExperimentConfig};
use djmc_core::NUM_DESCRIPTORS;
use djmc_service::ServiceConfig;
use serde::Serialize;
use serde_json::json;

use cli::{AnalyzeCommand, BenchCommand, Cli, Command, CorpusCommand, PlaylistsCommand, ProfileCommand};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(parse_exit_code(&e));
        }
    };
    init_tracing();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", error_chain(&e));
            ExitCode::from(1)
        }
    }
}

/// Help and version requests exit 0; every other parse failure is a usage error.
fn parse_exit_code(e: &clap::Error) -> u8 {
    if e.use_stderr() {
        2
    } else {
        0
    }
}

/// Joins an error and its causes, skipping causes whose text is already shown.
fn error_chain(e: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in e.chain() {
        let part = cause.to_string();
        if !text.ends_with(&part) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&part);
        }
    }
    text
}

fn init_tracing() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn,djmc_service=info"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

/// Prints the fully resolved settings of a run to stderr.
fn print_config(command: &str, config: &impl Serialize) -> Result<()> {
    eprintln!("{command} resolved config: {}", serde_json::to_string(config)?);
    Ok(())
}

fn write_json(out: Option<&Path>, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Corpus(CorpusCommand::Gen(a)) => {
            print_config(
                "corpus gen",
                &json!({ "songs": a.songs, "artists": a.artists, "albums_per_artist": a.albums_per_artist, "seed": a.seed, "out": a.out }),
            )?;
            let corpus = generate_synthetic_corpus(a.songs, a.artists, a.albums_per_artist, a.seed)?;
            corpus.save(&a.out)?;
            println!(
                "wrote {} songs to {} (hash {})",
                corpus.len(),
                a.out.display(),
                corpus.hash()
            );
        }
        Command::Corpus(CorpusCommand::Stats(a)) => {
            print_config("corpus stats", &json!({ "corpus": a.corpus }))?;
            let corpus = load_corpus(&a.corpus)?;
            let albums: std::collections::BTreeSet<_> = corpus.songs().iter().map(|s| (&s.artist, &s.album)).collect();
            let edges: Vec<_> = (0..NUM_DESCRIPTORS)
                .map(|d| corpus.quantizer().edges(d).to_vec())
                .collect();
            write_json(
                None,
                &json!({
                    "songs": corpus.len(),
                    "artists": corpus.artist_index().len(),
                    "albums": albums.len(),
                    "hash": corpus.hash(),
                    "delta": corpus.delta()?,
                    "descriptor_means": corpus.stats().mean,
                    "descriptor_stddevs": corpus.stats().stddev,
                    "bin_edges": edges,
                }),
            )?;
        }
        Command::Playlists(PlaylistsCommand::Gen(a)) => {
            print_config(
                "playlists gen",
                &json!({ "corpus": a.corpus, "count": a.count, "length": a.length, "coherence": a.coherence, "seed": a.seed, "out": a.out }),
            )?;
            let corpus = load_corpus(&a.corpus)?;
            let playlists = generate_synthetic_playlists(&corpus, a.count, a.length, a.coherence, a.seed)?;
            save_playlists(&a.out, &playlists)?;
            println!("wrote {} playlists to {}", playlists.len(), a.out.display());
        }
        Command::Bench(BenchCommand::Run(a)) => bench(a)?,
        Command::Profile(ProfileCommand::Transitions(a)) => {
            print_config(
                "profile transitions",
                &json!({
                    "corpus": a.corpus, "fair": a.fair, "poor": a.poor, "albums": a.albums,
                    "songs_per_album": a.songs_per_album, "resamples": a.resamples, "seed": a.seed,
                }),
            )?;
            let (corpus, fair, poor) = match (&a.corpus, &a.fair, &a.poor) {
                (Some(c), Some(f), Some(p)) => {
                    let corpus = load_corpus(c)?;
                    let fair = load_playlists(f, &corpus)?.playlists;
                    let poor = load_playlists(p, &corpus)?.playlists;
                    (corpus, fair, poor)
                }
                _ => album_profile_fixture(a.albums, a.songs_per_album, a.seed)?,
            };
            let profile = transition_profile(&corpus, &fair, &poor, a.resamples, a.seed)?;
            if let Some(path) = &a.csv {
                fs::write(path, profile_csv(&profile)?).with_context(|| format!("writing {}", path.display()))?;
            }
            write_json(a.out.as_deref(), &profile)?;
            eprintln!(
                "{} of {} descriptors discriminative",
                profile.n_discriminative, NUM_DESCRIPTORS
            );
        }
        Command::Analyze(AnalyzeCommand::Bootstrap(a)) => {
            print_config(
                "analyze bootstrap",
                &json!({
                    "input": a.input, "column": a.column.column, "filters": a.column.filters,
                    "subset": a.subset, "resamples": a.resamples, "bins": a.bins, "seed": a.seed,
                }),
            )?;
            write_json(a.out.as_deref(), &analyze::bootstrap(&a)?)?;
        }
        Command::Analyze(AnalyzeCommand::Ttest(a)) => {
            print_config(
                "analyze ttest",
                &json!({
                    "a": a.a, "b": a.b, "column": a.column.column, "filters": a.column.filters,
                    "filters_a": a.filters_a, "filters_b": a.filters_b, "offset": a.offset,
                }),
            )?;
            write_json(a.out.as_deref(), &analyze::ttest(&a)?)?;
        }
        Command::Serve(a) => serve(a)?,
    }
    Ok(())
}

/// Defaults, then the TOML file, then command-line flags.
fn bench_config(a: &cli::BenchRunArgs) -> Result<ExperimentConfig> {
    let mut config = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<ExperimentConfig>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    a.apply(&mut config);
    Ok(config)
}

fn bench(a: Box<cli::BenchRunArgs>) -> Result<()> {
    let config = bench_config(&a)?;
    print_config(
        "bench run",
        &json!({ "config": config, "parallel": a.parallel, "out_dir": a.out_dir, "corpus": a.corpus, "playlists": a.playlists }),
    )?;
    let (corpus, playlists) = match (&a.corpus, &a.playlists) {
        (Some(c), Some(p)) => {
            let corpus = load_corpus(c)?;
            let playlists = load_playlists(p, &corpus)?.playlists;
            (corpus, playlists)
        }
        _ => {
            config.validate()?;
            synthetic_inputs(&config)?
        }
    };
    let report = run_benchmark_on(&config, &corpus, &playlists, a.parallel)?;
    report.write_to_dir(&a.out_dir)?;
    for s in &report.summary.agents {
        println!(
            "{:<7} mean cumulative reward {:>9.3} (sd {:.3}), at step {}: {:.3}",
            s.agent.name(),
            s.mean_final,
            s.sd_final,
            config.early_step.min(config.session_length),
            s.mean_early
        );
    }
    for c in &report.summary.comparisons {
        println!(
            "{} vs {} at step {}: difference {:+.3}, t = {:.3}, p = {:.3e}",
            c.a.name(),
            c.b.name(),
            c.step,
            c.mean_difference,
            c.test.t,
            c.test.p_value
        );
    }
    println!("report written to {}", a.out_dir.display());
    Ok(())
}

fn profile_csv(profile: &TransitionProfile) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "descriptor",
        "fair_mean",
        "fair_ci_low",
        "fair_ci_high",
        "poor_mean",
        "poor_ci_low",
        "poor_ci_high",
        "discriminative",
    ])?;
    for f in &profile.features {
        w.write_record([
            f.descriptor.to_string(),
            f.fair.mean.to_string(),
            f.fair.ci_low.to_string(),
            f.fair.ci_high.to_string(),
            f.poor.mean.to_string(),
            f.poor.ci_low.to_string(),
            f.poor.ci_high.to_string(),
            f.discriminative.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Defaults, then the TOML file, then `DJMC_*` variables, then flags.
fn serve_config(a: cli::ServeArgs, env: impl IntoIterator<Item = (String, String)>) -> Result<ServiceConfig> {
    let mut config = match &a.config {
        Some(path) => ServiceConfig::load(path)?,
        None => ServiceConfig::default(),
    };
    config.apply_env(env)?;
    if let Some(listen) = a.listen {
        config.listen = listen;
    }
    if let Some(corpus) = a.corpus {
        config
            .corpora
            .insert(djmc_service::config::DEFAULT_CORPUS.into(), corpus);
    }
    if let Some(dir) = a.log_dir {
        config.log_dir = dir;
    }
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn serve(a: cli::ServeArgs) -> Result<()> {
    let config = serve_config(a, std::env::vars())?;
    print_config("serve", &config)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(djmc_service::serve(config))?;
    Ok(())
}

#[cfg(test)]
mod tests;
