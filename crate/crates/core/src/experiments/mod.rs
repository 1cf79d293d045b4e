//! Simulation benchmark, transition profiles and summary statistics.

pub mod profile;
pub mod stats;

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{run_session, AgentKind, PlanConfig, SessionConfig, StartMode};
use crate::corpus::{generate_synthetic_corpus, generate_synthetic_playlists, Corpus, Playlist};
use crate::error::{Error, Result};
use crate::listener::{build_listeners_from_playlists, SimulatedListener};
use crate::seed;

pub use profile::{album_profile_fixture, transition_profile, TransitionProfile};
pub use stats::{bootstrap_means, histogram, unpaired_t_test, HistogramBin, TTest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardFeedback {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus_size: usize,
    pub n_artists: usize,
    pub albums_per_artist: usize,
    pub n_playlists: usize,
    /// Length of each synthetic training playlist.
    pub playlist_length: usize,
    pub coherence: f64,
    /// Songs per benchmark session.
    pub session_length: usize,
    pub horizon: usize,
    pub budget: usize,
    pub use_song_types: bool,
    pub k_s: usize,
    pub k_t: usize,
    pub n_listeners: usize,
    pub n_clusters: usize,
    pub transition_fraction: f64,
    pub agents: Vec<AgentKind>,
    pub reward_mode: RewardFeedback,
    /// Step at which the early-session comparison is taken.
    pub early_step: usize,
    pub bootstrap_subset: usize,
    pub bootstrap_resamples: usize,
    pub histogram_bins: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus_size: 1000,
            n_artists: 50,
            albums_per_artist: 2,
            n_playlists: 200,
            playlist_length: 20,
            coherence: 0.8,
            session_length: 30,
            horizon: 10,
            budget: 100,
            use_song_types: false,
            k_s: 10,
            k_t: 10,
            n_listeners: 100,
            n_clusters: 10,
            transition_fraction: 0.7,
            agents: AgentKind::ALL.to_vec(),
            reward_mode: RewardFeedback::Continuous,
            early_step: 10,
            bootstrap_subset: 8,
            bootstrap_resamples: 10_000,
            histogram_bins: 20,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.agents.is_empty() {
            return Err(Error::invalid("at least one agent is required"));
        }
        let mut seen = self.agents.clone();
        seen.sort_by_key(|a| a.name());
        seen.dedup();
        if seen.len() != self.agents.len() {
            return Err(Error::invalid("agents must not repeat"));
        }
        if self.n_listeners == 0 {
            return Err(Error::invalid("n_listeners must be at least 1"));
        }
        if self.session_length == 0 || self.session_length > self.corpus_size {
            return Err(Error::invalid("session_length must lie in [1, corpus_size]"));
        }
        if self.early_step == 0 {
            return Err(Error::invalid("early_step must be at least 1"));
        }
        if self.bootstrap_subset == 0 {
            return Err(Error::invalid("bootstrap_subset must be at least 1"));
        }
        self.session_config().plan.validate()
    }

    pub fn session_config(&self) -> SessionConfig {
        SessionConfig {
            length: self.session_length,
            k_s: self.k_s,
            k_t: self.k_t,
            plan: PlanConfig {
                horizon: self.horizon,
                budget: self.budget,
                use_song_types: self.use_song_types,
                n_song_types: None,
            },
            start: StartMode::Elicit,
            record_snapshots: false,
        }
    }
}

/// Synthetic inputs generated from the config seed.
pub fn synthetic_inputs(config: &ExperimentConfig) -> Result<(Corpus, Vec<Playlist>)> {
    let corpus = generate_synthetic_corpus(
        config.corpus_size,
        config.n_artists,
        config.albums_per_artist,
        seed::derive(config.seed, &["corpus"]),
    )?;
    let playlists = generate_synthetic_playlists(
        &corpus,
        config.n_playlists,
        config.playlist_length,
        config.coherence,
        seed::derive(config.seed, &["playlists"]),
    )?;
    Ok((corpus, playlists))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSeries {
    pub agent: AgentKind,
    pub listener: usize,
    pub rewards: Vec<f64>,
    pub cumulative: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub agent: AgentKind,
    pub mean_final: f64,
    pub sd_final: f64,
    pub mean_early: f64,
    pub bootstrap_mean: f64,
    pub bootstrap_ci_low: f64,
    pub bootstrap_ci_high: f64,
    pub bootstrap_histogram: Vec<HistogramBin>,
    pub final_histogram: Vec<HistogramBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: AgentKind,
    pub b: AgentKind,
    pub step: usize,
    pub mean_difference: f64,
    pub test: TTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub agents: Vec<AgentSummary>,
    pub comparisons: Vec<Comparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub corpus_hash: String,
    pub n_playlists: usize,
    pub series: Vec<SessionSeries>,
    pub summary: Summary,
}

impl ExperimentReport {
    pub fn series_for(&self, agent: AgentKind) -> impl Iterator<Item = &SessionSeries> {
        self.series.iter().filter(move |s| s.agent == agent)
    }

    /// Cumulative reward at `step` (1-based) for each listener.
    pub fn cumulative_at(&self, agent: AgentKind, step: usize) -> Vec<f64> {
        self.series_for(agent).map(|s| s.cumulative[step - 1]).collect()
    }

    pub fn mean_final(&self, agent: AgentKind) -> Option<f64> {
        self.summary
            .agents
            .iter()
            .find(|a| a.agent == agent)
            .map(|a| a.mean_final)
    }

    pub fn comparison(&self, a: AgentKind, b: AgentKind, step: usize) -> Option<&Comparison> {
        self.summary
            .comparisons
            .iter()
            .find(|c| c.a == a && c.b == b && c.step == step)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Writes `report.json`, `steps.csv`, `final_rewards.csv`,
    /// `histogram.csv` and `bootstrap.csv` into `dir`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))
        };
        write("report.json", self.to_json()?)?;
        write("steps.csv", self.steps_csv()?)?;
        write("final_rewards.csv", self.final_csv()?)?;
        write(
            "histogram.csv",
            histogram_csv(self.summary.agents.iter().map(|a| (a.agent, &a.final_histogram)))?,
        )?;
        write(
            "bootstrap.csv",
            histogram_csv(self.summary.agents.iter().map(|a| (a.agent, &a.bootstrap_histogram)))?,
        )?;
        Ok(())
    }

    /// One row per agent, listener and step.
    pub fn steps_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["agent", "listener", "step", "reward", "cumulative"])
            .map_err(csv_err)?;
        for s in &self.series {
            for (i, (r, c)) in s.rewards.iter().zip(&s.cumulative).enumerate() {
                w.write_record([
                    s.agent.name().to_string(),
                    s.listener.to_string(),
                    (i + 1).to_string(),
                    r.to_string(),
                    c.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        finish_csv(w)
    }

    /// One row per agent and listener with early and final cumulative reward.
    pub fn final_csv(&self) -> Result<String> {
        let early = self.config.early_step.min(self.config.session_length);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["agent", "listener", "cumulative_early", "cumulative_final"])
            .map_err(csv_err)?;
        for s in &self.series {
            w.write_record([
                s.agent.name().to_string(),
                s.listener.to_string(),
                s.cumulative[early - 1].to_string(),
                s.cumulative[s.cumulative.len() - 1].to_string(),
            ])
            .map_err(csv_err)?;
        }
        finish_csv(w)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
}

fn histogram_csv<'a>(rows: impl Iterator<Item = (AgentKind, &'a Vec<HistogramBin>)>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["agent", "bin_left", "bin_right", "count"])
        .map_err(csv_err)?;
    for (agent, bins) in rows {
        for b in bins {
            w.write_record([
                agent.name().to_string(),
                b.left.to_string(),
                b.right.to_string(),
                b.count.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    finish_csv(w)
}

fn cumulative(rewards: &[f64]) -> Vec<f64> {
    rewards
        .iter()
        .scan(0.0, |acc, r| {
            *acc += r;
            Some(*acc)
        })
        .collect()
}

fn run_listener(
    corpus: &Corpus,
    listener: &SimulatedListener,
    index: usize,
    config: &ExperimentConfig,
    session: &SessionConfig,
) -> Result<Vec<SessionSeries>> {
    let agent_seed = seed::derive_indexed(config.seed, "agent", index);
    config
        .agents
        .iter()
        .map(|&agent| {
            let mut oracle = listener.clone();
            oracle.reset();
            let mut rng = seed::rng(agent_seed);
            let transcript = run_session(corpus, &mut oracle, agent, session, &mut rng)?;
            let rewards = transcript.rewards();
            Ok(SessionSeries {
                agent,
                listener: index,
                cumulative: cumulative(&rewards),
                rewards,
            })
        })
        .collect()
}

/// Runs the benchmark on synthetic inputs derived from the config seed.
pub fn run_benchmark(config: &ExperimentConfig) -> Result<ExperimentReport> {
    run_benchmark_with(config, false)
}

/// Like [`run_benchmark`], optionally spreading listeners over threads.
/// Results do not depend on `parallel`.
pub fn run_benchmark_with(config: &ExperimentConfig, parallel: bool) -> Result<ExperimentReport> {
    config.validate()?;
    let (corpus, playlists) = synthetic_inputs(config)?;
    run_benchmark_on(config, &corpus, &playlists, parallel)
}

/// Runs the benchmark on a given corpus and playlist set.
pub fn run_benchmark_on(
    config: &ExperimentConfig,
    corpus: &Corpus,
    playlists: &[Playlist],
    parallel: bool,
) -> Result<ExperimentReport> {
    config.validate()?;
    if config.session_length > corpus.len() {
        return Err(Error::invalid("session_length exceeds the corpus size"));
    }
    let mut listeners = build_listeners_from_playlists(
        playlists,
        corpus,
        config.n_listeners,
        config.n_clusters,
        config.transition_fraction,
        seed::derive(config.seed, &["listeners"]),
    )?;
    if config.reward_mode == RewardFeedback::Binary {
        listeners = listeners
            .into_iter()
            .map(|l| l.with_median_thresholds(corpus))
            .collect();
    }
    let session = config.session_config();
    // Ensure the shared representative threshold is computed once up front.
    corpus.delta()?;
    let per_listener: Vec<Result<Vec<SessionSeries>>> = if parallel {
        listeners
            .par_iter()
            .enumerate()
            .map(|(i, l)| run_listener(corpus, l, i, config, &session))
            .collect()
    } else {
        listeners
            .iter()
            .enumerate()
            .map(|(i, l)| run_listener(corpus, l, i, config, &session))
            .collect()
    };
    let mut series = Vec::with_capacity(listeners.len() * config.agents.len());
    for r in per_listener {
        series.extend(r?);
    }
    tracing::debug!(n_series = series.len(), "benchmark sessions complete");
    let summary = summarize(config, &series)?;
    Ok(ExperimentReport {
        config: config.clone(),
        corpus_hash: corpus.hash().to_string(),
        n_playlists: playlists.len(),
        series,
        summary,
    })
}

fn summarize(config: &ExperimentConfig, series: &[SessionSeries]) -> Result<Summary> {
    let early = config.early_step.min(config.session_length);
    let at = |agent: AgentKind, step: usize| -> Vec<f64> {
        series
            .iter()
            .filter(|s| s.agent == agent)
            .map(|s| s.cumulative[step - 1])
            .collect()
    };
    let mut agents = Vec::new();
    for &agent in &config.agents {
        let finals = at(agent, config.session_length);
        let boot = bootstrap_means(
            &finals,
            config.bootstrap_subset,
            config.bootstrap_resamples,
            seed::derive(config.seed, &["bootstrap", agent.name()]),
        )?;
        let (lo, hi) = stats::percentile_interval(&boot, 25, 975).unwrap_or((f64::NAN, f64::NAN));
        agents.push(AgentSummary {
            agent,
            mean_final: stats::mean(&finals),
            sd_final: if finals.len() > 1 {
                stats::variance(&finals).sqrt()
            } else {
                0.0
            },
            mean_early: stats::mean(&at(agent, early)),
            bootstrap_mean: if boot.is_empty() { f64::NAN } else { stats::mean(&boot) },
            bootstrap_ci_low: lo,
            bootstrap_ci_high: hi,
            bootstrap_histogram: histogram(&boot, config.histogram_bins),
            final_histogram: histogram(&finals, config.histogram_bins),
        });
    }
    let mut comparisons = Vec::new();
    let pairs = [
        (AgentKind::Djmc, AgentKind::Greedy),
        (AgentKind::Djmc, AgentKind::Random),
        (AgentKind::Greedy, AgentKind::Random),
    ];
    if config.n_listeners >= 2 {
        for (a, b) in pairs {
            if !(config.agents.contains(&a) && config.agents.contains(&b)) {
                continue;
            }
            let mut steps = vec![early, config.session_length];
            steps.dedup();
            for step in steps {
                let (x, y) = (at(a, step), at(b, step));
                comparisons.push(Comparison {
                    a,
                    b,
                    step,
                    mean_difference: stats::mean(&x) - stats::mean(&y),
                    test: unpaired_t_test(&x, &y, 0.0)?,
                });
            }
        }
    }
    Ok(Summary { agents, comparisons })
}
