//! Simulated listeners trained from playlist clusters.

use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{init_song_prefs, transition_prefs_from_pairs};
use crate::corpus::{Corpus, Playlist, SongIdx};
use crate::error::{Error, Result};
use crate::reward::{sampled_transition_reward, ListenerParams};
use crate::seed;
use crate::selection::{k_means, percentile};

/// Largest favorite set used to train a listener's song weights.
pub const MAX_FAVORITES: usize = 10;

/// Something that can answer the agent's questions: which of these songs
/// next, and how much did you enjoy that one.
pub trait ListenerOracle {
    /// Returns a member of `candidates`.
    fn choose(&mut self, corpus: &Corpus, candidates: &[SongIdx], history: &[SongIdx]) -> SongIdx;

    fn rate(&mut self, corpus: &Corpus, history: &[SongIdx], song: SongIdx) -> f64;

    /// `k` liked songs, picked one at a time from the whole corpus with an
    /// empty history.
    fn favorites(&mut self, corpus: &Corpus, k: usize) -> Vec<SongIdx> {
        let mut remaining: Vec<SongIdx> = (0..corpus.len()).collect();
        let mut out = Vec::with_capacity(k);
        while out.len() < k && !remaining.is_empty() {
            let pick = self.choose(corpus, &remaining, &[]);
            remaining.retain(|&s| s != pick);
            out.push(pick);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    /// Song reward plus one draw of the memory-model transition reward.
    Continuous,
    /// One point each for a liked song and a liked transition.
    Binary { threshold_s: f64, threshold_t: f64 },
}

#[derive(Debug, Clone)]
pub struct SimulatedListener {
    pub params: ListenerParams,
    pub seed: u64,
    pub feedback: FeedbackMode,
    /// Songs the listener's song weights were trained on.
    pub favorites: Vec<SongIdx>,
    /// Playlist cluster the listener was drawn from, if any.
    pub cluster: Option<usize>,
    rng: ChaCha8Rng,
}

impl SimulatedListener {
    pub fn new(params: ListenerParams, seed: u64) -> Self {
        Self {
            params,
            seed,
            feedback: FeedbackMode::Continuous,
            favorites: Vec::new(),
            cluster: None,
            rng: seed::rng(seed),
        }
    }

    /// Rewinds the listener's random stream so that another agent can face
    /// exactly the same listener.
    pub fn reset(&mut self) {
        self.rng = seed::rng(self.seed);
    }

    pub fn with_feedback(mut self, feedback: FeedbackMode) -> Self {
        self.feedback = feedback;
        self
    }

    /// Switches to binary feedback with thresholds at the median song reward
    /// over the corpus and the median pair transition reward.
    pub fn with_median_thresholds(self, corpus: &Corpus) -> Self {
        let (threshold_s, threshold_t) = median_thresholds(&self.params, corpus, self.seed);
        self.with_feedback(FeedbackMode::Binary {
            threshold_s,
            threshold_t,
        })
    }

    fn score(&mut self, corpus: &Corpus, history: &[SongIdx], song: SongIdx) -> (f64, f64) {
        let rs = self.params.song_reward(corpus, song);
        let rt = sampled_transition_reward(&self.params.phi_t, corpus, history, song, &mut self.rng);
        (rs, rt)
    }
}

/// Pairs sampled for the transition threshold on large corpora.
const THRESHOLD_PAIR_SAMPLE: usize = 40_000;

fn median_thresholds(params: &ListenerParams, corpus: &Corpus, seed_value: u64) -> (f64, f64) {
    let rs: Vec<f64> = (0..corpus.len()).map(|s| params.song_reward(corpus, s)).collect();
    let n = corpus.len();
    let rt: Vec<f64> = if n * n.saturating_sub(1) <= THRESHOLD_PAIR_SAMPLE {
        (0..n)
            .flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b)))
            .map(|(a, b)| params.pair_reward(corpus, a, b))
            .collect()
    } else {
        let mut rng = seed::rng(seed::derive(seed_value, &["thresholds"]));
        (0..THRESHOLD_PAIR_SAMPLE)
            .map(|_| {
                let a = rng.random_range(0..n);
                let b = (a + rng.random_range(1..n)) % n;
                params.pair_reward(corpus, a, b)
            })
            .collect()
    };
    let threshold_s = percentile(&rs, 1, 2).unwrap_or(0.0);
    let threshold_t = percentile(&rt, 1, 2).unwrap_or(0.0);
    (threshold_s, threshold_t)
}

impl ListenerOracle for SimulatedListener {
    /// Maximal sampled total reward; the listener's stream is consumed once
    /// per candidate in the given order, and ties go to the lowest id.
    fn choose(&mut self, corpus: &Corpus, candidates: &[SongIdx], history: &[SongIdx]) -> SongIdx {
        let mut best: Option<(f64, SongIdx)> = None;
        for &c in candidates {
            let (rs, rt) = self.score(corpus, history, c);
            let total = rs + rt;
            let better = match best {
                None => true,
                Some((b, bs)) => total > b || (total == b && corpus.id_cmp(c, bs).is_lt()),
            };
            if better {
                best = Some((total, c));
            }
        }
        best.expect("choose needs at least one candidate").1
    }

    fn rate(&mut self, corpus: &Corpus, history: &[SongIdx], song: SongIdx) -> f64 {
        let (rs, rt) = self.score(corpus, history, song);
        match self.feedback {
            FeedbackMode::Continuous => rs + rt,
            FeedbackMode::Binary {
                threshold_s,
                threshold_t,
            } => f64::from(u8::from(rs >= threshold_s) + u8::from(rt >= threshold_t)),
        }
    }
}

/// Relative artist frequencies of a playlist over the corpus' artists.
fn artist_vector(corpus: &Corpus, songs: &[SongIdx], artists: &[&String]) -> Vec<f64> {
    let mut v = vec![0.0; artists.len()];
    for &s in songs {
        if let Ok(a) = artists.binary_search(&&corpus.song(s).artist) {
            v[a] += 1.0;
        }
    }
    let n = songs.len().max(1) as f64;
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Builds simulated listeners from playlists: cluster playlists by
/// artist frequencies, then for each listener pick a cluster, sample a
/// fraction of its transitions, and train song weights on (up to ten of) the
/// songs in those transitions and transition weights on the transitions.
pub fn build_listeners_from_playlists(
    playlists: &[Playlist],
    corpus: &Corpus,
    n_listeners: usize,
    n_clusters: usize,
    transition_fraction: f64,
    seed_value: u64,
) -> Result<Vec<SimulatedListener>> {
    if playlists.is_empty() {
        return Err(Error::invalid("no playlists to build listeners from"));
    }
    if !(transition_fraction > 0.0 && transition_fraction <= 1.0) {
        return Err(Error::invalid("transition fraction must lie in (0, 1]"));
    }
    if n_clusters == 0 {
        return Err(Error::invalid("need at least one playlist cluster"));
    }
    let resolved: Vec<Vec<SongIdx>> = playlists.iter().map(|p| p.resolve(corpus)).collect::<Result<_>>()?;
    let artists: Vec<&String> = corpus.artist_index().keys().collect();
    let vectors: Vec<Vec<f64>> = resolved.iter().map(|p| artist_vector(corpus, p, &artists)).collect();
    let k = n_clusters.min(vectors.len());
    let clustering = k_means(&vectors, k, seed::derive(seed_value, &["playlist-clusters"]), 100)?;

    let mut transitions: Vec<Vec<(SongIdx, SongIdx)>> = vec![Vec::new(); k];
    for (p, &c) in resolved.iter().zip(&clustering.assignment) {
        transitions[c].extend(p.windows(2).map(|w| (w[0], w[1])));
    }
    let usable: Vec<usize> = (0..k).filter(|&c| transitions[c].len() >= 2).collect();
    if usable.is_empty() {
        return Err(Error::invalid("every playlist cluster has fewer than two transitions"));
    }

    let mut listeners = Vec::with_capacity(n_listeners);
    for l in 0..n_listeners {
        let listener_seed = seed::derive_indexed(seed_value, "listener", l);
        let mut rng = seed::rng(seed::derive(listener_seed, &["build"]));
        // Sampling only among usable clusters is the resample rule for
        // clusters with too few transitions.
        let cluster = usable[rng.random_range(0..usable.len())];
        let pool = &transitions[cluster];
        let take = ((transition_fraction * pool.len() as f64).round() as usize).clamp(1, pool.len());
        let mut picked: Vec<usize> = index::sample(&mut rng, pool.len(), take).into_vec();
        picked.sort_unstable();
        let pairs: Vec<(SongIdx, SongIdx)> = picked.iter().map(|&i| pool[i]).collect();

        let mut seen = HashSet::new();
        let mut favorites: Vec<SongIdx> = pairs
            .iter()
            .flat_map(|&(a, b)| [a, b])
            .filter(|s| seen.insert(*s))
            .collect();
        if favorites.len() > MAX_FAVORITES {
            favorites.shuffle(&mut rng);
            favorites.truncate(MAX_FAVORITES);
            favorites.sort_unstable();
        }
        let params = ListenerParams {
            phi_s: init_song_prefs(corpus, &favorites)?,
            phi_t: transition_prefs_from_pairs(corpus, &pairs),
        };
        let mut listener = SimulatedListener::new(params, listener_seed);
        listener.favorites = favorites;
        listener.cluster = Some(cluster);
        listeners.push(listener);
    }
    Ok(listeners)
}
