//! Sparse binary song/transition encodings and the listener reward model.
//!
//! Song features put one active index per descriptor at `d*10 + bin`;
//! transition features put one per descriptor at `d*100 + prev*10 + cur`.
//! A listener's reward is the sum of its weights at the active indices.

use std::fs;
use std::path::Path;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::corpus::{BinVector, Corpus, SongIdx};
use crate::error::{Error, Result};
use crate::{NUM_BINS, NUM_DESCRIPTORS, SONG_FEATURE_DIM, TRANSITION_BLOCK, TRANSITION_FEATURE_DIM};

/// Lower bound every weight is held to after an update.
pub const MIN_WEIGHT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SongFeatures {
    indices: [u16; NUM_DESCRIPTORS],
}

impl SongFeatures {
    pub fn indices(&self) -> &[u16; NUM_DESCRIPTORS] {
        &self.indices
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; SONG_FEATURE_DIM];
        self.indices.iter().for_each(|&i| v[i as usize] = 1.0);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransitionFeatures {
    indices: [u16; NUM_DESCRIPTORS],
}

impl TransitionFeatures {
    pub fn indices(&self) -> &[u16; NUM_DESCRIPTORS] {
        &self.indices
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; TRANSITION_FEATURE_DIM];
        self.indices.iter().for_each(|&i| v[i as usize] = 1.0);
        v
    }
}

#[inline]
fn song_index(d: usize, bin: u8) -> usize {
    d * NUM_BINS + bin as usize
}

#[inline]
fn transition_index(d: usize, prev: u8, cur: u8) -> usize {
    d * TRANSITION_BLOCK + prev as usize * NUM_BINS + cur as usize
}

pub fn song_features(bins: &BinVector) -> SongFeatures {
    let mut indices = [0u16; NUM_DESCRIPTORS];
    for (d, idx) in indices.iter_mut().enumerate() {
        *idx = song_index(d, bins[d]) as u16;
    }
    SongFeatures { indices }
}

pub fn transition_features(prev: &BinVector, cur: &BinVector) -> TransitionFeatures {
    let mut indices = [0u16; NUM_DESCRIPTORS];
    for (d, idx) in indices.iter_mut().enumerate() {
        *idx = transition_index(d, prev[d], cur[d]) as u16;
    }
    TransitionFeatures { indices }
}

pub fn song_reward(phi_s: &[f64], features: &SongFeatures) -> f64 {
    features.indices.iter().map(|&i| phi_s[i as usize]).sum()
}

pub fn transition_reward(phi_t: &[f64], features: &TransitionFeatures) -> f64 {
    features.indices.iter().map(|&i| phi_t[i as usize]).sum()
}

/// `r_t(prev, cur)`: utility of hearing `cur` some time after `prev`.
#[inline]
pub fn pair_transition_reward(phi_t: &[f64], prev: &BinVector, cur: &BinVector) -> f64 {
    let mut total = 0.0;
    for d in 0..NUM_DESCRIPTORS {
        total += phi_t[transition_index(d, prev[d], cur[d])];
    }
    total
}

/// Closed-form memory model: the song `i` steps back contributes
/// `r_t / i^2`. `history` is oldest first.
pub fn expected_transition_reward(phi_t: &[f64], corpus: &Corpus, history: &[SongIdx], candidate: SongIdx) -> f64 {
    let cur = corpus.bins(candidate);
    history
        .iter()
        .rev()
        .enumerate()
        .map(|(k, &prev)| {
            let i = (k + 1) as f64;
            pair_transition_reward(phi_t, corpus.bins(prev), cur) / (i * i)
        })
        .sum()
}

/// One draw of the memory model: the song `i` steps back is remembered with
/// probability `1/i` and then contributes `r_t / i`. The previous song is
/// always remembered, so no randomness is consumed for it.
pub fn sampled_transition_reward(
    phi_t: &[f64],
    corpus: &Corpus,
    history: &[SongIdx],
    candidate: SongIdx,
    rng: &mut dyn RngCore,
) -> f64 {
    let cur = corpus.bins(candidate);
    let mut total = 0.0;
    for (k, &prev) in history.iter().rev().enumerate() {
        let i = (k + 1) as f64;
        if k == 0 || rng.random::<f64>() < 1.0 / i {
            total += pair_transition_reward(phi_t, corpus.bins(prev), cur) / i;
        }
    }
    total
}

pub enum RewardMode<'a> {
    Expected,
    Sampled(&'a mut dyn RngCore),
}

/// The 3740 weights of one listener (or of the agent's model of one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListenerParams {
    pub phi_s: Vec<f64>,
    pub phi_t: Vec<f64>,
}

impl ListenerParams {
    pub fn filled(song_weight: f64, transition_weight: f64) -> Self {
        Self {
            phi_s: vec![song_weight; SONG_FEATURE_DIM],
            phi_t: vec![transition_weight; TRANSITION_FEATURE_DIM],
        }
    }

    pub fn zeros() -> Self {
        Self::filled(0.0, 0.0)
    }

    /// Every block uniform and summing to one.
    pub fn uniform() -> Self {
        Self::filled(1.0 / NUM_BINS as f64, 1.0 / TRANSITION_BLOCK as f64)
    }

    pub fn song_reward(&self, corpus: &Corpus, song: SongIdx) -> f64 {
        song_reward(&self.phi_s, &song_features(corpus.bins(song)))
    }

    pub fn pair_reward(&self, corpus: &Corpus, prev: SongIdx, cur: SongIdx) -> f64 {
        pair_transition_reward(&self.phi_t, corpus.bins(prev), corpus.bins(cur))
    }

    pub fn expected_transition_reward(&self, corpus: &Corpus, history: &[SongIdx], song: SongIdx) -> f64 {
        expected_transition_reward(&self.phi_t, corpus, history, song)
    }

    pub fn total_reward(&self, corpus: &Corpus, history: &[SongIdx], song: SongIdx, mode: RewardMode<'_>) -> f64 {
        total_reward(self, corpus, history, song, mode)
    }

    pub fn song_block_sums(&self) -> Vec<f64> {
        self.phi_s.chunks(NUM_BINS).map(|b| b.iter().sum()).collect()
    }

    pub fn transition_block_sums(&self) -> Vec<f64> {
        self.phi_t.chunks(TRANSITION_BLOCK).map(|b| b.iter().sum()).collect()
    }

    pub fn min_weight(&self) -> f64 {
        self.phi_s
            .iter()
            .chain(&self.phi_t)
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest deviation of any block sum from one.
    pub fn max_block_deviation(&self) -> f64 {
        self.song_block_sums()
            .into_iter()
            .chain(self.transition_block_sums())
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Projects every descriptor block onto `{w >= floor, sum w = 1}` by
    /// pinning coordinates at the floor and rescaling the rest.
    pub fn normalize(&mut self, floor: f64) {
        self.phi_s.chunks_mut(NUM_BINS).for_each(|b| normalize_block(b, floor));
        self.phi_t
            .chunks_mut(TRANSITION_BLOCK)
            .for_each(|b| normalize_block(b, floor));
    }

    pub fn to_model_file(&self, corpus_hash: &str) -> ModelFile {
        ModelFile {
            phi_s: self.phi_s.clone(),
            phi_t: self.phi_t.clone(),
            corpus_hash: corpus_hash.to_string(),
        }
    }
}

pub(crate) fn normalize_block(block: &mut [f64], floor: f64) {
    let n = block.len();
    let mut pinned = vec![false; n];
    for x in block.iter_mut() {
        if !x.is_finite() || *x < floor {
            *x = floor;
        }
    }
    loop {
        let pinned_mass = pinned.iter().filter(|&&p| p).count() as f64 * floor;
        let free_sum: f64 = block.iter().zip(&pinned).filter(|(_, &p)| !p).map(|(x, _)| *x).sum();
        let target = 1.0 - pinned_mass;
        if free_sum <= 0.0 {
            let free = pinned.iter().filter(|&&p| !p).count().max(1) as f64;
            block
                .iter_mut()
                .zip(&pinned)
                .filter(|(_, &p)| !p)
                .for_each(|(x, _)| *x = target / free);
            return;
        }
        let scale = target / free_sum;
        let mut newly_pinned = false;
        for (x, p) in block.iter_mut().zip(pinned.iter_mut()) {
            if *p {
                continue;
            }
            if *x * scale < floor {
                *x = floor;
                *p = true;
                newly_pinned = true;
            }
        }
        if !newly_pinned {
            block
                .iter_mut()
                .zip(&pinned)
                .filter(|(_, &p)| !p)
                .for_each(|(x, _)| *x *= scale);
            return;
        }
    }
}

pub fn total_reward(
    params: &ListenerParams,
    corpus: &Corpus,
    history: &[SongIdx],
    song: SongIdx,
    mode: RewardMode<'_>,
) -> f64 {
    let rs = params.song_reward(corpus, song);
    let rt = match mode {
        RewardMode::Expected => expected_transition_reward(&params.phi_t, corpus, history, song),
        RewardMode::Sampled(rng) => sampled_transition_reward(&params.phi_t, corpus, history, song, rng),
    };
    rs + rt
}

/// On-disk listener model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub phi_s: Vec<f64>,
    pub phi_t: Vec<f64>,
    pub corpus_hash: String,
}

impl ModelFile {
    pub fn into_params(self) -> Result<(ListenerParams, String)> {
        if self.phi_s.len() != SONG_FEATURE_DIM {
            return Err(Error::Model(format!(
                "phi_s has {} entries, expected {SONG_FEATURE_DIM}",
                self.phi_s.len()
            )));
        }
        if self.phi_t.len() != TRANSITION_FEATURE_DIM {
            return Err(Error::Model(format!(
                "phi_t has {} entries, expected {TRANSITION_FEATURE_DIM}",
                self.phi_t.len()
            )));
        }
        Ok((
            ListenerParams {
                phi_s: self.phi_s,
                phi_t: self.phi_t,
            },
            self.corpus_hash,
        ))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
