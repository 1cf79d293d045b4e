//! Per-descriptor transition profiles of two playlist sets.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{generate_synthetic_corpus, Corpus, Playlist};
use crate::error::{Error, Result};
use crate::experiments::stats::percentile_interval;
use crate::seed;
use crate::NUM_DESCRIPTORS;

pub const DEFAULT_PROFILE_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Estimate {
    pub fn overlaps(&self, other: &Estimate) -> bool {
        self.ci_low <= other.ci_high && other.ci_low <= self.ci_high
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureProfile {
    pub descriptor: usize,
    pub fair: Estimate,
    pub poor: Estimate,
    pub discriminative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionProfile {
    pub features: Vec<FeatureProfile>,
    pub n_discriminative: usize,
    pub n_fair_transitions: usize,
    pub n_poor_transitions: usize,
    pub n_resamples: usize,
    pub seed: u64,
}

fn transition_deltas(corpus: &Corpus, playlists: &[Playlist]) -> Result<Vec<[f64; NUM_DESCRIPTORS]>> {
    let mut deltas = Vec::new();
    for playlist in playlists {
        if playlist.song_ids.len() < 2 {
            return Err(Error::invalid("every profiled playlist needs at least two songs"));
        }
        let idx = playlist.resolve(corpus)?;
        for w in idx.windows(2) {
            let (a, b) = (&corpus.song(w[0]).descriptors, &corpus.song(w[1]).descriptors);
            let mut d = [0.0; NUM_DESCRIPTORS];
            for (k, slot) in d.iter_mut().enumerate() {
                *slot = (a[k] - b[k]).abs();
            }
            deltas.push(d);
        }
    }
    if deltas.is_empty() {
        return Err(Error::invalid("empty transition set"));
    }
    Ok(deltas)
}

fn estimate(deltas: &[[f64; NUM_DESCRIPTORS]], n_resamples: usize, seed_value: u64) -> Vec<Estimate> {
    let n = deltas.len();
    let mut means = vec![0.0; NUM_DESCRIPTORS];
    for d in deltas {
        for k in 0..NUM_DESCRIPTORS {
            means[k] += d[k];
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    let mut rng = seed::rng(seed_value);
    let mut resampled: Vec<Vec<f64>> = (0..NUM_DESCRIPTORS).map(|_| Vec::with_capacity(n_resamples)).collect();
    for _ in 0..n_resamples {
        let mut acc = [0.0; NUM_DESCRIPTORS];
        for _ in 0..n {
            let d = &deltas[rng.random_range(0..n)];
            for k in 0..NUM_DESCRIPTORS {
                acc[k] += d[k];
            }
        }
        for k in 0..NUM_DESCRIPTORS {
            resampled[k].push(acc[k] / n as f64);
        }
    }
    (0..NUM_DESCRIPTORS)
        .map(|k| {
            let (ci_low, ci_high) = percentile_interval(&resampled[k], 25, 975).unwrap_or((means[k], means[k]));
            Estimate {
                mean: means[k],
                ci_low,
                ci_high,
            }
        })
        .collect()
}

/// Mean absolute descriptor change over consecutive pairs in each set, with
/// 95% percentile-bootstrap intervals. Both sets resample from the same seed.
pub fn transition_profile(
    corpus: &Corpus,
    fair: &[Playlist],
    poor: &[Playlist],
    n_resamples: usize,
    seed_value: u64,
) -> Result<TransitionProfile> {
    if n_resamples == 0 {
        return Err(Error::invalid("need at least one bootstrap resample"));
    }
    let fair_deltas = transition_deltas(corpus, fair)?;
    let poor_deltas = transition_deltas(corpus, poor)?;
    let fair_est = estimate(&fair_deltas, n_resamples, seed_value);
    let poor_est = estimate(&poor_deltas, n_resamples, seed_value);
    let features: Vec<FeatureProfile> = (0..NUM_DESCRIPTORS)
        .map(|k| FeatureProfile {
            descriptor: k,
            fair: fair_est[k],
            poor: poor_est[k],
            discriminative: !fair_est[k].overlaps(&poor_est[k]),
        })
        .collect();
    Ok(TransitionProfile {
        n_discriminative: features.iter().filter(|f| f.discriminative).count(),
        features,
        n_fair_transitions: fair_deltas.len(),
        n_poor_transitions: poor_deltas.len(),
        n_resamples,
        seed: seed_value,
    })
}

/// A small album-structured corpus with `n_albums` single-album artists of
/// `songs_per_album` songs each, plus album-order playlists (fair) and one
/// playlist per round that interleaves the albums in random order (poor).
pub fn album_profile_fixture(
    n_albums: usize,
    songs_per_album: usize,
    seed_value: u64,
) -> Result<(Corpus, Vec<Playlist>, Vec<Playlist>)> {
    if n_albums < 2 || songs_per_album < 2 {
        return Err(Error::invalid("fixture needs at least two albums of two songs"));
    }
    let corpus = generate_synthetic_corpus(
        n_albums * songs_per_album,
        n_albums,
        1,
        seed::derive(seed_value, &["profile-corpus"]),
    )?;
    let mut albums: Vec<Vec<String>> = vec![Vec::new(); n_albums];
    for song in corpus.songs() {
        let a = corpus
            .artist_index()
            .keys()
            .position(|k| *k == song.artist)
            .expect("artist indexed");
        albums[a].push(song.id.clone());
    }
    let fair = albums
        .iter()
        .map(|ids| Playlist {
            song_ids: ids.clone(),
            source: "fair".into(),
        })
        .collect();

    let mut rng = seed::rng(seed::derive(seed_value, &["profile-interleave"]));
    let mut poor_ids = Vec::with_capacity(n_albums * songs_per_album);
    let mut last: Option<usize> = None;
    #[allow(clippy::needless_range_loop)]
    for round in 0..songs_per_album {
        let mut order: Vec<usize> = (0..n_albums).collect();
        order.shuffle(&mut rng);
        if Some(order[0]) == last {
            order.swap(0, 1);
        }
        poor_ids.extend(order.iter().map(|&a| albums[a][round].clone()));
        last = order.last().copied();
    }
    let poor = vec![Playlist {
        song_ids: poor_ids,
        source: "poor".into(),
    }];
    Ok((corpus, fair, poor))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sets_have_no_discriminative_features() {
        let (corpus, fair, _) = album_profile_fixture(5, 4, 1).unwrap();
        let p = transition_profile(&corpus, &fair, &fair, 200, 3).unwrap();
        assert_eq!(p.n_discriminative, 0);
        for f in &p.features {
            assert_eq!(f.fair, f.poor);
        }
    }

    #[test]
    fn single_transition_collapses() {
        let (corpus, fair, _) = album_profile_fixture(5, 4, 1).unwrap();
        let one = vec![Playlist {
            song_ids: fair[0].song_ids[..2].to_vec(),
            source: "x".into(),
        }];
        let p = transition_profile(&corpus, &one, &one, 50, 0).unwrap();
        let (a, b) = (corpus.song(0), corpus.song(1));
        for f in &p.features {
            let d = (a.descriptors[f.descriptor] - b.descriptors[f.descriptor]).abs();
            assert_eq!(f.fair.mean, d);
            assert_eq!((f.fair.ci_low, f.fair.ci_high), (d, d));
        }
    }

    #[test]
    fn interleaving_never_repeats_an_album() {
        let (corpus, _, poor) = album_profile_fixture(5, 4, 7).unwrap();
        let ids = &poor[0].song_ids;
        assert_eq!(ids.len(), 20);
        for w in ids.windows(2) {
            let (a, b) = (corpus.resolve(&w[0]).unwrap(), corpus.resolve(&w[1]).unwrap());
            assert_ne!(corpus.song(a).album, corpus.song(b).album);
        }
    }

    #[test]
    fn errors() {
        let (corpus, fair, _) = album_profile_fixture(5, 4, 1).unwrap();
        let short = vec![Playlist {
            song_ids: vec![fair[0].song_ids[0].clone()],
            source: "x".into(),
        }];
        assert!(transition_profile(&corpus, &short, &fair, 10, 0).is_err());
        assert!(transition_profile(&corpus, &[], &fair, 10, 0).is_err());
    }
}
