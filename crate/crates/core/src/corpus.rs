//! Song corpus: descriptor vectors, decile quantization, standardized
//! distances, and the file formats and synthetic generators that feed it.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::{seed, NUM_BINS, NUM_DESCRIPTORS};

/// Position of a song inside its [`Corpus`].
pub type SongIdx = usize;

/// Decile bin per descriptor, each in `0..10`.
pub type BinVector = [u8; NUM_DESCRIPTORS];

/// Number of interior cut points per descriptor.
pub const NUM_EDGES: usize = NUM_BINS - 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Song {
    pub id: String,
    pub title: String,
    pub artist: String,
    pub album: String,
    /// Tempo, loudness, pitch-dominance and timbre summaries, in that order.
    pub descriptors: Vec<f64>,
}

impl Song {
    fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::InvalidSong {
                id: self.id.clone(),
                message: "empty id".into(),
            });
        }
        if self.descriptors.len() != NUM_DESCRIPTORS {
            return Err(Error::InvalidSong {
                id: self.id.clone(),
                message: format!(
                    "expected {NUM_DESCRIPTORS} descriptors, found {}",
                    self.descriptors.len()
                ),
            });
        }
        if let Some(d) = self.descriptors.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSong {
                id: self.id.clone(),
                message: format!("descriptor {d} is not finite"),
            });
        }
        Ok(())
    }
}

/// Nearest-rank percentile: the order statistic with exactly `floor(p*n)`
/// values ranked below it. `sorted` must be ascending and nonempty.
pub fn nearest_rank(sorted: &[f64], numerator: usize, denominator: usize) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = (numerator * sorted.len()) / denominator;
    sorted[rank.min(sorted.len() - 1)]
}

/// Per-descriptor decile cut points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantizer {
    edges: Vec<[f64; NUM_EDGES]>,
}

impl Quantizer {
    pub fn from_edges(edges: Vec<[f64; NUM_EDGES]>) -> Result<Self> {
        if edges.len() != NUM_DESCRIPTORS {
            return Err(Error::invalid(format!(
                "quantizer needs {NUM_DESCRIPTORS} rows, got {}",
                edges.len()
            )));
        }
        for (d, row) in edges.iter().enumerate() {
            if row.windows(2).any(|w| w[0].is_nan() || w[1].is_nan() || w[0] > w[1]) {
                return Err(Error::invalid(format!("quantizer row {d} is not nondecreasing")));
            }
        }
        Ok(Self { edges })
    }

    pub fn edges(&self, descriptor: usize) -> &[f64; NUM_EDGES] {
        &self.edges[descriptor]
    }

    /// Right-closed bin: a value equal to an edge falls in the higher bin.
    pub fn bin_value(&self, descriptor: usize, value: f64) -> u8 {
        let count = self.edges[descriptor].iter().filter(|&&e| e <= value).count();
        count.min(NUM_BINS - 1) as u8
    }

    pub fn bin(&self, song: &Song) -> BinVector {
        let mut bins = [0u8; NUM_DESCRIPTORS];
        for (d, b) in bins.iter_mut().enumerate() {
            *b = self.bin_value(d, song.descriptors[d]);
        }
        bins
    }
}

/// Decile edges at 10%, ..., 90% of each descriptor's empirical distribution.
pub fn compute_quantizer(songs: &[Song]) -> Result<Quantizer> {
    if songs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut edges = Vec::with_capacity(NUM_DESCRIPTORS);
    let mut column = Vec::with_capacity(songs.len());
    for d in 0..NUM_DESCRIPTORS {
        column.clear();
        column.extend(songs.iter().map(|s| s.descriptors[d]));
        column.sort_by(f64::total_cmp);
        let mut row = [0.0; NUM_EDGES];
        for (k, edge) in row.iter_mut().enumerate() {
            *edge = nearest_rank(&column, k + 1, NUM_BINS);
        }
        edges.push(row);
    }
    Quantizer::from_edges(edges)
}

pub fn bin(song: &Song, quantizer: &Quantizer) -> BinVector {
    quantizer.bin(song)
}

/// Population mean and standard deviation per descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorStats {
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
}

impl DescriptorStats {
    pub fn from_songs(songs: &[Song]) -> Result<Self> {
        if songs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let n = songs.len() as f64;
        let mut mean = vec![0.0; NUM_DESCRIPTORS];
        for s in songs {
            for (m, v) in mean.iter_mut().zip(&s.descriptors) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; NUM_DESCRIPTORS];
        for s in songs {
            for d in 0..NUM_DESCRIPTORS {
                let dev = s.descriptors[d] - mean[d];
                var[d] += dev * dev;
            }
        }
        let stddev = var.into_iter().map(|v| (v / n).sqrt()).collect();
        Ok(Self { mean, stddev })
    }

    /// z-score of one descriptor value; zero-spread descriptors map to 0.
    pub fn standardize(&self, descriptor: usize, value: f64) -> f64 {
        let sd = self.stddev[descriptor];
        if sd > 0.0 {
            (value - self.mean[descriptor]) / sd
        } else {
            0.0
        }
    }

    pub fn standardize_song(&self, song: &Song) -> Vec<f64> {
        (0..NUM_DESCRIPTORS)
            .map(|d| self.standardize(d, song.descriptors[d]))
            .collect()
    }
}

/// Euclidean distance over z-standardized descriptors.
pub fn distance(a: &Song, b: &Song, stats: &DescriptorStats) -> f64 {
    (0..NUM_DESCRIPTORS)
        .map(|d| {
            let diff = stats.standardize(d, a.descriptors[d]) - stats.standardize(d, b.descriptors[d]);
            diff * diff
        })
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// An immutable song collection with its quantizer and derived indexes.
#[derive(Debug)]
pub struct Corpus {
    songs: Vec<Song>,
    quantizer: Quantizer,
    stats: DescriptorStats,
    bins: Vec<BinVector>,
    standardized: Vec<Vec<f64>>,
    artist_index: BTreeMap<String, Vec<String>>,
    id_index: HashMap<String, SongIdx>,
    hash: String,
    delta: OnceLock<f64>,
}

impl Corpus {
    pub fn new(songs: Vec<Song>) -> Result<Self> {
        if songs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut id_index = HashMap::with_capacity(songs.len());
        for (i, song) in songs.iter().enumerate() {
            song.validate()?;
            if id_index.insert(song.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(song.id.clone()));
            }
        }
        let quantizer = compute_quantizer(&songs)?;
        let stats = DescriptorStats::from_songs(&songs)?;
        let bins = songs.iter().map(|s| quantizer.bin(s)).collect();
        let standardized = songs.iter().map(|s| stats.standardize_song(s)).collect();
        let mut artist_index: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for song in &songs {
            artist_index
                .entry(song.artist.clone())
                .or_default()
                .push(song.id.clone());
        }
        let hash = content_hash(&songs)?;
        Ok(Self {
            songs,
            quantizer,
            stats,
            bins,
            standardized,
            artist_index,
            id_index,
            hash,
            delta: OnceLock::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.songs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.songs.is_empty()
    }

    pub fn songs(&self) -> &[Song] {
        &self.songs
    }

    pub fn song(&self, idx: SongIdx) -> &Song {
        &self.songs[idx]
    }

    pub fn id(&self, idx: SongIdx) -> &str {
        &self.songs[idx].id
    }

    pub fn index_of(&self, id: &str) -> Option<SongIdx> {
        self.id_index.get(id).copied()
    }

    pub fn resolve(&self, id: &str) -> Result<SongIdx> {
        self.index_of(id).ok_or_else(|| Error::UnknownSong(id.to_string()))
    }

    pub fn quantizer(&self) -> &Quantizer {
        &self.quantizer
    }

    pub fn stats(&self) -> &DescriptorStats {
        &self.stats
    }

    pub fn bins(&self, idx: SongIdx) -> &BinVector {
        &self.bins[idx]
    }

    pub fn standardized(&self, idx: SongIdx) -> &[f64] {
        &self.standardized[idx]
    }

    pub fn artist_index(&self) -> &BTreeMap<String, Vec<String>> {
        &self.artist_index
    }

    /// SHA-256 of the canonical line-delimited serialization.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn distance(&self, a: SongIdx, b: SongIdx) -> f64 {
        euclidean(&self.standardized[a], &self.standardized[b])
    }

    /// The representative-selection radius, computed once per corpus.
    pub fn delta(&self) -> Result<f64> {
        if let Some(d) = self.delta.get() {
            return Ok(*d);
        }
        let d = crate::selection::delta_from_corpus(self)?;
        Ok(*self.delta.get_or_init(|| d))
    }

    /// Tie-break order used everywhere a choice must be replayable.
    pub fn id_cmp(&self, a: SongIdx, b: SongIdx) -> std::cmp::Ordering {
        self.songs[a].id.cmp(&self.songs[b].id)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        to_jsonl(&self.songs)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }
}

fn to_jsonl(songs: &[Song]) -> Result<String> {
    let mut out = String::new();
    for song in songs {
        out.push_str(&serde_json::to_string(song)?);
        out.push('\n');
    }
    Ok(out)
}

fn content_hash(songs: &[Song]) -> Result<String> {
    let digest = Sha256::digest(to_jsonl(songs)?.as_bytes());
    Ok(hex::encode(digest))
}

#[derive(Deserialize)]
struct SongRecord {
    id: String,
    #[serde(default)]
    title: String,
    #[serde(default)]
    artist: String,
    #[serde(default)]
    album: String,
    descriptors: Vec<serde_json::Value>,
}

/// Parses the line-delimited descriptor format from a string.
pub fn parse_corpus(text: &str) -> Result<Corpus> {
    let mut songs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: SongRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if record.descriptors.len() != NUM_DESCRIPTORS {
            return Err(Error::Schema {
                line: line_no,
                expected: NUM_DESCRIPTORS,
                found: record.descriptors.len(),
            });
        }
        let descriptors = record
            .descriptors
            .iter()
            .enumerate()
            .map(|(d, v)| {
                v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| Error::Parse {
                    line: line_no,
                    message: format!("descriptor {d} is not a finite number"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if record.id.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty song id".into(),
            });
        }
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateId(record.id));
        }
        songs.push(Song {
            id: record.id,
            title: record.title,
            artist: record.artist,
            album: record.album,
            descriptors,
        });
    }
    Corpus::new(songs)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text)
}

/// Maps a latent style vector onto the descriptor layout, keeping each
/// descriptor monotone in its latent coordinate.
fn descriptors_from_latent(l: &[f64; NUM_DESCRIPTORS]) -> Vec<f64> {
    let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mut v = Vec::with_capacity(NUM_DESCRIPTORS);
    // tempo, in beat durations (seconds)
    let beat = 0.5 * (0.2 * l[2]).exp();
    v.push(beat * (1.0 - 0.15 * sigmoid(l[0])));
    v.push(beat * (1.0 + 0.15 * sigmoid(l[1])));
    v.push(beat);
    v.push(0.01 * (0.5 * l[3]).exp());
    // loudness, dB
    let loud = -10.0 + 3.0 * l[6];
    v.push(loud - 4.0 * (0.3 * l[4]).exp());
    v.push(loud + 3.0 * (0.3 * l[5]).exp());
    v.push(loud);
    v.push(9.0 * (0.5 * l[7]).exp());
    // pitch dominance per pitch class, then its variance
    v.extend((8..20).map(|d| sigmoid(l[d])));
    v.push(0.05 * (0.5 * l[20]).exp());
    // timbre basis weights, then timbre variance
    v.extend((21..33).map(|d| 20.0 * l[d]));
    v.push(100.0 * (0.5 * l[33]).exp());
    v
}

fn normal_vec(rng: &mut impl Rng, scale: f64) -> [f64; NUM_DESCRIPTORS] {
    let mut out = [0.0; NUM_DESCRIPTORS];
    for x in out.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *x = scale * z;
    }
    out
}

/// Spread of album centroids around their artist centroid (latent units).
const ALBUM_SPREAD: f64 = 0.5;
/// Spread of songs around their album centroid (latent units).
const SONG_SPREAD: f64 = 0.25;

/// Generates a style-structured corpus: each artist draws a latent centroid,
/// each album perturbs it, and each song perturbs its album. Song ids are
/// zero-padded so that lexical order equals generation order.
pub fn generate_synthetic_corpus(
    n_songs: usize,
    n_artists: usize,
    albums_per_artist: usize,
    seed: u64,
) -> Result<Corpus> {
    if n_songs == 0 {
        return Err(Error::EmptyCorpus);
    }
    if n_artists == 0 || albums_per_artist == 0 {
        return Err(Error::invalid("need at least one artist and one album per artist"));
    }
    let mut rng = seed::rng(seed);
    let n_albums = n_artists * albums_per_artist;
    let mut album_latent = Vec::with_capacity(n_albums);
    for _ in 0..n_artists {
        let artist = normal_vec(&mut rng, 1.0);
        for _ in 0..albums_per_artist {
            let offset = normal_vec(&mut rng, ALBUM_SPREAD);
            let mut album = artist;
            album.iter_mut().zip(offset).for_each(|(a, o)| *a += o);
            album_latent.push(album);
        }
    }
    let width = n_songs.to_string().len().max(5);
    let songs = (0..n_songs)
        .map(|i| {
            let album = i * n_albums / n_songs;
            let artist = album / albums_per_artist;
            let noise = normal_vec(&mut rng, SONG_SPREAD);
            let mut latent = album_latent[album];
            latent.iter_mut().zip(noise).for_each(|(a, o)| *a += o);
            Song {
                id: format!("s{i:0width$}"),
                title: format!("Track {i}"),
                artist: format!("Artist {artist:03}"),
                album: format!("Album {artist:03}-{}", album % albums_per_artist),
                descriptors: descriptors_from_latent(&latent),
            }
        })
        .collect();
    Corpus::new(songs)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Playlist {
    pub song_ids: Vec<String>,
    pub source: String,
}

impl Playlist {
    pub fn resolve(&self, corpus: &Corpus) -> Result<Vec<SongIdx>> {
        self.song_ids.iter().map(|id| corpus.resolve(id)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct PlaylistLoad {
    pub playlists: Vec<Playlist>,
    /// Song ids that did not resolve against the corpus.
    pub dropped_ids: usize,
    /// Playlists discarded for having fewer than two resolvable songs.
    pub discarded_playlists: usize,
}

pub fn parse_playlists(reader: impl BufRead, corpus: &Corpus, source: &str) -> std::io::Result<PlaylistLoad> {
    let mut out = PlaylistLoad {
        playlists: Vec::new(),
        dropped_ids: 0,
        discarded_playlists: 0,
    };
    for line in reader.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut ids = Vec::new();
        for id in line.split_whitespace() {
            if corpus.index_of(id).is_some() {
                ids.push(id.to_string());
            } else {
                out.dropped_ids += 1;
            }
        }
        if ids.len() < 2 {
            out.discarded_playlists += 1;
            continue;
        }
        out.playlists.push(Playlist {
            song_ids: ids,
            source: source.to_string(),
        });
    }
    if out.dropped_ids > 0 {
        tracing::warn!(dropped = out.dropped_ids, source, "unresolved song ids dropped");
    }
    Ok(out)
}

pub fn load_playlists(path: impl AsRef<Path>, corpus: &Corpus) -> Result<PlaylistLoad> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let source = path.display().to_string();
    parse_playlists(BufReader::new(file), corpus, &source).map_err(|e| Error::io(path, e))
}

pub fn save_playlists(path: impl AsRef<Path>, playlists: &[Playlist]) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for p in playlists {
        writeln!(file, "{}", p.song_ids.join(" ")).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Random-walk playlists. With probability `coherence` each step stays in
/// the current song's style (same album, else same artist); otherwise it
/// jumps to a uniformly random song. Songs are not repeated within a
/// playlist while unplayed songs remain.
pub fn generate_synthetic_playlists(
    corpus: &Corpus,
    n_playlists: usize,
    length: usize,
    coherence: f64,
    seed: u64,
) -> Result<Vec<Playlist>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if !(0.0..=1.0).contains(&coherence) {
        return Err(Error::invalid("coherence must lie in [0, 1]"));
    }
    let mut by_album: HashMap<&str, Vec<SongIdx>> = HashMap::new();
    let mut by_artist: HashMap<&str, Vec<SongIdx>> = HashMap::new();
    for (i, s) in corpus.songs().iter().enumerate() {
        by_album.entry(s.album.as_str()).or_default().push(i);
        by_artist.entry(s.artist.as_str()).or_default().push(i);
    }
    let all: Vec<SongIdx> = (0..corpus.len()).collect();
    let mut rng = seed::rng(seed);
    let mut playlists = Vec::with_capacity(n_playlists);
    for p in 0..n_playlists {
        let mut used = vec![false; corpus.len()];
        let mut seq: Vec<SongIdx> = Vec::with_capacity(length);
        while seq.len() < length {
            let exhausted = seq.len() >= corpus.len();
            let fresh = |pool: &[SongIdx], used: &[bool]| -> Vec<SongIdx> {
                pool.iter().copied().filter(|&i| exhausted || !used[i]).collect()
            };
            let next = match seq.last() {
                Some(&prev) if rng.random::<f64>() < coherence => {
                    let song = corpus.song(prev);
                    let album = fresh(&by_album[song.album.as_str()], &used);
                    let pool = if album.is_empty() {
                        fresh(&by_artist[song.artist.as_str()], &used)
                    } else {
                        album
                    };
                    let pool = if pool.is_empty() { fresh(&all, &used) } else { pool };
                    *pool.choose(&mut rng).expect("nonempty pool")
                }
                _ => {
                    let pool = fresh(&all, &used);
                    *pool.choose(&mut rng).expect("nonempty pool")
                }
            };
            used[next] = true;
            seq.push(next);
        }
        playlists.push(Playlist {
            song_ids: seq.iter().map(|&i| corpus.id(i).to_string()).collect(),
            source: format!("synthetic:{p}"),
        });
    }
    Ok(playlists)
}
