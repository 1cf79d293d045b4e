//! Adaptive playlist generation as an episodic decision process.
//!
//! A listener is modeled by a factored linear reward over songs and over
//! song-to-song transitions. The agent learns those weights online from
//! scalar feedback and plans the next song with random trajectory search.
//!
//! Module map:
//! - [`corpus`]: songs, decile quantization, distances, synthetic data.
//! - [`reward`]: sparse binary encodings and the listener reward functions.
//! - [`selection`]: delta-medoids representative selection and k-means.
//! - [`listener`]: simulated listeners built from playlist clusters.
//! - [`agent`]: initialization, credit-assignment updates, planning, baselines.
//! - [`experiments`]: benchmark harness, transition profiles, statistics.

pub mod agent;
pub mod corpus;
pub mod error;
pub mod experiments;
pub mod listener;
pub mod reward;
pub mod seed;
pub mod selection;

pub use error::{Error, Result};

/// Number of audio descriptors per song.
pub const NUM_DESCRIPTORS: usize = 34;
/// Percentile bins per descriptor.
pub const NUM_BINS: usize = 10;
/// Width of one descriptor block in the transition encoding.
pub const TRANSITION_BLOCK: usize = NUM_BINS * NUM_BINS;
/// Length of the song feature vector.
pub const SONG_FEATURE_DIM: usize = NUM_DESCRIPTORS * NUM_BINS;
/// Length of the transition feature vector.
pub const TRANSITION_FEATURE_DIM: usize = NUM_DESCRIPTORS * TRANSITION_BLOCK;
