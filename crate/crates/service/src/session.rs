//! Live listening sessions, event-sourced.
//!
//! Every state change is expressed as an [`Event`]; the live path decides an
//! event, appends it to the session log and then applies it, and recovery
//! applies the logged events in order. Song choices are never recomputed on
//! replay: issued events carry the song and the rng position after the pick.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use djmc_core::agent::{
    greedy_next, plan_next, random_next, AgentKind, AgentModel, CreditAssignment, PlanConfig, SessionState,
};
use djmc_core::corpus::{Corpus, SongIdx};
use djmc_core::reward::ListenerParams;
use djmc_core::seed::{self, ChaCha8Rng};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LivePhase {
    Exploring,
    Exploiting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SongCard {
    pub id: String,
    pub title: String,
    pub artist: String,
    pub album: String,
    pub step: usize,
    pub phase: LivePhase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    #[serde(flatten)]
    pub song: SongCard,
    pub song_like: Option<bool>,
    pub transition_like: Option<bool>,
    pub reward: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub song_like: bool,
    pub transition_like: bool,
    /// Step the feedback refers to; a mismatch is rejected as a double submit.
    #[serde(default)]
    pub step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created {
        session_id: String,
        corpus: String,
        corpus_hash: String,
        agent: AgentKind,
        length: usize,
        explore: usize,
        plan: PlanConfig,
        seed: u64,
    },
    Issued {
        step: usize,
        song_id: String,
        rng_word_pos: u64,
    },
    Feedback {
        step: usize,
        song_like: bool,
        transition_like: bool,
        reward: f64,
    },
}

/// Validated creation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionSpec {
    pub corpus: String,
    pub agent: AgentKind,
    pub length: usize,
    pub explore: usize,
    pub plan: PlanConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub songs: usize,
    pub song_likes: usize,
    /// Steps where a transition could be judged (all but the first song).
    pub transitions: usize,
    pub transition_likes: usize,
    pub song_like_rate: Option<f64>,
    pub transition_like_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub exploring: PhaseStats,
    pub exploiting: PhaseStats,
    pub total_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSums {
    pub song: Vec<f64>,
    pub transition: Vec<f64>,
    pub max_deviation: f64,
    pub min_weight: f64,
}

impl BlockSums {
    pub fn of(params: &ListenerParams) -> Self {
        Self {
            song: params.song_block_sums(),
            transition: params.transition_block_sums(),
            max_deviation: params.max_block_deviation(),
            min_weight: params.min_weight(),
        }
    }
}

/// Read-only snapshot returned by `GET /sessions/{id}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub corpus: String,
    pub agent: AgentKind,
    pub length: usize,
    pub explore: usize,
    pub plan: PlanConfig,
    pub step: usize,
    pub complete: bool,
    pub transcript: Vec<TranscriptEntry>,
    pub summary: Summary,
    pub block_sums: BlockSums,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FeedbackOutcome {
    Playing {
        reward: f64,
        song: SongCard,
    },
    Complete {
        reward: f64,
        summary: Summary,
        transcript: Vec<TranscriptEntry>,
    },
}

#[derive(Debug, Clone)]
pub struct LiveSession {
    pub id: String,
    pub corpus_name: String,
    pub corpus: Arc<Corpus>,
    pub agent: AgentKind,
    pub length: usize,
    pub explore: usize,
    pub plan: PlanConfig,
    pub seed: u64,
    pub model: AgentModel,
    pub state: SessionState,
    rng: ChaCha8Rng,
    transcript: Vec<TranscriptEntry>,
    log_path: PathBuf,
}

impl PartialEq for LiveSession {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.corpus_name == other.corpus_name
            && self.agent == other.agent
            && self.length == other.length
            && self.explore == other.explore
            && self.plan == other.plan
            && self.seed == other.seed
            && self.model == other.model
            && self.state == other.state
            && self.rng == other.rng
            && self.transcript == other.transcript
    }
}

fn phase_at(step: usize, explore: usize) -> LivePhase {
    if step <= explore {
        LivePhase::Exploring
    } else {
        LivePhase::Exploiting
    }
}

fn append_events(path: &Path, events: &[Event]) -> Result<(), ServiceError> {
    let mut body = String::new();
    for e in events {
        body.push_str(&serde_json::to_string(e).map_err(ServiceError::internal)?);
        body.push('\n');
    }
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(ServiceError::internal)?;
    file.write_all(body.as_bytes()).map_err(ServiceError::internal)?;
    file.sync_data().map_err(ServiceError::internal)
}

impl LiveSession {
    /// Validates `spec`, issues the first song and persists both events.
    pub fn create(
        id: String,
        spec: SessionSpec,
        corpus: Arc<Corpus>,
        master_seed: u64,
        log_dir: &Path,
    ) -> Result<Self, ServiceError> {
        if spec.length == 0 || spec.length > corpus.len() {
            return Err(ServiceError::BadRequest(format!(
                "K must lie in [1, {}], got {}",
                corpus.len(),
                spec.length
            )));
        }
        if spec.explore > spec.length {
            return Err(ServiceError::BadRequest(format!(
                "explore budget {} exceeds K = {}",
                spec.explore, spec.length
            )));
        }
        if spec.agent == AgentKind::Random {
            return Err(ServiceError::BadRequest(
                "live sessions use the djmc or greedy agent".into(),
            ));
        }
        spec.plan
            .validate()
            .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let created = Event::Created {
            session_id: id.clone(),
            corpus: spec.corpus,
            corpus_hash: corpus.hash().to_string(),
            agent: spec.agent,
            length: spec.length,
            explore: spec.explore,
            plan: spec.plan,
            seed: seed::derive(master_seed, &["session", &id]),
        };
        let log_path = log_dir.join(format!("{id}.jsonl"));
        let mut session = Self::from_created(&created, corpus, log_path)?;
        let issued = session.decide_next()?;
        append_events(&session.log_path, &[created, issued.clone()])?;
        session.apply(&issued)?;
        Ok(session)
    }

    fn from_created(event: &Event, corpus: Arc<Corpus>, log_path: PathBuf) -> Result<Self, ServiceError> {
        let Event::Created {
            session_id,
            corpus: corpus_name,
            corpus_hash,
            agent,
            length,
            explore,
            plan,
            seed: session_seed,
        } = event
        else {
            return Err(ServiceError::Internal(
                "session log must start with a created event".into(),
            ));
        };
        if corpus_hash != corpus.hash() {
            return Err(ServiceError::Internal(format!(
                "corpus {corpus_name} changed since session {session_id} was created"
            )));
        }
        let credit = match agent {
            AgentKind::Greedy => CreditAssignment::SongOnly,
            _ => CreditAssignment::Proportional,
        };
        Ok(Self {
            id: session_id.clone(),
            corpus_name: corpus_name.clone(),
            state: SessionState::new(corpus.len(), *length).map_err(ServiceError::internal)?,
            corpus,
            agent: *agent,
            length: *length,
            explore: *explore,
            plan: plan.clone(),
            seed: *session_seed,
            model: AgentModel::new(ListenerParams::uniform(), credit),
            rng: seed::rng(*session_seed),
            transcript: Vec::new(),
            log_path,
        })
    }

    /// Number of songs issued so far.
    pub fn step(&self) -> usize {
        self.transcript.len()
    }

    pub fn feedback_count(&self) -> usize {
        self.model.step()
    }

    pub fn is_complete(&self) -> bool {
        self.feedback_count() == self.length
    }

    pub fn current_song(&self) -> Option<&SongCard> {
        self.transcript.last().map(|e| &e.song)
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    pub fn card(&self, song: SongIdx, step: usize) -> SongCard {
        let s = self.corpus.song(song);
        SongCard {
            id: s.id.clone(),
            title: s.title.clone(),
            artist: s.artist.clone(),
            album: s.album.clone(),
            step,
            phase: phase_at(step, self.explore),
        }
    }

    /// Picks the song for the next step without changing the session state
    /// except for the rng.
    fn decide_next(&mut self) -> Result<Event, ServiceError> {
        let step = self.step() + 1;
        let song = match phase_at(step, self.explore) {
            LivePhase::Exploring => random_next(&self.corpus, &self.state, &mut self.rng),
            LivePhase::Exploiting if step == 1 => random_next(&self.corpus, &self.state, &mut self.rng),
            LivePhase::Exploiting => match self.agent {
                AgentKind::Greedy => greedy_next(&self.model.params, &self.corpus, &self.state),
                _ => plan_next(&self.model.params, &self.corpus, &self.state, &self.plan, &mut self.rng),
            },
        }
        .map_err(ServiceError::internal)?;
        Ok(Event::Issued {
            step,
            song_id: self.corpus.id(song).to_string(),
            rng_word_pos: u64::try_from(self.rng.get_word_pos()).map_err(ServiceError::internal)?,
        })
    }

    fn apply(&mut self, event: &Event) -> Result<(), ServiceError> {
        match event {
            Event::Created { .. } => Err(ServiceError::Internal("duplicate created event".into())),
            Event::Issued {
                step,
                song_id,
                rng_word_pos,
            } => {
                if *step != self.step() + 1 || self.feedback_count() != self.step() {
                    return Err(ServiceError::Internal(format!("out-of-order issue of step {step}")));
                }
                let song = self.corpus.resolve(song_id).map_err(ServiceError::internal)?;
                self.state.push(song).map_err(ServiceError::internal)?;
                self.rng.set_word_pos(u128::from(*rng_word_pos));
                let card = self.card(song, *step);
                self.transcript.push(TranscriptEntry {
                    song: card,
                    song_like: None,
                    transition_like: None,
                    reward: None,
                });
                Ok(())
            }
            Event::Feedback {
                step,
                song_like,
                transition_like,
                reward,
            } => {
                if *step != self.step() || self.feedback_count() + 1 != self.step() {
                    return Err(ServiceError::Internal(format!("out-of-order feedback for step {step}")));
                }
                let history = self.state.history();
                let (&song, before) = history.split_last().expect("a song was issued");
                self.model.update(&self.corpus, song, before, *reward);
                let entry = self.transcript.last_mut().expect("a song was issued");
                entry.song_like = Some(*song_like);
                entry.transition_like = Some(*transition_like);
                entry.reward = Some(*reward);
                Ok(())
            }
        }
    }

    /// Applies listener feedback for the current song, persists the
    /// resulting events and issues the next song unless the session ends.
    pub fn submit(&mut self, feedback: Feedback) -> Result<FeedbackOutcome, ServiceError> {
        if self.is_complete() {
            return Err(ServiceError::Conflict("session is already complete".into()));
        }
        let step = self.step();
        if let Some(claimed) = feedback.step {
            if claimed != step {
                return Err(ServiceError::Conflict(format!(
                    "feedback for step {claimed} but the current step is {step}"
                )));
            }
        }
        // The first song has no incoming transition.
        let transition_like = step > 1 && feedback.transition_like;
        let reward = f64::from(u8::from(feedback.song_like) + u8::from(transition_like));
        let fb = Event::Feedback {
            step,
            song_like: feedback.song_like,
            transition_like,
            reward,
        };
        let mut next = self.clone();
        next.apply(&fb)?;
        let mut events = vec![fb];
        if !next.is_complete() {
            let issued = next.decide_next()?;
            next.apply(&issued)?;
            events.push(issued);
        }
        append_events(&self.log_path, &events)?;
        *self = next;
        Ok(if self.is_complete() {
            FeedbackOutcome::Complete {
                reward,
                summary: self.summary(),
                transcript: self.transcript.clone(),
            }
        } else {
            FeedbackOutcome::Playing {
                reward,
                song: self.current_song().expect("issued").clone(),
            }
        })
    }

    pub fn summary(&self) -> Summary {
        let mut exploring = PhaseStats::default();
        let mut exploiting = PhaseStats::default();
        let mut total_reward = 0.0;
        for e in &self.transcript {
            let Some(song_like) = e.song_like else { continue };
            let stats = match e.song.phase {
                LivePhase::Exploring => &mut exploring,
                LivePhase::Exploiting => &mut exploiting,
            };
            stats.songs += 1;
            stats.song_likes += usize::from(song_like);
            if e.song.step > 1 {
                stats.transitions += 1;
                stats.transition_likes += usize::from(e.transition_like == Some(true));
            }
            total_reward += e.reward.unwrap_or(0.0);
        }
        for s in [&mut exploring, &mut exploiting] {
            s.song_like_rate = (s.songs > 0).then(|| s.song_likes as f64 / s.songs as f64);
            s.transition_like_rate = (s.transitions > 0).then(|| s.transition_likes as f64 / s.transitions as f64);
        }
        Summary {
            exploring,
            exploiting,
            total_reward,
        }
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            session_id: self.id.clone(),
            corpus: self.corpus_name.clone(),
            agent: self.agent,
            length: self.length,
            explore: self.explore,
            plan: self.plan.clone(),
            step: self.step(),
            complete: self.is_complete(),
            transcript: self.transcript.clone(),
            summary: self.summary(),
            block_sums: BlockSums::of(&self.model.params),
        }
    }

    /// Rebuilds a session from its events. `lookup` maps a corpus name to
    /// the loaded corpus.
    pub fn replay(
        events: &[Event],
        log_path: PathBuf,
        lookup: impl Fn(&str) -> Option<Arc<Corpus>>,
    ) -> Result<Self, ServiceError> {
        let (first, rest) = events
            .split_first()
            .ok_or_else(|| ServiceError::Internal("empty session log".into()))?;
        let Event::Created { corpus, .. } = first else {
            return Err(ServiceError::Internal(
                "session log must start with a created event".into(),
            ));
        };
        let corpus = lookup(corpus).ok_or_else(|| ServiceError::Internal(format!("unknown corpus {corpus}")))?;
        let mut session = Self::from_created(first, corpus, log_path)?;
        for e in rest {
            session.apply(e)?;
        }
        Ok(session)
    }

    /// Reads a session log. A torn final line (from a crash mid-append) is
    /// ignored; any other malformed line is an error.
    pub fn read_log(path: &Path) -> Result<Vec<Event>, ServiceError> {
        let file = File::open(path).map_err(ServiceError::internal)?;
        let lines: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<Result<_, _>>()
            .map_err(ServiceError::internal)?;
        let mut events = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(line) {
                Ok(e) => events.push(e),
                Err(_) if i + 1 == lines.len() => {
                    tracing::warn!(path = %path.display(), "ignoring torn final log line");
                }
                Err(e) => return Err(ServiceError::Internal(format!("{}:{}: {e}", path.display(), i + 1))),
            }
        }
        Ok(events)
    }

    /// Loads every `*.jsonl` session log in `dir`, sorted by file name.
    pub fn load_all(
        dir: &Path,
        lookup: impl Fn(&str) -> Option<Arc<Corpus>>,
    ) -> Result<Vec<LiveSession>, ServiceError> {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(ServiceError::internal)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        paths
            .into_iter()
            .map(|p| {
                let events = Self::read_log(&p)?;
                Self::replay(&events, p, &lookup)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use djmc_core::corpus::generate_synthetic_corpus;

    fn spec(length: usize, explore: usize) -> SessionSpec {
        SessionSpec {
            corpus: "default".into(),
            agent: AgentKind::Djmc,
            length,
            explore,
            plan: PlanConfig {
                horizon: 3,
                budget: 20,
                ..PlanConfig::default()
            },
        }
    }

    fn setup() -> (Arc<Corpus>, tempfile::TempDir) {
        (
            Arc::new(generate_synthetic_corpus(40, 4, 2, 3).unwrap()),
            tempfile::tempdir().unwrap(),
        )
    }

    fn like(song: bool, transition: bool) -> Feedback {
        Feedback {
            song_like: song,
            transition_like: transition,
            step: None,
        }
    }

    #[test]
    fn phases_and_rewards() {
        let (corpus, dir) = setup();
        let mut s = LiveSession::create("a".into(), spec(4, 2), corpus, 1, dir.path()).unwrap();
        assert_eq!(s.current_song().unwrap().phase, LivePhase::Exploring);
        let FeedbackOutcome::Playing { reward, song } = s.submit(like(true, true)).unwrap() else {
            panic!("expected next song")
        };
        // transition ignored on the first song
        assert_eq!(reward, 1.0);
        assert_eq!((song.step, song.phase), (2, LivePhase::Exploring));
        let FeedbackOutcome::Playing { reward, song } = s.submit(like(true, true)).unwrap() else {
            panic!("expected next song")
        };
        assert_eq!(reward, 2.0);
        assert_eq!(song.phase, LivePhase::Exploiting);
        s.submit(like(false, true)).unwrap();
        let out = s.submit(like(false, false)).unwrap();
        let FeedbackOutcome::Complete {
            summary, transcript, ..
        } = out
        else {
            panic!("expected completion")
        };
        assert_eq!(transcript.len(), 4);
        assert_eq!(summary.exploring.songs, 2);
        assert_eq!(summary.exploring.transitions, 1);
        assert_eq!(summary.exploring.song_like_rate, Some(1.0));
        assert_eq!(summary.exploiting.transition_like_rate, Some(0.5));
        assert_eq!(summary.total_reward, 4.0);
        assert!(matches!(s.submit(like(true, true)), Err(ServiceError::Conflict(_))));
        let ids: std::collections::HashSet<_> = transcript.iter().map(|e| e.song.id.clone()).collect();
        assert_eq!(ids.len(), 4);
    }

    #[test]
    fn stale_step_conflicts() {
        let (corpus, dir) = setup();
        let mut s = LiveSession::create("b".into(), spec(5, 2), corpus, 1, dir.path()).unwrap();
        s.submit(Feedback {
            step: Some(1),
            ..like(true, false)
        })
        .unwrap();
        let err = s.submit(Feedback {
            step: Some(1),
            ..like(true, false)
        });
        assert!(matches!(err, Err(ServiceError::Conflict(_))));
        assert_eq!(s.step(), 2);
    }

    #[test]
    fn replay_matches_every_prefix() {
        let (corpus, dir) = setup();
        let mut s = LiveSession::create("c".into(), spec(8, 3), corpus.clone(), 5, dir.path()).unwrap();
        for i in 0..8 {
            s.submit(like(i % 2 == 0, i % 3 == 0)).unwrap();
            let events = LiveSession::read_log(s.log_path()).unwrap();
            let back = LiveSession::replay(&events, s.log_path().to_path_buf(), |_| Some(corpus.clone())).unwrap();
            assert_eq!(back, s);
            assert_eq!(back.view(), s.view());
        }
    }

    #[test]
    fn replayed_session_continues_identically() {
        let (corpus, dir) = setup();
        let other = tempfile::tempdir().unwrap();
        let mut a = LiveSession::create("d".into(), spec(10, 2), corpus.clone(), 5, dir.path()).unwrap();
        let mut b = LiveSession::create("d".into(), spec(10, 2), corpus.clone(), 5, other.path()).unwrap();
        for _ in 0..4 {
            a.submit(like(true, true)).unwrap();
            b.submit(like(true, true)).unwrap();
        }
        let events = LiveSession::read_log(a.log_path()).unwrap();
        let mut a = LiveSession::replay(&events, a.log_path().to_path_buf(), |_| Some(corpus.clone())).unwrap();
        for _ in 0..6 {
            assert_eq!(
                a.submit(like(true, false)).unwrap(),
                b.submit(like(true, false)).unwrap()
            );
        }
    }

    #[test]
    fn torn_tail_is_ignored() {
        let (corpus, dir) = setup();
        let mut s = LiveSession::create("e".into(), spec(5, 1), corpus.clone(), 5, dir.path()).unwrap();
        s.submit(like(true, true)).unwrap();
        let mut f = OpenOptions::new().append(true).open(s.log_path()).unwrap();
        f.write_all(b"{\"event\":\"feedb").unwrap();
        let events = LiveSession::read_log(s.log_path()).unwrap();
        let back = LiveSession::replay(&events, s.log_path().to_path_buf(), |_| Some(corpus.clone())).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn invalid_specs() {
        let (corpus, dir) = setup();
        let bad = |sp: SessionSpec| LiveSession::create("x".into(), sp, corpus.clone(), 0, dir.path());
        assert!(matches!(bad(spec(0, 0)), Err(ServiceError::BadRequest(_))));
        assert!(matches!(bad(spec(41, 0)), Err(ServiceError::BadRequest(_))));
        assert!(matches!(bad(spec(3, 4)), Err(ServiceError::BadRequest(_))));
        let mut sp = spec(3, 1);
        sp.plan.budget = 0;
        assert!(matches!(bad(sp), Err(ServiceError::BadRequest(_))));
    }

    #[test]
    fn block_sums_stay_normalized() {
        let (corpus, dir) = setup();
        let mut s = LiveSession::create("f".into(), spec(12, 4), corpus, 2, dir.path()).unwrap();
        for i in 0..12 {
            s.submit(like(i % 3 != 0, i % 2 == 0)).unwrap();
            let sums = s.view().block_sums;
            assert!(sums.max_deviation <= 1e-9);
            assert!(sums.min_weight >= 1e-6);
            assert_eq!(sums.song.len(), 34);
        }
    }
}
