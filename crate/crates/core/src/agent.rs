//! The playlist agent: preference initialization, online credit-assignment
//! updates, trajectory-sampling planner, and the greedy and random baselines.

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, SongIdx};
use crate::error::{Error, Result};
use crate::listener::ListenerOracle;
use crate::reward::{pair_transition_reward, song_features, transition_features, ListenerParams, MIN_WEIGHT};
use crate::selection::{closest_point, delta_medoids, k_means};
use crate::{NUM_BINS, TRANSITION_BLOCK};

/// Floor applied to rewards and running means before the log ratio.
pub const REWARD_EPSILON: f64 = 1e-3;

/// Song preferences from a list of liked songs: every weight starts at
/// `1/(k+10)` and each favorite adds `1/(k+10)` to its active bins, so each
/// descriptor block sums to one.
pub fn init_song_prefs(corpus: &Corpus, favorites: &[SongIdx]) -> Result<Vec<f64>> {
    if let Some(&bad) = favorites.iter().find(|&&f| f >= corpus.len()) {
        return Err(Error::UnknownSong(format!("#{bad}")));
    }
    let unit = 1.0 / (favorites.len() + NUM_BINS) as f64;
    let mut phi_s = vec![unit; crate::SONG_FEATURE_DIM];
    for &f in favorites {
        for &i in song_features(corpus.bins(f)).indices() {
            phi_s[i as usize] += unit;
        }
    }
    Ok(phi_s)
}

/// Transition preferences from observed song pairs, same smoothing scheme
/// as [`init_song_prefs`] with 100 bin pairs per descriptor.
pub fn transition_prefs_from_pairs(corpus: &Corpus, pairs: &[(SongIdx, SongIdx)]) -> Vec<f64> {
    let unit = 1.0 / (pairs.len() + TRANSITION_BLOCK) as f64;
    let mut phi_t = vec![unit; crate::TRANSITION_FEATURE_DIM];
    for &(a, b) in pairs {
        for &i in transition_features(corpus.bins(a), corpus.bins(b)).indices() {
            phi_t[i as usize] += unit;
        }
    }
    phi_t
}

/// Unplayed songs ranked by song reward (ties by id), top half kept.
pub fn upper_median(phi_s: &[f64], corpus: &Corpus, played: &[bool]) -> Vec<SongIdx> {
    let mut scored: Vec<(f64, SongIdx)> = (0..corpus.len())
        .filter(|&s| !played.get(s).copied().unwrap_or(false))
        .map(|s| (crate::reward::song_reward(phi_s, &song_features(corpus.bins(s))), s))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| corpus.id_cmp(a.1, b.1)));
    let keep = scored.len().div_ceil(2);
    scored.truncate(keep);
    scored.into_iter().map(|(_, s)| s).collect()
}

#[derive(Debug, Clone)]
pub struct TransitionInit {
    pub phi_t: Vec<f64>,
    /// The elicitation sequence: seed song, then each oracle choice.
    pub queried: Vec<SongIdx>,
    pub n_representatives: usize,
}

/// Elicits transition preferences: representatives of the upper median are
/// offered to the oracle `k_t` times and each chosen transition is credited.
pub fn init_transition_prefs(
    corpus: &Corpus,
    phi_s: &[f64],
    oracle: &mut dyn ListenerOracle,
    k_t: usize,
    rng: &mut dyn RngCore,
) -> Result<TransitionInit> {
    let unit = 1.0 / (k_t + TRANSITION_BLOCK) as f64;
    let mut phi_t = vec![unit; crate::TRANSITION_FEATURE_DIM];
    let upper = upper_median(phi_s, corpus, &[]);
    let mut pool: Vec<SongIdx> = if upper.len() >= 2 {
        let reps = delta_medoids(corpus, &upper, corpus.delta()?)?;
        reps.representatives.iter().map(|&p| upper[p]).collect()
    } else {
        Vec::new()
    };
    if pool.len() < 2 {
        tracing::debug!(
            representatives = pool.len(),
            "too few representatives, querying the upper median"
        );
        pool = upper.clone();
    }
    let n_representatives = pool.len();
    pool.sort_by(|&a, &b| corpus.id_cmp(a, b));
    let mut queried = vec![pool[rng.random_range(0..pool.len())]];
    let mut used = vec![false; corpus.len()];
    used[queried[0]] = true;
    for _ in 0..k_t {
        let mut candidates: Vec<SongIdx> = pool.iter().copied().filter(|&s| !used[s]).collect();
        if candidates.is_empty() {
            candidates = upper.iter().copied().filter(|&s| !used[s]).collect();
        }
        if candidates.is_empty() {
            candidates = (0..corpus.len()).filter(|&s| !used[s]).collect();
        }
        if candidates.is_empty() {
            break;
        }
        let chosen = oracle.choose(corpus, &candidates, &queried);
        let prev = *queried.last().expect("seeded");
        for &i in transition_features(corpus.bins(prev), corpus.bins(chosen)).indices() {
            phi_t[i as usize] += unit;
        }
        used[chosen] = true;
        queried.push(chosen);
    }
    Ok(TransitionInit {
        phi_t,
        queried,
        n_representatives,
    })
}

/// How a scalar reward is split between the song and transition models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CreditAssignment {
    /// Proportional to the model's predicted song and transition rewards.
    Proportional,
    /// Everything to the song model (the greedy baseline has no transition model).
    SongOnly,
}

/// The agent's learned listener model plus its reward history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentModel {
    pub params: ListenerParams,
    pub credit: CreditAssignment,
    rewards: Vec<f64>,
    mean_reward: f64,
}

impl AgentModel {
    pub fn new(params: ListenerParams, credit: CreditAssignment) -> Self {
        Self {
            params,
            credit,
            rewards: Vec::new(),
            mean_reward: 0.0,
        }
    }

    /// Number of rewards observed so far.
    pub fn step(&self) -> usize {
        self.rewards.len()
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn mean_reward(&self) -> Option<f64> {
        (!self.rewards.is_empty()).then_some(self.mean_reward)
    }

    /// Applies one observed reward for `song`, played after `history`.
    ///
    /// The first reward only seeds the running mean. Afterwards the log
    /// ratio of reward to running mean is split between song and transition
    /// weights, blended in with rate `1/(i+1)`, and every descriptor block
    /// is clamped to [`MIN_WEIGHT`] and renormalized.
    pub fn update(&mut self, corpus: &Corpus, song: SongIdx, history: &[SongIdx], reward: f64) {
        let i = self.rewards.len() + 1;
        if i > 1 {
            let r_incr = (reward.max(REWARD_EPSILON) / self.mean_reward.max(REWARD_EPSILON)).ln();
            let prev = history.last().copied();
            let rs = self.params.song_reward(corpus, song);
            let rt = prev.map_or(0.0, |p| self.params.pair_reward(corpus, p, song));
            let (w_s, w_t) = match self.credit {
                CreditAssignment::SongOnly => (1.0, 0.0),
                CreditAssignment::Proportional if rs + rt <= REWARD_EPSILON => (0.5, 0.5),
                CreditAssignment::Proportional => (rs / (rs + rt), rt / (rs + rt)),
            };
            let keep = i as f64 / (i + 1) as f64;
            let rate = 1.0 / (i + 1) as f64;
            self.params.phi_s.iter_mut().for_each(|w| *w *= keep);
            self.params.phi_t.iter_mut().for_each(|w| *w *= keep);
            for &k in song_features(corpus.bins(song)).indices() {
                self.params.phi_s[k as usize] += rate * w_s * r_incr;
            }
            if let Some(p) = prev {
                for &k in transition_features(corpus.bins(p), corpus.bins(song)).indices() {
                    self.params.phi_t[k as usize] += rate * w_t * r_incr;
                }
            }
            self.params.normalize(MIN_WEIGHT);
        }
        self.rewards.push(reward);
        self.mean_reward += (reward - self.mean_reward) / self.rewards.len() as f64;
    }
}

pub fn model_update(model: &mut AgentModel, corpus: &Corpus, song: SongIdx, history: &[SongIdx], reward: f64) {
    model.update(corpus, song, history, reward);
}

/// Ordered play history of one episode of fixed length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    history: Vec<SongIdx>,
    length: usize,
    played: Vec<bool>,
}

impl SessionState {
    pub fn new(corpus_len: usize, length: usize) -> Result<Self> {
        if length == 0 {
            return Err(Error::invalid("session length must be at least 1"));
        }
        if length > corpus_len {
            return Err(Error::invalid(format!(
                "session length {length} exceeds corpus size {corpus_len}"
            )));
        }
        Ok(Self {
            history: Vec::with_capacity(length),
            length,
            played: vec![false; corpus_len],
        })
    }

    pub fn history(&self) -> &[SongIdx] {
        &self.history
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn played(&self) -> &[bool] {
        &self.played
    }

    pub fn is_played(&self, song: SongIdx) -> bool {
        self.played[song]
    }

    pub fn is_terminal(&self) -> bool {
        self.history.len() == self.length
    }

    pub fn push(&mut self, song: SongIdx) -> Result<()> {
        if self.is_terminal() {
            return Err(Error::invalid("session is already complete"));
        }
        if self.played[song] {
            return Err(Error::invalid(format!("song #{song} was already played")));
        }
        self.played[song] = true;
        self.history.push(song);
        Ok(())
    }

    pub fn unplayed(&self) -> impl Iterator<Item = SongIdx> + '_ {
        self.played.iter().enumerate().filter(|(_, &p)| !p).map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub horizon: usize,
    pub budget: usize,
    #[serde(default)]
    pub use_song_types: bool,
    /// Cluster count for song types; `None` means `ceil(sqrt(|upper median|))`.
    #[serde(default)]
    pub n_song_types: Option<usize>,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            budget: 100,
            use_song_types: false,
            n_song_types: None,
        }
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.budget == 0 {
            return Err(Error::invalid("planning horizon and budget must be at least 1"));
        }
        if self.n_song_types == Some(0) {
            return Err(Error::invalid("song type count must be at least 1"));
        }
        Ok(())
    }
}

/// Concrete songs a trajectory is drawn from: either the upper median
/// itself or one representative per song-type cluster.
fn planning_units(
    params: &ListenerParams,
    corpus: &Corpus,
    session: &SessionState,
    config: &PlanConfig,
    seed: u64,
) -> Result<Vec<SongIdx>> {
    let upper = upper_median(&params.phi_s, corpus, session.played());
    if upper.is_empty() {
        return Err(Error::Exhausted);
    }
    if !config.use_song_types {
        return Ok(upper);
    }
    let k = config
        .n_song_types
        .unwrap_or_else(|| (upper.len() as f64).sqrt().ceil() as usize)
        .clamp(1, upper.len());
    let points: Vec<Vec<f64>> = upper.iter().map(|&s| corpus.standardized(s).to_vec()).collect();
    let clustering = k_means(&points, k, seed, 50)?;
    let mut reps = Vec::with_capacity(k);
    for c in 0..k {
        if let Some(p) = closest_point(&points, clustering.members(c), &clustering.centroids[c]) {
            reps.push(upper[p]);
        }
    }
    Ok(reps)
}

/// Picks the next song by sampling `budget` random trajectories of length
/// `horizon` and returning the first song of the best one. Trajectories are
/// scored with song rewards plus the expected transition reward against the
/// actual play history followed by the trajectory prefix.
pub fn plan_next(
    params: &ListenerParams,
    corpus: &Corpus,
    session: &SessionState,
    config: &PlanConfig,
    rng: &mut dyn RngCore,
) -> Result<SongIdx> {
    config.validate()?;
    if session.is_terminal() {
        return Err(Error::invalid("session is already complete"));
    }
    let units = planning_units(params, corpus, session, config, rng.next_u64())?;
    let history = session.history();
    let depth = config.horizon.min(units.len());

    let unit_rs: Vec<f64> = units.iter().map(|&u| params.song_reward(corpus, u)).collect();
    // history_pairs[h][u]: r_t from history[h] to units[u]
    let history_pairs: Vec<Vec<f64>> = history
        .iter()
        .map(|&h| {
            units
                .iter()
                .map(|&u| pair_transition_reward(&params.phi_t, corpus.bins(h), corpus.bins(u)))
                .collect()
        })
        .collect();

    let seeds: Vec<u64> = (0..config.budget).map(|_| rng.next_u64()).collect();
    let mut best: Option<(f64, usize)> = None;
    let mut trajectory = Vec::with_capacity(depth);
    for seed in seeds {
        let mut traj_rng = ChaCha8Rng::seed_from_u64(seed);
        trajectory.clear();
        trajectory.extend(index::sample(&mut traj_rng, units.len(), depth).iter());
        let mut payoff = 0.0;
        for j in 0..depth {
            let u = trajectory[j];
            payoff += unit_rs[u];
            let cur = corpus.bins(units[u]);
            // i steps back through the prefix, then through the history
            for i in 1..=j {
                let prev = units[trajectory[j - i]];
                let w = (i * i) as f64;
                payoff += pair_transition_reward(&params.phi_t, corpus.bins(prev), cur) / w;
            }
            for (back, row) in history_pairs.iter().rev().enumerate() {
                let i = (j + back + 1) as f64;
                payoff += row[u] / (i * i);
            }
        }
        if best.is_none_or(|(b, _)| payoff > b) {
            best = Some((payoff, trajectory[0]));
        }
    }
    let (_, first) = best.expect("budget >= 1");
    Ok(units[first])
}

/// Highest predicted song reward among unplayed songs, ties by id.
pub fn greedy_next(params: &ListenerParams, corpus: &Corpus, session: &SessionState) -> Result<SongIdx> {
    greedy_by_weights(&params.phi_s, corpus, session)
}

pub(crate) fn greedy_by_weights(phi_s: &[f64], corpus: &Corpus, session: &SessionState) -> Result<SongIdx> {
    let mut best: Option<(f64, SongIdx)> = None;
    for s in session.unplayed() {
        let r = crate::reward::song_reward(phi_s, &song_features(corpus.bins(s)));
        let better = match best {
            None => true,
            Some((b, bs)) => r > b || (r == b && corpus.id_cmp(s, bs).is_lt()),
        };
        if better {
            best = Some((r, s));
        }
    }
    best.map(|(_, s)| s).ok_or(Error::Exhausted)
}

/// Uniformly random unplayed song.
pub fn random_next(corpus: &Corpus, session: &SessionState, rng: &mut dyn RngCore) -> Result<SongIdx> {
    let _ = corpus;
    let unplayed: Vec<SongIdx> = session.unplayed().collect();
    if unplayed.is_empty() {
        return Err(Error::Exhausted);
    }
    Ok(unplayed[rng.random_range(0..unplayed.len())])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Djmc,
    Greedy,
    Random,
}

impl AgentKind {
    pub const ALL: [AgentKind; 3] = [AgentKind::Djmc, AgentKind::Greedy, AgentKind::Random];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Djmc => "djmc",
            AgentKind::Greedy => "greedy",
            AgentKind::Random => "random",
        }
    }
}

impl std::str::FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "djmc" => Ok(AgentKind::Djmc),
            "greedy" => Ok(AgentKind::Greedy),
            "random" => Ok(AgentKind::Random),
            other => Err(Error::invalid(format!("unknown agent `{other}`"))),
        }
    }
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartMode {
    /// Ask the listener for favorites and transition choices first.
    Elicit,
    /// Play this many uniformly random songs before planning.
    RandomExplore(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Elicit,
    Explore,
    Exploit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub length: usize,
    pub k_s: usize,
    pub k_t: usize,
    pub plan: PlanConfig,
    pub start: StartMode,
    #[serde(default)]
    pub record_snapshots: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            length: 30,
            k_s: 10,
            k_t: 10,
            plan: PlanConfig::default(),
            start: StartMode::Elicit,
            record_snapshots: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptStep {
    pub step: usize,
    pub song_id: String,
    pub reward: f64,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub agent: AgentKind,
    /// Favorites, then the transition-elicitation sequence.
    pub elicited: Vec<String>,
    pub steps: Vec<TranscriptStep>,
    /// Model after each update, when requested.
    pub snapshots: Vec<ListenerParams>,
    pub final_model: Option<ListenerParams>,
}

impl Transcript {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    /// One JSON object per line: elicitation records first, then steps.
    pub fn to_jsonl(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Line<'a> {
            step: usize,
            song_id: &'a str,
            reward: Option<f64>,
            phase: Phase,
        }
        let mut out = String::new();
        for id in &self.elicited {
            let line = Line {
                step: 0,
                song_id: id,
                reward: None,
                phase: Phase::Elicit,
            };
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
        for s in &self.steps {
            let line = Line {
                step: s.step,
                song_id: &s.song_id,
                reward: Some(s.reward),
                phase: s.phase,
            };
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Runs one full episode of `kind` against `oracle`.
pub fn run_session(
    corpus: &Corpus,
    oracle: &mut dyn ListenerOracle,
    kind: AgentKind,
    config: &SessionConfig,
    rng: &mut dyn RngCore,
) -> Result<Transcript> {
    config.plan.validate()?;
    let mut session = SessionState::new(corpus.len(), config.length)?;
    let mut elicited = Vec::new();
    let credit = match kind {
        AgentKind::Greedy => CreditAssignment::SongOnly,
        _ => CreditAssignment::Proportional,
    };
    let mut model = AgentModel::new(ListenerParams::uniform(), credit);
    let explore = match config.start {
        StartMode::RandomExplore(n) => n,
        StartMode::Elicit => {
            if kind != AgentKind::Random {
                let favorites = oracle.favorites(corpus, config.k_s);
                elicited.extend(favorites.iter().map(|&f| corpus.id(f).to_string()));
                model.params.phi_s = init_song_prefs(corpus, &favorites)?;
            }
            if kind == AgentKind::Djmc {
                let init = init_transition_prefs(corpus, &model.params.phi_s, oracle, config.k_t, rng)?;
                elicited.extend(init.queried.iter().map(|&q| corpus.id(q).to_string()));
                model.params.phi_t = init.phi_t;
            }
            0
        }
    };

    let mut steps = Vec::with_capacity(config.length);
    let mut snapshots = Vec::new();
    for step in 1..=config.length {
        let exploring = step <= explore;
        let song = if exploring {
            random_next(corpus, &session, rng)?
        } else {
            match kind {
                AgentKind::Djmc => plan_next(&model.params, corpus, &session, &config.plan, rng)?,
                AgentKind::Greedy => greedy_next(&model.params, corpus, &session)?,
                AgentKind::Random => random_next(corpus, &session, rng)?,
            }
        };
        let reward = oracle.rate(corpus, session.history(), song);
        if kind != AgentKind::Random {
            model.update(corpus, song, session.history(), reward);
            if config.record_snapshots {
                snapshots.push(model.params.clone());
            }
        }
        session.push(song)?;
        steps.push(TranscriptStep {
            step,
            song_id: corpus.id(song).to_string(),
            reward,
            phase: if exploring { Phase::Explore } else { Phase::Exploit },
        });
    }
    Ok(Transcript {
        agent: kind,
        elicited,
        steps,
        snapshots,
        final_model: (kind != AgentKind::Random).then_some(model.params),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_synthetic_corpus;
    use crate::listener::SimulatedListener;
    use crate::seed;

    fn corpus() -> Corpus {
        generate_synthetic_corpus(60, 6, 2, 21).unwrap()
    }

    fn assert_normalized(p: &ListenerParams) {
        assert!(p.max_block_deviation() <= 1e-9, "deviation {}", p.max_block_deviation());
        assert!(p.min_weight() >= MIN_WEIGHT, "min weight {}", p.min_weight());
    }

    #[test]
    fn song_prefs_floor_and_increment() {
        let c = corpus();
        let favorites: Vec<usize> = (0..10).collect();
        let phi_s = init_song_prefs(&c, &favorites).unwrap();
        let bins = c.bins(0);
        // weight of a bin hit by n favorites is (1 + n)/20
        for d in 0..crate::NUM_DESCRIPTORS {
            let hits = favorites.iter().filter(|&&f| c.bins(f)[d] == bins[d]).count();
            let w = phi_s[d * 10 + bins[d] as usize];
            assert!((w - (1 + hits) as f64 / 20.0).abs() < 1e-12);
        }
        let single = init_song_prefs(&c, &[3]).unwrap();
        assert!((single[c.bins(3)[0] as usize] - 2.0 / 11.0).abs() < 1e-12);
        let p = ListenerParams {
            phi_s,
            phi_t: ListenerParams::uniform().phi_t,
        };
        assert_normalized(&p);
        assert!(init_song_prefs(&c, &[999]).is_err());
    }

    #[test]
    fn ten_favorites_floor_is_one_twentieth() {
        let c = corpus();
        let phi_s = init_song_prefs(&c, &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]).unwrap();
        assert!(phi_s.iter().all(|&w| w >= 0.05 - 1e-15));
        assert!(phi_s.contains(&0.05));
        // one favorite counted once: 0.05 + 0.05
        let lone = init_song_prefs(&c, &[0; 10][..1]).unwrap();
        assert_eq!(lone.iter().filter(|&&w| (w - 2.0 / 11.0).abs() < 1e-12).count(), 34);
    }

    /// Picks the candidate nearest to the last played song.
    struct NearestOracle;

    impl ListenerOracle for NearestOracle {
        fn choose(&mut self, corpus: &Corpus, candidates: &[SongIdx], history: &[SongIdx]) -> SongIdx {
            let last = *history.last().unwrap();
            *candidates
                .iter()
                .min_by(|&&a, &&b| corpus.distance(last, a).total_cmp(&corpus.distance(last, b)))
                .unwrap()
        }

        fn rate(&mut self, _: &Corpus, _: &[SongIdx], _: SongIdx) -> f64 {
            1.0
        }
    }

    #[test]
    fn transition_prefs_floor_and_elicited_pairs() {
        let c = corpus();
        let phi_s = init_song_prefs(&c, &[0, 1, 2]).unwrap();
        let mut rng = seed::rng(4);
        let init = init_transition_prefs(&c, &phi_s, &mut NearestOracle, 10, &mut rng).unwrap();
        let floor = 1.0 / 110.0;
        assert!(init.phi_t.iter().all(|&w| w >= floor - 1e-15));
        let p = ListenerParams {
            phi_s,
            phi_t: init.phi_t.clone(),
        };
        assert_normalized(&p);
        assert_eq!(init.queried.len(), 11);
        for w in init.queried.windows(2) {
            let f = transition_features(c.bins(w[0]), c.bins(w[1]));
            for &i in f.indices() {
                assert!(init.phi_t[i as usize] > floor);
            }
        }
    }

    #[test]
    fn hand_traced_transition_elicitation() {
        // Four songs with every descriptor at 0, 1, 2, 3. Under uniform song
        // weights all rewards tie, so the upper median is {s0, s1} by id. Their
        // distance equals delta, so one representative covers both and the
        // pool falls back to the upper median: the oracle's only choice is
        // the song not used as the seed.
        let songs = (0..4)
            .map(|i| crate::corpus::Song {
                id: format!("s{i}"),
                title: String::new(),
                artist: String::new(),
                album: String::new(),
                descriptors: vec![i as f64; crate::NUM_DESCRIPTORS],
            })
            .collect();
        let c = Corpus::new(songs).unwrap();
        assert_eq!((c.bins(0)[0], c.bins(1)[0]), (2, 4));
        let uniform = ListenerParams::uniform();
        let mut rng = seed::rng(0);
        let init = init_transition_prefs(&c, &uniform.phi_s, &mut NearestOracle, 1, &mut rng).unwrap();
        let (a, b) = (init.queried[0], init.queried[1]);
        assert_eq!(
            {
                let mut v = vec![a, b];
                v.sort();
                v
            },
            vec![0, 1]
        );
        let floor = 1.0 / 101.0;
        let idx = (c.bins(a)[0] as usize) * 10 + c.bins(b)[0] as usize;
        assert!((init.phi_t[idx] - 2.0 * floor).abs() < 1e-12);
        assert!((init.phi_t[(c.bins(b)[0] as usize) * 10 + c.bins(a)[0] as usize] - floor).abs() < 1e-12);
    }

    #[test]
    fn equal_reward_is_a_fixed_point() {
        let c = corpus();
        let mut rng = seed::rng(2);
        let phi_s = init_song_prefs(&c, &[1, 5, 9]).unwrap();
        let phi_t = transition_prefs_from_pairs(&c, &[(1, 5), (5, 9)]);
        let mut model = AgentModel::new(ListenerParams { phi_s, phi_t }, CreditAssignment::Proportional);
        let start = model.params.clone();
        let mut history = Vec::new();
        for _ in 0..20 {
            let song = rng.random_range(0..c.len());
            model.update(&c, song, &history, 1.5);
            history.push(song);
            for (a, b) in model.params.phi_s.iter().zip(&start.phi_s) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in model.params.phi_t.iter().zip(&start.phi_t) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(model.mean_reward(), Some(1.5));
    }

    #[test]
    fn first_update_only_logs() {
        let c = corpus();
        let mut model = AgentModel::new(ListenerParams::uniform(), CreditAssignment::Proportional);
        assert_eq!(model.mean_reward(), None);
        model.update(&c, 3, &[], 7.0);
        assert_eq!(model.params, ListenerParams::uniform());
        assert_eq!(model.mean_reward(), Some(7.0));
        assert_eq!(model.step(), 1);
    }

    #[test]
    fn doubled_reward_matches_manual_trace() {
        let c = corpus();
        let phi_s = init_song_prefs(&c, &[0, 1]).unwrap();
        let phi_t = transition_prefs_from_pairs(&c, &[(0, 1)]);
        let mut model = AgentModel::new(ListenerParams { phi_s, phi_t }, CreditAssignment::Proportional);
        model.update(&c, 10, &[], 2.0);
        let before = model.params.clone();
        let (prev, song) = (10, 11);
        model.update(&c, song, &[prev], 4.0);

        // Manual trace with i = 2, r_incr = ln 2.
        let r_incr = 2.0f64.ln();
        let rs = before.song_reward(&c, song);
        let rt = before.pair_reward(&c, prev, song);
        let (w_s, w_t) = (rs / (rs + rt), rt / (rs + rt));
        let sf = song_features(c.bins(song));
        let tf = transition_features(c.bins(prev), c.bins(song));
        for d in 0..crate::NUM_DESCRIPTORS {
            let block: Vec<f64> = (0..10)
                .map(|b| {
                    let k = d * 10 + b;
                    let hit = if sf.indices()[d] as usize == k { 1.0 } else { 0.0 };
                    (2.0 / 3.0) * before.phi_s[k] + (1.0 / 3.0) * hit * w_s * r_incr
                })
                .collect();
            let total: f64 = block.iter().sum();
            for (b, w) in block.iter().enumerate() {
                assert!((model.params.phi_s[d * 10 + b] - w / total).abs() < 1e-12);
            }
            let block: Vec<f64> = (0..100)
                .map(|b| {
                    let k = d * 100 + b;
                    let hit = if tf.indices()[d] as usize == k { 1.0 } else { 0.0 };
                    (2.0 / 3.0) * before.phi_t[k] + (1.0 / 3.0) * hit * w_t * r_incr
                })
                .collect();
            let total: f64 = block.iter().sum();
            for (b, w) in block.iter().enumerate() {
                assert!((model.params.phi_t[d * 100 + b] - w / total).abs() < 1e-12);
            }
        }
        assert_eq!(model.mean_reward(), Some(3.0));
    }

    #[test]
    fn zero_rewards_stay_normalized() {
        let c = corpus();
        let mut rng = seed::rng(8);
        let mut model = AgentModel::new(ListenerParams::uniform(), CreditAssignment::Proportional);
        let mut history = Vec::new();
        for k in 0..200 {
            let song = rng.random_range(0..c.len());
            let r = if k % 3 == 0 { 0.0 } else { rng.random::<f64>() * 20.0 };
            model.update(&c, song, &history, r);
            history.push(song);
            assert_normalized(&model.params);
        }
    }

    #[test]
    fn planner_single_sample() {
        let c = corpus();
        let session = SessionState::new(c.len(), 5).unwrap();
        let params = ListenerParams::uniform();
        let config = PlanConfig {
            horizon: 1,
            budget: 1,
            ..PlanConfig::default()
        };
        let mut rng = seed::rng(3);
        let upper = upper_median(&params.phi_s, &c, session.played());
        let s = plan_next(&params, &c, &session, &config, &mut rng).unwrap();
        assert!(upper.contains(&s));
    }

    #[test]
    fn planner_returns_unplayed_upper_median_song() {
        let c = corpus();
        let mut session = SessionState::new(c.len(), 20).unwrap();
        let phi_s = init_song_prefs(&c, &[2, 4, 6]).unwrap();
        let params = ListenerParams {
            phi_s,
            phi_t: ListenerParams::uniform().phi_t,
        };
        let mut rng = seed::rng(5);
        for _ in 0..15 {
            let upper = upper_median(&params.phi_s, &c, session.played());
            let s = plan_next(&params, &c, &session, &PlanConfig::default(), &mut rng).unwrap();
            assert!(upper.contains(&s));
            assert!(!session.is_played(s));
            session.push(s).unwrap();
        }
    }

    #[test]
    fn song_type_planning_returns_cluster_representative() {
        let c = corpus();
        let session = SessionState::new(c.len(), 5).unwrap();
        let params = ListenerParams::uniform();
        let config = PlanConfig {
            use_song_types: true,
            ..PlanConfig::default()
        };
        let mut rng = seed::rng(1);
        let s = plan_next(&params, &c, &session, &config, &mut rng).unwrap();
        let upper = upper_median(&params.phi_s, &c, session.played());
        assert!(upper.contains(&s));
        let bad = PlanConfig {
            budget: 0,
            ..PlanConfig::default()
        };
        assert!(plan_next(&params, &c, &session, &bad, &mut rng).is_err());
    }

    #[test]
    fn greedy_two_song_argmax_and_scale_invariance() {
        let c = generate_synthetic_corpus(2, 2, 1, 3).unwrap();
        let phi_s = init_song_prefs(&c, &[1]).unwrap();
        let params = ListenerParams {
            phi_s: phi_s.clone(),
            phi_t: ListenerParams::uniform().phi_t,
        };
        let session = SessionState::new(2, 2).unwrap();
        assert_eq!(greedy_next(&params, &c, &session).unwrap(), 1);
        let scaled: Vec<f64> = phi_s.iter().map(|w| w * 7.5).collect();
        assert_eq!(greedy_by_weights(&scaled, &c, &session).unwrap(), 1);
    }

    #[test]
    fn random_next_singleton_and_determinism() {
        let c = generate_synthetic_corpus(5, 1, 1, 3).unwrap();
        let mut session = SessionState::new(5, 5).unwrap();
        for s in 0..4 {
            session.push(s).unwrap();
        }
        let mut rng = seed::rng(0);
        assert_eq!(random_next(&c, &session, &mut rng).unwrap(), 4);
        let big = corpus();
        let session = SessionState::new(big.len(), 3).unwrap();
        let draw = |seed: u64| {
            let mut rng = seed::rng(seed);
            (0..20)
                .map(|_| random_next(&big, &session, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    #[test]
    fn session_state_contract() {
        assert!(SessionState::new(3, 4).is_err());
        assert!(SessionState::new(3, 0).is_err());
        let mut s = SessionState::new(3, 2).unwrap();
        s.push(1).unwrap();
        assert!(s.push(1).is_err());
        s.push(0).unwrap();
        assert!(s.is_terminal());
        assert!(s.push(2).is_err());
    }

    fn listener(c: &Corpus, seed: u64) -> SimulatedListener {
        let phi_s = init_song_prefs(c, &[0, 1, 2, 3]).unwrap();
        let phi_t = transition_prefs_from_pairs(c, &[(0, 1), (1, 2), (2, 3)]);
        SimulatedListener::new(ListenerParams { phi_s, phi_t }, seed)
    }

    #[test]
    fn sessions_are_deterministic_and_repeat_free() {
        let c = corpus();
        for kind in AgentKind::ALL {
            let run = || {
                let mut l = listener(&c, 3);
                let mut rng = seed::rng(12);
                let config = SessionConfig {
                    length: 15,
                    ..SessionConfig::default()
                };
                run_session(&c, &mut l, kind, &config, &mut rng).unwrap()
            };
            let a = run();
            assert_eq!(a, run());
            assert_eq!(a.steps.len(), 15);
            let mut ids: Vec<_> = a.steps.iter().map(|s| s.song_id.clone()).collect();
            ids.sort();
            ids.dedup();
            assert_eq!(ids.len(), 15);
        }
    }

    #[test]
    fn single_step_elicit_session() {
        let c = corpus();
        let mut l = listener(&c, 1);
        let mut rng = seed::rng(2);
        let config = SessionConfig {
            length: 1,
            ..SessionConfig::default()
        };
        let t = run_session(&c, &mut l, AgentKind::Djmc, &config, &mut rng).unwrap();
        assert_eq!(t.steps.len(), 1);
        assert_eq!(t.steps[0].phase, Phase::Exploit);
        assert_eq!(t.elicited.len(), 10 + 11);
        let jsonl = t.to_jsonl().unwrap();
        assert_eq!(jsonl.lines().count(), 22);
        assert!(jsonl.lines().last().unwrap().contains("\"phase\":\"exploit\""));
    }

    #[test]
    fn random_explore_then_exploit() {
        let c = corpus();
        let mut l = listener(&c, 1);
        let mut rng = seed::rng(2);
        let config = SessionConfig {
            length: 50,
            start: StartMode::RandomExplore(25),
            record_snapshots: true,
            ..SessionConfig::default()
        };
        let t = run_session(&c, &mut l, AgentKind::Djmc, &config, &mut rng).unwrap();
        assert!(t.elicited.is_empty());
        assert_eq!(t.steps.iter().filter(|s| s.phase == Phase::Explore).count(), 25);
        assert_eq!(t.steps.iter().filter(|s| s.phase == Phase::Exploit).count(), 25);
        assert_eq!(t.snapshots.len(), 50);
        t.snapshots.iter().for_each(assert_normalized);
        let too_long = SessionConfig {
            length: 61,
            ..SessionConfig::default()
        };
        assert!(run_session(&c, &mut l, AgentKind::Djmc, &too_long, &mut rng).is_err());
    }
}
