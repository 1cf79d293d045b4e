use std::collections::HashSet;

use djmc_core::agent::{
    plan_next, run_session, upper_median, AgentKind, Phase, PlanConfig, SessionConfig, SessionState, StartMode,
};
use djmc_core::corpus::{
    generate_synthetic_corpus, generate_synthetic_playlists, load_corpus, load_playlists, save_playlists, Corpus,
};
use djmc_core::experiments::{run_benchmark, ExperimentConfig, ExperimentReport};
use djmc_core::listener::{build_listeners_from_playlists, SimulatedListener};
use djmc_core::seed;
use proptest::prelude::*;
use rand::Rng;

fn fixture() -> (Corpus, Vec<SimulatedListener>) {
    let corpus = generate_synthetic_corpus(150, 6, 2, 21).unwrap();
    let playlists = generate_synthetic_playlists(&corpus, 30, 10, 0.8, 22).unwrap();
    let listeners = build_listeners_from_playlists(&playlists, &corpus, 4, 3, 0.7, 23).unwrap();
    (corpus, listeners)
}

#[test]
fn corpus_and_playlists_survive_a_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_synthetic_corpus(80, 4, 2, 1).unwrap();
    corpus.save(dir.path().join("c.jsonl")).unwrap();
    let loaded = load_corpus(dir.path().join("c.jsonl")).unwrap();
    assert_eq!(loaded.hash(), corpus.hash());
    assert_eq!(loaded.delta().unwrap(), corpus.delta().unwrap());
    assert!((0..corpus.len()).all(|s| loaded.bins(s) == corpus.bins(s)));

    let playlists = generate_synthetic_playlists(&corpus, 12, 6, 0.5, 2).unwrap();
    save_playlists(dir.path().join("p.jsonl"), &playlists).unwrap();
    let load = load_playlists(dir.path().join("p.jsonl"), &loaded).unwrap();
    let ids = |ps: &[djmc_core::corpus::Playlist]| ps.iter().map(|p| p.song_ids.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&load.playlists), ids(&playlists));
    assert_eq!((load.dropped_ids, load.discarded_playlists), (0, 0));
}

#[test]
fn every_agent_plays_a_full_session_without_repeats() {
    let (corpus, listeners) = fixture();
    let config = SessionConfig {
        length: 12,
        plan: PlanConfig {
            horizon: 4,
            budget: 30,
            ..PlanConfig::default()
        },
        record_snapshots: true,
        ..SessionConfig::default()
    };
    for kind in AgentKind::ALL {
        let mut listener = listeners[0].clone();
        let mut rng = seed::rng(5);
        let t = run_session(&corpus, &mut listener, kind, &config, &mut rng).unwrap();
        assert_eq!(t.steps.len(), 12);
        let ids: HashSet<&str> = t.steps.iter().map(|s| s.song_id.as_str()).collect();
        assert_eq!(ids.len(), 12, "{kind}");
        assert!(t.rewards().iter().all(|r| r.is_finite() && *r >= 0.0));
        for params in &t.snapshots {
            assert!(params.max_block_deviation() < 1e-9);
        }
        match kind {
            AgentKind::Random => assert!(t.elicited.is_empty()),
            AgentKind::Greedy => assert_eq!(t.elicited.len(), config.k_s),
            AgentKind::Djmc => assert!(t.elicited.len() > config.k_s),
        }
    }
}

#[test]
fn sessions_replay_exactly_from_their_seeds() {
    let (corpus, listeners) = fixture();
    let config = SessionConfig {
        length: 10,
        ..SessionConfig::default()
    };
    let run = |listener: &SimulatedListener| {
        let mut listener = listener.clone();
        run_session(&corpus, &mut listener, AgentKind::Djmc, &config, &mut seed::rng(9)).unwrap()
    };
    let a = run(&listeners[1]);
    let b = run(&listeners[1]);
    assert_eq!(a.to_jsonl().unwrap(), b.to_jsonl().unwrap());
}

#[test]
fn random_exploration_precedes_planning() {
    let (corpus, listeners) = fixture();
    let config = SessionConfig {
        length: 8,
        start: StartMode::RandomExplore(3),
        ..SessionConfig::default()
    };
    let mut listener = listeners[2].clone();
    let t = run_session(&corpus, &mut listener, AgentKind::Djmc, &config, &mut seed::rng(4)).unwrap();
    let phases: Vec<Phase> = t.steps.iter().map(|s| s.phase).collect();
    assert_eq!(phases[..3], [Phase::Explore; 3]);
    assert!(phases[3..].iter().all(|&p| p == Phase::Exploit));
    assert!(t.elicited.is_empty());
}

#[test]
fn benchmark_report_round_trips_through_json_and_files() {
    let config = ExperimentConfig {
        corpus_size: 100,
        n_artists: 5,
        n_playlists: 15,
        playlist_length: 6,
        session_length: 5,
        early_step: 2,
        n_listeners: 3,
        n_clusters: 2,
        budget: 10,
        horizon: 2,
        bootstrap_resamples: 100,
        ..ExperimentConfig::default()
    };
    let report = run_benchmark(&config).unwrap();
    let back = ExperimentReport::from_json(&report.to_json().unwrap()).unwrap();
    assert_eq!(back.to_json().unwrap(), report.to_json().unwrap());
    let dir = tempfile::tempdir().unwrap();
    report.write_to_dir(dir.path()).unwrap();
    let steps = std::fs::read_to_string(dir.path().join("steps.csv")).unwrap();
    assert_eq!(steps.lines().count(), 1 + 3 * 3 * 5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn planner_picks_an_unplayed_upper_median_song(
        seed_value in any::<u64>(),
        played in 0usize..20,
        horizon in 1usize..6,
        use_song_types in any::<bool>(),
    ) {
        let corpus = generate_synthetic_corpus(40, 4, 2, seed_value).unwrap();
        let (_, listeners) = fixture();
        let params = &listeners[(seed_value % 4) as usize].params;
        let mut rng = seed::rng(seed_value);
        let mut session = SessionState::new(corpus.len(), corpus.len()).unwrap();
        while session.history().len() < played {
            let s = rng.random_range(0..corpus.len());
            if !session.is_played(s) {
                session.push(s).unwrap();
            }
        }
        let config = PlanConfig { horizon, budget: 15, use_song_types, n_song_types: None };
        let pick = plan_next(params, &corpus, &session, &config, &mut rng).unwrap();
        prop_assert!(!session.is_played(pick));
        prop_assert!(upper_median(&params.phi_s, &corpus, session.played()).contains(&pick));
    }
}
