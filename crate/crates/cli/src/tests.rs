use std::path::Path;

use clap::error::ErrorKind;
use djmc_core::corpus::{generate_synthetic_corpus, load_corpus, load_playlists};
use djmc_core::experiments::{unpaired_t_test, ExperimentReport};

use super::*;

/// Parses a whitespace-separated argument line.
fn parse(line: &str) -> std::result::Result<Cli, clap::Error> {
    Cli::try_parse_from(std::iter::once("djmc").chain(line.split_whitespace()))
}

fn exec(line: &str) -> Result<()> {
    run(parse(line)?)
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL_BENCH: &str = "corpus_size = 120\nn_artists = 6\nn_playlists = 20\nplaylist_length = 8\n\
session_length = 6\nearly_step = 3\nn_listeners = 4\nn_clusters = 2\nbudget = 20\nhorizon = 3\n\
bootstrap_resamples = 200\nhistogram_bins = 5\nseed = 3\n";

#[test]
fn corpus_and_playlist_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().display();
    exec(&format!("corpus gen --songs 90 --artists 3 --seed 5 --out {d}/c.jsonl")).unwrap();
    let corpus = load_corpus(dir.path().join("c.jsonl")).unwrap();
    assert_eq!(corpus.len(), 90);
    assert_eq!(corpus.hash(), generate_synthetic_corpus(90, 3, 2, 5).unwrap().hash());
    exec(&format!("corpus stats {d}/c.jsonl")).unwrap();
    exec(&format!(
        "playlists gen --corpus {d}/c.jsonl --count 7 --length 5 --out {d}/p.jsonl"
    ))
    .unwrap();
    let load = load_playlists(dir.path().join("p.jsonl"), &corpus).unwrap();
    assert_eq!(load.playlists.len(), 7);
    assert!(load.playlists.iter().all(|pl| pl.song_ids.len() == 5));
}

#[test]
fn bench_config_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bench.toml");
    fs::write(&path, "horizon = 4\nbudget = 7\n").unwrap();
    let line = format!("bench run --config {} --horizon 6 --agents djmc,random", path.display());
    let Command::Bench(BenchCommand::Run(args)) = parse(&line).unwrap().command else {
        panic!("wrong subcommand");
    };
    let config = bench_config(&args).unwrap();
    assert_eq!((config.horizon, config.budget), (6, 7));
    assert_eq!(config.agents.len(), 2);
    assert_eq!(config.session_length, ExperimentConfig::default().session_length);

    fs::write(&path, "horizn = 4\n").unwrap();
    assert!(exec(&format!("bench run --config {}", path.display())).is_err());
}

#[test]
fn bench_runs_are_reproducible_and_accept_input_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().display();
    fs::write(dir.path().join("bench.toml"), SMALL_BENCH).unwrap();
    exec(&format!("bench run --config {d}/bench.toml --out-dir {d}/a")).unwrap();
    exec(&format!("bench run --config {d}/bench.toml --out-dir {d}/b --parallel")).unwrap();
    for file in [
        "report.json",
        "steps.csv",
        "final_rewards.csv",
        "histogram.csv",
        "bootstrap.csv",
    ] {
        let read = |run: &str| fs::read(dir.path().join(run).join(file)).unwrap();
        assert_eq!(read("a"), read("b"), "{file}");
    }
    let report = ExperimentReport::from_json(&fs::read_to_string(dir.path().join("a/report.json")).unwrap()).unwrap();
    assert_eq!(report.config.seed, 3);
    assert_eq!(report.series.len(), 3 * 4);

    exec(&format!("corpus gen --songs 60 --artists 4 --out {d}/c.jsonl")).unwrap();
    exec(&format!(
        "playlists gen --corpus {d}/c.jsonl --count 10 --length 6 --out {d}/p.jsonl"
    ))
    .unwrap();
    exec(&format!(
        "bench run --config {d}/bench.toml --corpus {d}/c.jsonl --playlists {d}/p.jsonl --out-dir {d}/files"
    ))
    .unwrap();
    let text = fs::read_to_string(dir.path().join("files/report.json")).unwrap();
    let report = ExperimentReport::from_json(&text).unwrap();
    assert_eq!(
        report.corpus_hash,
        load_corpus(dir.path().join("c.jsonl")).unwrap().hash()
    );
    assert_eq!(report.n_playlists, 10);
}

#[test]
fn analyze_commands_write_json() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().display();
    fs::write(
        dir.path().join("r.csv"),
        "agent,listener,cumulative_final\nx,0,10\ny,0,7\nx,1,12\ny,1,8\nx,2,11\ny,2,6.5\n",
    )
    .unwrap();
    exec(&format!(
        "analyze ttest {d}/r.csv {d}/r.csv --filter-a agent=x --filter-b agent=y --offset -0.5 --out {d}/t.json"
    ))
    .unwrap();
    let t = read_json(&dir.path().join("t.json"));
    let expected = unpaired_t_test(&[10.0, 12.0, 11.0], &[7.0, 8.0, 6.5], -0.5).unwrap();
    assert_eq!(t["t"].as_f64().unwrap(), expected.t);
    assert_eq!(t["p"].as_f64().unwrap(), expected.p_value);
    assert_eq!((t["n_a"].as_u64(), t["n_b"].as_u64()), (Some(3), Some(3)));

    exec(&format!(
        "analyze bootstrap {d}/r.csv --filter agent=x --subset 2 --resamples 50 --bins 4 --emit-means --out {d}/b.json"
    ))
    .unwrap();
    let b = read_json(&dir.path().join("b.json"));
    assert_eq!(b["means"].as_array().unwrap().len(), 50);
    assert_eq!(b["histogram"].as_array().unwrap().len(), 4);
    assert!(b["ci_low"].as_f64().unwrap() <= b["ci_high"].as_f64().unwrap());

    assert!(exec(&format!("analyze ttest {d}/r.csv {d}/r.csv --filter-a agent=none")).is_err());
    assert!(exec(&format!("analyze bootstrap {d}/r.csv --column agent")).is_err());
}

#[test]
fn profile_writes_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().display();
    exec(&format!(
        "profile transitions --resamples 200 --out {d}/p.json --csv {d}/p.csv"
    ))
    .unwrap();
    let profile = read_json(&dir.path().join("p.json"));
    assert_eq!(profile["features"].as_array().unwrap().len(), NUM_DESCRIPTORS);
    let csv = fs::read_to_string(dir.path().join("p.csv")).unwrap();
    assert_eq!(csv.lines().count(), NUM_DESCRIPTORS + 1);
}

#[test]
fn usage_errors_exit_two() {
    let code = |line: &str| parse(line).map(|_| 0).unwrap_or_else(|e| parse_exit_code(&e));
    assert_eq!(code("bogus"), 2);
    assert_eq!(code("corpus gen"), 2);
    assert_eq!(code("bench run --corpus c.jsonl"), 2);
    assert_eq!(code("bench run --agents dj"), 2);
    assert_eq!(code("bench run --reward-mode ternary"), 2);
    assert_eq!(code("--help"), 0);
    assert_eq!(parse("--version").unwrap_err().kind(), ErrorKind::DisplayVersion);
    assert_eq!(code("bench run"), 0);
}

#[test]
fn runtime_errors_are_reported_once() {
    let err = exec("corpus stats /nonexistent/c.jsonl").unwrap_err();
    let text = error_chain(&err);
    assert!(text.contains("/nonexistent/c.jsonl"), "{text}");
    assert_eq!(text.matches("No such file").count(), 1, "{text}");
}

#[test]
fn serve_config_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("service.toml");
    fs::write(
        &path,
        "listen = \"127.0.0.1:9000\"\nseed = 1\n[corpora]\ndefault = \"a.jsonl\"\n",
    )
    .unwrap();
    let line = format!("serve --config {} --listen 0.0.0.0:7000", path.display());
    let Command::Serve(args) = parse(&line).unwrap().command else {
        panic!("wrong subcommand");
    };
    let env = [("DJMC_SEED", "2"), ("DJMC_LISTEN", "1.2.3.4:1")].map(|(k, v)| (k.to_string(), v.to_string()));
    let config = serve_config(args, env).unwrap();
    assert_eq!(config.listen, "0.0.0.0:7000");
    assert_eq!(config.seed, 2);
    assert_eq!(config.corpora["default"], Path::new("a.jsonl"));
}
