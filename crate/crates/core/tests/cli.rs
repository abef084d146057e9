use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const GAME_A: &str = r#"{"n": 2, "values": {"0": 0, "[1]": 1, "2": 2, "[1,2]": 4}}"#;
const TABLE_NOISE: &str = r#"{"type": "table",
  "means": {"0": 0, "1": 0.1, "2": 0, "3": 0.3},
  "second_moments": {"0": 0.01, "1": 0.02, "2": 0.01, "3": 0.1}}"#;
const BERNOULLI: &str = r#"{"type": "bernoulli", "p": 0.33, "c": 0.05}"#;

fn ushap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ushap"))
        .args(args)
        .env_remove("USHAP_SEED")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("valid JSON")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn column(doc: &Value, key: &str) -> Vec<f64> {
    doc["players"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p[key].as_f64().unwrap())
        .collect()
}

#[test]
fn solve_game_a() {
    let dir = tempfile::tempdir().unwrap();
    let game = write(dir.path(), "a.json", GAME_A);
    let doc = stdout_json(&ushap(&["solve", s(&game)]));
    assert_eq!(doc["n"], 2);
    assert_eq!(column(&doc, "phi"), vec![1.5, 2.5]);
    assert_eq!(column(&doc, "sigma2"), vec![0.25, 0.25]);
    assert_eq!(doc["players"][0]["player"], 1);
}

#[test]
fn solve_constant_game_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let game = write(
        dir.path(),
        "c.json",
        r#"{"n": 2, "values": {"0": 7, "1": 7, "2": 7, "3": 7}}"#,
    );
    let doc = stdout_json(&ushap(&["solve", s(&game)]));
    assert_eq!(column(&doc, "phi"), vec![0.0, 0.0]);
}

#[test]
fn solve_csv_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let game = write(
        dir.path(),
        "g.json",
        r#"{"n": 2, "values": {"0": 0, "1": 0.1, "2": 0.2, "3": 0.7}}"#,
    );
    let out = ushap(&["solve", s(&game), "--format", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("player,phi,sigma2"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let expected = 0.5 * 0.1 + 0.5 * (0.7 - 0.2);
    assert_eq!(row[1].parse::<f64>().unwrap(), expected);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = write(dir.path(), "m.json", r#"{"n": 2, "values": {"0": 0, "1": 1, "2": 2}}"#);
    assert_eq!(ushap(&["solve", s(&missing)]).status.code(), Some(2));
    let garbage = write(dir.path(), "x.json", "{not json");
    assert_eq!(ushap(&["solve", s(&garbage)]).status.code(), Some(2));
    assert_eq!(ushap(&["solve", "/nonexistent/game.json"]).status.code(), Some(2));
    let big = write(dir.path(), "big.json", r#"{"n": 30, "values": {}}"#);
    assert_eq!(ushap(&["solve", s(&big)]).status.code(), Some(3));
    let bad_noise = write(dir.path(), "n.json", r#"{"type": "bernoulli", "p": 1.5, "c": 1}"#);
    let game = write(dir.path(), "a.json", GAME_A);
    assert_eq!(ushap(&["uncertain", s(&game), s(&bad_noise)]).status.code(), Some(2));
    assert_eq!(ushap(&["solve"]).status.code(), Some(2));
    // A constant feature is collinear with the intercept.
    let data = write(dir.path(), "d.csv", "1,2\n1,3\n1,4\n");
    let out = dir.path().join("out");
    let code = ushap(&["experiment", "--data", s(&data), "--out-dir", s(&out)]).status.code();
    assert_eq!(code, Some(4));
}

#[test]
fn uncertain_bernoulli_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let game = write(dir.path(), "a.json", GAME_A);
    let bern = write(dir.path(), "b.json", BERNOULLI);
    let doc = stdout_json(&ushap(&["uncertain", s(&game), s(&bern)]));
    for v in column(&doc, "sigma2_gamma") {
        assert!((v - 1.1055e-3).abs() < 1e-12);
    }
    assert_eq!(column(&doc, "phi_tilde"), vec![1.5, 2.5]);

    let table = write(dir.path(), "t.json", TABLE_NOISE);
    let doc = stdout_json(&ushap(&["uncertain", s(&game), s(&table)]));
    assert!((column(&doc, "gamma")[0] - 0.2).abs() < 1e-15);
    let keys = [
        "player", "phi", "gamma", "phi_tilde", "sigma2_intrinsic", "sigma2_gamma", "xi",
        "sigma2_total",
    ];
    for k in keys {
        assert!(doc["players"][0].get(k).is_some(), "missing {k}");
    }
}

#[test]
fn uncertain_with_no_noise_equals_solve() {
    let dir = tempfile::tempdir().unwrap();
    let game = write(dir.path(), "a.json", GAME_A);
    let none = write(dir.path(), "n.json", r#"{"type": "none"}"#);
    let solve = stdout_json(&ushap(&["solve", s(&game)]));
    let unc = stdout_json(&ushap(&["uncertain", s(&game), s(&none)]));
    assert_eq!(column(&solve, "phi"), column(&unc, "phi_tilde"));
    assert_eq!(column(&solve, "sigma2"), column(&unc, "sigma2_total"));
    for key in ["gamma", "sigma2_gamma", "xi"] {
        assert_eq!(column(&unc, key), vec![0.0, 0.0]);
    }
}

#[test]
fn shifted_game_round_trip() {
    use ushap::shapley_uncertain::shifted_game;
    use ushap::{DeterministicGame, NoiseModel, UncertainGame};

    let dir = tempfile::tempdir().unwrap();
    let game = write(dir.path(), "a.json", GAME_A);
    let table = write(dir.path(), "t.json", TABLE_NOISE);
    let ug = UncertainGame::new(
        DeterministicGame::from_json(GAME_A).unwrap(),
        NoiseModel::from_json(TABLE_NOISE, 2).unwrap(),
    )
    .unwrap();
    let spec = shifted_game(&ug).unwrap().to_spec().unwrap();
    let shifted = write(dir.path(), "s.json", &serde_json::to_string(&spec).unwrap());
    let phi = column(&stdout_json(&ushap(&["solve", s(&shifted)])), "phi");
    let tilde = column(&stdout_json(&ushap(&["uncertain", s(&game), s(&table)])), "phi_tilde");
    for (a, b) in phi.iter().zip(&tilde) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn estimate_is_seeded_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let game = write(dir.path(), "a.json", GAME_A);
    let noise = write(dir.path(), "g.json", r#"{"type": "gaussian", "sigma": 0.01}"#);
    let out1 = dir.path().join("e1.json");
    let out2 = dir.path().join("e2.json");
    for (out, threads) in [(&out1, "1"), (&out2, "4")] {
        let status = ushap(&[
            "estimate", s(&game), s(&noise), "--repeats", "50", "--seed", "42",
            "--threads", threads, "--output", s(out),
        ])
        .status;
        assert!(status.success());
    }
    assert_eq!(fs::read(&out1).unwrap(), fs::read(&out2).unwrap());
    let doc: Value = serde_json::from_slice(&fs::read(&out1).unwrap()).unwrap();
    let est = &doc["estimates"][0];
    assert_eq!(est["evaluations"], 200);
    let (lo, hi) = (est["ci_low"].as_f64().unwrap(), est["ci_high"].as_f64().unwrap());
    assert!(lo <= 1.5 + 0.01 && 1.5 - 0.01 <= hi);

    let manifest: Value =
        serde_json::from_slice(&fs::read(dir.path().join("e1.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "estimate");
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    assert!(manifest["timestamp"].as_u64().unwrap() > 0);

    // Replaying the manifest rewrites the same bytes.
    fs::remove_file(&out1).unwrap();
    assert!(ushap(&["replay", s(&dir.path().join("e1.json.manifest.json"))]).status.success());
    assert_eq!(fs::read(&out1).unwrap(), fs::read(&out2).unwrap());
}

#[test]
fn seed_defaults_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let game = write(dir.path(), "a.json", GAME_A);
    let noise = write(dir.path(), "g.json", r#"{"type": "gaussian", "sigma": 0.5}"#);
    let run = |env: Option<&str>, extra: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_ushap"));
        cmd.args(["estimate", s(&game), s(&noise), "--repeats", "5"]).args(extra);
        match env {
            Some(v) => cmd.env("USHAP_SEED", v),
            None => cmd.env_remove("USHAP_SEED"),
        };
        cmd.output().unwrap().stdout
    };
    assert_eq!(run(Some("9"), &[]), run(None, &["--seed", "9"]));
    assert_eq!(run(Some("9"), &["--seed", "3"]), run(None, &["--seed", "3"]));
    assert_ne!(run(Some("9"), &[]), run(None, &["--seed", "3"]));
}

#[test]
fn dist_exports() {
    let dir = tempfile::tempdir().unwrap();
    let game = write(dir.path(), "a.json", GAME_A);
    let out = ushap(&["dist", s(&game), "--player", "1"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "player,value,mass");
    assert_eq!(rows.len(), 3);

    let bern = write(dir.path(), "b.json", BERNOULLI);
    let out = ushap(&["dist", s(&game), "--noise", s(&bern), "--player", "1"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 7);

    let gauss = write(dir.path(), "g.json", r#"{"type": "gaussian", "sigma": 0.1}"#);
    let out = ushap(&[
        "dist", s(&game), "--noise", s(&gauss), "--player", "2", "--grid-min", "0",
        "--grid-max", "4", "--grid-points", "401",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("player,value,density"));
    assert_eq!(text.lines().count(), 402);

    assert_eq!(ushap(&["dist", s(&game), "--player", "3"]).status.code(), Some(2));
    let table = write(dir.path(), "t.json", TABLE_NOISE);
    let code = ushap(&["dist", s(&game), "--noise", s(&table), "--player", "1"]).status.code();
    assert_eq!(code, Some(2));
}

fn experiment(out: &Path, extra: &[&str]) -> Value {
    let mut args = vec!["experiment", "--out-dir", s(out)];
    args.extend_from_slice(extra);
    stdout_json(&ushap(&args))
}

#[test]
fn experiment_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let flags = [
        "--samples", "500", "--features", "5", "--seed", "3", "--vf-noise", "bernoulli",
        "--repeats", "4", "--save-data",
    ];
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let report = experiment(&a, &flags);
    experiment(&b, &flags);
    for name in ["shapley.csv", "distributions.csv", "estimates.csv", "dataset.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    assert!(a.join("manifest.json").exists());
    for p in report["players"].as_array().unwrap() {
        assert!((p["sigma2_gamma"].as_f64().unwrap() - 1.1055e-3).abs() < 1e-12);
    }
    let table = fs::read_to_string(a.join("shapley.csv")).unwrap();
    assert_eq!(table.lines().count(), 6);
}

#[test]
fn experiment_single_noiseless_feature() {
    let dir = tempfile::tempdir().unwrap();
    let report = experiment(
        dir.path(),
        &["--samples", "200", "--features", "1", "--noise-level", "0"],
    );
    let phi = report["players"][0]["phi"].as_f64().unwrap();
    let (v0, v1) = (report["v_empty"].as_f64().unwrap(), report["v_full"].as_f64().unwrap());
    assert_eq!(phi, v1 - v0);
    assert_eq!(report["efficiency_residual"].as_f64().unwrap(), 0.0);
}

#[test]
fn experiment_reads_external_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(
        dir.path(),
        "d.csv",
        "1,0,2\n0,1,3\n1,1,5.1\n2,0,3.9\n0,2,6.2\n3,1,6\n",
    );
    let report = experiment(&dir.path().join("o"), &["--data", s(&data)]);
    assert_eq!(report["features"], 2);
    assert_eq!(report["samples"], 6);
}
