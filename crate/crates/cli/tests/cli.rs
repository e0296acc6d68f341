use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robust-aht"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cli(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn random_training_is_fast_and_uniform() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let start = Instant::now();
    ok(&["train", "--method", "random", "--out-dir", s(&out)]);
    assert!(start.elapsed().as_secs_f64() < 1.0);
    let policy: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("policy.json")).unwrap()).unwrap();
    let table = policy["table"].as_object().unwrap();
    assert_eq!(table.len(), 21);
    for row in table.values() {
        assert_eq!(row, &serde_json::json!([0.5, 0.5]));
    }
    for f in ["prior.json", "trace.csv", "metrics.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn mu_training_writes_a_robust_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mu");
    ok(&["train", "--method", "mu", "--out-dir", s(&out)]);
    let rows = csv_rows(&out.join("trace.csv"));
    let header = &rows[0];
    assert_eq!(header[0], "iter");
    assert_eq!(&header[header.len() - 5..], ["bayes_utility", "bayes_regret", "u_min", "r_max", "grad_norm_theta"]);
    assert_eq!(header.len(), 1 + 10 + 5);
    let last = rows.last().unwrap();
    let u_min: f64 = last[header.len() - 3].parse().unwrap();
    assert!(u_min >= 2.9, "{u_min}");
    let prior: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("prior.json")).unwrap()).unwrap();
    assert_eq!(prior["scenarios"].as_array().unwrap().len(), 10);
}

#[test]
fn divergence_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"eta_theta": 1e6, "iterations": 50}"#).unwrap();
    let out = cli(&["train", "--method", "pbr", "--config", s(&cfg), "--out-dir", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(dir.path().join("o/trace.csv").exists());
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["train", "--method", "nope", "--out-dir", s(dir.path())]);
    assert!(!out.status.success());

    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, "{\n  \"eta_theta\": -1\n}").unwrap();
    let out = cli(&["train", "--method", "mu", "--config", s(&cfg), "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("eta_theta"));

    let game = dir.path().join("game.json");
    fs::write(&game, "{\"players\": 2,\n \"actions\": [\"C\", \"D\"],\n \"payoffs\": [[[4, 4], [0, 5]], [[5, 0], [1, 1]]],\n \"horizon\": 3,,\n}").unwrap();
    let out = cli(&["gen-background", "--game", s(&game), "--out", s(&dir.path().join("p.json"))]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(!out.status.success() && err.contains("line 4"), "{err}");

    // canonical9 needs C/D actions.
    fs::write(
        &game,
        r#"{"players": 2, "actions": ["X", "Y"], "payoffs": [[[1, 1], [0, 0]], [[0, 0], [1, 1]]], "horizon": 2}"#,
    )
    .unwrap();
    let out = cli(&["gen-background", "--game", s(&game), "--out", s(&dir.path().join("p.json"))]);
    assert!(!out.status.success());
}

#[test]
fn canonical_population_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let pop = dir.path().join("pop.json");
    ok(&["gen-background", "--set", "canonical9", "--out", s(&pop)]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&pop).unwrap()).unwrap();
    let ids: Vec<&str> = v["policies"].as_array().unwrap().iter().map(|p| p["id"].as_str().unwrap()).collect();
    assert_eq!(ids.len(), 9);
    assert!(ids.contains(&"tit_for_tat_c") && ids.contains(&"tit_for_tat_d"));

    let game = robust_aht::RepeatedGame::prisoners_dilemma(3);
    let loaded = robust_aht::io::read_population(&game, &pop).unwrap();
    let original = robust_aht::canonical::canonical_population();
    for (a, b) in original.entries().iter().zip(loaded.entries()) {
        for h in game.all_histories() {
            for seat in 0..2 {
                assert_eq!(a.policy.act(&game, &h, seat).unwrap(), b.policy.act(&game, &h, seat).unwrap());
            }
        }
    }
    let pc = loaded.get("pure_cooperate").unwrap();
    for h in game.all_histories() {
        assert_eq!(pc.act(&game, &h, 0).unwrap(), vec![1.0, 0.0]);
    }
}

#[test]
fn evaluate_and_testsets() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    ok(&["train", "--method", "random", "--out-dir", s(&p("r"))]);
    let policy = p("r/policy.json");
    ok(&["evaluate", "--policy", s(&policy), "--scenarios", "train", "--out", s(&p("e.csv")), "--metrics", s(&p("m.csv"))]);
    let rows = csv_rows(&p("m.csv"));
    assert_eq!(rows[0], ["method", "scenario_set", "u_avg", "u_min", "r_max", "exact_br"]);
    let vals: Vec<f64> = rows[1][2..5].iter().map(|x| x.parse().unwrap()).collect();
    assert!((vals[1] - 1.5).abs() <= 0.01 && (vals[2] - 5.5).abs() <= 0.01);
    assert_eq!(csv_rows(&p("e.csv")).len(), 11);

    ok(&["gen-testset", "--epsilon", "0", "--count", "18", "--seed", "2", "--out", s(&p("t0.json"))]);
    ok(&["evaluate", "--policy", s(&policy), "--scenarios", s(&p("t0.json")), "--out", s(&p("e0.csv")), "--metrics", s(&p("m0.csv"))]);
    let test_rows = csv_rows(&p("m0.csv"));
    assert_eq!(test_rows[1][1], "test");
    assert_eq!(test_rows[1][2..], rows[1][2..]);
}

#[test]
fn population_checks_and_background_training() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["check-population", "--out", s(&dir.path().join("gaps.json"))]);
    assert!(out.contains("non-degenerative: true"));
    assert_eq!(out.lines().filter(|l| l.contains(" gap ")).count(), 10);

    let bg = dir.path().join("bg.json");
    ok(&["train-background", "--subpops", "2,3,5", "--prefs-seed", "1", "--iterations", "50", "--out", s(&bg)]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&bg).unwrap()).unwrap();
    let entries = v["policies"].as_array().unwrap();
    assert_eq!(entries.len(), 10);
    let in_last = entries.iter().filter(|e| e["subpopulation"] == "subpop_2").count();
    assert_eq!(in_last, 5);
    // The trained population is itself usable as a background.
    ok(&["check-population", s(&bg)]);
}

#[test]
fn sweep_audit_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    ok(&["train", "--method", "random", "--out-dir", s(&p("r"))]);
    let spec = format!("random={}", s(&p("r/policy.json")));
    ok(&["sweep-epsilon", "--policy", &spec, "--grid", "0,0.25,0.5", "--count", "27", "--out", s(&p("sweep.csv"))]);
    let rows = csv_rows(&p("sweep.csv"));
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[1], ["random", "0", "7.5", "1.5", "5.5"]);

    let out = ok(&["audit", "--epsilon", "0.5", "--count", "32", "--num-policies", "5", "--out", s(&p("audit.json"))]);
    assert!(out.contains("bounds hold: true"));

    fs::write(
        p("manifest.json"),
        r#"{"configs": [{"method": "random"}, {"method": "pbr", "iterations": 200}],
            "test": {"epsilon": 0.5, "count": 27, "seed": 3}, "out_dir": "run"}"#,
    )
    .unwrap();
    ok(&["run", s(&p("manifest.json"))]);
    let rows = csv_rows(&p("run/metrics.csv"));
    assert_eq!(rows.len(), 5);
    assert!(p("run/pbr/policy.json").exists() && p("run/testset.json").exists());
}

#[test]
fn inputs_are_not_modified() {
    let dir = tempfile::tempdir().unwrap();
    let pop = dir.path().join("pop.json");
    ok(&["gen-background", "--out", s(&pop)]);
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"iterations": 20}"#).unwrap();
    let before = (fs::read(&pop).unwrap(), fs::read(&cfg).unwrap());
    ok(&["train", "--method", "mu", "--config", s(&cfg), "--population", s(&pop), "--out-dir", s(&dir.path().join("o"))]);
    ok(&["check-population", s(&pop)]);
    assert_eq!(before, (fs::read(&pop).unwrap(), fs::read(&cfg).unwrap()));
}
