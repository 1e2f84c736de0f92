use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use paulilearn::bounds::{crossover, LowerVariant};
use paulilearn::random::random_policy;
use paulilearn::scheme::SchemeFile;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_paulilearn"));
    cmd.env_remove("PAULILEARN_MAX_N").env_remove("PAULILEARN_MAX_LEAVES");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn paulilearn")
}

fn stdout_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("stderr is empty");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("not JSON ({e}): {text}"))
}

fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Rows of a CSV document as string fields, header first.
fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn column(rows: &[Vec<String>], name: &str) -> Vec<String> {
    let idx = rows[0].iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows[1..].iter().map(|r| r[idx].clone()).collect()
}

fn values(json: &str) -> Vec<f64> {
    let v: serde_json::Value = serde_json::from_str(json).unwrap();
    v["values"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn transform_identity_gives_all_ones() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "id.json", r#"{"n":2,"representation":"error_rates","values":[1,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0]}"#);
    let out = stdout_ok(&["transform", "--input", s(&f), "--to", "eigenvalues"]);
    assert_eq!(values(&out), vec![1.0; 16]);
}

#[test]
fn transform_single_qubit_matches_direct_sum() {
    // canonical order I, Z, X, Y
    let p = [0.9, 0.0, 0.1, 0.0];
    let anticommute = |a: usize, b: usize| a != 0 && b != 0 && a != b;
    let expected: Vec<f64> = (0..4)
        .map(|b| (0..4).map(|a| if anticommute(a, b) { -p[a] } else { p[a] }).sum())
        .collect();
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "c.json", r#"{"n":1,"representation":"error_rates","values":[0.9,0,0.1,0]}"#);
    let got = values(&stdout_ok(&["transform", "--input", s(&f), "--to", "eigenvalues"]));
    for (g, e) in got.iter().zip(&expected) {
        assert!((g - e).abs() < 1e-12, "{got:?} vs {expected:?}");
    }
    assert!((got[2] - 1.0).abs() < 1e-12 && (got[1] - 0.8).abs() < 1e-12);
}

#[test]
fn transform_round_trip_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let f = write(
        &dir,
        "c.json",
        r#"{"n":1,"representation":"error_rates","values":[0.5,0.25,0.125,0.125]}"#,
    );
    let canonical = stdout_ok(&["transform", "--input", s(&f), "--to", "error-rates"]);
    let eig = dir.path().join("eig.json");
    stdout_ok(&["transform", "--input", s(&f), "--to", "eigenvalues", "-o", s(&eig)]);
    let back = stdout_ok(&["transform", "--input", s(&eig), "--to", "error-rates"]);
    assert_eq!(canonical, back);
}

#[test]
fn invalid_channel_exits_nonzero_with_json() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "bad.json", r#"{"n":1,"representation":"eigenvalues","values":[1,1.5,0,0]}"#);
    let out = run(&["validate", "--channel", s(&f)]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "validation");
    assert_eq!(err["details"]["completely_positive"], false);

    let out = run(&["simulate", "--protocol", "ea", "--channel", s(&f), "--shots", "10"]);
    assert_eq!(out.status.code(), Some(1));

    let missing = run(&["transform", "--input", "/nonexistent/c.json", "--to", "eigenvalues"]);
    assert_eq!(missing.status.code(), Some(1));
    assert_eq!(stderr_json(&missing)["error"], "core");
}

#[test]
fn conflicting_flags_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "id.json", r#"{"n":1,"representation":"error_rates","values":[1,0,0,0]}"#);
    let cases: [&[&str]; 4] = [
        &["simulate", "--protocol", "ea", "--channel", s(&f), "--shots", "5", "--p-depol", "0.1", "--bell-fidelity", "0.9"],
        &["simulate", "--protocol", "ea", "--channel", s(&f), "--shots", "5", "--eps", "0.1", "--delta", "0.3"],
        &["simulate", "--protocol", "ea", "--channel", s(&f)],
        &["simulate", "--protocol", "af", "--channel", s(&f), "--shots", "5", "--p-depol", "0.1"],
    ];
    for args in cases {
        let out = run(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert_eq!(stderr_json(&out)["error"], "usage");
    }
}

#[test]
fn ea_on_identity_channel_is_exact() {
    let dir = TempDir::new().unwrap();
    let mut vals = vec!["0"; 16];
    vals[0] = "1";
    let body = format!(r#"{{"n":2,"representation":"error_rates","values":[{}]}}"#, vals.join(","));
    let f = write(&dir, "id.json", &body);
    let out = stdout_ok(&["simulate", "--protocol", "ea", "--channel", s(&f), "--shots", "1000", "--p-depol", "0"]);
    let rows = csv_rows(&out);
    assert_eq!(rows[0], ["protocol", "n", "target", "shots", "estimate", "truth", "error", "seed"]);
    assert_eq!(rows.len(), 16);
    for e in column(&rows, "estimate") {
        assert_eq!(e.parse::<f64>().unwrap(), 1.0);
    }
}

#[test]
fn af_budget_is_groups_times_per_group_shots() {
    let dir = TempDir::new().unwrap();
    let body = r#"{"n":2,"representation":"error_rates","values":[0.7,0.05,0.05,0.02,0.02,0.02,0.02,0.02,0.02,0.02,0.02,0.02,0.02,0,0,0]}"#;
    let f = write(&dir, "c.json", body);
    let delta = (1.0f64 / 3.0).to_string();
    let out = stdout_ok(&["simulate", "--protocol", "af", "--channel", s(&f), "--eps", "0.1", "--delta", &delta]);
    let rows = csv_rows(&out);
    assert_eq!(rows.len(), 16);
    for shots in column(&rows, "shots") {
        assert_eq!(shots.parse::<u64>().unwrap(), 5 * 359);
    }
}

#[test]
fn coarse_protocol_reports_one_row_per_block() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "c.json", r#"{"n":1,"representation":"error_rates","values":[0.8,0.1,0.05,0.05]}"#);
    let part = write(&dir, "p.json", r#"{"n":1,"blocks":[[1,2],[3]]}"#);
    let out = stdout_ok(&[
        "simulate", "--protocol", "coarse", "--channel", s(&f), "--partition", s(&part), "--shots", "2000",
    ]);
    let rows = csv_rows(&out);
    assert_eq!(column(&rows, "target"), ["Z+X", "Y"]);
    for e in column(&rows, "error") {
        assert!(e.parse::<f64>().unwrap().abs() < 0.1);
    }
    let out = run(&["simulate", "--protocol", "coarse", "--channel", s(&f), "--shots", "10"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn curve_at_unit_fidelity_has_constant_upper_bound() {
    let out = stdout_ok(&["curve", "--bell-fidelity", "1.0", "--n-max", "40"]);
    let rows = csv_rows(&out);
    assert_eq!(rows[0], ["n", "ef_exact", "ef_plotted", "af_previous", "ea_upper"]);
    assert_eq!(rows.len(), 41);
    assert!(column(&rows, "ea_upper").iter().all(|v| v == "359"));

    let single = csv_rows(&stdout_ok(&["curve", "--variant", "af-previous", "--n-max", "3"]));
    assert_eq!(single[0], ["n", "af_previous"]);
    assert_eq!(single.len(), 4);
}

#[test]
fn bounds_prints_a_single_value() {
    let out = stdout_ok(&["bounds", "--n", "5", "--eps", "0.1", "--variant", "ea-upper"]);
    assert_eq!(out.trim(), "359");
    let out = run(&["bounds", "--n", "5", "--eps", "0.2", "--variant", "ef-exact"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn crossover_matches_library_scan() {
    for (f, variant, lower) in [
        ("0.95", "previous", LowerVariant::Previous),
        ("0.95", "improved", LowerVariant::Improved),
        ("0.9", "previous", LowerVariant::Previous),
        ("0.9", "improved", LowerVariant::Improved),
    ] {
        let rows = csv_rows(&stdout_ok(&["crossover", "--bell-fidelity", f, "--variant", variant]));
        let expected = crossover(f.parse().unwrap(), 0.1, 1.0 / 3.0, lower).unwrap().n_cross;
        let got = &column(&rows, "n_cross")[0];
        assert_eq!(got, &expected.map(|n| n.to_string()).unwrap_or_default(), "{f} {variant}");
    }
    let rows = csv_rows(&stdout_ok(&["crossover", "--bell-fidelity", "0.95", "--variant", "improved", "--at-n", "25"]));
    assert!(column(&rows, "ratio")[0].parse::<f64>().unwrap() > 1.0);
}

#[test]
fn truth_player_always_wins() {
    let rows = csv_rows(&stdout_ok(&["game", "--n", "2", "--eps0", "0.3", "--player", "truth", "--trials", "200"]));
    assert_eq!(column(&rows, "success_rate")[0], "1.0");
}

#[test]
fn game_respects_qubit_cap_from_env() {
    let out = bin()
        .args(["game", "--n", "2", "--eps0", "0.3", "--player", "truth", "--trials", "5"])
        .env("PAULILEARN_MAX_N", "1")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_json(&out)["message"].as_str().unwrap().contains("exceeds"));
}

#[test]
fn outputs_are_reproducible() {
    let commands: [&[&str]; 3] = [
        &["game", "--n", "2", "--eps0", "0.3", "--player", "ea", "--trials", "100", "--seed", "7"],
        &["tvd-check", "--n", "1", "--eps0", "0.2", "--policies", "random:20", "--seed", "3"],
        &["game", "--n", "1", "--eps0", "0.2", "--player", "af", "--trials", "50", "--breakdown"],
    ];
    for args in commands {
        let a = stdout_ok(args);
        let mut single = args.to_vec();
        single.extend(["--threads", "1"]);
        assert_eq!(a, stdout_ok(args));
        assert_eq!(a, stdout_ok(&single), "{args:?}");
    }
    let a = stdout_ok(&["tvd-check", "--n", "1", "--eps0", "0.2", "--policies", "random:20", "--seed", "4"]);
    let b = stdout_ok(&["tvd-check", "--n", "1", "--eps0", "0.2", "--policies", "random:20", "--seed", "3"]);
    assert_ne!(a, b);
}

#[test]
fn tvd_check_random_policies_all_hold() {
    let out = stdout_ok(&["tvd-check", "--n", "1", "--eps0", "0.2", "--policies", "random:500"]);
    let rows = csv_rows(&out);
    assert_eq!(&rows[0][..5], ["policy", "lhs", "rhs", "slack", "holds"]);
    assert_eq!(rows.len(), 501);
    assert!(column(&rows, "holds").iter().all(|h| h == "true"));

    let coarse = stdout_ok(&["tvd-check", "--n", "2", "--eps0", "0.3", "--policies", "random:10", "--kind", "coarse"]);
    assert!(column(&csv_rows(&coarse), "holds").iter().all(|h| h == "true"));
}

#[test]
fn scheme_files_validate_and_certify() {
    let dir = TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let files: Vec<SchemeFile> = (0..3)
        .map(|d| SchemeFile::from_policy(&random_policy(1, d + 1, &mut rng).unwrap()))
        .collect();
    let single = write(&dir, "one.json", &serde_json::to_string(&files[0]).unwrap());
    let many = write(&dir, "many.json", &serde_json::to_string(&files).unwrap());

    let report: serde_json::Value = serde_json::from_str(&stdout_ok(&["validate", "--scheme", s(&single)])).unwrap();
    assert_eq!(report["valid"], true);
    assert_eq!(report["depth"], 1);

    let rows = csv_rows(&stdout_ok(&["tvd-check", "--n", "1", "--eps0", "0.1", "--policies", s(&many)]));
    assert_eq!(rows.len(), 4);

    let out = bin()
        .args(["tvd-check", "--n", "1", "--eps0", "0.1", "--policies", s(&many)])
        .env("PAULILEARN_MAX_LEAVES", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    let broken = write(&dir, "broken.json", r#"{"n":1,"depth":1,"initial":[],"instruments":[],"povms":[],"extra":1}"#);
    assert_eq!(run(&["validate", "--scheme", s(&broken)]).status.code(), Some(1));
}

#[test]
fn partition_files_validate() {
    let dir = TempDir::new().unwrap();
    let good = write(&dir, "p.json", r#"{"n":1,"blocks":[[1,2],[3]]}"#);
    let report: serde_json::Value = serde_json::from_str(&stdout_ok(&["validate", "--partition", s(&good)])).unwrap();
    assert_eq!(report["max_block_size"], 2);
    let bad = write(&dir, "q.json", r#"{"n":1,"blocks":[[1,2]]}"#);
    assert_eq!(run(&["validate", "--partition", s(&bad)]).status.code(), Some(1));
}
