use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn flashpoint(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_flashpoint"))
        .arg("--config")
        .arg(&cfg)
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn out_arg(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

const SMALL: &str = "seed = 5\ntrajectories = 200\n[stop]\nt_max = 5.0\n";

#[test]
fn missing_seed_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = flashpoint(dir.path(), "trajectories = 10\n", &["simulate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("seed"), "{}", stderr(&out));
}

#[test]
fn nested_type_errors_carry_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = flashpoint(
        dir.path(),
        "seed = 1\n[model]\nbuilder = \"random\"\ndim = \"two\"\n",
        &["simulate"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("model.dim"), "{}", stderr(&out));
    let out = flashpoint(dir.path(), "seed = 1\nseeed = 2\n", &["simulate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_flag_stands_in_for_the_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = flashpoint(
        dir.path(),
        "trajectories = 20\n",
        &[
            "--seed",
            "3",
            "--out",
            &out_arg(dir.path(), "a"),
            "simulate",
        ],
    );
    ok(&out);
    assert_eq!(
        read_json(&dir.path().join("a/summary.json"))["config"]["seed"],
        3
    );
}

#[test]
fn simulate_writes_records_summary_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}[output]\ncsv = true\n");
    let report = ok(&flashpoint(
        dir.path(),
        &cfg,
        &["--out", &out_arg(dir.path(), "sim"), "simulate"],
    ));
    let records = std::fs::read_to_string(dir.path().join("sim/records.jsonl")).unwrap();
    let lines: Vec<Value> = records
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(
        lines.len() as u64,
        report["flashes_total"].as_u64().unwrap()
    );
    assert!(lines
        .iter()
        .all(|r| r["traj"].is_u64() && r["k"].is_u64() && r["t"].is_f64() && r["q"].is_u64()));
    let summary = read_json(&dir.path().join("sim/summary.json"));
    assert_eq!(summary["schema_version"], 1);
    assert_eq!(summary["command"], "simulate");
    assert_eq!(summary["config"]["trajectories"], 200);
    assert_eq!(summary["config"]["stop"]["t_max"], 5.0);
    let csv = std::fs::read_to_string(dir.path().join("sim/flashes.csv")).unwrap();
    assert!(csv.starts_with("traj,k,label,t,q,x\n"));
    assert_eq!(csv.lines().count(), lines.len() + 1);
}

#[test]
fn times_carry_twelve_significant_digits() {
    let dir = tempfile::tempdir().unwrap();
    ok(&flashpoint(
        dir.path(),
        SMALL,
        &["--out", &out_arg(dir.path(), "sim"), "simulate"],
    ));
    let records = std::fs::read_to_string(dir.path().join("sim/records.jsonl")).unwrap();
    for line in records.lines().take(50) {
        let t = serde_json::from_str::<Value>(line).unwrap()["t"]
            .as_f64()
            .unwrap();
        assert_eq!(t, format!("{t:.11e}").parse::<f64>().unwrap());
    }
}

#[test]
fn records_do_not_depend_on_the_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let run = |name: &str, threads: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_flashpoint"))
            .arg("--config")
            .arg(&cfg)
            .args(["--out", &out_arg(dir.path(), name), "simulate"])
            .env("FLASHPOINT_THREADS", threads)
            .output()
            .unwrap();
        ok(&out);
        std::fs::read(dir.path().join(name).join("records.jsonl")).unwrap()
    };
    assert_eq!(run("one", "1"), run("four", "4"));
}

#[test]
fn different_seeds_give_different_records() {
    let dir = tempfile::tempdir().unwrap();
    ok(&flashpoint(
        dir.path(),
        SMALL,
        &["--out", &out_arg(dir.path(), "a"), "simulate"],
    ));
    ok(&flashpoint(
        dir.path(),
        SMALL,
        &[
            "--seed",
            "6",
            "--out",
            &out_arg(dir.path(), "b"),
            "simulate",
        ],
    ));
    let a = std::fs::read(dir.path().join("a/records.jsonl")).unwrap();
    let b = std::fs::read(dir.path().join("b/records.jsonl")).unwrap();
    assert_ne!(a, b);
}

const TWO_BY_TWO: &str = r#"seed = 1
[model]
builder = "constant-rate"
n_q = 2
box_length = 2.0
lambda = 1.0
rates = [
  [[[1.0, 0.0], [0.2, 0.1]], [[0.2, -0.1], [0.5, 0.0]]],
  [[[0.4, 0.0], [0.0, -0.3]], [[0.0, 0.3], [1.2, 0.0]]],
]
hamiltonian = [[[0.5, 0.0], [0.3, 0.2]], [[0.3, -0.2], [-0.5, 0.0]]]
"#;

#[test]
fn povm_check_on_a_two_by_two_preset() {
    let dir = tempfile::tempdir().unwrap();
    let report = ok(&flashpoint(
        dir.path(),
        TWO_BY_TWO,
        &["--out", &out_arg(dir.path(), "povm"), "check", "povm"],
    ));
    assert!(
        report["normalization_dev"].as_f64().unwrap() < 1e-6,
        "{report}"
    );
    assert!(
        report["consistency_dev"].as_f64().unwrap() < 1e-6,
        "{report}"
    );
    assert_eq!(
        read_json(&dir.path().join("povm/povm.json"))["command"],
        "check povm"
    );
}

#[test]
fn gauge_check_reports_every_gauge() {
    let dir = tempfile::tempdir().unwrap();
    let report = ok(&flashpoint(
        dir.path(),
        "seed = 2\n[check]\ndepth = 2\nhistories = 2\n",
        &["--out", &out_arg(dir.path(), "g"), "check", "gauge"],
    ));
    let gauges = report["gauges"].as_object().unwrap();
    for name in [
        "constant-unitary",
        "heisenberg",
        "square-root",
        "heisenberg-plus",
    ] {
        let dev = gauges[name]["max_density_dev"].as_f64().unwrap();
        assert!(dev < 1e-8, "{name}: {dev}");
    }
}

#[test]
fn reconstruct_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let report = ok(&flashpoint(
        dir.path(),
        "seed = 3\n[check]\ndepth = 1\nhistories = 2\n",
        &[
            "--out",
            &out_arg(dir.path(), "r"),
            "reconstruct",
            "--roundtrip",
        ],
    ));
    assert!(
        report["sqrt_plus_roundtrip_dev"].as_f64().unwrap() < 1e-7,
        "{report}"
    );
    assert!(
        report["heisenberg_plus_roundtrip_dev"].as_f64().unwrap() < 1e-6,
        "{report}"
    );
    assert!(report["sqrt_plus_min_eigenvalue_c"].as_f64().unwrap() > -1e-10);
}

#[test]
fn exhausted_quadrature_budget_exits_3_naming_the_operation() {
    let dir = tempfile::tempdir().unwrap();
    let out = flashpoint(
        dir.path(),
        "seed = 1\n[model]\nn_q = 200\n[check]\nn = 3\n",
        &["--out", &out_arg(dir.path(), "p"), "check", "povm"],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(
        stderr(&out).contains("POVM normalization"),
        "{}",
        stderr(&out)
    );
}

/// Poisson-process records up to the t = 40 horizon with the given gap generator.
fn write_records(path: &Path, trajectories: u64, mut gap: impl FnMut() -> f64) {
    let mut text = String::new();
    for traj in 0..trajectories {
        let (mut t, mut k) = (gap(), 1);
        while t < 40.0 {
            text.push_str(&format!(
                "{{\"traj\":{traj},\"k\":{k},\"label\":0,\"t\":{t},\"q\":0}}\n"
            ));
            t += gap();
            k += 1;
        }
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn stats_accepts_an_exponential_sample() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("exp.jsonl");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    write_records(&input, 1000, || -(1.0 - rng.random::<f64>()).ln());
    let out = flashpoint(
        dir.path(),
        "seed = 1\n[stop]\nt_max = 40.0\n",
        &[
            "--out",
            &out_arg(dir.path(), "s"),
            "stats",
            "--input",
            &input.display().to_string(),
            "--rate",
            "1",
        ],
    );
    let report = ok(&out);
    assert!(report["ks_exponential_n"].as_u64().unwrap() > 20000);
    assert!(
        report["ks_exponential_p"].as_f64().unwrap() > 0.01,
        "{report}"
    );
    assert!(dir.path().join("s/stats.json").exists());
}

#[test]
fn stats_rejects_a_constant_sample() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("const.jsonl");
    write_records(&input, 100, || 1.0);
    let report = ok(&flashpoint(
        dir.path(),
        "seed = 1\n[stop]\nt_max = 40.0\n",
        &[
            "--out",
            &out_arg(dir.path(), "s"),
            "stats",
            "--input",
            &input.display().to_string(),
            "--rate",
            "1",
        ],
    ));
    assert!(
        report["ks_exponential_p"].as_f64().unwrap() < 1e-6,
        "{report}"
    );
}

#[test]
fn stats_refuses_small_or_empty_samples() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let args = |p: &Path| {
        vec![
            "--out".to_string(),
            out_arg(dir.path(), "s"),
            "stats".into(),
            "--input".into(),
            p.display().to_string(),
            "--rate".into(),
            "1".into(),
        ]
    };
    let out = flashpoint(
        dir.path(),
        "seed = 1\n[stop]\nt_max = 40.0\n",
        &args(&empty).iter().map(String::as_str).collect::<Vec<_>>(),
    );
    assert_eq!(out.status.code(), Some(4));
    let few = dir.path().join("few.jsonl");
    write_records(&few, 3, || 1.0);
    let out = flashpoint(
        dir.path(),
        "seed = 1\n[stop]\nt_max = 40.0\n",
        &args(&few).iter().map(String::as_str).collect::<Vec<_>>(),
    );
    assert_eq!(out.status.code(), Some(4));
    let missing = dir.path().join("missing.jsonl");
    let out = flashpoint(
        dir.path(),
        "seed = 1\n[stop]\nt_max = 40.0\n",
        &args(&missing)
            .iter()
            .map(String::as_str)
            .collect::<Vec<_>>(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn stats_on_simulated_records_matches_the_run_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "seed = 5\ntrajectories = 150\n";
    let run = ok(&flashpoint(
        dir.path(),
        cfg,
        &["--out", &out_arg(dir.path(), "sim"), "simulate"],
    ));
    let input = dir.path().join("sim/records.jsonl").display().to_string();
    let stats = ok(&flashpoint(
        dir.path(),
        cfg,
        &[
            "--out",
            &out_arg(dir.path(), "st"),
            "stats",
            "--input",
            &input,
            "--rate",
            "1",
        ],
    ));
    assert_eq!(stats["format"], "grwf");
    for key in [
        "flashes_total",
        "count_mean",
        "empirical_rate",
        "ks_exponential_statistic",
    ] {
        assert_eq!(stats[key], run[key], "{key}");
    }
}

#[test]
fn rgrwf_writes_spacetime_records_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "seed = 4\ntrajectories = 20\n[rgrwf]\nn_labels = 2\nn_per_label = 1\n[output]\ncsv = true\n";
    let report = ok(&flashpoint(
        dir.path(),
        cfg,
        &["--out", &out_arg(dir.path(), "rel"), "rgrwf"],
    ));
    assert_eq!(report["causal_fraction"], 1.0);
    let records = std::fs::read_to_string(dir.path().join("rel/records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 40);
    let first: Value = serde_json::from_str(records.lines().next().unwrap()).unwrap();
    for key in ["traj", "label", "k", "t", "x", "tau_from_prev"] {
        assert!(!first[key].is_null(), "{key}");
    }
    let diag = read_json(&dir.path().join("rel/diagnostics.json"));
    assert_eq!(diag["schema_version"], 1);
    assert!(diag["lattice"]["dx"].as_f64().unwrap() > 0.0);
    assert!(dir.path().join("rel/spacetime.csv").exists());
}

#[test]
fn ck_demo_satisfies_every_triple() {
    let dir = tempfile::tempdir().unwrap();
    let report = ok(&flashpoint(
        dir.path(),
        "seed = 8\ntrajectories = 500\n[ck]\nt_max = 5\ncompare_t_max = 2\n",
        &["--out", &out_arg(dir.path(), "ck"), "ck-demo"],
    ));
    assert_eq!(report["triple_violations"], 0);
    assert_eq!(report["order_comparison"].as_array().unwrap().len(), 2);
    let records = std::fs::read_to_string(dir.path().join("ck/records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 500);
}
