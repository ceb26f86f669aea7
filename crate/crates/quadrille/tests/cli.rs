//! Behavior of the installed binary: exit codes, file outputs, and the
//! failure paths a caller scripts against.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use quadrille::simnet::ClusterSpec;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quadrille"))
        .args(args)
        .env_remove("QUADRILLE_OUT")
        .output()
        .expect("binary runs")
}

fn run_with_env(args: &[&str], key: &str, value: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quadrille"))
        .args(args)
        .env(key, value)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_cluster(dir: &Path) -> PathBuf {
    let path = dir.join("cluster.json");
    ClusterSpec::synthetic(4, 25.0, 320.0).write_json_file(&path).unwrap();
    path
}

// ----- global flags -----

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&["rank-configs", "--help"]).status.code(), Some(0));
}

#[test]
fn unknown_arguments_exit_one() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(run(&[]).status.code(), Some(1));
}

// ----- rank-configs -----

#[test]
fn rank_configs_writes_every_feasible_row() {
    let dir = tempfile::tempdir().unwrap();
    let cluster = write_cluster(dir.path());
    let out = run(&[
        "rank-configs",
        "--cluster",
        cluster.to_str().unwrap(),
        "--preset",
        "gpt-20b",
        "--workers",
        "8",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("20 feasible grid(s)"));

    let csv = std::fs::read_to_string(dir.path().join("rank_configs.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21, "header plus one row per grid");
    assert!(csv.starts_with("rank,g_x,g_y,g_z,g_data,predicted_seconds\n"));

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("rank_configs.json")).unwrap())
            .unwrap();
    let rows = json["rankings"].as_array().unwrap();
    assert_eq!(rows.len(), 20);
    // Cheapest first.
    let times: Vec<f64> = rows.iter().map(|r| r["predicted_seconds"].as_f64().unwrap()).collect();
    assert!(times.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn rank_configs_with_no_feasible_grid_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cluster = write_cluster(dir.path());
    let model = dir.path().join("model.json");
    std::fs::write(&model, r#"{"batch_rows": 7, "layers": [{"k": 3, "n": 3}]}"#).unwrap();
    let out = run(&[
        "rank-configs",
        "--cluster",
        cluster.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--workers",
        "4",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("infeasible"));
}

#[test]
fn malformed_cluster_json_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cluster = dir.path().join("cluster.json");
    std::fs::write(&cluster, "{ not json").unwrap();
    let out = run(&[
        "rank-configs",
        "--cluster",
        cluster.to_str().unwrap(),
        "--preset",
        "gpt-20b",
        "--workers",
        "8",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

// ----- simulate -----

#[test]
fn simulate_writes_consistent_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cluster = write_cluster(dir.path());
    let out = run(&[
        "simulate",
        "--cluster",
        cluster.to_str().unwrap(),
        "--config",
        "2,2,1,2",
        "--preset",
        "gpt-5b",
        "--batch-rows",
        "64",
        "--iterations",
        "3",
        "--overlap",
        "oar,ors,oag",
        "--seed",
        "5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["workers"], 8);
    assert_eq!(summary["traffic"]["matches_volume_model"], true);
    assert_eq!(summary["requested_flags"], "oar,ors,oag");
    assert_eq!(summary["batch_seconds"].as_array().unwrap().len(), 8);
    assert_eq!(summary["losses"].as_array().unwrap().len(), 3);
    // The schedule on measured comm times can never beat bare compute.
    let compute: f64 = summary["compute_per_layer"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| {
            c["forward"].as_f64().unwrap()
                + c["backward_input"].as_f64().unwrap()
                + c["backward_weight"].as_f64().unwrap()
        })
        .sum();
    let requested = summary["requested_batch_seconds"].as_f64().unwrap();
    assert!(requested >= compute);

    let trace: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("trace.json")).unwrap())
            .unwrap();
    assert!(!trace["traceEvents"].as_array().unwrap().is_empty());

    let traffic = std::fs::read_to_string(dir.path().join("traffic.csv")).unwrap();
    assert!(traffic.starts_with("tag,kind,group_size,"));
    assert!(traffic.lines().count() > 1);
}

#[test]
fn simulate_rejects_an_indivisible_grid_with_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cluster = write_cluster(dir.path());
    let out = run(&[
        "simulate",
        "--cluster",
        cluster.to_str().unwrap(),
        "--config",
        "3,1,1,1",
        "--preset",
        "gpt-5b",
        "--batch-rows",
        "64",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("infeasible"));
}

#[test]
fn simulate_rejects_malformed_grid_and_overlap_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cluster = write_cluster(dir.path());
    let base = [
        "simulate",
        "--cluster",
        cluster.to_str().unwrap(),
        "--preset",
        "gpt-5b",
        "--batch-rows",
        "64",
    ];
    let mut bad_config = base.to_vec();
    bad_config.extend(["--config", "2,2,2"]);
    assert_eq!(run(&bad_config).status.code(), Some(1));

    let mut bad_overlap = base.to_vec();
    bad_overlap.extend(["--config", "2,1,1,2", "--overlap", "oar,bogus"]);
    assert_eq!(run(&bad_overlap).status.code(), Some(1));
}

#[test]
fn simulate_honors_the_output_environment_variable() {
    let dir = tempfile::tempdir().unwrap();
    let cluster = write_cluster(dir.path());
    let env_out = dir.path().join("from_env");
    let out = run_with_env(
        &[
            "simulate",
            "--cluster",
            cluster.to_str().unwrap(),
            "--config",
            "2,1,1,2",
            "--preset",
            "gpt-5b",
            "--batch-rows",
            "64",
            "--iterations",
            "3",
            "--seed",
            "11",
        ],
        "QUADRILLE_OUT",
        &env_out,
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(env_out.join("summary.json").is_file());
    assert!(env_out.join("trace.json").is_file());
}

// ----- verify -----

#[test]
fn verify_sweep_passes_and_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "verify",
        "--max-workers",
        "6",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("verify.json")).unwrap())
            .unwrap();
    assert_eq!(report["oracle_failures"], 0);
    assert_eq!(report["fd_failures"], 0);
    // 1 + 4 + 4 + 10 + 4 + 16 factorizations of 1..=6.
    assert_eq!(report["oracle_pairs"], 39);
}

#[test]
fn verify_with_an_injected_fault_fails_loudly() {
    let out = run(&["verify", "--max-workers", "4", "--inject-fault"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("injected fault detected"), "{}", stderr(&out));
}

// ----- tune -----

#[test]
fn tune_reports_a_winning_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "tune",
        "--shape",
        "48,32,40",
        "--trials",
        "3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("tune.json")).unwrap())
            .unwrap();
    let mode = report["mode"].as_str().unwrap();
    assert!(["nn", "nt", "tn"].contains(&mode));
    assert!(report["median_seconds"].as_array().unwrap().iter().all(|t| t.as_f64().unwrap() > 0.0));
}

#[test]
fn tune_rejects_malformed_shapes() {
    assert_eq!(run(&["tune", "--shape", "48,32"]).status.code(), Some(1));
    assert_eq!(run(&["tune", "--shape", "48,0,40"]).status.code(), Some(1));
}

// ----- flops -----

#[test]
fn flops_reproduces_a_direct_sustained_rate() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "flops",
        "--sustained-pflops",
        "1381.0",
        "--workers",
        "32768",
        "--gpu",
        "mi250x-gcd",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("22.0% of advertised peak"), "{text}");

    let csv = std::fs::read_to_string(dir.path().join("flops.csv")).unwrap();
    assert!(csv.starts_with("workers,model,total_pflops,pct_advertised,pct_empirical\n"));
    assert!(csv.lines().nth(1).unwrap().starts_with("32768,measured,1381.0000,"));
}

#[test]
fn flops_counts_a_model_when_given_wall_time() {
    let out = run(&[
        "flops",
        "--preset",
        "gpt-5b",
        "--batch-rows",
        "2048",
        "--workers",
        "512",
        "--seconds",
        "0.5",
        "--gpu",
        "a100",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    // 24 layers * 6 * 2048 * 4096 * 4096 flops = 4.9478e12 per step.
    assert!(stdout(&out).contains("0.0049 Pflop per step"), "{}", stdout(&out));
}

#[test]
fn flops_without_a_rate_source_exits_one() {
    let out = run(&["flops", "--preset", "gpt-5b", "--workers", "512"]);
    assert_eq!(out.status.code(), Some(1));
}
