//! End-to-end checks of the `dansf` binary: exit codes, determinism of the
//! emitted CSVs, config file + override handling, and the plot/verify paths.

use std::fs;
use std::path::Path;
use std::process::Command;

fn dansf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dansf"))
}

fn tiny_config(dir: &Path) -> String {
    let config = serde_json::json!({
        "num_nodes": 4,
        "output_dim": 2,
        "channels_per_node": 3,
        "mc_runs": 2,
        "max_iterations": 12,
        "master_seed": 77,
        "out_dir": dir.join("out").to_str().unwrap(),
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_is_deterministic_and_reports_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let run = |out: &str| {
        let output = dansf()
            .args(["run", "--config", &config, "--set", &format!("out_dir={out}")])
            .output()
            .unwrap();
        assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
        output
    };
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    run(out_a.to_str().unwrap());
    run(out_b.to_str().unwrap());
    let raw_a = fs::read(out_a.join("raw_fully_connected.csv")).unwrap();
    let raw_b = fs::read(out_b.join("raw_fully_connected.csv")).unwrap();
    assert_eq!(raw_a, raw_b, "identical config and seed must give identical bytes");
    assert!(out_a.join("summary_fully_connected.csv").exists());
    assert!(out_a.join("convergence_fully_connected.svg").exists());
    assert!(out_a.join("family.json").exists());
}

#[test]
fn seed_changes_the_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let run = |out: &Path, seed: &str| {
        let status = dansf()
            .args([
                "run",
                "--config",
                &config,
                "--seed",
                seed,
                "--set",
                &format!("out_dir={}", out.to_str().unwrap()),
            ])
            .status()
            .unwrap();
        assert!(status.success());
    };
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    run(&out_a, "1");
    run(&out_b, "2");
    assert_ne!(
        fs::read(out_a.join("raw_fully_connected.csv")).unwrap(),
        fs::read(out_b.join("raw_fully_connected.csv")).unwrap()
    );
}

#[test]
fn invalid_config_exits_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let output = dansf()
        .args(["run", "--config", &config, "--set", "problem=bogus"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("bogus"), "stderr should name the bad value: {stderr}");

    let output = dansf()
        .args(["run", "--config", "/nonexistent/config.json"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn plot_rejects_malformed_csv_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "iter,median,q1,q3\n0,oops,1,1\n").unwrap();
    let output = dansf().args(["plot", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("line 2"), "stderr: {stderr}");
}

#[test]
fn plot_renders_sweep_output() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("summary.csv");
    fs::write(
        &csv,
        "topology,iter,median,q1,q3\nline,0,1.0,0.9,1.1\nline,1,0.1,0.09,0.11\n",
    )
    .unwrap();
    let svg_path = dir.path().join("chart.svg");
    let status = dansf()
        .args([
            "plot",
            csv.to_str().unwrap(),
            "--out",
            svg_path.to_str().unwrap(),
            "--title",
            "smoke",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let svg = fs::read_to_string(&svg_path).unwrap();
    assert!(svg.contains("<polyline"));
    assert!(svg.contains("smoke"));
}

#[test]
fn topology_file_flag_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let graph_path = dir.path().join("ring.txt");
    fs::write(&graph_path, "4\n1 2\n2 3\n3 4\n1 4\n").unwrap();
    let out = dir.path().join("ring_out");
    let status = dansf()
        .args([
            "run",
            "--config",
            &config,
            "--topology-file",
            graph_path.to_str().unwrap(),
            "--set",
            &format!("out_dir={}", out.to_str().unwrap()),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("raw_fully_connected.csv").exists());
}
