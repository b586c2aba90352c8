//! End-to-end harness checks: determinism of emitted files, aggregate
//! consistency, plot-data format, manifest completeness, and the CLI
//! surface.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use vvbo::harness::{
    self, aggregate_traces, compute_regret, emit_plotdata, read_aggregate_csv, read_manifest,
    read_trace_csv, trace_file_name, AggregateRow, ExperimentConfig,
};

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("vvbo_test_{tag}_{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn gp_config(method: &str, phases: usize, iters: usize, runs: usize, seed: u64) -> String {
    format!(
        r#"{{"schema_version": 1, "benchmark": "gp", "method": "{method}",
            "phases": {phases}, "iterations_per_phase": {iters},
            "n_runs": {runs}, "master_seed": {seed}}}"#
    )
}

fn run_config(json: &str, out: &Path, workers: usize) -> harness::ExperimentOutputs {
    let resolved = ExperimentConfig::from_json(json).unwrap().resolve().unwrap();
    harness::run_experiment(&resolved, out, workers).unwrap()
}

/// Drops the wall-clock column (always the last) from a trace CSV.
fn strip_wall_clock(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .map(|line| match line.rfind(',') {
            Some(pos) => &line[..pos],
            None => line,
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn zero_iteration_run_emits_empty_files_and_manifest() {
    let dir = temp_dir("empty");
    let outputs = run_config(&gp_config("vvbo", 1, 0, 1, 1), &dir, 1);
    assert!(outputs.failures.is_empty());
    let trace = read_trace_csv(&dir.join(trace_file_name(0))).unwrap();
    assert!(trace.is_empty());
    let manifest = read_manifest(&dir.join("manifest.json")).unwrap();
    assert_eq!(manifest.n_runs, 1);
    // header-only plot data
    let plot = fs::read_to_string(dir.join("plotdata.csv")).unwrap();
    assert_eq!(plot.lines().count(), 1);
    assert!(plot.starts_with("method,benchmark,regime,iteration,metric,mean,std"));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn reruns_are_byte_identical_modulo_wall_clock() {
    let json = gp_config("vvbo", 2, 8, 3, 99);
    let dir_a = temp_dir("det_a");
    let dir_b = temp_dir("det_b");
    run_config(&json, &dir_a, 1);
    // a different worker count must not change any emitted byte either
    run_config(&json, &dir_b, 3);
    for i in 0..3 {
        let a = strip_wall_clock(&dir_a.join(trace_file_name(i)));
        let b = strip_wall_clock(&dir_b.join(trace_file_name(i)));
        assert_eq!(a, b, "trace {i} differs");
    }
    for f in ["aggregate.csv", "plotdata.csv", "manifest.json"] {
        assert_eq!(
            fs::read(dir_a.join(f)).unwrap(),
            fs::read(dir_b.join(f)).unwrap(),
            "{f} differs"
        );
    }
    fs::remove_dir_all(&dir_a).unwrap();
    fs::remove_dir_all(&dir_b).unwrap();
}

#[test]
fn aggregate_matches_recomputation_from_traces() {
    let dir = temp_dir("agg");
    run_config(&gp_config("bo", 2, 6, 4, 7), &dir, 2);
    let traces: Vec<_> = (0..4)
        .map(|i| read_trace_csv(&dir.join(trace_file_name(i))).unwrap())
        .collect();
    let refs: Vec<&vvbo::RegretTrace> = traces.iter().collect();
    let recomputed = aggregate_traces(&refs).unwrap();
    let written = read_aggregate_csv(&dir.join("aggregate.csv")).unwrap();
    assert_eq!(recomputed.len(), written.len());
    for (a, b) in recomputed.iter().zip(&written) {
        assert!((a.simple_mean - b.simple_mean).abs() <= 1e-12);
        assert!((a.simple_std - b.simple_std).abs() <= 1e-12);
        assert!((a.cumulative_mean - b.cumulative_mean).abs() <= 1e-12);
        assert!((a.cumulative_std - b.cumulative_std).abs() <= 1e-12);
    }
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn regret_columns_cross_check_against_raw_objectives() {
    let dir = temp_dir("regret");
    run_config(&gp_config("vvbo", 3, 10, 2, 5), &dir, 1);
    let problem =
        vvbo::SyntheticProblem::new(vvbo::BenchmarkName::Gp, 2024).unwrap();
    let optima: BTreeMap<usize, f64> = (1..=3)
        .map(|p| (p, problem.oracle_optimum(p).unwrap().1))
        .collect();
    for i in 0..2 {
        let trace = read_trace_csv(&dir.join(trace_file_name(i))).unwrap();
        let raw: Vec<(usize, f64)> = trace.records.iter().map(|r| (r.phase, r.objective)).collect();
        let recomputed = compute_regret(&raw, &optima).unwrap();
        for (rec, (simple, cumulative)) in trace.records.iter().zip(&recomputed) {
            assert!((rec.simple_regret - simple).abs() <= 1e-9);
            assert!((rec.cumulative_regret - cumulative).abs() <= 1e-9);
        }
        // structural invariants of a lattice-search benchmark
        for w in trace.records.windows(2) {
            assert!(w[1].cumulative_regret >= w[0].cumulative_regret - 1e-12);
            if w[0].phase == w[1].phase {
                assert!(w[1].simple_regret <= w[0].simple_regret + 1e-12);
            }
        }
    }
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn plotdata_cardinality_and_round_trip() {
    let rows: Vec<AggregateRow> = (1..=10)
        .map(|i| AggregateRow {
            iteration: i,
            phase: 1,
            simple_mean: 1.0 / i as f64,
            simple_std: 0.1 * i as f64,
            cumulative_mean: i as f64 * std::f64::consts::PI,
            cumulative_std: (i as f64).sqrt(),
            n_runs: 10,
        })
        .collect();
    let dir = temp_dir("plot");
    let path = dir.join("plotdata.csv");
    emit_plotdata(&path, "vvbo", "gp", "full", &rows).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    // header + (10 iterations × 2 metrics) data rows, LF line endings
    assert_eq!(text.lines().count(), 21);
    assert!(!text.contains('\r'));
    // parse back with no value drift
    let mut reader = csv::Reader::from_path(&path).unwrap();
    let mut n = 0;
    for rec in reader.records() {
        let rec = rec.unwrap();
        let iteration: usize = rec[3].parse().unwrap();
        let mean: f64 = rec[5].parse().unwrap();
        let std: f64 = rec[6].parse().unwrap();
        let src = &rows[iteration - 1];
        let (expect_mean, expect_std) = match &rec[4] {
            "simple_regret" => (src.simple_mean, src.simple_std),
            "cumulative_regret" => (src.cumulative_mean, src.cumulative_std),
            other => panic!("unexpected metric {other}"),
        };
        assert_eq!(mean.to_bits(), expect_mean.to_bits());
        assert_eq!(std.to_bits(), expect_std.to_bits());
        n += 1;
    }
    assert_eq!(n, 20);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn manifest_lists_every_resolved_tunable() {
    let dir = temp_dir("manifest");
    run_config(&gp_config("vvbo", 1, 2, 1, 3), &dir, 1);
    let text = fs::read_to_string(dir.join("manifest.json")).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    for key in [
        "version",
        "schema_version",
        "benchmark",
        "method",
        "observation",
        "regime",
        "phases",
        "iterations_per_phase",
        "kernel_family",
        "kernel_length_scales",
        "kernel_variance_scale",
        "lambda",
        "noise_std",
        "n_grid",
        "fit_reg",
        "truncation",
        "beta_source",
        "optimizer",
        "n_runs",
        "master_seed",
        "benchmark_seed",
        "failed_runs",
    ] {
        assert!(value.get(key).is_some(), "manifest missing '{key}'");
    }
    assert_eq!(value["benchmark_seed"], 2024);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn trajectory_csv_round_trip() {
    let problem = vvbo::SyntheticProblem::new(vvbo::BenchmarkName::Gp, 2024).unwrap();
    let grid = problem.grid();
    let rows: Vec<Vec<f64>> = [[0.1], [0.5], [0.9]]
        .iter()
        .map(|x| {
            problem
                .clean_trajectory(x)
                .unwrap()
                .values_on_grid()
                .iter()
                .copied()
                .collect()
        })
        .collect();
    let dir = temp_dir("traj");
    let path = dir.join("trajectories.csv");
    harness::write_trajectories_csv(&path, &rows).unwrap();
    let loaded = harness::read_trajectories_csv(&path).unwrap();
    assert_eq!(rows, loaded);
    // loaded rows refit on the same grid
    let refit = grid.fit_from_samples(&loaded[1]).unwrap();
    assert!(refit.norm().is_finite());
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn custom_measurement_functionals_drive_mtbo() {
    // integral-weight descriptors replace the benchmark's phase-one basis
    let json = r#"{"schema_version": 1, "benchmark": "gp", "method": "mtbo",
                   "phases": 1, "iterations_per_phase": 4, "n_runs": 1, "master_seed": 3,
                   "measurement": {"kind": "projection", "functionals": [
                       {"kind": "integral_weights", "weights": [1.0,1.0,1.0,1.0,1.0,1.0,1.0,1.0,1.0,1.0,
                                                                 1.0,1.0,1.0,1.0,1.0,1.0,1.0,1.0,1.0,1.0,
                                                                 1.0,1.0,1.0,1.0,1.0,1.0,1.0,1.0,1.0,1.0,
                                                                 1.0,1.0,1.0,1.0,1.0,1.0,1.0,1.0,1.0,1.0,
                                                                 1.0,1.0,1.0,1.0,1.0,1.0,1.0,1.0,1.0,1.0]},
                       {"kind": "point_eval", "t": 0.1}
                   ]}}"#;
    let dir = temp_dir("custom_meas");
    let outputs = run_config(json, &dir, 1);
    assert!(outputs.failures.is_empty());
    let trace = read_trace_csv(&dir.join(trace_file_name(0))).unwrap();
    assert_eq!(trace.len(), 4);
    fs::remove_dir_all(&dir).unwrap();
}

// ---------------------------------------------------------------------------
// CLI surface
// ---------------------------------------------------------------------------

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vvbo"))
}

#[test]
fn cli_run_aggregate_oracle_round_trip() {
    let dir = temp_dir("cli");
    let config_path = dir.join("config.json");
    fs::write(&config_path, gp_config("vvbo", 1, 5, 2, 11)).unwrap();
    let out_dir = dir.join("out");

    let status = cli()
        .args(["run", "--config"])
        .arg(&config_path)
        .arg("--out")
        .arg(&out_dir)
        .args(["--workers", "2"])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out_dir.join("aggregate.csv").exists());

    // aggregate rewrites identical bytes from the traces
    let before = fs::read(out_dir.join("aggregate.csv")).unwrap();
    let status = cli().args(["aggregate", "--in"]).arg(&out_dir).status().unwrap();
    assert!(status.success());
    assert_eq!(before, fs::read(out_dir.join("aggregate.csv")).unwrap());

    let output = cli()
        .args(["oracle", "--benchmark", "gp", "--phase", "1"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    assert!(text.contains("x* = ["));
    assert!(text.contains("F(x*) = "));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn cli_seed_override_changes_outputs() {
    let dir = temp_dir("cli_seed");
    let config_path = dir.join("config.json");
    fs::write(&config_path, gp_config("vvbo", 1, 5, 1, 11)).unwrap();
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    for (out, seed) in [(&out_a, "11"), (&out_b, "12")] {
        let status = cli()
            .args(["run", "--config"])
            .arg(&config_path)
            .arg("--out")
            .arg(out)
            .args(["--seed", seed])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = strip_wall_clock(&out_a.join(trace_file_name(0)));
    let b = strip_wall_clock(&out_b.join(trace_file_name(0)));
    assert_ne!(a, b);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn cli_reports_machine_readable_errors() {
    let dir = temp_dir("cli_err");
    let config_path = dir.join("bad.json");
    fs::write(&config_path, r#"{"schema_version": 1, "benchmark": "nope", "method": "vvbo", "master_seed": 1}"#).unwrap();
    let output = cli()
        .args(["run", "--config"])
        .arg(&config_path)
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8(output.stderr).unwrap();
    let line = stderr.lines().last().unwrap();
    let parsed: serde_json::Value = serde_json::from_str(line).unwrap();
    assert!(parsed["error"].as_str().unwrap().contains("nope"));
    fs::remove_dir_all(&dir).unwrap();
}
