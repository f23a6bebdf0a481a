mod common;

use std::time::Instant;

use common::{read_json, shel, stderr, write_config};

const SMOKE: &str = "reps = 1\nmethods = [\"lasso_min\", \"lasso_1se\", \"shel_min\", \"shel_1se\", \"ishel1\", \"ishel2\", \
                     \"si1\", \"si2\", \"debiased\", \"naive\"]\n\n[grid]\np0_true = [50]\n";

/// Column list of the metrics file, as documented.
const COLUMNS: [&str; 14] = [
    "scenario",
    "method",
    "rep",
    "fp",
    "tp",
    "rmse",
    "l1_error",
    "residual_icc",
    "sensitivity",
    "specificity",
    "fpr",
    "power",
    "median_ci_length",
    "n_tested",
];

#[test]
fn single_replication_smoke_study_is_fast_and_well_formed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "study.toml", SMOKE);
    let out = dir.path().join("out");
    let start = Instant::now();
    let run = shel(&["simulate", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    let secs = start.elapsed().as_secs_f64();
    assert!(run.status.success(), "{}", stderr(&run));
    assert!(secs < 60.0, "smoke study took {secs:.1} s");

    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header, COLUMNS);
    assert_eq!(&COLUMNS[3..], &shel_core::sim::METRIC_NAMES);
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 10);
    for r in &rows {
        assert_eq!(r.len(), COLUMNS.len());
        assert_eq!(r[0], "gaussian-endogenous-gaussian-p0_50");
        assert_eq!(r[2], "0");
        for v in &r[3..] {
            assert!(v == &"NaN" || v.parse::<f64>().is_ok(), "bad value {v}");
        }
    }

    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["config"]["reps"], 1);
    assert_eq!(summary["config"]["base"]["m"], 100, "defaults are echoed");
    assert!(summary["failures"].as_array().unwrap().is_empty());
    let methods = summary["summary"].as_array().unwrap();
    assert_eq!(methods.len(), 10);
    for m in methods {
        for key in ["scenario", "method", "n_rows", "n_failed", "metrics"] {
            assert!(m.get(key).is_some(), "summary entry lacks {key}");
        }
        for name in shel_core::sim::METRIC_NAMES {
            assert!(m["metrics"].get(name).is_some(), "summary lacks {name}");
        }
    }
}

#[test]
fn paper_scale_flag_and_seed_override_are_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let run = shel(&["simulate", "--paper-scale", "--dry-run", "--seed", "77", "--out-dir", out.to_str().unwrap()]);
    assert!(run.status.success(), "{}", stderr(&run));
    let cfg = read_json(&out.join("config.json"));
    assert_eq!(cfg["base"]["m"], 400);
    assert_eq!(cfg["base"]["p"], 1000);
    assert_eq!(cfg["reps"], 200);
    assert_eq!(cfg["seed"], 77);
    assert_eq!(cfg["grid"]["p0_true"], serde_json::json!([0, 50, 100, 200, 500, 800]));
    assert!(!out.join("metrics.csv").exists());
}

#[test]
fn invalid_study_values_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "study.toml", "reps = 0\n");
    let run = shel(&["simulate", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2), "{}", stderr(&run));
    let cfg = write_config(dir.path(), "study2.toml", "methods = [\"ridge\"]\n");
    let run = shel(&["simulate", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2));
}
