//! End-to-end harness checks: the documented file formats chain through
//! optimize -> simulate -> estimate / emfit / evaluate / correct without
//! manual edits, identical seeds give byte-identical outputs, and the exit
//! codes follow the contract (2 for bad inputs, 1 for runtime failures).

use std::path::{Path, PathBuf};
use std::process::Command;

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_tiltshift")
}

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("tiltshift-pipeline-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path) -> PathBuf {
    // Small model keeps the pipeline snappy; formats are identical.
    let path = dir.join("config.json");
    std::fs::write(
        &path,
        r#"{"schema":1,"max_order":2,"drift_order":2,"sample_time":1.0}"#,
    )
    .unwrap();
    path
}

fn run_ok(args: &[&str]) -> String {
    let output = Command::new(binary()).args(args).output().unwrap();
    assert!(
        output.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn pipeline_closes_without_manual_edits() {
    let dir = workdir("close");
    let config = write_config(&dir);
    let config = config.to_str().unwrap();
    let pattern = dir.join("pattern.json");
    let pattern_s = pattern.to_str().unwrap();

    run_ok(&[
        "optimize", "--config", config, "--kind", "greedy", "--n", "24", "--starts", "8",
        "--warm", "2", "--seed", "5", "--out", pattern_s,
        "--csv", dir.join("pattern.csv").to_str().unwrap(),
    ]);
    assert!(pattern.exists());
    let csv = std::fs::read_to_string(dir.join("pattern.csv")).unwrap();
    assert!(csv.starts_with("k,tx,ty,bound"));

    let runs_dir = dir.join("runs");
    run_ok(&[
        "simulate", "--config", config, "--pattern", pattern_s, "--runs", "3", "--seed", "9",
        "--out", runs_dir.to_str().unwrap(),
    ]);
    let run0 = runs_dir.join("run_000.json");
    assert!(run0.exists() && runs_dir.join("run_002.json").exists());

    let est_prefix = dir.join("estimate");
    let stdout = run_ok(&[
        "estimate", "--config", config, "--experiment", run0.to_str().unwrap(), "--smooth",
        "--out", est_prefix.to_str().unwrap(), "--json",
    ]);
    assert!(stdout.contains("log_likelihood"));
    let est_csv = std::fs::read_to_string(est_prefix.with_extension("csv")).unwrap();
    assert!(est_csv.lines().next().unwrap().contains("smooth_mean_re_c11"));
    assert_eq!(est_csv.lines().count(), 25); // header + 24 steps

    run_ok(&[
        "emfit", "--config", config, "--experiments",
        run0.to_str().unwrap(),
        runs_dir.join("run_001.json").to_str().unwrap(),
        "--max-iterations", "10",
        "--out", dir.join("em.json").to_str().unwrap(),
    ]);
    let em: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("em.json")).unwrap()).unwrap();
    assert!(em["sigma_eps"][0][0].as_f64().unwrap() > 0.0);

    run_ok(&[
        "evaluate", "--config", config, "--patterns", pattern_s, "--runs", "40", "--seed", "3",
        "--out", dir.join("report").to_str().unwrap(),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["patterns"].as_array().unwrap().len(), 1);
    assert!(std::fs::read_to_string(dir.join("report.csv"))
        .unwrap()
        .starts_with("pattern,kind,slot"));

    run_ok(&[
        "correct", "--config", config, "--experiment", run0.to_str().unwrap(), "--rounds", "3",
        "--seed", "21", "--out", dir.join("correct.json").to_str().unwrap(),
    ]);
    let correction: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("correct.json")).unwrap()).unwrap();
    assert_eq!(correction["rounds"].as_array().unwrap().len(), 3);

    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn identical_seeds_give_byte_identical_outputs() {
    let dir = workdir("determinism");
    let config = write_config(&dir);
    let config = config.to_str().unwrap();

    let mut outputs = Vec::new();
    for attempt in 0..2 {
        let pattern = dir.join(format!("pattern_{attempt}.json"));
        run_ok(&[
            "optimize", "--config", config, "--kind", "greedy", "--n", "16", "--starts", "6",
            "--warm", "2", "--seed", "77", "--out", pattern.to_str().unwrap(),
        ]);
        let runs = dir.join(format!("runs_{attempt}"));
        run_ok(&[
            "simulate", "--config", config, "--pattern", pattern.to_str().unwrap(), "--runs",
            "2", "--seed", "13", "--out", runs.to_str().unwrap(),
        ]);
        outputs.push((
            std::fs::read(&pattern).unwrap(),
            std::fs::read(runs.join("run_001.json")).unwrap(),
        ));
    }
    assert_eq!(outputs[0].0, outputs[1].0, "pattern files differ");
    assert_eq!(outputs[0].1, outputs[1].1, "experiment records differ");

    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = workdir("exitcodes");
    let config = write_config(&dir);

    // Missing config file: validation error, code 2.
    let status = Command::new(binary())
        .args([
            "optimize", "--config", dir.join("missing.json").to_str().unwrap(), "--kind",
            "random", "--n", "5", "--out", dir.join("x.json").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));

    // Malformed pattern document: validation error, code 2.
    let bad = dir.join("bad.json");
    std::fs::write(&bad, "{not json").unwrap();
    let status = Command::new(binary())
        .args([
            "simulate", "--config", config.to_str().unwrap(), "--pattern",
            bad.to_str().unwrap(), "--runs", "1", "--out", dir.join("y").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));

    // Clap usage errors also exit with 2.
    let status = Command::new(binary()).args(["optimize"]).output().unwrap();
    assert_eq!(status.status.code(), Some(2));

    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn correct_requires_ground_truth() {
    let dir = workdir("truthless");
    let config = write_config(&dir);
    let config = config.to_str().unwrap();
    let pattern = dir.join("pattern.json");
    run_ok(&[
        "optimize", "--config", config, "--kind", "random", "--n", "8", "--seed", "3", "--out",
        pattern.to_str().unwrap(),
    ]);
    let runs = dir.join("runs");
    run_ok(&[
        "simulate", "--config", config, "--pattern", pattern.to_str().unwrap(), "--runs", "1",
        "--seed", "1", "--out", runs.to_str().unwrap(),
    ]);
    // Strip the ground truth to mimic a hardware record.
    let record_path = runs.join("run_000.json");
    let mut record: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&record_path).unwrap()).unwrap();
    record.as_object_mut().unwrap().remove("truth_states");
    std::fs::write(&record_path, serde_json::to_string_pretty(&record).unwrap()).unwrap();

    let status = Command::new(binary())
        .args([
            "correct", "--config", config, "--experiment", record_path.to_str().unwrap(),
            "--out", dir.join("c.json").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));

    let _ = std::fs::remove_dir_all(&dir);
}
