use std::path::Path;
use std::process::{Command, Output};

use mcrelay_cli::output::{SCHEMA, SWEEP_HEADER};

const SMALL: &str = r#"
kind = "threshold-sweep"
protocols = ["FD1", "FD-Adp", "Baseline"]
thresholds = [4, 8, 12]
bit_intervals_us = [200, 400]
sequences = 150
realizations = 130
length = 6
seed = 11
"#;

fn mcrelay(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcrelay"))
        .args(args)
        .env("MCRELAY_THREADS", threads)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn valid_json(text: &str) {
    let schema: serde_json::Value = serde_json::from_str(SCHEMA).unwrap();
    let compiled = jsonschema::JSONSchema::compile(&schema).expect("schema compiles");
    let doc: serde_json::Value = serde_json::from_str(text).unwrap();
    if let Err(errors) = compiled.validate(&doc) {
        let msgs: Vec<String> = errors.map(|e| format!("{} at {}", e, e.instance_path)).collect();
        panic!("schema violations: {msgs:#?}");
    };
}

#[test]
fn outputs_are_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "small.toml", SMALL);
    for ext in ["csv", "json"] {
        let a = dir.path().join(format!("a.{ext}"));
        let b = dir.path().join(format!("b.{ext}"));
        assert!(mcrelay(&["run", &spec, "-q", "-o", a.to_str().unwrap()], "1").status.success());
        assert!(mcrelay(&["run", &spec, "-q", "-o", b.to_str().unwrap()], "4").status.success());
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap(), "{ext}");
    }
}

#[test]
fn csv_has_the_documented_header_and_a_spec_echo() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("rows.csv");
    assert!(mcrelay(&["run", &spec, "-q", "-o", out.to_str().unwrap()], "2").status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), SWEEP_HEADER.join(","));
    assert_eq!(lines.count(), 3 * 3 * 2);
    let echo = std::fs::read_to_string(dir.path().join("rows.csv.spec.toml")).unwrap();
    let parsed = mcrelay_cli::spec::ExperimentSpec::from_toml(&echo).unwrap();
    assert_eq!(parsed.seed, 11);
    assert_eq!(parsed.sequences, 150);
}

#[test]
fn json_reports_match_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "small.toml", &format!("{SMALL}per_bit = true\n"));
    let out = mcrelay(&["run", &spec, "-q", "--format", "json"], "2");
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    valid_json(&text);
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(doc["seed"], 11);
    assert_eq!(doc["rows"].as_array().unwrap().len(), 18);
    assert_eq!(doc["configs"].as_array().unwrap().len(), 6);

    let analytics_only = mcrelay(&["run", &spec, "-q", "--format", "json", "--engine", "analytics"], "2");
    valid_json(std::str::from_utf8(&analytics_only.stdout).unwrap());

    let trace = write(
        dir.path(),
        "trace.toml",
        "kind = \"single-run\"\nprotocols = [\"HD\"]\nthresholds = [9]\nrealizations = 4\nsequences = 4\nlength = 3\ntrace_realizations = 2\n",
    );
    let traced = mcrelay(&["run", &trace, "-q", "--format", "json"], "1");
    assert!(traced.status.success());
    valid_json(std::str::from_utf8(&traced.stdout).unwrap());
}

#[test]
fn overrides_change_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "small.toml", SMALL);
    let base = mcrelay(&["run", &spec, "-q"], "1").stdout;
    let reseeded = mcrelay(&["run", &spec, "-q", "--seed", "12"], "1").stdout;
    assert_ne!(base, reseeded);
    let sim_off = String::from_utf8(mcrelay(&["run", &spec, "-q", "--engine", "analytics"], "1").stdout).unwrap();
    assert!(sim_off.lines().nth(1).unwrap().ends_with(",,"));
}

#[test]
fn presets_print_and_parse() {
    for name in mcrelay_cli::spec::PRESETS {
        let out = mcrelay(&["preset", name], "1");
        assert!(out.status.success());
        let spec = mcrelay_cli::spec::ExperimentSpec::from_toml(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
        spec.validate().unwrap();
    }
    assert_eq!(mcrelay(&["preset", "no-such-preset"], "1").status.code(), Some(2));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in [
        ("unknown-key.toml", "kind = \"single-run\"\nprotocols = [\"FD1\"]\nthresholds = [3]\ncolour = 1\n"),
        ("empty-grid.toml", "kind = \"threshold-sweep\"\nprotocols = [\"FD1\"]\n"),
        ("bad-window.toml", "kind = \"single-run\"\nprotocols = [\"FD1\"]\nthresholds = [3]\nsamples = 50\n"),
        ("bad-dt.toml", "kind = \"single-run\"\nprotocols = [\"FD1\"]\nthresholds = [3]\ndt_us = 7\n"),
    ] {
        let spec = write(dir.path(), name, text);
        let out = mcrelay(&["run", &spec, "-q"], "1");
        assert_eq!(out.status.code(), Some(2), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(out.stdout.is_empty());
    }
    assert_eq!(mcrelay(&["run", "-q"], "1").status.code(), Some(2));
    assert_eq!(mcrelay(&["validate-physics", "-q", "--walkers", "0"], "1").status.code(), Some(2));
}

#[test]
fn physics_validation_passes_and_detects_a_fault() {
    let args = ["validate-physics", "-q", "--walkers", "200000", "--realizations", "10000", "--length", "4"];
    let good = mcrelay(&args, "2");
    assert_eq!(good.status.code(), Some(0), "{}", String::from_utf8_lossy(&good.stderr));
    let csv = String::from_utf8(good.stdout).unwrap();
    assert!(csv.starts_with("check,observed,expected,sigma,deviation,tolerance,passed"));

    let mut faulty = args.to_vec();
    faulty.extend(["--fault-diffusion-scale", "0.5", "--format", "json"]);
    let bad = mcrelay(&faulty, "2");
    assert_eq!(bad.status.code(), Some(3));
    let text = String::from_utf8(bad.stdout).unwrap();
    valid_json(&text);
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(doc["physics"]["passed"], false);
    let uniform = &doc["physics"]["checks"][0];
    assert!(uniform["name"].as_str().unwrap().starts_with("observation probability"));
    assert_eq!(uniform["passed"], false);
}
