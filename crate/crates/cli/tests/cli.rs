use std::path::{Path, PathBuf};
use std::process::Command as Process;

use serde_json::Value;
use tempfile::TempDir;

use tiebout_cli::error::{EXIT_ASSUMPTION, EXIT_OK, EXIT_VALIDATION};
use tiebout_cli::{run, Command, Flags, RunOutcome};

const LINE: &str = r#"
[measure]
method = "grid"
resolution = 2000
types = [{ lower = [0.0], upper = [1.0] }]

[costs]
communities = 2
terms = [
  { kind = "metric", centers = [[0.0], [1.0]] },
  { kind = "fixed-share", g = 0.1 },
]

[solver]
multistart = 10
"#;

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run_in(dir: &TempDir, command: Command, config: &Path, out: &str) -> RunOutcome {
    let flags = Flags { out: Some(dir.path().join(out)), ..Default::default() };
    run(&command, config, &flags)
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_then_verify_round_trips() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, "line.toml", LINE);
    let solved = run_in(&dir, Command::Solve, &config, "solve");
    assert_eq!(solved.exit_code, EXIT_OK);
    assert_eq!(solved.report.equilibria.len(), 3);
    assert!(dir.path().join("solve/partition.csv").exists());

    let report = dir.path().join("solve/report.json");
    let verified = run_in(&dir, Command::Verify { report: report.clone() }, &config, "verify");
    assert_eq!(verified.exit_code, EXIT_OK, "{:?}", verified.report.diagnostics);

    let mut doc = json(report);
    doc["equilibria"][0]["state"]["m"] = serde_json::json!([0.45, 0.55]);
    let tampered = dir.path().join("tampered.json");
    std::fs::write(&tampered, doc.to_string()).unwrap();
    let rejected = run_in(&dir, Command::Verify { report: tampered }, &config, "tampered");
    assert_eq!(rejected.exit_code, EXIT_ASSUMPTION);
    assert!(rejected.report.diagnostics.iter().any(|d| d.code == "not-certified"));
    assert_eq!(json(dir.path().join("tampered/verify.json"))["status"], "failed");
}

#[test]
fn schema_errors_exit_with_validation_code() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, "bad.toml", &format!("{LINE}\n[extra]\nkey = 1\n"));
    let outcome = run_in(&dir, Command::Solve, &config, "bad");
    assert_eq!(outcome.exit_code, EXIT_VALIDATION);
    let report = json(dir.path().join("bad/report.json"));
    assert_eq!(report["diagnostics"][0]["code"], "schema");
}

#[test]
fn free_entry_without_fixed_costs_is_refused() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, "free.toml", &LINE.replace("g = 0.1", "g = 0.0"));
    let validated = run_in(&dir, Command::Validate, &config, "validate");
    assert_eq!(validated.exit_code, EXIT_OK);
    assert!(validated.report.diagnostics.iter().any(|d| d.code == "small-group-ineffectiveness-violated"));
    let solved = run_in(&dir, Command::Solve, &config, "solve");
    assert_eq!(solved.exit_code, EXIT_ASSUMPTION);
}

#[test]
fn validate_flags_a_flat_cost_difference() {
    let dir = TempDir::new().unwrap();
    let text = LINE.replace("[[0.0], [1.0]]", "[[0.2], [0.8]]").replace("g = 0.1", "g = 0.06");
    let config = write_config(&dir, "flat.toml", &text);
    let outcome = run_in(&dir, Command::Validate, &config, "flat");
    assert!(outcome.report.diagnostics.iter().any(|d| d.code == "hyperbola-property-violation"));

    let clean = write_config(&dir, "line.toml", LINE);
    let outcome = run_in(&dir, Command::Validate, &clean, "clean");
    assert!(outcome.report.diagnostics.iter().any(|d| d.code == "clean"), "{:?}", outcome.report.diagnostics);
}

#[test]
fn locus_kinds_follow_the_price_gap() {
    let dir = TempDir::new().unwrap();
    let text = format!(
        "{}\n[plot.locus]\ncenters = [[0.25, 0.5], [0.75, 0.5]]\ndelta_p = [0.0, 0.3, 0.5]\nresolution = 101\n",
        LINE
    );
    let config = write_config(&dir, "locus.toml", &text);
    let flags = Flags { out: Some(dir.path().join("locus")), ..Default::default() };
    let outcome = run(&Command::Plotdata { locus: true, borders: false, partition: false }, &config, &flags);
    assert_eq!(outcome.exit_code, EXIT_OK);
    let csv = std::fs::read_to_string(dir.path().join("locus/locus.csv")).unwrap();
    for kind in ["bisector", "hyperbola", "degenerate-ray"] {
        assert!(csv.contains(kind), "missing {kind}");
    }
}

#[test]
fn binary_reports_exit_codes() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, "bad.toml", "[measure]\n");
    let output = Process::new(env!("CARGO_BIN_EXE_tiebout"))
        .args(["--out", dir.path().join("out").to_str().unwrap(), "validate"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(EXIT_VALIDATION));
    assert!(String::from_utf8_lossy(&output.stderr).contains("[schema]"));
}
