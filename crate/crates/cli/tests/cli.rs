use serde_json::Value;
use std::path::Path;
use std::process::{Command, Output};

fn opfield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opfield")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas").join(name);
    let s: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&s).unwrap()
}

fn assert_valid(v: &jsonschema::Validator, doc: &Value) {
    let errors: Vec<String> = v.iter_errors(doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "schema errors: {errors:?}");
}

#[test]
fn list_shows_five_scenarios_in_order() {
    let o = opfield(&["list"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let names: Vec<&str> = text.lines().map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(
        names,
        ["bounded_multiplication", "kuwae_shioya", "neumann_dirichlet", "singular_measure", "varying_metric"]
    );

    let o = opfield(&["list", "--json"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 5);
}

#[test]
fn constant_fixture_run_passes_with_negligible_deviations() {
    let o = opfield(&["run", "constant_fixture"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_valid(&schema("report.schema.json"), &report);
    assert_eq!(report["overall"], "pass");
    for (check, out) in report["checks"].as_object().unwrap() {
        for t in out["report"]["traces"].as_array().unwrap() {
            let key = t["key"].as_str().unwrap();
            // Energies and norms are magnitudes, not deviations.
            if key.starts_with("m1/") || key.contains("operator_norm") {
                continue;
            }
            for v in t["values"].as_array().unwrap() {
                assert!(v.as_f64().unwrap() <= 1e-12, "{check}/{key}: {v}");
            }
        }
    }
}

#[test]
fn expected_failures_count_as_agreement() {
    let o = opfield(&["run", "neumann_dirichlet", "--checks", "srs,mosco,g,fcalc,spectral"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["checks"]["srs"]["report"]["verdict"], "fail");
    assert_eq!(report["checks"]["spectral"]["report"]["verdict"], "not_applicable");
    assert_eq!(report["equivalence"]["agree"], true);
}

#[test]
fn tolerance_squeeze_is_a_mismatch() {
    let o = opfield(&["run", "varying_metric", "--tol", "1e-15", "--checks", "srs,g"]);
    assert_eq!(code(&o), 1);
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["overall"], "fail");
    assert!(!report["mismatches"].as_array().unwrap().is_empty());
}

#[test]
fn configuration_errors_exit_with_two() {
    assert_eq!(code(&opfield(&["run", "no_such_scenario"])), 2);
    assert_eq!(code(&opfield(&["run", "constant_fixture", "--checks", "bogus"])), 2);
    assert_eq!(code(&opfield(&["run", "constant_fixture", "--tol", "-1"])), 2);
    assert_eq!(code(&opfield(&["run", "constant_fixture", "--phis", "sqrt"])), 2);
    assert_eq!(code(&opfield(&["run"])), 2);
    let o = Command::new(env!("CARGO_BIN_EXE_opfield"))
        .args(["run", "constant_fixture"])
        .env("OPFIELD_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn out_writes_report_csv_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let o = opfield(&["run", "bounded_multiplication", "--checks", "ms,g,srs", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_valid(&schema("report.schema.json"), &report);
    let mut rdr = csv::Reader::from_path(dir.path().join("report.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["scenario", "check", "param", "label", "value"]);
    let rows = rdr.records().count();
    let expected: usize = report["checks"]
        .as_object()
        .unwrap()
        .values()
        .flat_map(|c| c["report"]["traces"].as_array().unwrap())
        .map(|t| t["values"].as_array().unwrap().len())
        .sum();
    assert_eq!(rows, expected);
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.meta.json")).unwrap()).unwrap();
    assert!(meta["total_seconds"].as_f64().unwrap() >= 0.0);
    assert!(meta["checks"]["ms"].is_number());
}

#[test]
fn identical_config_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<Vec<u8>> = ["1", "3"]
        .iter()
        .map(|threads| {
            let out = dir.path().join(format!("r{threads}.json"));
            let o = Command::new(env!("CARGO_BIN_EXE_opfield"))
                .args(["run", "kuwae_shioya", "--checks", "srs,mosco,g", "--seed", "7", "--out", out.to_str().unwrap()])
                .env("OPFIELD_THREADS", threads)
                .output()
                .unwrap();
            assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
            std::fs::read(out).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn export_import_export_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    assert_eq!(code(&opfield(&["export", "kuwae_shioya", a.to_str().unwrap()])), 0);
    assert_eq!(code(&opfield(&["export", a.to_str().unwrap(), b.to_str().unwrap()])), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let doc: Value = serde_json::from_slice(&std::fs::read(&a).unwrap()).unwrap();
    assert_valid(&schema("scenario.schema.json"), &doc);
}

#[test]
fn exported_file_runs_like_the_named_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("vm.json");
    assert_eq!(code(&opfield(&["export", "constant_fixture", file.to_str().unwrap()])), 0);
    let by_name = opfield(&["run", "constant_fixture"]);
    let by_file = opfield(&["run", file.to_str().unwrap()]);
    assert_eq!(code(&by_file), 0);
    assert_eq!(by_name.stdout, by_file.stdout);
}

#[test]
fn export_to_unwritable_path_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("plain_file");
    std::fs::write(&blocker, "x").unwrap();
    // A regular file cannot hold children, which fails even for root.
    let target = blocker.join("scenario.json");
    let o = opfield(&["export", "constant_fixture", target.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("i/o error"));
}

#[test]
fn hand_edited_dimension_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("edited.json");
    assert_eq!(code(&opfield(&["export", "constant_fixture", file.to_str().unwrap()])), 0);
    let mut doc: Value = serde_json::from_slice(&std::fs::read(&file).unwrap()).unwrap();
    doc["masses"][0]["dim"] = Value::from(14);
    std::fs::write(&file, serde_json::to_string(&doc).unwrap()).unwrap();
    let o = opfield(&["run", file.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("dimension mismatch"), "{}", String::from_utf8_lossy(&o.stderr));
}
