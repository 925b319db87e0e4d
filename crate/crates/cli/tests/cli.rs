use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fvarseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fvarseg")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = fvarseg(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_SEGMENT: &str = r#"
seed = 11
[segment]
lambda = 0.05
stage1_threshold = 3.0
stage2_threshold = 3.0
bandwidths = { stage1 = [40, 50], stage2 = [40, 60] }
"#;

#[test]
fn simulate_writes_data_and_truth_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["simulate", "--seed", "3", "--scenario", "m1", "--n", "240", "--p", "6", "--out", p(out)]);
    }
    let csv = fs::read_to_string(a.join("data.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "x1,x2,x3,x4,x5,x6");
    assert_eq!(lines.count(), 240);
    let truth = read_json(&a.join("truth.json"));
    assert_eq!(truth["schema_version"], 1);
    assert_eq!(truth["truth"]["chi_changes"], serde_json::json!([60, 120, 180]));
    assert_eq!(truth["truth"]["xi_changes"], serde_json::json!([90, 150]));
    assert_eq!(fs::read(a.join("data.csv")).unwrap(), fs::read(b.join("data.csv")).unwrap());
    assert_eq!(fs::read(a.join("truth.json")).unwrap(), fs::read(b.join("truth.json")).unwrap());
}

#[test]
fn segment_outputs_schema_and_is_worker_independent() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["simulate", "--seed", "5", "--scenario", "m1", "--n", "300", "--p", "6", "--out", p(&data)]);
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, SMALL_SEGMENT).unwrap();
    let input = data.join("data.csv");
    let mut outputs = Vec::new();
    for workers in ["1", "2"] {
        let out = dir.path().join(format!("seg{workers}"));
        ok(&["segment", "--config", p(&cfg), "--workers", workers, "--input", p(&input), "--out", p(&out)]);
        outputs.push(out);
    }
    let cp = read_json(&outputs[0].join("change_points.json"));
    assert_eq!(cp["schema_version"], 1);
    assert_eq!(cp["n"], 300);
    assert_eq!(cp["p"], 6);
    for key in ["chi_points", "xi_points"] {
        for entry in cp[key].as_array().unwrap() {
            for field in ["location", "G", "stat"] {
                assert!(entry.get(field).is_some(), "{key} entry lacks {field}");
            }
        }
    }
    for name in ["change_points.json", "segments.json", "stage1_trace_G40.csv", "stage2_trace_G60.csv"] {
        assert_eq!(fs::read(outputs[0].join(name)).unwrap(), fs::read(outputs[1].join(name)).unwrap(), "{name}");
    }
    let trace = fs::read_to_string(outputs[0].join("stage1_trace_G40.csv")).unwrap();
    assert!(trace.starts_with("v,omega_0,omega_1,omega_2,omega_3,max,average"));
}

#[test]
fn segment_accepts_columns_as_time() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<String> = (0..3)
        .map(|i| (0..200).map(|t| (((t * 7 + i * 13) % 17) as f64 / 5.0).to_string()).collect::<Vec<_>>().join(","))
        .collect();
    let input = dir.path().join("wide.csv");
    fs::write(&input, rows.join("\n")).unwrap();
    let out = dir.path().join("seg");
    ok(&[
        "segment", "--no-factor", "--stage2-threshold", "2.0", "--orientation", "columns-time", "--input", p(&input),
        "--out", p(&out),
    ]);
    let cp = read_json(&out.join("change_points.json"));
    assert_eq!(cp["n"], 200);
    assert_eq!(cp["p"], 3);
    assert_eq!(cp["chi_points"], serde_json::json!([]));
}

#[test]
fn malformed_csv_reports_coordinates_with_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.csv");
    fs::write(&input, "a,b\n1.0,2.0\n3.0,oops\n").unwrap();
    let out = fvarseg(&["segment", "--input", p(&input), "--out", p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3, column 2"), "{err}");
}

#[test]
fn missing_input_is_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = fvarseg(&["segment", "--input", p(&dir.path().join("none.csv")), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn configuration_errors_are_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[segment]\nbogus = 1\n").unwrap();
    let out = fvarseg(&["simulate", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));

    let out = fvarseg(&["simulate", "--n", "100", "--p", "60", "--scenario", "m3", "--workers", "0", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));

    let data = dir.path().join("data");
    ok(&["simulate", "--n", "200", "--p", "4", "--out", p(&data)]);
    let out = fvarseg(&[
        "segment", "--stage1-threshold", "-1", "--input", p(&data.join("data.csv")), "--out", p(&dir.path().join("s")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = fvarseg(&[
        "segment", "--d", "9", "--input", p(&data.join("data.csv")), "--out", p(&dir.path().join("s")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn calibrate_then_segment_with_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cal.toml");
    fs::write(
        &cfg,
        r#"
seed = 2
[segment]
lambda = 0.05
[calibrate]
replicates = 20
grid = [
  { n = 200, p = 6, q = 1, bandwidths = { stage1 = [20, 25, 30, 40], stage2 = [24, 30, 36, 44] } },
  { n = 240, p = 6, q = 1, bandwidths = { stage1 = [20, 25, 30, 40], stage2 = [24, 30, 36, 44] } },
  { n = 240, p = 8, q = 1, bandwidths = { stage1 = [20, 25, 30, 40], stage2 = [24, 30, 36, 44] } },
]
"#,
    )
    .unwrap();
    let model = dir.path().join("model.json");
    let out = ok(&["calibrate", "--config", p(&cfg), "--out", p(&model)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("R2_adj"));
    let m = read_json(&model);
    assert_eq!(m["schema_version"], 1);
    assert_eq!(m["replicates"], 20);
    assert_eq!(m["points"].as_array().unwrap().len(), 24);
    assert_eq!(m["stage2"]["features"].as_array().unwrap().len(), 4);

    let data = dir.path().join("data");
    ok(&["simulate", "--scenario", "m1", "--n", "240", "--p", "6", "--out", p(&data)]);
    let seg_cfg = dir.path().join("seg.toml");
    fs::write(&seg_cfg, "[segment]\nlambda = 0.05\nbandwidths = { stage1 = [30, 40], stage2 = [30, 44] }\n").unwrap();
    let spec = format!("model:{}", p(&model));
    let seg = dir.path().join("seg");
    ok(&[
        "segment", "--config", p(&seg_cfg), "--stage1-threshold", &spec, "--stage2-threshold", &spec, "--input",
        p(&data.join("data.csv")), "--out", p(&seg),
    ]);
    let cp = read_json(&seg.join("change_points.json"));
    let t = cp["thresholds"]["stage1"][0][1].as_f64().unwrap();
    assert!(t > 0.0);
}

#[test]
fn evaluate_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("eval.toml");
    fs::write(
        &cfg,
        format!(
            "{SMALL_SEGMENT}\n[evaluate]\nreplicates = 2\ncells = [{{ scenario = \"m1\", n = 300, p = 6 }}]\n"
        ),
    )
    .unwrap();
    let out = dir.path().join("eval");
    ok(&["evaluate", "--config", p(&cfg), "--out", p(&out)]);
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["schema_version"], 1);
    let reps = report["reports"][0]["replicates"].as_array().unwrap();
    assert_eq!(reps.len(), 2);
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("scenario,n,p,d,stage,"));
    assert!(out.join("replicates.csv").exists());
}
