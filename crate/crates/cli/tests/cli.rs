use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn case(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../cases")
        .join(name)
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairshed"))
        .arg("--output-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn three_bus() -> String {
    case("3bus.case").to_string_lossy().into_owned()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn floats(v: &serde_json::Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn solve_three_bus() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["solve", &three_bus()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let sol = read_json(&dir.path().join("solution.json"));
    assert!((sol["objective"].as_f64().unwrap() - 16040.0).abs() < 1e-6);
    let g = floats(&sol["g"]);
    let s = floats(&sol["s"]);
    for (got, want) in g.iter().zip([30.0, 50.0]) {
        assert!((got - want).abs() < 1e-7);
    }
    for (got, want) in s.iter().zip([0.1, 0.1, 0.125]) {
        assert!((got - want).abs() < 1e-9);
    }
    assert!(dir.path().join("solve.run.json").exists());
}

#[test]
fn zero_spread_on_three_bus_is_infeasible() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["solve", &three_bus(), "--delta", "0"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn missing_case_file_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.case");
    let out = run(dir.path(), &["solve", missing.to_str().unwrap()]);
    assert_eq!(code(&out), 4);
}

#[test]
fn malformed_case_file_is_a_parse_error() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.case");
    fs::write(&bad, "[gen]\n1 2 3\n").unwrap();
    let out = run(dir.path(), &["solve", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 4);
}

#[test]
fn fairness_sweep_spread_shrinks_with_delta() {
    let dir = TempDir::new().unwrap();
    let case = case("rts73_synthetic.case");
    let out = run(
        dir.path(),
        &["fairness-sweep", case.to_str().unwrap(), "--deltas", "0.3,0.1,0.05,0"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("fairness_sweep.csv")).unwrap();
    let spread = text.lines().find(|l| l.starts_with("spread")).unwrap();
    let values: Vec<f64> = spread.split(',').skip(2).map(|v| v.parse().unwrap()).collect();
    for (v, delta) in values.iter().zip([0.3, 0.1, 0.05, 0.0]) {
        assert!(*v <= delta + 1e-7, "spread {v} above {delta}");
    }
    assert!(values.windows(2).all(|w| w[1] <= w[0] + 1e-9));
}

#[test]
fn sweep_train_fastsolve_round_trip() {
    let dir = TempDir::new().unwrap();
    let case = three_bus();
    let dataset = dir.path().join("dataset.csv");
    let model = dir.path().join("model.json");
    let steps: [&[&str]; 3] = [
        &["sweep", &case, "--bus", "2", "--bus", "3", "--start", "20,30", "--step", "2.5", "--count", "12"],
        &["train", dataset.to_str().unwrap(), "--epochs", "50", "--hidden", "8,8,8"],
        &["fastsolve", &case, model.to_str().unwrap(), "--points", dataset.to_str().unwrap(), "--compare"],
    ];
    for args in steps {
        let out = run(dir.path(), args);
        assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let text = fs::read_to_string(dir.path().join("fastsolve.csv")).unwrap();
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    let headers = rows.headers().unwrap().clone();
    let gap = headers.iter().position(|h| h.contains("gap")).expect("gap column");
    let mut n = 0;
    for row in rows.records() {
        let g: f64 = row.unwrap()[gap].parse().unwrap();
        assert!(g <= 1e-6, "gap {g}");
        n += 1;
    }
    assert!(n > 0);
}

#[test]
fn single_trial_bench_has_equal_statistics() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["bench", &three_bus(), "--trials", "1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[1], cells[2], "{line}");
        assert_eq!(cells[2], cells[3], "{line}");
    }
}

#[test]
fn risk_with_normal_distributions() {
    let dir = TempDir::new().unwrap();
    let dist = dir.path().join("dist.csv");
    fs::write(&dist, "node,mean,std\n1,10,1\n2,10,1\n3,10,1\n").unwrap();
    let out = run(
        dir.path(),
        &["risk", &three_bus(), "--distributions", dist.to_str().unwrap(), "--alpha", "0.95"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("risk.json").exists());
    let text = fs::read_to_string(dir.path().join("risk.json")).unwrap();
    // CVaR of N(10, 1) at 0.95 is 10 + φ(1.645)/0.05 ≈ 12.0627.
    assert!(text.contains("12.06"), "{text}");
}

#[test]
fn repeated_runs_write_identical_outputs() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for dir in [&a, &b] {
        let out = run(
            dir.path(),
            &["--seed", "7", "fairness-sweep", &three_bus(), "--deltas", "0.2,0.1"],
        );
        assert_eq!(code(&out), 0);
        let out = run(dir.path(), &["--seed", "7", "solve", &three_bus()]);
        assert_eq!(code(&out), 0);
    }
    for name in ["fairness_sweep.csv", "solution.json"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}
