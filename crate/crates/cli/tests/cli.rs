use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rlmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rlmc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_config(dir: &Path, text: &str, out: &str, extra: &[&str]) -> Output {
    let cfg = dir.join("experiment.toml");
    fs::write(&cfg, text).unwrap();
    let out = dir.join(out);
    let mut args = vec![
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--threads",
        "1",
    ];
    args.extend_from_slice(extra);
    rlmc(&args)
}

fn error_record(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("error record");
    serde_json::from_str(line).expect("error record is JSON")
}

/// Results with the wall-time column blanked.
fn without_wall_time(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let col = r
        .headers()
        .unwrap()
        .iter()
        .position(|h| h == "solve_wall_ms")
        .unwrap();
    r.records()
        .map(|rec| {
            let mut v: Vec<String> = rec.unwrap().iter().map(String::from).collect();
            v[col].clear();
            v
        })
        .collect()
}

const ARBITRAGE: &str = r#"
benchmark = "arbitrage"
[evaluation]
paths = 200
seed = 99
[[runs]]
algorithm = "RL"
m_paths = 300
seed = 1
trajectory_path = 3
[[runs]]
id = "gd"
algorithm = "GD"
grid_levels = 5
m_paths = 300
seed = 2
[[runs]]
algorithm = "myopic"
"#;

#[test]
fn lists_benchmarks() {
    let out = rlmc(&["--list-benchmarks"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        text.lines().collect::<Vec<_>>(),
        ["arbitrage", "hydro", "battery"]
    );
}

#[test]
fn empty_run_list_writes_headers() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config(dir.path(), "benchmark = \"hydro\"\n", "out", &[]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(dir.path().join("out/results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    assert!(csv.starts_with(
        "run_id,algorithm,mode,M,K_or_L,seed,solve_wall_ms,eval_mean,eval_se,broken_path_frac"
    ));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["runs"].as_array().unwrap().len(), 0);
    assert_eq!(report["config"]["benchmark"], "hydro");
}

#[test]
fn arbitrage_sweep_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_config(dir.path(), ARBITRAGE, "a", &["--dump-paths"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let b = run_config(dir.path(), ARBITRAGE, "b", &[]);
    assert!(b.status.success());

    let rows = without_wall_time(&dir.path().join("a/results.csv"));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows, without_wall_time(&dir.path().join("b/results.csv")));
    assert_eq!(rows[0][1], "RL");
    assert_eq!(rows[0][4], "8");
    assert_eq!((rows[1][0].as_str(), rows[1][4].as_str()), ("gd", "5"));
    assert_eq!((rows[2][1].as_str(), rows[2][3].as_str()), ("myopic", "0"));
    // the policy should beat the greedy rule on shared paths
    let rl: f64 = rows[0][7].parse().unwrap();
    let myopic: f64 = rows[2][7].parse().unwrap();
    assert!(rl > myopic, "{rl} vs {myopic}");

    let traj = fs::read_to_string(dir.path().join("a/trajectory_1.csv")).unwrap();
    assert_eq!(traj.lines().next().unwrap(), "step,x0,i0,u0");
    assert_eq!(traj.lines().count(), 202);
    assert!(dir.path().join("a/paths_eval.csv").exists());
    assert!(dir.path().join("a/paths_train_gd.csv").exists());
    assert!(!dir.path().join("b/paths_eval.csv").exists());
}

#[test]
fn battery_storage_uplift() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
benchmark = "battery"
[overrides]
horizon = 48
[evaluation]
paths = 100
seed = 5
[[runs]]
algorithm = "RL"
m_paths = 300
seed = 1
compare_without_storage = true
"#;
    let out = run_config(dir.path(), text, "out", &[]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let mut r = csv::Reader::from_path(dir.path().join("out/results.csv")).unwrap();
    let rec = r.records().next().unwrap().unwrap();
    let uplift: f64 = rec[10].parse().unwrap();
    assert!(uplift > 0.0);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["runs"][0]["violation_count"], 0);
    assert!(report["runs"][0]["uplift_detail"]["q75"].is_number());
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    for text in [
        "benchmark = \"arbitrage\"\nunknown = 1\n",
        "benchmark = \"moon\"\n",
        "benchmark = \"arbitrage\"\n[overrides]\npenalty_weight = 3.0\n",
        "benchmark = \"arbitrage\"\n[evaluation]\nseed = 4\n[[runs]]\nalgorithm = \"RL\"\nseed = 4\n",
    ] {
        let out = run_config(dir.path(), text, "out", &[]);
        assert_eq!(out.status.code(), Some(2), "{text}");
        let rec = error_record(&out);
        assert_eq!(rec["error"]["kind"], "config");
        assert_eq!(rec["error"]["exit_code"], 2);
    }
    let missing = rlmc(&["--config", "/nonexistent/experiment.toml", "--out", "x"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("blocked"), "a file, not a directory").unwrap();
    let out = run_config(dir.path(), "benchmark = \"arbitrage\"\n", "blocked", &[]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_record(&out)["error"]["kind"], "runtime");
}
