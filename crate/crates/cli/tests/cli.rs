use std::path::Path;
use std::process::Command;

fn cardgate(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cardgate"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) {
    std::fs::write(
        dir.join("small.toml"),
        "reps = 1\n[scenario]\nn_rows = 20000\nn_queries = 40\njoin_right_rows = 2000\n",
    )
    .unwrap();
}

#[test]
fn run_writes_reports_and_report_reads_them_back() {
    let dir = tempfile::tempdir().unwrap();
    small_config(dir.path());
    let out = cardgate(
        dir.path(),
        &["--config", "small.toml", "run", "BASELINES", "--method", "BASE,GPU_GATE", "--out", "res", "--explain"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("baseline,gated_rate,plan_flip,exec_p99,total_p99,probe_p95\n"));
    assert_eq!(stdout.lines().count(), 3);

    // progress events are JSON lines
    for line in String::from_utf8(out.stderr).unwrap().lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
    let res = dir.path().join("res");
    for f in ["baselines_summary.csv", "baselines_summary.json", "baselines_records.jsonl", "baselines_points.csv"] {
        assert!(res.join(f).exists(), "{f} missing");
    }
    let explain = std::fs::read_to_string(res.join("baselines_explain.txt")).unwrap();
    assert!(explain.contains("SEQ_SCAN_FILTER") && explain.contains("actual_rows="));

    let rep = cardgate(dir.path(), &["--config", "small.toml", "report", "res/baselines_records.jsonl"]);
    assert!(rep.status.success());
    assert_eq!(String::from_utf8(rep.stdout).unwrap(), stdout);
}

#[test]
fn gen_writes_tables_and_queries() {
    let dir = tempfile::tempdir().unwrap();
    small_config(dir.path());
    let out = cardgate(dir.path(), &["--config", "small.toml", "--quiet", "gen", "--regime", "join", "--out", "data"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let data = dir.path().join("data");
    let orders = std::fs::read_to_string(data.join("orders.csv")).unwrap();
    assert_eq!(orders.lines().next().unwrap(), "status,cust");
    assert_eq!(orders.lines().count(), 20_001);
    let queries = std::fs::read_to_string(data.join("queries.jsonl")).unwrap();
    assert_eq!(queries.lines().count(), 40);
    assert!(data.join("customers_stats.json").exists());
}

#[test]
fn config_flag_overrides_and_prints() {
    let dir = tempfile::tempdir().unwrap();
    small_config(dir.path());
    let out = cardgate(dir.path(), &["--config", "small.toml", "config"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("reps = 1") && text.contains("n_rows = 20000"));
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = cardgate(dir.path(), &["run", "NOT_AN_EXPERIMENT"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown experiment"));
    let out = cardgate(dir.path(), &["run", "BASELINES", "--d-threshold", "-1"]);
    assert!(!out.status.success());
}
