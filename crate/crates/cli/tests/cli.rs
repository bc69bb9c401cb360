use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const ILLUSTRATIVE: &str = r#"
[model]
probabilities = [0.2, 0.2, 0.2, 0.2, 0.2]
benefits = [3.0, 4.0, 5.0, 6.0]
cost = 1.0
discount = 0.99
token_cap = 20
p_recv = 0.5
q_accept = 0.5
"#;

const REALISTIC: &str = r#"
[model]
probabilities = [0.3, 0.5, 0.2]
labels = ["idle", "elastic", "video"]
cost = 0.4
discount = 0.99
token_cap = 20
p_recv = 0.8
q_accept = 0.8

[mos]
b1 = 1.0
b2 = 5.0
b3 = 2.6949
b4 = 0.0235
d2d = { psnr = 10.0, throughput = 1500.0 }
cellular = { psnr = 5.0, throughput = 1000.0 }
kinds = ["elastic", "video"]

[simulation]
replications = 4
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_d2d-token"));
    c.env_remove("D2D_TOKEN_OUT");
    c
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

/// Column header and data rows, skipping the `#` header block.
fn table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let split = |l: &str| l.split(',').map(str::to_string).collect::<Vec<_>>();
    let cols = split(lines.next().unwrap());
    (cols, lines.map(split).collect())
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let (cols, rows) = table(path);
    let i = cols.iter().position(|c| c == name).unwrap();
    rows.into_iter().map(|r| r[i].clone()).collect()
}

#[test]
fn solve_writes_thresholds_and_checks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", ILLUSTRATIVE);
    let out = dir.path().join("out");
    let o = run(&["solve"], &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        column(&out.join("thresholds.csv"), "threshold"),
        ["20", "10", "4", "2", "1"]
    );
    assert!(column(&out.join("checks.csv"), "passed").iter().all(|p| p == "true"));
    assert_eq!(table(&out.join("solution.csv")).1.len(), 105);

    let text = fs::read_to_string(out.join("solution.csv")).unwrap();
    let header: Vec<&str> = text.lines().take(4).collect();
    assert_eq!(header[0], "# schema: d2d-token/1");
    assert_eq!(header[1], "# command: solve");
    let json = header[3].strip_prefix("# config: ").unwrap();
    let v: serde_json::Value = serde_json::from_str(json).unwrap();
    assert_eq!(v["model"]["token_cap"], 20);
    assert_eq!(v["solver"]["epsilon"], 1e-9);
}

#[test]
fn invalid_config_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let bad = ILLUSTRATIVE.replace("0.2, 0.2, 0.2, 0.2, 0.2", "0.2, 0.2, 0.2, 0.2, 0.1");
    let cfg = write_config(dir.path(), "bad.toml", &bad);
    let out = dir.path().join("out");
    let o = run(&["solve"], &cfg, &out);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sum to"));
    assert!(!out.exists());

    let o = run(&["solve"], &dir.path().join("missing.toml"), &out);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn solver_failure_has_its_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{ILLUSTRATIVE}\n[solver]\nmax_iterations = 5\n");
    let cfg = write_config(dir.path(), "c.toml", &text);
    let o = run(&["solve"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn loose_tolerance_gives_the_same_policy() {
    let dir = tempfile::tempdir().unwrap();
    let tight = write_config(dir.path(), "tight.toml", ILLUSTRATIVE);
    let loose = write_config(
        dir.path(),
        "loose.toml",
        &format!("{ILLUSTRATIVE}\n[solver]\nepsilon = 1e-3\n"),
    );
    assert!(run(&["solve"], &tight, &dir.path().join("a")).status.success());
    assert!(run(&["solve"], &loose, &dir.path().join("b")).status.success());
    assert_eq!(
        column(&dir.path().join("a/solution.csv"), "action"),
        column(&dir.path().join("b/solution.csv"), "action")
    );
}

#[test]
fn sweep_reports_trend_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", ILLUSTRATIVE);
    let out = dir.path().join("beta");
    let o = run(
        &["sweep", "--param", "beta", "--grid", "0.9,0.93,0.95,0.97,0.99"],
        &cfg,
        &out,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(table(&out.join("sweep.csv")).1.len(), 25);
    assert!(column(&out.join("trends.csv"), "verdict").iter().all(|v| v == "true"));
    assert_eq!(column(&out.join("trends.csv"), "strict_increases")[1], "3");

    let out = dir.path().join("single");
    assert!(run(&["sweep", "--param", "p", "--grid", "0.5"], &cfg, &out)
        .status
        .success());
    assert!(column(&out.join("trends.csv"), "verdict").iter().all(|v| v == "true"));

    let o = run(
        &["sweep", "--param", "gamma", "--grid", "0.5"],
        &cfg,
        &dir.path().join("x"),
    );
    assert_eq!(o.status.code(), Some(3));
    let o = run(
        &["sweep", "--param", "beta", "--grid", "1.5"],
        &cfg,
        &dir.path().join("y"),
    );
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn simulate_is_reproducible_and_reports_usage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", REALISTIC);
    let args = ["simulate", "--slots", "20000", "--seed", "7"];
    assert!(run(&args, &cfg, &dir.path().join("a")).status.success());
    assert!(run(&args, &cfg, &dir.path().join("b")).status.success());
    for f in ["summary.csv", "token_usage.csv", "benefits.csv"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    assert_eq!(table(&dir.path().join("a/summary.csv")).1.len(), 8);
    assert!(!dir.path().join("a/trace_optimal.csv").exists());

    let out = dir.path().join("t");
    assert!(run(&["simulate", "--slots", "500", "--trace"], &cfg, &out)
        .status
        .success());
    assert_eq!(table(&out.join("trace_optimal.csv")).1.len(), 500);
}

#[test]
fn log_base_flag_changes_benefits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", REALISTIC);
    let out = dir.path().join("out");
    assert!(run(&["solve", "--log-base", "base10"], &cfg, &out).status.success());
    let b: f64 = column(&out.join("benefits.csv"), "benefit")[0].parse().unwrap();
    assert!((b - 2.6949 * 1.5f64.log10()).abs() < 1e-9);
}

#[test]
fn compare_favours_optimal_at_high_discount() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", REALISTIC);
    let out = dir.path().join("out");
    let o = run(&["compare", "--slots", "50000", "--grid", "0.3,0.99"], &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let gap: Vec<f64> = column(&out.join("compare.csv"), "gap_mean")
        .iter()
        .map(|g| g.parse().unwrap())
        .collect();
    assert_eq!(gap.len(), 2);
    assert!(gap[0].abs() < gap[1]);
    assert!(gap[1] > 0.0);
    assert_eq!(table(&out.join("token_usage.csv")).1.len(), 8);
}

#[test]
fn network_conserves_tokens() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{ILLUSTRATIVE}\n[network]\nnum_ues = 6\nfixed_point_rounds = 2\n");
    let cfg = write_config(dir.path(), "c.toml", &text);
    let out = dir.path().join("out");
    let o = run(&["network", "--slots", "3000"], &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(column(&out.join("network_tokens.csv"), "conserved"), ["true"]);
    assert_eq!(table(&out.join("network_env.csv")).1.len(), 6);
    assert!(out.join("fixed_point.csv").exists());
}

#[test]
fn learn_writes_qtable() {
    let dir = tempfile::tempdir().unwrap();
    let text = ILLUSTRATIVE.replace("token_cap = 20", "token_cap = 2")
        + "\n[learning]\nepisodes = 50\nslots_per_episode = 100\n";
    let cfg = write_config(dir.path(), "c.toml", &text);
    let out = dir.path().join("out");
    let o = run(&["learn", "--seed", "3"], &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(table(&out.join("qtable.csv")).1.len(), 15);
    assert_eq!(table(&out.join("curve.csv")).1.len(), 50);
    let text = fs::read_to_string(out.join("qtable.csv")).unwrap();
    assert!(text.contains("# seed: 3"));
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", ILLUSTRATIVE);
    let out = dir.path().join("from-env");
    let o = bin()
        .args(["solve", "--config"])
        .arg(&cfg)
        .env("D2D_TOKEN_OUT", &out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(out.join("thresholds.csv").exists());
}
