use std::path::Path;
use std::process::{Command, Output};

fn tierq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tierq")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn small() -> Vec<&'static str> {
    vec!["--nq", "80", "--h", "3", "--f", "3", "--s", "0.001", "--epochs", "2"]
}

#[test]
fn optimize_prints_default_optimum() {
    let o = tierq(&["optimize", "--seed", "1"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let m: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("m_opt_est "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((m - 0.563).abs() < 0.02);
    assert!(text.contains("n_queries 1046"));
}

#[test]
fn experiment_requires_seed() {
    let o = tierq(&["experiment", "--exp", "1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--seed"));
}

#[test]
fn merge_writes_parseable_structure() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.txt");
    let mut args = vec!["merge", "--m", "0.5", "--out", out.to_str().unwrap()];
    args.extend(small());
    assert!(tierq(&args).status.success());
    let s = tierq::merge::InvertedQueryStructure::from_text(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let sizes: Vec<usize> = s.tiers().iter().map(Vec::len).collect();
    assert_eq!(sizes, vec![80, 40, 20]);
}

#[test]
fn simulate_reports_every_tier() {
    let mut args = vec!["simulate", "--m", "opt"];
    args.extend(small());
    let o = tierq(&args);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().next(), Some("tier,bytes_sent,queries_stored,storage_bytes"));
    assert_eq!(text.lines().count(), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("total_transmission"));
}

#[test]
fn compare_and_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "label = \"cfg\"\nnq = 80\nh = 3\nf = 3\ns = 0.001\nepochs = 2\nalpha = \"a0x0.5\"\n").unwrap();
    let o = tierq(&["compare", "--config", cfg.to_str().unwrap(), "--seed", "4"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let row = text.lines().nth(1).unwrap();
    assert!(row.starts_with("cfg,4,3,3,2,"));
    let gain: f64 = row.split(',').nth(16).unwrap().parse().unwrap();
    assert!(gain > 0.0);
}

#[test]
fn bad_inputs_fail_cleanly() {
    assert!(!tierq(&["optimize", "--alpha", "a0xq"]).status.success());
    assert!(!tierq(&["optimize", "--m", "grid:0:1"]).status.success());
    assert!(!tierq(&["simulate", "--m", "grid:0:1:0.5"]).status.success());
    assert!(!tierq(&["experiment", "--seed", "1", "--exp", "40"]).status.success());
    assert!(!tierq(&["optimize", "--nq", "5", "--cover", "0.1"]).status.success());
}

#[test]
fn experiment_zero_writes_plot_files() {
    let dir = tempfile::tempdir().unwrap();
    let plots = dir.path().join("plots");
    let out = dir.path().join("exp0.csv");
    let o = tierq(&[
        "experiment",
        "--exp",
        "0",
        "--seed",
        "2",
        "--out",
        out.to_str().unwrap(),
        "--plot-dir",
        plots.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 22);
    for name in ["storage_est", "transmission_act", "weighted_sum_est", "weighted_sum_act"] {
        assert!(Path::new(&plots.join(format!("{name}.dat"))).exists());
    }
}
