use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::{Duration, NaiveDate};

const BIN: &str = env!("CARGO_BIN_EXE_resnls");

struct Fixture {
    dir: tempfile::TempDir,
}

/// 100 wavy training days in 2020, then 20 test days in 2021 opening at 100
/// and closing the period at 110.
fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("date,open,high,low,close\n");
    let d0 = NaiveDate::from_ymd_opt(2020, 6, 1).unwrap();
    let mut prev: f64 = 100.0;
    for i in 0..100 {
        let c = 100.0 + 8.0 * (i as f64 / 6.0).sin() + 0.05 * i as f64;
        csv += &format!("{},{prev},{},{},{c}\n", d0 + Duration::days(i), prev.max(c) + 0.5, prev.min(c) - 0.5);
        prev = c;
    }
    let t0 = NaiveDate::from_ymd_opt(2021, 1, 4).unwrap();
    let mut open: f64 = 100.0;
    for i in 0..20 {
        let c = 100.0 + 10.0 * (i + 1) as f64 / 20.0 + if i % 3 == 0 { -1.5 } else { 0.0 };
        let c = if i == 19 { 110.0 } else { c };
        csv += &format!("{},{open},{},{},{c}\n", t0 + Duration::days(i), f64::max(open, c) + 0.5, f64::min(open, c) - 0.5);
        open = c;
    }
    std::fs::write(dir.path().join("fix.csv"), csv).unwrap();
    let config = format!(
        "train_start = \"2020-06-01\"\ntrain_end = \"2020-12-31\"\ntest_start = \"2021-01-01\"\ntest_end = \"2021-12-31\"\n\
         arch = \"lstm\"\nwindow_n = 3\nepochs = 2\nbatch_size = 16\nsweep_windows = [3, 5]\n\n[data]\nFIX = {:?}\n",
        dir.path().join("fix.csv").display().to_string()
    );
    std::fs::write(dir.path().join("run.toml"), config).unwrap();
    Fixture { dir }
}

impl Fixture {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str], out: &str) -> Output {
        Command::new(BIN)
            .args(args)
            .arg("--config")
            .arg(self.path("run.toml"))
            .arg("--out")
            .arg(self.path(out))
            .env_remove("RESNLS_EPOCHS")
            .output()
            .unwrap()
    }
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stdout: {}\nstderr: {}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
}

fn manifest(dir: &Path, command: &str) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join(format!("{command}_manifest.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn artifact_sha(m: &serde_json::Value, suffix: &str) -> String {
    m["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .find(|a| a["path"].as_str().unwrap().ends_with(suffix))
        .unwrap()["sha256"]
        .as_str()
        .unwrap()
        .to_string()
}

#[test]
fn train_is_reproducible_and_evaluate_is_idempotent() {
    let f = fixture();
    ok(&f.run(&["train"], "a"));
    ok(&f.run(&["train"], "b"));
    let (ma, mb) = (manifest(&f.path("a"), "train"), manifest(&f.path("b"), "train"));
    assert_eq!(ma["artifacts"].as_array().unwrap().len(), 3);
    for suffix in ["lstm-3.model", "lstm-3_loss.csv", "lstm-3_loss.svg"] {
        assert_eq!(artifact_sha(&ma, suffix), artifact_sha(&mb, suffix), "{suffix}");
    }
    for a in ma["artifacts"].as_array().unwrap() {
        assert!(Path::new(a["path"].as_str().unwrap()).is_file());
    }

    ok(&f.run(&["evaluate"], "a"));
    let first = std::fs::read(f.path("a/FIX/lstm-3_predictions.csv")).unwrap();
    ok(&f.run(&["evaluate"], "a"));
    assert_eq!(first, std::fs::read(f.path("a/FIX/lstm-3_predictions.csv")).unwrap());
    let text = String::from_utf8(first).unwrap();
    assert_eq!(text.lines().next(), Some("date,actual,predicted"));
    assert_eq!(text.lines().count(), 21);
    let metrics = std::fs::read_to_string(f.path("a/FIX/lstm-3_metrics.csv")).unwrap();
    assert!(metrics.starts_with("model,mae,mse,rmse,n_test\nlstm-3,"));

    ok(&f.run(&["backtest"], "a"));
    let summary = std::fs::read_to_string(f.path("a/backtest_summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    let bench: f64 = rows[0].rsplit(',').next().unwrap().parse().unwrap();
    assert!(rows[0].starts_with("FIX,benchmark,"));
    assert!((bench - 10.0).abs() < 1e-9, "{bench}");
    let daily = std::fs::read_to_string(f.path("a/FIX/lstm-3_backtest.csv")).unwrap();
    assert!(daily.starts_with("date,close,forecast,action,cash,shares,value,arr_pred,arr_bench\n"));
    assert!(f.path("a/FIX/lstm-3_trades.csv").is_file());
    assert!(f.path("a/FIX/lstm-3_arr.svg").is_file());
}

#[test]
fn evaluate_refuses_a_model_from_another_split() {
    let f = fixture();
    ok(&f.run(&["train"], "m"));
    let o = f.run(&["evaluate", "--set", "train_start=2020-07-01"], "m");
    assert_eq!(o.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "incompatible");
}

#[test]
fn sweep_writes_one_sorted_row_per_window() {
    let f = fixture();
    ok(&f.run(&["sweep", "--windows", "5,3"], "s"));
    let table = std::fs::read_to_string(f.path("s/FIX/lstm_sweep.csv")).unwrap();
    let ns: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ns, ["3", "5"]);
    assert!(table.starts_with("n,mae,mse,rmse,status\n"));
    assert!(f.path("s/FIX/sweep/lstm-5_loss.svg").is_file());
}

#[test]
fn missing_data_file_fails_before_any_work() {
    let f = fixture();
    std::fs::remove_file(f.path("fix.csv")).unwrap();
    let o = f.run(&["train"], "x");
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "config");
    assert!(!f.path("x").exists());
}

#[test]
fn bad_flag_values_are_config_errors() {
    let f = fixture();
    assert_eq!(f.run(&["train", "--arch", "transformer"], "x").status.code(), Some(2));
    assert_eq!(f.run(&["train", "--set", "epochs=0"], "x").status.code(), Some(2));
    assert_eq!(f.run(&["train", "--set", "nonsense=1"], "x").status.code(), Some(2));
}

#[test]
fn print_config_shows_layered_overrides() {
    let f = fixture();
    let o = Command::new(BIN)
        .args(["train", "--print-config", "--seed", "9", "--window-n", "10", "--config"])
        .arg(f.path("run.toml"))
        .env("RESNLS_EPOCHS", "7")
        .env("RESNLS_WINDOW_N", "20")
        .output()
        .unwrap();
    ok(&o);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("epochs = 7\n"), "{text}");
    assert!(text.contains("seed = 9\n"));
    // the flag beats the environment
    assert!(text.contains("window_n = 10\n"));
    assert!(text.contains("arch = \"lstm\"\n"));
}

#[test]
fn gradcheck_passes_and_lists_every_group() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(BIN).arg("gradcheck").arg("--out").arg(dir.path()).output().unwrap();
    ok(&o);
    let csv = std::fs::read_to_string(dir.path().join("gradcheck.csv")).unwrap();
    assert!(csv.starts_with("name,rel_err,max_abs_fd,checked,passed\n"));
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")));
    for group in ["conv1d/", "batchnorm/", "lstm/", "resnls/conv2.weight", "bilstm/lstm_bwd.w_hf", "rnn/rnn.w_hh", "cnn/head.weight"] {
        assert!(csv.contains(group), "{group}");
    }
}
