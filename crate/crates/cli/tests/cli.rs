use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use onenn::data::read_dataset;
use onenn_cli::svg::{parse_cells, parse_polylines, Axes};
use tempfile::TempDir;

fn onenn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_onenn"))
        .args(args)
        .env_remove("ONENN_OUT")
        .env_remove("ONENN_WORKERS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn column(csv_text: &str, name: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    let i = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[i].parse().unwrap()).collect()
}

#[test]
fn diag_training_writes_one_row_per_step_and_reproduces() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "run.cfg", "regime = diag-dynamics\nn = 16\nd = 8\nsteps = 100\nmc_samples_per_step = 500\n");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = onenn(&["train", "--config", s(&cfg), "--out", s(out), "--seed", "7"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let log = fs::read_to_string(a.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 101);
    assert_eq!(log, fs::read_to_string(b.join("train_log.csv")).unwrap());
    assert_eq!(fs::read(a.join("checkpoint.csv")).unwrap(), fs::read(b.join("checkpoint.csv")).unwrap());

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    let outputs: Vec<String> = manifest["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    for entry in fs::read_dir(&a).unwrap() {
        let path = entry.unwrap().path();
        assert!(outputs.contains(&path.display().to_string()), "{} not listed", path.display());
    }
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config"]["train"]["regime"], "diag-dynamics");

    // the plot draws the same numbers as the CSV
    let svg = fs::read_to_string(a.join("loss.svg")).unwrap();
    let axes = Axes::parse(&svg).unwrap();
    let lines = parse_polylines(&svg);
    let loss = column(&log, "loss");
    assert_eq!(lines[0].1.len(), loss.len());
    let span = axes.y_max - axes.y_min;
    for (k, (&(px, py), l)) in lines[0].1.iter().zip(&loss).enumerate() {
        let (x, y) = axes.to_data(px, py);
        assert!((x - k as f64).abs() < 1e-2 && (y - l).abs() < 1e-4 * span, "step {k}: ({x}, {y}) vs {l}");
    }
}

#[test]
fn population_run_is_identical_across_worker_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "run.cfg", "regime = population-gd\nn = 4\nd = 4\nsteps = 4\nmc_samples_per_step = 1500\n");
    let mut logs = Vec::new();
    for w in ["1", "3"] {
        let out = tmp.path().join(w);
        let o = onenn(&["train", "--config", s(&cfg), "--out", s(&out), "--workers", w]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        logs.push(fs::read(out.join("train_log.csv")).unwrap());
    }
    assert_eq!(logs[0], logs[1]);
}

#[test]
fn multi_seed_sgd_plots_a_two_std_band() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "sgd.cfg",
        "regime = sgd\nn = 4\nd = 4\ndataset_size = 64\nbatch_size = 16\nepochs = 5\ntest_size = 20\nseeds = 3\nlog_x = true\n",
    );
    let out = tmp.path().join("o");
    let o = onenn(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for k in 0..3 {
        assert!(out.join(format!("train_log_seed{k}.csv")).exists());
    }
    let band = fs::read_to_string(out.join("train_band.csv")).unwrap();
    let svg = fs::read_to_string(out.join("loss.svg")).unwrap();
    assert!(svg.contains("class=\"band\"") && svg.contains("mean \u{b1} 2 std"));
    let axes = Axes::parse(&svg).unwrap();
    assert!(axes.log_x);
    let mean = column(&band, "loss_mean");
    let lines = parse_polylines(&svg);
    assert_eq!(lines.len(), 2);
    for (k, (&(px, py), m)) in lines[0].1.iter().zip(&mean).enumerate() {
        let (x, y) = axes.to_data(px, py);
        assert!((x - (k + 1) as f64).abs() < 1e-2 * (k + 1) as f64);
        assert!((y - m).abs() < 1e-4 * (axes.y_max - axes.y_min));
    }
}

#[test]
fn bad_config_reports_the_line_and_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "bad.cfg", "regime = diag-dynamics\nsteps = ten\n");
    let out = tmp.path().join("o");
    let o = onenn(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
    assert!(!out.exists());

    let o = onenn(&["train", "--config", s(&tmp.path().join("absent.cfg")), "--out", s(&out)]);
    assert_eq!(code(&o), 1);
    assert!(!out.exists());
}

#[test]
fn overflowing_weights_abort_with_the_numeric_exit_code() {
    let tmp = TempDir::new().unwrap();
    let mut text = String::from("layout_version,d,n,kind\n1,3,8,weights\nrow,col,value\n");
    for r in 0..3 {
        for c in 0..3 {
            text.push_str(&format!("{r},{c},1.5e308\n"));
        }
    }
    let ck = write(tmp.path(), "huge.csv", &text);
    let out = tmp.path().join("o");
    let o = onenn(&["shift-eval", "--checkpoint", s(&ck), "--instances", "50", "--out", s(&out)]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists());
}

#[test]
fn unknown_suite_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let o = onenn(&["verify", "curvature", "--out", s(tmp.path())]);
    assert_eq!(code(&o), 1);
}

#[test]
fn gradient_suite_passes() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("v");
    let o = onenn(&["verify", "gradients", "--out", s(&out), "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report = fs::read_to_string(out.join("verify_gradients.csv")).unwrap();
    assert!(report.starts_with("suite,block,statistic,estimate,stderr,verdict"));
    assert!(!report.contains(",fail"));
}

#[test]
fn landscape_guard_and_slice_row() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("l");
    let o = onenn(&["landscape", "--grid", "201x5", "--out", s(&out)]);
    assert_eq!(code(&o), 1);
    assert!(!out.exists());

    let o = onenn(&["landscape", "--grid", "5x4", "--xi1-range", "-2:2", "--xi2-range", "-1:5", "--mc-samples", "4000", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("landscape.csv")).unwrap();
    let (xi1, xi2, loss, se) = (column(&text, "xi1"), column(&text, "xi2"), column(&text, "loss"), column(&text, "stderr"));
    assert_eq!(loss.len(), 20);
    let n = 4.0;
    for i in (0..20).filter(|&i| xi1[i] == 0.0) {
        let t = n + (-xi2[i]).exp();
        let exact = 1.0 - 2.0 / t + n / (t * t);
        assert!((loss[i] - exact).abs() <= 4.0 * se[i], "xi2 = {}: {} vs {exact}", xi2[i], loss[i]);
    }
    let cells = parse_cells(&fs::read_to_string(out.join("landscape.svg")).unwrap());
    assert_eq!(cells.len(), 20);
    for (x, y, v) in cells {
        let i = (0..20).find(|&i| (xi1[i] - x).abs() < 1e-6 && (xi2[i] - y).abs() < 1e-6).expect("cell on grid");
        assert_eq!(v, loss[i]);
    }
}

fn zero_checkpoint(dir: &Path, d: usize, n: usize) -> PathBuf {
    write(dir, "zero.csv", &format!("layout_version,d,n,kind\n1,{d},{n},weights\nrow,col,value\n0,0,0\n"))
}

#[test]
fn zero_weights_on_shifted_data_match_the_uniform_average_baseline() {
    let tmp = TempDir::new().unwrap();
    let ck = zero_checkpoint(tmp.path(), 8, 16);
    let out = tmp.path().join("s");
    let o = onenn(&["shift-eval", "--checkpoint", s(&ck), "--n", "16", "--delta", "0.1", "--out", s(&out), "--seed", "11"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("shift_report.json")).unwrap()).unwrap();
    // uniform attention over N + 1 tokens: mean of N independent standard normals
    // (scaled by N / (N + 1)) minus one of them
    let n = 16.0;
    let expected = n / ((n + 1.0) * (n + 1.0)) + 1.0 - 2.0 / (n + 1.0);
    let (mse, se) = (report["mse_vs_1nn"].as_f64().unwrap(), report["mse_stderr"].as_f64().unwrap());
    assert!((mse - expected).abs() <= 4.0 * se, "{mse} vs {expected} (se {se})");
    assert!(out.join("shift.svg").exists());
}

#[test]
fn sharp_diagonal_checkpoint_classifies_integer_labels() {
    let tmp = TempDir::new().unwrap();
    let ck = write(tmp.path(), "diag.csv", "layout_version,d,n,kind\n1,8,16,diag\nxi1,xi2\n50,200\n");
    let out = tmp.path().join("s");
    let o = onenn(&["shift-eval", "--checkpoint", s(&ck), "--labels", "int:1:3", "--instances", "1000", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("shift_report.json")).unwrap()).unwrap();
    assert_eq!(report["mismatch_rate"].as_f64(), Some(0.0));
    assert_eq!(report["n_instances"], 1000);
}

#[test]
fn missing_or_malformed_checkpoint_leaves_no_outputs() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("s");
    let o = onenn(&["shift-eval", "--checkpoint", s(&tmp.path().join("nope.csv")), "--out", s(&out)]);
    assert_ne!(code(&o), 0);
    assert!(!out.exists());
    let bad = write(tmp.path(), "bad.csv", "layout_version,d,n,kind\n1,8,16,diag\nxi1,xi2\n50\n");
    let o = onenn(&["shift-eval", "--checkpoint", s(&bad), "--out", s(&out)]);
    assert_eq!(code(&o), 1);
    assert!(!out.exists());
}

#[test]
fn generated_dataset_feeds_shift_eval_and_the_curve_grows() {
    let tmp = TempDir::new().unwrap();
    let data_dir = tmp.path().join("data");
    let o = onenn(&["gen-data", "--n", "6", "--d", "3", "--instances", "25", "--labels", "int:1:3", "--out", s(&data_dir), "--seed", "5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let dataset = data_dir.join("dataset.csv");
    let set = read_dataset(fs::File::open(&dataset).unwrap()).unwrap();
    assert_eq!(set.len(), 25);
    assert!(set.iter().all(|p| p.n() == 6 && p.d() == 3));

    let ck = zero_checkpoint(tmp.path(), 3, 6);
    let out = tmp.path().join("s");
    for _ in 0..2 {
        let o = onenn(&["shift-eval", "--checkpoint", s(&ck), "--dataset", s(&dataset), "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let curve = fs::read_to_string(out.join("test_curve.csv")).unwrap();
    assert_eq!(column(&curve, "step"), vec![0.0, 1.0]);
    let mse = column(&curve, "mse_vs_1nn");
    assert_eq!(mse[0], mse[1]);

    let ck_wrong = zero_checkpoint(tmp.path(), 4, 6);
    let o = onenn(&["shift-eval", "--checkpoint", s(&ck_wrong), "--dataset", s(&dataset), "--out", s(&tmp.path().join("w"))]);
    assert_eq!(code(&o), 1);
    assert!(!tmp.path().join("w").exists());
}

#[test]
fn help_documents_config_keys() {
    let o = onenn(&["train", "--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("mc_samples_per_step") && text.contains("--workers") && text.contains("ONENN_OUT"));
}
