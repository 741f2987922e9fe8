//! Batch experiment driver for `onenn`: training runs, verification suites,
//! loss landscapes and shift evaluations, written as CSV, JSON and SVG.

pub mod checkpoint;
pub mod config;
pub mod svg;

use std::ffi::OsString;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use onenn::analysis::{evaluate_shift_at, loss_grid, Predictor};
use onenn::data::{gen_shifted_test_with, gen_training_prompt, read_dataset, write_dataset, LabelDist, PromptSet};
use onenn::mc::{substream, Workers};
use onenn::training::{train, Regime, TrainLog};
use onenn::verify::{self, seed_band, SuiteReport};
use serde::Serialize;
use serde_json::json;

use crate::config::TrainSettings;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

const SHIFT_STREAM: u64 = 0x7368_6966;
const TRAIN_DATA_STREAM: u64 = 0x6764_6174;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric abort: {0}")]
    Numeric(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Verification(_) => EXIT_VERIFY,
            _ => EXIT_CONFIG,
        }
    }
}

impl From<onenn::Error> for CliError {
    fn from(e: onenn::Error) -> Self {
        match e {
            onenn::Error::NumericOverflow(m) => CliError::Numeric(m),
            other => CliError::Config(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "onenn", version, about = "Experiments with one-layer softmax attention on the in-context 1-NN task")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Base seed for every random stream
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, env = "ONENN_OUT", default_value = "out")]
    out: PathBuf,
    /// Worker threads, 0 for one per core
    #[arg(long, env = "ONENN_WORKERS", default_value_t = 0)]
    workers: usize,
    /// Monte-Carlo samples (per step when training, per estimate otherwise)
    #[arg(long)]
    mc_samples: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train with a key = value configuration file
    #[command(after_long_help = config::HELP)]
    Train {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a verification suite; exit code 3 when a gated check fails
    Verify {
        #[arg(value_enum)]
        suite: Suite,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        /// Steps of the dynamics suite
        #[arg(long)]
        steps: Option<usize>,
        /// (prompt, weights) pairs of the gradients suite
        #[arg(long)]
        pairs: Option<usize>,
        /// Skip the full-weight population run of the dynamics suite
        #[arg(long)]
        no_population: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Monte-Carlo loss over a (xi1, xi2) grid of diagonal weights
    Landscape {
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        d: usize,
        /// `low:high`, logit units
        #[arg(long, default_value = "-3:3", value_parser = parse_range, allow_hyphen_values = true)]
        xi1_range: (f64, f64),
        /// `low:high`, logit units
        #[arg(long, default_value = "-3:3", value_parser = parse_range, allow_hyphen_values = true)]
        xi2_range: (f64, f64),
        /// `ROWSxCOLS` (xi1 points x xi2 points), at most 200x200
        #[arg(long, default_value = "41x41", value_parser = parse_grid)]
        grid: (usize, usize),
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on margin-separated data against the 1-NN label
    ShiftEval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset CSV; generated from the flags below when absent
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        /// Squared-distance separation (default 0.1 when generating)
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        /// gaussian, rademacher or int:LOW:HIGH
        #[arg(long, default_value = "gaussian", value_parser = parse_labels)]
        labels: LabelDist,
        /// Round predictions and count label mismatches
        #[arg(long)]
        classify: bool,
        /// Step recorded in test_curve.csv (default: next row)
        #[arg(long)]
        step: Option<usize>,
        /// Training log whose loss is drawn next to the test curve
        #[arg(long)]
        train_log: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Write a dataset CSV
    GenData {
        #[arg(long, value_enum, default_value = "shifted")]
        kind: DataKind,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        d: usize,
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        /// Labels of shifted data: gaussian, rademacher or int:LOW:HIGH
        #[arg(long, default_value = "gaussian", value_parser = parse_labels)]
        labels: LabelDist,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Suite {
    Gradients,
    Sparsity,
    Density,
    Slice,
    Dynamics,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum DataKind {
    Training,
    Shifted,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected low:high")?;
    let a: f64 = a.trim().parse().map_err(|_| format!("bad number '{a}'"))?;
    let b: f64 = b.trim().parse().map_err(|_| format!("bad number '{b}'"))?;
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err("need finite low < high".into());
    }
    Ok((a, b))
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once('x').ok_or("expected ROWSxCOLS")?;
    let rows = a.trim().parse().map_err(|_| format!("bad row count '{a}'"))?;
    let cols = b.trim().parse().map_err(|_| format!("bad column count '{b}'"))?;
    Ok((rows, cols))
}

fn parse_labels(s: &str) -> Result<LabelDist, String> {
    match s {
        "gaussian" => Ok(LabelDist::Gaussian),
        "rademacher" => Ok(LabelDist::Rademacher),
        _ => {
            let parts: Vec<&str> = s.split(':').collect();
            match parts.as_slice() {
                ["int", lo, hi] => {
                    let low = lo.parse().map_err(|_| format!("bad integer '{lo}'"))?;
                    let high = hi.parse().map_err(|_| format!("bad integer '{hi}'"))?;
                    if low > high {
                        return Err("int:LOW:HIGH needs LOW <= HIGH".into());
                    }
                    Ok(LabelDist::UniformInt { low, high })
                }
                _ => Err(format!("unknown label distribution '{s}' (gaussian, rademacher, int:LOW:HIGH)")),
            }
        }
    }
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let recorded = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli.command, recorded) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    args: Vec<String>,
    config: serde_json::Value,
    seed: u64,
    workers: usize,
    outputs: Vec<String>,
    started_unix: f64,
    finished_unix: f64,
    version: &'static str,
}

/// Files are buffered and only written once the command has produced all of
/// them, so a failing command leaves nothing behind.
struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
    started: f64,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf(), files: Vec::new(), started: unix_now() }
    }

    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn commit(self, command: &str, args: Vec<String>, config: serde_json::Value, seed: u64, workers: &Workers) -> Result<(), CliError> {
        fs::create_dir_all(&self.dir)?;
        let mut outputs = Vec::new();
        for (name, bytes) in &self.files {
            let path = self.dir.join(name);
            fs::write(&path, bytes)?;
            outputs.push(path.display().to_string());
        }
        let manifest_path = self.dir.join("manifest.json");
        outputs.push(manifest_path.display().to_string());
        let manifest = Manifest {
            command: command.to_string(),
            args,
            config,
            seed,
            workers: workers.threads(),
            outputs,
            started_unix: self.started,
            finished_unix: unix_now(),
            version: env!("CARGO_PKG_VERSION"),
        };
        fs::write(manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn execute(command: Command, args: Vec<String>) -> Result<(), CliError> {
    match command {
        Command::Train { config, common } => cmd_train(&config, &common, args),
        Command::Verify { suite, n, d, steps, pairs, no_population, common } => {
            cmd_verify(suite, SuiteOverrides { n, d, steps, pairs, population: !no_population }, &common, args)
        }
        Command::Landscape { n, d, xi1_range, xi2_range, grid, common } => cmd_landscape(n, d, xi1_range, xi2_range, grid, &common, args),
        Command::ShiftEval { checkpoint, dataset, n, d, delta, instances, labels, classify, step, train_log, common } => {
            let source = match dataset {
                Some(path) => DataSource::File(path),
                None => DataSource::Generate { n, d, delta: delta.unwrap_or(0.1), instances, labels },
            };
            let delta = match source {
                DataSource::File(_) => delta,
                DataSource::Generate { delta, .. } => Some(delta),
            };
            let classify = classify || matches!(labels, LabelDist::UniformInt { .. });
            cmd_shift_eval(&checkpoint, source, delta, classify, step, train_log.as_deref(), &common, args)
        }
        Command::GenData { kind, n, d, instances, delta, labels, common } => cmd_gen_data(kind, n, d, instances, delta, labels, &common, args),
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> onenn::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn cmd_train(path: &Path, common: &Common, args: Vec<String>) -> Result<(), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut settings = TrainSettings::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Some(seed) = common.seed {
        settings.config.seed = seed;
    }
    if let Some(m) = common.mc_samples {
        settings.config.mc_samples_per_step = m;
    }
    settings.config.validate()?;
    let workers = Workers::new(common.workers)?;
    let base = settings.config.clone();
    let logs: Vec<TrainLog> = workers.install(|| {
        (0..settings.seeds)
            .map(|k| {
                let mut c = base.clone();
                c.seed = base.seed.wrapping_add(k as u64);
                train(&c)
            })
            .collect::<onenn::Result<_>>()
    })?;
    let mut out = Outputs::new(&common.out);
    for log in &logs {
        for w in &log.warnings {
            eprintln!("warning: {w}");
        }
    }
    if logs.len() == 1 {
        out.add("train_log.csv", csv_bytes(|b| logs[0].write_csv(b))?);
    } else {
        for (k, log) in logs.iter().enumerate() {
            out.add(&format!("train_log_seed{k}.csv"), csv_bytes(|b| log.write_csv(b))?);
        }
        out.add("train_band.csv", band_csv(&logs)?);
    }
    out.add("loss.svg", loss_plot(&logs, settings.log_x).into_bytes());
    let first = &logs[0];
    let model = match (&first.final_params, &first.final_weights) {
        (Some(p), _) => Some(Predictor::Diag(*p)),
        (None, Some(w)) => Some(Predictor::Weights(w.clone())),
        _ => None,
    };
    if let Some(model) = model {
        let mut buf = Vec::new();
        checkpoint::write(&mut buf, &model, base.d, base.n)?;
        out.add("checkpoint.csv", buf);
    }
    let config = json!({ "train": base, "seeds": settings.seeds, "c_d_hat": settings.c_d_hat, "sigma_auto": settings.sigma_auto, "log_x": settings.log_x });
    out.commit("train", args, config, base.seed, &workers)?;
    if let Some(msg) = logs.iter().find_map(|l| l.aborted.clone()) {
        return Err(CliError::Numeric(msg));
    }
    Ok(())
}

fn test_curve(log: &TrainLog) -> Vec<f64> {
    log.records.iter().filter_map(|r| r.test_mse).collect()
}

fn band_csv(logs: &[TrainLog]) -> Result<Vec<u8>, CliError> {
    let train = seed_band(&logs.iter().map(TrainLog::losses).collect::<Vec<_>>());
    let tests: Vec<Vec<f64>> = logs.iter().map(test_curve).collect();
    let test = tests.iter().all(|t| !t.is_empty()).then(|| seed_band(&tests));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "loss_mean", "loss_std", "test_mse_mean", "test_mse_std"])?;
    for i in 0..train.mean.len() {
        let step = logs[0].records[i].step;
        let (tm, ts) = match &test {
            Some(t) if i < t.mean.len() => (t.mean[i].to_string(), t.std[i].to_string()),
            _ => (String::new(), String::new()),
        };
        w.write_record([step.to_string(), train.mean[i].to_string(), train.std[i].to_string(), tm, ts])?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.into_error()))
}

fn loss_plot(logs: &[TrainLog], log_x: bool) -> String {
    let shift = if log_x { 1.0 } else { 0.0 };
    let steps: Vec<f64> = logs[0].records.iter().map(|r| r.step as f64 + shift).collect();
    let sgd = logs[0].config.regime == Regime::Sgd;
    let unit = if sgd { "epoch" } else { "step" };
    let x_label = if log_x { format!("{unit} + 1") } else { unit.to_string() };
    let curve = |name: &str, curves: Vec<Vec<f64>>| -> Option<svg::Series> {
        if curves.iter().any(Vec::is_empty) {
            return None;
        }
        let band = seed_band(&curves);
        let points: Vec<(f64, f64)> = steps.iter().zip(&band.mean).map(|(&x, &y)| (x, y)).collect();
        let band = if curves.len() > 1 {
            steps.iter().zip(band.mean.iter().zip(&band.std)).map(|(&x, (&m, &s))| (x, m - 2.0 * s, m + 2.0 * s)).collect()
        } else {
            Vec::new()
        };
        Some(svg::Series { name: name.to_string(), points, band })
    };
    let mut series = Vec::new();
    series.extend(curve(if sgd { "train loss" } else { "loss" }, logs.iter().map(TrainLog::losses).collect()));
    series.extend(curve("test mse vs 1-NN", logs.iter().map(test_curve).collect()));
    let title = if logs.len() > 1 {
        format!("{} ({} seeds, mean \u{b1} 2 std)", logs[0].config.regime, logs.len())
    } else {
        logs[0].config.regime.to_string()
    };
    svg::LinePlot { title, x_label, y_label: "loss".into(), log_x, series }.render()
}

struct SuiteOverrides {
    n: Option<usize>,
    d: Option<usize>,
    steps: Option<usize>,
    pairs: Option<usize>,
    population: bool,
}

fn cmd_verify(suite: Suite, o: SuiteOverrides, common: &Common, args: Vec<String>) -> Result<(), CliError> {
    let seed = common.seed.unwrap_or(0);
    let workers = Workers::new(common.workers)?;
    let mut out = Outputs::new(&common.out);
    let (name, report, config) = workers.install(|| -> Result<(&str, SuiteReport, serde_json::Value), CliError> {
        Ok(match suite {
            Suite::Gradients => {
                let d = verify::GradientParams::default();
                let p = verify::GradientParams { n: o.n.unwrap_or(d.n), d: o.d.unwrap_or(d.d), pairs: o.pairs.unwrap_or(d.pairs), seed, ..d };
                let cfg = json!({ "n": p.n, "d": p.d, "pairs": p.pairs, "eps": p.eps });
                ("gradients", verify::gradient_suite(&p)?, cfg)
            }
            Suite::Sparsity => {
                let d = verify::SparsityParams::default();
                let p = verify::SparsityParams { n: o.n.unwrap_or(d.n), d: o.d.unwrap_or(d.d), mc_samples: common.mc_samples.unwrap_or(d.mc_samples), seed, ..d };
                let cfg = json!({ "n": p.n, "d": p.d, "xi1": p.point.xi1, "xi2": p.point.xi2, "mc_samples": p.mc_samples });
                ("sparsity", verify::sparsity_suite(&p)?, cfg)
            }
            Suite::Density => {
                let d = verify::DensityParams::default();
                let m = common.mc_samples;
                let p = verify::DensityParams {
                    ks_dims: o.d.map(|d| vec![d]).unwrap_or(d.ks_dims.clone()),
                    ks_samples: m.unwrap_or(d.ks_samples),
                    order_n: o.n.unwrap_or(d.order_n),
                    order_samples: m.unwrap_or(d.order_samples),
                    seed,
                    ..d
                };
                let cfg = json!({ "dims": p.dims, "ks_dims": p.ks_dims, "ks_samples": p.ks_samples, "order_n": p.order_n, "order_samples": p.order_samples });
                ("density", verify::density_suite(&p)?, cfg)
            }
            Suite::Slice => {
                let d = verify::SliceParams::default();
                let p = verify::SliceParams {
                    ns: o.n.map(|n| vec![n]).unwrap_or(d.ns.clone()),
                    d: o.d.unwrap_or(d.d),
                    samples: common.mc_samples.unwrap_or(d.samples),
                    seed,
                    ..d
                };
                let cfg = json!({ "ns": p.ns, "xi2s": p.xi2s, "d": p.d, "samples": p.samples });
                ("slice", verify::slice_suite(&p)?, cfg)
            }
            Suite::Dynamics => {
                let d = verify::DynamicsParams::default();
                let p = verify::DynamicsParams {
                    n: o.n.unwrap_or(d.n),
                    d: o.d.unwrap_or(d.d),
                    steps: o.steps.unwrap_or(d.steps),
                    mc_samples: common.mc_samples.unwrap_or(d.mc_samples),
                    seed,
                    population: o.population,
                    ..d
                };
                let cfg = json!({ "n": p.n, "d": p.d, "c_d_hat": p.c_d_hat, "eta": p.eta, "steps": p.steps, "mc_samples": p.mc_samples, "population": p.population });
                let outcome = verify::dynamics_suite(&p)?;
                out.add("diag_log.csv", csv_bytes(|b| outcome.diag_log.write_csv(b))?);
                if let Some(log) = &outcome.population_log {
                    out.add("population_log.csv", csv_bytes(|b| log.write_csv(b))?);
                }
                ("dynamics", outcome.report, cfg)
            }
        })
    })?;
    out.add(&format!("verify_{name}.csv"), csv_bytes(|b| report.write_csv(b))?);
    for row in &report.rows {
        println!("{},{},{},{},{}", row.block, row.statistic, row.estimate, row.stderr.map_or(String::new(), |s| s.to_string()), row.verdict);
    }
    out.commit("verify", args, json!({ "suite": name, "params": config }), seed, &workers)?;
    let failures = report.failures();
    if failures.is_empty() {
        Ok(())
    } else {
        let names: Vec<&str> = failures.iter().map(|r| r.block.as_str()).collect();
        Err(CliError::Verification(format!("{name}: {}", names.join(", "))))
    }
}

fn linspace(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![lo];
    }
    (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect()
}

pub const MAX_GRID: usize = 200;

fn cmd_landscape(n: usize, d: usize, xi1: (f64, f64), xi2: (f64, f64), grid: (usize, usize), common: &Common, args: Vec<String>) -> Result<(), CliError> {
    let (rows, cols) = grid;
    if rows == 0 || cols == 0 || rows > MAX_GRID || cols > MAX_GRID {
        return Err(CliError::Config(format!("grid {rows}x{cols} outside 1x1..{MAX_GRID}x{MAX_GRID}")));
    }
    let seed = common.seed.unwrap_or(0);
    let samples = common.mc_samples.unwrap_or(10_000);
    let xi1s = linspace(xi1.0, xi1.1, rows);
    let xi2s = linspace(xi2.0, xi2.1, cols);
    let workers = Workers::new(common.workers)?;
    let est = workers.install(|| loss_grid(n, d, &xi1s, &xi2s, samples, seed))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["xi1", "xi2", "loss", "stderr"])?;
    for (i, a) in xi1s.iter().enumerate() {
        for (j, b) in xi2s.iter().enumerate() {
            w.write_record([a.to_string(), b.to_string(), est[i][j].mean.to_string(), est[i][j].stderr.to_string()])?;
        }
    }
    let mut out = Outputs::new(&common.out);
    out.add("landscape.csv", w.into_inner().map_err(|e| CliError::Io(e.into_error()))?);
    let means: Vec<Vec<f64>> = est.iter().map(|row| row.iter().map(|e| e.mean).collect()).collect();
    let title = format!("E[(y_hat - y_nn)^2], N = {n}, d = {d}");
    out.add("landscape.svg", svg::heatmap(&title, "xi1", "xi2", &xi1s, &xi2s, &means).into_bytes());
    let config = json!({ "n": n, "d": d, "xi1_range": [xi1.0, xi1.1], "xi2_range": [xi2.0, xi2.1], "grid": [rows, cols], "mc_samples": samples });
    out.commit("landscape", args, config, seed, &workers)
}

enum DataSource {
    File(PathBuf),
    Generate { n: Option<usize>, d: Option<usize>, delta: f64, instances: usize, labels: LabelDist },
}

/// Margin-separated instances from the shift stream of `seed`.
pub fn shifted_set(n: usize, d: usize, delta: f64, labels: LabelDist, count: usize, seed: u64) -> onenn::Result<Vec<PromptSet<f64>>> {
    let mut rng = substream(seed, &[SHIFT_STREAM]);
    (0..count).map(|_| gen_shifted_test_with(n, d, delta, labels, &mut rng)).collect()
}

fn label_name(l: &LabelDist) -> String {
    match l {
        LabelDist::Gaussian => "gaussian".into(),
        LabelDist::Rademacher => "rademacher".into(),
        LabelDist::UniformInt { low, high } => format!("int:{low}:{high}"),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_shift_eval(
    ckpt: &Path,
    source: DataSource,
    delta: Option<f64>,
    classify: bool,
    step: Option<usize>,
    train_log: Option<&Path>,
    common: &Common,
    args: Vec<String>,
) -> Result<(), CliError> {
    let (model, ck_d, ck_n) = checkpoint::read(open(ckpt)?)?;
    let seed = common.seed.unwrap_or(0);
    let (instances, source_cfg) = match source {
        DataSource::File(path) => {
            let set = read_dataset(open(&path)?)?;
            (set, json!({ "dataset": path.display().to_string() }))
        }
        DataSource::Generate { n, d, delta, instances, labels } => {
            let (n, d) = (n.unwrap_or(ck_n), d.unwrap_or(ck_d));
            let set = shifted_set(n, d, delta, labels, instances, seed)?;
            (set, json!({ "n": n, "d": d, "delta": delta, "instances": instances, "labels": label_name(&labels) }))
        }
    };
    if instances.is_empty() {
        return Err(CliError::Config("dataset has no instances".into()));
    }
    if let Some(bad) = instances.iter().find(|p| p.d() != ck_d) {
        return Err(CliError::Config(format!("dataset dimension {} does not match checkpoint d = {ck_d}", bad.d())));
    }
    let train_curve = match train_log {
        Some(p) => Some(read_train_curve(p)?),
        None => None,
    };
    let workers = Workers::new(common.workers)?;
    let report = workers.install(|| evaluate_shift_at(&model, &instances, classify, delta))?;

    let curve_path = common.out.join("test_curve.csv");
    let mut rows: Vec<[String; 5]> = Vec::new();
    if curve_path.exists() {
        let mut r = csv::Reader::from_reader(open(&curve_path)?);
        for rec in r.records() {
            let rec = rec?;
            rows.push(std::array::from_fn(|i| rec.get(i).unwrap_or("").to_string()));
        }
    }
    let step = step.unwrap_or(rows.len());
    rows.push([
        step.to_string(),
        report.mse_vs_1nn.to_string(),
        report.mse_stderr.to_string(),
        report.mismatch_rate.map_or(String::new(), |m| m.to_string()),
        report.n_instances.to_string(),
    ]);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "mse_vs_1nn", "mse_stderr", "mismatch_rate", "n_instances"])?;
    for row in &rows {
        w.write_record(row)?;
    }
    let mut out = Outputs::new(&common.out);
    out.add("shift_report.json", serde_json::to_vec_pretty(&report)?);
    out.add("test_curve.csv", w.into_inner().map_err(|e| CliError::Io(e.into_error()))?);
    let test_points: Vec<(f64, f64)> = rows.iter().filter_map(|r| Some((r[0].parse().ok()?, r[1].parse().ok()?))).collect();
    let mut series = vec![svg::Series { name: "test mse vs 1-NN".into(), points: test_points, band: vec![] }];
    if let Some(points) = train_curve {
        series.push(svg::Series { name: "train mse (2 x logged loss)".into(), points, band: vec![] });
    }
    let plot = svg::LinePlot { title: "train and shifted-test error".into(), x_label: "step".into(), y_label: "mse".into(), log_x: false, series };
    out.add("shift.svg", plot.render().into_bytes());
    let config = json!({ "checkpoint": ckpt.display().to_string(), "source": source_cfg, "delta": delta, "classify": classify, "step": step });
    out.commit("shift-eval", args, config, seed, &workers)
}

fn read_train_curve(path: &Path) -> Result<Vec<(f64, f64)>, CliError> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| CliError::Config(format!("{}: no '{name}' column", path.display())));
    let (si, li) = (col("step")?, col("loss")?);
    let mut points = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| rec.get(i).and_then(|s| s.parse::<f64>().ok());
        if let (Some(s), Some(l)) = (parse(si), parse(li)) {
            points.push((s, 2.0 * l));
        }
    }
    Ok(points)
}

#[allow(clippy::too_many_arguments)]
fn cmd_gen_data(kind: DataKind, n: usize, d: usize, count: usize, delta: f64, labels: LabelDist, common: &Common, args: Vec<String>) -> Result<(), CliError> {
    let seed = common.seed.unwrap_or(0);
    let set = match kind {
        DataKind::Shifted => shifted_set(n, d, delta, labels, count, seed)?,
        DataKind::Training => {
            let mut rng = substream(seed, &[TRAIN_DATA_STREAM]);
            (0..count).map(|_| gen_training_prompt(n, d, &mut rng)).collect::<onenn::Result<_>>()?
        }
    };
    let workers = Workers::new(common.workers)?;
    let mut out = Outputs::new(&common.out);
    out.add("dataset.csv", csv_bytes(|b| write_dataset(b, &set))?);
    let kind_name = match kind {
        DataKind::Shifted => "shifted",
        DataKind::Training => "training",
    };
    let config = json!({ "kind": kind_name, "n": n, "d": d, "instances": count, "delta": delta, "labels": label_name(&labels) });
    out.commit("gen-data", args, config, seed, &workers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_parsers() {
        assert_eq!(parse_range("-3:3"), Ok((-3.0, 3.0)));
        assert!(parse_range("3:-3").is_err());
        assert!(parse_range("3").is_err());
        assert_eq!(parse_grid("41x7"), Ok((41, 7)));
        assert!(parse_grid("41").is_err());
        assert_eq!(parse_labels("int:1:3"), Ok(LabelDist::UniformInt { low: 1, high: 3 }));
        assert_eq!(parse_labels("gaussian"), Ok(LabelDist::Gaussian));
        assert!(parse_labels("int:3:1").is_err());
        assert!(parse_labels("poisson").is_err());
    }

    #[test]
    fn linspace_endpoints() {
        let g = linspace(-3.0, 3.0, 41);
        assert_eq!((g[0], g[20], g[40]), (-3.0, 0.0, 3.0));
        assert_eq!(linspace(1.0, 2.0, 1), vec![1.0]);
    }

    #[test]
    fn error_codes() {
        assert_eq!(CliError::from(onenn::Error::NumericOverflow("x".into())).exit_code(), EXIT_NUMERIC);
        assert_eq!(CliError::from(onenn::Error::Config("x".into())).exit_code(), EXIT_CONFIG);
        assert_eq!(CliError::Verification("x".into()).exit_code(), EXIT_VERIFY);
    }
}
