//! Gradient-descent drivers: Monte-Carlo population descent on the full
//! weights, the two-parameter diagonal dynamics, and mini-batch SGD on a
//! fixed training set.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::data::{gen_shifted_test, gen_training_prompt, one_nn, PromptSet};
use crate::error::{Error, Result};
use crate::gradients::{direction, grad_diag, grad_population, sample_loss};
use crate::mc::{self, chunked_over, McEstimate, Merge, Moments};
use crate::model::{forward, AttentionWeights, DiagonalParams};

const EVAL_STREAM: u64 = 0x6576_616c;
const STEP_STREAM: u64 = 0x7374_6570;
const DATA_STREAM: u64 = 0x6461_7461;
const TEST_STREAM: u64 = 0x7465_7374;
const INIT_STREAM: u64 = 0x696e_6974;
const SHUFFLE_STREAM: u64 = 0x7368_7566;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    PopulationGd,
    DiagDynamics,
    Sgd,
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "population-gd" => Ok(Regime::PopulationGd),
            "diag-dynamics" => Ok(Regime::DiagDynamics),
            "sgd" => Ok(Regime::Sgd),
            other => Err(Error::Config(format!("unknown regime '{other}' (population-gd, diag-dynamics, sgd)"))),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::PopulationGd => "population-gd",
            Regime::DiagDynamics => "diag-dynamics",
            Regime::Sgd => "sgd",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SgdConfig {
    pub dataset_size: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Standard deviation of the Gaussian initialization of each active entry.
    pub init_scale: f64,
    /// Separation of the attached shifted test set; `None` for no test set.
    pub test_delta: Option<f64>,
    pub test_size: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { dataset_size: 10_000, batch_size: 128, epochs: 2000, lr: 0.1, init_scale: 0.02, test_delta: Some(0.1), test_size: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub n: usize,
    pub d: usize,
    /// Magnitude of the initial query self-score, `W33 = -sigma`.
    pub sigma: f64,
    pub eta: f64,
    pub steps: usize,
    pub mc_samples_per_step: usize,
    pub regime: Regime,
    pub sgd: Option<SgdConfig>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let (n, d) = (16, 8);
        Self {
            n,
            d,
            sigma: sigma_threshold(n, d, 1.0).map(|s| s.value).unwrap_or(0.0),
            eta: 0.5,
            steps: 500,
            mc_samples_per_step: 10_000,
            regime: Regime::DiagDynamics,
            sgd: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n == 0 || self.d < 2 {
            return bad(format!("need N >= 1 and d >= 2, got N = {}, d = {}", self.n, self.d));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return bad(format!("sigma = {} must be finite and >= 0", self.sigma));
        }
        match (self.regime, &self.sgd) {
            (Regime::Sgd, None) => return bad("regime sgd needs the sgd settings".into()),
            (Regime::Sgd, Some(s)) => {
                if s.dataset_size == 0 || s.batch_size == 0 || !(s.lr > 0.0) || !(s.init_scale >= 0.0) {
                    return bad("sgd needs dataset_size, batch_size >= 1, lr > 0, init_scale >= 0".into());
                }
                if let Some(delta) = s.test_delta {
                    if !(delta > 0.0 && delta <= 2.0) || self.n < 2 || s.test_size == 0 {
                        return bad(format!("shifted test set needs 0 < delta <= 2, N >= 2, size >= 1 (delta = {delta})"));
                    }
                }
            }
            _ => {
                if !(self.eta > 0.0) || self.mc_samples_per_step == 0 {
                    return bad("eta must be > 0 and mc_samples_per_step >= 1".into());
                }
            }
        }
        Ok(())
    }
}

/// Initialization scale `2 max{log(N d), -log(1 - (N sqrt d)^(1/d)), C (1 - 2^-N)}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaThreshold {
    pub value: f64,
    pub log_term: f64,
    /// `None` when `(N sqrt d)^(1/d) >= 1` and the term is undefined.
    pub root_term: Option<f64>,
    pub constant_term: f64,
    pub warning: Option<String>,
}

pub fn sigma_threshold(n: usize, d: usize, c_d_hat: f64) -> Result<SigmaThreshold> {
    if n < 2 || d < 2 {
        return Err(Error::Precondition(format!("sigma threshold needs N, d >= 2 (N = {n}, d = {d})")));
    }
    if !(c_d_hat > 0.0) {
        return Err(Error::Precondition(format!("C_d = {c_d_hat} must be positive")));
    }
    let (nf, df) = (n as f64, d as f64);
    let log_term = (nf * df).ln();
    let root = (nf * df.sqrt()).powf(1.0 / df);
    let (root_term, warning) = if root < 1.0 {
        (Some(-(1.0 - root).ln()), None)
    } else {
        (None, Some(format!("(N sqrt d)^(1/d) = {root:.4} >= 1: -log(1 - (N sqrt d)^(1/d)) undefined, term skipped")))
    };
    let constant_term = c_d_hat * (1.0 - 0.5f64.powi(n.min(1074) as i32));
    let value = 2.0 * log_term.max(root_term.unwrap_or(f64::NEG_INFINITY)).max(constant_term);
    Ok(SigmaThreshold { value, log_term, root_term, constant_term, warning })
}

/// One logged step.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct StepRecord {
    pub step: usize,
    /// `1/2 E[(y_hat - y_nn)^2]`.
    pub loss: f64,
    pub loss_stderr: f64,
    pub xi1: Option<f64>,
    pub xi2: Option<f64>,
    /// Drifts `dL/dxi1`, `dL/dxi2` (diagonal regime).
    pub dxi1: Option<f64>,
    pub dxi2: Option<f64>,
    /// Norms of `(g11, g21, g31, g13, g23, g33)` of the gradient taken at this step.
    pub grad_norms: Option<[f64; 6]>,
    /// Largest off-pattern entry of `W` in units of its accumulated
    /// Monte-Carlo standard error (population regime).
    pub offpattern_z: Option<f64>,
    /// `E[(y_hat - y_nn)^2]` on the attached shifted test set.
    pub test_mse: Option<f64>,
    pub test_mse_stderr: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainLog {
    pub config: TrainConfig,
    pub records: Vec<StepRecord>,
    pub warnings: Vec<String>,
    /// Set when a step overflowed; the records stop there.
    pub aborted: Option<String>,
    pub wall_time_secs: f64,
    pub provenance: String,
    #[serde(skip)]
    pub final_weights: Option<AttentionWeights<f64>>,
    pub final_params: Option<DiagonalParams<f64>>,
}

const CSV_COLUMNS: [&str; 16] = [
    "step", "loss", "loss_stderr", "xi1", "xi2", "dxi1", "dxi2", "g11_norm", "g21_norm", "g31_norm", "g13_norm", "g23_abs",
    "g33_abs", "offpattern_z", "test_mse", "test_mse_stderr",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainLog {
    fn new(config: &TrainConfig) -> Self {
        Self {
            config: config.clone(),
            records: Vec::new(),
            warnings: Vec::new(),
            aborted: None,
            wall_time_secs: 0.0,
            provenance: format!("onenn {}", env!("CARGO_PKG_VERSION")),
            final_weights: None,
            final_params: None,
        }
    }

    /// One CSV row per record; wall time is left out so reruns are byte-identical.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_COLUMNS)?;
        for r in &self.records {
            let norms = r.grad_norms.map(|n| n.map(Some)).unwrap_or([None; 6]);
            let mut row = vec![r.step.to_string(), r.loss.to_string(), r.loss_stderr.to_string()];
            row.extend([r.xi1, r.xi2, r.dxi1, r.dxi2].map(opt));
            row.extend(norms.map(opt));
            row.extend([r.offpattern_z, r.test_mse, r.test_mse_stderr].map(opt));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn xi1(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.xi1).collect()
    }

    pub fn xi2(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.xi2).collect()
    }
}

/// Dispatches on `config.regime`.
pub fn train(config: &TrainConfig) -> Result<TrainLog> {
    match config.regime {
        Regime::PopulationGd => train_population_gd(config),
        Regime::DiagDynamics => train_diag(config),
        Regime::Sgd => train_sgd(config),
    }
}

fn expect_regime(config: &TrainConfig, regime: Regime) -> Result<()> {
    config.validate()?;
    if config.regime != regime {
        return Err(Error::Config(format!("expected regime {regime}, config says {}", config.regime)));
    }
    Ok(())
}

fn warn_threshold(config: &TrainConfig, log: &mut TrainLog) {
    if let Ok(t) = sigma_threshold(config.n, config.d, 1.0) {
        log.warnings.extend(t.warning);
    }
}

struct LossAcc(Moments, Option<String>);

impl Merge for LossAcc {
    fn merge(&mut self, other: Self) {
        self.0.merge(other.0);
        if self.1.is_none() {
            self.1 = other.1;
        }
    }
}

/// Mean of `f` over `items`, in parallel with a fixed reduction order.
fn mean_over<T: Sync>(items: &[T], f: impl Fn(&T) -> Result<f64> + Sync) -> Result<McEstimate> {
    let acc = chunked_over(items, || LossAcc(Moments::default(), None), |acc, it| match f(it) {
        Ok(v) => acc.0.push(v),
        Err(e) => {
            acc.1.get_or_insert(e.to_string());
        }
    });
    match acc.1 {
        Some(msg) => Err(Error::NumericOverflow(msg)),
        None => Ok(acc.0.estimate()),
    }
}

/// Squared error of the prediction against the 1-NN label, unhalved.
fn squared_error(prompt: &PromptSet<f64>, w: &AttentionWeights<f64>) -> Result<f64> {
    let r = forward(prompt, w)? - one_nn(prompt).label;
    Ok(r * r)
}

fn diag_state(w: &AttentionWeights<f64>) -> (f64, f64) {
    let w11 = w.w11();
    (w11.diag().mean().unwrap_or(0.0), -w.w33())
}

/// Off-pattern entries of `W`: everything outside the diagonal of `W11`, the
/// query self-score, and the label-slot column.
fn offpattern_entries(m: &Array2<f64>) -> Vec<f64> {
    let d = m.nrows() - 2;
    let mut out = Vec::new();
    for r in 0..d + 2 {
        for c in 0..d + 2 {
            let on_pattern = (r == c && r != d) || c == d;
            if !on_pattern {
                out.push(m[[r, c]]);
            }
        }
    }
    out
}

/// Gradient descent on the full weights with fresh Monte-Carlo gradients each
/// step. The loss column is measured on one fixed evaluation sample so that
/// successive entries differ only through the weights.
pub fn train_population_gd(config: &TrainConfig) -> Result<TrainLog> {
    expect_regime(config, Regime::PopulationGd)?;
    let start = Instant::now();
    let (n, d) = (config.n, config.d);
    let mut log = TrainLog::new(config);
    warn_threshold(config, &mut log);
    let mut rng = mc::substream(config.seed, &[EVAL_STREAM]);
    let eval: Vec<PromptSet<f64>> =
        (0..config.mc_samples_per_step).map(|_| gen_training_prompt(n, d, &mut rng)).collect::<Result<_>>()?;
    let mut w = AttentionWeights::initial(d, config.sigma);
    let mut var_sum = vec![0.0; offpattern_entries(w.matrix()).len()];
    let mut z = 0.0;
    for k in 0..=config.steps {
        let loss = match mean_over(&eval, |p| sample_loss(p, &w)) {
            Ok(l) => l,
            Err(e) => {
                log.aborted = Some(format!("step {k}: {e}"));
                break;
            }
        };
        let (xi1, xi2) = diag_state(&w);
        let mut rec = StepRecord {
            step: k,
            loss: loss.mean,
            loss_stderr: loss.stderr,
            xi1: Some(xi1),
            xi2: Some(xi2),
            offpattern_z: Some(z),
            ..Default::default()
        };
        if k == config.steps {
            log.records.push(rec);
            break;
        }
        let seed = mc::derive_seed(config.seed, &[STEP_STREAM, k as u64]);
        let grad = match grad_population(n, d, &w, config.mc_samples_per_step, seed) {
            Ok(g) => g,
            Err(e) => {
                log.records.push(rec);
                log.aborted = Some(format!("step {k}: {e}"));
                break;
            }
        };
        rec.grad_norms = Some(grad.mean.block_norms());
        log.records.push(rec);
        let step = grad.mean.to_matrix() * config.eta;
        *w.matrix_mut() -= &step;
        let se = offpattern_entries(&grad.stderr.to_matrix());
        let drift = offpattern_entries(w.matrix());
        z = 0.0;
        for ((v, s), c) in var_sum.iter_mut().zip(&se).zip(&drift) {
            *v += (config.eta * s).powi(2);
            if *v > 0.0 {
                z = f64::max(z, c.abs() / v.sqrt());
            }
        }
    }
    log.final_params = Some(DiagonalParams::new(diag_state(&w).0, diag_state(&w).1));
    log.final_weights = Some(w);
    log.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(log)
}

/// Iterates `xi1 <- xi1 - eta dL/dxi1`, `xi2 <- xi2 - eta dL/dxi2` from
/// `(0, sigma)` with label-integrated Monte-Carlo drifts.
pub fn train_diag(config: &TrainConfig) -> Result<TrainLog> {
    expect_regime(config, Regime::DiagDynamics)?;
    let start = Instant::now();
    let mut log = TrainLog::new(config);
    warn_threshold(config, &mut log);
    let mut p = DiagonalParams::new(0.0, config.sigma);
    for k in 0..=config.steps {
        let seed = mc::derive_seed(config.seed, &[STEP_STREAM, k as u64]);
        let g = match grad_diag(config.n, config.d, p, config.mc_samples_per_step, seed) {
            Ok(g) => g,
            Err(e) => {
                log.aborted = Some(format!("step {k}: {e}"));
                break;
            }
        };
        log.records.push(StepRecord {
            step: k,
            loss: g.loss.mean,
            loss_stderr: g.loss.stderr,
            xi1: Some(p.xi1),
            xi2: Some(p.xi2),
            dxi1: Some(g.dxi1),
            dxi2: Some(g.dxi2),
            ..Default::default()
        });
        if k < config.steps {
            p = DiagonalParams::new(p.xi1 - config.eta * g.dxi1, p.xi2 - config.eta * g.dxi2);
        }
    }
    log.final_weights = Some(p.expand(config.d));
    log.final_params = Some(p);
    log.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(log)
}

/// Training prompts for an SGD run.
pub fn sgd_dataset(config: &TrainConfig) -> Result<Vec<PromptSet<f64>>> {
    let size = config.sgd.as_ref().map_or(0, |s| s.dataset_size);
    let mut rng = mc::substream(config.seed, &[DATA_STREAM]);
    (0..size).map(|_| gen_training_prompt(config.n, config.d, &mut rng)).collect()
}

/// The shifted test set attached to an SGD run, if any.
pub fn sgd_test_set(config: &TrainConfig) -> Result<Option<Vec<PromptSet<f64>>>> {
    let Some(sgd) = &config.sgd else { return Ok(None) };
    let Some(delta) = sgd.test_delta else { return Ok(None) };
    let mut rng = mc::substream(config.seed, &[TEST_STREAM]);
    let set = (0..sgd.test_size).map(|_| gen_shifted_test(config.n, config.d, delta, &mut rng)).collect::<Result<_>>()?;
    Ok(Some(set))
}

/// Mini-batch SGD on a fixed training set.
pub fn train_sgd(config: &TrainConfig) -> Result<TrainLog> {
    expect_regime(config, Regime::Sgd)?;
    let data = sgd_dataset(config)?;
    let test = sgd_test_set(config)?;
    train_sgd_on(config, &data, test.as_deref())
}

/// Mini-batch SGD on `data`; the loss column is the mean over all of `data`
/// after each epoch, and `test` (if given) is scored after each epoch too.
pub fn train_sgd_on(config: &TrainConfig, data: &[PromptSet<f64>], test: Option<&[PromptSet<f64>]>) -> Result<TrainLog> {
    expect_regime(config, Regime::Sgd)?;
    let sgd = config.sgd.as_ref().expect("validated");
    if data.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let start = Instant::now();
    let d = config.d;
    let mut log = TrainLog::new(config);
    let mut rng = mc::substream(config.seed, &[INIT_STREAM]);
    let mut w = AttentionWeights::<f64>::zeros(d);
    for ((_, c), v) in w.matrix_mut().indexed_iter_mut() {
        let g: f64 = StandardNormal.sample(&mut rng);
        if c != d {
            *v = sgd.init_scale * g;
        }
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = Array2::<f64>::zeros((d + 2, d + 2));
    for epoch in 0..=sgd.epochs {
        let record = (|| -> Result<StepRecord> {
            let loss = mean_over(data, |p| sample_loss(p, &w))?;
            let mut rec = StepRecord { step: epoch, loss: loss.mean, loss_stderr: loss.stderr, ..Default::default() };
            if let Some(test) = test {
                let mse = mean_over(test, |p| squared_error(p, &w))?;
                rec.test_mse = Some(mse.mean);
                rec.test_mse_stderr = Some(mse.stderr);
            }
            Ok(rec)
        })();
        match record {
            Ok(rec) => log.records.push(rec),
            Err(e) => {
                log.aborted = Some(format!("epoch {epoch}: {e}"));
                break;
            }
        }
        if epoch == sgd.epochs {
            break;
        }
        order.shuffle(&mut mc::substream(config.seed, &[SHUFFLE_STREAM, epoch as u64]));
        let mut failed = None;
        for batch in order.chunks(sgd.batch_size) {
            grad.fill(0.0);
            for &i in batch {
                let p = &data[i];
                match direction(p, &w) {
                    Ok(dir) => {
                        let x = p.query().coords();
                        let rows = dir.u1.iter().copied().chain([dir.u2, dir.u3]);
                        for (mut row, u) in grad.rows_mut().into_iter().zip(rows) {
                            for (g, &xc) in row.iter_mut().zip(x) {
                                *g += u * xc;
                            }
                            row[d + 1] += u;
                        }
                    }
                    Err(e) => {
                        failed = Some(e);
                        break;
                    }
                }
            }
            if failed.is_some() {
                break;
            }
            let scale = sgd.lr / batch.len() as f64;
            w.matrix_mut().scaled_add(-scale, &grad);
        }
        if let Some(e) = failed {
            log.aborted = Some(format!("epoch {epoch}: {e}"));
            break;
        }
    }
    log.final_weights = Some(w);
    log.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(log)
}

/// Least-squares line `y = slope x + intercept` with its coefficient of
/// determination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 0.0 };
    LinearFit { slope, intercept: my - slope * mx, r2 }
}

/// Fit of `xi2` against `log k` over the steps `k >= 1`.
pub fn fit_xi2_log_steps(log: &TrainLog) -> LinearFit {
    let pts: Vec<(f64, f64)> =
        log.records.iter().filter(|r| r.step >= 1).filter_map(|r| r.xi2.map(|x| ((r.step as f64).ln(), x))).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    linear_fit(&xs, &ys)
}

/// Steps at which `xi1 > ratio * xi2`.
pub fn ratio_bound_violations(log: &TrainLog, ratio: f64) -> Vec<usize> {
    log.records
        .iter()
        .filter(|r| matches!((r.xi1, r.xi2), (Some(a), Some(b)) if a > ratio * b))
        .map(|r| r.step)
        .collect()
}

/// Steps `k` with `loss[k] > loss[k-1] + slack * stderr[k-1]`.
pub fn loss_increases(log: &TrainLog, slack: f64) -> Vec<usize> {
    log.records.windows(2).filter(|w| w[1].loss > w[0].loss + slack * w[0].loss_stderr).map(|w| w[1].step).collect()
}

/// Trailing moving average; entry `i` averages `xs[i+1-window ..= i]`, so the
/// output has `len - window + 1` entries.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || xs.len() < window {
        return Vec::new();
    }
    xs.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::loss_slice_xi1_zero;

    #[test]
    fn threshold_example() {
        let t = sigma_threshold(16, 8, 1.0).unwrap();
        assert!(t.root_term.is_none() && t.warning.is_some());
        assert!((t.value - 2.0 * 128f64.ln()).abs() < 1e-12);
        assert!((t.value - 9.704).abs() < 1e-3);
        let small = sigma_threshold(2, 2, 1.0).unwrap();
        assert!(small.value >= 2.0 * 4f64.ln());
        assert!(sigma_threshold(1, 8, 1.0).is_err());
        assert!(sigma_threshold(4, 8, 0.0).is_err());
    }

    #[test]
    fn threshold_grows_with_n() {
        let mut prev = 0.0;
        for n in 2..40 {
            let t = sigma_threshold(n, 4, 1.0).unwrap();
            assert!(t.log_term >= prev);
            prev = t.log_term;
        }
    }

    #[test]
    fn threshold_large_constant_dominates() {
        let t = sigma_threshold(4, 4, 100.0).unwrap();
        assert!((t.value - 200.0 * (1.0 - 1.0 / 16.0)).abs() < 1e-9);
    }

    fn small(regime: Regime) -> TrainConfig {
        TrainConfig { n: 4, d: 4, sigma: 3.0, eta: 0.5, steps: 5, mc_samples_per_step: 2000, regime, sgd: None, seed: 3 }
    }

    #[test]
    fn population_gd_starts_on_the_slice() {
        let log = train_population_gd(&small(Regime::PopulationGd)).unwrap();
        assert_eq!(log.records.len(), 6);
        let r0 = &log.records[0];
        assert_eq!((r0.xi1, r0.xi2), (Some(0.0), Some(3.0)));
        let slice = 0.5 * loss_slice_xi1_zero(4, 3.0).unwrap();
        assert!((r0.loss - slice).abs() < 4.0 * r0.loss_stderr, "{} vs {slice}", r0.loss);
    }

    #[test]
    fn diag_log_has_steps_plus_one_rows() {
        let log = train_diag(&small(Regime::DiagDynamics)).unwrap();
        assert_eq!(log.records.len(), 6);
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 7);
    }

    #[test]
    fn regime_mismatch_is_config_error() {
        assert!(matches!(train_diag(&small(Regime::PopulationGd)), Err(Error::Config(_))));
        assert!(matches!(train(&small(Regime::Sgd)), Err(Error::Config(_))));
        assert!("adam".parse::<Regime>().is_err());
        assert_eq!("sgd".parse::<Regime>().unwrap(), Regime::Sgd);
    }

    #[test]
    fn sgd_reduces_training_loss() {
        let mut cfg = small(Regime::Sgd);
        cfg.n = 8;
        cfg.sgd = Some(SgdConfig { dataset_size: 1000, batch_size: 32, epochs: 20, lr: 0.5, init_scale: 0.02, test_delta: Some(0.1), test_size: 100 });
        let log = train_sgd(&cfg).unwrap();
        assert_eq!(log.records.len(), 21);
        assert!(log.records[20].loss < log.records[0].loss);
        assert!(log.records.iter().all(|r| r.test_mse.is_some()));
    }

    #[test]
    fn sgd_batch_step_matches_closed_form() {
        let mut cfg = small(Regime::Sgd);
        cfg.sgd = Some(SgdConfig { dataset_size: 10, batch_size: 10, epochs: 1, lr: 0.1, init_scale: 0.3, test_delta: None, test_size: 0 });
        let data = sgd_dataset(&cfg).unwrap();
        let log = train_sgd_on(&cfg, &data, None).unwrap();
        let mut w0 = AttentionWeights::<f64>::zeros(4);
        let mut rng = mc::substream(cfg.seed, &[INIT_STREAM]);
        for ((_, c), v) in w0.matrix_mut().indexed_iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            if c != 4 {
                *v = 0.3 * g;
            }
        }
        let mut mean = Array2::<f64>::zeros((6, 6));
        for p in &data {
            mean += &crate::gradients::grad_sample(p, &w0).unwrap().to_matrix();
        }
        let expected = w0.matrix() - &(mean * (0.1 / 10.0));
        let got = log.final_weights.unwrap();
        for (a, b) in got.matrix().iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn fits_and_smoothing() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let fit = linear_fit(&xs, &[3.0, 5.0, 7.0, 9.0]);
        assert!((fit.slope - 2.0).abs() < 1e-12 && (fit.intercept - 1.0).abs() < 1e-12 && (fit.r2 - 1.0).abs() < 1e-12);
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.5, 2.5, 3.5]);
        assert!(moving_average(&[1.0], 2).is_empty());
    }

    #[test]
    fn rerun_is_bit_identical() {
        let cfg = small(Regime::DiagDynamics);
        let csv = |threads| {
            let log = mc::Workers::new(threads).unwrap().install(|| train_diag(&cfg).unwrap());
            let mut buf = Vec::new();
            log.write_csv(&mut buf).unwrap();
            buf
        };
        assert_eq!(csv(1), csv(4));
    }
}
