//! Checks on trained or hand-set models: the closed-form loss along
//! `xi1 = 0`, a nonconvexity certificate, rounding to class labels, and
//! evaluation on margin-separated shifted data.

use serde::Serialize;

use crate::data::{gen_training_prompt, one_nn, separation_margin, PromptSet};
use crate::error::{Error, Result};
use crate::mc::{self, chunked_over, McEstimate, Merge, Moments};
use crate::model::{forward, forward_diag, AttentionWeights, DiagonalParams};

const SLICE_STREAM: u64 = 0x736c_6963;
const GRID_STREAM: u64 = 0x6772_6964;

/// The computed prediction carries rounding error of a few ulps of the
/// labels, so bound comparisons allow that much on top of the bound.
const ROUNDOFF_ULPS: f64 = 64.0;

/// `1 / (N + exp(-xi2))` without overflow for very negative `xi2`.
fn inv_denominator(n: f64, xi2: f64) -> f64 {
    if xi2 >= 0.0 {
        1.0 / (n + (-xi2).exp())
    } else {
        let e = xi2.exp();
        e / (n * e + 1.0)
    }
}

fn check_n(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidDimension("need N >= 1".into()));
    }
    Ok(n as f64)
}

/// `E[(y_hat - y_nn)^2]` at `xi1 = 0` with `+-1` labels:
/// `1 - 2/(N + e^-xi2) + N/(N + e^-xi2)^2`. Not halved.
pub fn loss_slice_xi1_zero(n: usize, xi2: f64) -> Result<f64> {
    let nf = check_n(n)?;
    let s = inv_denominator(nf, xi2);
    Ok(1.0 - 2.0 * s + nf * s * s)
}

/// Derivative in `xi2` of the halved slice, `-e^(-2 xi2) / (N + e^-xi2)^3`.
pub fn loss_slice_derivative(n: usize, xi2: f64) -> Result<f64> {
    let nf = check_n(n)?;
    let s = inv_denominator(nf, xi2);
    // e^-xi2 * s, computed as 1 - N s to stay finite.
    let es = 1.0 - nf * s;
    Ok(-es * es * s)
}

/// Monte-Carlo `E[(y_hat - y_nn)^2]` at `xi1 = 0` over training prompts.
pub fn slice_monte_carlo(n: usize, d: usize, xi2: f64, samples: usize, seed: u64) -> Result<McEstimate> {
    gen_training_prompt::<f64, _>(n, d, &mut mc::substream(seed, &[]))?;
    let params = DiagonalParams::new(0.0, xi2);
    let acc = mc::chunked(samples, seed, &[SLICE_STREAM], Moments::default, |acc, rng, count| {
        for _ in 0..count {
            let p: PromptSet<f64> = gen_training_prompt(n, d, rng).expect("sizes checked");
            let r = forward_diag(&p, &params).expect("xi1 = 0 keeps logits finite") - one_nn(&p).label;
            acc.push(r * r);
        }
    });
    Ok(acc.estimate())
}

/// Outcome of probing the slope of the halved loss along `xi1 = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonconvexityReport {
    pub n: usize,
    /// `(xi2, dL/dxi2)` pairs, ends first.
    pub slopes: Vec<(f64, f64)>,
    pub negative_somewhere: bool,
    pub vanishing_ends: bool,
    /// A convex function of one variable has a nondecreasing slope; a slope
    /// that is negative somewhere yet tends to zero at both ends cannot be.
    pub nonconvex: bool,
}

pub fn nonconvexity_certificate(n: usize) -> Result<NonconvexityReport> {
    let ends = [-30.0, 30.0];
    let inner = [-5.0, 0.0, 5.0];
    let slopes = ends.iter().chain(&inner).map(|&x| loss_slice_derivative(n, x).map(|s| (x, s))).collect::<Result<Vec<_>>>()?;
    let vanishing_ends = slopes[..2].iter().all(|(_, s)| s.abs() < 1e-6);
    let negative_somewhere = slopes[2..].iter().any(|(_, s)| *s < 0.0);
    Ok(NonconvexityReport { n, slopes, negative_somewhere, vanishing_ends, nonconvex: negative_somewhere && vanishing_ends })
}

/// Nearest integer with halves rounded up: with `frac = t - floor(t)`,
/// `frac >= 1/2` gives `ceil(t)`, otherwise `floor(t)`.
pub fn round_label(t: f64) -> Result<i64> {
    if !t.is_finite() {
        return Err(Error::Domain(format!("cannot round {t}")));
    }
    let fl = t.floor();
    let r = if t - fl >= 0.5 { t.ceil() } else { fl };
    if r.abs() > 9.0e15 {
        return Err(Error::Domain(format!("{t} is outside the exactly representable integers")));
    }
    Ok(r as i64)
}

/// A model to evaluate: full weights or diagonal parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    Weights(AttentionWeights<f64>),
    Diag(DiagonalParams<f64>),
}

impl Predictor {
    pub fn predict(&self, prompt: &PromptSet<f64>) -> Result<f64> {
        match self {
            Predictor::Weights(w) => forward(prompt, w),
            Predictor::Diag(p) => forward_diag(prompt, p),
        }
    }

    /// Diagonal parameters, when the model is of that form.
    pub fn diag(&self) -> Option<DiagonalParams<f64>> {
        match self {
            Predictor::Diag(p) => Some(*p),
            Predictor::Weights(_) => None,
        }
    }
}

/// Deviation bound `2 R N exp(-xi1 gap) + R exp(xi1 - xi2)` on `|y_hat - y_nn|`.
pub fn deviation_bound(p: &DiagonalParams<f64>, r: f64, n: usize, gap: f64) -> f64 {
    2.0 * r * n as f64 * (-p.xi1 * gap).exp() + r * (p.xi1 - p.xi2).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftReport {
    /// `mean (y_hat - y_nn)^2`.
    pub mse_vs_1nn: f64,
    pub mse_stderr: f64,
    pub mismatch_rate: Option<f64>,
    pub mismatches: Option<u64>,
    /// `max |y|` over all labels.
    pub r_observed: f64,
    /// Squared-distance separation the bound is evaluated at.
    pub delta_used: f64,
    /// Smallest gap to any competitor.
    pub min_margin_all: f64,
    /// Smallest gap to a differently labeled competitor.
    pub min_margin_label_mismatch: f64,
    pub n_instances: u64,
    pub max_abs_deviation: f64,
    pub bound: Option<BoundReport>,
}

/// Deviation bound for diagonal models. The squared-distance gap `delta`
/// is an inner-product gap of `delta / 2`; the `literal` fields use `delta`
/// itself in the exponent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub bound_at_delta: f64,
    pub bound_literal_at_delta: f64,
    /// Instances with `|y_hat - y_nn|` below the bound at their own
    /// label-mismatch margin.
    pub holds: u64,
    pub holds_literal: u64,
    /// Instances whose own-margin bound is below `1/2`.
    pub below_half: u64,
    pub below_half_literal: u64,
}

#[derive(Default)]
struct ShiftAcc {
    se: Moments,
    mismatches: u64,
    max_dev: f64,
    holds: u64,
    holds_literal: u64,
    below_half: u64,
    below_half_literal: u64,
    failure: Option<String>,
}

impl Merge for ShiftAcc {
    fn merge(&mut self, o: Self) {
        self.se.merge(o.se);
        self.mismatches += o.mismatches;
        self.max_dev = self.max_dev.max(o.max_dev);
        self.holds += o.holds;
        self.holds_literal += o.holds_literal;
        self.below_half += o.below_half;
        self.below_half_literal += o.below_half_literal;
        if self.failure.is_none() {
            self.failure = o.failure;
        }
    }
}

/// Scores a model against the 1-NN label on `instances`, evaluating the
/// deviation bound at the smallest observed label-mismatch margin.
pub fn evaluate_shift(model: &Predictor, instances: &[PromptSet<f64>], classify: bool) -> Result<ShiftReport> {
    evaluate_shift_at(model, instances, classify, None)
}

/// As [`evaluate_shift`], with the bound's `delta` fixed by the caller.
pub fn evaluate_shift_at(model: &Predictor, instances: &[PromptSet<f64>], classify: bool, delta: Option<f64>) -> Result<ShiftReport> {
    if instances.is_empty() {
        return Err(Error::Precondition("no test instances".into()));
    }
    let r_observed = instances.iter().flat_map(|p| p.ys()).fold(0.0f64, |m, y| m.max(y.abs()));
    let margins: Vec<(f64, f64)> = instances.iter().map(|p| (separation_margin(p, false), separation_margin(p, true))).collect();
    let min_all = margins.iter().map(|m| m.0).fold(f64::INFINITY, f64::min);
    let min_mismatch = margins.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
    let delta_used = delta.unwrap_or(min_mismatch);
    let diag = model.diag();
    let items: Vec<(&PromptSet<f64>, f64)> = instances.iter().zip(margins.iter().map(|m| m.1)).collect();
    let acc = chunked_over(&items, ShiftAcc::default, |acc, &(p, margin)| {
        let y_hat = match model.predict(p) {
            Ok(v) => v,
            Err(e) => {
                acc.failure.get_or_insert(e.to_string());
                return;
            }
        };
        let target = one_nn(p).label;
        let dev = (y_hat - target).abs();
        acc.se.push(dev * dev);
        acc.max_dev = acc.max_dev.max(dev);
        if classify {
            match round_label(y_hat) {
                Ok(c) if c as f64 == target => {}
                _ => acc.mismatches += 1,
            }
        }
        if let Some(params) = &diag {
            let b = deviation_bound(params, r_observed, p.n(), margin / 2.0);
            let bl = deviation_bound(params, r_observed, p.n(), margin);
            let ulps = ROUNDOFF_ULPS * f64::EPSILON * r_observed.max(1.0);
            acc.holds += u64::from(dev <= b + ulps);
            acc.holds_literal += u64::from(dev <= bl + ulps);
            acc.below_half += u64::from(b < 0.5);
            acc.below_half_literal += u64::from(bl < 0.5);
        }
    });
    if let Some(msg) = acc.failure {
        return Err(Error::NumericOverflow(msg));
    }
    let n_instances = acc.se.n;
    let n_max = instances.iter().map(PromptSet::n).max().unwrap_or(0);
    Ok(ShiftReport {
        mse_vs_1nn: acc.se.mean,
        mse_stderr: acc.se.stderr(),
        mismatch_rate: classify.then(|| acc.mismatches as f64 / n_instances as f64),
        mismatches: classify.then_some(acc.mismatches),
        r_observed,
        delta_used,
        min_margin_all: min_all,
        min_margin_label_mismatch: min_mismatch,
        n_instances,
        max_abs_deviation: acc.max_dev,
        bound: diag.map(|p| BoundReport {
            bound_at_delta: deviation_bound(&p, r_observed, n_max, delta_used / 2.0),
            bound_literal_at_delta: deviation_bound(&p, r_observed, n_max, delta_used),
            holds: acc.holds,
            holds_literal: acc.holds_literal,
            below_half: acc.below_half,
            below_half_literal: acc.below_half_literal,
        }),
    })
}

/// `E[(y_hat - y_nn)^2]` over a `xi1 x xi2` grid, every point scored on the
/// same training prompts. Entry `[i][j]` is at `(xi1s[i], xi2s[j])`.
pub fn loss_grid(n: usize, d: usize, xi1s: &[f64], xi2s: &[f64], samples: usize, seed: u64) -> Result<Vec<Vec<McEstimate>>> {
    let mut rng = mc::substream(seed, &[GRID_STREAM]);
    let prompts: Vec<PromptSet<f64>> = (0..samples).map(|_| gen_training_prompt(n, d, &mut rng)).collect::<Result<_>>()?;
    let labels: Vec<f64> = prompts.iter().map(|p| one_nn(p).label).collect();
    let items: Vec<(&PromptSet<f64>, f64)> = prompts.iter().zip(labels).collect();
    xi1s.iter()
        .map(|&a| {
            xi2s.iter()
                .map(|&b| {
                    let params = DiagonalParams::new(a, b);
                    struct Acc(Moments, Option<String>);
                    impl Merge for Acc {
                        fn merge(&mut self, o: Self) {
                            self.0.merge(o.0);
                            if self.1.is_none() {
                                self.1 = o.1;
                            }
                        }
                    }
                    let acc = chunked_over(&items, || Acc(Moments::default(), None), |acc, (p, y)| match forward_diag(p, &params) {
                        Ok(v) => acc.0.push((v - y).powi(2)),
                        Err(e) => {
                            acc.1.get_or_insert(e.to_string());
                        }
                    });
                    match acc.1 {
                        Some(m) => Err(Error::NumericOverflow(m)),
                        None => Ok(acc.0.estimate()),
                    }
                })
                .collect()
        })
        .collect()
}
