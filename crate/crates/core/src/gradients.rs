//! Gradients of the per-prompt squared error `1/2 (y_hat - y_nn)^2` with
//! respect to the attention weights, a finite-difference oracle, and
//! Monte-Carlo estimates of their population means.

use ndarray::{s, Array1, Array2};

use crate::data::{gen_training_prompt, one_nn, PromptSet};
use crate::error::{Error, Result};
use crate::geometry::sample_sphere;
use crate::mc::{self, McEstimate, Merge, Moments, VecMoments};
use crate::model::{attention_q, forward, q_diag_from_inner, AttentionWeights, DiagonalParams};
use crate::scalar::{dot, Scalar};

const POPULATION_STREAM: u64 = 0x0070_6f70;
const DIAG_STREAM: u64 = 0x6469_6167;

/// Gradient restricted to the blocks that can influence the output. The
/// label-slot column of `W` has no entry here; its gradient is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGradient<T> {
    pub g11: Array2<T>,
    pub g21: Array1<T>,
    pub g31: Array1<T>,
    pub g13: Array1<T>,
    pub g23: T,
    pub g33: T,
    pub sample_count: u64,
}

impl<T: Scalar> BlockGradient<T> {
    pub fn zeros(d: usize) -> Self {
        Self {
            g11: Array2::zeros((d, d)),
            g21: Array1::zeros(d),
            g31: Array1::zeros(d),
            g13: Array1::zeros(d),
            g23: T::zero(),
            g33: T::zero(),
            sample_count: 0,
        }
    }

    pub fn d(&self) -> usize {
        self.g21.len()
    }

    /// Full `(d+2) x (d+2)` matrix with a zero label-slot column.
    pub fn to_matrix(&self) -> Array2<T> {
        let d = self.d();
        let mut m = Array2::zeros((d + 2, d + 2));
        m.slice_mut(s![..d, ..d]).assign(&self.g11);
        m.slice_mut(s![d, ..d]).assign(&self.g21);
        m.slice_mut(s![d + 1, ..d]).assign(&self.g31);
        m.slice_mut(s![..d, d + 1]).assign(&self.g13);
        m[[d, d + 1]] = self.g23;
        m[[d + 1, d + 1]] = self.g33;
        m
    }

    /// Reads the active blocks of a full matrix, ignoring the label-slot column.
    pub fn from_matrix(m: &Array2<T>, sample_count: u64) -> Self {
        let d = m.nrows() - 2;
        Self {
            g11: m.slice(s![..d, ..d]).to_owned(),
            g21: m.slice(s![d, ..d]).to_owned(),
            g31: m.slice(s![d + 1, ..d]).to_owned(),
            g13: m.slice(s![..d, d + 1]).to_owned(),
            g23: m[[d, d + 1]],
            g33: m[[d + 1, d + 1]],
            sample_count,
        }
    }

    /// Active entries in a fixed order: `g11` row-major, `g21`, `g31`, `g13`,
    /// `g23`, `g33`.
    pub fn to_flat(&self) -> Vec<T> {
        let mut v: Vec<T> = self.g11.iter().copied().collect();
        v.extend(self.g21.iter().chain(&self.g31).chain(&self.g13).copied());
        v.extend([self.g23, self.g33]);
        v
    }

    pub fn from_flat(d: usize, v: &[T], sample_count: u64) -> Self {
        assert_eq!(v.len(), flat_len(d), "flat gradient length");
        let (a, rest) = v.split_at(d * d);
        let (b, rest) = rest.split_at(d);
        let (c, rest) = rest.split_at(d);
        let (e, rest) = rest.split_at(d);
        Self {
            g11: Array2::from_shape_vec((d, d), a.to_vec()).expect("d x d"),
            g21: Array1::from(b.to_vec()),
            g31: Array1::from(c.to_vec()),
            g13: Array1::from(e.to_vec()),
            g23: rest[0],
            g33: rest[1],
            sample_count,
        }
    }

    /// Frobenius norms of `(g11, g21, g31, g13, g23, g33)`.
    pub fn block_norms(&self) -> [f64; 6] {
        let norm = |it: &mut dyn Iterator<Item = &T>| it.map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
        [
            norm(&mut self.g11.iter()),
            norm(&mut self.g21.iter()),
            norm(&mut self.g31.iter()),
            norm(&mut self.g13.iter()),
            self.g23.as_f64().abs(),
            self.g33.as_f64().abs(),
        ]
    }
}

/// Number of active gradient entries for dimension `d`.
pub fn flat_len(d: usize) -> usize {
    d * d + 3 * d + 2
}

/// The gradient of one prompt is the outer product `u (x_query, 0, 1)^T`;
/// this holds `u` split as (point rows, label row, indicator row) plus the
/// prompt's loss.
pub(crate) struct Direction<T> {
    pub u1: Vec<T>,
    pub u2: T,
    pub u3: T,
    pub loss: T,
}

pub(crate) fn direction<T: Scalar>(prompt: &PromptSet<T>, w: &AttentionWeights<T>) -> Result<Direction<T>> {
    let d = prompt.d();
    let n = prompt.n();
    let q = attention_q(prompt, w)?;
    let ys = prompt.ys();
    let target = one_nn(prompt).label;
    let y_hat = q.read_out(ys);
    let resid = y_hat - target;
    let x = prompt.query().coords();
    let q_query = q.q[n];

    // Attention-weighted means of the keys, with and without label weights.
    let mut xbar_y = vec![T::zero(); d];
    let mut xbar: Vec<T> = x.iter().map(|&c| q_query * c).collect();
    let mut second = T::zero();
    for ((xj, &yj), &qj) in prompt.xs().iter().zip(ys).zip(&q.q) {
        for ((a, b), &c) in xbar_y.iter_mut().zip(xbar.iter_mut()).zip(xj.coords()) {
            *a += qj * yj * c;
            *b += qj * c;
        }
        second += qj * yj * yj;
    }
    Ok(Direction {
        u1: xbar_y.iter().zip(&xbar).map(|(&a, &b)| resid * (a - y_hat * b)).collect(),
        u2: resid * (second - y_hat * y_hat),
        u3: -resid * y_hat * q_query,
        loss: T::of(0.5) * resid * resid,
    })
}

/// Closed-form per-prompt gradient together with the prompt's loss.
pub fn grad_sample_with_loss<T: Scalar>(prompt: &PromptSet<T>, w: &AttentionWeights<T>) -> Result<(BlockGradient<T>, T)> {
    let dir = direction(prompt, w)?;
    let d = prompt.d();
    let xq = Array1::from(prompt.query().coords().to_vec());
    let g13 = Array1::from(dir.u1);
    let g11 = Array2::from_shape_fn((d, d), |(i, k)| g13[i] * xq[k]);
    let grad = BlockGradient {
        g11,
        g21: xq.mapv(|c| dir.u2 * c),
        g31: xq.mapv(|c| dir.u3 * c),
        g13,
        g23: dir.u2,
        g33: dir.u3,
        sample_count: 1,
    };
    Ok((grad, dir.loss))
}

pub fn grad_sample<T: Scalar>(prompt: &PromptSet<T>, w: &AttentionWeights<T>) -> Result<BlockGradient<T>> {
    grad_sample_with_loss(prompt, w).map(|(g, _)| g)
}

/// `1/2 (y_hat - y_nn)^2` for one prompt.
pub fn sample_loss<T: Scalar>(prompt: &PromptSet<T>, w: &AttentionWeights<T>) -> Result<T> {
    let r = forward(prompt, w)? - one_nn(prompt).label;
    Ok(T::of(0.5) * r * r)
}

/// Central differences of [`sample_loss`] in every active entry.
pub fn grad_fd<T: Scalar>(prompt: &PromptSet<T>, w: &AttentionWeights<T>, eps: f64) -> Result<BlockGradient<T>> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Domain(format!("finite-difference step {eps} outside [1e-7, 1e-3]")));
    }
    let d = w.d();
    let h = T::of(eps);
    let mut out = Array2::zeros((d + 2, d + 2));
    let mut probe = w.clone();
    for r in 0..d + 2 {
        for c in 0..d + 2 {
            if !w.is_active(r, c) {
                continue;
            }
            let base = w.matrix()[[r, c]];
            probe.matrix_mut()[[r, c]] = base + h;
            let up = sample_loss(prompt, &probe)?;
            probe.matrix_mut()[[r, c]] = base - h;
            let down = sample_loss(prompt, &probe)?;
            probe.matrix_mut()[[r, c]] = base;
            out[[r, c]] = (up - down) / (h + h);
        }
    }
    Ok(BlockGradient::from_matrix(&out, 1))
}

/// Monte-Carlo mean of the per-prompt gradient with per-entry standard errors.
#[derive(Debug, Clone)]
pub struct PopulationGradient {
    pub mean: BlockGradient<f64>,
    pub stderr: BlockGradient<f64>,
    /// `1/2 E[(y_hat - y_nn)^2]` on the same draws.
    pub loss: McEstimate,
}

impl PopulationGradient {
    /// `trace(E g11) / d`.
    pub fn diagonal_coefficient(&self) -> f64 {
        self.mean.g11.diag().sum() / self.mean.d() as f64
    }
}

struct GradAcc {
    grad: VecMoments,
    loss: Moments,
    failure: Option<String>,
}

impl Merge for GradAcc {
    fn merge(&mut self, other: Self) {
        self.grad.merge(other.grad);
        self.loss.merge(other.loss);
        if self.failure.is_none() {
            self.failure = other.failure;
        }
    }
}

/// Gradient averaged over fresh training prompts.
pub fn grad_population<T: Scalar>(n: usize, d: usize, w: &AttentionWeights<T>, mc_samples: usize, seed: u64) -> Result<PopulationGradient> {
    grad_population_with(n, d, w, mc_samples, seed, |p| p)
}

/// As [`grad_population`], with every drawn prompt passed through `map`
/// first (e.g. a fixed rotation).
pub fn grad_population_with<T, F>(
    n: usize,
    d: usize,
    w: &AttentionWeights<T>,
    mc_samples: usize,
    seed: u64,
    map: F,
) -> Result<PopulationGradient>
where
    T: Scalar,
    F: Fn(PromptSet<T>) -> PromptSet<T> + Sync,
{
    if mc_samples == 0 {
        return Err(Error::Precondition("mc_samples must be >= 1".into()));
    }
    if w.d() != d {
        return Err(Error::InvalidDimension(format!("weights have d = {}, requested d = {d}", w.d())));
    }
    gen_training_prompt::<T, _>(n, d, &mut mc::substream(seed, &[]))?;
    let init = || GradAcc { grad: VecMoments::new(flat_len(d)), loss: Moments::default(), failure: None };
    let acc = mc::chunked(mc_samples, seed, &[POPULATION_STREAM], init, |acc, rng, count| {
        for _ in 0..count {
            let prompt = map(gen_training_prompt(n, d, rng).expect("sizes checked"));
            match grad_sample_with_loss(&prompt, w) {
                Ok((g, loss)) => {
                    let flat: Vec<f64> = g.to_flat().iter().map(|v| v.as_f64()).collect();
                    acc.grad.push(&flat);
                    acc.loss.push(loss.as_f64());
                }
                Err(e) => {
                    acc.failure.get_or_insert(e.to_string());
                }
            }
        }
    });
    if let Some(msg) = acc.failure {
        return Err(Error::NumericOverflow(msg));
    }
    let count = acc.grad.count();
    Ok(PopulationGradient {
        mean: BlockGradient::from_flat(d, &acc.grad.means(), count),
        stderr: BlockGradient::from_flat(d, &acc.grad.stderrs(), count),
        loss: acc.loss.estimate(),
    })
}

/// Label-integrated population drifts at a diagonal point.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DiagGradient {
    /// `dL/d(W11 diagonal entry) = trace(E g11) / d`.
    pub dxi1: f64,
    /// `dL/dxi2 = -E g33`.
    pub dxi2: f64,
    pub stderr1: f64,
    pub stderr2: f64,
    /// `1/2 E[(y_hat - y_nn)^2]`.
    pub loss: McEstimate,
    /// `E[q_nn q_query^2]`, the floor on `-dxi2`.
    pub xi2_floor: McEstimate,
    /// `E[-dxi2 - q_nn q_query^2]`, estimated per draw.
    pub xi2_floor_gap: McEstimate,
    /// `d (-dxi1) + 2 (-dxi2)`, estimated per draw.
    pub coupled: McEstimate,
}

/// Per-draw label-integrated terms from the inner products `tau` of the
/// context with the query.
struct DiagTerms {
    dxi1: f64,
    dxi2: f64,
    loss: f64,
    floor: f64,
}

fn diag_terms(tau: &[f64], p: &DiagonalParams<f64>, d: usize) -> Result<DiagTerms> {
    let q = q_diag_from_inner(tau, p)?;
    let n = tau.len();
    let nn = (1..n).fold(0, |best, j| if tau[j] > tau[best] { j } else { best });
    let (qs, qq) = (q.q[nn], q.q[n]);
    let sum_sq: f64 = q.q[..n].iter().map(|v| v * v).sum();
    let sum_sq_tau: f64 = q.q[..n].iter().zip(tau).map(|(v, t)| v * v * t).sum();
    let mean_tau = dot(&q.q[..n], tau) + qq;
    let trace = sum_sq_tau - qs * tau[nn] - (sum_sq - qs) * mean_tau;
    Ok(DiagTerms {
        dxi1: trace / d as f64,
        dxi2: -qq * (qs - sum_sq),
        loss: 0.5 * (1.0 + sum_sq - 2.0 * qs),
        floor: qs * qq * qq,
    })
}

/// Drifts of `(xi1, xi2)` from the inner products alone; with independent
/// `+-1` labels the label moments are `E[y_i y_j] = [i = j]`.
pub fn grad_diag(n: usize, d: usize, p: DiagonalParams<f64>, mc_samples: usize, seed: u64) -> Result<DiagGradient> {
    if mc_samples == 0 {
        return Err(Error::Precondition("mc_samples must be >= 1".into()));
    }
    if n == 0 || d < 2 {
        return Err(Error::InvalidDimension(format!("N = {n}, d = {d}")));
    }
    let init = || GradAcc { grad: VecMoments::new(5), loss: Moments::default(), failure: None };
    let acc = mc::chunked(mc_samples, seed, &[DIAG_STREAM], init, |acc, rng, count| {
        let mut tau = vec![0.0; n];
        for _ in 0..count {
            let query = sample_sphere::<f64, _>(d, rng).expect("d checked");
            for t in tau.iter_mut() {
                *t = sample_sphere::<f64, _>(d, rng).expect("d checked").dot(&query);
            }
            match diag_terms(&tau, &p, d) {
                Ok(t) => {
                    acc.grad.push(&[t.dxi1, t.dxi2, t.floor, -t.dxi2 - t.floor, -(d as f64) * t.dxi1 - 2.0 * t.dxi2]);
                    acc.loss.push(t.loss);
                }
                Err(e) => {
                    acc.failure.get_or_insert(e.to_string());
                }
            }
        }
    });
    if let Some(msg) = acc.failure {
        return Err(Error::NumericOverflow(msg));
    }
    let e: Vec<McEstimate> = acc.grad.entries.iter().map(Moments::estimate).collect();
    Ok(DiagGradient {
        dxi1: e[0].mean,
        dxi2: e[1].mean,
        stderr1: e[0].stderr,
        stderr2: e[1].stderr,
        loss: acc.loss.estimate(),
        xi2_floor: e[2],
        xi2_floor_gap: e[3],
        coupled: e[4],
    })
}
