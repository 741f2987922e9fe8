//! In-context prompts, the brute-force 1-NN oracle, and dataset files.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{sample_sphere, Rotation, UnitVector};
use crate::scalar::{sq_dist, Scalar};

/// `N` labeled points on the sphere plus one unlabeled query.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet<T> {
    xs: Vec<UnitVector<T>>,
    ys: Vec<T>,
    query: UnitVector<T>,
}

impl<T: Scalar> PromptSet<T> {
    pub fn new(xs: Vec<UnitVector<T>>, ys: Vec<T>, query: UnitVector<T>) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::InvalidDimension("prompt needs N >= 1 context points".into()));
        }
        if xs.len() != ys.len() {
            return Err(Error::InvalidDimension(format!("{} points but {} labels", xs.len(), ys.len())));
        }
        let d = query.dim();
        if let Some(bad) = xs.iter().find(|x| x.dim() != d) {
            return Err(Error::InvalidDimension(format!("point of dimension {} in a d = {d} prompt", bad.dim())));
        }
        Ok(Self { xs, ys, query })
    }

    pub fn n(&self) -> usize {
        self.xs.len()
    }

    pub fn d(&self) -> usize {
        self.query.dim()
    }

    pub fn xs(&self) -> &[UnitVector<T>] {
        &self.xs
    }

    pub fn ys(&self) -> &[T] {
        &self.ys
    }

    pub fn query(&self) -> &UnitVector<T> {
        &self.query
    }

    /// `<x_j, query>` for every context point.
    pub fn inner_products(&self) -> Vec<T> {
        self.xs.iter().map(|x| x.dot(&self.query)).collect()
    }

    pub fn with_labels(&self, ys: Vec<T>) -> Result<Self> {
        Self::new(self.xs.clone(), ys, self.query.clone())
    }

    /// Reorders the context so that position `i` holds old point `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n(), "permutation length");
        Self {
            xs: perm.iter().map(|&i| self.xs[i].clone()).collect(),
            ys: perm.iter().map(|&i| self.ys[i]).collect(),
            query: self.query.clone(),
        }
    }

    /// Negates every point and the query.
    pub fn negated(&self) -> Self {
        Self {
            xs: self.xs.iter().map(UnitVector::negated).collect(),
            ys: self.ys.clone(),
            query: self.query.negated(),
        }
    }

    pub fn rotated(&self, rot: &Rotation) -> Self {
        Self {
            xs: self.xs.iter().map(|x| rot.apply(x)).collect(),
            ys: self.ys.clone(),
            query: rot.apply(&self.query),
        }
    }

    pub fn cast<U: Scalar>(&self) -> PromptSet<U> {
        PromptSet {
            xs: self.xs.iter().map(UnitVector::cast).collect(),
            ys: self.ys.iter().map(|y| U::of(y.as_f64())).collect(),
            query: self.query.cast(),
        }
    }
}

/// Nearest context point to the query. `index` is 0-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NnResult<T> {
    pub index: usize,
    pub label: T,
    /// Squared-distance gap to the closest point carrying a different label,
    /// `+inf` when every label agrees.
    pub margin: T,
}

/// Exhaustive squared-distance scan; ties go to the lowest index.
pub fn one_nn<T: Scalar>(prompt: &PromptSet<T>) -> NnResult<T> {
    let q = prompt.query.coords();
    let dist: Vec<T> = prompt.xs.iter().map(|x| sq_dist(x.coords(), q)).collect();
    let mut index = 0;
    for (j, &dj) in dist.iter().enumerate().skip(1) {
        if dj < dist[index] {
            index = j;
        }
    }
    let label = prompt.ys[index];
    let margin = competitor_gap(&dist, index, |j| prompt.ys[j] != label);
    NnResult { index, label, margin }
}

/// The same neighbor found as the largest inner product with the query.
pub fn one_nn_by_inner_product<T: Scalar>(prompt: &PromptSet<T>) -> usize {
    let tau = prompt.inner_products();
    let mut index = 0;
    for (j, &t) in tau.iter().enumerate().skip(1) {
        if t > tau[index] {
            index = j;
        }
    }
    index
}

fn competitor_gap<T: Scalar>(dist: &[T], nn: usize, competes: impl Fn(usize) -> bool) -> T {
    dist.iter()
        .enumerate()
        .filter(|&(j, _)| j != nn && competes(j))
        .map(|(_, &dj)| dj - dist[nn])
        .fold(T::infinity(), T::min)
}

/// Largest `delta` such that every competitor of the nearest neighbor is at
/// least `delta` farther (in squared distance) from the query. With
/// `restrict_to_label_mismatch` only differently labeled points compete.
pub fn separation_margin<T: Scalar>(prompt: &PromptSet<T>, restrict_to_label_mismatch: bool) -> T {
    let nn = one_nn(prompt);
    if restrict_to_label_mismatch {
        return nn.margin;
    }
    let q = prompt.query.coords();
    let dist: Vec<T> = prompt.xs.iter().map(|x| sq_dist(x.coords(), q)).collect();
    competitor_gap(&dist, nn.index, |_| true)
}

/// Label law for generated prompts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LabelDist {
    /// Uniform on `{+1, -1}`.
    Rademacher,
    /// Standard normal.
    Gaussian,
    /// Uniform on the integers `low..=high`.
    UniformInt { low: i64, high: i64 },
}

impl LabelDist {
    pub fn sample<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        match *self {
            LabelDist::Rademacher => T::of(if rng.random::<bool>() { 1.0 } else { -1.0 }),
            LabelDist::Gaussian => T::of(rng.sample::<f64, _>(StandardNormal)),
            LabelDist::UniformInt { low, high } => T::of(rng.random_range(low..=high) as f64),
        }
    }

    /// `max |y|` over the support, when bounded.
    pub fn bound(&self) -> Option<f64> {
        match *self {
            LabelDist::Rademacher => Some(1.0),
            LabelDist::Gaussian => None,
            LabelDist::UniformInt { low, high } => Some(low.unsigned_abs().max(high.unsigned_abs()) as f64),
        }
    }
}

fn check_sizes(n: usize, d: usize, min_n: usize) -> Result<()> {
    if n < min_n {
        return Err(Error::InvalidDimension(format!("N = {n}, need N >= {min_n}")));
    }
    if d < 2 {
        return Err(Error::InvalidDimension(format!("d = {d}, need d >= 2")));
    }
    Ok(())
}

/// Training prompt: points and query uniform on the sphere, labels uniform
/// on `{+1, -1}` and independent of the points.
pub fn gen_training_prompt<T: Scalar, R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Result<PromptSet<T>> {
    check_sizes(n, d, 1)?;
    let xs = (0..n).map(|_| sample_sphere(d, rng)).collect::<Result<Vec<_>>>()?;
    let ys = (0..n).map(|_| LabelDist::Rademacher.sample(rng)).collect();
    let query = sample_sphere(d, rng)?;
    PromptSet::new(xs, ys, query)
}

/// Margin-separated test prompt with standard normal labels.
pub fn gen_shifted_test<T: Scalar, R: Rng + ?Sized>(n: usize, d: usize, delta: f64, rng: &mut R) -> Result<PromptSet<T>> {
    gen_shifted_test_with(n, d, delta, LabelDist::Gaussian, rng)
}

/// Margin-separated test prompt: the query is a copy of a uniformly chosen
/// context point, and every other point within squared distance `delta` of
/// it is reflected through the origin. Reflection maps squared distance `s`
/// to `4 - s`, so for `delta <= 2` the result keeps every competitor at
/// squared distance at least `delta`.
pub fn gen_shifted_test_with<T: Scalar, R: Rng + ?Sized>(
    n: usize,
    d: usize,
    delta: f64,
    labels: LabelDist,
    rng: &mut R,
) -> Result<PromptSet<T>> {
    check_sizes(n, d, 2)?;
    if !(delta > 0.0 && delta <= 2.0) {
        return Err(Error::Config(format!("separation delta = {delta} must lie in (0, 2]")));
    }
    let mut xs = (0..n).map(|_| sample_sphere::<T, _>(d, rng)).collect::<Result<Vec<_>>>()?;
    let ys = (0..n).map(|_| labels.sample(rng)).collect();
    let nn = rng.random_range(0..n);
    let query = xs[nn].clone();
    for (j, x) in xs.iter_mut().enumerate() {
        if j != nn && sq_dist(x.coords(), query.coords()).as_f64() <= delta {
            *x = x.negated();
        }
    }
    let prompt = PromptSet::new(xs, ys, query)?;
    debug_assert!(separation_margin(&prompt, false).as_f64() >= delta - 1e-12);
    Ok(prompt)
}

/// Shuffles a prompt's context order.
pub fn shuffle_context<T: Scalar, R: Rng + ?Sized>(prompt: &PromptSet<T>, rng: &mut R) -> (PromptSet<T>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..prompt.n()).collect();
    perm.shuffle(rng);
    (prompt.permuted(&perm), perm)
}

/// Writes prompts as one CSV row per token:
/// `instance_id, token_index, x_1..x_d, y, is_query`. The query row comes last
/// in each instance and carries `y = 0`.
pub fn write_dataset<T: Scalar, W: Write>(out: W, prompts: &[PromptSet<T>]) -> Result<()> {
    let d = match prompts.first() {
        Some(p) => p.d(),
        None => return Err(Error::Precondition("empty dataset".into())),
    };
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["instance_id".to_string(), "token_index".to_string()];
    header.extend((1..=d).map(|i| format!("x_{i}")));
    header.extend(["y".to_string(), "is_query".to_string()]);
    w.write_record(&header)?;
    for (id, p) in prompts.iter().enumerate() {
        if p.d() != d {
            return Err(Error::InvalidDimension("mixed dimensions in one dataset".into()));
        }
        let tokens = p.xs.iter().zip(&p.ys).map(|(x, &y)| (x, y, 0)).chain([(&p.query, T::zero(), 1)]);
        for (t, (x, y, is_query)) in tokens.enumerate() {
            let mut row = vec![id.to_string(), t.to_string()];
            row.extend(x.coords().iter().map(|c| c.as_f64().to_string()));
            row.push(y.as_f64().to_string());
            row.push(is_query.to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`].
pub fn read_dataset<R: Read>(input: R) -> Result<Vec<PromptSet<f64>>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let d = header
        .len()
        .checked_sub(4)
        .filter(|&d| d >= 2)
        .ok_or_else(|| Error::Format(format!("dataset header has {} columns", header.len())))?;
    if header.get(0) != Some("instance_id") || header.get(d + 3) != Some("is_query") {
        return Err(Error::Format("dataset header must start with instance_id and end with is_query".into()));
    }
    let mut prompts = Vec::new();
    let mut current: Option<u64> = None;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Format(format!("row {}: bad value in column {}", line + 2, i + 1)))
        };
        let id = rec
            .get(0)
            .and_then(|s| s.trim().parse::<u64>().ok())
            .ok_or_else(|| Error::Format(format!("row {}: bad instance_id", line + 2)))?;
        if let Some(prev) = current.filter(|&c| c != id) {
            return Err(Error::Format(format!("row {}: instance {prev} has no query row", line + 2)));
        }
        current = Some(id);
        let coords = (2..2 + d).map(field).collect::<Result<Vec<_>>>()?;
        let x = UnitVector::new(coords)
            .map_err(|e| Error::Precondition(format!("row {}: {e}", line + 2)))?;
        if field(d + 3)? != 0.0 {
            prompts.push(PromptSet::new(std::mem::take(&mut xs), std::mem::take(&mut ys), x)?);
            current = None;
        } else {
            xs.push(x);
            ys.push(field(d + 2)?);
        }
    }
    if current.is_some() {
        return Err(Error::Format("last instance has no query row".into()));
    }
    Ok(prompts)
}
