//! Uniform points on the unit sphere and the law of their inner products.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::mc::{self, McEstimate, Moments};
use crate::scalar::{dot, Scalar};

/// A point on the unit sphere in `d >= 2` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector<T>(Vec<T>);

impl<T: Scalar> UnitVector<T> {
    /// Wraps `coords`, checking the dimension and that the norm is 1.
    pub fn new(coords: Vec<T>) -> Result<Self> {
        check_dim(coords.len())?;
        let norm = dot(&coords, &coords).sqrt().as_f64();
        if (norm - 1.0).abs() > T::UNIT_TOL {
            return Err(Error::Precondition(format!("vector norm {norm} is not 1")));
        }
        Ok(Self(coords))
    }

    /// Scales `coords` onto the sphere.
    pub fn normalize(mut coords: Vec<T>) -> Result<Self> {
        check_dim(coords.len())?;
        let norm = dot(&coords, &coords).sqrt();
        if !(norm > T::zero()) || !norm.is_finite() {
            return Err(Error::Domain("cannot normalize a zero or non-finite vector".into()));
        }
        coords.iter_mut().for_each(|c| *c /= norm);
        Ok(Self(coords))
    }

    pub fn coords(&self) -> &[T] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &Self) -> T {
        dot(&self.0, &other.0)
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|&c| -c).collect())
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    pub fn cast<U: Scalar>(&self) -> UnitVector<U> {
        UnitVector(self.0.iter().map(|c| U::of(c.as_f64())).collect())
    }
}

fn check_dim(d: usize) -> Result<()> {
    if d < 2 {
        return Err(Error::InvalidDimension(format!("sphere dimension d = {d}, need d >= 2")));
    }
    Ok(())
}

/// Draws a uniform point on the sphere in `R^d` by normalizing a standard
/// Gaussian vector.
pub fn sample_sphere<T: Scalar, R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<UnitVector<T>> {
    check_dim(d)?;
    loop {
        let g: Vec<T> = (0..d).map(|_| T::of(rng.sample::<f64, _>(StandardNormal))).collect();
        if let Ok(v) = UnitVector::normalize(g) {
            return Ok(v);
        }
    }
}

/// A fixed orthogonal map of `R^d`, stored row-major.
#[derive(Debug, Clone)]
pub struct Rotation {
    d: usize,
    rows: Vec<f64>,
}

impl Rotation {
    /// Haar-ish random orthogonal matrix from Gram-Schmidt on Gaussian rows.
    pub fn random<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<Self> {
        check_dim(d)?;
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
        while rows.len() < d {
            let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            for r in &rows {
                let p = dot(&v, r);
                v.iter_mut().zip(r).for_each(|(a, b)| *a -= p * b);
            }
            let n = dot(&v, &v).sqrt();
            if n > 1e-8 {
                v.iter_mut().for_each(|a| *a /= n);
                rows.push(v);
            }
        }
        Ok(Self { d, rows: rows.concat() })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn apply<T: Scalar>(&self, v: &UnitVector<T>) -> UnitVector<T> {
        assert_eq!(v.dim(), self.d, "rotation dimension mismatch");
        let x: Vec<f64> = v.coords().iter().map(|c| c.as_f64()).collect();
        let out = self
            .rows
            .chunks_exact(self.d)
            .map(|row| T::of(dot(row, &x)))
            .collect();
        UnitVector(out)
    }
}

/// Density of `tau = <u, v>` for `v` uniform on the sphere in `R^d` and any
/// fixed unit `u`: `f(t) = k_d (1 - t^2)^((d-3)/2)` on `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerProductDensity {
    pub d: usize,
    pub k_d: f64,
}

impl InnerProductDensity {
    pub fn new(d: usize) -> Result<Self> {
        check_dim(d)?;
        Ok(Self { d, k_d: normalization(d) })
    }

    pub fn pdf(&self, t: f64) -> Result<f64> {
        check_unit_interval(t)?;
        let e = (self.d as f64 - 3.0) / 2.0;
        Ok(self.k_d * (1.0 - t * t).powf(e))
    }

    /// `P(tau <= t)`, by adaptive quadrature in `theta = asin(t)`, where the
    /// integrand becomes `cos(theta)^(d-2)` and is smooth for every `d >= 2`.
    pub fn cdf(&self, t: f64) -> Result<f64> {
        check_unit_interval(t)?;
        let p = (self.d - 2) as i32;
        let integral = adaptive_simpson(|th| th.cos().powi(p), -FRAC_PI_2, t.asin(), 1e-10);
        Ok((self.k_d * integral).clamp(0.0, 1.0))
    }
}

fn check_unit_interval(t: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("inner product {t} outside [-1, 1]")));
    }
    Ok(())
}

/// `Gamma(d/2) / (sqrt(pi) Gamma((d-1)/2))`, the constant that makes the
/// inner-product density integrate to one over `[-1, 1]`.
pub fn normalization(d: usize) -> f64 {
    let d = d as f64;
    (libm::lgamma(d / 2.0) - libm::lgamma((d - 1.0) / 2.0)).exp() / PI.sqrt()
}

/// `2 Gamma(d/2) / (sqrt(pi) Gamma((d-1)/2))`: twice [`normalization`], i.e.
/// the constant normalizing the density over the half-line `[0, 1]`. This is
/// the `k_d` that appears in the order-statistic concentration constants.
pub fn half_line_normalization(d: usize) -> f64 {
    2.0 * normalization(d)
}

pub fn density_tau(t: f64, d: usize) -> Result<f64> {
    InnerProductDensity::new(d)?.pdf(t)
}

pub fn cdf_tau(t: f64, d: usize) -> Result<f64> {
    InnerProductDensity::new(d)?.cdf(t)
}

fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            return left + right + diff / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(&f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples.iter().enumerate().fold(0.0, |worst: f64, (i, &x)| {
        let f = cdf(x);
        let hi = (i + 1) as f64 / n - f;
        let lo = f - i as f64 / n;
        worst.max(hi).max(lo)
    })
}

/// Monte-Carlo estimate of `E[max_i <x_i, x_{N+1}>]` over `n` context points.
pub fn estimate_max_inner_expectation(n: usize, d: usize, samples: usize, seed: u64) -> Result<McEstimate> {
    check_dim(d)?;
    if n == 0 || samples == 0 {
        return Err(Error::Precondition("need n >= 1 and samples >= 1".into()));
    }
    let acc = mc::chunked(samples, seed, &[0x6d61_7869], Moments::default, |acc, rng, count| {
        for _ in 0..count {
            acc.push(max_inner_draw(n, d, rng));
        }
    });
    Ok(acc.estimate())
}

/// Monte-Carlo estimate of `P(max_i <x_i, x_{N+1}> <= level)`.
pub fn estimate_max_inner_below(n: usize, d: usize, level: f64, samples: usize, seed: u64) -> Result<McEstimate> {
    check_dim(d)?;
    let acc = mc::chunked(samples, seed, &[0x6265_6c6f], Moments::default, |acc, rng, count| {
        for _ in 0..count {
            acc.push(if max_inner_draw(n, d, rng) <= level { 1.0 } else { 0.0 });
        }
    });
    Ok(acc.estimate())
}

fn max_inner_draw<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> f64 {
    let q: UnitVector<f64> = sample_sphere(d, rng).expect("d checked");
    (0..n)
        .map(|_| sample_sphere::<f64, _>(d, rng).expect("d checked").dot(&q))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Threshold `1 - (2 N k_d)^(-2/(d-3))` below which the largest of `n`
/// inner products falls with probability at least `1/e`, using the half-line
/// `k_d`. Only meaningful for `d >= 4`.
pub fn max_inner_concentration_level(n: usize, d: usize) -> Result<f64> {
    if d < 4 {
        return Err(Error::InvalidDimension(format!("concentration level needs d >= 4, got {d}")));
    }
    let k = half_line_normalization(d);
    Ok(1.0 - (2.0 * n as f64 * k).powf(-2.0 / (d as f64 - 3.0)))
}

/// The `(2 N sqrt(d))^(-2/(d-3))` variant of the order-statistic constant
/// used in the upper drift bound on `xi1`. Kept distinct from
/// [`max_inner_concentration_level`]; the two are not reconciled.
pub fn order_constant_sqrt_variant(n: usize, d: usize) -> Result<f64> {
    if d < 4 {
        return Err(Error::InvalidDimension(format!("order constant needs d >= 4, got {d}")));
    }
    Ok((2.0 * n as f64 * (d as f64).sqrt()).powf(-2.0 / (d as f64 - 3.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::substream;

    #[test]
    fn sample_is_unit_norm() {
        let mut rng = substream(3, &[]);
        for d in [2, 3, 8, 64] {
            let v: UnitVector<f64> = sample_sphere(d, &mut rng).unwrap();
            assert!((v.dot(&v).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_small_dimension() {
        let mut rng = substream(3, &[]);
        assert!(matches!(sample_sphere::<f64, _>(1, &mut rng), Err(Error::InvalidDimension(_))));
        assert!(UnitVector::new(vec![1.0f64]).is_err());
        assert!(UnitVector::new(vec![1.0f64, 0.1]).is_err());
    }

    #[test]
    fn coordinate_means_vanish() {
        let d = 8;
        let samples = 100_000;
        let mut rng = substream(11, &[]);
        let mut sums = vec![0.0; d];
        for _ in 0..samples {
            let v: UnitVector<f64> = sample_sphere(d, &mut rng).unwrap();
            sums.iter_mut().zip(v.coords()).for_each(|(s, c)| *s += c);
        }
        let sigma = 1.0 / ((d * samples) as f64).sqrt();
        for s in sums {
            assert!((s / samples as f64).abs() < 4.0 * sigma);
        }
    }

    #[test]
    fn k3_gives_uniform_half() {
        let dens = InnerProductDensity::new(3).unwrap();
        assert!((dens.k_d - 0.5).abs() < 1e-14);
        for t in [-0.9, 0.0, 0.3, 1.0] {
            assert!((dens.pdf(t).unwrap() - 0.5).abs() < 1e-14);
        }
        assert!((half_line_normalization(3) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn d2_density_at_zero_is_k2() {
        let dens = InnerProductDensity::new(2).unwrap();
        assert!((dens.pdf(0.0).unwrap() - 1.0 / PI).abs() < 1e-14);
        assert!(dens.pdf(1.0).unwrap().is_infinite());
    }

    #[test]
    fn density_domain_errors() {
        assert!(matches!(density_tau(1.5, 4), Err(Error::Domain(_))));
        assert!(matches!(cdf_tau(-1.01, 4), Err(Error::Domain(_))));
        assert!(density_tau(0.0, 1).is_err());
    }

    #[test]
    fn cdf_endpoints_and_symmetry() {
        for d in 2..=32 {
            assert!(cdf_tau(-1.0, d).unwrap().abs() < 1e-9);
            assert!((cdf_tau(1.0, d).unwrap() - 1.0).abs() < 1e-9, "d = {d}");
        }
        assert!((cdf_tau(0.0, 3).unwrap() - 0.5).abs() < 1e-12);
        // uniform on [-1, 1] for d = 3
        assert!((cdf_tau(0.4, 3).unwrap() - 0.7).abs() < 1e-10);
        // arcsine law for d = 2
        let t: f64 = 0.3;
        assert!((cdf_tau(t, 2).unwrap() - (0.5 + t.asin() / PI)).abs() < 1e-10);
    }

    #[test]
    fn cdf_is_monotone() {
        for d in [2, 5, 16] {
            let mut prev = 0.0;
            for i in 0..=200 {
                let t = -1.0 + 2.0 * i as f64 / 200.0;
                let c = cdf_tau(t, d).unwrap();
                assert!(c >= prev - 1e-12);
                prev = c;
            }
        }
    }

    #[test]
    fn cdf_matches_monte_carlo_d8() {
        let mut rng = substream(5, &[]);
        let e1 = UnitVector::new(vec![1.0, 0., 0., 0., 0., 0., 0., 0.]).unwrap();
        let samples = 1_000_000;
        let hits = (0..samples)
            .filter(|_| sample_sphere::<f64, _>(8, &mut rng).unwrap().dot(&e1) <= 0.5)
            .count();
        let mc = hits as f64 / samples as f64;
        assert!((mc - cdf_tau(0.5, 8).unwrap()).abs() < 3e-3);
    }

    #[test]
    fn rotation_preserves_inner_products() {
        let mut rng = substream(8, &[]);
        let u = Rotation::random(6, &mut rng).unwrap();
        let a: UnitVector<f64> = sample_sphere(6, &mut rng).unwrap();
        let b: UnitVector<f64> = sample_sphere(6, &mut rng).unwrap();
        assert!((u.apply(&a).dot(&u.apply(&b)) - a.dot(&b)).abs() < 1e-12);
        assert!((u.apply(&a).dot(&u.apply(&a)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn max_inner_single_point_has_zero_mean() {
        let est = estimate_max_inner_expectation(1, 3, 50_000, 1).unwrap();
        assert!(est.within(0.0, 3.0), "{est:?}");
    }

    #[test]
    fn max_inner_lower_bound_and_growth() {
        let n16 = estimate_max_inner_expectation(16, 8, 100_000, 2).unwrap();
        let floor = 2.0 / 17.0f64.powi(2);
        assert!(n16.mean - floor >= 3.0 * n16.stderr);
        let n64 = estimate_max_inner_expectation(64, 8, 100_000, 2).unwrap();
        assert!(n64.mean > n16.mean);
    }

    #[test]
    fn concentration_constants_need_d4() {
        assert!(max_inner_concentration_level(16, 3).is_err());
        assert!(order_constant_sqrt_variant(16, 2).is_err());
        let level = max_inner_concentration_level(16, 8).unwrap();
        assert!(level > 0.0 && level < 1.0);
    }
}
