//! Token embedding, the single softmax-attention read-out, and the
//! two-parameter diagonal family of weights.
//!
//! Weight layout: rows and columns `0..d` pair with the point coordinates,
//! index `d` with the label slot and index `d + 1` with the query indicator.
//! The score of token `j` is `h_j . (W h_query)`.

use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut2};

use crate::data::PromptSet;
use crate::error::{Error, Result};
use crate::geometry::UnitVector;
use crate::scalar::{dot, Scalar};

/// The `(d+2) x (N+1)` token matrix: context columns `(x_j, y_j, 0)`, then
/// the query column `(x_query, 0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix<T> {
    pub entries: Array2<T>,
}

impl<T: Scalar> EmbeddingMatrix<T> {
    pub fn build(prompt: &PromptSet<T>) -> Self {
        let (d, n) = (prompt.d(), prompt.n());
        let mut h = Array2::zeros((d + 2, n + 1));
        for (j, (x, &y)) in prompt.xs().iter().zip(prompt.ys()).enumerate() {
            h.slice_mut(s![..d, j]).assign(&ArrayView1::from(x.coords()));
            h[[d, j]] = y;
        }
        h.slice_mut(s![..d, n]).assign(&ArrayView1::from(prompt.query().coords()));
        h[[d + 1, n]] = T::one();
        Self { entries: h }
    }

    pub fn d(&self) -> usize {
        self.entries.nrows() - 2
    }

    pub fn n(&self) -> usize {
        self.entries.ncols() - 1
    }

    /// Recovers the prompt from the columns.
    pub fn to_prompt(&self) -> Result<PromptSet<T>> {
        let (d, n) = (self.d(), self.n());
        let col = |j: usize| UnitVector::new(self.entries.slice(s![..d, j]).to_vec());
        let xs = (0..n).map(col).collect::<Result<Vec<_>>>()?;
        let ys = (0..n).map(|j| self.entries[[d, j]]).collect();
        PromptSet::new(xs, ys, col(n)?)
    }
}

/// The merged key-query matrix, `(d+2) x (d+2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights<T> {
    m: Array2<T>,
}

impl<T: Scalar> AttentionWeights<T> {
    pub fn zeros(d: usize) -> Self {
        Self { m: Array2::zeros((d + 2, d + 2)) }
    }

    /// Structured start: all zero except the query self-score entry, `-sigma`.
    pub fn initial(d: usize, sigma: T) -> Self {
        let mut w = Self::zeros(d);
        w.m[[d + 1, d + 1]] = -sigma;
        w
    }

    pub fn from_matrix(m: Array2<T>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() < 4 {
            return Err(Error::InvalidDimension(format!("weights must be (d+2)x(d+2) with d >= 2, got {:?}", m.shape())));
        }
        Ok(Self { m })
    }

    pub fn d(&self) -> usize {
        self.m.nrows() - 2
    }

    pub fn matrix(&self) -> &Array2<T> {
        &self.m
    }

    pub fn matrix_mut(&mut self) -> &mut Array2<T> {
        &mut self.m
    }

    pub fn w11(&self) -> ArrayView2<'_, T> {
        let d = self.d();
        self.m.slice(s![..d, ..d])
    }

    pub fn w11_mut(&mut self) -> ArrayViewMut2<'_, T> {
        let d = self.d();
        self.m.slice_mut(s![..d, ..d])
    }

    pub fn w21(&self) -> ArrayView1<'_, T> {
        let d = self.d();
        self.m.slice(s![d, ..d])
    }

    pub fn w31(&self) -> ArrayView1<'_, T> {
        let d = self.d();
        self.m.slice(s![d + 1, ..d])
    }

    pub fn w13(&self) -> ArrayView1<'_, T> {
        let d = self.d();
        self.m.slice(s![..d, d + 1])
    }

    pub fn w23(&self) -> T {
        let d = self.d();
        self.m[[d, d + 1]]
    }

    pub fn w33(&self) -> T {
        let d = self.d();
        self.m[[d + 1, d + 1]]
    }

    /// The label-slot column `(W12, W22, W32)`. It multiplies the query's
    /// label slot, which is always zero.
    pub fn label_column(&self) -> ArrayView1<'_, T> {
        let d = self.d();
        self.m.slice(s![.., d])
    }

    pub fn label_column_mut(&mut self) -> ndarray::ArrayViewMut1<'_, T> {
        let d = self.d();
        self.m.slice_mut(s![.., d])
    }

    /// Whether `(row, col)` can influence the output.
    pub fn is_active(&self, _row: usize, col: usize) -> bool {
        col != self.d()
    }

    pub fn cast<U: Scalar>(&self) -> AttentionWeights<U> {
        AttentionWeights { m: self.m.mapv(|v| U::of(v.as_f64())) }
    }

    /// `W h_query` for a query `x`: the vector every token is scored against.
    fn query_image(&self, x: &[T]) -> Vec<T> {
        let d = self.d();
        self.m
            .rows()
            .into_iter()
            .map(|row| {
                let r = row.as_slice().expect("standard layout");
                dot(&r[..d], x) + r[d + 1]
            })
            .collect()
    }
}

/// The two-parameter family `W = diag(xi1 I_d, 0, -xi2)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct DiagonalParams<T> {
    pub xi1: T,
    pub xi2: T,
}

impl<T: Scalar> DiagonalParams<T> {
    pub fn new(xi1: T, xi2: T) -> Self {
        Self { xi1, xi2 }
    }

    pub fn expand(&self, d: usize) -> AttentionWeights<T> {
        let mut w = AttentionWeights::zeros(d);
        for i in 0..d {
            w.m[[i, i]] = self.xi1;
        }
        w.m[[d + 1, d + 1]] = -self.xi2;
        w
    }
}

/// Attention distribution of the query over the `N + 1` tokens; the last
/// entry is the query's own weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxWeights<T> {
    pub q: Vec<T>,
}

impl<T: Scalar> SoftmaxWeights<T> {
    /// Normalizes `exp(logits)` after subtracting the largest logit.
    pub fn from_logits(mut logits: Vec<T>) -> Result<Self> {
        let top = logits.iter().copied().fold(T::neg_infinity(), T::max);
        if !top.is_finite() {
            return Err(Error::NumericOverflow(format!("largest attention logit is {top}")));
        }
        let mut total = T::zero();
        for l in logits.iter_mut() {
            *l = (*l - top).exp();
            total += *l;
        }
        if !total.is_finite() || total < T::one() {
            return Err(Error::NumericOverflow("attention normalizer is not finite".into()));
        }
        logits.iter_mut().for_each(|l| *l /= total);
        Ok(Self { q: logits })
    }

    pub fn query_weight(&self) -> T {
        *self.q.last().expect("N + 1 weights")
    }

    /// `sum_{j <= N} q_j y_j`; the query token carries label 0.
    pub fn read_out(&self, ys: &[T]) -> T {
        self.q.iter().zip(ys).fold(T::zero(), |acc, (&q, &y)| acc + q * y)
    }
}

fn check_shapes<T: Scalar>(prompt: &PromptSet<T>, w: &AttentionWeights<T>) -> Result<()> {
    if prompt.d() != w.d() {
        return Err(Error::InvalidDimension(format!("prompt has d = {}, weights have d = {}", prompt.d(), w.d())));
    }
    Ok(())
}

/// Scores `h_j . (W h_query)` for all `N + 1` tokens.
pub fn attention_logits<T: Scalar>(prompt: &PromptSet<T>, w: &AttentionWeights<T>) -> Result<Vec<T>> {
    check_shapes(prompt, w)?;
    let d = w.d();
    let v = w.query_image(prompt.query().coords());
    let mut logits: Vec<T> = prompt
        .xs()
        .iter()
        .zip(prompt.ys())
        .map(|(x, &y)| dot(x.coords(), &v[..d]) + y * v[d])
        .collect();
    logits.push(dot(prompt.query().coords(), &v[..d]) + v[d + 1]);
    Ok(logits)
}

pub fn attention_q<T: Scalar>(prompt: &PromptSet<T>, w: &AttentionWeights<T>) -> Result<SoftmaxWeights<T>> {
    SoftmaxWeights::from_logits(attention_logits(prompt, w)?)
}

/// Scores under diagonal parameters: `xi1 <x_j, x_query>` for context
/// points and `xi1 - xi2` for the query itself.
pub fn attention_q_diag<T: Scalar>(prompt: &PromptSet<T>, p: &DiagonalParams<T>) -> Result<SoftmaxWeights<T>> {
    q_diag_from_inner(&prompt.inner_products(), p)
}

pub(crate) fn q_diag_from_inner<T: Scalar>(tau: &[T], p: &DiagonalParams<T>) -> Result<SoftmaxWeights<T>> {
    let mut logits: Vec<T> = tau.iter().map(|&t| p.xi1 * t).collect();
    logits.push(p.xi1 - p.xi2);
    SoftmaxWeights::from_logits(logits)
}

/// Model prediction for the query label.
pub fn forward<T: Scalar>(prompt: &PromptSet<T>, w: &AttentionWeights<T>) -> Result<T> {
    Ok(attention_q(prompt, w)?.read_out(prompt.ys()))
}

pub fn forward_diag<T: Scalar>(prompt: &PromptSet<T>, p: &DiagonalParams<T>) -> Result<T> {
    Ok(attention_q_diag(prompt, p)?.read_out(prompt.ys()))
}

/// Reference path through full matrices: the label row, query column of
/// `H softmax(H^T W H)` with the softmax taken down each column.
pub fn forward_reference<T: Scalar>(prompt: &PromptSet<T>, w: &AttentionWeights<T>) -> Result<T> {
    check_shapes(prompt, w)?;
    let h = EmbeddingMatrix::build(prompt).entries;
    let scores = h.t().dot(w.matrix()).dot(&h);
    let mut attn = Array2::zeros(scores.raw_dim());
    for (j, col) in scores.columns().into_iter().enumerate() {
        let sm = SoftmaxWeights::from_logits(col.to_vec())?;
        attn.column_mut(j).assign(&ArrayView1::from(&sm.q));
    }
    let out = h.dot(&attn);
    Ok(out[[prompt.d(), prompt.n()]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_shifted_test, gen_training_prompt, one_nn};
    use crate::mc::substream;
    use ndarray::array;
    use rand::Rng;

    fn unit(v: &[f64]) -> UnitVector<f64> {
        UnitVector::normalize(v.to_vec()).unwrap()
    }

    fn random_weights<R: Rng>(d: usize, scale: f64, rng: &mut R) -> AttentionWeights<f64> {
        let m = Array2::from_shape_fn((d + 2, d + 2), |_| scale * (2.0 * rng.random::<f64>() - 1.0));
        AttentionWeights::from_matrix(m).unwrap()
    }

    #[test]
    fn embedding_layout() {
        let p = PromptSet::new(vec![unit(&[1.0, 0.0])], vec![1.0], unit(&[0.0, 1.0])).unwrap();
        let h = EmbeddingMatrix::build(&p);
        assert_eq!(h.entries, array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(h.to_prompt().unwrap(), p);
    }

    #[test]
    fn indicator_row_and_round_trip() {
        let mut rng = substream(1, &[]);
        let p: PromptSet<f64> = gen_training_prompt(5, 3, &mut rng).unwrap();
        let h = EmbeddingMatrix::build(&p);
        let last: Vec<f64> = h.entries.row(4).to_vec();
        assert_eq!(last, vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(h.to_prompt().unwrap(), p);
    }

    #[test]
    fn zero_weights_give_uniform_attention() {
        let xs = (0..4).map(|i| unit(&[1.0, i as f64, 0.5, -1.0])).collect();
        let p = PromptSet::new(xs, vec![1.0, 1.0, -1.0, 1.0], unit(&[0.0, 0.0, 0.0, 1.0])).unwrap();
        let w = AttentionWeights::zeros(4);
        let q = attention_q(&p, &w).unwrap();
        assert!(q.q.iter().all(|&v| (v - 0.2).abs() < 1e-15));
        assert!((forward(&p, &w).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn diagonal_weights_match_closed_form() {
        let mut rng = substream(2, &[]);
        let p: PromptSet<f64> = gen_training_prompt(6, 5, &mut rng).unwrap();
        let params = DiagonalParams::new(1.3, 2.1);
        let q = attention_q(&p, &params.expand(5)).unwrap();
        let mut e: Vec<f64> = p.inner_products().iter().map(|t| (1.3 * t).exp()).collect();
        e.push((1.3f64 - 2.1).exp());
        let z: f64 = e.iter().sum();
        for (a, b) in q.q.iter().zip(&e) {
            assert!((a - b / z).abs() < 1e-14);
        }
    }

    #[test]
    fn expand_is_exact() {
        let w = DiagonalParams::new(0.5, 3.0).expand(2);
        let expected = array![[0.5, 0., 0., 0.], [0., 0.5, 0., 0.], [0., 0., 0., 0.], [0., 0., 0., -3.0]];
        assert_eq!(w.matrix(), &expected);
    }

    #[test]
    fn large_parameters_pick_the_neighbor() {
        let mut rng = substream(3, &[]);
        let params = DiagonalParams::new(50.0, 200.0);
        for _ in 0..50 {
            let p: PromptSet<f64> = gen_shifted_test(16, 8, 0.1, &mut rng).unwrap();
            let nn = one_nn(&p);
            let q = attention_q_diag(&p, &params).unwrap();
            assert!(q.q[nn.index] > 0.99);
            assert!((forward_diag(&p, &params).unwrap() - nn.label).abs() < 1e-3 * nn.label.abs().max(1.0) * 10.0);
        }
    }

    #[test]
    fn stabilized_softmax_handles_big_logits() {
        let q = SoftmaxWeights::from_logits(vec![1e4, -1e4, 9999.0]).unwrap();
        assert!((q.q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(SoftmaxWeights::from_logits(vec![f64::NAN, 1.0]).is_err());
        assert!(matches!(SoftmaxWeights::from_logits(vec![f64::INFINITY, 1.0]), Err(Error::NumericOverflow(_))));
    }

    #[test]
    fn matrix_path_agrees() {
        let mut rng = substream(4, &[]);
        for _ in 0..20 {
            let p: PromptSet<f64> = gen_training_prompt(3, 3, &mut rng).unwrap();
            let w = random_weights(3, 2.0, &mut rng);
            let a = forward(&p, &w).unwrap();
            let b = forward_reference(&p, &w).unwrap();
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn diag_forward_limits() {
        let mut rng = substream(5, &[]);
        let p: PromptSet<f64> = gen_training_prompt(5, 4, &mut rng).unwrap();
        let sum: f64 = p.ys().iter().sum();
        let at_zero = forward_diag(&p, &DiagonalParams::new(0.0, 0.0)).unwrap();
        assert!((at_zero - sum / 6.0).abs() < 1e-15);
        let masked = forward_diag(&p, &DiagonalParams::new(0.0, 40.0)).unwrap();
        assert!((masked - sum / 5.0).abs() < 1e-12);
    }

    #[test]
    fn diag_forward_matches_expanded() {
        let mut rng = substream(6, &[]);
        for _ in 0..100 {
            let p: PromptSet<f64> = gen_training_prompt(8, 4, &mut rng).unwrap();
            let params = DiagonalParams::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..10.0));
            let a = forward_diag(&p, &params).unwrap();
            let b = forward(&p, &params.expand(4)).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn block_views_alias_storage() {
        let mut w = AttentionWeights::<f64>::zeros(3);
        w.matrix_mut()[[3, 1]] = 7.0;
        w.matrix_mut()[[1, 4]] = -2.0;
        assert_eq!(w.w21()[1], 7.0);
        assert_eq!(w.w13()[1], -2.0);
        w.w11_mut()[[0, 2]] = 4.0;
        assert_eq!(w.matrix()[[0, 2]], 4.0);
        assert_eq!(w.label_column().len(), 5);
    }

    #[test]
    fn f32_forward_tracks_f64() {
        let mut rng = substream(7, &[]);
        let p: PromptSet<f64> = gen_training_prompt(8, 4, &mut rng).unwrap();
        let w = random_weights(4, 1.0, &mut rng);
        let a = forward(&p, &w).unwrap();
        let b = forward(&p.cast::<f32>(), &w.cast::<f32>()).unwrap();
        assert!((a - b as f64).abs() < 1e-5);
    }
}
