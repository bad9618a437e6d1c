//! Numerics on probability simplices.
//!
//! Softmax and its block form, normalized entropy, the closed-form solution
//! of the entropy-regularized linear program over the simplex, Lipschitz
//! bounds for softmax and a power-iteration spectral norm.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{EonError, Result};

/// Absolute tolerance on `sum == 1` for simplex points.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Regularization weights at or below this value select the hard (argmin) limit
/// of the entropic linear program.
pub const HARD_EPSILON: f64 = 1e-300;

/// A point on the probability simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn try_new(values: Vec<f64>) -> Result<Self> {
        check_simplex(&values).map_err(EonError::invalid)?;
        Ok(ProbVector(values))
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k > 0, "simplex dimension must be positive");
        ProbVector(vec![1.0 / k as f64; k])
    }

    pub fn one_hot(k: usize, hot: usize) -> Self {
        assert!(hot < k, "one-hot index out of range");
        let mut v = vec![0.0; k];
        v[hot] = 1.0;
        ProbVector(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Describe why `values` is not a simplex point, if it is not.
pub fn check_simplex(values: &[f64]) -> std::result::Result<(), String> {
    if values.is_empty() {
        return Err("empty probability vector".into());
    }
    if let Some((i, v)) = values
        .iter()
        .enumerate()
        .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0)
    {
        return Err(format!("entry {i} = {v} outside [0, 1]"));
    }
    let residual = (values.iter().sum::<f64>() - 1.0).abs();
    if residual > SIMPLEX_TOL {
        return Err(format!("entries sum to 1 - {residual:e}"));
    }
    Ok(())
}

/// A column-stochastic matrix: every column is a [`ProbVector`].
#[derive(Clone, Debug, PartialEq)]
pub struct StochasticMatrix(Array2<f64>);

impl StochasticMatrix {
    pub fn try_new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(EonError::invalid("stochastic matrix with an empty dimension"));
        }
        for (j, col) in values.columns().into_iter().enumerate() {
            let col: Vec<f64> = col.to_vec();
            check_simplex(&col).map_err(|e| EonError::invalid(format!("column {j}: {e}")))?;
        }
        Ok(StochasticMatrix(values))
    }

    /// Wrap without checking; callers guarantee the invariant.
    pub(crate) fn from_array_unchecked(values: Array2<f64>) -> Self {
        StochasticMatrix(values)
    }

    pub fn uniform(rows: usize, cols: usize) -> Self {
        StochasticMatrix(Array2::from_elem((rows, cols), 1.0 / rows as f64))
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }
}

/// Ordered blocks of a stacked layer vector.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockVector {
    pub blocks: Vec<Vec<f64>>,
}

impl BlockVector {
    pub fn new(blocks: Vec<Vec<f64>>) -> Self {
        BlockVector { blocks }
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }

    pub fn total_len(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.blocks.iter().flatten().copied().collect()
    }

    /// Euclidean distance between two block vectors of identical structure.
    pub fn distance(&self, other: &BlockVector) -> f64 {
        debug_assert_eq!(self.block_sizes(), other.block_sizes());
        self.blocks
            .iter()
            .zip(&other.blocks)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)))
            .sum::<f64>()
            .sqrt()
    }
}

pub fn softmax(x: &[f64]) -> Result<ProbVector> {
    if x.is_empty() {
        return Err(EonError::invalid("softmax of an empty vector"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(EonError::invalid("softmax input is not finite"));
    }
    let mut out = x.to_vec();
    softmax_in_place(&mut out);
    Ok(ProbVector(out))
}

/// Max-shifted softmax, overwriting `x`. Entries equal to `-inf` map to 0;
/// at least one entry must be finite.
pub(crate) fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

pub fn block_softmax(x: &BlockVector) -> Result<BlockVector> {
    let blocks = x
        .blocks
        .iter()
        .enumerate()
        .map(|(i, block)| {
            softmax(block)
                .map(ProbVector::into_vec)
                .map_err(|e| EonError::invalid(format!("block {i}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BlockVector { blocks })
}

/// `sum p ln p` with `0 ln 0 = 0`.
pub fn sum_p_log_p(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum()
}

/// Normalized Shannon entropy `-sum p log_base p`, in `[0, 1]` when `base` is the support size.
pub fn normalized_entropy(p: &ProbVector, base: usize) -> Result<f64> {
    if base < 2 {
        return Err(EonError::invalid(format!("entropy base {base} < 2")));
    }
    Ok(-sum_p_log_p(p.as_slice()) / (base as f64).ln())
}

/// Normalized entropy of a raw slice using its own length as the base; 0 for length 1.
pub(crate) fn label_entropy(p: &[f64]) -> f64 {
    if p.len() < 2 {
        return 0.0;
    }
    (-sum_p_log_p(p) / (p.len() as f64).ln()).clamp(0.0, 1.0)
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x < v[best] {
            best = i;
        }
    }
    best
}

/// Minimizer of `<w, b> + eps <w, ln w>` over the simplex, written into `out`.
///
/// For `eps <= HARD_EPSILON` (including 0) this is the one-hot argmin of `b`,
/// lowest index on ties. `b` must be finite.
pub(crate) fn entropic_argmin_into(b: &[f64], eps: f64, out: &mut [f64]) {
    debug_assert_eq!(b.len(), out.len());
    if eps > HARD_EPSILON {
        let mut all_finite = true;
        for (o, &v) in out.iter_mut().zip(b) {
            *o = -v / eps;
            all_finite &= o.is_finite();
        }
        if all_finite {
            softmax_in_place(out);
            return;
        }
    }
    let hot = argmin(b);
    out.fill(0.0);
    out[hot] = 1.0;
}

/// Closed-form solution of `min_{w in simplex} <w, b> + eps <w, ln w>`, i.e. `softmax(-b / eps)`.
pub fn solve_entropic_lp(b: &[f64], epsilon: f64) -> Result<ProbVector> {
    if !(epsilon > 0.0) {
        return Err(EonError::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if b.is_empty() || b.iter().any(|v| !v.is_finite()) {
        return Err(EonError::invalid("linear term must be finite and non-empty"));
    }
    let mut out = vec![0.0; b.len()];
    entropic_argmin_into(b, epsilon, &mut out);
    Ok(ProbVector(out))
}

/// Upper bound `(K - 1) / K` on the Euclidean Lipschitz constant of softmax on `R^K`.
pub fn softmax_lipschitz_bound(k: usize) -> Result<f64> {
    if k < 2 {
        return Err(EonError::invalid(format!("softmax Lipschitz bound needs K >= 2, got {k}")));
    }
    Ok(lipschitz_bound_unchecked(k))
}

pub(crate) fn lipschitz_bound_unchecked(k: usize) -> f64 {
    if k < 2 {
        0.0
    } else {
        (k as f64 - 1.0) / k as f64
    }
}

/// Largest observed `|softmax(x) - softmax(y)| / |x - y|` over `samples` random pairs.
///
/// Base points have Gaussian entries at a log-uniform scale in `[0.1, 10]`; partners
/// sit at a log-uniform distance in `[1e-6, 1]` along a uniformly random direction.
/// Pairs whose difference vanishes in floating point are skipped.
pub fn monte_carlo_lipschitz(k: usize, samples: usize, seed: u64) -> Result<f64> {
    if k < 1 {
        return Err(EonError::invalid("dimension must be positive"));
    }
    if samples < 1 {
        return Err(EonError::invalid("at least one sample is required"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; k];
    let mut y = vec![0.0; k];
    let mut best = 0.0_f64;
    for _ in 0..samples {
        let scale = 10f64.powf(rng.random_range(-1.0..1.0));
        let step = 10f64.powf(rng.random_range(-6.0..0.0));
        let mut dir_norm = 0.0;
        for (xi, yi) in x.iter_mut().zip(y.iter_mut()) {
            *xi = scale * rng.sample::<f64, _>(StandardNormal);
            *yi = rng.sample::<f64, _>(StandardNormal);
            dir_norm += *yi * *yi;
        }
        let dir_norm = dir_norm.sqrt();
        if dir_norm == 0.0 {
            continue;
        }
        for (xi, yi) in x.iter().zip(y.iter_mut()) {
            *yi = xi + step * *yi / dir_norm;
        }
        let input_gap = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if input_gap == 0.0 {
            continue;
        }
        let mut sx = x.clone();
        let mut sy = y.clone();
        softmax_in_place(&mut sx);
        softmax_in_place(&mut sy);
        let output_gap = sx
            .iter()
            .zip(&sy)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        best = best.max(output_gap / input_gap);
    }
    Ok(best)
}

const POWER_REL_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 10_000;

/// Largest singular value via power iteration on `A^T A`.
pub fn spectral_norm(a: &Array2<f64>) -> Result<f64> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(EonError::invalid("spectral norm of a non-finite matrix"));
    }
    let (rows, cols) = a.dim();
    if rows == 0 || cols == 0 || a.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    // Positive and non-constant, so it is neither orthogonal to a Perron vector
    // nor aligned with a symmetric null direction in practice.
    let start: Vec<f64> = (0..cols).map(|j| 1.0 + 0.3 * ((j + 1) as f64).sin()).collect();
    let mut best = power_iterate(a, start);
    if best == 0.0 {
        for j in 0..cols {
            let mut e = vec![0.0; cols];
            e[j] = 1.0;
            best = best.max(power_iterate(a, e));
        }
    }
    Ok(best)
}

fn power_iterate(a: &Array2<f64>, mut v: Vec<f64>) -> f64 {
    let (rows, cols) = a.dim();
    normalize(&mut v);
    let mut av = vec![0.0; rows];
    let mut w = vec![0.0; cols];
    let mut estimate = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        for (i, avi) in av.iter_mut().enumerate() {
            *avi = a.row(i).iter().zip(&v).map(|(x, y)| x * y).sum();
        }
        for (j, wj) in w.iter_mut().enumerate() {
            *wj = a.column(j).iter().zip(&av).map(|(x, y)| x * y).sum();
        }
        let next: f64 = av.iter().map(|x| x * x).sum();
        let w_norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if w_norm == 0.0 {
            return next.sqrt();
        }
        for (vj, wj) in v.iter_mut().zip(&w) {
            *vj = wj / w_norm;
        }
        let done = (next - estimate).abs() <= POWER_REL_TOL * next;
        estimate = next;
        if done {
            break;
        }
    }
    estimate.sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}
