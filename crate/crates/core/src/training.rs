//! Block coordinate descent over `(Gamma, S, theta, gamma_(0))`.
//!
//! Every block has a closed-form minimizer, so each outer iteration is a
//! sequence of exact block minimizations and the loss is non-increasing.
//!
//! Data are stored one sample per row: `X` is `T x K0`, the label
//! distributions `pi` are `T x K_{N+1}`, and layer `n` of a [`GammaStack`] is
//! `T x K_n`.

use std::time::Instant;

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{EonError, Result};
use crate::model::{eps0_split, AMatrices, EonModel, Gamma0, Gamma0Mode, Hyperparameters};
use crate::simplex::{
    self, check_simplex, entropic_argmin_into, lipschitz_bound_unchecked, sum_p_log_p, BlockVector,
    StochasticMatrix,
};

/// Features and label distributions for `T` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    pi: Array2<f64>,
}

impl Dataset {
    /// `x` is `T x K0`, `pi` is `T x M` with every row a probability vector.
    pub fn new(x: Array2<f64>, pi: Array2<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(EonError::invalid("dataset has no samples"));
        }
        if x.ncols() == 0 || pi.ncols() == 0 {
            return Err(EonError::invalid("dataset needs at least one feature and one label"));
        }
        if x.nrows() != pi.nrows() {
            return Err(EonError::invalid(format!(
                "{} feature rows but {} label rows",
                x.nrows(),
                pi.nrows()
            )));
        }
        if let Some(((t, d), _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(EonError::invalid(format!("feature x{d} of sample {t} is not finite")));
        }
        for (t, row) in pi.rows().into_iter().enumerate() {
            let row = row.to_vec();
            check_simplex(&row).map_err(|e| EonError::invalid(format!("label row {t}: {e}")))?;
        }
        Ok(Dataset { x, pi })
    }

    /// One-hot label distributions over `classes` labels.
    pub fn from_labels(x: Array2<f64>, labels: &[usize], classes: usize) -> Result<Self> {
        if labels.len() != x.nrows() {
            return Err(EonError::invalid("label count differs from sample count"));
        }
        let mut pi = Array2::zeros((labels.len(), classes));
        for (t, &l) in labels.iter().enumerate() {
            if l >= classes {
                return Err(EonError::invalid(format!("label {l} of sample {t} >= {classes}")));
            }
            pi[[t, l]] = 1.0;
        }
        Dataset::new(x, pi)
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn pi(&self) -> &Array2<f64> {
        &self.pi
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.pi.ncols()
    }

    /// Most probable label of every sample.
    pub fn labels(&self) -> Vec<usize> {
        self.pi.rows().into_iter().map(|r| simplex::argmax(r.as_slice().unwrap())).collect()
    }

    /// The samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(ndarray::Axis(0), indices),
            pi: self.pi.select(ndarray::Axis(0), indices),
        }
    }
}

/// Layer probabilities `gamma_(1) .. gamma_(N+1)` for every sample.
#[derive(Clone, Debug, PartialEq)]
pub struct GammaStack {
    /// `layers[n-1]` is `T x K_n`.
    pub layers: Vec<Array2<f64>>,
}

impl GammaStack {
    /// Uniform distributions in every layer; `dims` is `K0 .. K_{N+1}`.
    pub fn uniform(dims: &[usize], samples: usize) -> Self {
        let layers = dims[1..]
            .iter()
            .map(|&k| Array2::from_elem((samples, k), 1.0 / k as f64))
            .collect();
        GammaStack { layers }
    }

    /// Uniform hidden layers with the last layer pinned to `pi`.
    pub fn for_training(dims: &[usize], pi: &Array2<f64>) -> Self {
        let mut stack = GammaStack::uniform(dims, pi.nrows());
        *stack.layers.last_mut().expect("at least one layer") = pi.clone();
        stack
    }

    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, |l| l.nrows())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn gamma1(&self) -> &Array2<f64> {
        &self.layers[0]
    }

    pub fn row(&self, t: usize) -> BlockVector {
        BlockVector::new(self.layers.iter().map(|l| l.row(t).to_vec()).collect())
    }

    pub fn set_row(&mut self, t: usize, row: &BlockVector) {
        for (layer, block) in self.layers.iter_mut().zip(&row.blocks) {
            layer.row_mut(t).assign(&ArrayView1::from(block.as_slice()));
        }
    }
}

/// Treatment of the label layer during a Gamma solve.
#[derive(Clone, Copy, Debug)]
pub enum LastLayer<'a> {
    /// Training: `gamma_(N+1)` is fixed to the given distribution.
    Pinned(&'a [f64]),
    /// Inference: `gamma_(N+1)` is solved for.
    Free,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GammaSolve {
    pub row: BlockVector,
    pub iterations: usize,
    pub converged: bool,
}

/// `out += A v` for `A` of shape `out.len() x v.len()`.
fn mat_vec_into(a: &Array2<f64>, v: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(a.rows()) {
        *o += row.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
    }
}

/// `out += A^T v`.
fn mat_t_vec_into(a: &Array2<f64>, v: &[f64], out: &mut [f64]) {
    for (row, &vj) in a.rows().into_iter().zip(v) {
        for (o, x) in out.iter_mut().zip(row) {
            *o += x * vj;
        }
    }
}

fn ensure_finite(v: &[f64], layer: usize, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(EonError::Numerical { layer, context: format!("non-finite {what}") })
    }
}

/// One backward sweep from the label layer down to `gamma_(1)`, in place.
///
/// Layer `n` is replaced by the minimizer of the loss over that block with all
/// other blocks held at their current values. `epsilon` is `eps_0 .. eps_{N+1}`.
pub fn sweep(
    row: &mut BlockVector,
    b: &[f64],
    a: &AMatrices,
    epsilon: &[f64],
    last: LastLayer<'_>,
) -> Result<()> {
    let depth = a.depth();
    if row.blocks.len() != depth + 1 || epsilon.len() != depth + 2 || b.len() != row.blocks[0].len() {
        return Err(EonError::invalid("gamma row, epsilon and A matrices disagree on depth"));
    }
    let mut lin = Vec::new();
    let mut out = Vec::new();
    match last {
        LastLayer::Pinned(pi) => {
            if pi.len() != row.blocks[depth].len() {
                return Err(EonError::invalid("pinned label distribution has the wrong length"));
            }
            row.blocks[depth].copy_from_slice(pi);
        }
        LastLayer::Free => {
            lin.resize(row.blocks[depth].len(), 0.0);
            mat_vec_into(&a.mats[depth - 1], &row.blocks[depth - 1], &mut lin);
            ensure_finite(&lin, depth + 1, "linear term")?;
            entropic_argmin_into(&lin, epsilon[depth + 1], &mut row.blocks[depth]);
        }
    }
    for n in (1..=depth).rev() {
        let k = row.blocks[n - 1].len();
        lin.clear();
        if n == 1 {
            lin.extend_from_slice(b);
        } else {
            lin.resize(k, 0.0);
            mat_vec_into(&a.mats[n - 2], &row.blocks[n - 2], &mut lin);
        }
        mat_t_vec_into(&a.mats[n - 1], &row.blocks[n], &mut lin);
        ensure_finite(&lin, n, "linear term")?;
        out.clear();
        out.resize(k, 0.0);
        entropic_argmin_into(&lin, epsilon[n], &mut out);
        row.blocks[n - 1].copy_from_slice(&out);
    }
    Ok(())
}

/// Repeats [`sweep`] until the Euclidean change of the stacked row drops below `tol`.
pub fn solve_gamma_point(
    b: &[f64],
    a: &AMatrices,
    epsilon: &[f64],
    last: LastLayer<'_>,
    init: BlockVector,
    max_iters: usize,
    tol: f64,
) -> Result<GammaSolve> {
    let mut row = init;
    let mut prev = row.clone();
    for it in 1..=max_iters {
        prev.clone_from(&row);
        sweep(&mut row, b, a, epsilon, last)?;
        if row.distance(&prev) < tol {
            return Ok(GammaSolve { row, iterations: it, converged: true });
        }
    }
    Ok(GammaSolve { row, iterations: max_iters, converged: false })
}

/// `b_t[k] = sum_d gamma0_col[d] (x_t[d] - S[d, k])^2`.
pub fn assemble_b_t(x_t: &[f64], s: &Array2<f64>, gamma0_col: &[f64]) -> Vec<f64> {
    let mut b = vec![0.0; s.ncols()];
    assemble_b_into(x_t, s, gamma0_col, &mut b);
    b
}

fn assemble_b_into(x_t: &[f64], s: &Array2<f64>, gamma0_col: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for ((s_row, &x), &g) in s.rows().into_iter().zip(x_t).zip(gamma0_col) {
        if g == 0.0 {
            continue;
        }
        for (o, &sv) in out.iter_mut().zip(s_row) {
            let diff = x - sv;
            *o += g * diff * diff;
        }
    }
}

/// `B[d, t] = sum_k gamma_(1)[t, k] (X[t, d] - S[d, k])^2`, shape `K0 x T`.
pub fn assemble_b_matrix(gamma1: &Array2<f64>, s: &Array2<f64>, x: &Array2<f64>) -> Array2<f64> {
    let (t_len, k0) = x.dim();
    let mut b = Array2::zeros((k0, t_len));
    for t in 0..t_len {
        let g = gamma1.row(t);
        for d in 0..k0 {
            let xd = x[[t, d]];
            b[[d, t]] = g.iter().zip(s.row(d)).map(|(gk, sk)| gk * (xd - sk) * (xd - sk)).sum();
        }
    }
    b
}

/// Additive pieces of the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    /// `sum_t sum_k gamma_(1) sum_d gamma_(0) (X - S)^2`.
    pub input: f64,
    /// `sum_t sum_n <gamma_(n+1), A_(n) gamma_(n)>`.
    pub coupling: f64,
    /// `eps_n sum_t <gamma_(n), ln gamma_(n)>` for `n = 1 .. N+1`.
    pub layer_entropy: Vec<f64>,
    /// Entropy regularizer of `gamma_(0)`.
    pub gamma0_entropy: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.input + self.coupling + self.layer_entropy.iter().sum::<f64>() + self.gamma0_entropy
    }
}

fn check_shapes(gammas: &GammaStack, model: &EonModel, x: &Array2<f64>) -> Result<()> {
    let dims = &model.hyper.layer_dims;
    let t_len = x.nrows();
    if x.ncols() != dims[0] {
        return Err(EonError::invalid(format!("X has {} features, model expects {}", x.ncols(), dims[0])));
    }
    if t_len != model.train_size {
        return Err(EonError::invalid(format!(
            "X has {t_len} samples, gamma0 was built for {}",
            model.train_size
        )));
    }
    if gammas.layers.len() != dims.len() - 1 {
        return Err(EonError::invalid("gamma stack depth differs from the model"));
    }
    for (n, layer) in gammas.layers.iter().enumerate() {
        if layer.dim() != (t_len, dims[n + 1]) {
            return Err(EonError::invalid(format!(
                "gamma layer {} has shape {:?}, expected {:?}",
                n + 1,
                layer.dim(),
                (t_len, dims[n + 1])
            )));
        }
    }
    if model.s.dim() != (dims[0], dims[1]) || model.theta.len() != dims.len() - 2 {
        return Err(EonError::invalid("model arrays do not match its layer dims"));
    }
    Ok(())
}

/// The gamma_(0) regularizer for the payload at sample count `samples`.
pub fn gamma0_entropy(gamma0: &Gamma0, eps0: f64, k0: usize, samples: usize) -> f64 {
    let (ew, es) = eps0_split(eps0, k0, samples);
    match gamma0 {
        Gamma0::FixedUniform => eps0 * (1.0 / (k0 * samples) as f64).ln(),
        Gamma0::FeatureWeights { w } => ew * sum_p_log_p(w),
        Gamma0::Rank1 { w, s } => ew * sum_p_log_p(w) + es * sum_p_log_p(s),
        Gamma0::FullMatrix { weights } => eps0 * sum_p_log_p(weights.as_slice().unwrap()),
    }
}

/// Loss terms of `(gammas, model)` on the training inputs `x`.
pub fn loss_breakdown(gammas: &GammaStack, model: &EonModel, x: &Array2<f64>) -> Result<LossBreakdown> {
    check_shapes(gammas, model, x)?;
    let h = &model.hyper;
    let a = AMatrices::from_theta(&model.theta, &h.delta, h.theta_floor);
    let t_len = x.nrows();
    let k0 = h.input_dim();
    let k1 = h.layer_dims[1];
    let depth = h.depth();

    let per_t: Vec<(f64, f64)> = (0..t_len)
        .into_par_iter()
        .map(|t| {
            let mut col = vec![0.0; k0];
            model.gamma0.column_into(t, t_len, &mut col);
            let mut b = vec![0.0; k1];
            assemble_b_into(x.row(t).as_slice().unwrap(), &model.s, &col, &mut b);
            let input: f64 = b.iter().zip(gammas.layers[0].row(t)).map(|(bk, g)| bk * g).sum();
            let mut coupling = 0.0;
            for n in 0..depth {
                let lower = gammas.layers[n].row(t);
                let upper = gammas.layers[n + 1].row(t);
                for (j, a_row) in a.mats[n].rows().into_iter().enumerate() {
                    let av: f64 = a_row.iter().zip(lower.iter()).map(|(x, y)| x * y).sum();
                    coupling += upper[j] * av;
                }
            }
            (input, coupling)
        })
        .collect();
    let input = per_t.iter().map(|p| p.0).sum();
    let coupling = per_t.iter().map(|p| p.1).sum();
    let layer_entropy = gammas
        .layers
        .iter()
        .enumerate()
        .map(|(n, layer)| h.epsilon[n + 1] * sum_p_log_p(layer.as_slice().unwrap()))
        .collect();
    Ok(LossBreakdown {
        input,
        coupling,
        layer_entropy,
        gamma0_entropy: gamma0_entropy(&model.gamma0, h.epsilon[0], k0, t_len),
    })
}

/// Total training loss. See [`loss_breakdown`].
pub fn loss(gammas: &GammaStack, model: &EonModel, x: &Array2<f64>) -> Result<f64> {
    loss_breakdown(gammas, model, x).map(|l| l.total())
}

/// Minimizer of the loss over the codebook: a weighted mean of the inputs
/// with weights `gamma_(0)[d, t] gamma_(1)[t, k]`. Entries with total weight
/// below `1e-300` keep their value from `prev`.
pub fn solve_s(gammas: &GammaStack, gamma0: &Gamma0, x: &Array2<f64>, prev: &Array2<f64>) -> Array2<f64> {
    let (t_len, k0) = x.dim();
    let g1 = gammas.gamma1();
    let k1 = g1.ncols();
    let mut num = Array2::<f64>::zeros((k0, k1));
    let mut den = Array2::<f64>::zeros((k0, k1));
    let mut col = vec![0.0; k0];
    for t in 0..t_len {
        gamma0.column_into(t, t_len, &mut col);
        let gt = g1.row(t);
        for d in 0..k0 {
            let xd = x[[t, d]];
            for k in 0..k1 {
                let w = col[d] * gt[k];
                num[[d, k]] += w * xd;
                den[[d, k]] += w;
            }
        }
    }
    Array2::from_shape_fn((k0, k1), |(d, k)| {
        let dk = den[[d, k]];
        if dk < 1e-300 {
            prev[[d, k]]
        } else {
            num[[d, k]] / dk
        }
    })
}

/// Minimizer of `-sum_k c_k ln theta_k` over `{theta >= floor, sum theta = 1}`.
///
/// The optimum is `theta_k = max(c_k / mu, floor)`; the unclamped entries are
/// the largest `c_k`, so the active set is found by scanning a sorted order.
pub(crate) fn water_fill(c: &[f64], floor: f64, out: &mut [f64]) {
    let k = c.len();
    let total: f64 = c.iter().sum();
    if !(total > 1e-300) {
        out.fill(1.0 / k as f64);
        return;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| c[j].total_cmp(&c[i]).then(i.cmp(&j)));
    let mut prefix = vec![0.0; k + 1];
    for (i, &idx) in order.iter().enumerate() {
        prefix[i + 1] = prefix[i] + c[idx];
    }
    for free in (1..=k).rev() {
        let mu = prefix[free] / (1.0 - (k - free) as f64 * floor);
        if c[order[free - 1]] / mu >= floor {
            for (rank, &idx) in order.iter().enumerate() {
                out[idx] = if rank < free { c[idx] / mu } else { floor };
            }
            return;
        }
    }
    unreachable!("the largest entry alone always clears the floor when K * floor < 1");
}

/// Minimizer of the loss over every `theta_(n)`: column `k_{n+1}` is the
/// normalized co-occurrence `sum_t gamma_(n)[t, .] gamma_(n+1)[t, k_{n+1}]`,
/// lifted to the floor where needed. Columns with no mass become uniform.
pub fn solve_theta(gammas: &GammaStack, floor: f64) -> Vec<StochasticMatrix> {
    gammas
        .layers
        .windows(2)
        .map(|pair| {
            let (lower, upper) = (&pair[0], &pair[1]);
            let (kn, kn1) = (lower.ncols(), upper.ncols());
            let mut counts = Array2::<f64>::zeros((kn, kn1));
            for (lo, up) in lower.rows().into_iter().zip(upper.rows()) {
                for (i, &l) in lo.iter().enumerate() {
                    if l == 0.0 {
                        continue;
                    }
                    for (j, &u) in up.iter().enumerate() {
                        counts[[i, j]] += l * u;
                    }
                }
            }
            let mut theta = Array2::zeros((kn, kn1));
            let mut buf = vec![0.0; kn];
            for j in 0..kn1 {
                let c = counts.column(j).to_vec();
                water_fill(&c, floor, &mut buf);
                theta.column_mut(j).assign(&ArrayView1::from(buf.as_slice()));
            }
            StochasticMatrix::from_array_unchecked(theta)
        })
        .collect()
}

/// Minimizer of the loss over `gamma_(0)` given `B` (see [`assemble_b_matrix`]).
///
/// Rank-1 payloads take one alternating pass: `w` first, then `s` against the new `w`.
pub fn solve_gamma0(current: &Gamma0, b: &Array2<f64>, eps0: f64) -> Result<Gamma0> {
    if !(eps0 > 0.0) {
        return Err(EonError::invalid(format!("eps0 must be positive, got {eps0}")));
    }
    let (k0, t_len) = b.dim();
    let (ew, es) = eps0_split(eps0, k0, t_len);
    let weights_for = |s: &dyn Fn(usize) -> f64, eps: f64| {
        let lin: Vec<f64> = b.rows().into_iter().map(|r| r.iter().enumerate().map(|(t, v)| v * s(t)).sum()).collect();
        let mut w = vec![0.0; k0];
        entropic_argmin_into(&lin, eps, &mut w);
        w
    };
    let inv_t = 1.0 / t_len as f64;
    let next = match current {
        Gamma0::FixedUniform => Gamma0::FixedUniform,
        Gamma0::FeatureWeights { .. } => Gamma0::FeatureWeights { w: weights_for(&|_| inv_t, ew) },
        Gamma0::Rank1 { s, .. } => {
            if s.len() != t_len {
                return Err(EonError::invalid("rank-1 instance weights do not match B"));
            }
            let w = weights_for(&|t| s[t], ew);
            let lin: Vec<f64> = b.columns().into_iter().map(|c| c.iter().zip(&w).map(|(x, y)| x * y).sum()).collect();
            let mut s_new = vec![0.0; t_len];
            entropic_argmin_into(&lin, es, &mut s_new);
            Gamma0::Rank1 { w, s: s_new }
        }
        Gamma0::FullMatrix { .. } => {
            let lin: Vec<f64> = b.iter().copied().collect();
            let mut flat = vec![0.0; lin.len()];
            entropic_argmin_into(&lin, eps0, &mut flat);
            Gamma0::FullMatrix {
                weights: Array2::from_shape_vec((k0, t_len), flat).expect("shape preserved"),
            }
        }
    };
    Ok(next)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UniquenessCheck {
    pub holds: bool,
    /// Smallest `min_n eps_n` that would guarantee a unique Gamma solution.
    pub threshold: f64,
}

/// Sufficient condition for a unique Gamma solution:
/// `min_{n >= 1} eps_n > max_n (||A_(n-1)|| + ||A_(n)||)` with `A_(0) = A_(N+1) = 0`.
pub fn check_uniqueness(epsilon: &[f64], a: &AMatrices) -> Result<UniquenessCheck> {
    let norms = a.spectral_norms()?;
    let depth = norms.len();
    if epsilon.len() != depth + 2 {
        return Err(EonError::invalid("epsilon must hold eps_0 .. eps_{N+1}"));
    }
    let norm = |n: usize| if n == 0 || n > depth { 0.0 } else { norms[n - 1] };
    let threshold = (1..=depth + 1).map(|n| norm(n - 1) + norm(n)).fold(0.0, f64::max);
    let min_eps = epsilon[1..].iter().copied().fold(f64::INFINITY, f64::min);
    Ok(UniquenessCheck { holds: min_eps > threshold, threshold })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContractionCheck {
    pub holds: bool,
    pub l_tilde: f64,
    pub l_bsf: f64,
    pub l_g: f64,
    pub l_h: f64,
}

/// Contraction test for the backward sweep: `L_G + L_H < 1 / L_bsf`, with
/// contraction factor `L_bsf L_H / (1 - L_bsf L_G)`.
pub fn check_contraction(epsilon: &[f64], a: &AMatrices, layer_dims: &[usize]) -> Result<ContractionCheck> {
    let norms = a.spectral_norms()?;
    let depth = norms.len();
    if epsilon.len() != depth + 2 || layer_dims.len() != depth + 2 {
        return Err(EonError::invalid("epsilon and layer dims must cover layers 0 .. N+1"));
    }
    let l_bsf = layer_dims[1..].iter().map(|&k| lipschitz_bound_unchecked(k)).fold(0.0, f64::max);
    let l_g = (1..=depth).map(|n| norms[n - 1] / epsilon[n]).fold(0.0, f64::max);
    let l_h = (1..=depth).map(|n| norms[n - 1] / epsilon[n + 1]).fold(0.0, f64::max);
    let holds = l_bsf * (l_g + l_h) < 1.0;
    let denom = 1.0 - l_bsf * l_g;
    let l_tilde = if denom > 0.0 { l_bsf * l_h / denom } else { f64::INFINITY };
    Ok(ContractionCheck { holds, l_tilde, l_bsf, l_g, l_h })
}

/// How the first iterate of a fit is chosen.
#[derive(Clone, Debug, Default)]
pub enum InitStrategy {
    /// Codebook columns at samples drawn by D-squared sampling, a uniform first
    /// conditional matrix, random deeper ones and uniform `gamma_(0)`.
    #[default]
    RandomSamples,
    /// Start from the arrays of an existing model with matching shapes.
    FromModel(Box<EonModel>),
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub init: InitStrategy,
    /// Independent starts with seeds `seed, seed + 1, ...`; the lowest final loss wins.
    pub restarts: usize,
    /// Record the contraction factor after every iteration.
    pub track_contraction: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { init: InitStrategy::RandomSamples, restarts: 1, track_contraction: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub loss: f64,
    pub gamma_secs: f64,
    pub s_secs: f64,
    pub theta_secs: f64,
    pub gamma0_secs: f64,
    pub gamma_iterations_max: usize,
    pub gamma_iterations_mean: f64,
    pub unconverged_points: usize,
    pub l_tilde: Option<f64>,
}

impl IterationRecord {
    pub fn total_secs(&self) -> f64 {
        self.gamma_secs + self.s_secs + self.theta_secs + self.gamma0_secs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitTrace {
    pub seed: u64,
    pub initial_loss: f64,
    pub iterations: Vec<IterationRecord>,
    /// Stopped on the loss tolerance rather than the iteration cap.
    pub converged: bool,
    /// Final loss of every restart, in seed order.
    pub restart_losses: Vec<f64>,
}

impl FitTrace {
    /// Initial loss followed by the loss after every outer iteration.
    pub fn losses(&self) -> Vec<f64> {
        std::iter::once(self.initial_loss).chain(self.iterations.iter().map(|r| r.loss)).collect()
    }

    pub fn final_loss(&self) -> f64 {
        self.iterations.last().map_or(self.initial_loss, |r| r.loss)
    }

    /// Every step satisfies `L(it + 1) <= L(it) + slack`.
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.losses().windows(2).all(|w| w[1] <= w[0] + slack)
    }

    pub fn mean_iteration_secs(&self) -> f64 {
        if self.iterations.is_empty() {
            return 0.0;
        }
        self.iterations.iter().map(IterationRecord::total_secs).sum::<f64>() / self.iterations.len() as f64
    }
}

/// Picks `k` sample indices by D-squared sampling: the first uniformly, each
/// later one with probability proportional to its squared distance from the
/// nearest pick so far. Falls back to uniform draws once every remaining
/// sample coincides with a pick.
fn seed_codebook(x: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let t_len = x.nrows();
    let mut picks = vec![rng.random_range(0..t_len)];
    let dist = |a: usize, b: usize| x.row(a).iter().zip(x.row(b)).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
    let mut nearest: Vec<f64> = (0..t_len).map(|t| dist(t, picks[0])).collect();
    while picks.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = t_len - 1;
            for (t, &d) in nearest.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = t;
                    break;
                }
                target -= d;
            }
            while nearest[chosen] == 0.0 {
                chosen -= 1;
            }
            chosen
        } else {
            rng.random_range(0..t_len)
        };
        picks.push(next);
        for (t, d) in nearest.iter_mut().enumerate() {
            *d = d.min(dist(t, next));
        }
    }
    picks
}

fn initial_model(dataset: &Dataset, hyper: &Hyperparameters, seed: u64, init: &InitStrategy) -> Result<EonModel> {
    let dims = &hyper.layer_dims;
    let t_len = dataset.len();
    if let InitStrategy::FromModel(m) = init {
        if m.hyper.layer_dims != *dims || m.gamma0.mode() != hyper.gamma0_mode || m.train_size != t_len {
            return Err(EonError::invalid("initial model does not match the data and hyperparameters"));
        }
        let mut m = (**m).clone();
        m.hyper = hyper.clone();
        return Ok(m);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = dataset.x();
    let picks = seed_codebook(x, dims[1], &mut rng);
    let s = Array2::from_shape_fn((dims[0], dims[1]), |(d, k)| x[[picks[k], d]]);
    // A uniform first conditional matrix makes the first Gamma step assign
    // points by codebook distance alone.
    let theta = dims[1..]
        .windows(2)
        .enumerate()
        .map(|(n, p)| {
            if n == 0 {
                return Array2::from_elem((p[0], p[1]), 1.0 / p[0] as f64);
            }
            let mut th = Array2::from_shape_fn((p[0], p[1]), |_| rng.random_range(0.5..1.5));
            for mut col in th.columns_mut() {
                let sum = col.sum();
                col.mapv_inplace(|v| v / sum);
            }
            th
        })
        .collect();
    Ok(EonModel {
        s,
        theta,
        gamma0: Gamma0::uniform(hyper.gamma0_mode, dims[0], t_len),
        hyper: hyper.clone(),
        train_size: t_len,
    })
}

fn gamma_step(
    gammas: &mut GammaStack,
    model: &EonModel,
    a: &AMatrices,
    dataset: &Dataset,
) -> Result<(usize, f64, usize)> {
    let h = &model.hyper;
    let t_len = dataset.len();
    let k0 = h.input_dim();
    let x = dataset.x();
    let pi = dataset.pi();
    let results: Vec<GammaSolve> = (0..t_len)
        .into_par_iter()
        .map(|t| {
            let mut col = vec![0.0; k0];
            model.gamma0.column_into(t, t_len, &mut col);
            let b = assemble_b_t(x.row(t).as_slice().unwrap(), &model.s, &col);
            let pin = pi.row(t);
            solve_gamma_point(
                &b,
                a,
                &h.epsilon,
                LastLayer::Pinned(pin.as_slice().unwrap()),
                gammas.row(t),
                h.max_gamma_iters,
                h.gamma_tolerance,
            )
        })
        .collect::<Result<_>>()?;
    let mut max_it = 0;
    let mut sum_it = 0usize;
    let mut unconverged = 0;
    for (t, r) in results.iter().enumerate() {
        gammas.set_row(t, &r.row);
        max_it = max_it.max(r.iterations);
        sum_it += r.iterations;
        unconverged += usize::from(!r.converged);
    }
    Ok((max_it, sum_it as f64 / t_len as f64, unconverged))
}

fn fit_once(
    dataset: &Dataset,
    hyper: &Hyperparameters,
    seed: u64,
    options: &FitOptions,
) -> Result<(EonModel, FitTrace)> {
    let mut model = initial_model(dataset, hyper, seed, &options.init)?;
    let x = dataset.x();
    let mut gammas = GammaStack::for_training(&hyper.layer_dims, dataset.pi());
    let initial_loss = loss(&gammas, &model, x)?;
    let mut previous = initial_loss;
    let mut iterations = Vec::new();
    let mut converged = false;

    for it in 0..hyper.max_outer_iters {
        let a = AMatrices::from_theta(&model.theta, &hyper.delta, hyper.theta_floor);
        let clock = Instant::now();
        let (gamma_iterations_max, gamma_iterations_mean, unconverged_points) =
            gamma_step(&mut gammas, &model, &a, dataset).map_err(|e| e.with_iteration(it))?;
        let gamma_secs = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        model.s = solve_s(&gammas, &model.gamma0, x, &model.s);
        let s_secs = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        model.theta = solve_theta(&gammas, hyper.theta_floor).into_iter().map(StochasticMatrix::into_array).collect();
        let theta_secs = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        if hyper.gamma0_mode != Gamma0Mode::FixedUniform {
            let b = assemble_b_matrix(gammas.gamma1(), &model.s, x);
            model.gamma0 = solve_gamma0(&model.gamma0, &b, hyper.epsilon[0]).map_err(|e| e.with_iteration(it))?;
        }
        let gamma0_secs = clock.elapsed().as_secs_f64();

        let current = loss(&gammas, &model, x)?;
        if !current.is_finite() {
            return Err(EonError::Numerical { layer: 0, context: format!("outer iteration {it}: loss is {current}") });
        }
        let l_tilde = if options.track_contraction {
            let a = AMatrices::from_theta(&model.theta, &hyper.delta, hyper.theta_floor);
            check_contraction(&hyper.epsilon, &a, &hyper.layer_dims)
                .ok()
                .filter(|c| c.holds)
                .map(|c| c.l_tilde)
        } else {
            None
        };
        iterations.push(IterationRecord {
            loss: current,
            gamma_secs,
            s_secs,
            theta_secs,
            gamma0_secs,
            gamma_iterations_max,
            gamma_iterations_mean,
            unconverged_points,
            l_tilde,
        });
        let change = (previous - current).abs();
        previous = current;
        if change < hyper.tolerance * current.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    let trace = FitTrace { seed, initial_loss, iterations, converged, restart_losses: Vec::new() };
    Ok((model, trace))
}

/// Trains a model on `dataset`.
///
/// Each outer iteration solves the Gamma block for every sample (in
/// parallel), then the codebook, the conditional matrices and `gamma_(0)`.
/// Iteration stops once the loss changes by less than
/// `tolerance * max(1, |L|)` or after `max_outer_iters`.
pub fn fit(dataset: &Dataset, hyper: &Hyperparameters, options: &FitOptions) -> Result<(EonModel, FitTrace)> {
    hyper.validate()?;
    if dataset.n_features() != hyper.input_dim() {
        return Err(EonError::invalid(format!(
            "dataset has {} features, K0 = {}",
            dataset.n_features(),
            hyper.input_dim()
        )));
    }
    if dataset.n_classes() != hyper.label_dim() {
        return Err(EonError::invalid(format!(
            "dataset has {} label columns, K_(N+1) = {}",
            dataset.n_classes(),
            hyper.label_dim()
        )));
    }
    let restarts = options.restarts.max(1);
    let mut best: Option<(EonModel, FitTrace)> = None;
    let mut finals = Vec::with_capacity(restarts);
    for r in 0..restarts {
        let seed = hyper.seed.wrapping_add(r as u64);
        let (model, trace) = fit_once(dataset, hyper, seed, options)?;
        finals.push(trace.final_loss());
        if best.as_ref().is_none_or(|(_, b)| trace.final_loss() < b.final_loss()) {
            best = Some((model, trace));
        }
    }
    let (model, mut trace) = best.expect("at least one restart");
    trace.restart_losses = finals;
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codebook_seeding_picks_distinct_points() {
        let x = Array2::from_shape_fn((40, 2), |(t, d)| (t * (d + 1)) as f64);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picks = seed_codebook(&x, 10, &mut rng);
            picks.sort_unstable();
            picks.dedup();
            assert_eq!(picks.len(), 10);
        }
    }

    #[test]
    fn codebook_seeding_spreads_over_separated_groups() {
        // Three tight groups far apart: D-squared sampling lands one pick in each.
        let x = Array2::from_shape_fn((300, 1), |(t, _)| (t / 100) as f64 * 100.0 + (t % 100) as f64 * 1e-3);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut groups: Vec<usize> = seed_codebook(&x, 3, &mut rng).into_iter().map(|t| t / 100).collect();
            groups.sort_unstable();
            assert_eq!(groups, vec![0, 1, 2]);
        }
    }

    #[test]
    fn codebook_seeding_repeats_when_points_run_out() {
        let x = Array2::from_elem((5, 2), 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let picks = seed_codebook(&x, 8, &mut rng);
        assert_eq!(picks.len(), 8);
        assert!(picks.iter().all(|&t| t < 5));
    }

    #[test]
    fn water_fill_without_active_floor_is_normalization() {
        let mut out = [0.0; 3];
        water_fill(&[1.0, 2.0, 1.0], 1e-12, &mut out);
        assert!((out[1] - 0.5).abs() < 1e-15 && (out[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn water_fill_clamps_small_entries() {
        let mut out = [0.0; 3];
        water_fill(&[0.0, 3.0, 1.0], 0.1, &mut out);
        assert_eq!(out[0], 0.1);
        assert!((out[1] - 0.675).abs() < 1e-15);
        assert!((out[2] - 0.225).abs() < 1e-15);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn water_fill_beats_feasible_points() {
        use rand::{Rng, SeedableRng};
        let c = [0.02, 5.0, 1.0, 0.0];
        let floor = 0.05;
        let obj = |th: &[f64]| -> f64 { -c.iter().zip(th).map(|(c, t)| c * t.ln()).sum::<f64>() };
        let mut wf = [0.0; 4];
        water_fill(&c, floor, &mut wf);
        assert!(wf.iter().all(|&v| v >= floor));
        assert!((wf.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let raw: Vec<f64> = (0..4).map(|_| -rng.random::<f64>().ln()).collect();
            let total: f64 = raw.iter().sum();
            let free = 1.0 - 4.0 * floor;
            let th: Vec<f64> = raw.iter().map(|v| floor + free * v / total).collect();
            assert!(obj(&wf) <= obj(&th) + 1e-12);
        }
    }

    #[test]
    fn water_fill_zero_mass_is_uniform() {
        let mut out = [0.0; 4];
        water_fill(&[0.0; 4], 1e-12, &mut out);
        assert_eq!(out, [0.25; 4]);
    }
}
