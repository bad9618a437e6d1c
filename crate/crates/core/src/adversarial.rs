//! Searching for inputs whose predicted label distribution is maximally uncertain.
//!
//! The label layer is pinned to the uniform distribution and the search
//! alternates between the Gamma block and the input itself. Both blocks have
//! closed-form minimizers, so the adversarial objective never increases.

use ndarray::Array2;

use crate::error::{EonError, Result};
use crate::inference::Predictor;
use crate::model::{AMatrices, EonModel};
use crate::simplex::{entropic_argmin_into, label_entropy, sum_p_log_p, BlockVector, ProbVector};
use crate::training::{assemble_b_t, solve_gamma_point, LastLayer};

#[derive(Clone, Debug)]
pub struct AdversarialOptions {
    /// Starting input; defaults to the mean of the codebook columns.
    pub init_x: Option<Vec<f64>>,
    /// Relative objective change that ends the search.
    pub tol: f64,
    pub max_iters: usize,
    /// Re-solve the input weights `gamma_(0)` for the current point instead of
    /// keeping the trained ones.
    pub resolve_gamma0: bool,
}

impl Default for AdversarialOptions {
    fn default() -> Self {
        AdversarialOptions { init_x: None, tol: 1e-12, max_iters: 1000, resolve_gamma0: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialResult {
    pub x_adv: Vec<f64>,
    pub gamma_stack: BlockVector,
    /// Normalized entropy of the model's prediction at `x_adv`.
    pub final_label_entropy: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every iteration.
    pub objective: Vec<f64>,
}

/// `x_d = sum_k gamma1[k] S[d, k]`.
pub fn solve_x_given_gamma(gamma1: &ProbVector, s: &Array2<f64>) -> Result<Vec<f64>> {
    if gamma1.len() != s.ncols() {
        return Err(EonError::invalid(format!(
            "gamma1 has {} entries, codebook has {} columns",
            gamma1.len(),
            s.ncols()
        )));
    }
    Ok(x_from_gamma(gamma1.as_slice(), s))
}

fn x_from_gamma(gamma1: &[f64], s: &Array2<f64>) -> Vec<f64> {
    s.rows().into_iter().map(|r| r.iter().zip(gamma1).map(|(a, b)| a * b).sum()).collect()
}

/// Adversarial objective of one point: input term, couplings, layer entropies
/// for `n = 1 .. N`, and the `gamma_(0)` entropy of `gamma0_col`.
pub fn adversarial_objective(
    model: &EonModel,
    a: &AMatrices,
    x: &[f64],
    row: &BlockVector,
    gamma0_col: &[f64],
) -> f64 {
    let h = &model.hyper;
    let b = assemble_b_t(x, &model.s, gamma0_col);
    let mut total: f64 = b.iter().zip(&row.blocks[0]).map(|(x, y)| x * y).sum();
    for (n, mat) in a.mats.iter().enumerate() {
        let lower = &row.blocks[n];
        let upper = &row.blocks[n + 1];
        for (j, a_row) in mat.rows().into_iter().enumerate() {
            total += upper[j] * a_row.iter().zip(lower).map(|(x, y)| x * y).sum::<f64>();
        }
    }
    for n in 1..=h.depth() {
        total += h.epsilon[n] * sum_p_log_p(&row.blocks[n - 1]);
    }
    total + h.epsilon[0] * sum_p_log_p(gamma0_col)
}

/// `gamma0 = m softmax(-B / eps_0)` with `B[d] = sum_k gamma1[k] (x_d - S[d, k])^2`
/// and `m` the mass of the trained column.
fn resolve_column(model: &EonModel, x: &[f64], gamma1: &[f64], mass: f64) -> Vec<f64> {
    let b: Vec<f64> = model
        .s
        .rows()
        .into_iter()
        .zip(x)
        .map(|(r, &xd)| r.iter().zip(gamma1).map(|(s, g)| g * (xd - s) * (xd - s)).sum())
        .collect();
    let mut col = vec![0.0; b.len()];
    entropic_argmin_into(&b, model.hyper.epsilon[0], &mut col);
    col.iter_mut().for_each(|v| *v *= mass);
    col
}

pub fn find_adversarial(model: &EonModel, options: &AdversarialOptions) -> Result<AdversarialResult> {
    let predictor = Predictor::new(model)?;
    let a = predictor.a_matrices();
    let h = &model.hyper;
    let k0 = h.input_dim();
    let mut x = match &options.init_x {
        Some(x) if x.len() != k0 => {
            return Err(EonError::invalid(format!("init_x has {} entries, expected {k0}", x.len())))
        }
        Some(x) if x.iter().any(|v| !v.is_finite()) => return Err(EonError::invalid("init_x is not finite")),
        Some(x) => x.clone(),
        None => model.s.rows().into_iter().map(|r| r.mean().unwrap_or(0.0)).collect(),
    };
    let mut col = model.gamma0.unseen_column(k0, model.train_size);
    let mass: f64 = col.iter().sum();
    let uniform_label = vec![1.0 / h.label_dim() as f64; h.label_dim()];
    let mut row = BlockVector::new(h.layer_dims[1..].iter().map(|&k| vec![1.0 / k as f64; k]).collect());

    let mut objective = Vec::new();
    let mut previous = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iters {
        iterations += 1;
        let b = assemble_b_t(&x, &model.s, &col);
        row = solve_gamma_point(
            &b,
            a,
            &h.epsilon,
            LastLayer::Pinned(&uniform_label),
            row,
            h.max_gamma_iters,
            h.gamma_tolerance,
        )?
        .row;
        if options.resolve_gamma0 {
            col = resolve_column(model, &x, &row.blocks[0], mass);
        }
        x = x_from_gamma(&row.blocks[0], &model.s);
        let value = adversarial_objective(model, a, &x, &row, &col);
        if !value.is_finite() {
            return Err(EonError::Numerical { layer: 0, context: format!("adversarial objective is {value}") });
        }
        objective.push(value);
        if (previous - value).abs() < options.tol * value.abs().max(1.0) {
            converged = true;
            break;
        }
        previous = value;
    }
    let final_label_entropy = label_entropy(predictor.predict(&x)?.label_dist.as_slice());
    Ok(AdversarialResult { x_adv: x, gamma_stack: row, final_label_entropy, iterations, converged, objective })
}
