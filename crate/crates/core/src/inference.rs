//! Applying a trained model to new points.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{EonError, Result};
use crate::model::{eps0_split, AMatrices, EonModel};
use crate::simplex::{entropic_argmin_into, BlockVector, ProbVector};
use crate::training::{assemble_b_t, solve_gamma_point, LastLayer};

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub label_dist: ProbVector,
    /// Similarity of the input to the training domain, in `(0, 1]`.
    pub reliability: f64,
    pub gamma_stack: BlockVector,
    pub converged: bool,
    pub iterations: usize,
}

/// A validated model with its coupling matrices precomputed.
#[derive(Clone, Debug)]
pub struct Predictor<'m> {
    model: &'m EonModel,
    a: AMatrices,
    gamma0_col: Vec<f64>,
    weights: Vec<f64>,
    temperature: f64,
}

impl<'m> Predictor<'m> {
    pub fn new(model: &'m EonModel) -> Result<Self> {
        let a = model.build_a_matrices()?;
        let k0 = model.hyper.input_dim();
        let (_, temperature) = eps0_split(model.hyper.epsilon[0], k0, model.train_size);
        Ok(Predictor {
            a,
            gamma0_col: model.gamma0.unseen_column(k0, model.train_size),
            weights: model.gamma0.feature_weights(k0),
            temperature,
            model,
        })
    }

    pub fn model(&self) -> &EonModel {
        self.model
    }

    pub fn a_matrices(&self) -> &AMatrices {
        &self.a
    }

    fn linear_term(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.model.hyper.input_dim() {
            return Err(EonError::invalid(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.model.hyper.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(EonError::invalid("input is not finite"));
        }
        Ok(assemble_b_t(x, &self.model.s, &self.gamma0_col))
    }

    /// Feed-forward starting point: `gamma_(1)` from the input term alone,
    /// then `gamma_(n+1) = theta_(n) gamma_(n)`.
    pub fn forward_init(&self, x: &[f64]) -> Result<BlockVector> {
        let b = self.linear_term(x)?;
        let mut g1 = vec![0.0; b.len()];
        entropic_argmin_into(&b, self.model.hyper.epsilon[1], &mut g1);
        let mut blocks = vec![g1];
        for th in &self.model.theta {
            let prev = blocks.last().unwrap();
            let next: Vec<f64> = th.columns().into_iter().map(|c| c.iter().zip(prev).map(|(a, b)| a * b).sum()).collect();
            blocks.push(next);
        }
        Ok(BlockVector::new(blocks))
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let init = self.forward_init(x)?;
        self.predict_from(x, init)
    }

    /// Solve the free-label fixed point starting from `init`.
    pub fn predict_from(&self, x: &[f64], init: BlockVector) -> Result<Prediction> {
        let b = self.linear_term(x)?;
        let h = &self.model.hyper;
        if init.block_sizes() != h.layer_dims[1..] {
            return Err(EonError::invalid("initial gamma row does not match the layer dims"));
        }
        let solved =
            solve_gamma_point(&b, &self.a, &h.epsilon, LastLayer::Free, init, h.max_gamma_iters, h.gamma_tolerance)?;
        let label = solved.row.blocks.last().unwrap().clone();
        let reliability = self.reliability_given(x, &solved.row.blocks[0]);
        Ok(Prediction {
            label_dist: ProbVector::try_new(label)?,
            reliability,
            gamma_stack: solved.row,
            converged: solved.converged,
            iterations: solved.iterations,
        })
    }

    /// `exp(-sum_k gamma1[k] sum_d w_d (x_d - S[d, k])^2 / eps_0s)`.
    pub fn reliability_given(&self, x: &[f64], gamma1: &[f64]) -> f64 {
        let s = &self.model.s;
        let mut dist = 0.0;
        for (k, &g) in gamma1.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let dk: f64 = x
                .iter()
                .zip(&self.weights)
                .enumerate()
                .filter(|(_, (_, &w))| w != 0.0)
                .map(|(d, (&xd, &w))| w * (xd - s[[d, k]]).powi(2))
                .sum();
            dist += g * dk;
        }
        let score = if dist == 0.0 { 1.0 } else { (-dist / self.temperature).exp() };
        score.clamp(f64::MIN_POSITIVE, 1.0)
    }
}

pub fn predict(model: &EonModel, x: &[f64]) -> Result<Prediction> {
    Predictor::new(model)?.predict(x)
}

pub fn reliability_score(model: &EonModel, x: &[f64]) -> Result<f64> {
    predict(model, x).map(|p| p.reliability)
}

/// Predicts every row of `x` (`n x K0`) in parallel; errors are kept per row.
pub fn predict_batch(model: &EonModel, x: &Array2<f64>) -> Result<Vec<Result<Prediction>>> {
    let predictor = Predictor::new(model)?;
    Ok((0..x.nrows())
        .into_par_iter()
        .map(|i| predictor.predict(&x.row(i).to_vec()))
        .collect())
}
