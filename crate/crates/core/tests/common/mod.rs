#![allow(dead_code)]

use eon_core::training::{Dataset, GammaStack};
use eon_core::{EonModel, Gamma0, Gamma0Mode, Hyperparameters};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

pub fn random_stochastic(rng: &mut ChaCha8Rng, rows: usize, cols: usize, floor: f64) -> Array2<f64> {
    let mut m = Array2::zeros((rows, cols));
    for j in 0..cols {
        let p = random_simplex(rng, rows);
        let free = 1.0 - rows as f64 * floor;
        for i in 0..rows {
            m[[i, j]] = floor + free * p[i];
        }
    }
    m
}

pub fn random_gamma0(rng: &mut ChaCha8Rng, mode: Gamma0Mode, k0: usize, t: usize) -> Gamma0 {
    match mode {
        Gamma0Mode::FixedUniform => Gamma0::FixedUniform,
        Gamma0Mode::FeatureWeights => Gamma0::FeatureWeights { w: random_simplex(rng, k0) },
        Gamma0Mode::Rank1 => Gamma0::Rank1 { w: random_simplex(rng, k0), s: random_simplex(rng, t) },
        Gamma0Mode::FullMatrix => Gamma0::FullMatrix {
            weights: Array2::from_shape_vec((k0, t), random_simplex(rng, k0 * t)).unwrap(),
        },
    }
}

pub fn random_hyper(rng: &mut ChaCha8Rng, dims: Vec<usize>, mode: Gamma0Mode) -> Hyperparameters {
    let mut h = Hyperparameters::new(dims, mode);
    let depth = h.depth();
    h.epsilon = (0..depth + 2).map(|_| 10f64.powf(rng.random_range(-3.0..0.0))).collect();
    h.delta = (0..depth).map(|_| 10f64.powf(rng.random_range(-2.0..0.0))).collect();
    h
}

pub fn random_model(rng: &mut ChaCha8Rng, hyper: Hyperparameters, t: usize) -> EonModel {
    let dims = hyper.layer_dims.clone();
    let floor = hyper.theta_floor;
    EonModel {
        s: Array2::from_shape_fn((dims[0], dims[1]), |_| rng.random::<f64>()),
        theta: dims[1..].windows(2).map(|p| random_stochastic(rng, p[0], p[1], floor)).collect(),
        gamma0: random_gamma0(rng, hyper.gamma0_mode, dims[0], t),
        hyper,
        train_size: t,
    }
}

pub fn random_dataset(rng: &mut ChaCha8Rng, t: usize, k0: usize, classes: usize) -> Dataset {
    let x = Array2::from_shape_fn((t, k0), |_| rng.random::<f64>());
    let labels: Vec<usize> = (0..t).map(|i| if i < classes { i } else { rng.random_range(0..classes) }).collect();
    Dataset::from_labels(x, &labels, classes).unwrap()
}

pub fn random_gammas(rng: &mut ChaCha8Rng, dims: &[usize], pi: &Array2<f64>) -> GammaStack {
    let t = pi.nrows();
    let mut g = GammaStack::for_training(dims, pi);
    let hidden = g.layers.len() - 1;
    for layer in g.layers.iter_mut().take(hidden) {
        for i in 0..t {
            let p = random_simplex(rng, layer.ncols());
            for (k, v) in p.into_iter().enumerate() {
                layer[[i, k]] = v;
            }
        }
    }
    g
}

/// Straight transcription of the loss with `gamma_(0)` expanded to a full
/// `K0 x T` matrix and every sum written out.
pub fn brute_force_loss(g: &GammaStack, m: &EonModel, x: &Array2<f64>) -> f64 {
    let h = &m.hyper;
    let (t_len, k0) = x.dim();
    let mut g0 = Array2::<f64>::zeros((k0, t_len));
    for t in 0..t_len {
        for d in 0..k0 {
            g0[[d, t]] = match &m.gamma0 {
                Gamma0::FixedUniform => 1.0 / (k0 * t_len) as f64,
                Gamma0::FeatureWeights { w } => w[d] / t_len as f64,
                Gamma0::Rank1 { w, s } => w[d] * s[t],
                Gamma0::FullMatrix { weights } => weights[[d, t]],
            };
        }
    }
    let xlogx = |v: f64| if v > 0.0 { v * v.ln() } else { 0.0 };
    let mut total = 0.0;
    for t in 0..t_len {
        for k in 0..h.layer_dims[1] {
            for d in 0..k0 {
                total += g.layers[0][[t, k]] * g0[[d, t]] * (x[[t, d]] - m.s[[d, k]]).powi(2);
            }
        }
        for n in 0..h.depth() {
            for i in 0..h.layer_dims[n + 1] {
                for j in 0..h.layer_dims[n + 2] {
                    total -= h.delta[n]
                        * g.layers[n][[t, i]]
                        * g.layers[n + 1][[t, j]]
                        * m.theta[n][[i, j]].max(h.theta_floor).ln();
                }
            }
        }
        for (n, layer) in g.layers.iter().enumerate() {
            for k in 0..layer.ncols() {
                total += h.epsilon[n + 1] * xlogx(layer[[t, k]]);
            }
        }
    }
    let eps0 = h.epsilon[0];
    let total_log = ((k0 * t_len) as f64).ln();
    let (ew, es) = if total_log > 0.0 {
        ((k0 as f64).ln() / total_log * eps0, (t_len as f64).ln() / total_log * eps0)
    } else {
        (0.0, 0.0)
    };
    total
        + match &m.gamma0 {
            Gamma0::FixedUniform => (0..k0 * t_len).map(|_| eps0 * xlogx(1.0 / (k0 * t_len) as f64)).sum::<f64>(),
            Gamma0::FeatureWeights { w } => ew * w.iter().map(|&v| xlogx(v)).sum::<f64>(),
            Gamma0::Rank1 { w, s } => {
                ew * w.iter().map(|&v| xlogx(v)).sum::<f64>() + es * s.iter().map(|&v| xlogx(v)).sum::<f64>()
            }
            Gamma0::FullMatrix { weights } => eps0 * weights.iter().map(|&v| xlogx(v)).sum::<f64>(),
        }
}
