//! Trained model artifact, validation, complexity accounting and persistence.
//!
//! Orientation conventions used throughout the crate:
//!
//! * `s` (the codebook) is `K0 x K1`; column `k` is a reference position.
//! * `theta[n-1]` is the layer-`n` conditional matrix, `K_n x K_{n+1}`, with
//!   every column summing to one.
//! * `A_(n)` is `K_{n+1} x K_n` with entries `-delta_n ln theta_n[k_n, k_{n+1}]`,
//!   so the coupling term of the loss reads `<gamma_(n+1), A_(n) gamma_(n)>`.

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;

use crate::error::{EonError, Result};
use crate::simplex::{self, SIMPLEX_TOL};

/// How the input-layer probabilities `gamma_(0)` are parameterized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Gamma0Mode {
    /// `gamma_(0) = 1 / (K0 T)` everywhere, not learned.
    FixedUniform,
    /// `gamma_(0) = w 1^T / T`.
    FeatureWeights,
    /// `gamma_(0) = w s^T`.
    Rank1,
    /// Arbitrary `K0 x T` probability matrix.
    FullMatrix,
}

impl Gamma0Mode {
    pub const ALL: [Gamma0Mode; 4] = [
        Gamma0Mode::FixedUniform,
        Gamma0Mode::FeatureWeights,
        Gamma0Mode::Rank1,
        Gamma0Mode::FullMatrix,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Gamma0Mode::FixedUniform => "fixed-uniform",
            Gamma0Mode::FeatureWeights => "feature-weights",
            Gamma0Mode::Rank1 => "rank-1",
            Gamma0Mode::FullMatrix => "full-matrix",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Gamma0Mode::FixedUniform => 0,
            Gamma0Mode::FeatureWeights => 1,
            Gamma0Mode::Rank1 => 2,
            Gamma0Mode::FullMatrix => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Gamma0Mode::ALL.into_iter().find(|m| m.code() == code)
    }
}

impl fmt::Display for Gamma0Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Gamma0Mode {
    type Err = EonError;

    fn from_str(s: &str) -> Result<Self> {
        Gamma0Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim())
            .ok_or_else(|| EonError::invalid(format!("unknown gamma0 mode {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hyperparameters {
    /// `K0, K1, ..., K_{N+1}`.
    pub layer_dims: Vec<usize>,
    /// `eps_0, ..., eps_{N+1}`.
    pub epsilon: Vec<f64>,
    /// `delta_1, ..., delta_N`.
    pub delta: Vec<f64>,
    pub gamma0_mode: Gamma0Mode,
    /// Relative loss change that stops the outer loop.
    pub tolerance: f64,
    pub max_outer_iters: usize,
    pub max_gamma_iters: usize,
    /// Euclidean change of a stacked gamma row that stops the inner sweep.
    pub gamma_tolerance: f64,
    pub theta_floor: f64,
    pub seed: u64,
}

impl Hyperparameters {
    /// Defaults for every knob except the architecture.
    pub fn new(layer_dims: Vec<usize>, gamma0_mode: Gamma0Mode) -> Self {
        let depth = layer_dims.len().saturating_sub(2);
        Hyperparameters {
            epsilon: vec![1e-3; depth + 2],
            delta: vec![1e-1; depth],
            layer_dims,
            gamma0_mode,
            tolerance: 1e-8,
            max_outer_iters: 500,
            max_gamma_iters: 100,
            gamma_tolerance: 1e-10,
            theta_floor: 1e-12,
            seed: 0,
        }
    }

    /// Number of entropic layers `N`.
    pub fn depth(&self) -> usize {
        self.layer_dims.len().saturating_sub(2)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn label_dim(&self) -> usize {
        *self.layer_dims.last().expect("layer dims are non-empty")
    }

    /// Split `eps_0` into the feature and instance parts used by the factored
    /// `gamma_(0)` modes: `(ln K0, ln T) / ln(K0 T) * eps_0`.
    pub fn eps0_split(&self, samples: usize) -> (f64, f64) {
        eps0_split(self.epsilon[0], self.input_dim(), samples)
    }

    pub fn problems(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let dims = &self.layer_dims;
        if dims.len() < 3 {
            out.push(Violation::new(
                "hyper.layer_dims",
                format!("need at least K0, K1, K2; got {} dims", dims.len()),
                f64::NAN,
            ));
            return out;
        }
        for (i, &k) in dims.iter().enumerate() {
            if k == 0 {
                out.push(Violation::new(format!("hyper.layer_dims[{i}]"), "dimension is 0", 0.0));
            }
        }
        let n = self.depth();
        if self.epsilon.len() != n + 2 {
            out.push(Violation::new(
                "hyper.epsilon",
                format!("expected {} entries, found {}", n + 2, self.epsilon.len()),
                f64::NAN,
            ));
        }
        if self.delta.len() != n {
            out.push(Violation::new(
                "hyper.delta",
                format!("expected {n} entries, found {}", self.delta.len()),
                f64::NAN,
            ));
        }
        for (i, &e) in self.epsilon.iter().enumerate() {
            if !(e > 0.0) || !e.is_finite() {
                out.push(Violation::new(format!("hyper.epsilon[{i}]"), "must be positive and finite", e));
            }
        }
        for (i, &d) in self.delta.iter().enumerate() {
            if !(d > 0.0) || !d.is_finite() {
                out.push(Violation::new(format!("hyper.delta[{}]", i + 1), "must be positive and finite", d));
            }
        }
        let kmax = dims.iter().copied().max().unwrap_or(1).max(1) as f64;
        if !(self.theta_floor > 0.0 && self.theta_floor < 1.0 / kmax) {
            out.push(Violation::new(
                "hyper.theta_floor",
                format!("must lie in (0, 1/{kmax})"),
                self.theta_floor,
            ));
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            out.push(Violation::new("hyper.tolerance", "must be non-negative", self.tolerance));
        }
        if self.gamma_tolerance.is_nan() || self.gamma_tolerance < 0.0 {
            out.push(Violation::new("hyper.gamma_tolerance", "must be non-negative", self.gamma_tolerance));
        }
        if self.max_gamma_iters == 0 {
            out.push(Violation::new("hyper.max_gamma_iters", "must be at least 1", 0.0));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(EonError::Validation(problems))
        }
    }
}

pub(crate) fn eps0_split(eps0: f64, k0: usize, samples: usize) -> (f64, f64) {
    let total = ((k0 * samples) as f64).ln();
    if total <= 0.0 {
        return (0.0, 0.0);
    }
    let w = (k0 as f64).ln() / total * eps0;
    let s = (samples as f64).ln() / total * eps0;
    (w, s)
}

/// Learned input-layer probabilities, per [`Gamma0Mode`].
#[derive(Clone, Debug, PartialEq)]
pub enum Gamma0 {
    FixedUniform,
    FeatureWeights { w: Vec<f64> },
    Rank1 { w: Vec<f64>, s: Vec<f64> },
    /// `K0 x T`, all entries summing to one.
    FullMatrix { weights: Array2<f64> },
}

impl Gamma0 {
    /// Uniform initial payload for `mode`.
    pub fn uniform(mode: Gamma0Mode, k0: usize, samples: usize) -> Self {
        match mode {
            Gamma0Mode::FixedUniform => Gamma0::FixedUniform,
            Gamma0Mode::FeatureWeights => Gamma0::FeatureWeights { w: vec![1.0 / k0 as f64; k0] },
            Gamma0Mode::Rank1 => Gamma0::Rank1 {
                w: vec![1.0 / k0 as f64; k0],
                s: vec![1.0 / samples as f64; samples],
            },
            Gamma0Mode::FullMatrix => Gamma0::FullMatrix {
                weights: Array2::from_elem((k0, samples), 1.0 / (k0 * samples) as f64),
            },
        }
    }

    pub fn mode(&self) -> Gamma0Mode {
        match self {
            Gamma0::FixedUniform => Gamma0Mode::FixedUniform,
            Gamma0::FeatureWeights { .. } => Gamma0Mode::FeatureWeights,
            Gamma0::Rank1 { .. } => Gamma0Mode::Rank1,
            Gamma0::FullMatrix { .. } => Gamma0Mode::FullMatrix,
        }
    }

    /// Marginal feature weights `w_d = sum_t gamma_(0)[d, t]`; uniform in fixed mode.
    pub fn feature_weights(&self, k0: usize) -> Vec<f64> {
        match self {
            Gamma0::FixedUniform => vec![1.0 / k0 as f64; k0],
            Gamma0::FeatureWeights { w } | Gamma0::Rank1 { w, .. } => w.clone(),
            Gamma0::FullMatrix { weights } => weights.rows().into_iter().map(|r| r.sum()).collect(),
        }
    }

    /// Column `t` of `gamma_(0)` for a training set of `samples` points.
    pub fn column_into(&self, t: usize, samples: usize, out: &mut [f64]) {
        let k0 = out.len();
        match self {
            Gamma0::FixedUniform => out.fill(1.0 / (k0 * samples) as f64),
            Gamma0::FeatureWeights { w } => {
                let inv = 1.0 / samples as f64;
                for (o, wd) in out.iter_mut().zip(w) {
                    *o = wd * inv;
                }
            }
            Gamma0::Rank1 { w, s } => {
                for (o, wd) in out.iter_mut().zip(w) {
                    *o = wd * s[t];
                }
            }
            Gamma0::FullMatrix { weights } => {
                for (o, v) in out.iter_mut().zip(weights.column(t)) {
                    *o = *v;
                }
            }
        }
    }

    /// The `gamma_(0)` column applied to a point that was not in the training set:
    /// the average training column `w / T`.
    pub fn unseen_column(&self, k0: usize, samples: usize) -> Vec<f64> {
        let inv = 1.0 / samples as f64;
        self.feature_weights(k0).into_iter().map(|w| w * inv).collect()
    }
}

/// One broken invariant, naming the field and the size of the breach.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub field: String,
    pub detail: String,
    pub residual: f64,
}

impl Violation {
    fn new(field: impl Into<String>, detail: impl Into<String>, residual: f64) -> Self {
        Violation { field: field.into(), detail: detail.into(), residual }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} (residual {:e})", self.field, self.detail, self.residual)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EonModel {
    /// Codebook, `K0 x K1`.
    pub s: Array2<f64>,
    /// `theta[n-1]` is `K_n x K_{n+1}`, column-stochastic.
    pub theta: Vec<Array2<f64>>,
    pub gamma0: Gamma0,
    pub hyper: Hyperparameters,
    /// Number of training points `T` the model was fitted on.
    pub train_size: usize,
}

impl EonModel {
    /// Every broken invariant; empty iff the model is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = self.hyper.problems();
        if !out.is_empty() {
            return out;
        }
        let dims = &self.hyper.layer_dims;
        let floor = self.hyper.theta_floor;
        if self.train_size == 0 {
            out.push(Violation::new("train_size", "must be at least 1", 0.0));
        }
        if self.s.dim() != (dims[0], dims[1]) {
            out.push(Violation::new(
                "S",
                format!("shape {:?}, expected {:?}", self.s.dim(), (dims[0], dims[1])),
                f64::NAN,
            ));
        } else {
            for ((d, k), &v) in self.s.indexed_iter() {
                if !v.is_finite() {
                    out.push(Violation::new(format!("S[{d},{k}]"), "not finite", v));
                }
            }
        }
        if self.theta.len() != self.hyper.depth() {
            out.push(Violation::new(
                "theta",
                format!("{} matrices, expected {}", self.theta.len(), self.hyper.depth()),
                f64::NAN,
            ));
        }
        for (i, th) in self.theta.iter().enumerate() {
            let n = i + 1;
            let expect = (dims[n], dims.get(n + 1).copied().unwrap_or(0));
            if th.dim() != expect {
                out.push(Violation::new(
                    format!("theta[{n}]"),
                    format!("shape {:?}, expected {:?}", th.dim(), expect),
                    f64::NAN,
                ));
                continue;
            }
            for (k, col) in th.columns().into_iter().enumerate() {
                let sum: f64 = col.sum();
                let residual = (sum - 1.0).abs();
                if !(residual <= SIMPLEX_TOL) {
                    out.push(Violation::new(
                        format!("theta[{n}][:,{k}]"),
                        "column does not sum to 1",
                        residual,
                    ));
                }
                for (j, &v) in col.iter().enumerate() {
                    if !(v >= floor * (1.0 - 1e-6)) || v > 1.0 {
                        out.push(Violation::new(
                            format!("theta[{n}][{j},{k}]"),
                            format!("outside [{floor:e}, 1]"),
                            v,
                        ));
                    }
                }
            }
        }
        self.validate_gamma0(&mut out);
        out
    }

    fn validate_gamma0(&self, out: &mut Vec<Violation>) {
        let k0 = self.hyper.input_dim();
        if self.gamma0.mode() != self.hyper.gamma0_mode {
            out.push(Violation::new(
                "gamma0",
                format!("payload is {}, hyperparameters say {}", self.gamma0.mode(), self.hyper.gamma0_mode),
                f64::NAN,
            ));
        }
        let mut check_vec = |name: &str, v: &[f64], len: usize| {
            if v.len() != len {
                out.push(Violation::new(name, format!("length {}, expected {len}", v.len()), f64::NAN));
            } else if let Err(e) = simplex::check_simplex(v) {
                let residual = (v.iter().sum::<f64>() - 1.0).abs();
                out.push(Violation::new(name, e, residual));
            }
        };
        match &self.gamma0 {
            Gamma0::FixedUniform => {}
            Gamma0::FeatureWeights { w } => check_vec("gamma0.w", w, k0),
            Gamma0::Rank1 { w, s } => {
                check_vec("gamma0.w", w, k0);
                check_vec("gamma0.s", s, self.train_size);
            }
            Gamma0::FullMatrix { weights } => {
                if weights.dim() != (k0, self.train_size) {
                    out.push(Violation::new(
                        "gamma0.weights",
                        format!("shape {:?}, expected {:?}", weights.dim(), (k0, self.train_size)),
                        f64::NAN,
                    ));
                } else {
                    let flat: Vec<f64> = weights.iter().copied().collect();
                    check_vec("gamma0.weights", &flat, flat.len());
                }
            }
        }
    }

    /// `A_(n)` for every entropic layer; fails on an invalid model.
    pub fn build_a_matrices(&self) -> Result<AMatrices> {
        let violations = self.validate();
        if !violations.is_empty() {
            return Err(EonError::Validation(violations));
        }
        Ok(AMatrices::from_theta(&self.theta, &self.hyper.delta, self.hyper.theta_floor))
    }

    /// Effective parameter count.
    ///
    /// A feature dimension is informative when its weight exceeds
    /// `weight_threshold`. The count is `informative * K1` codebook entries,
    /// plus `(K_{n+1} - 1) * K_n` per conditional matrix, plus `K0` for the
    /// feature-weight vector. In fixed-uniform mode every dimension is
    /// informative and the `K0` term is dropped.
    pub fn descriptor_length(&self, weight_threshold: f64) -> usize {
        let dims = &self.hyper.layer_dims;
        let k0 = dims[0];
        let (informative, weight_params) = match self.gamma0 {
            Gamma0::FixedUniform => (k0, 0),
            _ => {
                let w = self.gamma0.feature_weights(k0);
                (w.iter().filter(|&&v| v > weight_threshold).count(), k0)
            }
        };
        let transitions: usize = dims[1..].windows(2).map(|p| (p[1] - 1) * p[0]).sum();
        informative * dims[1] + transitions + weight_params
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_bytes();
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        crate::codec::encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        crate::codec::decode(bytes)
    }
}

/// Coupling matrices `A_(1), ..., A_(N)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AMatrices {
    /// `mats[n-1]` is `A_(n)`, shape `K_{n+1} x K_n`.
    pub mats: Vec<Array2<f64>>,
}

impl AMatrices {
    /// `A_(n)[j, i] = -delta_n ln max(theta_n[i, j], floor)`.
    pub fn from_theta(theta: &[Array2<f64>], delta: &[f64], floor: f64) -> Self {
        let mats = theta
            .iter()
            .zip(delta)
            .map(|(th, &d)| {
                let (kn, kn1) = th.dim();
                Array2::from_shape_fn((kn1, kn), |(j, i)| -d * th[[i, j]].max(floor).ln())
            })
            .collect();
        AMatrices { mats }
    }

    pub fn depth(&self) -> usize {
        self.mats.len()
    }

    /// `||A_(n)||_2` for `n = 1..=N`.
    pub fn spectral_norms(&self) -> Result<Vec<f64>> {
        self.mats.iter().map(simplex::spectral_norm).collect()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        AMatrices { mats: self.mats.iter().map(|m| m * factor).collect() }
    }
}
