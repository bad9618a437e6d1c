//! Synthetic classification benchmarks with known complexity.
//!
//! Every generator is a pure function of its spec and seed. Labels are the
//! index of the generating object, encoded as one-hot label distributions.

use std::f64::consts::TAU;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{EonError, Result};
use crate::training::Dataset;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SyntheticKind {
    /// Unit-variance Gaussians whose centers are `spacing` standard deviations
    /// apart along a line.
    StackedGaussians { spacing: f64 },
    /// Circles in random 2-D planes; radial noise has standard deviation
    /// `radial_noise * radius`, truncated at three standard deviations.
    Rings { radial_noise: f64 },
    /// Three clusters in the first two of six dimensions, two classes, the
    /// other four dimensions uniform noise.
    Bioinformatics,
}

impl SyntheticKind {
    pub fn name(&self) -> &'static str {
        match self {
            SyntheticKind::StackedGaussians { .. } => "stacked-gaussians",
            SyntheticKind::Rings { .. } => "rings",
            SyntheticKind::Bioinformatics => "bioinformatics",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    /// Ambient dimension `D`.
    pub dim: usize,
    /// Number of generating objects `K`.
    pub objects: usize,
    /// Number of samples `T`.
    pub samples: usize,
    pub seed: u64,
}

pub const BIO_DIM: usize = 6;
pub const BIO_SIGMA: f64 = 0.05;
const BIO_CENTERS: [([f64; 2], usize); 3] = [([0.25, 0.25], 0), ([0.75, 0.75], 0), ([0.25, 0.75], 1)];

impl SyntheticSpec {
    pub fn stacked_gaussians(dim: usize, objects: usize, samples: usize, seed: u64) -> Self {
        SyntheticSpec { kind: SyntheticKind::StackedGaussians { spacing: 8.0 }, dim, objects, samples, seed }
    }

    pub fn rings(dim: usize, objects: usize, samples: usize, seed: u64) -> Self {
        SyntheticSpec { kind: SyntheticKind::Rings { radial_noise: 0.02 }, dim, objects, samples, seed }
    }

    pub fn bioinformatics(samples: usize, seed: u64) -> Self {
        SyntheticSpec { kind: SyntheticKind::Bioinformatics, dim: BIO_DIM, objects: 3, samples, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.objects == 0 || self.dim == 0 {
            return Err(EonError::invalid("need at least one object and one dimension"));
        }
        if self.samples < self.objects {
            return Err(EonError::invalid(format!(
                "{} samples cannot cover {} objects",
                self.samples, self.objects
            )));
        }
        match self.kind {
            SyntheticKind::StackedGaussians { spacing } if !(spacing > 0.0 && spacing.is_finite()) => {
                Err(EonError::invalid("gaussian spacing must be positive"))
            }
            SyntheticKind::Rings { .. } if self.dim < 2 => Err(EonError::invalid("rings need D >= 2")),
            SyntheticKind::Rings { radial_noise } if !(0.0..0.3).contains(&radial_noise) => {
                Err(EonError::invalid("ring noise must lie in [0, 0.3)"))
            }
            SyntheticKind::Bioinformatics if self.dim != BIO_DIM || self.objects != 3 => {
                Err(EonError::invalid("the bioinformatics set has 6 dimensions and 3 clusters"))
            }
            _ => Ok(()),
        }
    }

    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        match self.kind {
            SyntheticKind::StackedGaussians { .. } => gen_stacked_gaussians(self),
            SyntheticKind::Rings { .. } => gen_rings(self).map(|(d, _)| d),
            SyntheticKind::Bioinformatics => gen_bioinformatics(self.samples, self.seed),
        }
    }

    pub fn classes(&self) -> usize {
        match self.kind {
            SyntheticKind::Bioinformatics => 2,
            _ => self.objects,
        }
    }
}

/// Orthonormal `dim x dim` matrix from Gram-Schmidt on a seeded Gaussian matrix.
pub fn random_rotation(dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    orthonormal_columns(dim, dim, &mut rng)
}

fn orthonormal_columns(dim: usize, count: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut q = Array2::<f64>::zeros((dim, count));
    let mut j = 0;
    while j < count {
        let mut v: Array1<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        // Two passes of modified Gram-Schmidt keep the basis orthogonal to rounding.
        for _ in 0..2 {
            for i in 0..j {
                let qi = q.column(i);
                let proj = qi.dot(&v);
                v.scaled_add(-proj, &qi);
            }
        }
        let norm = v.dot(&v).sqrt();
        if norm < 1e-8 {
            continue;
        }
        q.column_mut(j).assign(&(v / norm));
        j += 1;
    }
    q
}

fn truncated_normal(rng: &mut ChaCha8Rng, limit: f64) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= limit {
            return z;
        }
    }
}

/// Linearly ordered Gaussian stack, rotated at random and rescaled into the unit cube.
pub fn gen_stacked_gaussians(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let SyntheticKind::StackedGaussians { spacing } = spec.kind else {
        return Err(EonError::invalid("spec is not a gaussian stack"));
    };
    let (d, k, t_len) = (spec.dim, spec.objects, spec.samples);
    let rotation = random_rotation(d, spec.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels: Vec<usize> = (0..t_len).map(|t| t % k).collect();
    let mut raw = Array2::<f64>::zeros((t_len, d));
    let mut p = Array1::<f64>::zeros(d);
    for (t, &label) in labels.iter().enumerate() {
        for v in p.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        p[0] += spacing * label as f64;
        raw.row_mut(t).assign(&rotation.dot(&p));
    }
    Dataset::from_labels(rescale_isotropic(raw), &labels, k)
}

/// Shifts every column to start at 0 and divides by the largest column range,
/// so distances are scaled uniformly and all values land in `[0, 1]`.
fn rescale_isotropic(mut x: Array2<f64>) -> Array2<f64> {
    let mut span: f64 = 0.0;
    for mut col in x.columns_mut() {
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        col.mapv_inplace(|v| v - lo);
        span = span.max(hi - lo);
    }
    if span > 0.0 {
        x.mapv_inplace(|v| (v / span).clamp(0.0, 1.0));
    }
    x
}

/// Geometry of one generated ring.
#[derive(Clone, Debug, PartialEq)]
pub struct Ring {
    pub center: Vec<f64>,
    /// Orthonormal basis of the ring's plane, as the two columns of a `D x 2` matrix.
    pub basis: Array2<f64>,
    pub radius: f64,
}

/// Random rings with their generating geometry. Centers lie in `[0.25, 0.75]^D`
/// and radii in `[0.05, 0.2]`, so every point stays inside the unit cube.
pub fn gen_rings(spec: &SyntheticSpec) -> Result<(Dataset, Vec<Ring>)> {
    spec.validate()?;
    let SyntheticKind::Rings { radial_noise } = spec.kind else {
        return Err(EonError::invalid("spec is not a ring set"));
    };
    let (d, k, t_len) = (spec.dim, spec.objects, spec.samples);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rings: Vec<Ring> = (0..k)
        .map(|_| {
            let center = (0..d).map(|_| rng.random_range(0.25..=0.75)).collect();
            let radius = rng.random_range(0.05..=0.2);
            let basis = orthonormal_columns(d, 2, &mut rng);
            Ring { center, basis, radius }
        })
        .collect();
    let labels: Vec<usize> = (0..t_len).map(|t| t % k).collect();
    let mut x = Array2::<f64>::zeros((t_len, d));
    for (t, &label) in labels.iter().enumerate() {
        let ring = &rings[label];
        let phi = rng.random_range(0.0..TAU);
        let rho = if radial_noise > 0.0 {
            ring.radius * (1.0 + radial_noise * truncated_normal(&mut rng, 3.0))
        } else {
            ring.radius
        };
        let (s, c) = phi.sin_cos();
        for i in 0..d {
            x[[t, i]] = ring.center[i] + rho * (c * ring.basis[[i, 0]] + s * ring.basis[[i, 1]]);
        }
    }
    Ok((Dataset::from_labels(x, &labels, k)?, rings))
}

/// The six-dimensional two-class set: clusters at `(0.25, 0.25)` and
/// `(0.75, 0.75)` carry label 0, the cluster at `(0.25, 0.75)` label 1.
/// Cluster noise is isotropic with standard deviation 0.05, truncated at
/// radius 0.15, so the classes are separated by a margin of 0.2.
pub fn gen_bioinformatics(samples: usize, seed: u64) -> Result<Dataset> {
    SyntheticSpec::bioinformatics(samples, seed).validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::<f64>::zeros((samples, BIO_DIM));
    let mut labels = Vec::with_capacity(samples);
    for t in 0..samples {
        let (center, label) = BIO_CENTERS[t % 3];
        let (dx, dy) = loop {
            let dx: f64 = rng.sample(StandardNormal);
            let dy: f64 = rng.sample(StandardNormal);
            if dx * dx + dy * dy <= 9.0 {
                break (dx, dy);
            }
        };
        x[[t, 0]] = center[0] + BIO_SIGMA * dx;
        x[[t, 1]] = center[1] + BIO_SIGMA * dy;
        for d in 2..BIO_DIM {
            x[[t, d]] = rng.random::<f64>();
        }
        labels.push(label);
    }
    Dataset::from_labels(x, &labels, 2)
}

/// The exact rule for the bioinformatics set: nearest cluster center in the
/// first two dimensions.
pub fn bioinformatics_oracle(x: &[f64]) -> usize {
    let dist = |c: &[f64; 2]| (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
    BIO_CENTERS
        .iter()
        .min_by(|a, b| dist(&a.0).total_cmp(&dist(&b.0)))
        .map(|c| c.1)
        .unwrap()
}

/// Parameters of the smallest exact rule that generates the labels.
///
/// * bioinformatics: 6 (relevant-dimension mask) + 4 (two lines) + 3 (labels) = 13
/// * stacked Gaussians: `(K - 1)` hyperplanes of `D + 1` parameters plus `K` labels
/// * rings: per ring a center (`D`), a plane basis (`2D`), a radius and a label
pub fn kolmogorov_complexity(spec: &SyntheticSpec) -> Result<usize> {
    spec.validate()?;
    let (d, k) = (spec.dim, spec.objects);
    Ok(match spec.kind {
        SyntheticKind::Bioinformatics => 13,
        SyntheticKind::StackedGaussians { .. } => (k - 1) * (d + 1) + k,
        SyntheticKind::Rings { .. } => k * (3 * d + 2),
    })
}

/// Parameters needed to memorize `T` samples with `K0` features and a label each.
pub fn data_complexity(samples: usize, k0: usize) -> Result<usize> {
    if samples == 0 || k0 == 0 {
        return Err(EonError::invalid("data complexity needs T >= 1 and K0 >= 1"));
    }
    Ok(samples * (k0 + 1))
}
