//! Decision and reliability rasters over two input dimensions.

use std::io::Write;

use eon_core::inference::Predictor;
use eon_core::EonModel;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HarnessError, Result};

/// Fraction of the data range added on each side of the raster window.
pub const EXTENSION: f64 = 0.2;

/// How the dimensions outside the raster plane are filled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FixedValues {
    /// Independent uniform draw from the data range, per grid point.
    UniformRandom { seed: u64 },
    /// The data mean of each dimension.
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterCell {
    pub u: f64,
    pub v: f64,
    pub label_dist: Vec<f64>,
    pub reliability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub dims: (usize, usize),
    pub resolution: usize,
    /// Row-major over `v`, then `u`.
    pub cells: Vec<RasterCell>,
}

/// Evaluates `model` on a `resolution x resolution` grid spanning the range
/// of `x` along `dims`, widened by [`EXTENSION`] on every side.
pub fn emit_decision_raster(
    model: &EonModel,
    x: &Array2<f64>,
    dims: (usize, usize),
    resolution: usize,
    policy: FixedValues,
) -> Result<Raster> {
    let k0 = model.hyper.input_dim();
    if x.ncols() != k0 {
        return Err(HarnessError::Data(format!("data has {} features, model expects {k0}", x.ncols())));
    }
    if x.nrows() == 0 {
        return Err(HarnessError::Data("raster needs at least one data point for its window".into()));
    }
    if dims.0 >= k0 || dims.1 >= k0 || dims.0 == dims.1 {
        return Err(HarnessError::Usage(format!("raster dims {dims:?} must be two distinct indices below {k0}")));
    }
    if resolution < 2 {
        return Err(HarnessError::Usage("raster resolution must be at least 2".into()));
    }

    let range: Vec<(f64, f64)> = x
        .columns()
        .into_iter()
        .map(|c| c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v))))
        .collect();
    let mean: Vec<f64> = x.mean_axis(ndarray::Axis(0)).unwrap().to_vec();
    let axis = |d: usize| {
        let (lo, hi) = range[d];
        let pad = EXTENSION * (hi - lo);
        let (lo, hi) = (lo - pad, hi + pad);
        move |i: usize| lo + (hi - lo) * i as f64 / (resolution - 1) as f64
    };
    let (ua, va) = (axis(dims.0), axis(dims.1));

    let predictor = Predictor::new(model)?;
    let mut rng = match policy {
        FixedValues::UniformRandom { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        FixedValues::Mean => None,
    };
    let mut cells = Vec::with_capacity(resolution * resolution);
    let mut point = vec![0.0; k0];
    for j in 0..resolution {
        for i in 0..resolution {
            for d in 0..k0 {
                point[d] = match rng.as_mut() {
                    Some(r) if range[d].1 > range[d].0 => r.random_range(range[d].0..range[d].1),
                    Some(_) => range[d].0,
                    None => mean[d],
                };
            }
            let (u, v) = (ua(i), va(j));
            point[dims.0] = u;
            point[dims.1] = v;
            let p = predictor.predict(&point)?;
            cells.push(RasterCell { u, v, label_dist: p.label_dist.into_vec(), reliability: p.reliability });
        }
    }
    Ok(Raster { dims, resolution, cells })
}

/// Writes `u, v, p0..p{M-1}, predicted, reliability` rows.
pub fn write_raster<W: Write>(raster: &Raster, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let m = raster.cells.first().map_or(0, |c| c.label_dist.len());
    let mut header = vec!["u".to_string(), "v".to_string()];
    header.extend((0..m).map(|j| format!("p{j}")));
    header.extend(["predicted".to_string(), "reliability".to_string()]);
    w.write_record(&header)?;
    for c in &raster.cells {
        let mut row = vec![c.u.to_string(), c.v.to_string()];
        row.extend(c.label_dist.iter().map(f64::to_string));
        let predicted = (0..m).fold(0, |best, k| if c.label_dist[k] > c.label_dist[best] { k } else { best });
        row.push(predicted.to_string());
        row.push(c.reliability.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
