//! Little-endian binary layout of a saved [`EonModel`].
//!
//! ```text
//! magic            4 bytes  "EONM"
//! endianness       u8       1 = little-endian
//! format version   u32
//! N                u32
//! layer dims       u32 x (N + 2)
//! gamma0 mode      u8       0 fixed, 1 feature weights, 2 rank-1, 3 full
//! train size       u64
//! epsilon          f64 x (N + 2)
//! delta            f64 x N
//! tolerance        f64
//! gamma tolerance  f64
//! theta floor      f64
//! max outer iters  u64
//! max gamma iters  u64
//! seed             u64
//! S                f64 x (K0 K1), row-major
//! theta_1..N       f64 x (K_n K_{n+1}) each, row-major
//! gamma0 payload   none | w (K0) | w (K0), s (T) | K0 x T row-major
//! ```

use ndarray::Array2;

use crate::error::{EonError, Result};
use crate::model::{EonModel, Gamma0, Gamma0Mode, Hyperparameters};

pub const MAGIC: &[u8; 4] = b"EONM";
pub const FORMAT_VERSION: u32 = 1;
const LITTLE_ENDIAN: u8 = 1;

pub(crate) fn encode(model: &EonModel) -> Vec<u8> {
    let h = &model.hyper;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(LITTLE_ENDIAN);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, h.depth() as u32);
    for &k in &h.layer_dims {
        put_u32(&mut out, k as u32);
    }
    out.push(model.gamma0.mode().code());
    put_u64(&mut out, model.train_size as u64);
    for &e in &h.epsilon {
        put_f64(&mut out, e);
    }
    for &d in &h.delta {
        put_f64(&mut out, d);
    }
    put_f64(&mut out, h.tolerance);
    put_f64(&mut out, h.gamma_tolerance);
    put_f64(&mut out, h.theta_floor);
    put_u64(&mut out, h.max_outer_iters as u64);
    put_u64(&mut out, h.max_gamma_iters as u64);
    put_u64(&mut out, h.seed);
    put_matrix(&mut out, &model.s);
    for th in &model.theta {
        put_matrix(&mut out, th);
    }
    match &model.gamma0 {
        Gamma0::FixedUniform => {}
        Gamma0::FeatureWeights { w } => w.iter().for_each(|&v| put_f64(&mut out, v)),
        Gamma0::Rank1 { w, s } => w.iter().chain(s).for_each(|&v| put_f64(&mut out, v)),
        Gamma0::FullMatrix { weights } => put_matrix(&mut out, weights),
    }
    out
}

pub(crate) fn decode(bytes: &[u8]) -> Result<EonModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(EonError::Malformed("bad magic, not a model file".into()));
    }
    let endian = r.u8("endianness tag")?;
    if endian != LITTLE_ENDIAN {
        return Err(EonError::Malformed(format!("unsupported endianness tag {endian}")));
    }
    let version = r.u32("format version")?;
    if version != FORMAT_VERSION {
        return Err(EonError::VersionMismatch { found: version, supported: FORMAT_VERSION });
    }
    let depth = r.u32("depth")? as usize;
    if depth == 0 || depth > 1024 {
        return Err(EonError::Malformed(format!("implausible depth {depth}")));
    }
    let mut dims = Vec::with_capacity(depth + 2);
    for i in 0..depth + 2 {
        dims.push(r.u32(&format!("layer dim {i}"))? as usize);
    }
    let code = r.u8("gamma0 mode")?;
    let mode = Gamma0Mode::from_code(code)
        .ok_or_else(|| EonError::Malformed(format!("unknown gamma0 mode code {code}")))?;
    let train_size = r.u64("train size")? as usize;

    let mut hyper = Hyperparameters::new(dims.clone(), mode);
    hyper.epsilon = r.f64s(depth + 2, "epsilon")?;
    hyper.delta = r.f64s(depth, "delta")?;
    hyper.tolerance = r.f64("tolerance")?;
    hyper.gamma_tolerance = r.f64("gamma tolerance")?;
    hyper.theta_floor = r.f64("theta floor")?;
    hyper.max_outer_iters = r.u64("max outer iters")? as usize;
    hyper.max_gamma_iters = r.u64("max gamma iters")? as usize;
    hyper.seed = r.u64("seed")?;

    let s = r.matrix(dims[0], dims[1], "S")?;
    let mut theta = Vec::with_capacity(depth);
    for n in 1..=depth {
        theta.push(r.matrix(dims[n], dims[n + 1], &format!("theta {n}"))?);
    }
    let gamma0 = match mode {
        Gamma0Mode::FixedUniform => Gamma0::FixedUniform,
        Gamma0Mode::FeatureWeights => Gamma0::FeatureWeights { w: r.f64s(dims[0], "gamma0 w")? },
        Gamma0Mode::Rank1 => Gamma0::Rank1 {
            w: r.f64s(dims[0], "gamma0 w")?,
            s: r.f64s(train_size, "gamma0 s")?,
        },
        Gamma0Mode::FullMatrix => Gamma0::FullMatrix {
            weights: r.matrix(dims[0], train_size, "gamma0 matrix")?,
        },
    };
    if r.pos != bytes.len() {
        return Err(EonError::Malformed(format!(
            "{} trailing bytes after model payload",
            bytes.len() - r.pos
        )));
    }
    Ok(EonModel { s, theta, gamma0, hyper, train_size })
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_matrix(out: &mut Vec<u8>, m: &Array2<f64>) {
    for &v in m.iter() {
        put_f64(out, v);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            EonError::Malformed(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n.saturating_mul(8), what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<Array2<f64>> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| EonError::Malformed(format!("{what} dimensions overflow")))?;
        let data = self.f64s(n, what)?;
        Ok(Array2::from_shape_vec((rows, cols), data).expect("length matches shape"))
    }
}
