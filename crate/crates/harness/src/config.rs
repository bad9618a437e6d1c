//! Experiment configuration files.
//!
//! The format is flat `key = value` text. Blank lines are ignored, `#`
//! starts a comment, and list-valued keys take comma-separated items.
//! Hidden layer shapes are written with `x` between layer widths, so
//! `hidden = 3, 4x2` means one grid cell with a single hidden layer of
//! width 3 and one with two hidden layers of widths 4 and 2.
//!
//! ```text
//! source = bioinformatics
//! samples = 600
//! train = 520
//! validation = 30
//! test = 50
//! folds = 20
//! restarts = 10
//! hidden = 3
//! delta = 1e-5, 1e-4
//! ```
//!
//! Recognized keys and their defaults are listed in the README.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use eon_core::datagen::{SyntheticKind, SyntheticSpec};
use eon_core::{Gamma0Mode, Hyperparameters};

use crate::error::{HarnessError, Result};

/// One `key = value` line with its 1-based line number.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse_entries(text: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| HarnessError::Usage(format!("line {}: expected `key = value`, found `{line}`", i + 1)))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(HarnessError::Usage(format!("line {}: empty key", i + 1)));
        }
        out.push(Entry { line: i + 1, key: key.to_string(), value: value.trim().to_string() });
    }
    Ok(out)
}

fn bad(entry: &Entry, what: impl fmt::Display) -> HarnessError {
    HarnessError::Usage(format!("line {}: {}: {what}", entry.line, entry.key))
}

fn scalar<T: FromStr>(entry: &Entry) -> Result<T> {
    entry.value.parse().map_err(|_| bad(entry, format!("cannot parse `{}`", entry.value)))
}

fn list<T: FromStr>(entry: &Entry) -> Result<Vec<T>> {
    let items: Vec<&str> = entry.value.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(bad(entry, "empty list"));
    }
    items.iter().map(|s| s.parse().map_err(|_| bad(entry, format!("cannot parse `{s}`")))).collect()
}

fn hidden_shape(s: &str) -> std::result::Result<Vec<usize>, String> {
    let dims: Vec<usize> = s.split('x').map(|p| p.trim().parse::<usize>()).collect::<std::result::Result<_, _>>().map_err(|e| e.to_string())?;
    if dims.contains(&0) {
        return Err("layer widths must be positive".into());
    }
    Ok(dims)
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

fn shape_name(hidden: &[usize]) -> String {
    hidden.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

/// Hyperparameter lists whose Cartesian product forms the search grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    /// Hidden layer widths `K_1..K_N`, one entry per candidate architecture.
    pub hidden: Vec<Vec<usize>>,
    pub delta: Vec<f64>,
    pub eps0: Vec<f64>,
    /// Entropy weight shared by every layer above the input.
    pub eps1: Vec<f64>,
    pub gamma0: Vec<Gamma0Mode>,
}

impl Default for Grid {
    /// The full default search grid.
    fn default() -> Self {
        Grid {
            hidden: (3..=8).map(|k| vec![k]).collect(),
            delta: vec![1e-5, 1e-4, 1e-3, 5e-3, 1e-2, 1e-1, 1.0, 10.0],
            eps0: vec![1e-3, 3e-3, 5e-3, 4e-3, 8e-3],
            eps1: vec![1e-12, 1e-6, 1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3],
            gamma0: vec![Gamma0Mode::FeatureWeights],
        }
    }
}

/// One point of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub hidden: Vec<usize>,
    pub delta: f64,
    pub eps0: f64,
    pub eps1: f64,
    pub gamma0: Gamma0Mode,
}

impl GridCell {
    pub fn hidden_name(&self) -> String {
        shape_name(&self.hidden)
    }

    /// Hyperparameters for a dataset with `input_dim` features and `classes` labels.
    pub fn hyperparameters(&self, input_dim: usize, classes: usize, base: &FitSettings) -> Hyperparameters {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(classes);
        let depth = self.hidden.len();
        let mut h = Hyperparameters::new(dims, self.gamma0);
        h.epsilon = std::iter::once(self.eps0).chain(std::iter::repeat_n(self.eps1, depth + 1)).collect();
        h.delta = vec![self.delta; depth];
        h.tolerance = base.tolerance;
        h.max_outer_iters = base.max_outer_iters;
        h.max_gamma_iters = base.max_gamma_iters;
        h
    }
}

impl Grid {
    /// Cells in canonical order: architecture, then delta, eps0, eps1, gamma0 mode.
    pub fn cells(&self) -> Vec<GridCell> {
        let mut out = Vec::new();
        for hidden in &self.hidden {
            for &delta in &self.delta {
                for &eps0 in &self.eps0 {
                    for &eps1 in &self.eps1 {
                        for &gamma0 in &self.gamma0 {
                            out.push(GridCell { hidden: hidden.clone(), delta, eps0, eps1, gamma0 });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.hidden.len() * self.delta.len() * self.eps0.len() * self.eps1.len() * self.gamma0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Applies a grid key. Returns `Ok(false)` when the key is not a grid key.
    fn apply(&mut self, entry: &Entry) -> Result<bool> {
        match entry.key.as_str() {
            "hidden" => {
                let items: Vec<&str> = entry.value.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
                if items.is_empty() {
                    return Err(bad(entry, "empty list"));
                }
                self.hidden = items.iter().map(|s| hidden_shape(s).map_err(|e| bad(entry, e))).collect::<Result<_>>()?;
            }
            "delta" => self.delta = positive_list(entry)?,
            "eps0" => self.eps0 = positive_list(entry)?,
            "eps1" => self.eps1 = positive_list(entry)?,
            "gamma0" => self.gamma0 = list(entry)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Overrides grid lists from a file holding only grid keys.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for entry in parse_entries(text)? {
            if !self.apply(&entry)? {
                return Err(bad(&entry, "not a grid key (hidden, delta, eps0, eps1, gamma0)"));
            }
        }
        Ok(())
    }

    fn to_entries(&self) -> Vec<(String, String)> {
        let hidden: Vec<String> = self.hidden.iter().map(|h| shape_name(h)).collect();
        vec![
            ("hidden".into(), hidden.join(", ")),
            ("delta".into(), join(&self.delta)),
            ("eps0".into(), join(&self.eps0)),
            ("eps1".into(), join(&self.eps1)),
            ("gamma0".into(), join(&self.gamma0)),
        ]
    }
}

fn positive_list(entry: &Entry) -> Result<Vec<f64>> {
    let v: Vec<f64> = list(entry)?;
    if v.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(bad(entry, "values must be positive and finite"));
    }
    Ok(v)
}

/// Size of one split block: an absolute count or a fraction of the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSize {
    Count(usize),
    Fraction(f64),
}

impl SplitSize {
    fn resolve(self, total: usize) -> usize {
        match self {
            SplitSize::Count(n) => n,
            SplitSize::Fraction(f) => (f * total as f64).round() as usize,
        }
    }
}

impl FromStr for SplitSize {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if let Ok(n) = s.parse::<usize>() {
            return Ok(SplitSize::Count(n));
        }
        match s.parse::<f64>() {
            Ok(f) if (0.0..=1.0).contains(&f) => Ok(SplitSize::Fraction(f)),
            _ => Err(format!("`{s}` is neither a count nor a fraction in [0, 1]")),
        }
    }
}

impl fmt::Display for SplitSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitSize::Count(n) => write!(f, "{n}"),
            SplitSize::Fraction(x) => write!(f, "{x:?}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splits {
    pub train: SplitSize,
    pub validation: SplitSize,
    pub test: SplitSize,
}

impl Splits {
    pub fn counts(train: usize, validation: usize, test: usize) -> Self {
        Splits { train: SplitSize::Count(train), validation: SplitSize::Count(validation), test: SplitSize::Count(test) }
    }

    /// Block sizes for a dataset of `total` points. The blocks must cover the
    /// data exactly; a fractional test block absorbs rounding.
    pub fn resolve(&self, total: usize) -> Result<(usize, usize, usize)> {
        let train = self.train.resolve(total);
        let validation = self.validation.resolve(total);
        let test = match self.test {
            SplitSize::Fraction(_) => total.saturating_sub(train + validation),
            SplitSize::Count(n) => n,
        };
        if train == 0 || validation == 0 || test == 0 {
            return Err(HarnessError::Usage(format!("empty split block ({train}/{validation}/{test})")));
        }
        if train + validation + test != total {
            return Err(HarnessError::Usage(format!(
                "splits {train}/{validation}/{test} do not cover the {total} data points"
            )));
        }
        Ok((train, validation, test))
    }
}

impl Default for Splits {
    fn default() -> Self {
        Splits { train: SplitSize::Fraction(0.8), validation: SplitSize::Fraction(0.1), test: SplitSize::Fraction(0.1) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    /// Binary problems only; scores are the predicted probability of class 1.
    Auc,
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "accuracy" => Ok(Metric::Accuracy),
            "auc" => Ok(Metric::Auc),
            _ => Err(format!("unknown metric `{s}`")),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Accuracy => "accuracy",
            Metric::Auc => "auc",
        })
    }
}

/// How each fold's validation block is drawn and used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvMode {
    /// One shuffle splits the data into train, validation and test blocks; the
    /// selected model is the one fitted on the train block.
    Flat,
    /// The test block is split off first, validation is drawn by a second
    /// shuffle of the remainder, and the selected cell is refitted on train
    /// plus validation before testing.
    Nested,
}

impl FromStr for CvMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "flat" => Ok(CvMode::Flat),
            "nested" => Ok(CvMode::Nested),
            _ => Err(format!("unknown cv mode `{s}`")),
        }
    }
}

impl fmt::Display for CvMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CvMode::Flat => "flat",
            CvMode::Nested => "nested",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    Synthetic(SyntheticSpec),
}

/// Solver settings shared by every grid cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSettings {
    pub tolerance: f64,
    pub max_outer_iters: usize,
    pub max_gamma_iters: usize,
    pub restarts: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        let h = Hyperparameters::new(vec![1, 1, 1], Gamma0Mode::FeatureWeights);
        FitSettings {
            tolerance: h.tolerance,
            max_outer_iters: h.max_outer_iters,
            max_gamma_iters: h.max_gamma_iters,
            restarts: 1,
        }
    }
}

/// Settings for a single fit: one grid cell plus solver settings and seed.
///
/// Accepts the grid keys (each with exactly one value) and `restarts`,
/// `tolerance`, `max_outer_iters`, `max_gamma_iters`, `seed`. Unset epsilon
/// and delta values fall back to the library defaults; `hidden` is required.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub cell: GridCell,
    pub fit: FitSettings,
    pub seed: u64,
}

impl FitConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let defaults = Hyperparameters::new(vec![1, 1, 1], Gamma0Mode::FeatureWeights);
        let mut grid = Grid {
            hidden: Vec::new(),
            delta: vec![defaults.delta[0]],
            eps0: vec![defaults.epsilon[0]],
            eps1: vec![defaults.epsilon[1]],
            gamma0: vec![defaults.gamma0_mode],
        };
        let mut fit = FitSettings::default();
        let mut seed = 0;
        for entry in parse_entries(text)? {
            if grid.apply(&entry)? {
                if grid.len() > 1 {
                    return Err(bad(&entry, "a fit takes a single value per key"));
                }
                continue;
            }
            match entry.key.as_str() {
                "restarts" => fit.restarts = scalar(&entry)?,
                "tolerance" => fit.tolerance = scalar(&entry)?,
                "max_outer_iters" => fit.max_outer_iters = scalar(&entry)?,
                "max_gamma_iters" => fit.max_gamma_iters = scalar(&entry)?,
                "seed" => seed = scalar(&entry)?,
                _ => return Err(bad(&entry, "unknown key")),
            }
        }
        let cell = grid.cells().pop().ok_or_else(|| HarnessError::Usage("missing `hidden` key".into()))?;
        if fit.restarts == 0 {
            return Err(HarnessError::Usage("restarts must be at least 1".into()));
        }
        Ok(FitConfig { cell, fit, seed })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub splits: Splits,
    pub folds: usize,
    pub grid: Grid,
    pub fit: FitSettings,
    pub seed: u64,
    pub metric: Metric,
    pub mode: CvMode,
    /// Feature weights at or below this count as uninformative in descriptor lengths.
    pub weight_threshold: f64,
}

impl ExperimentConfig {
    pub fn new(source: DataSource) -> Self {
        ExperimentConfig {
            source,
            splits: Splits::default(),
            folds: 1,
            grid: Grid::default(),
            fit: FitSettings::default(),
            seed: 0,
            metric: Metric::Accuracy,
            mode: CvMode::Flat,
            weight_threshold: 1e-3,
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Usage(format!("{}: {e}", path.display())))?;
        let mut config = Self::parse(&text)?;
        // Relative data paths are resolved against the config's directory.
        if let DataSource::Csv(p) = &mut config.source {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let entries = parse_entries(text)?;
        let find = |k: &str| entries.iter().rev().find(|e| e.key == k);

        let source_entry = find("source").ok_or_else(|| HarnessError::Usage("missing `source` key".into()))?;
        let samples = find("samples").map(scalar::<usize>).transpose()?;
        let data_seed = find("data_seed").map(scalar::<u64>).transpose()?.unwrap_or(0);
        let dim = find("dim").map(scalar::<usize>).transpose()?;
        let objects = find("objects").map(scalar::<usize>).transpose()?;
        let need = |v: Option<usize>, k: &str| v.ok_or_else(|| HarnessError::Usage(format!("source `{}` needs `{k}`", source_entry.value)));
        let source = match source_entry.value.as_str() {
            "csv" => {
                let p = find("path").ok_or_else(|| HarnessError::Usage("source `csv` needs `path`".into()))?;
                DataSource::Csv(PathBuf::from(&p.value))
            }
            "gaussians" => {
                let mut spec = SyntheticSpec::stacked_gaussians(need(dim, "dim")?, need(objects, "objects")?, need(samples, "samples")?, data_seed);
                if let Some(e) = find("spacing") {
                    spec.kind = SyntheticKind::StackedGaussians { spacing: scalar(e)? };
                }
                DataSource::Synthetic(spec)
            }
            "rings" => {
                let mut spec = SyntheticSpec::rings(need(dim, "dim")?, need(objects, "objects")?, need(samples, "samples")?, data_seed);
                if let Some(e) = find("radial_noise") {
                    spec.kind = SyntheticKind::Rings { radial_noise: scalar(e)? };
                }
                DataSource::Synthetic(spec)
            }
            "bioinformatics" => DataSource::Synthetic(SyntheticSpec::bioinformatics(need(samples, "samples")?, data_seed)),
            other => return Err(bad(source_entry, format!("unknown source `{other}`"))),
        };
        if let DataSource::Synthetic(spec) = &source {
            spec.validate().map_err(|e| bad(source_entry, e))?;
        }

        let mut config = ExperimentConfig::new(source);
        for entry in &entries {
            if config.grid.apply(entry)? {
                continue;
            }
            match entry.key.as_str() {
                "source" | "path" | "samples" | "data_seed" | "dim" | "objects" | "spacing" | "radial_noise" => {}
                "train" => config.splits.train = scalar(entry)?,
                "validation" => config.splits.validation = scalar(entry)?,
                "test" => config.splits.test = scalar(entry)?,
                "folds" => config.folds = scalar(entry)?,
                "restarts" => config.fit.restarts = scalar(entry)?,
                "seed" => config.seed = scalar(entry)?,
                "metric" => config.metric = scalar(entry)?,
                "cv_mode" => config.mode = scalar(entry)?,
                "tolerance" => config.fit.tolerance = scalar(entry)?,
                "max_outer_iters" => config.fit.max_outer_iters = scalar(entry)?,
                "max_gamma_iters" => config.fit.max_gamma_iters = scalar(entry)?,
                "weight_threshold" => config.weight_threshold = scalar(entry)?,
                _ => return Err(bad(entry, "unknown key")),
            }
        }
        config.check()?;
        Ok(config)
    }

    pub fn check(&self) -> Result<()> {
        if self.folds == 0 {
            return Err(HarnessError::Usage("folds must be at least 1".into()));
        }
        if self.fit.restarts == 0 {
            return Err(HarnessError::Usage("restarts must be at least 1".into()));
        }
        if self.grid.is_empty() {
            return Err(HarnessError::Usage("the grid has no cells".into()));
        }
        if !(self.fit.tolerance >= 0.0) {
            return Err(HarnessError::Usage("tolerance must be non-negative".into()));
        }
        Ok(())
    }

    /// Key-value pairs that reproduce this config when written back out.
    pub fn to_entries(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        match &self.source {
            DataSource::Csv(p) => {
                out.push(("source".into(), "csv".into()));
                out.push(("path".into(), p.display().to_string()));
            }
            DataSource::Synthetic(spec) => {
                let (name, extra) = match spec.kind {
                    SyntheticKind::StackedGaussians { spacing } => ("gaussians", Some(("spacing", spacing))),
                    SyntheticKind::Rings { radial_noise } => ("rings", Some(("radial_noise", radial_noise))),
                    SyntheticKind::Bioinformatics => ("bioinformatics", None),
                };
                out.push(("source".into(), name.into()));
                if extra.is_some() {
                    out.push(("dim".into(), spec.dim.to_string()));
                    out.push(("objects".into(), spec.objects.to_string()));
                }
                out.push(("samples".into(), spec.samples.to_string()));
                out.push(("data_seed".into(), spec.seed.to_string()));
                if let Some((k, v)) = extra {
                    out.push((k.into(), format!("{v:?}")));
                }
            }
        }
        let s = &self.splits;
        out.extend([
            ("train".into(), s.train.to_string()),
            ("validation".into(), s.validation.to_string()),
            ("test".into(), s.test.to_string()),
            ("folds".into(), self.folds.to_string()),
            ("restarts".into(), self.fit.restarts.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("metric".into(), self.metric.to_string()),
            ("cv_mode".into(), self.mode.to_string()),
            ("tolerance".into(), format!("{:?}", self.fit.tolerance)),
            ("max_outer_iters".into(), self.fit.max_outer_iters.to_string()),
            ("max_gamma_iters".into(), self.fit.max_gamma_iters.to_string()),
            ("weight_threshold".into(), format!("{:?}", self.weight_threshold)),
        ]);
        out.extend(self.grid.to_entries());
        out
    }

    pub fn to_text(&self) -> String {
        self.to_entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
