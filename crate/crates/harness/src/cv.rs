//! Monte-Carlo cross-validation with exhaustive grid search.
//!
//! Every fold draws one seeded split and hands the same train, validation
//! and test indices to every grid cell. Jobs run as a parallel map over
//! (fold, cell) pairs and land in the table in canonical order.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::time::Instant;

use eon_core::inference::predict_batch;
use eon_core::training::{fit, Dataset, FitOptions};
use eon_core::EonModel;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{CvMode, DataSource, ExperimentConfig, GridCell, Metric, Splits};
use crate::error::{HarnessError, Result};
use crate::io::load_csv;
use crate::metrics::{accuracy, auc};

/// Version of the JSON report layout written by [`save_results`].
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded splits; fold `f` shuffles with seed `seed + f`.
pub fn fold_splits(total: usize, splits: &Splits, folds: usize, seed: u64, mode: CvMode) -> Result<Vec<FoldSplit>> {
    let (n_train, n_val, n_test) = splits.resolve(total)?;
    Ok((0..folds)
        .map(|fold| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(fold as u64));
            let mut perm: Vec<usize> = (0..total).collect();
            perm.shuffle(&mut rng);
            match mode {
                CvMode::Flat => FoldSplit {
                    train: perm[..n_train].to_vec(),
                    validation: perm[n_train..n_train + n_val].to_vec(),
                    test: perm[n_train + n_val..].to_vec(),
                },
                CvMode::Nested => {
                    let test = perm[..n_test].to_vec();
                    let mut pool = perm[n_test..].to_vec();
                    pool.shuffle(&mut rng);
                    FoldSplit { validation: pool[..n_val].to_vec(), train: pool[n_val..].to_vec(), test }
                }
            }
        })
        .collect())
}

pub fn load_source(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::Csv(path) => load_csv(path),
        DataSource::Synthetic(spec) => Ok(spec.generate()?),
    }
}

/// Scores `model` on `data` with `metric`.
pub fn evaluate(model: &EonModel, data: &Dataset, metric: Metric) -> Result<f64> {
    let predictions = predict_batch(model, data.x())?.into_iter().collect::<eon_core::Result<Vec<_>>>()?;
    let truth = data.labels();
    match metric {
        Metric::Accuracy => {
            let predicted: Vec<usize> = predictions.iter().map(|p| p.label_dist.argmax()).collect();
            accuracy(&predicted, &truth)
        }
        Metric::Auc => {
            if data.n_classes() != 2 {
                return Err(HarnessError::UndefinedMetric(format!("auc needs 2 classes, data has {}", data.n_classes())));
            }
            let scores: Vec<f64> = predictions.iter().map(|p| p.label_dist.as_slice()[1]).collect();
            let positive: Vec<bool> = truth.iter().map(|&l| l == 1).collect();
            auc(&scores, &positive)
        }
    }
}

/// Outcome of fitting one grid cell on one fold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub fold: usize,
    pub cell: usize,
    /// Seed of the retained restart.
    pub seed: u64,
    pub hidden: String,
    pub delta: f64,
    pub eps0: f64,
    pub eps1: f64,
    pub gamma0: String,
    pub validation_metric: Option<f64>,
    pub test_metric: Option<f64>,
    pub fit_secs: f64,
    pub predict_secs: f64,
    pub descriptor_length: Option<usize>,
    /// Outer iterations of the retained restart.
    pub iterations: usize,
    pub final_loss: Option<f64>,
    pub converged: bool,
    pub feature_weights: Vec<f64>,
    pub error: Option<String>,
}

impl CellResult {
    fn failed(fold: usize, index: usize, cell: &GridCell, seed: u64, fit_secs: f64, err: HarnessError) -> Self {
        CellResult {
            fold,
            cell: index,
            seed,
            hidden: cell.hidden_name(),
            delta: cell.delta,
            eps0: cell.eps0,
            eps1: cell.eps1,
            gamma0: cell.gamma0.to_string(),
            validation_metric: None,
            test_metric: None,
            fit_secs,
            predict_secs: 0.0,
            descriptor_length: None,
            iterations: 0,
            final_loss: None,
            converged: false,
            feature_weights: Vec::new(),
            error: Some(err.to_string()),
        }
    }
}

/// The selected cell of one fold and its test score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub best_cell: usize,
    pub validation_metric: f64,
    pub test_metric: Option<f64>,
    pub descriptor_length: Option<usize>,
    pub feature_weights: Vec<f64>,
    /// Fit plus predict time of the reported model.
    pub cost_secs: f64,
    /// Whether the test score comes from a refit on train plus validation.
    pub refit: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultsTable {
    pub metric: Metric,
    pub mode: CvMode,
    pub folds: usize,
    pub cells: Vec<GridCell>,
    /// Fold-major, then cell order.
    pub rows: Vec<CellResult>,
    pub summaries: Vec<FoldSummary>,
}

/// Orders rows so the preferred one compares greatest: higher validation
/// metric, then smaller descriptor length, then faster fit, then lower cell index.
fn preference(a: &CellResult, b: &CellResult) -> Ordering {
    let va = a.validation_metric.unwrap_or(f64::NEG_INFINITY);
    let vb = b.validation_metric.unwrap_or(f64::NEG_INFINITY);
    va.total_cmp(&vb)
        .then_with(|| b.descriptor_length.unwrap_or(usize::MAX).cmp(&a.descriptor_length.unwrap_or(usize::MAX)))
        .then_with(|| b.fit_secs.total_cmp(&a.fit_secs))
        .then_with(|| b.cell.cmp(&a.cell))
}

/// The preferred row among `rows`, ignoring rows without a validation score.
pub fn select_best<'a>(rows: impl IntoIterator<Item = &'a CellResult>) -> Option<&'a CellResult> {
    rows.into_iter().filter(|r| r.validation_metric.is_some()).max_by(|a, b| preference(a, b))
}

impl ResultsTable {
    pub fn fold_rows(&self, fold: usize) -> impl Iterator<Item = &CellResult> {
        self.rows.iter().filter(move |r| r.fold == fold)
    }

    pub fn best_row(&self, fold: usize) -> Option<&CellResult> {
        select_best(self.fold_rows(fold))
    }

    pub fn test_scores(&self) -> Vec<f64> {
        self.summaries.iter().filter_map(|s| s.test_metric).collect()
    }

    pub fn mean_test(&self) -> Option<f64> {
        let s = self.test_scores();
        (!s.is_empty()).then(|| s.iter().sum::<f64>() / s.len() as f64)
    }

    pub fn failed_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }
}

struct FitOutcome {
    model: EonModel,
    seed: u64,
    iterations: usize,
    final_loss: f64,
    converged: bool,
    fit_secs: f64,
}

fn fit_seed(train: &Dataset, cell: &GridCell, config: &ExperimentConfig, seed: u64, restarts: usize) -> Result<FitOutcome> {
    let mut hyper = cell.hyperparameters(train.n_features(), train.n_classes(), &config.fit);
    hyper.seed = seed;
    let options = FitOptions { restarts, track_contraction: false, ..Default::default() };
    let start = Instant::now();
    let (model, trace) = fit(train, &hyper, &options)?;
    Ok(FitOutcome {
        seed: trace.seed,
        iterations: trace.iterations.len(),
        final_loss: trace.final_loss(),
        converged: trace.converged,
        fit_secs: start.elapsed().as_secs_f64(),
        model,
    })
}

/// First restart seed of a fold; folds use disjoint seed ranges.
fn fold_seed(config: &ExperimentConfig, fold: usize) -> u64 {
    config.seed.wrapping_add((fold as u64).wrapping_mul(config.fit.restarts.max(1) as u64))
}

fn fit_cell(train: &Dataset, cell: &GridCell, config: &ExperimentConfig, fold: usize) -> Result<FitOutcome> {
    fit_seed(train, cell, config, fold_seed(config, fold), config.fit.restarts)
}

fn run_job(data: &FoldData, fold: usize, index: usize, cell: &GridCell, config: &ExperimentConfig) -> CellResult {
    let start = Instant::now();
    let outcome = match fit_cell(&data.train, cell, config, fold) {
        Ok(o) => o,
        Err(e) => {
            return CellResult::failed(fold, index, cell, fold_seed(config, fold), start.elapsed().as_secs_f64(), e)
        }
    };
    let k0 = data.train.n_features();
    let t0 = Instant::now();
    let validation = evaluate(&outcome.model, &data.validation, config.metric);
    let test = evaluate(&outcome.model, &data.test, config.metric);
    let predict_secs = t0.elapsed().as_secs_f64();
    let error = validation.as_ref().err().or(test.as_ref().err()).map(ToString::to_string);
    CellResult {
        fold,
        cell: index,
        seed: outcome.seed,
        hidden: cell.hidden_name(),
        delta: cell.delta,
        eps0: cell.eps0,
        eps1: cell.eps1,
        gamma0: cell.gamma0.to_string(),
        validation_metric: validation.ok(),
        test_metric: test.ok(),
        fit_secs: outcome.fit_secs,
        predict_secs,
        descriptor_length: Some(outcome.model.descriptor_length(config.weight_threshold)),
        iterations: outcome.iterations,
        final_loss: Some(outcome.final_loss),
        converged: outcome.converged,
        feature_weights: outcome.model.gamma0.feature_weights(k0),
        error,
    }
}

struct FoldData {
    train: Dataset,
    validation: Dataset,
    test: Dataset,
}

/// Runs the whole experiment described by `config`.
pub fn run_cv(config: &ExperimentConfig) -> Result<ResultsTable> {
    let data = load_source(&config.source)?;
    run_cv_on(&data, config)
}

/// Runs cross-validation on an already loaded dataset.
///
/// Fit and metric failures are recorded on their row and the run continues.
pub fn run_cv_on(dataset: &Dataset, config: &ExperimentConfig) -> Result<ResultsTable> {
    config.check()?;
    let splits = fold_splits(dataset.len(), &config.splits, config.folds, config.seed, config.mode)?;
    let folds: Vec<FoldData> = splits
        .iter()
        .map(|s| FoldData {
            train: dataset.select(&s.train),
            validation: dataset.select(&s.validation),
            test: dataset.select(&s.test),
        })
        .collect();
    let cells = config.grid.cells();
    let jobs: Vec<(usize, usize)> = (0..folds.len()).flat_map(|f| (0..cells.len()).map(move |c| (f, c))).collect();
    let rows: Vec<CellResult> =
        jobs.par_iter().map(|&(f, c)| run_job(&folds[f], f, c, &cells[c], config)).collect();

    let mut table = ResultsTable { metric: config.metric, mode: config.mode, folds: config.folds, cells, rows, summaries: Vec::new() };
    let summaries: Vec<Option<FoldSummary>> = (0..folds.len())
        .into_par_iter()
        .map(|f| {
            let best = table.best_row(f)?;
            let mut summary = FoldSummary {
                fold: f,
                best_cell: best.cell,
                validation_metric: best.validation_metric.unwrap(),
                test_metric: best.test_metric,
                descriptor_length: best.descriptor_length,
                feature_weights: best.feature_weights.clone(),
                cost_secs: best.fit_secs + best.predict_secs,
                refit: false,
            };
            if config.mode == CvMode::Nested {
                let pool: Vec<usize> = splits[f].train.iter().chain(&splits[f].validation).copied().collect();
                let train = dataset.select(&pool);
                summary.refit = true;
                match fit_seed(&train, &table.cells[best.cell], config, best.seed, 1) {
                    Ok(o) => {
                        let t0 = Instant::now();
                        summary.test_metric = evaluate(&o.model, &folds[f].test, config.metric).ok();
                        summary.cost_secs = o.fit_secs + t0.elapsed().as_secs_f64();
                        summary.descriptor_length = Some(o.model.descriptor_length(config.weight_threshold));
                        summary.feature_weights = o.model.gamma0.feature_weights(train.n_features());
                    }
                    Err(_) => summary.test_metric = None,
                }
            }
            Some(summary)
        })
        .collect();
    table.summaries = summaries.into_iter().flatten().collect();
    Ok(table)
}

#[derive(Serialize)]
struct Summary {
    metric: String,
    cv_mode: String,
    folds: usize,
    cells: usize,
    failed_rows: usize,
    mean_test: Option<f64>,
    std_test: Option<f64>,
    mean_validation: Option<f64>,
    mean_fit_secs: f64,
    mean_predict_secs: f64,
}

#[derive(Serialize)]
struct Report<'a> {
    schema_version: u32,
    config: BTreeMap<String, String>,
    summary: Summary,
    folds: &'a [FoldSummary],
    rows: &'a [CellResult],
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Writes `<stem>.csv` (one line per fold and cell) and `<stem>.json` (the
/// full report) next to `path`, whatever its extension. Returns both paths.
pub fn save_results(table: &ResultsTable, config: &ExperimentConfig, path: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
    let csv_path = path.as_ref().with_extension("csv");
    let json_path = path.as_ref().with_extension("json");

    let mut w = csv::Writer::from_writer(File::create(&csv_path)?);
    w.write_record([
        "fold", "cell", "seed", "hidden", "delta", "eps0", "eps1", "gamma0", "validation", "test", "fit_secs", "predict_secs",
        "descriptor_length", "iterations", "final_loss", "converged", "best", "error",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &table.rows {
        let best = table.summaries.iter().any(|s| s.fold == r.fold && s.best_cell == r.cell);
        w.write_record([
            r.fold.to_string(),
            r.cell.to_string(),
            r.seed.to_string(),
            r.hidden.clone(),
            r.delta.to_string(),
            r.eps0.to_string(),
            r.eps1.to_string(),
            r.gamma0.clone(),
            opt(r.validation_metric),
            opt(r.test_metric),
            r.fit_secs.to_string(),
            r.predict_secs.to_string(),
            r.descriptor_length.map(|d| d.to_string()).unwrap_or_default(),
            r.iterations.to_string(),
            opt(r.final_loss),
            r.converged.to_string(),
            best.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;

    let tests = table.test_scores();
    let mean_test = mean(&tests);
    let std_test = mean_test.map(|m| (tests.iter().map(|t| (t - m).powi(2)).sum::<f64>() / tests.len() as f64).sqrt());
    let vals: Vec<f64> = table.summaries.iter().map(|s| s.validation_metric).collect();
    let n = table.rows.len().max(1) as f64;
    let report = Report {
        schema_version: REPORT_SCHEMA_VERSION,
        config: config.to_entries().into_iter().collect(),
        summary: Summary {
            metric: table.metric.to_string(),
            cv_mode: table.mode.to_string(),
            folds: table.folds,
            cells: table.cells.len(),
            failed_rows: table.failed_rows(),
            mean_test,
            std_test,
            mean_validation: mean(&vals),
            mean_fit_secs: table.rows.iter().map(|r| r.fit_secs).sum::<f64>() / n,
            mean_predict_secs: table.rows.iter().map(|r| r.predict_secs).sum::<f64>() / n,
        },
        folds: &table.summaries,
        rows: &table.rows,
    };
    serde_json::to_writer_pretty(File::create(&json_path)?, &report)?;
    Ok((csv_path, json_path))
}
