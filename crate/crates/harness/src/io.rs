//! Dataset and prediction CSV files.
//!
//! A dataset file has a header row naming feature columns `x0, x1, ...`
//! followed by either one integer `label` column or probability columns
//! `pi0, pi1, ...`. Floats are written with Rust's shortest round-trip
//! formatting, so saving and reloading is lossless.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use eon_core::inference::Prediction;
use eon_core::simplex::check_simplex;
use eon_core::training::Dataset;
use ndarray::Array2;

use crate::error::{HarnessError, Result};

enum LabelColumns {
    None,
    Integer,
    Probabilities(usize),
}

fn parse_header(header: &csv::StringRecord) -> Result<(usize, LabelColumns)> {
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let k0 = names.iter().take_while(|n| n.starts_with('x')).count();
    for (i, name) in names[..k0].iter().enumerate() {
        if *name != format!("x{i}") {
            return Err(HarnessError::Data(format!("line 1: expected column x{i}, found `{name}`")));
        }
    }
    if k0 == 0 {
        return Err(HarnessError::Data("line 1: no feature columns x0, x1, ...".into()));
    }
    let rest = &names[k0..];
    if rest == ["label"] {
        return Ok((k0, LabelColumns::Integer));
    }
    if rest.is_empty() {
        return Ok((k0, LabelColumns::None));
    }
    for (i, name) in rest.iter().enumerate() {
        if *name != format!("pi{i}") {
            return Err(HarnessError::Data(format!("line 1: expected column pi{i}, found `{name}`")));
        }
    }
    Ok((k0, LabelColumns::Probabilities(rest.len())))
}

enum Targets {
    None,
    Labels(Vec<usize>),
    Distributions(Array2<f64>),
}

fn read_table<R: Read>(reader: R) -> Result<(Array2<f64>, Targets)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let (k0, labels) = parse_header(&header)?;

    let mut features = Vec::new();
    let mut targets: Vec<Vec<f64>> = Vec::new();
    let mut int_labels = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |i: usize| -> Result<f64> {
            let raw = &record[i];
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| HarnessError::Data(format!("line {line}: column {} is not a finite number: `{raw}`", header[i].trim())))
        };
        for d in 0..k0 {
            features.push(cell(d)?);
        }
        match labels {
            LabelColumns::None => {}
            LabelColumns::Integer => {
                let raw = &record[k0];
                let l = raw
                    .parse::<usize>()
                    .map_err(|_| HarnessError::Data(format!("line {line}: label `{raw}` is not a non-negative integer")))?;
                int_labels.push(l);
            }
            LabelColumns::Probabilities(m) => {
                let row = (0..m).map(|j| cell(k0 + j)).collect::<Result<Vec<_>>>()?;
                check_simplex(&row).map_err(|e| HarnessError::Data(format!("line {line}: label distribution {e}")))?;
                targets.push(row);
            }
        }
    }

    let t = features.len() / k0;
    if t == 0 {
        return Err(HarnessError::Data("dataset has no rows".into()));
    }
    let x = Array2::from_shape_vec((t, k0), features).expect("row-major features");
    let targets = match labels {
        LabelColumns::None => Targets::None,
        LabelColumns::Integer => Targets::Labels(int_labels),
        LabelColumns::Probabilities(m) => {
            Targets::Distributions(Array2::from_shape_vec((t, m), targets.concat()).expect("row-major labels"))
        }
    };
    Ok((x, targets))
}

/// Parses a labelled dataset from any reader. Errors name the offending line.
pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let (x, targets) = read_table(reader)?;
    let dataset = match targets {
        Targets::None => return Err(HarnessError::Data("line 1: no label column (`label` or pi0, pi1, ...)".into())),
        Targets::Labels(labels) => {
            let classes = labels.iter().max().unwrap() + 1;
            Dataset::from_labels(x, &labels, classes)?
        }
        Targets::Distributions(pi) => Dataset::new(x, pi)?,
    };
    Ok(dataset)
}

/// Reads only the feature columns; label columns, if present, are checked and dropped.
pub fn read_features<R: Read>(reader: R) -> Result<Array2<f64>> {
    Ok(read_table(reader)?.0)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
    read_dataset(file).map_err(|e| match e {
        HarnessError::Data(msg) => HarnessError::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn load_features(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
    read_features(file).map_err(|e| match e {
        HarnessError::Data(msg) => HarnessError::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn is_one_hot(row: ndarray::ArrayView1<f64>) -> bool {
    row.iter().all(|&v| v == 0.0 || v == 1.0) && row.iter().filter(|&&v| v == 1.0).count() == 1
}

/// Writes a dataset. One-hot label rows are written as a single `label`
/// column; anything softer is written as `pi` columns.
pub fn write_dataset<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let k0 = dataset.n_features();
    let m = dataset.n_classes();
    let hard = dataset.pi().rows().into_iter().all(is_one_hot);
    let mut header: Vec<String> = (0..k0).map(|d| format!("x{d}")).collect();
    if hard {
        header.push("label".into());
    } else {
        header.extend((0..m).map(|j| format!("pi{j}")));
    }
    w.write_record(&header)?;
    let labels = dataset.labels();
    for t in 0..dataset.len() {
        let mut row: Vec<String> = dataset.x().row(t).iter().map(f64::to_string).collect();
        if hard {
            row.push(labels[t].to_string());
        } else {
            row.extend(dataset.pi().row(t).iter().map(f64::to_string));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(dataset, File::create(path)?)
}

/// Writes one row per prediction: `p0..p{M-1}, predicted, reliability, converged`.
/// Rows whose prediction failed carry the error message in an `error` column.
pub fn write_predictions<W: Write>(predictions: &[eon_core::Result<Prediction>], classes: usize, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..classes).map(|j| format!("p{j}")).collect();
    header.extend(["predicted", "reliability", "converged", "error"].map(String::from));
    w.write_record(&header)?;
    for p in predictions {
        let row: Vec<String> = match p {
            Ok(p) => {
                let mut row: Vec<String> = p.label_dist.as_slice().iter().map(f64::to_string).collect();
                row.push(p.label_dist.argmax().to_string());
                row.push(p.reliability.to_string());
                row.push(p.converged.to_string());
                row.push(String::new());
                row
            }
            Err(e) => {
                let mut row = vec![String::new(); classes + 3];
                row.push(e.to_string());
                row
            }
        };
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
