//! CSV readers for model inputs and datasets, CSV writers for result
//! tables, and input hashing.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::conjlm::Dataset;
use crate::error::{Error, Result};
use crate::psisloo::{ElpdEstimate, LogLikMatrix};

/// Column names accepted for pointwise elpd values.
pub const POINTWISE_COLUMNS: [&str; 2] = ["elpd_loo", "elpd"];

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|source| Error::UnreadableInput {
            path: path.display().to_string(),
            source,
        })?;
    Ok(buf)
}

/// Hex sha256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(read_bytes(path)?)))
}

/// Model identifier taken from the file stem.
pub fn model_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn records(bytes: &[u8]) -> Result<Vec<csv::StringRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let rows = rdr.records().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(rows
        .into_iter()
        .filter(|r| !(r.len() == 1 && r[0].is_empty()))
        .collect())
}

fn parse_cell(s: &str, path: &Path, row: usize, col: &str) -> Result<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
        Error::SchemaMismatch(format!(
            "{}: row {row}, column {col}: `{s}` is not a finite number",
            path.display()
        ))
    })
}

fn is_numeric_row(r: &csv::StringRecord) -> bool {
    r.iter().all(|c| c.parse::<f64>().is_ok())
}

/// Log-likelihood matrix with one row per posterior draw and one column per
/// observation. A non-numeric first row is taken as a header.
pub fn read_loglik_csv(path: &Path) -> Result<LogLikMatrix<f64>> {
    let rows = records(&read_bytes(path)?)?;
    let skip = usize::from(rows.first().is_some_and(|r| !is_numeric_row(r)));
    let body = &rows[skip..];
    let obs = body.first().map_or(0, csv::StringRecord::len);
    if body.is_empty() || obs == 0 {
        return Err(Error::SchemaMismatch(format!(
            "{}: no log-likelihood rows",
            path.display()
        )));
    }
    let mut values = Vec::with_capacity(body.len() * obs);
    for (i, r) in body.iter().enumerate() {
        if r.len() != obs {
            return Err(Error::SchemaMismatch(format!(
                "{}: draw {} has {} columns, expected {obs}",
                path.display(),
                i + 1,
                r.len()
            )));
        }
        for (j, c) in r.iter().enumerate() {
            values.push(parse_cell(c, path, i + 1 + skip, &(j + 1).to_string())?);
        }
    }
    LogLikMatrix::new(model_id(path), values, body.len(), obs)
}

/// Pointwise elpd values: a header row and either a single column or a
/// column named `elpd_loo` (or `elpd`).
pub fn read_pointwise_csv(path: &Path) -> Result<ElpdEstimate<f64>> {
    let rows = records(&read_bytes(path)?)?;
    let header = rows
        .first()
        .ok_or_else(|| Error::SchemaMismatch(format!("{}: empty file", path.display())))?;
    let col = if header.len() == 1 {
        0
    } else {
        POINTWISE_COLUMNS
            .iter()
            .find_map(|name| header.iter().position(|h| h == *name))
            .ok_or_else(|| {
                Error::SchemaMismatch(format!(
                    "{}: no `elpd_loo` column among [{}]",
                    path.display(),
                    header.iter().collect::<Vec<_>>().join(", ")
                ))
            })?
    };
    let name = header.get(col).unwrap_or("elpd_loo").to_owned();
    let values = rows[1..]
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let cell = r.get(col).ok_or_else(|| {
                Error::SchemaMismatch(format!("{}: row {} is missing column {name}", path.display(), i + 2))
            })?;
            parse_cell(cell, path, i + 2, &name)
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(Error::SchemaMismatch(format!(
            "{}: no pointwise values",
            path.display()
        )));
    }
    ElpdEstimate::from_pointwise(model_id(path), values)
}

/// Regression data with a header row; every column except `target` is a
/// predictor. An intercept is always included.
pub fn read_dataset_csv(path: &Path, target: &str) -> Result<Dataset> {
    let rows = records(&read_bytes(path)?)?;
    let header = rows
        .first()
        .ok_or_else(|| Error::SchemaMismatch(format!("{}: empty file", path.display())))?;
    let names: Vec<String> = header.iter().map(str::to_owned).collect();
    let t = names.iter().position(|h| h == target).ok_or_else(|| {
        Error::SchemaMismatch(format!(
            "{}: target column `{target}` not found among [{}]",
            path.display(),
            names.join(", ")
        ))
    })?;
    let body = &rows[1..];
    if body.is_empty() {
        return Err(Error::SchemaMismatch(format!("{}: no data rows", path.display())));
    }
    let p = names.len() - 1;
    let mut x = DMatrix::zeros(body.len(), p);
    let mut y = DVector::zeros(body.len());
    for (i, r) in body.iter().enumerate() {
        if r.len() != names.len() {
            return Err(Error::SchemaMismatch(format!(
                "{}: row {} has {} columns, header has {}",
                path.display(),
                i + 2,
                r.len(),
                names.len()
            )));
        }
        let mut j = 0;
        for (c, cell) in r.iter().enumerate() {
            let v = parse_cell(cell, path, i + 2, &names[c])?;
            if c == t {
                y[i] = v;
            } else {
                x[(i, j)] = v;
                j += 1;
            }
        }
    }
    let predictors = names
        .into_iter()
        .enumerate()
        .filter(|&(c, _)| c != t)
        .map(|(_, n)| n)
        .collect();
    Dataset::with_names(x, y, true, predictors)
}

/// Serializes rows as CSV with a header taken from the field names.
pub fn write_csv<W: Write, S: Serialize>(writer: W, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    write_csv(File::create(path)?, rows)
}
