//! CSV ingestion and emission with NA handling.
//!
//! Cells that are empty or match one of the NA tokens become masked entries;
//! everything else must parse as a finite real. Masked cells are written back
//! as empty fields, and values use the shortest round-trip decimal form, so a
//! write/read cycle reproduces the observed data exactly.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::PipelineError;
use crate::data::IncompleteMatrix;

/// Header names plus parsed cells (`None` = masked).
type ParsedTable = (Vec<String>, Vec<Vec<Option<f64>>>);

/// Feature values, observation mask and column names.
type FeatureTable = (DMatrix<f64>, DMatrix<bool>, Vec<String>);

/// Tokens treated as missing by default.
pub fn default_na_tokens() -> Vec<String> {
    vec![String::new(), "NA".to_string(), "NaN".to_string()]
}

/// A parsed training file.
#[derive(Debug, Clone)]
pub struct LoadedCsv {
    pub data: IncompleteMatrix,
    pub feature_names: Vec<String>,
    pub target_name: String,
}

fn parse_cell(
    token: &str,
    na_tokens: &[String],
    row: usize,
    column: &str,
) -> Result<Option<f64>, PipelineError> {
    let trimmed = token.trim();
    if na_tokens.iter().any(|na| na == trimmed) {
        return Ok(None);
    }
    match trimmed.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(PipelineError::Parse {
            row,
            column: column.to_string(),
            token: trimmed.to_string(),
        }),
    }
}

fn read_table(
    path: &Path,
    na_tokens: &[String],
) -> Result<ParsedTable, PipelineError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers.is_empty() {
        return Err(PipelineError::InvalidInput("empty header row".into()));
    }
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(PipelineError::InvalidInput(format!(
                "data row {} has {} fields, header has {}",
                idx + 1,
                record.len(),
                headers.len()
            )));
        }
        let mut row = Vec::with_capacity(headers.len());
        for (j, token) in record.iter().enumerate() {
            row.push(parse_cell(token, na_tokens, idx + 1, &headers[j])?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(PipelineError::InvalidInput("no data rows".into()));
    }
    Ok((headers, rows))
}

/// Loads a training CSV: the target column must be fully observed; every
/// other column becomes a feature in file order.
pub fn load_csv(
    path: impl AsRef<Path>,
    target_column: &str,
    na_tokens: &[String],
) -> Result<LoadedCsv, PipelineError> {
    let (headers, rows) = read_table(path.as_ref(), na_tokens)?;
    let target_idx = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| PipelineError::MissingColumn(target_column.to_string()))?;
    let feature_names: Vec<String> =
        headers.iter().enumerate().filter(|&(j, _)| j != target_idx).map(|(_, h)| h.clone()).collect();
    let n = rows.len();
    let p = feature_names.len();
    let mut values = DMatrix::zeros(n, p);
    let mut mask = DMatrix::from_element(n, p, true);
    let mut response = DVector::zeros(n);
    for (i, row) in rows.iter().enumerate() {
        match row[target_idx] {
            Some(y) => response[i] = y,
            None => return Err(PipelineError::TargetHasMissing(target_column.to_string())),
        }
        let mut c = 0;
        for (j, cell) in row.iter().enumerate() {
            if j == target_idx {
                continue;
            }
            match cell {
                Some(v) => values[(i, c)] = *v,
                None => mask[(i, c)] = false,
            }
            c += 1;
        }
    }
    Ok(LoadedCsv {
        data: IncompleteMatrix::new(values, mask, response),
        feature_names,
        target_name: target_column.to_string(),
    })
}

/// Loads a plain feature table (no target), keeping the observation mask.
pub fn load_csv_features(
    path: impl AsRef<Path>,
    na_tokens: &[String],
) -> Result<FeatureTable, PipelineError> {
    let (headers, rows) = read_table(path.as_ref(), na_tokens)?;
    let n = rows.len();
    let p = headers.len();
    let mut values = DMatrix::zeros(n, p);
    let mut mask = DMatrix::from_element(n, p, true);
    for (i, row) in rows.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            match cell {
                Some(v) => values[(i, j)] = *v,
                None => mask[(i, j)] = false,
            }
        }
    }
    Ok((values, mask, headers))
}

/// Writes a table with masked cells as empty fields. An optional named
/// response column is appended last.
pub fn write_csv(
    path: impl AsRef<Path>,
    values: &DMatrix<f64>,
    mask: &DMatrix<bool>,
    names: &[String],
    response: Option<(&str, &DVector<f64>)>,
) -> Result<(), PipelineError> {
    assert_eq!(values.ncols(), names.len());
    assert_eq!(values.nrows(), mask.nrows());
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    let mut header: Vec<String> = names.to_vec();
    if let Some((target, _)) = response {
        header.push(target.to_string());
    }
    writer.write_record(&header)?;
    for i in 0..values.nrows() {
        let mut record: Vec<String> = Vec::with_capacity(header.len());
        for j in 0..values.ncols() {
            if mask[(i, j)] {
                record.push(format!("{}", values[(i, j)]));
            } else {
                record.push(String::new());
            }
        }
        if let Some((_, y)) = response {
            record.push(format!("{}", y[i]));
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}
