//! CSV ingestion and emission. A header row is required; every cell must
//! parse as a finite float (dot decimal, locale independent), and parse
//! failures carry the offending row and column.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::CliError;

pub struct NumericTable {
    pub headers: Vec<String>,
    pub data: DMatrix<f64>,
}

impl NumericTable {
    pub fn column_by_name(&self, name: &str) -> Result<Vec<f64>, CliError> {
        let idx = self
            .headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::data(format!("column '{name}' not found")))?;
        Ok(self.data.column(idx).iter().cloned().collect())
    }

    /// Reorder/select columns by name, failing on any missing one.
    pub fn select(&self, names: &[String]) -> Result<DMatrix<f64>, CliError> {
        let mut idx = Vec::with_capacity(names.len());
        for name in names {
            let i = self
                .headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| CliError::data(format!("missing column '{name}'")))?;
            idx.push(i);
        }
        Ok(DMatrix::from_fn(self.data.nrows(), idx.len(), |r, c| {
            self.data[(r, idx[c])]
        }))
    }
}

/// Read an all-numeric CSV with a header row.
pub fn read_numeric_csv(path: &Path) -> Result<NumericTable, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::data(format!("opening {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::data(format!("reading header of {}: {e}", path.display())))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    if headers.is_empty() {
        return Err(CliError::data(format!(
            "{}: empty header row",
            path.display()
        )));
    }

    let mut values: Vec<f64> = Vec::new();
    let mut n_rows = 0usize;
    for (row_idx, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| CliError::data(format!("{} row {}: {e}", path.display(), row_idx + 2)))?;
        if record.len() != headers.len() {
            return Err(CliError::data(format!(
                "{} row {}: {} fields, header has {}",
                path.display(),
                row_idx + 2,
                record.len(),
                headers.len()
            )));
        }
        for (col_idx, cell) in record.iter().enumerate() {
            let parsed: f64 = cell.parse().map_err(|_| {
                CliError::data(format!(
                    "{} row {} column '{}': cannot parse '{}' as a number",
                    path.display(),
                    row_idx + 2,
                    headers[col_idx],
                    cell
                ))
            })?;
            if !parsed.is_finite() {
                return Err(CliError::data(format!(
                    "{} row {} column '{}': non-finite value",
                    path.display(),
                    row_idx + 2,
                    headers[col_idx]
                )));
            }
            values.push(parsed);
        }
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(CliError::data(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    let data = DMatrix::from_row_slice(n_rows, headers.len(), &values);
    Ok(NumericTable { headers, data })
}

/// Serialize a table of named float columns (shortest round-trip formatting).
pub fn format_csv(headers: &[String], columns: &[DVector<f64>]) -> String {
    let n = columns.first().map_or(0, |c| c.len());
    let mut out = String::new();
    out.push_str(&headers.join(","));
    out.push('\n');
    for i in 0..n {
        let row: Vec<String> = columns.iter().map(|c| format!("{}", c[i])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Write text either to a file or to stdout.
pub fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::data(format!("writing {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
