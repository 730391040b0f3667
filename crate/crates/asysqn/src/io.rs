//! LIBSVM and CSV dataset files.

use std::io::{BufRead, Write};

use asysqn_core::matrix::FeatureMatrix;
use asysqn_core::partition::{remap_binary_labels, Dataset};

use crate::CliError;

/// Reads `label idx:val ...` lines with 1-based, strictly increasing
/// indices. `d` is the largest index seen unless `min_cols` is larger.
/// Blank lines and lines starting with `#` are skipped.
pub fn parse_libsvm<R: BufRead>(reader: R, min_cols: usize) -> Result<Dataset, CliError> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut d = min_cols;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: String| CliError::Parse { line: lineno + 1, msg };
        let mut tokens = line.split_whitespace();
        let label: f64 = tokens
            .next()
            .expect("non-empty line has a token")
            .parse()
            .map_err(|_| bad("label is not a number".into()))?;
        let mut row: Vec<(usize, f64)> = Vec::new();
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| bad(format!("`{tok}` is not idx:val")))?;
            let idx: usize = idx.parse().map_err(|_| bad(format!("bad index `{idx}`")))?;
            if idx == 0 {
                return Err(bad("indices are 1-based".into()));
            }
            let val: f64 = val.parse().map_err(|_| bad(format!("bad value `{val}`")))?;
            if !val.is_finite() {
                return Err(bad(format!("non-finite value at index {idx}")));
            }
            if let Some(&(prev, _)) = row.last() {
                if idx - 1 <= prev {
                    return Err(bad(format!("index {idx} does not increase")));
                }
            }
            row.push((idx - 1, val));
            d = d.max(idx);
        }
        rows.push(row);
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(asysqn_core::Error::EmptyDataset.into());
    }
    remap_binary_labels(&mut labels);
    Ok(Dataset::new(FeatureMatrix::from_sparse_rows(&rows, d)?, labels)?)
}

/// Writes nonzero entries only, values in shortest round-trip form.
pub fn write_libsvm<W: Write>(ds: &Dataset, mut out: W) -> std::io::Result<()> {
    for i in 0..ds.n() {
        write!(out, "{}", ds.labels[i])?;
        for (j, v) in ds.features.row(i) {
            if v != 0.0 {
                write!(out, " {}:{}", j + 1, v)?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

/// CSV with a header row; every column except `label_column` is a feature.
pub fn parse_csv<R: std::io::Read>(reader: R, label_column: &str) -> Result<Dataset, CliError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let label_at = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| CliError::Parse {
            line: 1,
            msg: format!("no column named `{label_column}`"),
        })?;
    let d = header.len() - 1;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        if rec.len() != header.len() {
            return Err(CliError::Parse {
                line,
                msg: format!("{} fields, header has {}", rec.len(), header.len()),
            });
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| CliError::Parse {
                line,
                msg: format!("`{field}` in column `{}` is not a number", &header[j]),
            })?;
            if j == label_at {
                labels.push(v);
            } else {
                data.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(asysqn_core::Error::EmptyDataset.into());
    }
    remap_binary_labels(&mut labels);
    Ok(Dataset::new(FeatureMatrix::from_dense(labels.len(), d, data)?, labels)?)
}
