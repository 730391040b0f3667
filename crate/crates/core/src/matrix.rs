//! Row-major feature storage, dense for narrow data and CSR above
//! [`DENSE_COLUMN_LIMIT`] columns.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Widest matrix that is stored densely.
pub const DENSE_COLUMN_LIMIT: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMatrix {
    Dense {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    },
    Csr {
        rows: usize,
        cols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    },
}

pub enum RowIter<'a> {
    Dense(core::iter::Enumerate<core::slice::Iter<'a, f64>>),
    Sparse(core::iter::Zip<core::slice::Iter<'a, usize>, core::slice::Iter<'a, f64>>),
}

impl Iterator for RowIter<'_> {
    type Item = (usize, f64);

    #[inline]
    fn next(&mut self) -> Option<(usize, f64)> {
        match self {
            RowIter::Dense(it) => it.next().map(|(j, v)| (j, *v)),
            RowIter::Sparse(it) => it.next().map(|(j, v)| (*j, *v)),
        }
    }
}

impl FeatureMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        FeatureMatrix::Dense {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from sparse rows of `(column, value)` pairs with
    /// strictly increasing columns. Storage is chosen from the width.
    pub fn from_sparse_rows(rows: &[Vec<(usize, f64)>], cols: usize) -> Result<Self> {
        for row in rows {
            if let Some(&(j, _)) = row.iter().find(|(j, _)| *j >= cols) {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: j + 1,
                });
            }
        }
        if cols <= DENSE_COLUMN_LIMIT {
            let mut data = vec![0.0; rows.len() * cols];
            for (i, row) in rows.iter().enumerate() {
                for &(j, v) in row {
                    data[i * cols + j] = v;
                }
            }
            Ok(FeatureMatrix::Dense {
                rows: rows.len(),
                cols,
                data,
            })
        } else {
            let mut indptr = Vec::with_capacity(rows.len() + 1);
            let mut indices = Vec::new();
            let mut values = Vec::new();
            indptr.push(0);
            for row in rows {
                for &(j, v) in row {
                    if v != 0.0 {
                        indices.push(j);
                        values.push(v);
                    }
                }
                indptr.push(indices.len());
            }
            Ok(FeatureMatrix::Csr {
                rows: rows.len(),
                cols,
                indptr,
                indices,
                values,
            })
        }
    }

    pub fn from_dense(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(FeatureMatrix::Dense { rows, cols, data })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        match self {
            FeatureMatrix::Dense { rows, .. } | FeatureMatrix::Csr { rows, .. } => *rows,
        }
    }

    #[inline]
    pub fn cols(&self) -> usize {
        match self {
            FeatureMatrix::Dense { cols, .. } | FeatureMatrix::Csr { cols, .. } => *cols,
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, FeatureMatrix::Dense { .. })
    }

    /// Stored entries of row `i`. Dense rows yield every column.
    #[inline]
    pub fn row(&self, i: usize) -> RowIter<'_> {
        match self {
            FeatureMatrix::Dense { cols, data, .. } => {
                RowIter::Dense(data[i * cols..(i + 1) * cols].iter().enumerate())
            }
            FeatureMatrix::Csr {
                indptr,
                indices,
                values,
                ..
            } => {
                let (lo, hi) = (indptr[i], indptr[i + 1]);
                RowIter::Sparse(indices[lo..hi].iter().zip(values[lo..hi].iter()))
            }
        }
    }

    #[inline]
    pub fn row_dot(&self, i: usize, w: &[f64]) -> f64 {
        match self {
            FeatureMatrix::Dense { cols, data, .. } => {
                crate::linalg::dot(&data[i * cols..(i + 1) * cols], w)
            }
            FeatureMatrix::Csr {
                indptr,
                indices,
                values,
                ..
            } => {
                let (lo, hi) = (indptr[i], indptr[i + 1]);
                indices[lo..hi]
                    .iter()
                    .zip(&values[lo..hi])
                    .map(|(&j, v)| v * w[j])
                    .sum()
            }
        }
    }

    /// `out += alpha * x_i`
    #[inline]
    pub fn row_axpy(&self, i: usize, alpha: f64, out: &mut [f64]) {
        match self {
            FeatureMatrix::Dense { cols, data, .. } => {
                crate::linalg::axpy(alpha, &data[i * cols..(i + 1) * cols], out)
            }
            FeatureMatrix::Csr {
                indptr,
                indices,
                values,
                ..
            } => {
                let (lo, hi) = (indptr[i], indptr[i + 1]);
                for (&j, v) in indices[lo..hi].iter().zip(&values[lo..hi]) {
                    out[j] += alpha * v;
                }
            }
        }
    }

    pub fn row_norm_sq(&self, i: usize) -> f64 {
        self.row(i).map(|(_, v)| v * v).sum()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            FeatureMatrix::Dense { cols, data, .. } => data[i * cols + j],
            FeatureMatrix::Csr {
                indptr,
                indices,
                values,
                ..
            } => {
                let (lo, hi) = (indptr[i], indptr[i + 1]);
                match indices[lo..hi].binary_search(&j) {
                    Ok(p) => values[lo + p],
                    Err(_) => 0.0,
                }
            }
        }
    }

    pub fn nnz(&self) -> usize {
        match self {
            FeatureMatrix::Dense { data, .. } => data.iter().filter(|v| **v != 0.0).count(),
            FeatureMatrix::Csr { values, .. } => values.len(),
        }
    }

    /// Nonzero `(column, value)` pairs of every row.
    pub fn to_sparse_rows(&self) -> Vec<Vec<(usize, f64)>> {
        (0..self.rows())
            .map(|i| self.row(i).filter(|(_, v)| *v != 0.0).collect())
            .collect()
    }

    pub fn to_dense_vec(&self) -> Vec<f64> {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for (j, v) in self.row(i) {
                out[i * c + j] = v;
            }
        }
        out
    }

    /// Picks `columns` in the given order and appends `pad` all-zero columns.
    /// The result keeps the storage kind of `self`.
    pub fn select_columns(&self, columns: &[usize], pad: usize) -> FeatureMatrix {
        let width = columns.len() + pad;
        match self {
            FeatureMatrix::Dense { rows, cols, data } => {
                let mut out = vec![0.0; rows * width];
                for i in 0..*rows {
                    let src = &data[i * cols..(i + 1) * cols];
                    let dst = &mut out[i * width..i * width + columns.len()];
                    for (d, &j) in dst.iter_mut().zip(columns) {
                        *d = src[j];
                    }
                }
                FeatureMatrix::Dense {
                    rows: *rows,
                    cols: width,
                    data: out,
                }
            }
            FeatureMatrix::Csr { rows, cols, .. } => {
                let mut local = vec![usize::MAX; *cols];
                for (pos, &j) in columns.iter().enumerate() {
                    local[j] = pos;
                }
                let mut indptr = Vec::with_capacity(rows + 1);
                let mut indices = Vec::new();
                let mut values = Vec::new();
                indptr.push(0);
                let mut scratch: Vec<(usize, f64)> = Vec::new();
                for i in 0..*rows {
                    scratch.clear();
                    scratch.extend(
                        self.row(i)
                            .filter(|(j, _)| local[*j] != usize::MAX)
                            .map(|(j, v)| (local[j], v)),
                    );
                    scratch.sort_unstable_by_key(|(j, _)| *j);
                    for &(j, v) in &scratch {
                        indices.push(j);
                        values.push(v);
                    }
                    indptr.push(indices.len());
                }
                FeatureMatrix::Csr {
                    rows: *rows,
                    cols: width,
                    indptr,
                    indices,
                    values,
                }
            }
        }
    }

    /// Keeps only the listed rows, in order.
    pub fn select_rows(&self, rows_idx: &[usize]) -> FeatureMatrix {
        match self {
            FeatureMatrix::Dense { cols, data, .. } => {
                let mut out = Vec::with_capacity(rows_idx.len() * cols);
                for &i in rows_idx {
                    out.extend_from_slice(&data[i * cols..(i + 1) * cols]);
                }
                FeatureMatrix::Dense {
                    rows: rows_idx.len(),
                    cols: *cols,
                    data: out,
                }
            }
            FeatureMatrix::Csr {
                cols,
                indptr,
                indices,
                values,
                ..
            } => {
                let mut new_ptr = Vec::with_capacity(rows_idx.len() + 1);
                let mut new_idx = Vec::new();
                let mut new_val = Vec::new();
                new_ptr.push(0);
                for &i in rows_idx {
                    let (lo, hi) = (indptr[i], indptr[i + 1]);
                    new_idx.extend_from_slice(&indices[lo..hi]);
                    new_val.extend_from_slice(&values[lo..hi]);
                    new_ptr.push(new_idx.len());
                }
                FeatureMatrix::Csr {
                    rows: rows_idx.len(),
                    cols: *cols,
                    indptr: new_ptr,
                    indices: new_idx,
                    values: new_val,
                }
            }
        }
    }
}
