//! Datasets, preprocessing, and the vertical split into party shards.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::matrix::FeatureMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: FeatureMatrix,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn new(features: FeatureMatrix, labels: Vec<f64>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if features.rows() != labels.len() {
            return Err(Error::InvalidDataset(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if labels.iter().any(|y| !y.is_finite()) {
            return Err(Error::NonFinite("labels"));
        }
        for i in 0..features.rows() {
            if features.row(i).any(|(_, v)| !v.is_finite()) {
                return Err(Error::NonFinite("features"));
            }
        }
        Ok(Dataset { features, labels })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.features.cols()
    }

    /// True when every label is -1 or +1.
    pub fn is_binary(&self) -> bool {
        self.labels.iter().all(|&y| y == 1.0 || y == -1.0)
    }

    /// Splits rows into `(train, test)` by index lists.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset> {
        if let Some(&i) = rows.iter().find(|&&i| i >= self.n()) {
            return Err(Error::IndexOutOfRange {
                index: i,
                n: self.n(),
            });
        }
        Dataset::new(
            self.features.select_rows(rows),
            rows.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Holds out every `folds`-th row of a seeded permutation (fold `fold`)
    /// as the test set.
    pub fn holdout_split(&self, folds: usize, fold: usize, seed: u64) -> Result<(Dataset, Dataset)> {
        if folds < 2 || fold >= folds {
            return Err(Error::InvalidConfig(format!(
                "fold {fold} of {folds} is not a valid holdout"
            )));
        }
        let mut order: Vec<usize> = (0..self.n()).collect();
        order.shuffle(&mut crate::rng::stream(seed, crate::rng::STREAM_DATA, &[1]));
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (pos, i) in order.into_iter().enumerate() {
            if pos % folds == fold {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        if test.is_empty() {
            return Err(Error::EmptyTestSet);
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.select_rows(&train)?, self.select_rows(&test)?))
    }
}

/// Maps `{0, 1}` labels onto `{-1, +1}`. Any other label set is left alone.
pub fn remap_binary_labels(labels: &mut [f64]) {
    if labels.iter().all(|&y| y == 0.0 || y == 1.0) {
        for y in labels.iter_mut() {
            if *y == 0.0 {
                *y = -1.0;
            }
        }
    }
}

/// Replaces every listed column by one indicator column per observed
/// integer category, in increasing category order. Other columns keep their
/// relative order.
pub fn one_hot_encode(dataset: &Dataset, categorical: &[usize]) -> Result<Dataset> {
    if categorical.is_empty() {
        return Ok(dataset.clone());
    }
    let d = dataset.d();
    let n = dataset.n();
    let mut is_cat = vec![false; d];
    for &c in categorical {
        if c >= d {
            return Err(Error::Encode(format!("column {c} out of range for {d} features")));
        }
        is_cat[c] = true;
    }

    let mut categories: Vec<Vec<i64>> = vec![Vec::new(); d];
    for &c in categorical {
        let mut seen = BTreeSet::new();
        for i in 0..n {
            let v = dataset.features.get(i, c);
            if libm::trunc(v) != v || v.abs() > (1u64 << 52) as f64 {
                return Err(Error::Encode(format!(
                    "column {c} row {i} holds non-integer value {v}"
                )));
            }
            seen.insert(v as i64);
        }
        categories[c] = seen.into_iter().collect();
    }

    // new column offset of each original column
    let mut offset = vec![0usize; d];
    let mut width = 0;
    for j in 0..d {
        offset[j] = width;
        width += if is_cat[j] { categories[j].len() } else { 1 };
    }

    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let mut row: Vec<(usize, f64)> = Vec::new();
        for j in 0..d {
            let v = dataset.features.get(i, j);
            if is_cat[j] {
                let k = categories[j]
                    .binary_search(&(v as i64))
                    .expect("category collected above");
                row.push((offset[j] + k, 1.0));
            } else if v != 0.0 {
                row.push((offset[j], v));
            }
        }
        rows.push(row);
    }
    Dataset::new(
        FeatureMatrix::from_sparse_rows(&rows, width)?,
        dataset.labels.clone(),
    )
}

/// Standardizes every column to sample mean 0 and sample standard deviation
/// 1 (divisor `n - 1`). Constant columns become zero. The result is dense.
pub fn zscore_normalize(dataset: &Dataset) -> Result<Dataset> {
    let n = dataset.n();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let d = dataset.d();
    let mut data = dataset.features.to_dense_vec();
    for j in 0..d {
        let mean = (0..n).map(|i| data[i * d + j]).sum::<f64>() / n as f64;
        let var = (0..n)
            .map(|i| {
                let c = data[i * d + j] - mean;
                c * c
            })
            .sum::<f64>()
            / (n - 1) as f64;
        let sd = libm::sqrt(var);
        for i in 0..n {
            let x = &mut data[i * d + j];
            *x = if sd > 0.0 { (*x - mean) / sd } else { 0.0 };
        }
    }
    Dataset::new(FeatureMatrix::from_dense(n, d, data)?, dataset.labels.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ColumnOrder {
    #[default]
    Natural,
    Shuffled { seed: u64 },
}

/// One party's vertical slice of the data together with its model block.
#[derive(Debug, Clone, PartialEq)]
pub struct PartyShard {
    pub party_id: usize,
    /// Global feature indices owned, in local column order.
    pub columns: Vec<usize>,
    /// Trailing all-zero columns added so that every block has width >= 2.
    pub pad: usize,
    pub features: FeatureMatrix,
    pub labels: Vec<f64>,
    pub w_block: Vec<f64>,
}

impl PartyShard {
    /// Local block width, padding included.
    #[inline]
    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.labels.len()
    }
}

/// Smallest block width a party may hold; narrower blocks are zero-padded.
pub const MIN_BLOCK_WIDTH: usize = 2;

/// Contiguous block sizes for `d` columns over `q` parties; the first
/// `d mod q` parties get one extra column.
pub fn block_sizes(d: usize, q: usize) -> Vec<usize> {
    (0..q).map(|l| d / q + usize::from(l < d % q)).collect()
}

pub fn vertical_split(dataset: &Dataset, q: usize, order: ColumnOrder) -> Result<Vec<PartyShard>> {
    if q < 1 {
        return Err(Error::NoParties);
    }
    let d = dataset.d();
    if d < q {
        return Err(Error::InvalidSplit { d, q });
    }
    let mut perm: Vec<usize> = (0..d).collect();
    if let ColumnOrder::Shuffled { seed } = order {
        perm.shuffle(&mut crate::rng::stream(seed, crate::rng::STREAM_SPLIT, &[]));
    }
    let mut start = 0;
    let mut shards = Vec::with_capacity(q);
    for (party_id, size) in block_sizes(d, q).into_iter().enumerate() {
        let columns = perm[start..start + size].to_vec();
        start += size;
        let pad = MIN_BLOCK_WIDTH.saturating_sub(size);
        let features = dataset.features.select_columns(&columns, pad);
        shards.push(PartyShard {
            party_id,
            w_block: vec![0.0; size + pad],
            columns,
            pad,
            features,
            labels: dataset.labels.clone(),
        });
    }
    Ok(shards)
}

/// Rebuilds the dense `n x d` matrix from shards, dropping pad columns.
pub fn reassemble(shards: &[PartyShard]) -> Result<Vec<f64>> {
    let n = check_consistent(shards)?;
    let d: usize = shards.iter().map(|s| s.columns.len()).sum();
    let mut out = vec![0.0; n * d];
    for s in shards {
        for i in 0..n {
            for (j, v) in s.features.row(i) {
                if j < s.columns.len() {
                    out[i * d + s.columns[j]] = v;
                }
            }
        }
    }
    Ok(out)
}

/// Full weight vector in global column order (pad weights dropped).
pub fn gather_weights(shards: &[PartyShard]) -> Vec<f64> {
    let d: usize = shards.iter().map(|s| s.columns.len()).sum();
    let mut w = vec![0.0; d];
    for s in shards {
        for (pos, &j) in s.columns.iter().enumerate() {
            w[j] = s.w_block[pos];
        }
    }
    w
}

/// Writes a global weight vector into the shards' blocks; pad weights are
/// zeroed.
pub fn scatter_weights(shards: &mut [PartyShard], w: &[f64]) {
    for s in shards {
        for v in s.w_block.iter_mut() {
            *v = 0.0;
        }
        for (pos, &j) in s.columns.iter().enumerate() {
            s.w_block[pos] = w[j];
        }
    }
}

/// Common sample count of the shards.
pub fn check_consistent(shards: &[PartyShard]) -> Result<usize> {
    let first = shards.first().ok_or(Error::NoParties)?;
    let n = first.n();
    for s in shards {
        if s.n() != n || s.features.rows() != n {
            return Err(Error::InvalidDataset(format!(
                "party {} has {} samples, expected {n}",
                s.party_id,
                s.n()
            )));
        }
        if s.w_block.len() != s.dim() {
            return Err(Error::DimensionMismatch {
                expected: s.dim(),
                got: s.w_block.len(),
            });
        }
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(rows: &[&[f64]], labels: &[f64]) -> Dataset {
        let d = rows[0].len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Dataset::new(
            FeatureMatrix::from_dense(rows.len(), d, data).unwrap(),
            labels.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn one_hot_three_categories() {
        let ds = toy(&[&[0.0, 5.0], &[1.0, 6.0], &[2.0, 7.0], &[1.0, 8.0]], &[1.0, -1.0, 1.0, 1.0]);
        let enc = one_hot_encode(&ds, &[0]).unwrap();
        assert_eq!(enc.n(), 4);
        assert_eq!(enc.d(), 4);
        for i in 0..4 {
            let s: f64 = (0..3).map(|j| enc.features.get(i, j)).sum();
            assert_eq!(s, 1.0);
            assert_eq!(enc.features.get(i, 3), ds.features.get(i, 1));
        }
        assert_eq!(enc.features.get(1, 1), 1.0);
        assert_eq!(enc.features.get(3, 1), 1.0);
    }

    #[test]
    fn one_hot_identity_and_errors() {
        let ds = toy(&[&[0.5, 1.0], &[1.0, 2.0]], &[1.0, -1.0]);
        assert_eq!(one_hot_encode(&ds, &[]).unwrap(), ds);
        assert!(matches!(one_hot_encode(&ds, &[0]), Err(Error::Encode(_))));
        assert!(matches!(one_hot_encode(&ds, &[7]), Err(Error::Encode(_))));
    }

    #[test]
    fn zscore_hand_values() {
        let ds = toy(&[&[1.0, 0.0], &[3.0, 0.0]], &[1.0, -1.0]);
        let z = zscore_normalize(&ds).unwrap();
        // mean 2, sample sd sqrt(2)
        let s = libm::sqrt(2.0);
        assert!((z.features.get(0, 0) + 1.0 / s).abs() < 1e-15);
        assert!((z.features.get(1, 0) - 1.0 / s).abs() < 1e-15);
        assert_eq!(z.features.get(0, 1), 0.0);
        assert_eq!(z.features.get(1, 1), 0.0);
    }

    #[test]
    fn zscore_is_idempotent() {
        let ds = toy(&[&[1.0, 4.0], &[3.0, -2.0], &[7.5, 0.25]], &[1.0, -1.0, 1.0]);
        let z1 = zscore_normalize(&ds).unwrap();
        let z2 = zscore_normalize(&z1).unwrap();
        for (a, b) in z1.features.to_dense_vec().iter().zip(z2.features.to_dense_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zscore_needs_two_rows() {
        let ds = toy(&[&[1.0]], &[1.0]);
        assert!(matches!(zscore_normalize(&ds), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn split_127_over_8() {
        assert_eq!(block_sizes(127, 8), vec![16, 16, 16, 16, 16, 16, 16, 15]);
        let rows: Vec<Vec<(usize, f64)>> = (0..3).map(|i| vec![(i, 1.0), (126, 2.0)]).collect();
        let ds = Dataset::new(FeatureMatrix::from_sparse_rows(&rows, 127).unwrap(), vec![1.0; 3]).unwrap();
        let shards = vertical_split(&ds, 8, ColumnOrder::Natural).unwrap();
        assert_eq!(shards.iter().map(|s| s.dim()).max(), Some(16));
        assert_eq!(reassemble(&shards).unwrap(), ds.features.to_dense_vec());
    }

    #[test]
    fn split_pads_single_columns() {
        let ds = toy(&[&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]], &[1.0]);
        let shards = vertical_split(&ds, 8, ColumnOrder::Natural).unwrap();
        for s in &shards {
            assert_eq!(s.dim(), 2);
            assert_eq!(s.pad, 1);
            assert_eq!(s.features.get(0, 1), 0.0);
        }
        assert_eq!(shards.iter().map(|s| s.columns.len()).sum::<usize>(), 8);
    }

    #[test]
    fn split_single_party_is_identity() {
        let ds = toy(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]], &[1.0, -1.0]);
        let shards = vertical_split(&ds, 1, ColumnOrder::Natural).unwrap();
        assert_eq!(shards.len(), 1);
        assert_eq!(shards[0].features, ds.features);
        assert_eq!(shards[0].labels, ds.labels);
    }

    #[test]
    fn split_errors() {
        let ds = toy(&[&[1.0, 2.0]], &[1.0]);
        assert!(matches!(vertical_split(&ds, 3, ColumnOrder::Natural), Err(Error::InvalidSplit { .. })));
        assert!(matches!(vertical_split(&ds, 0, ColumnOrder::Natural), Err(Error::NoParties)));
    }

    #[test]
    fn labels_remap() {
        let mut y = vec![0.0, 1.0, 1.0];
        remap_binary_labels(&mut y);
        assert_eq!(y, vec![-1.0, 1.0, 1.0]);
        let mut y = vec![2.0, 1.0];
        remap_binary_labels(&mut y);
        assert_eq!(y, vec![2.0, 1.0]);
    }

    #[test]
    fn holdout_is_a_partition() {
        let rows: Vec<Vec<(usize, f64)>> = (0..20).map(|i| vec![(0, i as f64)]).collect();
        let ds = Dataset::new(FeatureMatrix::from_sparse_rows(&rows, 1).unwrap(), vec![1.0; 20]).unwrap();
        let (tr, te) = ds.holdout_split(10, 3, 9).unwrap();
        assert_eq!(tr.n() + te.n(), 20);
        assert_eq!(te.n(), 2);
    }
}
