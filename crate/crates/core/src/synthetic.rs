//! Seeded synthetic datasets for tests and desk-scale experiments.

use alloc::vec::Vec;

use rand::Rng;

use crate::matrix::FeatureMatrix;
use crate::partition::Dataset;
use crate::rng::{stream, STREAM_DATA};
use crate::Result;

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; 1 - u keeps the log argument in (0, 1]
    let u: f64 = 1.0 - rng.gen::<f64>();
    let v: f64 = rng.gen();
    libm::sqrt(-2.0 * libm::log(u)) * libm::cos(2.0 * core::f64::consts::PI * v)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Dense standard-normal features with labels drawn from a logistic model
/// around a random ground-truth weight vector.
pub fn logistic_gaussian(n: usize, d: usize, seed: u64) -> Result<Dataset> {
    let mut rng = stream(seed, STREAM_DATA, &[n as u64, d as u64, 1]);
    let w_true: Vec<f64> = (0..d).map(|_| gaussian(&mut rng) / libm::sqrt(d as f64) * 2.0).collect();
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| gaussian(&mut rng)).collect();
        let z: f64 = row.iter().zip(&w_true).map(|(a, b)| a * b).sum();
        y.push(if rng.gen::<f64>() < sigmoid(z) { 1.0 } else { -1.0 });
        x.extend(row);
    }
    Dataset::new(FeatureMatrix::from_dense(n, d, x)?, y)
}

/// One-hot group widths of the adult census encoding (123 columns).
pub const ADULT_GROUPS: [usize; 14] = [5, 8, 5, 16, 5, 7, 14, 6, 5, 2, 2, 2, 5, 41];

/// Binary one-hot rows shaped like the adult census data: one active
/// indicator per attribute group, skewed category frequencies, and labels
/// from a logistic model with roughly a quarter positives.
pub fn adult_like(n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = stream(seed, STREAM_DATA, &[n as u64, 2]);
    let d: usize = ADULT_GROUPS.iter().sum();
    let w_true: Vec<f64> = (0..d).map(|_| 0.9 * gaussian(&mut rng)).collect();
    // Zipf-like weights per group
    let cdfs: Vec<Vec<f64>> = ADULT_GROUPS
        .iter()
        .map(|&g| {
            let raw: Vec<f64> = (0..g).map(|j| 1.0 / (j as f64 + 1.0)).collect();
            let total: f64 = raw.iter().sum();
            raw.iter()
                .scan(0.0, |acc, p| {
                    *acc += p / total;
                    Some(*acc)
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = Vec::with_capacity(ADULT_GROUPS.len());
        let mut offset = 0;
        let mut z = -1.2;
        for (g, cdf) in ADULT_GROUPS.iter().zip(&cdfs) {
            let u: f64 = rng.gen();
            let j = cdf.iter().position(|&c| u < c).unwrap_or(g - 1);
            row.push((offset + j, 1.0));
            z += w_true[offset + j];
            offset += g;
        }
        y.push(if rng.gen::<f64>() < sigmoid(z) { 1.0 } else { -1.0 });
        rows.push(row);
    }
    Dataset::new(FeatureMatrix::from_sparse_rows(&rows, d)?, y)
}
