//! Stochastic damped L-BFGS for one party's block.
//!
//! Each new pair `(s, y_bar)` is damped before it enters memory:
//!
//! ```text
//! gamma   = max(y_bar.y_bar / s.y_bar, delta)   (delta when s.y_bar <= 0)
//! sigma   = gamma * s.s
//! theta   = 0.7 sigma / (sigma - s.y_bar)   if s.y_bar < 0.3 sigma, else 1
//! y_hat   = theta * y_bar + (1 - theta) * gamma * s
//! ```
//!
//! which guarantees `s.y_hat >= 0.3 sigma > 0`. The inverse-Hessian
//! approximation built from the stored `(s, y_hat)` pairs on top of
//! `H0 = I / gamma` is therefore positive definite no matter how stale or
//! noisy the gradient differences were.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{axpy, dot};
use crate::{Error, Result};

/// Curvature ratio below which a pair is damped.
pub const DAMPING_THRESHOLD: f64 = 0.3;
pub const DEFAULT_MEMORY: usize = 8;
pub const DEFAULT_DELTA: f64 = 0.01;
/// Pairs whose damped curvature falls below this are dropped.
pub const MIN_CURVATURE: f64 = 1e-300;
/// Largest dimension accepted by [`explicit_hessian_oracle`].
pub const ORACLE_MAX_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct CurvaturePair {
    pub s: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureMemory {
    capacity: usize,
    delta: f64,
    gamma: f64,
    pairs: VecDeque<CurvaturePair>,
}

/// What the damping step did to the last pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DampingReport {
    pub theta_coeff: f64,
    pub sigma: f64,
    /// `s . y_bar` before damping.
    pub raw_curvature: f64,
    /// `s . y_hat` after damping.
    pub damped_curvature: f64,
    pub activated: bool,
    /// The pair was dropped because its damped curvature underflowed.
    pub rejected: bool,
}

impl CurvatureMemory {
    /// Empty memory; the initial scaling is `gamma = 1` (the first direction
    /// is the estimator itself).
    pub fn new(capacity: usize, delta: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("memory size must be positive".into()));
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidConfig("damping floor delta must be positive".into()));
        }
        Ok(CurvatureMemory {
            capacity,
            delta,
            gamma: 1.0f64.max(delta),
            pairs: VecDeque::with_capacity(capacity),
        })
    }

    #[inline]
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    #[inline]
    pub fn delta(&self) -> f64 {
        self.delta
    }

    #[inline]
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Stored pairs, oldest first.
    pub fn pairs(&self) -> impl DoubleEndedIterator<Item = &CurvaturePair> + ExactSizeIterator {
        self.pairs.iter()
    }

    /// Dimension of the stored vectors, if any pair is stored.
    pub fn dim(&self) -> Option<usize> {
        self.pairs.front().map(|p| p.s.len())
    }

    /// Damps `(s, y_bar)`, refreshes `gamma` and pushes the pair, evicting
    /// the oldest one when full.
    pub fn update(&mut self, s: &[f64], y_bar: &[f64]) -> Result<DampingReport> {
        if s.len() != y_bar.len() {
            return Err(Error::DimensionMismatch {
                expected: s.len(),
                got: y_bar.len(),
            });
        }
        if let Some(d) = self.dim() {
            if d != s.len() {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: s.len(),
                });
            }
        }
        if !crate::linalg::all_finite(s) {
            return Err(Error::NonFinite("curvature step"));
        }
        if !crate::linalg::all_finite(y_bar) {
            return Err(Error::NonFinite("gradient difference"));
        }
        let ss = dot(s, s);
        if ss == 0.0 {
            return Err(Error::DegenerateStep);
        }
        let sy = dot(s, y_bar);
        let gamma = if sy > 0.0 {
            let ratio = dot(y_bar, y_bar) / sy;
            if ratio.is_finite() { ratio.max(self.delta) } else { self.delta }
        } else {
            self.delta
        };
        let sigma = gamma * ss;
        let (theta, activated) = if sy < DAMPING_THRESHOLD * sigma {
            (0.7 * sigma / (sigma - sy), true)
        } else {
            (1.0, false)
        };
        let y_hat: Vec<f64> = if activated {
            y_bar
                .iter()
                .zip(s)
                .map(|(yb, si)| theta * yb + (1.0 - theta) * gamma * si)
                .collect()
        } else {
            y_bar.to_vec()
        };
        let s_y_hat = dot(s, &y_hat);
        let mut report = DampingReport {
            theta_coeff: theta,
            sigma,
            raw_curvature: sy,
            damped_curvature: s_y_hat,
            activated,
            rejected: false,
        };
        if !(s_y_hat >= MIN_CURVATURE) || !s_y_hat.is_finite() {
            report.rejected = true;
            return Ok(report);
        }
        self.gamma = gamma;
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back(CurvaturePair {
            s: s.to_vec(),
            y_hat,
            rho: 1.0 / s_y_hat,
        });
        Ok(report)
    }

    /// `H v` by the two-loop recursion, never forming `H`.
    pub fn direction(&self, v: &[f64]) -> Result<Vec<f64>> {
        if let Some(d) = self.dim() {
            if d != v.len() {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: v.len(),
                });
            }
        }
        let mut u = v.to_vec();
        let mut mu = vec![0.0; self.pairs.len()];
        for (k, p) in self.pairs.iter().enumerate().rev() {
            mu[k] = p.rho * dot(&u, &p.s);
            axpy(-mu[k], &p.y_hat, &mut u);
        }
        let inv_gamma = 1.0 / self.gamma;
        u.iter_mut().for_each(|x| *x *= inv_gamma);
        for (k, p) in self.pairs.iter().enumerate() {
            let nu = p.rho * dot(&u, &p.y_hat);
            axpy(mu[k] - nu, &p.s, &mut u);
        }
        Ok(u)
    }
}

/// Free-function form of [`CurvatureMemory::update`].
pub fn update_memory(memory: &mut CurvatureMemory, s_new: &[f64], y_bar_new: &[f64]) -> Result<DampingReport> {
    memory.update(s_new, y_bar_new)
}

/// Free-function form of [`CurvatureMemory::direction`].
pub fn two_loop_direction(memory: &CurvatureMemory, v: &[f64]) -> Result<Vec<f64>> {
    memory.direction(v)
}

/// Dense `H` (row-major, `dim x dim`) from the textbook recursion
/// `H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T` starting at
/// `I / gamma` and applying the stored pairs oldest first. Test oracle for
/// the two-loop recursion.
pub fn explicit_hessian_oracle(memory: &CurvatureMemory, dim: usize) -> Result<Vec<f64>> {
    if dim > ORACLE_MAX_DIM {
        return Err(Error::OracleTooLarge {
            max: ORACLE_MAX_DIM,
            got: dim,
        });
    }
    if let Some(d) = memory.dim() {
        if d != dim {
            return Err(Error::DimensionMismatch { expected: d, got: dim });
        }
    }
    let mut h = vec![0.0; dim * dim];
    for i in 0..dim {
        h[i * dim + i] = 1.0 / memory.gamma;
    }
    let mut left = vec![0.0; dim * dim];
    let mut tmp = vec![0.0; dim * dim];
    for p in memory.pairs() {
        // left = I - rho s y^T
        for i in 0..dim {
            for j in 0..dim {
                left[i * dim + j] = f64::from(u8::from(i == j)) - p.rho * p.s[i] * p.y_hat[j];
            }
        }
        // tmp = left * h
        for i in 0..dim {
            for j in 0..dim {
                tmp[i * dim + j] = (0..dim).map(|k| left[i * dim + k] * h[k * dim + j]).sum();
            }
        }
        // h = tmp * left^T + rho s s^T
        for i in 0..dim {
            for j in 0..dim {
                let prod: f64 = (0..dim).map(|k| tmp[i * dim + k] * left[j * dim + k]).sum();
                h[i * dim + j] = prod + p.rho * p.s[i] * p.s[j];
            }
        }
    }
    Ok(h)
}
