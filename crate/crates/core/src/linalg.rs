//! Dense vector kernels shared by the optimizers.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn scale(alpha: f64, x: &mut [f64]) {
    for xi in x {
        *xi *= alpha;
    }
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(norm_sq(a))
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

pub fn sub(a: &[f64], b: &[f64]) -> alloc::vec::Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Numerical rank of a row-major matrix by Gaussian elimination with partial
/// pivoting.
pub fn rank(rows: &[alloc::vec::Vec<f64>], tol: f64) -> usize {
    let mut m: alloc::vec::Vec<alloc::vec::Vec<f64>> = rows.to_vec();
    let cols = m.first().map_or(0, |r| r.len());
    let mut r = 0;
    for c in 0..cols {
        if r == m.len() {
            break;
        }
        let (piv, best) = (r..m.len())
            .map(|i| (i, m[i][c].abs()))
            .fold((r, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best <= tol {
            continue;
        }
        m.swap(r, piv);
        let pivot_row = m[r].clone();
        for row in m.iter_mut().skip(r + 1) {
            let f = row[c] / pivot_row[c];
            if f != 0.0 {
                for (x, p) in row.iter_mut().zip(&pivot_row).skip(c) {
                    *x -= f * p;
                }
            }
        }
        r += 1;
    }
    r
}

/// True when `target` lies in the row space of `rows`.
pub fn in_row_space(rows: &[alloc::vec::Vec<f64>], target: &[f64], tol: f64) -> bool {
    let base = rank(rows, tol);
    let mut ext = rows.to_vec();
    ext.push(target.to_vec());
    rank(&ext, tol) == base
}
