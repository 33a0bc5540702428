//! Dense helpers for the small systems this engine assembles (n + k ≤ ~16).

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Condition-number estimate via singular values. Returns `f64::INFINITY`
/// for numerically rank-deficient input.
pub fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin <= 0.0 || !smin.is_finite() {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Solve `a x = b` by LU with partial pivoting, guarding against
/// ill-conditioned systems and checking the residual afterwards.
pub fn solve_checked(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    singular: impl Fn(f64) -> Error,
) -> Result<DVector<f64>> {
    let cond = condition_estimate(a);
    if !cond.is_finite() || cond > 1e12 {
        return Err(singular(cond));
    }
    let x = a
        .clone()
        .lu()
        .solve(b)
        .ok_or_else(|| singular(f64::INFINITY))?;
    let residual = (a * &x - b).norm();
    if !(residual < 1e-10 * (1.0 + b.norm())) {
        return Err(singular(cond));
    }
    Ok(x)
}

/// Cholesky factorization with an explicit pivot tolerance. Succeeds iff the
/// matrix is symmetric positive definite with every pivot above `tol`.
pub fn spd_cholesky(m: &DMatrix<f64>, tol: f64) -> std::result::Result<DMatrix<f64>, f64> {
    let n = m.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut diag = m[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > tol) {
            return Err(diag);
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut v = m[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / ljj;
        }
    }
    Ok(l)
}

/// Dense rank-3 array with fixed dimensions, used for the ξ tensor and the
/// velocity-quadratic coefficients of the projected formulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(d0: usize, d1: usize, d2: usize) -> Self {
        Tensor3 {
            dims: (d0, d1, d2),
            data: vec![0.0; d0 * d1 * d2],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.dims.0 && j < self.dims.1 && k < self.dims.2);
        (i * self.dims.1 + j) * self.dims.2 + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let o = self.offset(i, j, k);
        self.data[o] = v;
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().copied()
    }
}
