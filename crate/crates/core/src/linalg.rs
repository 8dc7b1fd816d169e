//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};

/// Pivots smaller than this fraction of the largest pivot are treated as zero.
const PIVOT_RATIO: f64 = 1e-14;

/// LU factorization that refuses numerically singular matrices.
pub struct Factorized {
    lu: LU<f64, Dyn, Dyn>,
}

impl Factorized {
    pub fn new(matrix: DMatrix<f64>, context: &'static str) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular(context));
        }
        let lu = matrix.lu();
        let u = lu.u();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for i in 0..u.nrows() {
            let p = u[(i, i)].abs();
            lo = lo.min(p);
            hi = hi.max(p);
        }
        if u.nrows() > 0 && (hi == 0.0 || lo <= PIVOT_RATIO * hi) {
            return Err(Error::Singular(context));
        }
        Ok(Self { lu })
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        // Nonsingularity was checked at construction.
        self.lu.solve(rhs).expect("factor checked nonsingular")
    }

    pub fn solve_matrix(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.lu.solve(rhs).expect("factor checked nonsingular")
    }

    /// `log|det|` from the pivots.
    pub fn log_abs_det(&self) -> f64 {
        let u = self.lu.u();
        (0..u.nrows()).map(|i| libm::log(u[(i, i)].abs())).sum()
    }
}

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// `log det` of a symmetric positive-definite matrix via Cholesky.
pub fn spd_log_det(m: &DMatrix<f64>) -> Option<f64> {
    let chol = m.clone().cholesky()?;
    let l = chol.l_dirty();
    Some((0..l.nrows()).map(|i| 2.0 * libm::log(l[(i, i)])).sum())
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut vals: alloc::vec::Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(|a, b| a.total_cmp(b));
    DVector::from_vec(vals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singular_matrix_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(Factorized::new(m, "test"), Err(Error::Singular("test"))));
    }

    #[test]
    fn log_det_matches_cholesky() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let lu = Factorized::new(m.clone(), "t").unwrap();
        let chol = spd_log_det(&m).unwrap();
        assert!((lu.log_abs_det() - libm::log(11.0)).abs() < 1e-14);
        assert!((chol - libm::log(11.0)).abs() < 1e-14);
    }
}
