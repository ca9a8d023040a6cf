//! Dense linear-algebra helpers shared by the inference modules.
//!
//! Every covariance inversion in the crate goes through [`Factor`], which
//! applies the jitter policy: try a plain Cholesky, then add
//! `1e-10 * trace` to the diagonal and escalate by 10x up to `1e-6 * trace`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;
/// Smallest accepted squared pivot relative to the mean diagonal entry.
const PIVOT_FLOOR: f64 = 1e-12;

/// Cholesky factor of a symmetric positive definite matrix, possibly jittered.
#[derive(Debug, Clone)]
pub struct Factor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl Factor {
    /// Factorizes `m` under the jitter policy. `what` names the matrix in errors.
    pub fn new(m: &DMatrix<f64>, what: &str) -> Result<Self> {
        let n = m.nrows();
        if n != m.ncols() {
            return Err(Error::input(format!("{what}: matrix is not square")));
        }
        if n == 0 {
            return Err(Error::input(format!("{what}: empty matrix")));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!("{what}: non-finite entries")));
        }
        let trace = m.trace();
        if let Some(chol) = accept(m.clone(), trace / n as f64) {
            return Ok(Factor { chol, jitter: 0.0 });
        }
        let scale = if trace > 0.0 { trace } else { 1.0 };
        let mut rel = JITTER_START;
        while rel <= JITTER_MAX * (1.0 + 1e-9) {
            let jitter = rel * scale;
            let mut jm = m.clone();
            for i in 0..n {
                jm[(i, i)] += jitter;
            }
            if let Some(chol) = accept(jm, trace / n as f64) {
                return Ok(Factor { chol, jitter });
            }
            rel *= 10.0;
        }
        Err(Error::numerical(format!(
            "{what}: Cholesky failed after jitter up to {JITTER_MAX:e} x trace"
        )))
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Diagonal jitter that was added, zero if none.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn logdet(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// `L^{-1} b`.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut x);
        x
    }

    pub fn solve_lower_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut x);
        x
    }

    /// `L^{-T} b`.
    pub fn solve_upper(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.chol.l_dirty().tr_solve_lower_triangular_mut(&mut x);
        x
    }
}

fn accept(m: DMatrix<f64>, mean_diag: f64) -> Option<Cholesky<f64, Dyn>> {
    let chol = Cholesky::new(m)?;
    let l = chol.l_dirty();
    let floor = PIVOT_FLOOR * mean_diag.abs();
    let ok = (0..l.nrows()).all(|i| {
        let p = l[(i, i)];
        p.is_finite() && p * p > floor
    });
    ok.then_some(chol)
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn symmetrized(mut m: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&mut m);
    m
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrized(m.clone()))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// A matrix `S` with `S S^T = m` for symmetric PSD `m`; zero matrices map to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if m.iter().all(|v| *v == 0.0) {
        return DMatrix::zeros(n, n);
    }
    if let Ok(f) = Factor::new(m, "psd_sqrt") {
        return f.l();
    }
    let eig = SymmetricEigen::new(symmetrized(m.clone()));
    let mut s = eig.eigenvectors.clone();
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let r = lam.max(0.0).sqrt();
        s.column_mut(j).scale_mut(r);
    }
    s
}

/// Log-determinant of a symmetric positive definite matrix under the jitter policy.
pub fn logdet_spd(m: &DMatrix<f64>, what: &str) -> Result<f64> {
    Ok(Factor::new(m, what)?.logdet())
}

/// Solves the continuous Lyapunov equation `F P + P F^T + W = 0`.
pub fn solve_lyapunov(f: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = f.nrows();
    let eye = DMatrix::<f64>::identity(d, d);
    // vec(F P + P F^T) = (I ⊗ F + F ⊗ I) vec(P) for column-major vec.
    let op = eye.kronecker(f) + f.kronecker(&eye);
    let rhs = DVector::from_iterator(d * d, w.iter().map(|v| -v));
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::numerical("Lyapunov operator is singular"))?;
    Ok(symmetrized(DMatrix::from_vec(d, d, sol.data.as_vec().clone())))
}

pub fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    // tr(A B) = sum_ij A_ij B_ji
    let mut s = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            s += a[(i, j)] * b[(j, i)];
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_factor_has_no_jitter() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let f = Factor::new(&m, "m").unwrap();
        assert_eq!(f.jitter(), 0.0);
        assert!((f.logdet() - (2.0f64 - 0.25).ln()).abs() < 1e-14);
    }

    #[test]
    fn singular_matrix_gets_jitter() {
        let m = DMatrix::from_element(3, 3, 1.0);
        let f = Factor::new(&m, "ones").unwrap();
        assert!(f.jitter() > 0.0);
        assert!(f.jitter() <= 3.0 * 1e-6);
    }

    #[test]
    fn indefinite_matrix_fails() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(Factor::new(&m, "bad"), Err(Error::Numerical(_))));
    }

    #[test]
    fn lyapunov_scalar() {
        let f = DMatrix::from_element(1, 1, -0.5);
        let w = DMatrix::from_element(1, 1, 2.0);
        let p = solve_lyapunov(&f, &w).unwrap();
        assert!((p[(0, 0)] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn psd_sqrt_of_zero_is_zero() {
        let z = DMatrix::zeros(3, 3);
        assert_eq!(psd_sqrt(&z), z);
    }
}
