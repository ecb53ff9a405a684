//! Symmetric matrices and positive-semidefinite cone utilities.
//!
//! Every matrix that lives in the symmetric cone (Riccati kernels, state and
//! control weights, jump increments of the kernel) is carried as a [`SymMat`].
//! Construction always symmetrizes, so rounding drift accumulated by the
//! integrators never leaves the cone's ambient space.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Relative convergence tolerance of the symmetric eigensolver.
pub const EIGEN_TOL: f64 = 1e-12;
const EIGEN_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConeError {
    #[error("matrix is not uniformly positive: min eigenvalue {min_eig:e} below floor {floor:e}")]
    NotUniformlyPositive { min_eig: f64, floor: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix must be square with dim >= 1, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
}

/// Dense real symmetric matrix, `entries[i][j] == entries[j][i]` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMat(DMatrix<f64>);

impl SymMat {
    /// Symmetrizes `(m + mᵀ)/2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self, ConeError> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(ConeError::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        Ok(Self::symmetrize(m))
    }

    /// Like [`SymMat::new`] for matrices known to be square.
    ///
    /// Panics on a non-square input; only used on products built internally.
    pub(crate) fn symmetrize(mut m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        assert_eq!(n, m.ncols(), "symmetrize on non-square matrix");
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMat(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ConeError> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(ConeError::NotSquare {
                rows: n,
                cols: rows.first().map_or(0, Vec::len),
            });
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn identity(n: usize) -> Self {
        SymMat(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMat(DMatrix::zeros(n, n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMat(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        SymMat(DMatrix::identity(n, n) * s)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| self.0.row(i).iter().copied().collect())
            .collect()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(self)
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        is_psd(self, tol)
    }

    /// `⟨S x, x⟩`.
    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.0 * x))
    }

    pub fn add(&self, other: &SymMat) -> SymMat {
        SymMat(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMat) -> SymMat {
        SymMat(&self.0 - &other.0)
    }

    pub fn scale(&self, s: f64) -> SymMat {
        SymMat(&self.0 * s)
    }

    /// `self + s·other`.
    pub fn axpy(&self, s: f64, other: &SymMat) -> SymMat {
        SymMat(&self.0 + &other.0 * s)
    }

    /// Congruence `Pᵀ S P`.
    pub fn congruence(&self, p: &DMatrix<f64>) -> SymMat {
        SymMat::symmetrize(p.transpose() * &self.0 * p)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Eigenvalues in `[-tol, 0)` are lifted to zero; returns `None` when
    /// the matrix is already PSD and is left untouched.
    pub fn clamp_to_cone(&self, tol: f64) -> Option<SymMat> {
        let eig = eigen(self);
        if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
            return None;
        }
        let lifted = eig.eigenvalues.map(|l| if (-tol..0.0).contains(&l) { 0.0 } else { l });
        let v = &eig.eigenvectors;
        Some(SymMat::symmetrize(v * DMatrix::from_diagonal(&lifted) * v.transpose()))
    }
}

impl Serialize for SymMat {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymMat {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        SymMat::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

fn eigen(a: &SymMat) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::try_new(a.0.clone(), EIGEN_TOL, EIGEN_MAX_ITER)
        .expect("symmetric eigensolver failed to converge on finite input")
}

pub fn min_eigenvalue(a: &SymMat) -> f64 {
    if a.dim() == 1 {
        return a.0[(0, 0)];
    }
    eigen(a).eigenvalues.min()
}

pub fn is_psd(a: &SymMat, tol: f64) -> bool {
    debug_assert!(tol >= 0.0);
    min_eigenvalue(a) >= -tol
}

/// Solves `A X = B` through a Cholesky factorization, refusing matrices whose
/// smallest eigenvalue is below `floor`.
pub fn spd_solve(a: &SymMat, b: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>, ConeError> {
    if b.nrows() != a.dim() {
        return Err(ConeError::Dimension(format!(
            "rhs has {} rows, matrix is {}x{}",
            b.nrows(),
            a.dim(),
            a.dim()
        )));
    }
    let min_eig = min_eigenvalue(a);
    if !(min_eig >= floor) {
        return Err(ConeError::NotUniformlyPositive { min_eig, floor });
    }
    let chol =
        a.0.clone()
            .cholesky()
            .ok_or(ConeError::NotUniformlyPositive { min_eig, floor })?;
    Ok(chol.solve(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn min_eigenvalue_examples() {
        assert_eq!(min_eigenvalue(&SymMat::identity(3)), 1.0);
        assert_eq!(min_eigenvalue(&SymMat::zeros(2)), 0.0);
        assert_eq!(min_eigenvalue(&SymMat::from_diagonal(&[2.0, -1.0])), -1.0);
    }

    #[test]
    fn is_psd_examples() {
        assert!(is_psd(&SymMat::identity(2), 0.0));
        assert!(!is_psd(&SymMat::from_diagonal(&[2.0, -1e-3]), 1e-6));
        assert!(is_psd(&SymMat::zeros(4), 0.0));
    }

    #[test]
    fn spd_solve_examples() {
        let a = SymMat::scaled_identity(2, 2.0);
        let x = spd_solve(&a, &DMatrix::identity(2, 2), 1e-10).unwrap();
        assert!((x - DMatrix::identity(2, 2) * 0.5).amax() < 1e-15);

        let bad = SymMat::from_diagonal(&[1.0, 1e-14]);
        assert!(matches!(
            spd_solve(&bad, &DMatrix::identity(2, 2), 1e-10),
            Err(ConeError::NotUniformlyPositive { .. })
        ));

        let a = SymMat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let x = spd_solve(&a, &DMatrix::from_column_slice(2, 1, &[1.0, 1.0]), 1e-10).unwrap();
        assert!((x[(0, 0)] - 1.0 / 3.0).abs() < 1e-15);
        assert!((x[(1, 0)] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn construction_symmetrizes() {
        let s = SymMat::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(s.as_matrix()[(0, 1)], 1.0);
        assert_eq!(s.as_matrix()[(1, 0)], 1.0);
        assert!(SymMat::from_rows(&[vec![1.0, 2.0]]).is_err());
        assert!(SymMat::new(DMatrix::zeros(0, 0)).is_err());
    }

    #[test]
    fn clamp_lifts_only_small_negatives() {
        let s = SymMat::from_diagonal(&[1.0, -1e-10]);
        let c = s.clamp_to_cone(1e-8).unwrap();
        assert!(c.min_eigenvalue() >= 0.0);
        assert!(SymMat::identity(2).clamp_to_cone(1e-8).is_none());
        let far = SymMat::from_diagonal(&[1.0, -1.0]).clamp_to_cone(1e-8).unwrap();
        assert!((far.min_eigenvalue() + 1.0).abs() < 1e-14);
    }

    fn sym_strategy(n: usize) -> impl Strategy<Value = SymMat> {
        prop::collection::vec(-1.0f64..1.0, n * n).prop_map(move |v| {
            let g = DMatrix::from_column_slice(n, n, &v);
            SymMat::new(&g * g.transpose() + DMatrix::identity(n, n) * 1e-3).unwrap()
        })
    }

    proptest! {
        #[test]
        fn spd_solve_recovers_solution(
            a in (1usize..5).prop_flat_map(sym_strategy),
            seed in prop::collection::vec(-1.0f64..1.0, 4)
        ) {
            prop_assume!(a.min_eigenvalue() >= 1e-6);
            let n = a.dim();
            let x = DVector::from_fn(n, |i, _| seed[i % seed.len()] + 0.1 * i as f64);
            let b = a.as_matrix() * &x;
            let got = spd_solve(&a, &DMatrix::from_column_slice(n, 1, b.as_slice()), 1e-12).unwrap();
            let err = (got.column(0) - &x).norm() / x.norm().max(1e-300);
            // cond(A) ≤ ~4/1e-3 on this strategy
            prop_assert!(err < 1e-10, "relative error {err}");
        }

        #[test]
        fn is_psd_monotone_in_tol(
            a in (1usize..4).prop_flat_map(|n| prop::collection::vec(-1.0f64..1.0, n * n)
                .prop_map(move |v| SymMat::new(DMatrix::from_column_slice(n, n, &v)).unwrap())),
            t1 in 0.0f64..1.0,
            dt in 0.0f64..1.0,
        ) {
            if is_psd(&a, t1) {
                prop_assert!(is_psd(&a, t1 + dt));
            }
        }
    }
}
