//! Dense helpers shared by the solvers: real matrices acting on complex
//! vectors, Cholesky solves and the symmetric-definite eigenproblem.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CVector = DVector<Complex64>;

/// `A x` for real `A` and complex `x`.
pub fn real_mul(a: &DMatrix<f64>, x: &CVector) -> CVector {
    let (re, im) = split(x);
    join(&(a * re), &(a * im))
}

/// `Aᵀ x` for real `A` and complex `x`.
pub fn real_tr_mul(a: &DMatrix<f64>, x: &CVector) -> CVector {
    let (re, im) = split(x);
    join(&a.tr_mul(&re), &a.tr_mul(&im))
}

pub fn split(x: &CVector) -> (DVector<f64>, DVector<f64>) {
    (x.map(|z| z.re), x.map(|z| z.im))
}

pub fn join(re: &DVector<f64>, im: &DVector<f64>) -> CVector {
    DVector::from_fn(re.len(), |i, _| Complex64::new(re[i], im[i]))
}

/// `x* A y` for real symmetric or general real `A`.
pub fn sesquilinear(a: &DMatrix<f64>, x: &CVector, y: &CVector) -> Complex64 {
    x.dotc(&real_mul(a, y))
}

/// `Re(x* A x)`; the imaginary part vanishes for symmetric `A`.
pub fn quad_form(a: &DMatrix<f64>, x: &CVector) -> f64 {
    sesquilinear(a, x, x).re
}

/// Real inner product `Re(x* y)` on the realification of `C^n`.
pub fn re_dot(x: &CVector, y: &CVector) -> f64 {
    x.iter().zip(y.iter()).map(|(a, b)| a.re * b.re + a.im * b.im).sum()
}

/// Maximum entry magnitude.
pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `max |A - Aᵀ| / max |A|`.
pub fn symmetry_defect(a: &DMatrix<f64>) -> f64 {
    let scale = max_abs(a);
    if scale == 0.0 {
        return 0.0;
    }
    max_abs(&(a - a.transpose())) / scale
}

/// Cholesky factor of a real SPD matrix, applied to complex right-hand sides.
#[derive(Clone, Debug)]
pub struct SpdSolver {
    chol: Cholesky<f64, Dyn>,
}

impl SpdSolver {
    pub fn new(a: &DMatrix<f64>, what: &'static str) -> Result<Self> {
        Cholesky::new(a.clone())
            .map(|chol| Self { chol })
            .ok_or(Error::NotPositiveDefinite(what))
    }

    pub fn solve(&self, b: &CVector) -> CVector {
        let (re, im) = split(b);
        join(&self.chol.solve(&re), &self.chol.solve(&im))
    }

    pub fn solve_real(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }
}

/// Solution of `A φ = λ B φ` with `A` symmetric and `B` SPD.
///
/// Eigenvalues ascend; the columns of `vectors` are `B`-orthonormal.
#[derive(Clone, Debug)]
pub struct GeneralizedEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn generalized_eigen(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<GeneralizedEigen> {
    let l = Cholesky::new(b.clone())
        .ok_or(Error::NotPositiveDefinite("generalized eigenproblem metric"))?
        .l();
    // C = L⁻¹ A L⁻ᵀ
    let linv_a = l
        .solve_lower_triangular(a)
        .ok_or(Error::Singular("Cholesky factor"))?;
    let c = l
        .solve_lower_triangular(&linv_a.transpose())
        .ok_or(Error::Singular("Cholesky factor"))?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let y = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    let vectors = l
        .transpose()
        .solve_upper_triangular(&y)
        .ok_or(Error::Singular("Cholesky factor"))?;
    Ok(GeneralizedEigen { values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generalized_eigen_small() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let e = generalized_eigen(&a, &b).unwrap();
        // det(A - λB) = (2 - 2λ)(3 - λ) - 1 = 2λ² - 8λ + 5
        let disc = (64.0f64 - 40.0).sqrt();
        assert!((e.values[0] - (8.0 - disc) / 4.0).abs() < 1e-14);
        assert!((e.values[1] - (8.0 + disc) / 4.0).abs() < 1e-14);
        let vtbv = e.vectors.transpose() * &b * &e.vectors;
        assert!((vtbv - DMatrix::identity(2, 2)).abs().max() < 1e-14);
    }

    #[test]
    fn real_complex_products() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let x = DVector::from_vec(vec![Complex64::new(1.0, -1.0), Complex64::new(0.5, 2.0)]);
        let ac = a.map(|v| Complex64::new(v, 0.0));
        assert!((real_mul(&a, &x) - &ac * &x).norm() < 1e-15);
        assert!((real_tr_mul(&a, &x) - ac.transpose() * &x).norm() < 1e-15);
        let q = sesquilinear(&a, &x, &x);
        assert!((q - x.dotc(&(&ac * &x))).norm() < 1e-14);
    }
}
