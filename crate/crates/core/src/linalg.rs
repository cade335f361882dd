//! Small dense linear-algebra helpers shared by the spectral oracles.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenpairs of a symmetric matrix, eigenvalues ascending.
pub fn symmetric_eigen_sorted(a: DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericalFailure(
            "symmetric eigensolve received non-finite entries".into(),
        ));
    }
    let eig = SymmetricEigen::try_new(a, f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericalFailure("symmetric eigensolve did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// Spectral norm of a symmetric matrix.
pub fn symmetric_norm(a: DMatrix<f64>) -> Result<f64> {
    let (values, _) = symmetric_eigen_sorted(a)?;
    Ok(values.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
}

/// Restricts `a` to the invariant subspace orthogonal to `left`, where
/// `leftᵀ a = 0`. Returns the `(n-1) × (n-1)` compression `Qᵀ a Q` for an
/// orthonormal basis `Q` of `left⊥`, built from one Householder reflector.
pub fn compress_orthogonal_to(a: &DMatrix<f64>, left: &DVector<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = left.norm();
    let mut u = left / norm;
    // Reflector H with H·û = ±e₀.
    let sign = if u[0] >= 0.0 { 1.0 } else { -1.0 };
    u[0] += sign;
    let unorm = u.norm();
    u /= unorm;
    // H a H with H = I - 2 u uᵀ.
    let au = a * &u;
    let uta = u.transpose() * a;
    let utau = u.dot(&au);
    let mut hah = a.clone();
    for i in 0..n {
        for j in 0..n {
            hah[(i, j)] += -2.0 * u[i] * uta[j] - 2.0 * au[i] * u[j] + 4.0 * u[i] * utau * u[j];
        }
    }
    hah.view((1, 1), (n - 1, n - 1)).into_owned()
}

/// Real parts of the eigenvalues of a general square matrix.
pub fn eigenvalue_real_parts(a: DMatrix<f64>) -> Result<Vec<f64>> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericalFailure(
            "eigensolve received non-finite entries".into(),
        ));
    }
    let m = faer::Mat::<f64>::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)]);
    let values = m
        .eigenvalues()
        .map_err(|e| Error::NumericalFailure(format!("eigensolve did not converge: {e:?}")))?;
    Ok(values.iter().map(|z| z.re).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compression_keeps_spectrum_on_invariant_subspace() {
        // a = diag(0, -1, -2) in a rotated basis whose left null vector is known.
        let q = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0]);
        let qinv = q.clone().try_inverse().unwrap();
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, -1.0, -2.0]));
        let a = &q * d * &qinv;
        let left = qinv.row(0).transpose();
        let sub = compress_orthogonal_to(&a, &left);
        let mut re = eigenvalue_real_parts(sub).unwrap();
        re.sort_by(|x, y| x.total_cmp(y));
        assert!((re[0] + 2.0).abs() < 1e-12);
        assert!((re[1] + 1.0).abs() < 1e-12);
    }
}
