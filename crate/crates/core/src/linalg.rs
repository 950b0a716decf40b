use nalgebra::{DMatrix, SymmetricEigen};

/// Symmetric PSD square root; negative eigenvalues from roundoff are clipped to zero.
pub(crate) fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Inverse symmetric square root, or `None` when the smallest eigenvalue
/// falls below `rel_tol` times the largest.
pub(crate) fn inv_sqrt_checked(m: &DMatrix<f64>, rel_tol: f64) -> Option<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || min < rel_tol * max {
        return None;
    }
    let d = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
    Some(&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose())
}

pub(crate) fn trace(m: &DMatrix<f64>) -> f64 {
    m.diagonal().sum()
}

/// `D(M)`: the diagonal part of a square matrix.
pub(crate) fn diag_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(&m.diagonal())
}

/// `Tr(D(A) D(B))`.
pub(crate) fn tr_dd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.diagonal().dot(&b.diagonal())
}

/// `Tr(A B)` without forming the product.
pub(crate) fn tr_prod(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(&b.transpose()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_squares_back() {
        let a = DMatrix::from_row_slice(3, 3, &[2., 0.5, 0.1, 0.5, 1., 0.2, 0.1, 0.2, 3.]);
        let r = psd_sqrt(&a);
        assert!((&r * &r - &a).norm() < 1e-12);
    }

    #[test]
    fn near_singular_is_flagged() {
        let a = DMatrix::from_row_slice(2, 2, &[1., 1., 1., 1.]);
        assert!(inv_sqrt_checked(&a, 1e-10).is_none());
        let w = inv_sqrt_checked(&(DMatrix::<f64>::identity(2, 2) * 4.0), 1e-10).unwrap();
        assert!((w[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn trace_of_product() {
        let a = DMatrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64);
        let b = DMatrix::from_fn(3, 3, |i, j| (i as f64) - 2.0 * j as f64);
        assert!((tr_prod(&a, &b) - trace(&(&a * &b))).abs() < 1e-12);
    }
}
