use nalgebra::{DMatrix, DVector};

/// Relative eigenvalue cutoff below which a direction counts as null.
pub const PINV_RTOL: f64 = 1e-10;

/// Moore-Penrose pseudo-inverse of a symmetric matrix via its eigendecomposition,
/// dropping eigenvalues below `rtol · max|λ|`.
pub fn pinv_symmetric(m: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let n = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
    let mut out = DMatrix::zeros(n, n);
    if top == 0.0 {
        return out;
    }
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() <= rtol * top {
            continue;
        }
        let u = eig.eigenvectors.column(k);
        out += (u * u.transpose()) / lam;
    }
    out
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// `sup_w (wᵀ A w) / (wᵀ B w)` for symmetric PSD `A`, `B`. Returns `+∞` when
/// `A` has weight on a direction that `B` annihilates.
pub fn generalized_max_ratio(a: &DMatrix<f64>, b: &DMatrix<f64>, reg: f64) -> f64 {
    let eig = ((b + b.transpose()) * 0.5).symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0_f64, |x, y| x.max(y.abs()));
    let a_norm = a.iter().fold(0.0_f64, |x, y| x.max(y.abs()));
    // B^{-1/2} on its range, with the null directions checked separately.
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        let u = eig.eigenvectors.column(k).into_owned();
        if lam <= PINV_RTOL * top.max(reg) {
            let leak = (u.transpose() * a * &u)[(0, 0)];
            if leak > 1e-10 * a_norm.max(1e-300) {
                return f64::INFINITY;
            }
            continue;
        }
        cols.push(u / (lam + reg).sqrt());
    }
    if cols.is_empty() {
        return 0.0;
    }
    let whiten = DMatrix::from_columns(&cols);
    let reduced = whiten.transpose() * a * &whiten;
    let reduced = (&reduced + reduced.transpose()) * 0.5;
    reduced.symmetric_eigen().eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pinv_of_rank_one() {
        let v = DVector::from_vec(vec![1.0, 1.0]);
        let m = &v * v.transpose();
        let p = pinv_symmetric(&m, PINV_RTOL);
        assert_abs_diff_eq!(p[(0, 0)], 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(p[(0, 1)], 0.25, epsilon = 1e-14);
    }

    #[test]
    fn ratio_of_identity_is_one() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert_abs_diff_eq!(generalized_max_ratio(&i, &i, 0.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ratio_detects_null_leak() {
        let a = DMatrix::<f64>::identity(2, 2);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(generalized_max_ratio(&a, &b, 1e-12).is_infinite());
    }
}
