use nalgebra::linalg::Schur;
use num_complex::Complex64;

use super::{LinalgError, Matrix, Result, Tolerance, Vector};

pub fn is_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Largest entrywise deviation from symmetry, `max |M - Mᵀ|`.
pub fn asymmetry(m: &Matrix) -> f64 {
    if m.nrows() != m.ncols() {
        return f64::INFINITY;
    }
    (m - m.transpose()).amax()
}

/// Column-stacking `vec(M)`.
pub fn to_vec(m: &Matrix) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

/// Inverse of [`to_vec`].
pub fn from_vec(v: &Vector, rows: usize, cols: usize) -> Matrix {
    Matrix::from_column_slice(rows, cols, v.as_slice())
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// Moore-Penrose pseudoinverse through the SVD.
///
/// Singular values below `rank_cutoff * sigma_max` are treated as zero.
pub fn pinv(m: &Matrix, tol: &Tolerance) -> Result<Matrix> {
    if !is_finite(m) {
        return Err(LinalgError::NonFinite("pseudoinverse input"));
    }
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 || m.amax() == 0.0 {
        return Ok(Matrix::zeros(cols, rows));
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested Vᵀ");
    let sigma_max = svd.singular_values.max();
    let cutoff = tol.rank_cutoff * sigma_max;
    let mut out = Matrix::zeros(cols, rows);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            let vk = v_t.row(k).transpose();
            let uk = u.column(k);
            out += (vk * uk.transpose()) / s;
        }
    }
    Ok(out)
}

/// `‖(I − ΥΥ†) X‖_F`, the distance of the columns of `x` from `range(Υ)`.
pub fn range_residual(upsilon: &Matrix, upsilon_pinv: &Matrix, x: &Matrix) -> f64 {
    let proj = upsilon * upsilon_pinv;
    (x - proj * x).norm()
}

/// Generator of the second-moment flow `dM/dt = AM + MAᵀ + CMCᵀ` under column-stacking:
/// `A⊗I + I⊗A + C⊗C`.
pub fn lift_msq(a: &Matrix, c: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    if a.ncols() != n || c.nrows() != n || c.ncols() != n {
        return Err(LinalgError::Dimension(format!(
            "lift_msq expects square matrices of equal size, got A {:?} and C {:?}",
            a.shape(),
            c.shape()
        )));
    }
    let eye = Matrix::identity(n, n);
    Ok(kron(a, &eye) + kron(&eye, a) + kron(c, c))
}

/// Eigenvalues read off the real Schur form (complex pairs included).
pub fn eigenvalues(m: &Matrix) -> Result<Vec<Complex64>> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::Dimension(format!(
            "eigenvalues of a non-square {:?} matrix",
            m.shape()
        )));
    }
    if !is_finite(m) {
        return Err(LinalgError::NonFinite("eigenvalue input"));
    }
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur =
        Schur::try_new(m.clone(), f64::EPSILON, 10_000 * m.nrows()).ok_or(LinalgError::Eigen {
            dim: m.nrows(),
            norm: m.norm(),
        })?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

pub fn spectral_abscissa(m: &Matrix) -> Result<f64> {
    Ok(eigenvalues(m)?
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Verdict of a Hurwitz test with the spectral abscissa as witness.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HurwitzTest {
    pub hurwitz: bool,
    pub abscissa: f64,
}

/// Hurwitz iff every eigenvalue has real part below `-residual_tol`.
pub fn is_hurwitz(m: &Matrix, tol: &Tolerance) -> Result<HurwitzTest> {
    let abscissa = spectral_abscissa(m)?;
    Ok(HurwitzTest {
        hurwitz: abscissa < -tol.residual_tol,
        abscissa,
    })
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue_sym(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    symmetrize(m).symmetric_eigenvalues().min()
}

/// Principal square root of the positive part of a symmetric matrix.
/// Negative eigenvalues are clipped to zero.
pub fn sqrt_psd(m: &Matrix) -> Matrix {
    let eig = symmetrize(m).symmetric_eigen();
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * Matrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Solves `aᵀX + Xa + cᵀXc + q = 0` for `X` through the `n²`-dimensional lifted system.
///
/// The lifted matrix is `lift_msq(a, c)ᵀ`, so the solve is well posed exactly when
/// that operator has no zero eigenvalue.
pub fn solve_lifted_lyapunov(a: &Matrix, c: &Matrix, q: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    if q.shape() != (n, n) {
        return Err(LinalgError::Dimension(format!(
            "Lyapunov right-hand side {:?} does not match {n}x{n}",
            q.shape()
        )));
    }
    let op = lift_msq(a, c)?.transpose();
    let rhs = -to_vec(q);
    let lu = op.lu();
    let x = lu
        .solve(&rhs)
        .ok_or_else(|| LinalgError::Singular("lifted Lyapunov operator".into()))?;
    if !x.iter().all(|v| v.is_finite()) {
        return Err(LinalgError::Singular("lifted Lyapunov operator".into()));
    }
    Ok(symmetrize(&from_vec(&x, n, n)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn pinv_of_diagonal_inverts_nonzero_entries() {
        let p = pinv(&m(2, 2, &[2.0, 0.0, 0.0, 0.0]), &Tolerance::default()).unwrap();
        assert_abs_diff_eq!(p, m(2, 2, &[0.5, 0.0, 0.0, 0.0]), epsilon = 1e-14);
    }

    #[test]
    fn pinv_of_zero_is_zero_transposed_shape() {
        let p = pinv(&Matrix::zeros(2, 3), &Tolerance::default()).unwrap();
        assert_eq!(p, Matrix::zeros(3, 2));
    }

    #[test]
    fn pinv_of_rank_one_matches_outer_product_formula() {
        // a = (1, 2): (aaᵀ)† = aaᵀ / ‖a‖⁴ = aaᵀ / 25
        let a = m(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let p = pinv(&a, &Tolerance::default()).unwrap();
        assert_abs_diff_eq!(p, &a / 25.0, epsilon = 1e-14);
        // and the four Penrose identities
        assert_abs_diff_eq!(&a * &p * &a, a.clone(), epsilon = 1e-12);
        assert_abs_diff_eq!(&p * &a * &p, p.clone(), epsilon = 1e-12);
        assert_abs_diff_eq!((&a * &p).transpose(), &a * &p, epsilon = 1e-12);
        assert_abs_diff_eq!((&p * &a).transpose(), &p * &a, epsilon = 1e-12);
    }

    #[test]
    fn pinv_rejects_nan() {
        let err = pinv(&m(1, 1, &[f64::NAN]), &Tolerance::default()).unwrap_err();
        assert!(matches!(err, LinalgError::NonFinite(_)));
    }

    #[test]
    fn lift_of_scalars() {
        assert_eq!(
            lift_msq(&m(1, 1, &[-1.0]), &m(1, 1, &[0.0])).unwrap()[(0, 0)],
            -2.0
        );
        assert_eq!(
            lift_msq(&m(1, 1, &[0.0]), &m(1, 1, &[1.0])).unwrap()[(0, 0)],
            1.0
        );
    }

    #[test]
    fn lift_of_rotation_has_kronecker_sum_spectrum() {
        let a = m(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let l = lift_msq(&a, &Matrix::zeros(2, 2)).unwrap();
        assert_eq!(l.shape(), (4, 4));
        let mut ev = eigenvalues(&l).unwrap();
        ev.sort_by(|x, y| x.im.partial_cmp(&y.im).unwrap());
        let expected = [(0.0, -2.0), (0.0, 0.0), (0.0, 0.0), (0.0, 2.0)];
        for (z, (re, im)) in ev.iter().zip(expected) {
            assert_abs_diff_eq!(z.re, re, epsilon = 1e-12);
            assert_abs_diff_eq!(z.im, im, epsilon = 1e-12);
        }
    }

    #[test]
    fn lift_rejects_mismatched_sizes() {
        assert!(lift_msq(&Matrix::zeros(2, 2), &Matrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn hurwitz_examples() {
        let tol = Tolerance::default();
        let t = is_hurwitz(&m(1, 1, &[-1.0]), &tol).unwrap();
        assert!(t.hurwitz);
        assert_abs_diff_eq!(t.abscissa, -1.0, epsilon = 1e-14);

        let t = is_hurwitz(&m(2, 2, &[0.0, 1.0, -1.0, 0.0]), &tol).unwrap();
        assert!(!t.hurwitz);
        assert_abs_diff_eq!(t.abscissa, 0.0, epsilon = 1e-14);

        let t = is_hurwitz(&m(2, 2, &[-1.0, 100.0, 0.0, -1.0]), &tol).unwrap();
        assert!(t.hurwitz);
        assert_abs_diff_eq!(t.abscissa, -1.0, epsilon = 1e-10);
    }

    #[test]
    fn lyapunov_solve_scalar() {
        // 2aX + c²X + q = 0 with a = -1, c = 1, q = 1 -> X = 1
        let x =
            solve_lifted_lyapunov(&m(1, 1, &[-1.0]), &m(1, 1, &[1.0]), &m(1, 1, &[1.0])).unwrap();
        assert_abs_diff_eq!(x[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn lyapunov_solve_matrix_residual() {
        let a = m(2, 2, &[-1.0, 0.3, 0.2, -2.0]);
        let c = m(2, 2, &[0.4, 0.1, 0.0, 0.5]);
        let q = m(2, 2, &[1.0, 0.2, 0.2, 2.0]);
        let x = solve_lifted_lyapunov(&a, &c, &q).unwrap();
        let res = a.transpose() * &x + &x * &a + c.transpose() * &x * &c + &q;
        assert!(res.amax() < 1e-12);
    }

    #[test]
    fn sqrt_psd_squares_back() {
        let q = m(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let s = sqrt_psd(&q);
        assert_abs_diff_eq!(&s * &s, q, epsilon = 1e-12);
    }

    #[test]
    fn range_residual_picks_killed_coordinate() {
        let ups = m(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let up = pinv(&ups, &Tolerance::default()).unwrap();
        let x = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_abs_diff_eq!(range_residual(&ups, &up, &x), 5.0, epsilon = 1e-12);
    }
}
