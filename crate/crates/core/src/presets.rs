//! Ready-made problems: the scalar population example, the closed-form Riccati examples,
//! and the all-zero problem.

use crate::linalg::{min_eigenvalue_sym, Matrix, Vector};
use crate::model::{Horizon, ProblemSpec, SignalFn};

fn m1(x: f64) -> Matrix {
    Matrix::from_element(1, 1, x)
}

/// Scalar population of 50 agents: `A=0.1, B=C=D=Q=1, R=−0.2, G=−0.1, Γ=−0.2, σ=0.1,
/// f=e^{−t}, η=1/(t+1)`, initial law `N(1, 0.1)`, infinite horizon.
pub fn sec6() -> ProblemSpec {
    let mut s = ProblemSpec::zeros(1, 1, Horizon::Infinite);
    s.a = m1(0.1);
    s.b = m1(1.0);
    s.c = m1(1.0);
    s.d = m1(1.0);
    s.q = m1(1.0);
    s.r = m1(-0.2);
    s.g = m1(-0.1);
    s.gamma = m1(-0.2);
    s.sigma = SignalFn::constant(&[0.1]);
    s.f = SignalFn::Exponential {
        a: vec![1.0],
        b: -1.0,
    };
    s.eta = SignalFn::Rational {
        a: vec![1.0],
        c: 1.0,
    };
    s.x0_mean = Vector::from_element(1, 1.0);
    s.x0_cov = m1(0.1);
    s.agents = 50;
    s
}

/// Reference stationary `P` for [`sec6`].
pub const SEC6_REFERENCE_P: f64 = 0.6808;
/// Reference `Π` for [`sec6`].
pub const SEC6_REFERENCE_PI: f64 = 0.3290;

/// [`sec6`] with the reference stationary `P` supplied instead of solved for.
pub fn sec6_pinned() -> ProblemSpec {
    let mut s = sec6();
    s.pinned_p = Some(m1(SEC6_REFERENCE_P));
    s
}

/// [`sec6`] on a finite horizon with terminal weight `h`, `Γ₀ = Γ` and `η₀ = 0`.
pub fn sec6_finite(t: f64, h: f64) -> ProblemSpec {
    let mut s = sec6();
    s.horizon = Horizon::Finite(t);
    s.h = m1(h);
    s.gamma0 = s.gamma.clone();
    s
}

/// Largest horizon on which the scalar closed-form example stays well defined.
pub fn example1_t_max(r: f64) -> f64 {
    0.5 * ((1.0 + r * r) / (r * r)).ln()
}

/// Scalar closed-form example: `A=C=0, B=D=1, R=r<0, Q=−2r`, terminal weight `h`.
///
/// With `h = 1 − r` the solution is `P(t) = √(e^{−2(T−t)}(1+r²) − r²) − r`; general `h`
/// replaces `1 + r²` by `(h + r)² + r²`.
pub fn example1(r: f64, h: f64, t: f64) -> ProblemSpec {
    let mut s = ProblemSpec::zeros(1, 1, Horizon::Finite(t));
    s.b = m1(1.0);
    s.d = m1(1.0);
    s.r = m1(r);
    s.q = m1(-2.0 * r);
    s.h = m1(h);
    s.x0_mean = Vector::from_element(1, 1.0);
    s
}

/// Closed-form `P(t)` of [`example1`].
pub fn example1_closed_form(r: f64, h: f64, big_t: f64, t: f64) -> f64 {
    let y0 = h + r;
    ((-2.0 * (big_t - t)).exp() * (y0 * y0 + r * r) - r * r).sqrt() - r
}

/// Matrix closed-form example: `A=C=0, B=D=I, R<0, Q=−2R`, terminal weight `hI − R`.
pub fn example2(r: &Matrix, h: f64, t: f64) -> ProblemSpec {
    let n = r.nrows();
    let mut s = ProblemSpec::zeros(n, n, Horizon::Finite(t));
    s.b = Matrix::identity(n, n);
    s.d = Matrix::identity(n, n);
    s.r = r.clone();
    s.q = -2.0 * r;
    s.h = Matrix::identity(n, n) * h - r;
    s.x0_mean = Vector::from_element(n, 1.0);
    s
}

/// `½ ln λ_min(I + h² R⁻²)`, the horizon limit of [`example2`].
pub fn example2_t_hat(r: &Matrix, h: f64) -> f64 {
    let n = r.nrows();
    let rinv = r.clone().try_inverse().expect("R < 0 is invertible");
    let m = Matrix::identity(n, n) + &rinv * &rinv * (h * h);
    0.5 * min_eigenvalue_sym(&m).ln()
}

/// Closed-form `P(t) = √(e^{−2(T−t)}(h²I + R²) − R²) − R` of [`example2`].
pub fn example2_closed_form(r: &Matrix, h: f64, big_t: f64, t: f64) -> Matrix {
    let n = r.nrows();
    let r2 = r * r;
    let inner = (Matrix::identity(n, n) * (h * h) + &r2) * (-2.0 * (big_t - t)).exp() - r2;
    crate::linalg::sqrt_psd(&inner) - r
}

/// `Q=0, R=I, H=0` with no forcing: every Riccati quantity, gain and cost is zero.
pub fn trivial_zero(n: usize, r: usize, horizon: Horizon) -> ProblemSpec {
    let mut s = ProblemSpec::zeros(n, r, horizon);
    s.a = -Matrix::identity(n, n);
    s.b = Matrix::from_element(n, r, 1.0);
    s.c = Matrix::identity(n, n) * 0.3;
    s.d = Matrix::from_element(n, r, 0.5);
    s.g = Matrix::identity(n, n) * 0.2;
    s.gamma = Matrix::identity(n, n) * 0.5;
    s.r = Matrix::identity(r, r);
    s.x0_mean = Vector::from_element(n, 1.0);
    s.x0_cov = Matrix::identity(n, n) * 0.1;
    s.agents = 5;
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn presets_validate() {
        for s in [
            sec6(),
            sec6_pinned(),
            sec6_finite(0.3, 1.0),
            example1(-0.5, 1.5, 0.5),
            example2(
                &Matrix::from_row_slice(2, 2, &[-0.6, 0.1, 0.1, -0.4]),
                1.0,
                0.3,
            ),
            trivial_zero(2, 1, Horizon::Finite(1.0)),
        ] {
            assert!(s.validated().is_ok());
        }
    }

    #[test]
    fn closed_forms_meet_terminal_data() {
        assert_abs_diff_eq!(
            example1_closed_form(-0.5, 1.5, 2.0, 2.0),
            1.5,
            epsilon = 1e-15
        );
        let r = Matrix::from_row_slice(2, 2, &[-0.6, 0.1, 0.1, -0.4]);
        let p = example2_closed_form(&r, 1.0, 1.0, 1.0);
        assert_abs_diff_eq!(p, Matrix::identity(2, 2) - &r, epsilon = 1e-12);
        let diag = Matrix::from_diagonal(&Vector::from_vec(vec![-0.5, -0.5]));
        assert_abs_diff_eq!(
            example2_t_hat(&diag, 1.0),
            example1_t_max(-0.5),
            epsilon = 1e-14
        );
    }
}
