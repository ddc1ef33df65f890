//! Problem definition: system and cost matrices, forcing signals, initial law, horizon.
//!
//! The population has `N` agents with dynamics
//! `dx_i = (A x_i + B u_i + G x⁽ᴺ⁾ + f) dt + (C x_i + D u_i + σ) dW_i`
//! and running cost `‖x_i − Γ x⁽ᴺ⁾ − η‖²_Q + ‖u_i‖²_R`, plus the terminal cost
//! `‖x_i(T) − Γ₀ x⁽ᴺ⁾(T) − η₀‖²_H` on a finite horizon. The deviation keeps `η` on the
//! infinite horizon as well.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{asymmetry, is_finite, min_eigenvalue_sym, symmetrize, Matrix, Vector};
use crate::rng;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot parse problem file: {0}")]
    Parse(String),
    #[error("problem violates {} constraint(s): {}", .0.len(), summarize(.0))]
    Invalid(Vec<Violation>),
    #[error("initial covariance is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPsd(f64),
}

fn summarize(v: &[Violation]) -> String {
    v.iter()
        .map(|x| format!("{}: {}", x.field, x.message))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Time signal with a closed-form, serializable description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalFn {
    Constant {
        value: Vec<f64>,
    },
    /// `a · e^{b t}`
    Exponential {
        a: Vec<f64>,
        b: f64,
    },
    /// `a / (t + c)`, `c > 0`
    Rational {
        a: Vec<f64>,
        c: f64,
    },
    /// Piecewise-linear through the knots, held constant outside them.
    Sampled {
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
    Sum {
        terms: Vec<SignalFn>,
    },
}

impl SignalFn {
    pub fn zero(n: usize) -> Self {
        SignalFn::Constant {
            value: vec![0.0; n],
        }
    }

    pub fn constant(value: &[f64]) -> Self {
        SignalFn::Constant {
            value: value.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SignalFn::Constant { value } => value.len(),
            SignalFn::Exponential { a, .. } | SignalFn::Rational { a, .. } => a.len(),
            SignalFn::Sampled { values, .. } => values.first().map_or(0, Vec::len),
            SignalFn::Sum { terms } => terms.first().map_or(0, SignalFn::dim),
        }
    }

    pub fn eval(&self, t: f64) -> Vector {
        match self {
            SignalFn::Constant { value } => Vector::from_column_slice(value),
            SignalFn::Exponential { a, b } => Vector::from_column_slice(a) * (b * t).exp(),
            SignalFn::Rational { a, c } => Vector::from_column_slice(a) / (t + c),
            SignalFn::Sampled { times, values } => {
                let last = times.len() - 1;
                if t <= times[0] {
                    return Vector::from_column_slice(&values[0]);
                }
                if t >= times[last] {
                    return Vector::from_column_slice(&values[last]);
                }
                let k = times.partition_point(|&s| s <= t) - 1;
                let th = (t - times[k]) / (times[k + 1] - times[k]);
                Vector::from_column_slice(&values[k]) * (1.0 - th)
                    + Vector::from_column_slice(&values[k + 1]) * th
            }
            SignalFn::Sum { terms } => {
                let mut out = Vector::zeros(self.dim());
                for s in terms {
                    out += s.eval(t);
                }
                out
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            SignalFn::Constant { value } => value.iter().all(|v| *v == 0.0),
            SignalFn::Exponential { a, .. } | SignalFn::Rational { a, .. } => {
                a.iter().all(|v| *v == 0.0)
            }
            SignalFn::Sampled { values, .. } => values.iter().flatten().all(|v| *v == 0.0),
            SignalFn::Sum { terms } => terms.iter().all(SignalFn::is_zero),
        }
    }

    /// Upper bound on `∫_t^∞ ‖s(τ)‖² dτ`; infinite when the signal is not square integrable.
    pub fn tail_sq_bound(&self, t: f64) -> f64 {
        let sq = |a: &[f64]| a.iter().map(|v| v * v).sum::<f64>();
        match self {
            SignalFn::Constant { value } => {
                if sq(value) == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            SignalFn::Exponential { a, b } => {
                let a2 = sq(a);
                if a2 == 0.0 {
                    0.0
                } else if *b < 0.0 {
                    a2 * (2.0 * b * t).exp() / (-2.0 * b)
                } else {
                    f64::INFINITY
                }
            }
            SignalFn::Rational { a, c } => sq(a) / (t.max(0.0) + c),
            SignalFn::Sampled { times, values } => {
                let last = times.len() - 1;
                if sq(&values[last]) != 0.0 {
                    return f64::INFINITY;
                }
                let mut acc = 0.0;
                for k in 0..last {
                    let (t0, t1) = (times[k], times[k + 1]);
                    if t1 <= t {
                        continue;
                    }
                    let (v0, v1) = (self.eval(t.max(t0)), self.eval(t1));
                    let h = t1 - t.max(t0);
                    acc += h * (v0.dot(&v0) + v0.dot(&v1) + v1.dot(&v1)) / 3.0;
                }
                acc
            }
            SignalFn::Sum { terms } => terms
                .iter()
                .map(|s| s.tail_sq_bound(t).sqrt())
                .sum::<f64>()
                .powi(2),
        }
    }

    fn check(&self, n: usize, field: &str, out: &mut Vec<Violation>) {
        let mut bad = |msg: String| {
            out.push(Violation::new(ViolationCode::Signal, field, msg));
        };
        let finite = |xs: &[f64]| xs.iter().all(|v| v.is_finite());
        match self {
            SignalFn::Constant { value } => {
                if value.len() != n {
                    bad(format!("dimension {} != {n}", value.len()));
                }
                if !finite(value) {
                    bad("non-finite value".into());
                }
            }
            SignalFn::Exponential { a, b } => {
                if a.len() != n {
                    bad(format!("dimension {} != {n}", a.len()));
                }
                if !finite(a) || !b.is_finite() {
                    bad("non-finite parameter".into());
                }
            }
            SignalFn::Rational { a, c } => {
                if a.len() != n {
                    bad(format!("dimension {} != {n}", a.len()));
                }
                if !(*c > 0.0) || !c.is_finite() {
                    bad(format!("rational signal needs c > 0, got {c}"));
                }
                if !finite(a) {
                    bad("non-finite parameter".into());
                }
            }
            SignalFn::Sampled { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    bad("sampled signal needs one value per knot and at least one knot".into());
                    return;
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) {
                    bad("sampled grid must be strictly increasing".into());
                }
                if values.iter().any(|v| v.len() != n) {
                    bad(format!("sampled values must have dimension {n}"));
                }
                if !finite(times) || values.iter().any(|v| !finite(v)) {
                    bad("non-finite knot".into());
                }
            }
            SignalFn::Sum { terms } => {
                if terms.is_empty() {
                    bad("sum of zero terms".into());
                }
                for s in terms {
                    s.check(n, field, out);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Horizon {
    Finite(f64),
    Infinite,
}

impl Horizon {
    pub fn is_finite(&self) -> bool {
        matches!(self, Horizon::Finite(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    Dimension,
    Symmetry,
    NonFinite,
    NotPsd,
    AgentCount,
    Horizon,
    Signal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(code: ViolationCode, field: &str, message: impl Into<String>) -> Self {
        Self {
            code,
            field: field.to_string(),
            message: message.into(),
        }
    }
}

/// Full problem description. Matrices may carry any shape until [`ProblemSpec::validate`]
/// has run.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub state_dim: usize,
    pub control_dim: usize,
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
    pub g: Matrix,
    pub q: Matrix,
    pub r: Matrix,
    pub h: Matrix,
    pub gamma: Matrix,
    pub gamma0: Matrix,
    pub f: SignalFn,
    pub sigma: SignalFn,
    pub eta: SignalFn,
    pub eta0: Vector,
    pub x0_mean: Vector,
    pub x0_cov: Matrix,
    pub agents: usize,
    pub horizon: Horizon,
    /// Externally supplied stationary `P` used in place of solving the algebraic equation.
    pub pinned_p: Option<Matrix>,
}

impl ProblemSpec {
    /// All-zero problem of the given size; callers fill in what they need.
    pub fn zeros(n: usize, r: usize, horizon: Horizon) -> Self {
        Self {
            state_dim: n,
            control_dim: r,
            a: Matrix::zeros(n, n),
            b: Matrix::zeros(n, r),
            c: Matrix::zeros(n, n),
            d: Matrix::zeros(n, r),
            g: Matrix::zeros(n, n),
            q: Matrix::zeros(n, n),
            r: Matrix::zeros(r, r),
            h: Matrix::zeros(n, n),
            gamma: Matrix::zeros(n, n),
            gamma0: Matrix::zeros(n, n),
            f: SignalFn::zero(n),
            sigma: SignalFn::zero(n),
            eta: SignalFn::zero(n),
            eta0: Vector::zeros(n),
            x0_mean: Vector::zeros(n),
            x0_cov: Matrix::zeros(n, n),
            agents: 1,
            horizon,
            pinned_p: None,
        }
    }

    pub fn with_agents(&self, n: usize) -> Self {
        let mut s = self.clone();
        s.agents = n;
        s
    }

    pub fn with_horizon(&self, horizon: Horizon) -> Self {
        let mut s = self.clone();
        s.horizon = horizon;
        s
    }

    pub fn final_time(&self) -> Option<f64> {
        match self.horizon {
            Horizon::Finite(t) => Some(t),
            Horizon::Infinite => None,
        }
    }

    /// Reports every violated invariant. Symmetric-by-contract matrices whose asymmetry is
    /// within `1e-10·(1 + ‖M‖)` are symmetrized in place.
    pub fn validate(&mut self) -> Vec<Violation> {
        let mut out = Vec::new();
        let (n, r) = (self.state_dim, self.control_dim);
        if n == 0 || r == 0 {
            out.push(Violation::new(
                ViolationCode::Dimension,
                "n/r",
                "state and control dimensions must be positive",
            ));
        }
        let no_pin = Matrix::zeros(n, n);
        let shapes: [(&str, &Matrix, (usize, usize)); 12] = [
            ("A", &self.a, (n, n)),
            ("B", &self.b, (n, r)),
            ("C", &self.c, (n, n)),
            ("D", &self.d, (n, r)),
            ("G", &self.g, (n, n)),
            ("Q", &self.q, (n, n)),
            ("R", &self.r, (r, r)),
            ("H", &self.h, (n, n)),
            ("Gamma", &self.gamma, (n, n)),
            ("Gamma0", &self.gamma0, (n, n)),
            ("x0_cov", &self.x0_cov, (n, n)),
            (
                "pinned_P",
                self.pinned_p.as_ref().unwrap_or(&no_pin),
                (n, n),
            ),
        ];
        for (name, m, want) in shapes {
            if m.shape() != want {
                out.push(Violation::new(
                    ViolationCode::Dimension,
                    name,
                    format!(
                        "expected {}x{}, got {}x{}",
                        want.0,
                        want.1,
                        m.nrows(),
                        m.ncols()
                    ),
                ));
            }
            if !is_finite(m) {
                out.push(Violation::new(
                    ViolationCode::NonFinite,
                    name,
                    "non-finite entry",
                ));
            }
        }
        for (name, v) in [("eta0", &self.eta0), ("x0_mean", &self.x0_mean)] {
            if v.len() != n {
                out.push(Violation::new(
                    ViolationCode::Dimension,
                    name,
                    format!("expected length {n}, got {}", v.len()),
                ));
            }
            if !v.iter().all(|x| x.is_finite()) {
                out.push(Violation::new(
                    ViolationCode::NonFinite,
                    name,
                    "non-finite entry",
                ));
            }
        }
        for (name, s) in [("f", &self.f), ("sigma", &self.sigma), ("eta", &self.eta)] {
            s.check(n, name, &mut out);
        }

        let sym = |name: &str, m: &mut Matrix, out: &mut Vec<Violation>| {
            if m.nrows() != m.ncols() || !is_finite(m) {
                return;
            }
            let asym = asymmetry(m);
            if asym <= 1e-10 * (1.0 + m.norm()) {
                *m = symmetrize(m);
            } else {
                out.push(Violation::new(
                    ViolationCode::Symmetry,
                    name,
                    format!("asymmetry {asym:.3e} exceeds tolerance"),
                ));
            }
        };
        sym("Q", &mut self.q, &mut out);
        sym("R", &mut self.r, &mut out);
        sym("H", &mut self.h, &mut out);
        sym("x0_cov", &mut self.x0_cov, &mut out);
        if let Some(p) = self.pinned_p.as_mut() {
            sym("pinned_P", p, &mut out);
        }

        if self.x0_cov.shape() == (n, n) && is_finite(&self.x0_cov) && n > 0 {
            let lmin = min_eigenvalue_sym(&self.x0_cov);
            if lmin < -1e-10 * (1.0 + self.x0_cov.norm()) {
                out.push(Violation::new(
                    ViolationCode::NotPsd,
                    "x0_cov",
                    format!("minimum eigenvalue {lmin:.3e} < 0"),
                ));
            }
        }
        if self.agents == 0 {
            out.push(Violation::new(
                ViolationCode::AgentCount,
                "N",
                "need at least one agent",
            ));
        }
        if let Horizon::Finite(t) = self.horizon {
            if !(t > 0.0) || !t.is_finite() {
                out.push(Violation::new(
                    ViolationCode::Horizon,
                    "horizon",
                    format!("finite horizon must be positive, got {t}"),
                ));
            }
        }
        out
    }

    /// Validates and returns the (possibly symmetrized) spec.
    pub fn validated(mut self) -> Result<Self, ModelError> {
        let v = self.validate();
        if v.is_empty() {
            Ok(self)
        } else {
            Err(ModelError::Invalid(v))
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let raw: ProblemFile =
            serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        raw.into_spec()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ProblemFile::from_spec(self)).expect("plain data")
    }
}

/// Quantities derived from the cost weights.
#[derive(Debug, Clone)]
pub struct DerivedWeights {
    /// `ΓᵀQ + QΓ − ΓᵀQΓ`
    pub q_gamma: Matrix,
    /// `Γ₀ᵀH + HΓ₀ − Γ₀ᵀHΓ₀`
    pub h_gamma0: Matrix,
    /// `(I − Γ)ᵀQ`, the map taking `η(t)` to `η̄(t)`.
    pub eta_bar_map: Matrix,
    pub eta: SignalFn,
    /// `Hη₀ − Γ₀ᵀHη₀`
    pub eta_bar0: Vector,
}

impl DerivedWeights {
    /// `η̄(t) = Qη(t) − ΓᵀQη(t)`
    pub fn eta_bar(&self, t: f64) -> Vector {
        &self.eta_bar_map * self.eta.eval(t)
    }
}

pub fn derive_weights(spec: &ProblemSpec) -> DerivedWeights {
    let twist =
        |w: &Matrix, g: &Matrix| symmetrize(&(g.transpose() * w + w * g - g.transpose() * w * g));
    DerivedWeights {
        q_gamma: twist(&spec.q, &spec.gamma),
        h_gamma0: twist(&spec.h, &spec.gamma0),
        eta_bar_map: &spec.q - spec.gamma.transpose() * &spec.q,
        eta: spec.eta.clone(),
        eta_bar0: &spec.h * &spec.eta0 - spec.gamma0.transpose() * &spec.h * &spec.eta0,
    }
}

/// Factor `L` with `L Lᵀ = Σ` for a PSD covariance (eigen-based, so singular Σ is fine).
pub fn covariance_factor(cov: &Matrix) -> Result<Matrix, ModelError> {
    let eig = symmetrize(cov).symmetric_eigen();
    let lmin = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if lmin < -1e-10 * (1.0 + cov.norm()) {
        return Err(ModelError::NotPsd(lmin));
    }
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * Matrix::from_diagonal(&d))
}

/// Gaussian initial state of one agent in one replication, drawn from that agent's stream.
pub(crate) fn draw_initial<R: rand::Rng>(
    mean: &Vector,
    factor: &Matrix,
    sign: f64,
    rng: &mut R,
) -> Vector {
    let z = Vector::from_iterator(
        mean.len(),
        (0..mean.len()).map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sign * z
        }),
    );
    mean + factor * z
}

/// `N` i.i.d. Gaussian initial states with the spec's mean and covariance.
///
/// The draws are the ones the simulator uses for replication 0 with the same seed.
pub fn sample_initials(spec: &ProblemSpec, seed: u64) -> Result<Vec<Vector>, ModelError> {
    let factor = covariance_factor(&spec.x0_cov)?;
    Ok((0..spec.agents)
        .map(|i| {
            let mut rng = rng::stream(seed, 0, i as u64);
            draw_initial(&spec.x0_mean, &factor, 1.0, &mut rng)
        })
        .collect())
}

type Rows = Vec<Vec<f64>>;

/// On-disk JSON layout of a problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProblemFile {
    n: usize,
    r: usize,
    #[serde(rename = "A")]
    a: Rows,
    #[serde(rename = "B")]
    b: Rows,
    #[serde(rename = "C")]
    c: Rows,
    #[serde(rename = "D")]
    d: Rows,
    #[serde(rename = "G")]
    g: Rows,
    #[serde(rename = "Q")]
    q: Rows,
    #[serde(rename = "R")]
    r_weight: Rows,
    #[serde(rename = "Gamma")]
    gamma: Rows,
    #[serde(rename = "Gamma0", default, skip_serializing_if = "Option::is_none")]
    gamma0: Option<Rows>,
    #[serde(rename = "H", default, skip_serializing_if = "Option::is_none")]
    h: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    f: Option<SignalFn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma: Option<SignalFn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eta: Option<SignalFn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eta0: Option<Vec<f64>>,
    x0_mean: Vec<f64>,
    x0_cov: Rows,
    #[serde(rename = "N")]
    agents: usize,
    horizon: Horizon,
    #[serde(rename = "pinned_P", default, skip_serializing_if = "Option::is_none")]
    pinned_p: Option<Rows>,
}

fn rows_to_matrix(name: &str, rows: &Rows) -> Result<Matrix, ModelError> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != nc) {
        return Err(ModelError::Parse(format!("matrix {name} has ragged rows")));
    }
    Ok(Matrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &Matrix) -> Rows {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

impl ProblemFile {
    fn into_spec(self) -> Result<ProblemSpec, ModelError> {
        let (n, r) = (self.n, self.r);
        let opt = |name: &str, m: &Option<Rows>| match m {
            Some(rows) => rows_to_matrix(name, rows),
            None => Ok(Matrix::zeros(n, n)),
        };
        Ok(ProblemSpec {
            state_dim: n,
            control_dim: r,
            a: rows_to_matrix("A", &self.a)?,
            b: rows_to_matrix("B", &self.b)?,
            c: rows_to_matrix("C", &self.c)?,
            d: rows_to_matrix("D", &self.d)?,
            g: rows_to_matrix("G", &self.g)?,
            q: rows_to_matrix("Q", &self.q)?,
            r: rows_to_matrix("R", &self.r_weight)?,
            h: opt("H", &self.h)?,
            gamma: rows_to_matrix("Gamma", &self.gamma)?,
            gamma0: opt("Gamma0", &self.gamma0)?,
            f: self.f.unwrap_or_else(|| SignalFn::zero(n)),
            sigma: self.sigma.unwrap_or_else(|| SignalFn::zero(n)),
            eta: self.eta.unwrap_or_else(|| SignalFn::zero(n)),
            eta0: Vector::from_vec(self.eta0.unwrap_or_else(|| vec![0.0; n])),
            x0_mean: Vector::from_vec(self.x0_mean),
            x0_cov: rows_to_matrix("x0_cov", &self.x0_cov)?,
            agents: self.agents,
            horizon: self.horizon,
            pinned_p: self
                .pinned_p
                .as_ref()
                .map(|p| rows_to_matrix("pinned_P", p))
                .transpose()?,
        }
        .with_control_dim(r))
    }

    fn from_spec(s: &ProblemSpec) -> Self {
        Self {
            n: s.state_dim,
            r: s.control_dim,
            a: matrix_to_rows(&s.a),
            b: matrix_to_rows(&s.b),
            c: matrix_to_rows(&s.c),
            d: matrix_to_rows(&s.d),
            g: matrix_to_rows(&s.g),
            q: matrix_to_rows(&s.q),
            r_weight: matrix_to_rows(&s.r),
            gamma: matrix_to_rows(&s.gamma),
            gamma0: Some(matrix_to_rows(&s.gamma0)),
            h: Some(matrix_to_rows(&s.h)),
            f: Some(s.f.clone()),
            sigma: Some(s.sigma.clone()),
            eta: Some(s.eta.clone()),
            eta0: Some(s.eta0.iter().copied().collect()),
            x0_mean: s.x0_mean.iter().copied().collect(),
            x0_cov: matrix_to_rows(&s.x0_cov),
            agents: s.agents,
            horizon: s.horizon,
            pinned_p: s.pinned_p.as_ref().map(matrix_to_rows),
        }
    }
}

impl ProblemSpec {
    fn with_control_dim(mut self, r: usize) -> Self {
        self.control_dim = r;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use approx::assert_abs_diff_eq;

    #[test]
    fn reference_problem_problem_is_valid() {
        let mut s = presets::sec6();
        assert!(s.validate().is_empty());
    }

    #[test]
    fn wrong_b_shape_is_reported() {
        let mut s = presets::sec6();
        s.b = Matrix::zeros(2, 1);
        let v = s.validate();
        assert!(v
            .iter()
            .any(|x| x.code == ViolationCode::Dimension && x.field == "B"));
    }

    #[test]
    fn asymmetric_q_is_reported_and_tiny_asymmetry_is_repaired() {
        let mut s = ProblemSpec::zeros(2, 1, Horizon::Infinite);
        s.q = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(s
            .validate()
            .iter()
            .any(|x| x.code == ViolationCode::Symmetry && x.field == "Q"));

        let mut s = ProblemSpec::zeros(2, 1, Horizon::Infinite);
        s.q = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5 + 1e-13, 1.0]);
        assert!(s.validate().is_empty());
        assert_eq!(s.q[(0, 1)], s.q[(1, 0)]);
    }

    #[test]
    fn bad_signal_and_horizon_are_reported() {
        let mut s = ProblemSpec::zeros(1, 1, Horizon::Finite(-1.0));
        s.eta = SignalFn::Rational {
            a: vec![1.0],
            c: 0.0,
        };
        s.agents = 0;
        let codes: Vec<_> = s.validate().into_iter().map(|v| v.code).collect();
        assert!(codes.contains(&ViolationCode::Signal));
        assert!(codes.contains(&ViolationCode::Horizon));
        assert!(codes.contains(&ViolationCode::AgentCount));
    }

    #[test]
    fn derived_weights_special_cases() {
        let mut s = presets::sec6();
        s.gamma = Matrix::zeros(1, 1);
        let w = derive_weights(&s);
        assert_eq!(w.q_gamma[(0, 0)], 0.0);
        assert_abs_diff_eq!(w.eta_bar(1.0)[0], 0.5, epsilon = 1e-15);

        s.gamma = Matrix::identity(1, 1);
        let w = derive_weights(&s);
        assert_abs_diff_eq!(w.q_gamma[(0, 0)], s.q[(0, 0)], epsilon = 1e-15);
        assert_eq!(w.eta_bar(1.0)[0], 0.0);

        let w = derive_weights(&presets::sec6());
        assert_abs_diff_eq!(w.q_gamma[(0, 0)], -0.44, epsilon = 1e-15);
    }

    #[test]
    fn derived_weights_are_linear_in_q() {
        let s = presets::sec6();
        let mut s2 = s.clone();
        s2.q *= 2.0;
        let (w, w2) = (derive_weights(&s), derive_weights(&s2));
        assert_abs_diff_eq!(w2.q_gamma, &w.q_gamma * 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w2.eta_bar(0.3), w.eta_bar(0.3) * 2.0, epsilon = 1e-14);
    }

    #[test]
    fn sampled_signal_hits_knots() {
        let s = SignalFn::Sampled {
            times: vec![0.0, 0.5, 2.0],
            values: vec![vec![1.0], vec![-3.0], vec![7.25]],
        };
        assert_eq!(s.eval(0.5)[0], -3.0);
        assert_eq!(s.eval(2.0)[0], 7.25);
        assert_eq!(s.eval(0.0)[0], 1.0);
        assert_abs_diff_eq!(s.eval(0.25)[0], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn tail_bounds() {
        let e = SignalFn::Exponential {
            a: vec![1.0],
            b: -1.0,
        };
        assert_abs_diff_eq!(e.tail_sq_bound(0.0), 0.5, epsilon = 1e-15);
        assert_eq!(SignalFn::constant(&[0.1]).tail_sq_bound(0.0), f64::INFINITY);
        assert_eq!(SignalFn::zero(2).tail_sq_bound(3.0), 0.0);
        let r = SignalFn::Rational {
            a: vec![1.0],
            c: 1.0,
        };
        assert_abs_diff_eq!(r.tail_sq_bound(0.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_covariance_gives_mean() {
        let mut s = presets::sec6();
        s.x0_cov = Matrix::zeros(1, 1);
        for x in sample_initials(&s, 3).unwrap() {
            assert_eq!(x, s.x0_mean);
        }
    }

    #[test]
    fn samples_are_deterministic_and_centered() {
        let s = presets::sec6();
        let a = sample_initials(&s, 42).unwrap();
        let b = sample_initials(&s, 42).unwrap();
        assert_eq!(a, b);
        let mean: f64 = a.iter().map(|x| x[0]).sum::<f64>() / a.len() as f64;
        assert!((mean - 1.0).abs() < 4.0 * (0.1f64 / 50.0).sqrt());
    }

    #[test]
    fn non_psd_covariance_is_rejected() {
        let mut s = presets::sec6();
        s.x0_cov = Matrix::from_element(1, 1, -1.0);
        assert!(matches!(sample_initials(&s, 1), Err(ModelError::NotPsd(_))));
    }

    #[test]
    fn json_round_trip_and_defaults() {
        let s = presets::sec6();
        let back = ProblemSpec::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        let minimal = r#"{"n":1,"r":1,"A":[[0]],"B":[[1]],"C":[[0]],"D":[[0]],"G":[[0]],
            "Q":[[1]],"R":[[1]],"Gamma":[[0]],"x0_mean":[0],"x0_cov":[[0]],"N":3,
            "horizon":{"finite":2.0}}"#;
        let m = ProblemSpec::from_json(minimal).unwrap();
        assert_eq!(m.horizon, Horizon::Finite(2.0));
        assert!(m.f.is_zero() && m.h == Matrix::zeros(1, 1));
        assert!(ProblemSpec::from_json(r#"{"n":1}"#).is_err());
    }

    #[test]
    fn ragged_rows_fail_to_parse() {
        let bad = presets::sec6().to_json().replace(
            "\"A\": [\n    [\n      0.1\n    ]\n  ]",
            "\"A\": [[0.1],[1, 2]]",
        );
        assert!(matches!(
            ProblemSpec::from_json(&bad),
            Err(ModelError::Parse(_))
        ));
    }
}
