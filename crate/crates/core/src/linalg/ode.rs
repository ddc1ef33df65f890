use super::{LinalgError, Matrix, Result, Vector, ESCAPE_NORM};

/// Anything RK4 can march: a vector space with a sup-norm.
pub trait OdeState: Clone {
    /// `self + a * x`.
    fn axpy(&self, a: f64, x: &Self) -> Self;
    fn scale(&self, a: f64) -> Self;
    fn norm_inf(&self) -> f64;
}

impl OdeState for f64 {
    fn axpy(&self, a: f64, x: &Self) -> Self {
        self + a * x
    }
    fn scale(&self, a: f64) -> Self {
        a * self
    }
    fn norm_inf(&self) -> f64 {
        if self.is_nan() {
            f64::NAN
        } else {
            self.abs()
        }
    }
}

impl OdeState for Vector {
    fn axpy(&self, a: f64, x: &Self) -> Self {
        self + x * a
    }
    fn scale(&self, a: f64) -> Self {
        self * a
    }
    fn norm_inf(&self) -> f64 {
        sup_norm(self.as_slice())
    }
}

impl OdeState for Matrix {
    fn axpy(&self, a: f64, x: &Self) -> Self {
        self + x * a
    }
    fn scale(&self, a: f64) -> Self {
        self * a
    }
    fn norm_inf(&self) -> f64 {
        sup_norm(self.as_slice())
    }
}

fn sup_norm(xs: &[f64]) -> f64 {
    let mut out = 0.0f64;
    for &x in xs {
        if x.is_nan() {
            return f64::NAN;
        }
        out = out.max(x.abs());
    }
    out
}

/// States on a uniform grid, ordered in integration direction.
#[derive(Debug, Clone)]
pub struct Trajectory<S> {
    pub times: Vec<f64>,
    pub states: Vec<S>,
}

impl<S> Trajectory<S> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &S {
        self.states.last().expect("trajectory is never empty")
    }

    /// Same trajectory ordered by increasing time.
    pub fn into_forward(mut self) -> Self {
        if self.times.len() > 1 && self.times[0] > self.times[self.times.len() - 1] {
            self.times.reverse();
            self.states.reverse();
        }
        self
    }
}

/// `n + 1` equally spaced points from `t0` to `t1` (either direction) with spacing at most `step`.
pub fn uniform_grid(t0: f64, t1: f64, step: f64) -> Vec<f64> {
    let span = t1 - t0;
    let n = ((span.abs() / step) - 1e-9).ceil().max(1.0) as usize;
    (0..=n)
        .map(|k| {
            if k == n {
                t1
            } else {
                t0 + span * (k as f64) / (n as f64)
            }
        })
        .collect()
}

/// One classical RK4 step of size `h` (negative `h` marches backward).
pub fn rk4_step<S, E, F>(rhs: &mut F, t: f64, y: &S, h: f64) -> std::result::Result<S, E>
where
    S: OdeState,
    F: FnMut(f64, &S) -> std::result::Result<S, E>,
{
    let k1 = rhs(t, y)?;
    let k2 = rhs(t + 0.5 * h, &y.axpy(0.5 * h, &k1))?;
    let k3 = rhs(t + 0.5 * h, &y.axpy(0.5 * h, &k2))?;
    let k4 = rhs(t + h, &y.axpy(h, &k3))?;
    Ok(y.axpy(h / 6.0, &k1)
        .axpy(h / 3.0, &k2)
        .axpy(h / 3.0, &k3)
        .axpy(h / 6.0, &k4))
}

/// Fixed-step RK4 from `t0` to `t1` (`t1 < t0` integrates backward).
///
/// The grid holds both endpoints. A non-finite state, or one whose sup-norm exceeds
/// [`ESCAPE_NORM`], aborts with [`LinalgError::BlowUp`] at the first offending time.
pub fn integrate_ode<S, E, F>(
    mut rhs: F,
    t0: f64,
    t1: f64,
    y0: S,
    step: f64,
) -> std::result::Result<Trajectory<S>, E>
where
    S: OdeState,
    E: From<LinalgError>,
    F: FnMut(f64, &S) -> std::result::Result<S, E>,
{
    if !(step > 0.0) || !step.is_finite() {
        return Err(
            LinalgError::Tolerance(format!("ode step must be positive, got {step}")).into(),
        );
    }
    let times = uniform_grid(t0, t1, step);
    let mut states = Vec::with_capacity(times.len());
    states.push(y0);
    for w in times.windows(2) {
        let y = states.last().expect("seeded");
        let next = rk4_step(&mut rhs, w[0], y, w[1] - w[0])?;
        let norm = next.norm_inf();
        if !norm.is_finite() || norm > ESCAPE_NORM {
            return Err(LinalgError::BlowUp { time: w[1] }.into());
        }
        states.push(next);
    }
    Ok(Trajectory { times, states })
}

/// Composite trapezoidal rule for samples on a uniform grid of spacing `step`.
pub fn quadrature(values: &[f64], step: f64) -> Result<f64> {
    if values.len() < 2 {
        return Err(LinalgError::EmptyGrid);
    }
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    Ok(step * (0.5 * (values[0] + values[values.len() - 1]) + inner))
}

/// Samples on a uniform, increasing grid with interpolation.
///
/// With derivative samples the interpolant is the cubic Hermite spline (fourth order);
/// otherwise it is piecewise linear. Queries outside the grid clamp to the end values.
#[derive(Debug, Clone)]
pub struct GridFn<S> {
    pub t0: f64,
    pub step: f64,
    pub values: Vec<S>,
    pub derivs: Option<Vec<S>>,
}

impl<S: OdeState> GridFn<S> {
    pub fn new(t0: f64, step: f64, values: Vec<S>) -> Self {
        Self {
            t0,
            step,
            values,
            derivs: None,
        }
    }

    pub fn with_derivs(t0: f64, step: f64, values: Vec<S>, derivs: Vec<S>) -> Self {
        debug_assert_eq!(values.len(), derivs.len());
        Self {
            t0,
            step,
            values,
            derivs: Some(derivs),
        }
    }

    /// Builds from a forward trajectory produced by [`integrate_ode`].
    pub fn from_trajectory(traj: &Trajectory<S>) -> Self {
        let step = if traj.times.len() > 1 {
            traj.times[1] - traj.times[0]
        } else {
            1.0
        };
        Self::new(traj.times[0], step, traj.states.clone())
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.step * (self.values.len().saturating_sub(1)) as f64
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + self.step * k as f64
    }

    pub fn eval(&self, t: f64) -> S {
        let last = self.values.len() - 1;
        if last == 0 || t <= self.t0 {
            return self.values[0].clone();
        }
        let x = (t - self.t0) / self.step;
        if x >= last as f64 {
            return self.values[last].clone();
        }
        let k = (x.floor() as usize).min(last - 1);
        let th = x - k as f64;
        let (y0, y1) = (&self.values[k], &self.values[k + 1]);
        match &self.derivs {
            None => y0.scale(1.0 - th).axpy(th, y1),
            Some(d) => {
                let th2 = th * th;
                let th3 = th2 * th;
                let h00 = 2.0 * th3 - 3.0 * th2 + 1.0;
                let h10 = th3 - 2.0 * th2 + th;
                let h01 = -2.0 * th3 + 3.0 * th2;
                let h11 = th3 - th2;
                y0.scale(h00)
                    .axpy(self.step * h10, &d[k])
                    .axpy(h01, y1)
                    .axpy(self.step * h11, &d[k + 1])
            }
        }
    }
}
