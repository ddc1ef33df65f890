use std::fmt::Write as _;
use std::ops::Range;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{SimConfig, SimError};
use crate::linalg::{Matrix, ESCAPE_NORM};
use crate::model::{covariance_factor, draw_initial, Horizon, ModelError, ProblemSpec};
use crate::rng;
use crate::synthesis::{ControlLaw, Coupling};

/// Column-major dense block with an allocation-free product.
#[derive(Debug, Clone)]
struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    fn from(m: &Matrix) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.as_slice().to_vec(),
        }
    }

    /// `y += M x`
    #[inline]
    fn mv_add(&self, x: &[f64], y: &mut [f64]) {
        mv_add(&self.data, self.rows, self.cols, x, y);
    }

    /// `xᵀ M x` for square `M`.
    #[inline]
    fn quad(&self, x: &[f64]) -> f64 {
        let n = self.rows;
        let mut acc = 0.0;
        for j in 0..n {
            let mut col = 0.0;
            for (i, xi) in x.iter().enumerate().take(n) {
                col += self.data[i + j * n] * xi;
            }
            acc += col * x[j];
        }
        acc
    }
}

#[inline]
fn mv_add(a: &[f64], rows: usize, cols: usize, x: &[f64], y: &mut [f64]) {
    for j in 0..cols {
        let xj = x[j];
        let col = &a[j * rows..(j + 1) * rows];
        for i in 0..rows {
            y[i] += col[i] * xj;
        }
    }
}

#[inline]
fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Thinned paths of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub state_dim: usize,
    pub control_dim: usize,
    pub agents: usize,
    pub times: Vec<f64>,
    /// Per sample time, `agents·n` states (agent-major).
    pub states: Vec<Vec<f64>>,
    /// Per sample time, `agents·r` controls.
    pub controls: Vec<Vec<f64>>,
    /// Per sample time, the population average `x⁽ᴺ⁾`.
    pub average: Vec<Vec<f64>>,
    pub xbar: Vec<Vec<f64>>,
}

impl PathRecord {
    pub fn state(&self, k: usize, agent: usize) -> &[f64] {
        &self.states[k][agent * self.state_dim..(agent + 1) * self.state_dim]
    }

    pub fn control(&self, k: usize, agent: usize) -> &[f64] {
        &self.controls[k][agent * self.control_dim..(agent + 1) * self.control_dim]
    }

    /// Long format: `t, agent, x_1..x_n, u_1..u_r`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,agent");
        for i in 0..self.state_dim {
            write!(out, ",x_{}", i + 1).unwrap();
        }
        for i in 0..self.control_dim {
            write!(out, ",u_{}", i + 1).unwrap();
        }
        out.push('\n');
        for (k, &t) in self.times.iter().enumerate() {
            for a in 0..self.agents {
                write!(out, "{t:.6e},{a}").unwrap();
                for v in self.state(k, a).iter().chain(self.control(k, a)) {
                    write!(out, ",{v:.12e}").unwrap();
                }
                out.push('\n');
            }
        }
        out
    }

    /// `t, xbar_i, avg_i`: mean-field trajectory against the population average.
    pub fn average_csv(&self) -> String {
        let mut out = String::from("t");
        for i in 0..self.state_dim {
            write!(out, ",xbar_{}", i + 1).unwrap();
        }
        for i in 0..self.state_dim {
            write!(out, ",avg_{}", i + 1).unwrap();
        }
        out.push('\n');
        for (k, &t) in self.times.iter().enumerate() {
            write!(out, "{t:.6e}").unwrap();
            for v in self.xbar[k].iter().chain(&self.average[k]) {
                write!(out, ",{v:.12e}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Per-replication outputs of one block of replications, in replication order.
#[derive(Debug, Clone)]
pub(super) struct Block {
    pub rep_costs: Vec<f64>,
    pub consistency: Vec<f64>,
    pub twin: Vec<f64>,
    pub moment: Vec<f64>,
    pub moment90: Vec<f64>,
    pub end_integrand: Vec<f64>,
    pub agent_cost_sums: Vec<f64>,
    pub msq_sums: Vec<f64>,
    pub paths: Option<PathRecord>,
}

impl Block {
    pub fn absorb(&mut self, other: Block) {
        self.rep_costs.extend(other.rep_costs);
        self.consistency.extend(other.consistency);
        self.twin.extend(other.twin);
        self.moment.extend(other.moment);
        self.moment90.extend(other.moment90);
        self.end_integrand.extend(other.end_integrand);
        for (a, b) in self.agent_cost_sums.iter_mut().zip(other.agent_cost_sums) {
            *a += b;
        }
        for (a, b) in self.msq_sums.iter_mut().zip(other.msq_sums) {
            *a += b;
        }
        if self.paths.is_none() {
            self.paths = other.paths;
        }
    }
}

struct RepOut {
    agent_costs: Vec<f64>,
    consistency: f64,
    twin: f64,
    moment: f64,
    moment90: f64,
    end_integrand: f64,
    msq: Vec<f64>,
    paths: Option<PathRecord>,
}

/// Precomputed coefficients on the Euler grid, shared by all replications.
pub(super) struct Engine {
    n: usize,
    r: usize,
    agents: usize,
    /// Dynamics and cost use `x̄` instead of the population average.
    mf_system: bool,
    /// The law feeds the population average to its mean-field gain.
    law_population: bool,
    steps: usize,
    dt: f64,
    thin: usize,
    k90: usize,
    finite: bool,
    a: Mat,
    b: Mat,
    c: Mat,
    d: Mat,
    g: Mat,
    q: Mat,
    rw: Mat,
    gamma: Mat,
    h: Mat,
    gamma0: Mat,
    eta0: Vec<f64>,
    // per-step tables, flattened with stride of one knot
    f_self: Vec<f64>,
    f_mf: Vec<f64>,
    offset: Vec<f64>,
    xbar: Vec<f64>,
    force: Vec<f64>,
    sigma: Vec<f64>,
    eta: Vec<f64>,
    mean0: crate::linalg::Vector,
    factor: Matrix,
    seed: u64,
    antithetic: bool,
    record: bool,
    twin: bool,
}

impl Engine {
    pub fn new(
        spec: &ProblemSpec,
        law: &ControlLaw,
        cfg: &SimConfig,
        agents: usize,
        mf_system: bool,
    ) -> Result<Self, SimError> {
        let (n, r) = (spec.state_dim, spec.control_dim);
        let steps = cfg.steps();
        let dt = cfg.step();
        let mut tabs: [Vec<f64>; 7] = Default::default();
        for k in 0..=steps {
            let t = k as f64 * dt;
            tabs[0].extend_from_slice(law.f_self.eval(t).as_slice());
            tabs[1].extend_from_slice(law.f_mf.eval(t).as_slice());
            tabs[2].extend_from_slice(law.g.eval(t).as_slice());
            tabs[3].extend_from_slice(law.xbar.eval(t).as_slice());
            tabs[4].extend_from_slice(spec.f.eval(t).as_slice());
            tabs[5].extend_from_slice(spec.sigma.eval(t).as_slice());
            tabs[6].extend_from_slice(spec.eta.eval(t).as_slice());
        }
        let [f_self, f_mf, offset, xbar, force, sigma, eta] = tabs;
        let factor = covariance_factor(&spec.x0_cov).map_err(|e: ModelError| SimError::Config(e.to_string()))?;
        let k90 = (0.9 * steps as f64).floor() as usize;
        Ok(Self {
            n,
            r,
            agents,
            mf_system,
            law_population: law.coupling == Coupling::Population && !mf_system,
            steps,
            dt,
            thin: cfg.thinning,
            k90,
            finite: matches!(spec.horizon, Horizon::Finite(_)),
            a: Mat::from(&spec.a),
            b: Mat::from(&spec.b),
            c: Mat::from(&spec.c),
            d: Mat::from(&spec.d),
            g: Mat::from(&spec.g),
            q: Mat::from(&spec.q),
            rw: Mat::from(&spec.r),
            gamma: Mat::from(&spec.gamma),
            h: Mat::from(&spec.h),
            gamma0: Mat::from(&spec.gamma0),
            eta0: spec.eta0.as_slice().to_vec(),
            f_self,
            f_mf,
            offset,
            xbar,
            force,
            sigma,
            eta,
            mean0: spec.x0_mean.clone(),
            factor,
            seed: cfg.seed,
            antithetic: cfg.antithetic,
            record: cfg.record_paths,
            twin: cfg.twin,
        })
    }

    fn samples(&self) -> usize {
        self.steps / self.thin + usize::from(!self.steps.is_multiple_of(self.thin)) + 1
    }

    pub fn run_block(&self, reps: Range<usize>) -> Result<Block, SimError> {
        let mut block = Block {
            rep_costs: Vec::with_capacity(reps.len()),
            consistency: Vec::with_capacity(reps.len()),
            twin: Vec::with_capacity(reps.len()),
            moment: Vec::with_capacity(reps.len()),
            moment90: Vec::with_capacity(reps.len()),
            end_integrand: Vec::with_capacity(reps.len()),
            agent_cost_sums: vec![0.0; self.agents],
            msq_sums: vec![0.0; self.samples()],
            paths: None,
        };
        for rep in reps {
            let out = self.run_rep(rep)?;
            let total: f64 = out.agent_costs.iter().sum();
            block.rep_costs.push(total / self.agents as f64);
            block.consistency.push(out.consistency);
            block.twin.push(out.twin);
            block.moment.push(out.moment);
            block.moment90.push(out.moment90);
            block.end_integrand.push(out.end_integrand);
            for (a, c) in block.agent_cost_sums.iter_mut().zip(&out.agent_costs) {
                *a += c;
            }
            for (a, c) in block.msq_sums.iter_mut().zip(&out.msq) {
                *a += c;
            }
            if out.paths.is_some() {
                block.paths = out.paths;
            }
        }
        Ok(block)
    }

    fn run_rep(&self, rep: usize) -> Result<RepOut, SimError> {
        let (n, r, na) = (self.n, self.r, self.agents);
        let (stream_rep, sign) = if self.antithetic {
            ((rep / 2) as u64, if rep % 2 == 1 { -1.0 } else { 1.0 })
        } else {
            (rep as u64, 1.0)
        };
        let mut rngs: Vec<ChaCha8Rng> = (0..na)
            .map(|i| rng::stream(self.seed, stream_rep, i as u64))
            .collect();
        let mut x = vec![0.0; na * n];
        for (i, rng) in rngs.iter_mut().enumerate() {
            let x0 = draw_initial(&self.mean0, &self.factor, sign, rng);
            x[i * n..(i + 1) * n].copy_from_slice(x0.as_slice());
        }
        let mut z = if self.twin { x.clone() } else { Vec::new() };

        let mut costs = vec![0.0; na];
        let (mut consistency, mut twin_gap, mut moment, mut moment90, mut end_integrand) =
            (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut msq = Vec::with_capacity(self.samples());
        let record = self.record && rep == 0;
        let mut paths = record.then(|| PathRecord {
            state_dim: n,
            control_dim: r,
            agents: na,
            times: Vec::new(),
            states: Vec::new(),
            controls: Vec::new(),
            average: Vec::new(),
            xbar: Vec::new(),
        });

        let sq = self.dt.sqrt();
        let (mut avg, mut m_law, mut v, mut gm) = (vec![0.0; n], vec![0.0; n], vec![0.0; r], vec![0.0; n]);
        let (mut u, mut e, mut drift, mut diff) = (vec![0.0; r], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut u_all = if record { vec![0.0; na * r] } else { Vec::new() };
        let mut vz = vec![0.0; r];

        for k in 0..=self.steps {
            let t = k as f64 * self.dt;
            let fs = &self.f_self[k * r * n..(k + 1) * r * n];
            let fm = &self.f_mf[k * r * n..(k + 1) * r * n];
            let off = &self.offset[k * r..(k + 1) * r];
            let xb = &self.xbar[k * n..(k + 1) * n];
            let fk = &self.force[k * n..(k + 1) * n];
            let sk = &self.sigma[k * n..(k + 1) * n];
            let ek = &self.eta[k * n..(k + 1) * n];
            let w = if k == 0 || k == self.steps { 0.5 * self.dt } else { self.dt };
            let last = k == self.steps;

            // average entering dynamics and cost
            if self.mf_system {
                avg.copy_from_slice(xb);
            } else {
                avg.iter_mut().for_each(|a| *a = 0.0);
                for i in 0..na {
                    for j in 0..n {
                        avg[j] += x[i * n + j];
                    }
                }
                avg.iter_mut().for_each(|a| *a /= na as f64);
                let dev: f64 = avg.iter().zip(xb).map(|(a, b)| (a - b) * (a - b)).sum();
                consistency += w * dev;
            }
            m_law.copy_from_slice(if self.law_population { &avg } else { xb });
            // common part of the control: v = M m + g
            v.copy_from_slice(off);
            mv_add(fm, r, n, &m_law, &mut v);
            // Γ m + η
            gm.copy_from_slice(ek);
            self.gamma.mv_add(&avg, &mut gm);
            // twin control offset uses x̄
            if self.twin {
                vz.copy_from_slice(off);
                mv_add(fm, r, n, xb, &mut vz);
            }

            let sample = k % self.thin == 0 || last;
            if sample {
                if let Some(p) = paths.as_mut() {
                    p.times.push(t);
                    p.states.push(x.clone());
                    p.average.push(avg.clone());
                    p.xbar.push(xb.to_vec());
                }
            }
            let (mut run_sum, mut mom_k, mut msq_k, mut twin_k) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..na {
                let xi = &x[i * n..(i + 1) * n];
                u.copy_from_slice(&v);
                mv_add(fs, r, n, xi, &mut u);
                for j in 0..n {
                    e[j] = xi[j] - gm[j];
                }
                let running = self.q.quad(&e) + self.rw.quad(&u);
                costs[i] += w * running;
                run_sum += running;
                let xx = norm_sq(xi);
                mom_k += xx + norm_sq(&u);
                msq_k += xx;
                if record {
                    u_all[i * r..(i + 1) * r].copy_from_slice(&u);
                }
                if last {
                    if self.finite {
                        // ‖x − Γ₀m − η₀‖²_H
                        e.copy_from_slice(&self.eta0);
                        self.gamma0.mv_add(&avg, &mut e);
                        for j in 0..n {
                            e[j] = xi[j] - e[j];
                        }
                        costs[i] += self.h.quad(&e);
                    }
                    if self.twin {
                        let zi = &z[i * n..(i + 1) * n];
                        twin_k += xi.iter().zip(zi).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                    }
                    continue;
                }
                let dw: f64 = {
                    let s: f64 = StandardNormal.sample(&mut rngs[i]);
                    sign * s * sq
                };
                // drift = A x + B u + G m + f, diffusion = C x + D u + σ
                drift.copy_from_slice(fk);
                self.a.mv_add(xi, &mut drift);
                self.b.mv_add(&u, &mut drift);
                self.g.mv_add(&avg, &mut drift);
                diff.copy_from_slice(sk);
                self.c.mv_add(xi, &mut diff);
                self.d.mv_add(&u, &mut diff);
                let mut nrm = 0.0;
                if self.twin {
                    let zi = &z[i * n..(i + 1) * n];
                    twin_k += xi.iter().zip(zi).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                }
                let xi = &mut x[i * n..(i + 1) * n];
                for j in 0..n {
                    xi[j] += drift[j] * self.dt + diff[j] * dw;
                    nrm += xi[j] * xi[j];
                }
                if !(nrm.is_finite() && nrm.sqrt() <= ESCAPE_NORM) {
                    return Err(SimError::Divergence {
                        agent: i,
                        time: t + self.dt,
                        replication: rep,
                    });
                }
                if self.twin {
                    let zi = &mut z[i * n..(i + 1) * n];
                    u.copy_from_slice(&vz);
                    mv_add(fs, r, n, zi, &mut u);
                    drift.copy_from_slice(fk);
                    self.a.mv_add(zi, &mut drift);
                    self.b.mv_add(&u, &mut drift);
                    self.g.mv_add(xb, &mut drift);
                    diff.copy_from_slice(sk);
                    self.c.mv_add(zi, &mut diff);
                    self.d.mv_add(&u, &mut diff);
                    let mut nz = 0.0;
                    for j in 0..n {
                        zi[j] += drift[j] * self.dt + diff[j] * dw;
                        nz += zi[j] * zi[j];
                    }
                    if !(nz.is_finite() && nz.sqrt() <= ESCAPE_NORM) {
                        return Err(SimError::Divergence {
                            agent: i,
                            time: t + self.dt,
                            replication: rep,
                        });
                    }
                }
            }
            let inv = 1.0 / na as f64;
            if k == self.k90 && k > 0 && !last {
                moment90 = moment + 0.5 * self.dt * mom_k * inv;
            }
            moment += w * mom_k * inv;
            twin_gap += w * twin_k * inv;
            if sample {
                msq.push(msq_k * inv);
                if let Some(p) = paths.as_mut() {
                    p.controls.push(u_all.clone());
                }
            }
            if last {
                end_integrand = run_sum * inv;
            }
        }
        Ok(RepOut {
            agent_costs: costs,
            consistency,
            twin: twin_gap,
            moment,
            moment90,
            end_integrand,
            msq,
            paths,
        })
    }
}

/// Individual and social costs of recorded paths.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSummary {
    pub individual: Vec<f64>,
    pub social: f64,
}

/// Trapezoid cost of recorded paths on their own (uniform) grid, with the population
/// average taken from the paths. Finite horizons add the terminal cost when the grid ends
/// at `T`; infinite horizons are truncated at the last sample.
pub fn evaluate_cost(paths: &PathRecord, spec: &ProblemSpec) -> Result<CostSummary, SimError> {
    let times = &paths.times;
    if times.len() < 2 {
        return Err(SimError::Grid("need at least two samples".into()));
    }
    if paths.state_dim != spec.state_dim || paths.control_dim != spec.control_dim {
        return Err(SimError::Grid("path dimensions differ from the problem".into()));
    }
    let h = times[1] - times[0];
    if times.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(1.0)) {
        return Err(SimError::Grid("samples are not uniformly spaced".into()));
    }
    if let Horizon::Finite(t) = spec.horizon {
        if (times[times.len() - 1] - t).abs() > 1e-9 * t.max(1.0) {
            return Err(SimError::Grid(format!("grid ends at {} but T = {t}", times[times.len() - 1])));
        }
    }
    let (n, na) = (spec.state_dim, paths.agents);
    let q = Mat::from(&spec.q);
    let rw = Mat::from(&spec.r);
    let gamma = Mat::from(&spec.gamma);
    let mut individual = vec![0.0; na];
    let last = times.len() - 1;
    let mut avg = vec![0.0; n];
    let mut e = vec![0.0; n];
    for (k, &t) in times.iter().enumerate() {
        avg.iter_mut().for_each(|a| *a = 0.0);
        for i in 0..na {
            for (a, v) in avg.iter_mut().zip(paths.state(k, i).iter()).take(n) {
                *a += v / na as f64;
            }
        }
        let eta = spec.eta.eval(t);
        let w = if k == 0 || k == last { 0.5 * h } else { h };
        for (i, c) in individual.iter_mut().enumerate() {
            e.copy_from_slice(eta.as_slice());
            gamma.mv_add(&avg, &mut e);
            let xi = paths.state(k, i);
            for j in 0..n {
                e[j] = xi[j] - e[j];
            }
            *c += w * (q.quad(&e) + rw.quad(paths.control(k, i)));
            if k == last && matches!(spec.horizon, Horizon::Finite(_)) {
                e.copy_from_slice(spec.eta0.as_slice());
                Mat::from(&spec.gamma0).mv_add(&avg, &mut e);
                for j in 0..n {
                    e[j] = xi[j] - e[j];
                }
                *c += Mat::from(&spec.h).quad(&e);
            }
        }
    }
    let social = super::pairwise_sum(&individual);
    Ok(CostSummary { individual, social })
}
