//! Command-line front end.
//!
//! Every run writes `manifest.json` into the output directory. Its SHA-256 hash is stamped
//! into every other output: the first line of each CSV is `# manifest <hash>` and each JSON
//! object carries `manifest_hash`. Exit codes: 0 success, 1 I/O, 2 validation, 3 solver,
//! 4 divergence, 64 usage.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::linalg::{Matrix, Tolerance};
use crate::model::{Horizon, ProblemSpec};
use crate::riccati::{solve_are, solve_finite_limit, solve_finite_n, RiccatiError};
use crate::simulator::{simulate_population, SimConfig, SimError};
use crate::social::{asymptotic_value, decentralized_law, gap_curve, SocialError};
use crate::stability::check;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;
pub const EXIT_USAGE: i32 = 64;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "MFSOCIAL_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "mfsocial", version, about = "Mean-field social control: solve, check, simulate")]
struct Cli {
    /// Output directory (created if missing).
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
struct TolArgs {
    /// Relative singular-value cutoff for pseudoinverses and rank decisions.
    #[arg(long, default_value_t = Tolerance::default().rank_cutoff)]
    rank_cutoff: f64,
    /// Residual bound for Riccati residuals, range and sign tests.
    #[arg(long, default_value_t = Tolerance::default().residual_tol)]
    residual_tol: f64,
    /// RK4 step of the Riccati and mean-field integrations.
    #[arg(long, default_value_t = Tolerance::default().ode_step)]
    ode_step: f64,
}

impl TolArgs {
    fn tolerance(&self) -> Result<Tolerance, Failure> {
        let tol = Tolerance {
            rank_cutoff: self.rank_cutoff,
            residual_tol: self.residual_tol,
            ode_step: self.ode_step,
        };
        tol.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(tol)
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct SimArgs {
    /// Number of agents (defaults to the problem's N).
    #[arg(long = "N")]
    agents: Option<usize>,
    /// Euler–Maruyama step.
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Simulated horizon; defaults to the finite horizon, or 20 on an infinite horizon.
    #[arg(long = "T")]
    t_sim: Option<f64>,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stride of recorded path samples.
    #[arg(long, default_value_t = 10)]
    thinning: usize,
    /// Antithetic pairs of replications.
    #[arg(long)]
    antithetic: bool,
}

impl SimArgs {
    fn config(&self, spec: &ProblemSpec) -> Result<SimConfig, Failure> {
        let t_sim = resolve_t(spec, self.t_sim, 20.0)?;
        let mut cfg = SimConfig::new(self.dt, t_sim, self.reps, self.seed);
        cfg.thinning = self.thinning;
        cfg.antithetic = self.antithetic;
        cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn resolve_t(spec: &ProblemSpec, t: Option<f64>, default: f64) -> Result<f64, Failure> {
    match (spec.horizon, t) {
        (Horizon::Finite(h), None) => Ok(h),
        (Horizon::Finite(h), Some(t)) if (t - h).abs() > 1e-12 * h => Err(Failure::Usage(format!(
            "--T {t} differs from the problem's finite horizon {h}"
        ))),
        (Horizon::Finite(h), Some(_)) => Ok(h),
        (Horizon::Infinite, t) => Ok(t.unwrap_or(default)),
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse and validate a problem file.
    Validate { spec: PathBuf },
    /// Integrate the finite-horizon Riccati system (limit problem, or N agents with --N).
    SolveFinite {
        spec: PathBuf,
        #[arg(long = "N")]
        agents: Option<usize>,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Solve the stationary equations and the offset and mean-field tables.
    SolveInfinite {
        spec: PathBuf,
        /// Length of the offset and mean-field tables.
        #[arg(long = "T", default_value_t = 20.0)]
        t_sim: f64,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Stability, stabilizability, detectability and convexity report.
    Check {
        spec: PathBuf,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Monte Carlo simulation of the decentralized law.
    Simulate {
        spec: PathBuf,
        #[command(flatten)]
        sim: SimArgs,
        /// Write paths of replication 0.
        #[arg(long)]
        paths: bool,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Decentralized against centralized per-agent cost over a list of N.
    Gap {
        spec: PathBuf,
        #[arg(long = "N-list", value_delimiter = ',', required = true)]
        n_list: Vec<usize>,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Asymptotic per-agent social value on an infinite horizon.
    Value {
        spec: PathBuf,
        #[arg(long = "T", default_value_t = 40.0)]
        t_sim: f64,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Full pipeline: check, trajectory and average data, gap curve, value.
    ReproducePaper {
        spec: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        /// Horizon of the trajectory figures.
        #[arg(long = "T", default_value_t = 20.0)]
        t_sim: f64,
        /// Finite horizon of the gap curve.
        #[arg(long, default_value_t = 1.0)]
        gap_t: f64,
        /// Terminal weight (times I) of the gap curve.
        #[arg(long, default_value_t = 10.0)]
        gap_h: f64,
        #[arg(long = "N-list", value_delimiter = ',', default_value = "1,2,5,10,20,50")]
        n_list: Vec<usize>,
        /// Replications per N of the gap curve.
        #[arg(long, default_value_t = 200)]
        gap_reps: usize,
        #[command(flatten)]
        tol: TolArgs,
    },
}

#[derive(Debug)]
enum Failure {
    Io(String),
    Validation(String),
    Solver(String),
    Divergence(String),
    Usage(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Io(_) => EXIT_IO,
            Failure::Validation(_) => EXIT_VALIDATION,
            Failure::Solver(_) => EXIT_SOLVER,
            Failure::Divergence(_) => EXIT_DIVERGENCE,
            Failure::Usage(_) => EXIT_USAGE,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Io(m)
            | Failure::Validation(m)
            | Failure::Solver(m)
            | Failure::Divergence(m)
            | Failure::Usage(m) => m,
        }
    }
}

impl From<RiccatiError> for Failure {
    fn from(e: RiccatiError) -> Self {
        Failure::Solver(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Divergence { .. } => Failure::Divergence(e.to_string()),
            SimError::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Solver(e.to_string()),
        }
    }
}

impl From<SocialError> for Failure {
    fn from(e: SocialError) -> Self {
        match e {
            SocialError::Sim(s) => s.into(),
            other => Failure::Solver(other.to_string()),
        }
    }
}

/// Everything that determines a run's numeric outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub spec_path: String,
    pub spec_sha256: String,
    pub out_dir: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    /// Resolved options including defaults, tolerances and simulation settings.
    pub options: serde_json::Value,
}

impl RunManifest {
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("plain data");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

struct Output {
    dir: PathBuf,
    hash: String,
}

impl Output {
    fn create(dir: &Path, manifest: &RunManifest) -> Result<Self, Failure> {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
        let out = Output {
            dir: dir.to_path_buf(),
            hash: manifest.hash(),
        };
        let mut body = serde_json::to_value(manifest).expect("plain data");
        body["manifest_hash"] = serde_json::json!(out.hash);
        out.json("manifest.json", body)?;
        Ok(out)
    }

    fn write(&self, name: &str, text: &str) -> Result<(), Failure> {
        let path = self.dir.join(name);
        std::fs::write(&path, text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
    }

    fn csv(&self, name: &str, body: &str) -> Result<(), Failure> {
        self.write(name, &format!("# manifest {}\n{body}", self.hash))
    }

    /// A CSV that records why its data could not be produced.
    fn failed_csv(&self, name: &str, header: &str, why: &str) -> Result<(), Failure> {
        let why = why.replace('\n', " ");
        self.write(name, &format!("# manifest {}\n# failed: {why}\n{header}\n", self.hash))
    }

    fn json(&self, name: &str, mut body: serde_json::Value) -> Result<(), Failure> {
        if let Some(obj) = body.as_object_mut() {
            obj.insert("manifest_hash".into(), serde_json::json!(self.hash));
        }
        let text = serde_json::to_string_pretty(&body).expect("plain data");
        self.write(name, &(text + "\n"))
    }
}

fn load(path: &Path) -> Result<(ProblemSpec, String), Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    let spec = ProblemSpec::from_json(&text)
        .and_then(|s| s.validated())
        .map_err(|e| Failure::Validation(e.to_string()))?;
    Ok((spec, hex::encode(Sha256::digest(&bytes))))
}

fn manifest(
    command: &str,
    spec_path: &Path,
    spec_sha256: String,
    out_dir: &Path,
    seed: Option<u64>,
    options: serde_json::Value,
) -> RunManifest {
    RunManifest {
        command: command.into(),
        spec_path: spec_path.display().to_string(),
        spec_sha256,
        out_dir: out_dir.display().to_string(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        seed,
        options,
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
/// Diagnostics go to stderr; a one-line summary goes to stdout.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(summary) => {
            println!("{summary}");
            EXIT_OK
        }
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<String, Failure> {
    let out_dir = &cli.out_dir;
    match &cli.command {
        Command::Validate { spec } => {
            let (s, _) = load(spec)?;
            Ok(format!(
                "{}: valid (n = {}, r = {}, N = {}, horizon {:?})",
                spec.display(),
                s.state_dim,
                s.control_dim,
                s.agents,
                s.horizon
            ))
        }
        Command::SolveFinite { spec, agents, tol } => {
            let (s, sha) = load(spec)?;
            let t = tol.tolerance()?;
            let opts = serde_json::json!({ "N": agents, "tolerance": tol });
            let out = Output::create(out_dir, &manifest("solve-finite", spec, sha, out_dir, None, opts))?;
            let sol = match agents {
                Some(n) => solve_finite_n(&s.with_agents(*n), &t)?,
                None => solve_finite_limit(&s, &t)?,
            };
            out.csv("solve_finite.csv", &sol.to_csv())?;
            Ok(format!("residual {:.3e}; wrote solve_finite.csv", sol.residual))
        }
        Command::SolveInfinite { spec, t_sim, tol } => {
            let (s, sha) = load(spec)?;
            let t = tol.tolerance()?;
            let opts = serde_json::json!({ "T": t_sim, "tolerance": tol });
            let out = Output::create(out_dir, &manifest("solve-infinite", spec, sha, out_dir, None, opts))?;
            let sol = solve_are(&s, &t, *t_sim)?;
            out.csv("solve_infinite.csv", &sol.to_csv())?;
            out.json(
                "solve_infinite.json",
                serde_json::json!({
                    "P": matrix_rows(&sol.p),
                    "Pi": matrix_rows(&sol.pi),
                    "upsilon": matrix_rows(&sol.upsilon),
                    "residual_P": sol.residual_p,
                    "residual_Pi": sol.residual_pi,
                    "P_source": sol.p_source,
                    "P_stabilizing": sol.p_stabilizing,
                    "mean_closed_loop": sol.mean_closed_loop,
                }),
            )?;
            Ok(format!(
                "P residual {:.3e}, Pi residual {:.3e}; wrote solve_infinite.csv, solve_infinite.json",
                sol.residual_p, sol.residual_pi
            ))
        }
        Command::Check { spec, tol } => {
            let (s, sha) = load(spec)?;
            let t = tol.tolerance()?;
            let opts = serde_json::json!({ "tolerance": tol });
            let out = Output::create(out_dir, &manifest("check", spec, sha, out_dir, None, opts))?;
            let rep = check(&s, &t).map_err(|e| Failure::Solver(e.to_string()))?;
            out.json("check.json", serde_json::to_value(&rep).expect("plain data"))?;
            Ok(format!(
                "riccati {} stabilizability {} agree {}; wrote check.json",
                rep.verdicts.via_riccati, rep.verdicts.via_stabilizability, rep.verdicts.agree
            ))
        }
        Command::Simulate { spec, sim, paths, tol } => {
            let (s, sha) = load(spec)?;
            let t = tol.tolerance()?;
            let mut cfg = sim.config(&s)?;
            cfg.record_paths = *paths;
            let n = sim.agents.unwrap_or(s.agents);
            let opts = serde_json::json!({ "N": n, "sim": cfg, "tolerance": tol });
            let out = Output::create(
                out_dir,
                &manifest("simulate", spec, sha, out_dir, Some(cfg.seed), opts),
            )?;
            let law = decentralized_law(&s, cfg.t_sim, &t)?;
            let res = simulate_population(&s.with_agents(n), &law, &cfg)?;
            out.json("simulate.json", res.summary_json())?;
            if let Some(p) = &res.paths {
                out.csv("paths.csv", &p.to_csv())?;
                out.csv("average.csv", &p.average_csv())?;
            }
            Ok(format!(
                "cost per agent {:.6e} ± {:.1e}; wrote simulate.json",
                res.cost_per_agent.mean, res.cost_per_agent.se
            ))
        }
        Command::Gap { spec, n_list, sim, tol } => {
            let (s, sha) = load(spec)?;
            let t = tol.tolerance()?;
            let cfg = sim.config(&s)?;
            let opts = serde_json::json!({ "N_list": n_list, "sim": cfg, "tolerance": tol });
            let out = Output::create(out_dir, &manifest("gap", spec, sha, out_dir, Some(cfg.seed), opts))?;
            let curve = gap_curve(&s, n_list, &cfg, &t)?;
            out.csv("gap.csv", &curve.to_csv())?;
            out.json("gap.json", serde_json::to_value(&curve).expect("plain data"))?;
            Ok(format!(
                "log-log slope over N >= 5: {}; wrote gap.csv, gap.json",
                curve.log_slope(5).map_or("n/a".into(), |v| format!("{v:.3}"))
            ))
        }
        Command::Value { spec, t_sim, tol } => {
            let (s, sha) = load(spec)?;
            let t = tol.tolerance()?;
            let opts = serde_json::json!({ "T": t_sim, "tolerance": tol });
            let out = Output::create(out_dir, &manifest("value", spec, sha, out_dir, None, opts))?;
            let v = value_of(&s, *t_sim, &t)?;
            out.json("value.json", v.clone())?;
            Ok(format!("value {}; wrote value.json", v["value"]))
        }
        Command::ReproducePaper {
            spec,
            seed,
            dt,
            t_sim,
            gap_t,
            gap_h,
            n_list,
            gap_reps,
            tol,
        } => {
            let (s, sha) = load(spec)?;
            let t = tol.tolerance()?;
            let opts = serde_json::json!({
                "dt": dt, "T": t_sim, "gap_T": gap_t, "gap_H": gap_h,
                "N_list": n_list, "gap_reps": gap_reps, "tolerance": tol,
            });
            let out = Output::create(
                out_dir,
                &manifest("reproduce-paper", spec, sha, out_dir, Some(*seed), opts),
            )?;
            reproduce(&out, &s, *seed, *dt, *t_sim, (*gap_t, *gap_h), n_list, *gap_reps, &t)
        }
    }
}

fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn value_of(spec: &ProblemSpec, t_sim: f64, tol: &Tolerance) -> Result<serde_json::Value, Failure> {
    let sol = solve_are(spec, tol, t_sim)?;
    Ok(asymptotic_value(spec, &sol)?.to_json())
}

/// The infinite-horizon spec recast on `[0, T]` with terminal weight `hI` and `Γ₀ = Γ`.
fn finite_variant(spec: &ProblemSpec, t: f64, h: f64) -> ProblemSpec {
    let n = spec.state_dim;
    let mut s = spec.clone();
    if spec.horizon == Horizon::Infinite {
        s.horizon = Horizon::Finite(t);
        s.h = Matrix::identity(n, n) * h;
        s.gamma0 = s.gamma.clone();
    }
    s
}

#[allow(clippy::too_many_arguments)]
fn reproduce(
    out: &Output,
    spec: &ProblemSpec,
    seed: u64,
    dt: f64,
    t_sim: f64,
    (gap_t, gap_h): (f64, f64),
    n_list: &[usize],
    gap_reps: usize,
    tol: &Tolerance,
) -> Result<String, Failure> {
    let mut notes = Vec::new();

    match check(spec, tol) {
        Ok(rep) => out.json("check.json", serde_json::to_value(&rep).expect("plain data"))?,
        Err(e) => {
            notes.push("check failed");
            out.json("check.json", serde_json::json!({ "failed": e.to_string() }))?
        }
    }

    let t_fig = resolve_t(spec, None, t_sim)?;
    let mut cfg = SimConfig::new(dt, t_fig, 1, seed);
    cfg.record_paths = true;
    let figs = decentralized_law(spec, t_fig, tol)
        .map_err(Failure::from)
        .and_then(|law| simulate_population(spec, &law, &cfg).map_err(Failure::from));
    match figs.as_ref().map(|r| r.paths.as_ref()) {
        Ok(Some(p)) => {
            out.csv("fig1.csv", &p.to_csv())?;
            out.csv("fig2.csv", &p.average_csv())?;
        }
        Ok(None) => unreachable!("paths are recorded"),
        Err(e) => {
            notes.push("trajectories failed");
            out.failed_csv("fig1.csv", "t,agent", e.message())?;
            out.failed_csv("fig2.csv", "t", e.message())?;
        }
    }

    let finite = finite_variant(spec, gap_t, gap_h);
    let t_gap = resolve_t(&finite, None, gap_t)?;
    let mut gcfg = SimConfig::new(dt, t_gap, gap_reps, seed);
    gcfg.antithetic = gap_reps.is_multiple_of(2);
    match gap_curve(&finite, n_list, &gcfg, tol) {
        Ok(curve) => {
            let mut body = curve.to_csv();
            if let Some(slope) = curve.log_slope(5) {
                writeln!(body, "# log-log slope over N >= 5: {slope:.6}").unwrap();
            }
            out.csv("fig3.csv", &body)?;
        }
        Err(e) => {
            notes.push("gap curve failed");
            out.failed_csv(
                "fig3.csv",
                "N,decentralized,centralized,epsilon,stderr,exact_epsilon",
                &e.to_string(),
            )?;
        }
    }

    match value_of(spec, 40.0, tol) {
        Ok(v) => out.json("value.json", v)?,
        Err(e) => {
            notes.push("value failed");
            out.json("value.json", serde_json::json!({ "failed": e.message() }))?
        }
    }

    let status = if notes.is_empty() { "complete".to_string() } else { notes.join(", ") };
    Ok(format!("reproduce-paper: {status}; wrote check.json, fig1.csv, fig2.csv, fig3.csv, value.json"))
}

/// Reads a CSV written by this tool: skips `#` lines, returns the header and numeric rows.
pub fn read_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>), String> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or("missing header")?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| format!("row {}: {v:?}: {e}", i + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        if row.len() != header.len() {
            return Err(format!("row {} has {} fields, header has {}", i + 1, row.len(), header.len()));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

/// The manifest hash stamped on a CSV or JSON output.
pub fn manifest_hash_of(text: &str) -> Option<String> {
    if let Some(rest) = text.strip_prefix("# manifest ") {
        return rest.lines().next().map(str::to_string);
    }
    let v: serde_json::Value = serde_json::from_str(text).ok()?;
    v.get("manifest_hash")?.as_str().map(str::to_string)
}
