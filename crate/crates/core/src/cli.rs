//! Config-driven runner behind the `entropic-jko` binary.
//!
//! Every run writes into one output directory:
//!
//! | file | content |
//! |---|---|
//! | `manifest` | resolved config, version, status, timings (`key = value`) |
//! | `trajectory.csv` | `t, rho_0, …` one row per recorded state (flow, pde, compare) |
//! | `reference.csv` | PDE states at the JKO times (compare) |
//! | `compare.csv` | `t, l1_error` (compare) |
//! | `diagnostics.csv` | one row per proximal step (flow, compare) |
//! | `sweep.csv` | one row per `(α, τ)` cell (sweep) |
//! | `potentials.csv` | `node, mu, nu, phi, psi` (sinkhorn) |
//!
//! A configuration error leaves only `error.txt` behind. CSV files contain
//! no timings and print floats with 17 significant digits, so identical
//! configs give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};

use crate::analysis::{compare_trajectories, run_sweep, SweepPlan, SweepRow};
use crate::config::{Command, ExperimentConfig, RawConfig};
use crate::error::Error;
use crate::jko::{run_flow, Trajectory};
use crate::pde::solve_pde;
use crate::schrodinger::sinkhorn;

pub const ERROR_REPORT: &str = "error.txt";
pub const MANIFEST: &str = "manifest";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(Error),
    #[error("solver failed: {0}")]
    Solver(Error),
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Solver(_) => 2,
            Self::Io { .. } => 3,
        }
    }

    /// Sorts a library error by who is to blame: the input or the numerics.
    fn from_library(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::GridMismatch { .. }
            | Error::InvalidDensity(_)
            | Error::Unsupported(_) => Self::Config(e),
            _ => Self::Solver(e),
        }
    }
}

fn io_error(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One command line.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub command: Command,
    pub config: PathBuf,
    /// `key=value` overrides applied after the file.
    pub overrides: Vec<String>,
    /// Overrides `output.dir`.
    pub out: Option<PathBuf>,
}

fn resolve(inv: &Invocation, raw: &mut RawConfig) -> Result<ExperimentConfig, CliError> {
    for pair in &inv.overrides {
        raw.set_pair(pair).map_err(CliError::Config)?;
    }
    let base = inv.config.parent().unwrap_or(Path::new("."));
    let mut cfg = raw.resolve(inv.command, base).map_err(CliError::Config)?;
    if let Some(out) = &inv.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

/// Runs `inv`, returning the output directory. On a configuration error only
/// the error report is written.
pub fn run(inv: &Invocation) -> Result<PathBuf, CliError> {
    let text = fs::read_to_string(&inv.config).map_err(io_error(&inv.config));
    let mut raw = RawConfig::default();
    let resolved = text.and_then(|text| {
        raw = RawConfig::parse(&text).map_err(CliError::Config)?;
        resolve(inv, &mut raw)
    });
    let cfg = match resolved {
        Ok(cfg) => cfg,
        Err(e) => {
            let dir = inv
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from(raw.get("output.dir").unwrap_or("out")));
            // best effort: the original error is what matters
            if fs::create_dir_all(&dir).is_ok() {
                let _ = fs::write(dir.join(ERROR_REPORT), format!("{e}\n"));
            }
            return Err(e);
        }
    };
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(io_error(&dir))?;
    execute(&cfg, &dir)?;
    Ok(dir)
}

/// Results accumulated for the manifest.
struct Manifest {
    lines: Vec<(String, String)>,
}

impl Manifest {
    fn new(cfg: &ExperimentConfig) -> Self {
        let mut lines = vec![
            ("run.command".to_string(), cfg.command.name().to_string()),
            ("run.version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ];
        lines.extend(cfg.entries());
        Self { lines }
    }

    fn put(&mut self, key: &str, value: impl ToString) {
        self.lines.push((key.to_string(), value.to_string()));
    }

    fn write(&self, dir: &Path) -> Result<(), CliError> {
        let mut text = String::new();
        for (k, v) in &self.lines {
            let _ = writeln!(text, "{k} = {v}");
        }
        write_file(dir, MANIFEST, &text)
    }
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(io_error(&path))
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

/// `t, rho_0, …, rho_{N-1}` per recorded state.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let len = traj.states.first().map_or(0, |s| s.len());
    let mut text = String::from("t");
    for i in 0..len {
        let _ = write!(text, ",rho_{i}");
    }
    text.push('\n');
    for (t, state) in traj.times.iter().zip(&traj.states) {
        text.push_str(&float(*t));
        for v in state.values() {
            text.push(',');
            text.push_str(&float(*v));
        }
        text.push('\n');
    }
    text
}

pub const DIAGNOSTICS_HEADER: &str = "step,t,d_eps_sq,f_before,f_after,h_before,h_after,\
optimality_residual,inner_iterations,interaction_iterations,dissipation_slack,mass_correction";

pub fn diagnostics_csv(traj: &Trajectory) -> String {
    let mut text = format!("{DIAGNOSTICS_HEADER}\n");
    for (k, d) in traj.diagnostics.iter().enumerate() {
        let t = traj.times.get(k + 1).copied().unwrap_or(f64::NAN);
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            k + 1,
            float(t),
            float(d.d_eps_sq),
            float(d.f_before),
            float(d.f_after),
            float(d.h_before),
            float(d.h_after),
            float(d.optimality_residual),
            d.inner_iterations,
            d.interaction_iterations,
            float(d.dissipation_slack),
            float(d.mass_correction),
        );
    }
    text
}

pub const SWEEP_HEADER: &str =
    "alpha_target,tau,eps,alpha,n,steps,error,error_vs_alpha0,mean_inner_iterations";

/// Wall times are left out to keep the file reproducible.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut text = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{},{},{}",
            float(r.alpha_target),
            float(r.tau),
            float(r.eps),
            float(r.alpha),
            r.n,
            r.steps,
            float(r.error),
            float(r.error_vs_alpha0),
            float(r.mean_inner_iterations),
        );
    }
    text
}

/// Writes what a (possibly aborted) flow produced.
fn write_flow(dir: &Path, traj: &Trajectory) -> Result<(), CliError> {
    write_file(dir, "trajectory.csv", &trajectory_csv(traj))?;
    write_file(dir, "diagnostics.csv", &diagnostics_csv(traj))
}

fn execute(cfg: &ExperimentConfig, dir: &Path) -> Result<(), CliError> {
    let clock = Instant::now();
    let mut manifest = Manifest::new(cfg);
    let outcome = match cfg.command {
        Command::Flow => flow(cfg, dir, &mut manifest),
        Command::Pde => pde(cfg, dir, &mut manifest),
        Command::Compare => compare(cfg, dir, &mut manifest),
        Command::Sinkhorn => schrodinger(cfg, dir, &mut manifest),
        Command::Sweep => sweep(cfg, dir, &mut manifest),
    };
    manifest.put("timing.total_seconds", clock.elapsed().as_secs_f64());
    match &outcome {
        Ok(()) => manifest.put("run.status", "ok"),
        Err(e) => {
            manifest.put("run.status", "failed");
            manifest.put("run.error", e);
        }
    }
    manifest.write(dir)?;
    outcome
}

fn flow(cfg: &ExperimentConfig, dir: &Path, manifest: &mut Manifest) -> Result<(), CliError> {
    let grid = cfg.grid().map_err(CliError::Config)?;
    let (rho0, spec) = cfg.problem(&grid).map_err(CliError::Config)?;
    let jko = cfg.jko().expect("flow resolves a scheme");
    let clock = Instant::now();
    let result = run_flow(&rho0, &spec, &jko);
    manifest.put("timing.flow_seconds", clock.elapsed().as_secs_f64());
    match result {
        Ok(traj) => {
            info!("flow finished at t = {}", traj.final_time());
            write_flow(dir, &traj)
        }
        Err(aborted) => {
            warn!("{aborted}");
            write_flow(dir, &aborted.trajectory)?;
            Err(CliError::from_library(aborted.error))
        }
    }
}

fn pde(cfg: &ExperimentConfig, dir: &Path, manifest: &mut Manifest) -> Result<(), CliError> {
    let grid = cfg.grid().map_err(CliError::Config)?;
    let (rho0, spec) = cfg.problem(&grid).map_err(CliError::Config)?;
    let clock = Instant::now();
    let result = solve_pde(&rho0, &spec, &cfg.pde);
    manifest.put("timing.pde_seconds", clock.elapsed().as_secs_f64());
    match result {
        Ok(traj) => write_file(dir, "trajectory.csv", &trajectory_csv(&traj)),
        Err(aborted) => {
            write_file(dir, "trajectory.csv", &trajectory_csv(&aborted.trajectory))?;
            Err(CliError::from_library(aborted.error))
        }
    }
}

fn compare(cfg: &ExperimentConfig, dir: &Path, manifest: &mut Manifest) -> Result<(), CliError> {
    let grid = cfg.grid().map_err(CliError::Config)?;
    let (rho0, spec) = cfg.problem(&grid).map_err(CliError::Config)?;
    let jko = cfg.jko().expect("compare resolves a scheme");
    let clock = Instant::now();
    let flow = run_flow(&rho0, &spec, &jko);
    manifest.put("timing.flow_seconds", clock.elapsed().as_secs_f64());
    let flow = match flow {
        Ok(traj) => traj,
        Err(aborted) => {
            write_flow(dir, &aborted.trajectory)?;
            return Err(CliError::from_library(aborted.error));
        }
    };
    write_flow(dir, &flow)?;
    let clock = Instant::now();
    let reference = solve_pde(&rho0, &spec, &cfg.pde);
    manifest.put("timing.pde_seconds", clock.elapsed().as_secs_f64());
    let reference = match reference {
        Ok(traj) => traj,
        Err(aborted) => {
            write_file(dir, "reference.csv", &trajectory_csv(&aborted.trajectory))?;
            return Err(CliError::from_library(aborted.error));
        }
    };
    write_file(dir, "reference.csv", &trajectory_csv(&reference))?;
    let mut text = String::from("t,l1_error\n");
    let mut last = f64::NAN;
    for &t in flow.times.iter().filter(|t| **t <= reference.final_time() + 1e-12) {
        last = compare_trajectories(&flow, &reference, t).map_err(CliError::from_library)?;
        let _ = writeln!(text, "{},{}", float(t), float(last));
    }
    manifest.put("result.final_l1_error", last);
    write_file(dir, "compare.csv", &text)
}

fn schrodinger(
    cfg: &ExperimentConfig,
    dir: &Path,
    manifest: &mut Manifest,
) -> Result<(), CliError> {
    let settings = cfg.sinkhorn.as_ref().expect("sinkhorn resolves its settings");
    let grid = cfg.grid().map_err(CliError::Config)?;
    let mu = cfg.density(&cfg.initial, &grid).map_err(CliError::Config)?;
    let nu = cfg.density(&settings.target, &grid).map_err(CliError::Config)?;
    let clock = Instant::now();
    let (pot, report) = sinkhorn(&mu, &nu, settings.eps, settings.tol, settings.max_iter)
        .map_err(CliError::from_library)?;
    manifest.put("timing.sinkhorn_seconds", clock.elapsed().as_secs_f64());
    manifest.put("result.iterations", report.iterations);
    manifest.put("result.final_residual", report.final_residual);
    manifest.put("result.cost", report.cost);
    manifest.put("result.converged", report.converged);
    let mut text = String::from("node,mu,nu,phi,psi\n");
    for i in 0..grid.len() {
        let _ = writeln!(
            text,
            "{i},{},{},{},{}",
            float(mu.values()[i]),
            float(nu.values()[i]),
            float(pot.phi[i]),
            float(pot.psi[i]),
        );
    }
    write_file(dir, "potentials.csv", &text)?;
    if report.converged {
        Ok(())
    } else {
        Err(CliError::Solver(Error::NotConverged {
            solver: "sinkhorn",
            iterations: report.iterations,
            residual: report.final_residual,
        }))
    }
}

fn sweep(cfg: &ExperimentConfig, dir: &Path, manifest: &mut Manifest) -> Result<(), CliError> {
    let settings = cfg.sweep.as_ref().expect("sweep resolves its settings");
    let grid = cfg.grid().map_err(CliError::Config)?;
    let plan = SweepPlan {
        rules: settings.rules(),
        taus: settings.taus.clone(),
        t_end: cfg.pde.t_end,
        solver: cfg.solver.clone(),
        pde: cfg.pde.clone(),
        refinement: settings.refinement,
    };
    let clock = Instant::now();
    let rows = run_sweep(|g: &crate::Grid| cfg.problem(g), &grid, &plan)
        .map_err(CliError::from_library)?;
    manifest.put("timing.sweep_seconds", clock.elapsed().as_secs_f64());
    for r in &rows {
        manifest.put(
            &format!("timing.cell.alpha={}.tau={}", r.alpha_target, r.tau),
            r.wall_time,
        );
    }
    write_file(dir, "sweep.csv", &sweep_csv(&rows))
}
