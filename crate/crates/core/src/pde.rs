//! Explicit finite-volume reference solver for
//! `∂_t ρ - div(ρ ∇(V + W * ρ)) = Δ g(ρ) + (α/2) Δρ` on the torus.
//!
//! Advection is upwinded with the face average of the nodal velocity
//! `u = -∇(V + W * ρ)` (spectral gradient); diffusion is the central
//! difference of `G = g(ρ) + (α/2) ρ`. Fluxes telescope, so mass is
//! conserved exactly up to round-off.

use crate::energy::EnergySpec;
use crate::error::{Error, Result};
use crate::grid::{spectral_gradient, Grid, GridFunction};
use crate::jko::{FlowAborted, Trajectory};
use crate::measure::GridMeasure;

/// Smallest accepted time step.
pub const MIN_DT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PdeConfig {
    /// Coefficient of the extra `(α/2) Δρ` term.
    pub alpha: f64,
    pub t_end: f64,
    /// Fraction of the stability bound used as time step, in (0, 1].
    pub cfl_safety: f64,
    pub max_dt: f64,
    /// Times at which states are recorded besides `0` and `t_end`.
    pub snapshot_times: Vec<f64>,
}

impl PdeConfig {
    pub fn new(alpha: f64, t_end: f64) -> Self {
        Self {
            alpha,
            t_end,
            cfl_safety: 0.4,
            max_dt: f64::INFINITY,
            snapshot_times: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(Error::Config(format!("t_end must be positive, got {}", self.t_end)));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(Error::Config(format!(
                "cfl_safety must lie in (0, 1], got {}",
                self.cfl_safety
            )));
        }
        if !(self.max_dt > 0.0) {
            return Err(Error::Config(format!("max_dt must be positive, got {}", self.max_dt)));
        }
        if let Some(t) = self
            .snapshot_times
            .iter()
            .find(|t| !(**t >= 0.0) || **t > self.t_end)
        {
            return Err(Error::Config(format!("snapshot time {t} outside [0, t_end]")));
        }
        Ok(())
    }

    /// Sorted, deduplicated recording times, always containing `0` and `t_end`.
    pub fn recording_times(&self) -> Vec<f64> {
        let mut times = self.snapshot_times.clone();
        times.push(0.0);
        times.push(self.t_end);
        times.sort_by(f64::total_cmp);
        times.dedup();
        times
    }
}

/// Velocity field `-∇(V + W * ρ)`, one component per axis. Reuses `cached`
/// when there is no interaction.
fn velocity(
    spec: &EnergySpec,
    rho: &[f64],
    cached: Option<&Vec<GridFunction>>,
) -> Result<Vec<GridFunction>> {
    if let (Some(c), false) = (cached, spec.has_interaction()) {
        return Ok(c.clone());
    }
    let wr = spec.interaction_field(rho)?;
    let total: GridFunction = spec.potential().iter().zip(&wr).map(|(v, w)| v + w).collect();
    let mut grad = spectral_gradient(spec.grid(), &total)?;
    for component in grad.iter_mut() {
        component.iter_mut().for_each(|v| *v = -*v);
    }
    Ok(grad)
}

fn max_abs(field: &[GridFunction]) -> f64 {
    field
        .iter()
        .flat_map(|c| c.iter())
        .fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Largest diffusivity `max g'(ρ) + α/2`.
fn max_diffusivity(spec: &EnergySpec, rho: &[f64], alpha: f64) -> f64 {
    let internal = spec.internal();
    rho.iter().fold(0.0_f64, |m, &r| m.max(internal.g_prime(r))) + 0.5 * alpha
}

/// Time step `cfl · min(h / max|u|, h² / (2d · D))`.
fn stable_dt(grid: &Grid, u: &[GridFunction], diffusivity: f64, cfl: f64) -> f64 {
    let h = grid.spacing();
    let umax = max_abs(u);
    let advective = if umax > 0.0 { h / umax } else { f64::INFINITY };
    let diffusive = if diffusivity > 0.0 {
        h * h / (2.0 * grid.dim() as f64 * diffusivity)
    } else {
        f64::INFINITY
    };
    cfl * advective.min(diffusive)
}

/// Conservative update with a given velocity; returns the raw values.
fn update(
    grid: &Grid,
    spec: &EnergySpec,
    rho: &[f64],
    u: &[GridFunction],
    alpha: f64,
    dt: f64,
) -> GridFunction {
    let h = grid.spacing();
    let internal = spec.internal();
    let big_g: Vec<f64> = rho
        .iter()
        .map(|&r| internal.g_closed(r) + 0.5 * alpha * r)
        .collect();
    let mut out = rho.to_vec();
    for axis in 0..grid.dim() {
        let ua = &u[axis];
        // flux through the face between node i and its right neighbor
        let flux: Vec<f64> = (0..grid.len())
            .map(|i| {
                let j = grid.shifted(i, axis, 1);
                let uf = 0.5 * (ua[i] + ua[j]);
                let advective = if uf > 0.0 { uf * rho[i] } else { uf * rho[j] };
                advective - (big_g[j] - big_g[i]) / h
            })
            .collect();
        for i in 0..grid.len() {
            let left = grid.shifted(i, axis, -1);
            out[i] -= dt / h * (flux[i] - flux[left]);
        }
    }
    out
}

fn finish_step(grid: &Grid, raw: GridFunction, time: f64) -> Result<GridMeasure> {
    let max = raw.iter().cloned().fold(0.0_f64, f64::max);
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::BlowUp {
            time,
            reason: format!("non-finite value at node {i}"),
        });
    }
    let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -1e-12 * max.max(1.0) {
        return Err(Error::BlowUp {
            time,
            reason: format!("negative value {min:e}"),
        });
    }
    let clipped: GridFunction = raw.into_iter().map(|v| v.max(0.0)).collect();
    let (state, mass) = GridMeasure::normalized(grid, clipped)?;
    let correction = (mass - 1.0).abs();
    if correction > 1e-12 {
        log::warn!("finite-volume step renormalized by {correction:e} at t = {time}");
    } else {
        log::trace!("finite-volume step renormalized by {correction:e}");
    }
    Ok(state)
}

/// One explicit step of length `dt`. Fails if `dt` exceeds the positivity
/// bound `dt (max|u|/h + 2d D/h²) ≤ 1` for the current state.
pub fn pde_step(
    state: &GridMeasure,
    spec: &EnergySpec,
    alpha: f64,
    dt: f64,
) -> Result<GridMeasure> {
    state.grid().check_len(spec.potential())?;
    if !(dt > 0.0) || !(alpha >= 0.0) {
        return Err(Error::Config(format!(
            "pde step needs dt > 0 and alpha >= 0, got {dt} and {alpha}"
        )));
    }
    let grid = spec.grid();
    let rho = state.values();
    let u = velocity(spec, rho, None)?;
    let h = grid.spacing();
    let d = grid.dim() as f64;
    let rate = max_abs(&u) / h + 2.0 * d * max_diffusivity(spec, rho, alpha) / (h * h);
    if dt * rate > 1.0 + 1e-12 {
        return Err(Error::Cfl {
            dt,
            bound: 1.0 / rate,
        });
    }
    finish_step(grid, update(grid, spec, rho, &u, alpha, dt), dt)
}

/// Marches from `rho0` to `cfg.t_end`, landing exactly on every recording
/// time. On failure the error carries the states recorded so far.
pub fn solve_pde(
    rho0: &GridMeasure,
    spec: &EnergySpec,
    cfg: &PdeConfig,
) -> std::result::Result<Trajectory, FlowAborted> {
    let mut trajectory = Trajectory {
        times: vec![0.0],
        states: vec![rho0.clone()],
        diagnostics: Vec::new(),
    };
    let abort = |trajectory: Trajectory, error: Error| FlowAborted { trajectory, error };
    if let Err(e) = cfg
        .validate()
        .and_then(|_| rho0.grid().check_len(spec.potential()))
    {
        return Err(abort(trajectory, e));
    }
    let grid = spec.grid().clone();
    let cached = if spec.has_interaction() {
        None
    } else {
        match velocity(spec, rho0.values(), None) {
            Ok(u) => Some(u),
            Err(e) => return Err(abort(trajectory, e)),
        }
    };

    let mut state = rho0.clone();
    let mut t = 0.0;
    let mut steps = 0usize;
    for &target in cfg.recording_times().iter().skip(1) {
        while t < target {
            let u = match velocity(spec, state.values(), cached.as_ref()) {
                Ok(u) => u,
                Err(e) => return Err(abort(trajectory, e)),
            };
            let diffusivity = max_diffusivity(spec, state.values(), cfg.alpha);
            let mut dt = stable_dt(&grid, &u, diffusivity, cfg.cfl_safety).min(cfg.max_dt);
            if !dt.is_finite() {
                // nothing moves
                dt = target - t;
            }
            if dt < MIN_DT {
                return Err(abort(
                    trajectory,
                    Error::BlowUp {
                        time: t,
                        reason: format!("time step {dt:e} underflows"),
                    },
                ));
            }
            let landing = t + dt >= target * (1.0 - 1e-14);
            if landing {
                dt = target - t;
            }
            let raw = update(&grid, spec, state.values(), &u, cfg.alpha, dt);
            let next_t = if landing { target } else { t + dt };
            match finish_step(&grid, raw, next_t) {
                Ok(next) => state = next,
                Err(e) => return Err(abort(trajectory, e)),
            }
            t = next_t;
            steps += 1;
        }
        trajectory.times.push(target);
        trajectory.states.push(state.clone());
    }
    log::debug!("finite-volume solve reached t = {t} in {steps} steps");
    Ok(trajectory)
}
