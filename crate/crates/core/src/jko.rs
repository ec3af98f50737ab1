//! Entropic JKO steps
//! `ρ_{n+1} = argmin D_ε(ρ_n, ρ)² / 2τ + F(ρ)`.
//!
//! A step is solved as a generalized Sinkhorn iteration on the plan
//! `γ = a(x) σ_ε(y - x) b(y)`: the first marginal is projected onto `ρ_n`
//! exactly, and the second one is replaced by the pointwise minimizer of
//! `λ KL(ρ | s) + F` with `s = K_ε a` and `λ = ε/τ`. The heat kernel time is
//! `ε` and the relative-entropy weight is `ε/τ`. The interaction term is
//! frozen at a lagged density and updated in an outer loop.

use crate::energy::{entropy, eval_f, EnergySpec, InternalEnergy};
use crate::error::{Error, Result};
use crate::grid::{apply_heat, GridFunction};
use crate::measure::{GridMeasure, POSITIVITY_FLOOR};
use crate::schrodinger::{log_apply_heat, DualPotentials};

/// Parameters of the scheme and of its inner solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct JkoConfig {
    pub tau: f64,
    pub eps: f64,
    pub n_steps: usize,
    /// L1 tolerance on the first marginal of the generalized Sinkhorn loop.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    /// L1 tolerance between lagged and produced density in the interaction loop.
    pub interaction_tol: f64,
    pub interaction_max_iter: usize,
    /// Tolerance on `log ρ` of the pointwise root solve.
    pub newton_tol: f64,
}

impl JkoConfig {
    pub fn new(tau: f64, eps: f64, n_steps: usize) -> Self {
        Self {
            tau,
            eps,
            n_steps,
            inner_tol: 1e-10,
            inner_max_iter: 20_000,
            interaction_tol: 1e-10,
            interaction_max_iter: 500,
            newton_tol: 1e-14,
        }
    }

    /// Relative-entropy weight `ε/τ`.
    pub fn lambda(&self) -> f64 {
        self.eps / self.tau
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau", self.tau),
            ("eps", self.eps),
            ("inner_tol", self.inner_tol),
            ("interaction_tol", self.interaction_tol),
            ("newton_tol", self.newton_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.inner_max_iter == 0 || self.interaction_max_iter == 0 {
            return Err(Error::Config("iteration caps must be positive".into()));
        }
        Ok(())
    }
}

/// Per-step record of a proximal step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    /// `D_ε(ρ_n, ρ_{n+1})²`.
    pub d_eps_sq: f64,
    pub f_before: f64,
    pub f_after: f64,
    pub h_before: f64,
    pub h_after: f64,
    pub optimality_residual: f64,
    pub inner_iterations: usize,
    pub interaction_iterations: usize,
    /// `[ε H(ρ_n)/τ + F(ρ_n * σ_ε)] - [D_ε²/2τ + F(ρ_{n+1})]`: how much the
    /// step beats the heat-flow competitor.
    pub dissipation_slack: f64,
    /// `|mean - 1|` of the produced density before renormalization.
    pub mass_correction: f64,
}

/// Time-stamped sequence of densities, with per-step diagnostics when it
/// comes from the JKO scheme.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<GridMeasure>,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl Trajectory {
    pub fn last(&self) -> Option<&GridMeasure> {
        self.states.last()
    }

    pub fn final_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }
}

/// A flow stopped by a failing step; `trajectory` holds every state reached.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("flow aborted after {} steps: {error}", trajectory.diagnostics.len())]
pub struct FlowAborted {
    pub trajectory: Trajectory,
    pub error: Error,
}

const MAX_DOUBLINGS: usize = 200;
const MAX_NEWTON: usize = 200;

/// `f'(e^u)` written in terms of `u` to avoid overflow.
fn f_prime_log(internal: InternalEnergy, u: f64) -> f64 {
    match internal {
        InternalEnergy::Zero => 0.0,
        InternalEnergy::BoltzmannEntropy => u + 1.0,
        InternalEnergy::PowerLaw(m) => m / (m - 1.0) * ((m - 1.0) * u).exp(),
    }
}

/// `g'(e^u) = e^u f''(e^u)`.
fn g_prime_log(internal: InternalEnergy, u: f64) -> f64 {
    match internal {
        InternalEnergy::Zero => 0.0,
        InternalEnergy::BoltzmannEntropy => 1.0,
        InternalEnergy::PowerLaw(m) => m * ((m - 1.0) * u).exp(),
    }
}

/// Root in `u = log ρ` of `λ (u - log s) + v_eff + f'(e^u)`, which is
/// strictly increasing in `u`. On failure returns the last bracket and the
/// number of doublings.
fn solve_log_density(
    lambda: f64,
    log_s: f64,
    v_eff: f64,
    internal: InternalEnergy,
    tol: f64,
) -> std::result::Result<f64, (f64, f64, usize)> {
    let u0 = log_s - v_eff / lambda;
    if internal == InternalEnergy::Zero {
        return Ok(u0);
    }
    let h = |u: f64| lambda * (u - log_s) + v_eff + f_prime_log(internal, u);
    let dh = |u: f64| lambda + g_prime_log(internal, u);

    let h0 = h(u0);
    if h0 == 0.0 {
        return Ok(u0);
    }
    if h0.is_nan() {
        return Err((u0, u0, 0));
    }
    // h(u0) = f'(e^{u0}); walk away from u0 with a doubling step until the sign flips.
    let direction = if h0 > 0.0 { -1.0 } else { 1.0 };
    let mut step = std::f64::consts::LN_2;
    let mut near = u0;
    let mut far = u0 + direction * step;
    let mut doublings = 0;
    while h(far) * direction < 0.0 {
        doublings += 1;
        if doublings > MAX_DOUBLINGS || !far.is_finite() {
            return Err((near.min(far), near.max(far), doublings));
        }
        near = far;
        step *= 2.0;
        far = u0 + direction * step;
    }
    let (mut lo, mut hi) = if direction > 0.0 { (near, far) } else { (far, near) };

    let mut u = u0.clamp(lo, hi);
    for _ in 0..MAX_NEWTON {
        let value = h(u);
        if value == 0.0 {
            return Ok(u);
        }
        if value > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        let newton = u - value / dh(u);
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - u).abs() <= tol * u.abs().max(1.0) || hi - lo <= tol * u.abs().max(1.0) {
            return Ok(next);
        }
        u = next;
    }
    Err((lo, hi, doublings))
}

/// Density `ρ*` solving `λ log(ρ/s) + v_eff + f'(ρ) = 0`: the pointwise
/// minimizer of `λ KL(ρ|s) + v_eff ρ + f(ρ)`.
pub fn marginal_update_root(
    lambda: f64,
    s: f64,
    v_eff: f64,
    internal: InternalEnergy,
    tol: f64,
) -> Result<f64> {
    if !(lambda > 0.0) || !(s > 0.0) {
        return Err(Error::Config(format!(
            "root solve needs lambda > 0 and s > 0, got {lambda} and {s}"
        )));
    }
    solve_log_density(lambda, s.ln(), v_eff, internal, tol)
        .map(f64::exp)
        .map_err(|(lo, hi, doublings)| Error::RootBracket {
            node: 0,
            lo: lo.exp(),
            hi: hi.exp(),
            doublings,
        })
}

fn l1(a: &[f64], b: &[f64], w: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() * w
}

/// Population standard deviation, shifted by the first value so that a
/// constant vector gives exactly 0.
fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let shifted: Vec<f64> = values.iter().map(|v| v - values[0]).collect();
    let mean = shifted.iter().sum::<f64>() / n;
    (shifted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

fn range(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min
}

/// Relative spread of `ζ = φ + V + W * ρ + f'(ρ)`, which is constant at an
/// exact step.
///
/// The standard deviation of `ζ` is divided by the larger of the ranges of
/// `φ` and of `V + W * ρ + f'(ρ)`, the two parts that cancel each other.
pub fn optimality_residual(
    rho_next: &GridMeasure,
    phi: &[f64],
    spec: &EnergySpec,
) -> Result<f64> {
    let variation = crate::energy::first_variation(spec, rho_next)?;
    rho_next.grid().check_len(phi)?;
    let zeta: Vec<f64> = phi.iter().zip(&variation).map(|(p, d)| p + d).collect();
    let size = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let scale = range(phi).max(range(&variation))
        + 1e-8 * (1.0 + size(phi) + size(&variation));
    Ok(std_dev(&zeta) / scale)
}

/// One entropic JKO step from `mu`.
pub fn prox_step(
    mu: &GridMeasure,
    spec: &EnergySpec,
    cfg: &JkoConfig,
) -> Result<(GridMeasure, DualPotentials, StepDiagnostics)> {
    prox_step_from(mu, spec, cfg, None)
}

/// [`prox_step`] with an optional starting guess for `log b`.
pub(crate) fn prox_step_from(
    mu: &GridMeasure,
    spec: &EnergySpec,
    cfg: &JkoConfig,
    warm_log_b: Option<&[f64]>,
) -> Result<(GridMeasure, DualPotentials, StepDiagnostics)> {
    cfg.validate()?;
    let grid = spec.grid();
    mu.grid().check_len(spec.potential())?;
    if mu.grid() != grid {
        return Err(Error::GridMismatch {
            expected: grid.len(),
            got: mu.len(),
        });
    }
    let (mu, _) = mu.floored(POSITIVITY_FLOOR);
    let n = grid.len();
    let w = grid.weight();
    let lambda = cfg.lambda();
    let t = cfg.eps;
    let internal = spec.internal();
    let log_mu: Vec<f64> = mu.values().iter().map(|v| v.ln()).collect();

    let mut rho_lag: GridFunction = mu.values().to_vec();
    let effective = |lag: &[f64]| -> Result<GridFunction> {
        let wr = spec.interaction_field(lag)?;
        Ok(spec.potential().iter().zip(&wr).map(|(v, c)| v + c).collect())
    };
    let mut v_eff = effective(&rho_lag)?;

    let mut log_a = vec![0.0; n];
    let mut log_b = match warm_log_b {
        Some(b) if b.len() == n => b.to_vec(),
        _ => vec![0.0; n],
    };
    let mut log_rho = vec![0.0; n];
    let mut log_kb = log_apply_heat(grid, t, &log_b)?;
    let mut inner_total = 0;
    let mut outer = 0;
    let mut previous_gap = f64::INFINITY;
    let mut damping = 1.0;

    let rho = loop {
        outer += 1;
        let mut residual = f64::INFINITY;
        let mut inner = 0;
        while inner < cfg.inner_max_iter {
            inner += 1;
            for i in 0..n {
                log_a[i] = log_mu[i] - log_kb[i];
            }
            let log_s = log_apply_heat(grid, t, &log_a)?;
            for i in 0..n {
                let u = solve_log_density(lambda, log_s[i], v_eff[i], internal, cfg.newton_tol)
                    .map_err(|(lo, hi, doublings)| Error::RootBracket {
                        node: i,
                        lo: lo.exp(),
                        hi: hi.exp(),
                        doublings,
                    })?;
                log_rho[i] = u;
                log_b[i] = u - log_s[i];
            }
            log_kb = log_apply_heat(grid, t, &log_b)?;
            residual = log_a
                .iter()
                .zip(&log_kb)
                .zip(mu.values())
                .map(|((a, kb), m)| ((a + kb).exp() - m).abs())
                .sum::<f64>()
                * w;
            if !residual.is_finite() {
                break;
            }
            if residual <= cfg.inner_tol {
                break;
            }
        }
        inner_total += inner;
        if !(residual <= cfg.inner_tol) {
            return Err(Error::NotConverged {
                solver: "generalized sinkhorn",
                iterations: inner_total,
                residual,
            });
        }

        let rho: GridFunction = log_rho.iter().map(|u| u.exp()).collect();
        if !spec.has_interaction() {
            break rho;
        }
        let gap = l1(&rho, &rho_lag, w);
        if gap <= cfg.interaction_tol {
            break rho;
        }
        if outer >= cfg.interaction_max_iter {
            return Err(Error::NotConverged {
                solver: "interaction loop",
                iterations: outer,
                residual: gap,
            });
        }
        if gap > previous_gap {
            damping = 0.5;
        }
        previous_gap = gap;
        for (lag, r) in rho_lag.iter_mut().zip(&rho) {
            *lag += damping * (r - *lag);
        }
        v_eff = effective(&rho_lag)?;
    };

    let (next, mass) = GridMeasure::normalized(grid, rho.clone())?;
    let mass_correction = (mass - 1.0).abs();
    if mass_correction > 1e-8 {
        log::warn!("JKO step renormalized by {mass_correction:e}");
    } else {
        log::debug!("JKO step renormalized by {mass_correction:e}");
    }

    // The prox term fixes the additive constant of the scalings; the
    // returned potentials are shifted to mean(φ) = 0 afterwards, which leaves
    // the plan, the cost and the spread of φ + δF unchanged.
    let c = log_b.iter().sum::<f64>() * w;
    let potentials = DualPotentials::from_scalings(grid, &log_a, &log_b, lambda, t, true)
        .gauge_shifted(-c * lambda);
    let kl = (log_a.iter().zip(mu.values()).map(|(a, m)| a * m).sum::<f64>()
        + log_b.iter().zip(&rho).map(|(b, r)| b * r).sum::<f64>())
        * w;
    let d_eps_sq = 2.0 * t * kl;

    let f_before = eval_f(spec, &mu)?;
    let f_after = eval_f(spec, &next)?;
    let h_before = entropy(&mu);
    let h_after = entropy(&next);
    let smoothed = GridMeasure::new(grid, apply_heat(grid, t, mu.values())?)?;
    let competitor = lambda * h_before + eval_f(spec, &smoothed)?;
    let dissipation_slack = competitor - (d_eps_sq / (2.0 * cfg.tau) + f_after);
    let optimality_residual = optimality_residual(&next, &potentials.phi, spec)?;

    Ok((
        next,
        potentials,
        StepDiagnostics {
            d_eps_sq,
            f_before,
            f_after,
            h_before,
            h_after,
            optimality_residual,
            inner_iterations: inner_total,
            interaction_iterations: outer,
            dissipation_slack,
            mass_correction,
        },
    ))
}

/// Iterates [`prox_step`] `cfg.n_steps` times from `rho0`.
pub fn run_flow(
    rho0: &GridMeasure,
    spec: &EnergySpec,
    cfg: &JkoConfig,
) -> std::result::Result<Trajectory, FlowAborted> {
    let mut trajectory = Trajectory {
        times: vec![0.0],
        states: vec![rho0.clone()],
        diagnostics: Vec::with_capacity(cfg.n_steps),
    };
    let abort = |trajectory: Trajectory, error: Error| FlowAborted { trajectory, error };
    if let Err(e) = cfg.validate() {
        return Err(abort(trajectory, e));
    }
    match eval_f(spec, rho0) {
        Ok(f) if f.is_finite() => {}
        Ok(f) => {
            return Err(abort(
                trajectory,
                Error::InvalidDensity(format!("initial energy is {f}")),
            ))
        }
        Err(e) => return Err(abort(trajectory, e)),
    }

    let mut warm: Option<Vec<f64>> = None;
    for step in 1..=cfg.n_steps {
        let current = trajectory.states.last().expect("non-empty").clone();
        match prox_step_from(&current, spec, cfg, warm.as_deref()) {
            Ok((next, pot, diag)) => {
                log::debug!(
                    "step {step}: F = {:.6e}, D² = {:.6e}, {} inner iterations",
                    diag.f_after,
                    diag.d_eps_sq,
                    diag.inner_iterations
                );
                warm = Some(pot.log_b());
                // gauge-shifted, so only a starting guess
                trajectory.times.push(step as f64 * cfg.tau);
                trajectory.states.push(next);
                trajectory.diagnostics.push(diag);
            }
            Err(e) => return Err(abort(trajectory, e)),
        }
    }
    Ok(trajectory)
}
