//! Static Schrödinger problem on the torus solved by log-domain Sinkhorn.
//!
//! The Gibbs kernel of the problem with parameter `ε` is the heat kernel
//! `σ_ε`, applied in the log domain by [`log_apply_heat`]. A coupling is never
//! materialized: the optimal plan is `γ(x, y) = a(x) σ_ε(y - x) b(y)` and all
//! quantities are expressed through the scalings `a = exp(ψ/λ)` and
//! `b = exp(φ/λ)`, which are stored as potentials.
//!
//! `λ` is the weight of the relative entropy. For the plain cost `λ = ε`;
//! inside a JKO step with time step `τ` it is `ε/τ` while the kernel time
//! stays `ε`.

use crate::error::{Error, Result};
use crate::grid::{spectral_gradient, Grid, GridFunction};
use crate::measure::GridMeasure;

/// Logarithm of the heat kernel on the nodes of one axis, `log κ_d` for
/// offsets `d = 0..n`, normalized so that `Σ_d κ_d = 1`.
fn log_kernel_1d(n: usize, t: f64) -> Vec<f64> {
    let images = 6.max((6.0 * t.sqrt()).ceil() as i64) + 1;
    let raw: Vec<f64> = (0..n)
        .map(|d| {
            let x = d as f64 / n as f64;
            log_sum_exp((-images..=images).map(|m| {
                let y = x + m as f64;
                -y * y / (2.0 * t)
            }))
        })
        .collect();
    let norm = log_sum_exp(raw.iter().cloned());
    raw.into_iter().map(|v| v - norm).collect()
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Kernel sum along one line of `n` values. `k` is the kernel over
/// `d = 0..n`; summing over offsets in a fixed order makes the result exactly
/// translation invariant (constant input, constant output).
fn log_convolve_line(line: &[f64], log_k: &[f64], k: &[f64], out: &mut [f64]) {
    let n = line.len();
    let m = line.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // two periods of the shifted exponentials, so g[i - d] is contiguous
    let g: Vec<f64> = line.iter().chain(line).map(|v| (v - m).exp()).collect();
    for (i, o) in out.iter_mut().enumerate() {
        let sum: f64 = k
            .iter()
            .zip(g[i + 1..i + n + 1].iter().rev())
            .map(|(a, b)| a * b)
            .sum();
        *o = if sum > 1e-250 {
            m + sum.ln()
        } else {
            // products underflow: redo this node with a per-node maximum
            log_sum_exp((0..n).map(|d| log_k[d] + line[(i + n - d) % n]))
        };
    }
}

/// `log(K_t exp(log_f))`, where `K_t` is the heat kernel sampled on the nodes
/// as a normalized periodic image sum and applied by direct summation.
///
/// The spectral [`crate::grid::apply_heat`] is exact on smooth data, but its absolute
/// round-off (about `1e-16` of the maximum) destroys the logarithm wherever
/// the output is many orders of magnitude below it, which is the normal
/// situation for Sinkhorn scalings at small `ε`. Sums of positive terms have
/// no cancellation, so this version is accurate in relative terms
/// everywhere. The kernel is separable, so 2D grids are done axis by axis.
pub fn log_apply_heat(grid: &Grid, t: f64, log_f: &[f64]) -> Result<GridFunction> {
    grid.check_len(log_f)?;
    if !(t >= 0.0) {
        return Err(Error::Config(format!("diffusion time must be >= 0, got {t}")));
    }
    if log_f.iter().any(|v| v.is_nan() || *v == f64::INFINITY)
        || log_f.iter().all(|v| *v == f64::NEG_INFINITY)
    {
        return Err(Error::InvalidDensity(
            "log-domain kernel input has no finite maximum".into(),
        ));
    }
    if t == 0.0 {
        return Ok(log_f.to_vec());
    }
    let n = grid.n();
    let log_k = log_kernel_1d(n, t);
    let k: Vec<f64> = log_k.iter().map(|v| v.exp()).collect();
    let mut current = log_f.to_vec();
    let mut line = vec![0.0; n];
    let mut out = vec![0.0; n];
    for axis in 0..grid.dim() {
        let lines = grid.len() / n;
        for l in 0..lines {
            let index = |j: usize| {
                if grid.dim() == 1 {
                    j
                } else if axis == 0 {
                    grid.ravel([j, l])
                } else {
                    grid.ravel([l, j])
                }
            };
            for (j, v) in line.iter_mut().enumerate() {
                *v = current[index(j)];
            }
            log_convolve_line(&line, &log_k, &k, &mut out);
            for (j, v) in out.iter().enumerate() {
                current[index(j)] = *v;
            }
        }
    }
    Ok(current)
}

fn quadrature_dot(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * grid.weight()
}

/// Schrödinger potentials `(φ, ψ)` with `log b = φ/λ` and `log a = ψ/λ`.
///
/// The gauge is `mean(φ) = 0`; `(φ + c, ψ - c)` describes the same plan.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPotentials {
    pub grid: Grid,
    pub phi: GridFunction,
    pub psi: GridFunction,
    /// Weight of the relative entropy (`ε`, or `ε/τ` inside a JKO step).
    pub lambda: f64,
    /// Time of the heat kernel realizing the Gibbs kernel (`ε`).
    pub kernel_time: f64,
    pub converged: bool,
}

impl DualPotentials {
    pub fn log_a(&self) -> GridFunction {
        self.psi.iter().map(|p| p / self.lambda).collect()
    }

    pub fn log_b(&self) -> GridFunction {
        self.phi.iter().map(|p| p / self.lambda).collect()
    }

    pub(crate) fn from_scalings(
        grid: &Grid,
        log_a: &[f64],
        log_b: &[f64],
        lambda: f64,
        kernel_time: f64,
        converged: bool,
    ) -> Self {
        Self {
            grid: grid.clone(),
            phi: log_b.iter().map(|v| v * lambda).collect(),
            psi: log_a.iter().map(|v| v * lambda).collect(),
            lambda,
            kernel_time,
            converged,
        }
    }

    /// Returns the potentials with `φ + c` and `ψ - c`.
    pub fn gauge_shifted(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.phi.iter_mut().for_each(|v| *v += c);
        out.psi.iter_mut().for_each(|v| *v -= c);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornReport {
    pub iterations: usize,
    /// L1 error of the first marginal after the last iteration; the second
    /// marginal is matched exactly by the last update.
    pub final_residual: f64,
    /// `D_ε²`, `NaN` when not converged.
    pub cost: f64,
    pub converged: bool,
}

fn check_regularization(eps: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Config(format!(
            "regularization must be positive, got {eps}"
        )));
    }
    Ok(())
}

fn log_values(m: &GridMeasure, name: &str) -> Result<GridFunction> {
    if !m.is_strictly_positive() {
        return Err(Error::InvalidDensity(format!(
            "{name} has a zero entry; the Schrödinger cost needs finite entropy"
        )));
    }
    Ok(m.values().iter().map(|v| v.ln()).collect())
}

/// L1 error `(1/N) Σ |a ⊙ K b - μ|` of the first marginal.
fn first_marginal_residual(log_a: &[f64], log_kb: &[f64], mu: &[f64], w: f64) -> f64 {
    log_a
        .iter()
        .zip(log_kb)
        .zip(mu)
        .map(|((a, kb), m)| ((a + kb).exp() - m).abs())
        .sum::<f64>()
        * w
}

/// Solves the static Schrödinger problem between `mu` and `nu` with
/// parameter `eps` by alternating the two marginal projections.
///
/// Non-convergence is not an error: the report carries `converged = false`
/// and the last residual.
pub fn sinkhorn(
    mu: &GridMeasure,
    nu: &GridMeasure,
    eps: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(DualPotentials, SinkhornReport)> {
    check_regularization(eps)?;
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    mu.same_grid(nu)?;
    let grid = mu.grid();
    let w = grid.weight();
    let log_mu = log_values(mu, "mu")?;
    let log_nu = log_values(nu, "nu")?;

    let mut log_a = vec![0.0; grid.len()];
    let mut log_b = vec![0.0; grid.len()];
    let mut log_kb = log_apply_heat(grid, eps, &log_b)?;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iter {
        iterations += 1;
        for i in 0..log_a.len() {
            log_a[i] = log_mu[i] - log_kb[i];
        }
        let log_ka = log_apply_heat(grid, eps, &log_a)?;
        for i in 0..log_b.len() {
            log_b[i] = log_nu[i] - log_ka[i];
        }
        let c = log_b.iter().sum::<f64>() * w;
        log_b.iter_mut().for_each(|v| *v -= c);
        log_a.iter_mut().for_each(|v| *v += c);

        log_kb = log_apply_heat(grid, eps, &log_b)?;
        residual = first_marginal_residual(&log_a, &log_kb, mu.values(), w);
        if !residual.is_finite() {
            return Err(Error::NotConverged {
                solver: "sinkhorn",
                iterations,
                residual,
            });
        }
        if residual <= tol {
            converged = true;
            break;
        }
    }

    let pot = DualPotentials::from_scalings(grid, &log_a, &log_b, eps, eps, converged);
    let cost = if converged {
        scaled_cost(&pot, mu, nu)
    } else {
        log::warn!("sinkhorn stopped after {iterations} iterations, residual {residual:e}");
        f64::NAN
    };
    Ok((
        pot,
        SinkhornReport {
            iterations,
            final_residual: residual,
            cost,
            converged,
        },
    ))
}

/// `2 ε H(γ|R_ε)` with `H(γ|R_ε) = <log a, μ> + <log b, ν>`.
fn scaled_cost(pot: &DualPotentials, mu: &GridMeasure, nu: &GridMeasure) -> f64 {
    let g = &pot.grid;
    let h = (quadrature_dot(g, &pot.psi, mu.values()) + quadrature_dot(g, &pot.phi, nu.values()))
        / pot.lambda;
    2.0 * pot.kernel_time * h
}

/// `D_ε(μ, ν)²` from converged potentials.
pub fn cost_from_potentials(
    pot: &DualPotentials,
    mu: &GridMeasure,
    nu: &GridMeasure,
    eps: f64,
) -> Result<f64> {
    check_regularization(eps)?;
    if !pot.converged {
        return Err(Error::Unsupported(
            "cost requested from unconverged potentials".into(),
        ));
    }
    if (eps - pot.kernel_time).abs() > 1e-14 * eps {
        return Err(Error::Config(format!(
            "potentials were computed with kernel time {}, not {eps}",
            pot.kernel_time
        )));
    }
    mu.same_grid(nu)?;
    pot.grid.check_len(mu.values())?;
    Ok(scaled_cost(pot, mu, nu))
}

/// L1 errors of both marginals of the plan described by `pot`.
pub fn marginal_residuals(
    pot: &DualPotentials,
    mu: &GridMeasure,
    nu: &GridMeasure,
) -> Result<(f64, f64)> {
    let g = &pot.grid;
    let log_a = pot.log_a();
    let log_b = pot.log_b();
    let log_kb = log_apply_heat(g, pot.kernel_time, &log_b)?;
    let log_ka = log_apply_heat(g, pot.kernel_time, &log_a)?;
    Ok((
        first_marginal_residual(&log_a, &log_kb, mu.values(), g.weight()),
        first_marginal_residual(&log_b, &log_ka, nu.values(), g.weight()),
    ))
}

/// Max-norm distance between `φ` and its image under the dual fixed-point map
/// `φ ↦ λ log ν - λ log K(μ / K exp(φ/λ))`.
pub fn fixed_point_residual(
    pot: &DualPotentials,
    mu: &GridMeasure,
    nu: &GridMeasure,
) -> Result<f64> {
    let g = &pot.grid;
    let lambda = pot.lambda;
    let log_kb = log_apply_heat(g, pot.kernel_time, &pot.log_b())?;
    let inner: Vec<f64> = mu
        .values()
        .iter()
        .zip(&log_kb)
        .map(|(m, kb)| m.ln() - kb)
        .collect();
    let outer = log_apply_heat(g, pot.kernel_time, &inner)?;
    Ok(pot
        .phi
        .iter()
        .zip(nu.values())
        .zip(&outer)
        .map(|((phi, n), o)| (phi - lambda * (n.ln() - o)).abs())
        .fold(0.0, f64::max))
}

fn check_fraction(s: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Config(format!(
            "interpolation fraction must lie in [0, 1], got {s}"
        )));
    }
    Ok(())
}

/// Entropic interpolation `ρ_s = (K_{εs} a) ⊙ (K_{ε(1-s)} b)` between the two
/// marginals of the plan. Returns the renormalized density and its mean
/// before renormalization.
pub fn entropic_interpolation(pot: &DualPotentials, s: f64) -> Result<(GridMeasure, f64)> {
    check_fraction(s)?;
    let g = &pot.grid;
    let t = pot.kernel_time;
    let left = log_apply_heat(g, t * s, &pot.log_a())?;
    let right = log_apply_heat(g, t * (1.0 - s), &pot.log_b())?;
    let values: Vec<f64> = left.iter().zip(&right).map(|(l, r)| (l + r).exp()).collect();
    let (measure, mass) = GridMeasure::normalized(g, values)?;
    let correction = (mass - 1.0).abs();
    if correction > 1e-8 {
        log::warn!("entropic interpolation at s = {s} renormalized by {correction:e}");
    } else {
        log::debug!("entropic interpolation at s = {s} renormalized by {correction:e}");
    }
    Ok((measure, mass))
}

/// Forward velocity `∇φ(s)` of the entropic interpolation, with
/// `φ(s) = λ log K_{ε(1-s)} b`.
pub fn forward_velocity(pot: &DualPotentials, s: f64) -> Result<Vec<GridFunction>> {
    check_fraction(s)?;
    let g = &pot.grid;
    let log_kb = log_apply_heat(g, pot.kernel_time * (1.0 - s), &pot.log_b())?;
    let phi_s: Vec<f64> = log_kb.iter().map(|v| pot.lambda * v).collect();
    spectral_gradient(g, &phi_s)
}
