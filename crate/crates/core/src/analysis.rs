//! Distances between densities, trajectory comparison and `(τ, ε)` sweeps
//! against the finite-volume reference.

use std::time::Instant;

use rayon::prelude::*;

use crate::energy::EnergySpec;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::jko::{run_flow, JkoConfig, Trajectory};
use crate::measure::GridMeasure;
use crate::pde::{solve_pde, PdeConfig};

/// Fraction of both masses the 1D Wasserstein oracle requires inside a
/// common half-period window.
pub const LOCALIZATION_MASS: f64 = 0.999;

/// `(1/N) Σ |a_i - b_i|`.
pub fn l1_distance(a: &GridMeasure, b: &GridMeasure) -> Result<f64> {
    a.same_grid(b)?;
    Ok(a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        * a.grid().weight())
}

/// Squared Wasserstein distance of two localized 1D densities, each node
/// value treated as an atom at the node.
///
/// Both measures must put [`LOCALIZATION_MASS`] of their mass in a common
/// window of half the period; the line quantile formula is then applied
/// with coordinates unwrapped around the window center.
pub fn wasserstein2_1d(mu: &GridMeasure, nu: &GridMeasure) -> Result<f64> {
    mu.same_grid(nu)?;
    let grid = mu.grid();
    if grid.dim() != 1 {
        return Err(Error::Unsupported(
            "the quantile Wasserstein oracle is one-dimensional".into(),
        ));
    }
    let n = grid.n();
    let w = grid.weight();
    let half = n / 2;
    let start = (0..n)
        .find(|&s| {
            let inside = |m: &GridMeasure| (0..half).map(|j| m.values()[(s + j) % n]).sum::<f64>() * w;
            inside(mu) >= LOCALIZATION_MASS && inside(nu) >= LOCALIZATION_MASS
        })
        .ok_or_else(|| {
            Error::Unsupported(format!(
                "measures are not localized in a common half-period window \
                 (need {LOCALIZATION_MASS} of each mass); the line quantile formula \
                 does not apply to spread-out measures on the circle"
            ))
        })?;

    // nodes in order of the unwrapped coordinate, from window center - 1/2
    let center = start + half / 2;
    let first = (center + n - half) % n;
    let positions: Vec<f64> = (0..n).map(|j| (j as f64 - half as f64) * grid.spacing()).collect();
    let masses = |m: &GridMeasure| -> Vec<f64> {
        (0..n).map(|j| m.values()[(first + j) % n] * w).collect()
    };
    let (a, b) = (masses(mu), masses(nu));

    let (mut i, mut j) = (0, 0);
    let (mut left_a, mut left_b) = (a[0], b[0]);
    let mut total = 0.0;
    while i < n && j < n {
        let q = left_a.min(left_b);
        let d = positions[i] - positions[j];
        total += q * d * d;
        left_a -= q;
        left_b -= q;
        if left_a <= left_b {
            i += 1;
            if i < n {
                left_a += a[i];
            }
        } else {
            j += 1;
            if j < n {
                left_b += b[j];
            }
        }
    }
    Ok(total)
}

/// Index of the snapshot nearest to `t`, ties going to the later one.
fn nearest(traj: &Trajectory, t: f64) -> Result<usize> {
    let (first, last) = match (traj.times.first(), traj.times.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return Err(Error::Config("empty trajectory".into())),
    };
    let slack = 1e-12 * last.abs().max(1.0);
    if !(t >= first - slack && t <= last + slack) {
        return Err(Error::Config(format!(
            "time {t} outside the trajectory horizon [{first}, {last}]"
        )));
    }
    let mut best = 0;
    for (k, &tk) in traj.times.iter().enumerate() {
        if (tk - t).abs() <= (traj.times[best] - t).abs() + slack {
            best = k;
        }
    }
    Ok(best)
}

/// L1 distance between the snapshots of `a` and `b` nearest to `t`.
pub fn compare_trajectories(a: &Trajectory, b: &Trajectory, t: f64) -> Result<f64> {
    let ia = nearest(a, t)?;
    let ib = nearest(b, t)?;
    l1_distance(&a.states[ia], &b.states[ib])
}

/// How `ε` follows `τ` along a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonRule {
    /// `ε = α τ`.
    Linear { alpha: f64 },
    /// `ε = τ^p`; with `p > 1` the ratio `ε/τ` tends to 0.
    Power { exponent: f64 },
}

impl EpsilonRule {
    pub fn eps(&self, tau: f64) -> f64 {
        match *self {
            Self::Linear { alpha } => alpha * tau,
            Self::Power { exponent } => tau.powf(exponent),
        }
    }

    /// Limit of `ε/τ` as `τ → 0`, which selects the reference PDE.
    pub fn limit_alpha(&self) -> f64 {
        match *self {
            Self::Linear { alpha } => alpha,
            Self::Power { exponent } if exponent > 1.0 => 0.0,
            Self::Power { exponent } if exponent == 1.0 => 1.0,
            Self::Power { .. } => f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Linear { alpha } if alpha > 0.0 && alpha.is_finite() => Ok(()),
            Self::Power { exponent } if exponent >= 1.0 && exponent.is_finite() => Ok(()),
            rule => Err(Error::Config(format!(
                "{rule:?}: need alpha > 0 (use a power rule for the zero limit) or exponent >= 1"
            ))),
        }
    }
}

/// One `(rule, τ)` cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// Limit of `ε/τ`, i.e. the `α` of the reference PDE.
    pub alpha_target: f64,
    pub tau: f64,
    pub eps: f64,
    /// `eps / tau` at this cell.
    pub alpha: f64,
    pub n: usize,
    pub steps: usize,
    /// Terminal L1 error against the reference for `alpha_target`.
    pub error: f64,
    /// Terminal L1 error against the reference without the extra diffusion.
    pub error_vs_alpha0: f64,
    pub mean_inner_iterations: f64,
    /// Seconds spent in the flow; not part of the deterministic output.
    pub wall_time: f64,
}

/// Everything a sweep needs besides the problem itself.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub rules: Vec<EpsilonRule>,
    pub taus: Vec<f64>,
    pub t_end: f64,
    /// Solver tolerances; `tau`, `eps` and `n_steps` are set per cell.
    pub solver: JkoConfig,
    /// Reference settings; `alpha` and `t_end` are set per reference.
    pub pde: PdeConfig,
    /// Reference resolution factor per axis.
    pub refinement: usize,
}

impl SweepPlan {
    pub fn new(rules: Vec<EpsilonRule>, taus: Vec<f64>, t_end: f64) -> Self {
        Self {
            rules,
            taus,
            t_end,
            solver: JkoConfig::new(1.0, 1.0, 1),
            pde: PdeConfig::new(0.0, t_end),
            refinement: 2,
        }
    }

    fn steps(&self, tau: f64) -> Result<usize> {
        if !(tau > 0.0) {
            return Err(Error::Config(format!("sweep tau must be positive, got {tau}")));
        }
        let steps = (self.t_end / tau).round();
        if steps < 1.0 || (steps * tau - self.t_end).abs() > 1e-9 * self.t_end {
            return Err(Error::Config(format!(
                "t_end {} is not a whole number of steps of {tau}",
                self.t_end
            )));
        }
        Ok(steps as usize)
    }
}

/// Reference state at `t_end` for `alpha`, solved on a grid refined by
/// `plan.refinement` and sampled back on the nodes of `grid`.
pub fn reference_solution<P>(problem: &P, grid: &Grid, alpha: f64, plan: &SweepPlan) -> Result<GridMeasure>
where
    P: Fn(&Grid) -> Result<(GridMeasure, EnergySpec)>,
{
    let r = plan.refinement.max(1);
    let fine = Grid::new(grid.dim(), grid.n() * r)?;
    let (rho0, spec) = problem(&fine)?;
    let cfg = PdeConfig {
        alpha,
        t_end: plan.t_end,
        snapshot_times: Vec::new(),
        ..plan.pde.clone()
    };
    let traj = solve_pde(&rho0, &spec, &cfg).map_err(|aborted| aborted.error)?;
    let state = traj.last().expect("non-empty").values();
    let sampled = (0..grid.len())
        .map(|i| {
            let [a, b] = grid.unravel(i);
            let idx = if grid.dim() == 1 { [a * r, 0] } else { [a * r, b * r] };
            state[fine.ravel(idx)]
        })
        .collect();
    GridMeasure::new(grid, sampled)
}

/// Runs every `(rule, τ)` cell of `plan` on `grid` and compares the JKO state
/// at `t_end` with the reference for the rule's limit `α`. Rows come out
/// rule-major in the order given, whatever the execution order.
pub fn run_sweep<P>(problem: P, grid: &Grid, plan: &SweepPlan) -> Result<Vec<SweepRow>>
where
    P: Fn(&Grid) -> Result<(GridMeasure, EnergySpec)> + Sync,
{
    if plan.taus.is_empty() || plan.rules.is_empty() {
        return Ok(Vec::new());
    }
    for rule in &plan.rules {
        rule.validate()?;
    }
    let mut alphas: Vec<f64> = plan.rules.iter().map(EpsilonRule::limit_alpha).collect();
    alphas.push(0.0);
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let references: Vec<(f64, GridMeasure)> = alphas
        .par_iter()
        .map(|&alpha| Ok((alpha, reference_solution(&problem, grid, alpha, plan)?)))
        .collect::<Result<_>>()?;
    let reference = |alpha: f64| {
        &references
            .iter()
            .find(|(a, _)| *a == alpha)
            .expect("every limit has a reference")
            .1
    };

    let cells: Vec<(EpsilonRule, f64)> = plan
        .rules
        .iter()
        .flat_map(|rule| plan.taus.iter().map(move |&tau| (*rule, tau)))
        .collect();
    cells
        .par_iter()
        .map(|&(rule, tau)| {
            let steps = plan.steps(tau)?;
            let eps = rule.eps(tau);
            let cfg = JkoConfig {
                tau,
                eps,
                n_steps: steps,
                ..plan.solver.clone()
            };
            let (rho0, spec) = problem(grid)?;
            let clock = Instant::now();
            let traj = run_flow(&rho0, &spec, &cfg).map_err(|aborted| aborted.error)?;
            let wall_time = clock.elapsed().as_secs_f64();
            let last = traj.last().expect("non-empty");
            let alpha_target = rule.limit_alpha();
            let inner: usize = traj.diagnostics.iter().map(|d| d.inner_iterations).sum();
            Ok(SweepRow {
                alpha_target,
                tau,
                eps,
                alpha: eps / tau,
                n: grid.n(),
                steps,
                error: l1_distance(last, reference(alpha_target))?,
                error_vs_alpha0: l1_distance(last, reference(0.0))?,
                mean_inner_iterations: inner as f64 / steps as f64,
                wall_time,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::InternalEnergy;
    use crate::jko::StepDiagnostics;
    use std::f64::consts::PI;

    fn bump(grid: &Grid, center: f64, width: f64) -> GridMeasure {
        GridMeasure::from_fn(grid, |x| {
            let mut d = (x[0] - center).rem_euclid(1.0);
            if d > 0.5 {
                d -= 1.0;
            }
            (-d * d / (2.0 * width * width)).exp()
        })
        .unwrap()
    }

    /// W² by integrating over all breakpoints of both CDFs, inverting each
    /// CDF by binary search at the midpoint of every quantile interval.
    fn quantile_oracle(a: &[f64], b: &[f64], x: &[f64]) -> f64 {
        let cdf = |m: &[f64]| -> Vec<f64> {
            let total: f64 = m.iter().sum();
            m.iter()
                .scan(0.0, |c, v| {
                    *c += v / total;
                    Some(*c)
                })
                .collect()
        };
        let (ca, cb) = (cdf(a), cdf(b));
        let mut breaks: Vec<f64> = ca.iter().chain(&cb).cloned().collect();
        breaks.push(0.0);
        breaks.sort_by(f64::total_cmp);
        let inverse = |c: &[f64], q: f64| x[c.partition_point(|&v| v < q).min(x.len() - 1)];
        breaks
            .windows(2)
            .filter(|p| p[1] > p[0])
            .map(|p| {
                let q = 0.5 * (p[0] + p[1]);
                let d = inverse(&ca, q) - inverse(&cb, q);
                (p[1] - p[0]) * d * d
            })
            .sum()
    }

    #[test]
    fn l1_cases() {
        let g = Grid::new(1, 8).unwrap();
        let a = GridMeasure::new(&g, vec![2.0, 2.0, 2.0, 2.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let b = GridMeasure::new(&g, vec![0.0, 0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 2.0]).unwrap();
        assert_eq!(l1_distance(&a, &a).unwrap(), 0.0);
        assert!((l1_distance(&a, &b).unwrap() - 2.0).abs() < 1e-15);
        let other = GridMeasure::uniform(&Grid::new(1, 16).unwrap());
        assert!(l1_distance(&a, &other).is_err());
    }

    #[test]
    fn wasserstein_translation() {
        let g = Grid::new(1, 500).unwrap();
        let mu = bump(&g, 0.3, 0.02);
        assert!(wasserstein2_1d(&mu, &mu).unwrap().abs() < 1e-15);
        for (shift, c) in [(0.1, 0.3), (0.2, 0.45), (0.1, 0.95)] {
            let a = bump(&g, c, 0.02);
            let b = bump(&g, c + shift, 0.02);
            let w2 = wasserstein2_1d(&a, &b).unwrap();
            assert!((w2 - shift * shift).abs() < 1e-6, "{c}: {w2}");
            assert!((wasserstein2_1d(&b, &a).unwrap() - w2).abs() < 1e-15);
        }
    }

    #[test]
    fn wasserstein_matches_quantile_oracle() {
        let g = Grid::new(1, 256).unwrap();
        let a = bump(&g, 0.35, 0.02);
        let b = bump(&g, 0.55, 0.04);
        let x: Vec<f64> = (0..256).map(|i| i as f64 / 256.0).collect();
        let oracle = quantile_oracle(a.values(), b.values(), &x);
        let w2 = wasserstein2_1d(&a, &b).unwrap();
        assert!((w2 - oracle).abs() < 1e-8, "{w2} vs {oracle}");
    }

    #[test]
    fn wasserstein_guard() {
        let g = Grid::new(1, 64).unwrap();
        assert!(matches!(
            wasserstein2_1d(&GridMeasure::uniform(&g), &bump(&g, 0.5, 0.02)),
            Err(Error::Unsupported(_))
        ));
        assert!(wasserstein2_1d(&bump(&g, 0.1, 0.02), &bump(&g, 0.7, 0.02)).is_err());
        let g2 = Grid::new(2, 8).unwrap();
        assert!(wasserstein2_1d(&GridMeasure::uniform(&g2), &GridMeasure::uniform(&g2)).is_err());
    }

    fn toy_trajectory(grid: &Grid, times: &[f64]) -> Trajectory {
        Trajectory {
            times: times.to_vec(),
            states: times
                .iter()
                .map(|t| bump(grid, 0.2 + t, 0.05))
                .collect(),
            diagnostics: Vec::<StepDiagnostics>::new(),
        }
    }

    #[test]
    fn trajectory_comparison() {
        let g = Grid::new(1, 64).unwrap();
        let a = toy_trajectory(&g, &[0.0, 0.1, 0.2]);
        assert_eq!(compare_trajectories(&a, &a, 0.13).unwrap(), 0.0);
        let b = toy_trajectory(&g, &[0.0, 0.05, 0.1, 0.15, 0.2]);
        // nearest to 0.15 in `a` is 0.1 or 0.2 (tie) → later one
        assert_eq!(nearest(&a, 0.15).unwrap(), 2);
        assert!(compare_trajectories(&a, &b, 0.15).unwrap() > 0.0);
        assert!(compare_trajectories(&a, &b, 0.3).is_err());
        assert!(compare_trajectories(&a, &b, -0.1).is_err());
    }

    #[test]
    fn epsilon_rules() {
        assert_eq!(EpsilonRule::Linear { alpha: 2.0 }.eps(0.01), 0.02);
        let p = EpsilonRule::Power { exponent: 1.5 };
        assert!((p.eps(0.01) - 1e-3).abs() < 1e-15);
        assert_eq!(p.limit_alpha(), 0.0);
        assert!(EpsilonRule::Linear { alpha: 0.0 }.validate().is_err());
        assert!(EpsilonRule::Power { exponent: 0.5 }.validate().is_err());
    }

    fn heat_problem(grid: &Grid) -> Result<(GridMeasure, EnergySpec)> {
        let rho0 = GridMeasure::from_fn(grid, |x| 1.0 + 0.5 * (2.0 * PI * x[0]).cos())?;
        Ok((rho0, EnergySpec::internal_only(grid, InternalEnergy::BoltzmannEntropy)))
    }

    #[test]
    fn sweep_rows_and_order() {
        let g = Grid::new(1, 128).unwrap();
        let plan = SweepPlan::new(
            vec![
                EpsilonRule::Linear { alpha: 1.0 },
                EpsilonRule::Power { exponent: 1.5 },
            ],
            vec![0.01, 0.005, 0.0025],
            0.04,
        );
        let rows = run_sweep(heat_problem, &g, &plan).unwrap();
        assert_eq!(rows.len(), 6);
        for (k, row) in rows.iter().enumerate() {
            assert_eq!(row.tau, plan.taus[k % 3]);
            assert_eq!(row.alpha, row.eps / row.tau);
            assert!(row.error.is_finite() && row.wall_time >= 0.0);
        }
        for chunk in rows.chunks(3) {
            assert!(chunk.windows(2).all(|p| p[1].error < p[0].error), "{chunk:?}");
        }
        assert!(rows[2].error_vs_alpha0 > 5.0 * rows[2].error, "{rows:?}");

        let again = run_sweep(heat_problem, &g, &plan).unwrap();
        for (a, b) in rows.iter().zip(&again) {
            assert_eq!(a.error.to_bits(), b.error.to_bits());
        }

        let empty = SweepPlan::new(vec![EpsilonRule::Linear { alpha: 1.0 }], vec![], 0.04);
        assert!(run_sweep(heat_problem, &g, &empty).unwrap().is_empty());
        let ragged = SweepPlan::new(vec![EpsilonRule::Linear { alpha: 1.0 }], vec![0.03], 0.04);
        assert!(run_sweep(heat_problem, &g, &ragged).is_err());
    }
}
