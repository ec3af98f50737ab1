//! Independent oracles shared by the integration tests. Nothing here calls
//! the FFT paths or the Sinkhorn solvers of the library.

#![allow(dead_code)]

use std::f64::consts::PI;

use entropic_jko::energy::InternalEnergy;
use entropic_jko::{Grid, GridMeasure};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Periodic distance of two points of the unit circle.
pub fn circle_gap(x: f64, y: f64) -> f64 {
    let d = (x - y).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Wrapped Gaussian bump plus a constant floor, normalized.
pub fn bump(grid: &Grid, center: f64, width: f64, floor: f64) -> GridMeasure {
    GridMeasure::from_fn(grid, |x| {
        let d = circle_gap(x[0], center);
        (-d * d / (2.0 * width * width)).exp() + floor
    })
    .unwrap()
}

/// Random positive bump: center in [0, 1), width in [0.04, 0.12), floor in [0.05, 0.3).
pub fn random_bump(grid: &Grid, rng: &mut ChaCha8Rng) -> GridMeasure {
    let c = rng.gen_range(0.0..1.0);
    let w = rng.gen_range(0.04..0.12);
    let f = rng.gen_range(0.05..0.3);
    bump(grid, c, w, f)
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// `ρ * σ_t` in 1D by summing the periodized Gaussian directly over all
/// nodes and images (quadrature weight `1/n`).
pub fn heat_by_direct_sum(rho: &[f64], t: f64) -> Vec<f64> {
    let n = rho.len();
    let kernel = |d: f64| -> f64 {
        (-8..=8)
            .map(|m| {
                let y = d + m as f64;
                (-y * y / (2.0 * t)).exp()
            })
            .sum::<f64>()
            / (2.0 * PI * t).sqrt()
    };
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| kernel((i as f64 - j as f64) / n as f64) * rho[j])
                .sum::<f64>()
                / n as f64
        })
        .collect()
}

/// Row-normalized Gibbs kernel `κ(x_i, x_j)` on a 1D grid from the periodized
/// Gaussian of variance `eps`.
pub fn gibbs_matrix(n: usize, eps: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let row: Vec<f64> = (0..n)
                .map(|j| {
                    let d = (j as f64 - i as f64) / n as f64;
                    (-8..=8)
                        .map(|m| {
                            let y = d + m as f64;
                            (-y * y / (2.0 * eps)).exp()
                        })
                        .sum::<f64>()
                })
                .collect();
            let s: f64 = row.iter().sum();
            row.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Energy of a small 1D problem, written out with direct sums.
pub struct SmallEnergy {
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    pub internal: InternalEnergy,
}

impl SmallEnergy {
    /// `(W * ρ)_i = (1/n) Σ_j W(x_i - x_j) ρ_j`.
    pub fn interaction(&self, rho: &[f64]) -> Vec<f64> {
        let n = rho.len();
        (0..n)
            .map(|i| (0..n).map(|j| self.w[(i + n - j) % n] * rho[j]).sum::<f64>() / n as f64)
            .collect()
    }

    /// `V + W * ρ + f'(ρ)`.
    pub fn first_variation(&self, rho: &[f64]) -> Vec<f64> {
        let wr = self.interaction(rho);
        rho.iter()
            .enumerate()
            .map(|(i, &r)| {
                let fp = match self.internal {
                    InternalEnergy::Zero => 0.0,
                    InternalEnergy::BoltzmannEntropy => r.ln() + 1.0,
                    InternalEnergy::PowerLaw(m) => m * r.powf(m - 1.0) / (m - 1.0),
                };
                self.v[i] + wr[i] + fp
            })
            .collect()
    }
}

/// Minimizes `λ KL(γ | μ ⊗ κ) + F(ρ)` over couplings `γ` whose first
/// marginal is `μ` (as masses `μ_i/n`), `ρ` being the density of the second
/// marginal, by damped entropic mirror descent on each row of the
/// conditional `q = γ / μ`:
/// `log q ← (1 - θ) log q + θ (log κ - δF(ρ)/λ)`, rows renormalized.
/// `θ` is halved whenever the step residual grows.
pub fn brute_force_prox(
    mu: &[f64],
    energy: &SmallEnergy,
    eps: f64,
    tau: f64,
    max_iter: usize,
) -> Vec<f64> {
    let n = mu.len();
    let lambda = eps / tau;
    let kappa = gibbs_matrix(n, eps);
    let mut log_q: Vec<Vec<f64>> = kappa
        .iter()
        .map(|row| row.iter().map(|v| v.ln()).collect())
        .collect();
    let density = |log_q: &Vec<Vec<f64>>| -> Vec<f64> {
        (0..n)
            .map(|j| (0..n).map(|i| mu[i] * log_q[i][j].exp()).sum::<f64>())
            .collect()
    };
    let mut theta = 0.5;
    let mut last_change = f64::INFINITY;
    for _ in 0..max_iter {
        let rho = density(&log_q);
        let var = energy.first_variation(&rho);
        let mut change = 0.0_f64;
        let mut next = log_q.clone();
        for i in 0..n {
            for j in 0..n {
                let target = kappa[i][j].ln() - var[j] / lambda;
                next[i][j] = (1.0 - theta) * log_q[i][j] + theta * target;
            }
            let m = next[i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z = m + next[i].iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for j in 0..n {
                next[i][j] -= z;
                change = change.max((next[i][j] - log_q[i][j]).abs());
            }
        }
        if change > last_change && theta > 1e-3 {
            theta *= 0.5;
            last_change = f64::INFINITY;
            continue;
        }
        last_change = change;
        log_q = next;
        if change < 1e-14 {
            break;
        }
    }
    density(&log_q)
}

/// Quantile-function W² of two densities on a 1D grid, unwrapped around
/// `center`: breakpoints of both CDFs are merged and each inverse CDF is
/// evaluated by binary search at the interval midpoints.
pub fn w2_by_quantiles(a: &[f64], b: &[f64], center: f64) -> f64 {
    let n = a.len();
    let mut order: Vec<(f64, usize)> = (0..n)
        .map(|i| {
            let mut d = (i as f64 / n as f64 - center).rem_euclid(1.0);
            if d >= 0.5 {
                d -= 1.0;
            }
            (d, i)
        })
        .collect();
    order.sort_by(|p, q| p.0.total_cmp(&q.0));
    let x: Vec<f64> = order.iter().map(|p| p.0).collect();
    let cdf = |m: &[f64]| -> Vec<f64> {
        let total: f64 = m.iter().sum();
        let mut c = 0.0;
        order
            .iter()
            .map(|&(_, i)| {
                c += m[i] / total;
                c
            })
            .collect()
    };
    let (ca, cb) = (cdf(a), cdf(b));
    let mut breaks: Vec<f64> = ca.iter().chain(&cb).cloned().collect();
    breaks.push(0.0);
    breaks.sort_by(f64::total_cmp);
    let inverse = |c: &[f64], q: f64| x[c.partition_point(|&v| v < q).min(n - 1)];
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
