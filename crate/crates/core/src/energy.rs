//! Driving functional
//! `F(ρ) = ∫ V ρ + ½ (W * ρ) ρ + f(ρ)`, its first variation and the
//! nonlinear diffusion flux `g(s) = s f'(s) - f(s)`.

use crate::error::{Error, Result};
use crate::grid::{convolve, Grid, GridFunction};
use crate::measure::GridMeasure;

/// Internal energy density `f`. Each kind is convex and smooth on its open
/// domain `(0, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InternalEnergy {
    /// `f ≡ 0`.
    Zero,
    /// `f(s) = s log s`.
    BoltzmannEntropy,
    /// `f(s) = s^m / (m - 1)` with `m > 0`, `m ≠ 1`.
    PowerLaw(f64),
}

impl InternalEnergy {
    pub fn power_law(m: f64) -> Result<Self> {
        if !(m > 0.0) || m == 1.0 || !m.is_finite() {
            return Err(Error::Config(format!(
                "power-law exponent must be positive and different from 1, got {m}"
            )));
        }
        Ok(Self::PowerLaw(m))
    }

    /// Open domain `(d₋, d₊)` of `f`.
    pub fn domain(&self) -> (f64, f64) {
        match self {
            Self::Zero => (f64::NEG_INFINITY, f64::INFINITY),
            _ => (0.0, f64::INFINITY),
        }
    }

    fn in_domain(&self, s: f64) -> bool {
        let (lo, hi) = self.domain();
        s > lo && s < hi
    }

    fn domain_error(&self, node: usize, s: f64) -> Error {
        let (lower, upper) = self.domain();
        Error::Domain {
            node,
            value: s,
            lower,
            upper,
        }
    }

    /// `f(s)` extended by continuity at `s = 0` and by `+∞` below it.
    pub fn f(&self, s: f64) -> f64 {
        match *self {
            Self::Zero => 0.0,
            _ if s < 0.0 => f64::INFINITY,
            _ if s == 0.0 => 0.0,
            Self::BoltzmannEntropy => s * s.ln(),
            Self::PowerLaw(m) => s.powf(m) / (m - 1.0),
        }
    }

    pub fn f_prime(&self, s: f64) -> Result<f64> {
        if !self.in_domain(s) {
            return Err(self.domain_error(0, s));
        }
        Ok(self.f_prime_unchecked(s))
    }

    pub(crate) fn f_prime_unchecked(&self, s: f64) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::BoltzmannEntropy => s.ln() + 1.0,
            Self::PowerLaw(m) => m * s.powf(m - 1.0) / (m - 1.0),
        }
    }

    pub fn f_second(&self, s: f64) -> Result<f64> {
        if !self.in_domain(s) {
            return Err(self.domain_error(0, s));
        }
        Ok(match *self {
            Self::Zero => 0.0,
            Self::BoltzmannEntropy => 1.0 / s,
            Self::PowerLaw(m) => m * s.powf(m - 2.0),
        })
    }

    /// `g(s) = s f'(s) - f(s)`.
    pub fn g(&self, s: f64) -> Result<f64> {
        if !self.in_domain(s) {
            return Err(self.domain_error(0, s));
        }
        Ok(match *self {
            Self::Zero => 0.0,
            Self::BoltzmannEntropy => s,
            Self::PowerLaw(m) => s.powf(m),
        })
    }

    /// `g'(s) = s f''(s)`; also evaluated at `s = 0` by continuity.
    pub fn g_prime(&self, s: f64) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::BoltzmannEntropy => 1.0,
            Self::PowerLaw(m) => m * s.max(0.0).powf(m - 1.0),
        }
    }

    /// `g` on the closed domain, `g(0) = 0` for the provided kinds with `m > 0`.
    pub(crate) fn g_closed(&self, s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else {
            self.g(s).expect("positive values are in the domain")
        }
    }
}

/// `f'(s)` for the given internal energy.
pub fn f_prime(internal: InternalEnergy, s: f64) -> Result<f64> {
    internal.f_prime(s)
}

/// `g(s) = s f'(s) - f(s)` for the given internal energy.
pub fn g_of(internal: InternalEnergy, s: f64) -> Result<f64> {
    internal.g(s)
}

/// Potential, interaction kernel and internal energy defining `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergySpec {
    grid: Grid,
    potential: GridFunction,
    interaction: GridFunction,
    internal: InternalEnergy,
}

impl EnergySpec {
    /// Builds the functional. `interaction` must be even: `W(-x) = W(x)`.
    pub fn new(
        grid: &Grid,
        potential: GridFunction,
        interaction: GridFunction,
        internal: InternalEnergy,
    ) -> Result<Self> {
        grid.check_len(&potential)?;
        grid.check_len(&interaction)?;
        if potential.iter().chain(&interaction).any(|v| !v.is_finite()) {
            return Err(Error::Config("V and W must be finite".into()));
        }
        let scale = interaction.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for i in 0..grid.len() {
            let j = grid.reflected(i);
            if (interaction[i] - interaction[j]).abs() > 1e-12 * scale.max(1.0) {
                return Err(Error::Config(format!(
                    "interaction kernel is not even: W at node {i} is {} but {} at its reflection",
                    interaction[i], interaction[j]
                )));
            }
        }
        Ok(Self {
            grid: grid.clone(),
            potential,
            interaction,
            internal,
        })
    }

    /// `V = W = 0` with the given internal energy.
    pub fn internal_only(grid: &Grid, internal: InternalEnergy) -> Self {
        Self {
            grid: grid.clone(),
            potential: vec![0.0; grid.len()],
            interaction: vec![0.0; grid.len()],
            internal,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn interaction(&self) -> &[f64] {
        &self.interaction
    }

    pub fn internal(&self) -> InternalEnergy {
        self.internal
    }

    pub fn has_interaction(&self) -> bool {
        self.interaction.iter().any(|&w| w != 0.0)
    }

    /// `W * ρ`, identically zero without interaction.
    pub fn interaction_field(&self, rho: &[f64]) -> Result<GridFunction> {
        if !self.has_interaction() {
            self.grid.check_len(rho)?;
            return Ok(vec![0.0; rho.len()]);
        }
        convolve(&self.grid, &self.interaction, rho)
    }
}

/// `F(ρ)`; `+∞` when a value lies outside the closed domain of `f`.
pub fn eval_f(spec: &EnergySpec, rho: &GridMeasure) -> Result<f64> {
    eval_f_values(spec, rho.values())
}

pub(crate) fn eval_f_values(spec: &EnergySpec, rho: &[f64]) -> Result<f64> {
    let wr = spec.interaction_field(rho)?;
    let total: f64 = rho
        .iter()
        .zip(spec.potential())
        .zip(&wr)
        .map(|((&r, &v), &c)| v * r + 0.5 * c * r + spec.internal.f(r))
        .sum();
    Ok(total * spec.grid.weight())
}

/// First variation `V + W * ρ + f'(ρ)`.
pub fn first_variation(spec: &EnergySpec, rho: &GridMeasure) -> Result<GridFunction> {
    let internal = spec.internal;
    if let Some(i) = rho.values().iter().position(|&r| !internal.in_domain(r)) {
        return Err(internal.domain_error(i, rho.values()[i]));
    }
    let wr = spec.interaction_field(rho.values())?;
    Ok(rho
        .values()
        .iter()
        .zip(spec.potential())
        .zip(&wr)
        .map(|((&r, &v), &c)| v + c + internal.f_prime_unchecked(r))
        .collect())
}

/// Boltzmann entropy `H(ρ) = (1/N) Σ ρ_i log ρ_i` with `0 log 0 = 0`.
pub fn entropy(rho: &GridMeasure) -> f64 {
    entropy_values(rho.grid(), rho.values())
}

pub(crate) fn entropy_values(grid: &Grid, rho: &[f64]) -> f64 {
    rho.iter()
        .map(|&r| if r > 0.0 { r * r.ln() } else { 0.0 })
        .sum::<f64>()
        * grid.weight()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::apply_heat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn half_two(grid: &Grid) -> GridMeasure {
        let n = grid.len();
        GridMeasure::new(grid, (0..n).map(|i| if i < n / 2 { 2.0 } else { 0.0 }).collect())
            .unwrap()
    }

    #[test]
    fn f_prime_and_g_values() {
        let e = InternalEnergy::BoltzmannEntropy;
        assert_eq!(f_prime(e, 1.0).unwrap(), 1.0);
        assert!(f_prime(e, 1e-12).unwrap() < -20.0);
        assert!(f_prime(e, 0.0).is_err());
        assert!(f_prime(e, -1.0).is_err());
        let p = InternalEnergy::power_law(2.0).unwrap();
        assert!((f_prime(p, 3.0).unwrap() - 6.0).abs() < 1e-14);
        assert!((g_of(p, 3.0).unwrap() - 9.0).abs() < 1e-13);
        for s in [0.5, 1.0, 2.0] {
            assert_eq!(g_of(e, s).unwrap(), s);
        }
        for kind in [InternalEnergy::Zero, e, p, InternalEnergy::PowerLaw(0.5)] {
            let g1 = g_of(kind, 1.0).unwrap();
            assert!((g1 - (f_prime(kind, 1.0).unwrap() - kind.f(1.0))).abs() < 1e-15);
        }
        assert!(InternalEnergy::power_law(1.0).is_err());
        assert!(InternalEnergy::power_law(-2.0).is_err());
    }

    #[test]
    fn g_identity_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for kind in [
            InternalEnergy::BoltzmannEntropy,
            InternalEnergy::PowerLaw(2.0),
            InternalEnergy::PowerLaw(0.5),
            InternalEnergy::PowerLaw(3.5),
        ] {
            for _ in 0..100 {
                let s: f64 = rng.gen_range(1e-3..5.0);
                let lhs = kind.g(s).unwrap();
                let rhs = s * kind.f_prime(s).unwrap() - kind.f(s);
                assert!((lhs - rhs).abs() <= 1e-13 * lhs.abs().max(1.0), "{kind:?} {s}");
                // g' = s f''
                let gp = s * kind.f_second(s).unwrap();
                assert!((kind.g_prime(s) - gp).abs() <= 1e-12 * gp.abs().max(1.0));
            }
        }
    }

    #[test]
    fn energy_values() {
        let g = Grid::new(1, 8).unwrap();
        let spec = EnergySpec::internal_only(&g, InternalEnergy::BoltzmannEntropy);
        assert_eq!(eval_f(&spec, &GridMeasure::uniform(&g)).unwrap(), 0.0);
        let rho = half_two(&g);
        let hand = (4.0 * 2.0 * 2.0_f64.ln()) / 8.0;
        assert!((eval_f(&spec, &rho).unwrap() - hand).abs() < 1e-12);
        let zero = EnergySpec::internal_only(&g, InternalEnergy::Zero);
        assert_eq!(eval_f(&zero, &rho).unwrap(), 0.0);
    }

    #[test]
    fn entropy_values_and_decay() {
        let g = Grid::new(1, 16).unwrap();
        assert_eq!(entropy(&GridMeasure::uniform(&g)), 0.0);
        assert!((entropy(&half_two(&g)) - 2.0_f64.ln()).abs() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let rho = GridMeasure::new(&g, (0..16).map(|_| rng.gen_range(0.0..3.0)).collect())
                .unwrap();
            let h = entropy(&rho);
            assert!(h >= -1e-12);
            let smoothed = GridMeasure::new(&g, apply_heat(&g, 0.01, rho.values()).unwrap())
                .unwrap();
            assert!(entropy(&smoothed) <= h);
        }
    }

    #[test]
    fn first_variation_cases() {
        let g = Grid::new(1, 8).unwrap();
        let u = GridMeasure::uniform(&g);
        let zero = EnergySpec::internal_only(&g, InternalEnergy::Zero);
        assert!(first_variation(&zero, &u).unwrap().iter().all(|&v| v == 0.0));
        let ent = EnergySpec::internal_only(&g, InternalEnergy::BoltzmannEntropy);
        assert!(first_variation(&ent, &u).unwrap().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        match first_variation(&ent, &half_two(&g)) {
            Err(Error::Domain { node, .. }) => assert_eq!(node, 4),
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn asymmetric_interaction_rejected() {
        let g = Grid::new(1, 8).unwrap();
        let w = g.sample(|x| (2.0 * PI * x[0]).sin());
        assert!(EnergySpec::new(&g, vec![0.0; 8], w, InternalEnergy::Zero).is_err());
        let w = g.sample(|x| (2.0 * PI * x[0]).cos());
        assert!(EnergySpec::new(&g, vec![0.0; 8], w, InternalEnergy::Zero).is_ok());
    }

    #[test]
    fn first_variation_matches_finite_differences() {
        let g = Grid::new(1, 32).unwrap();
        let v = g.sample(|x| 0.7 * (2.0 * PI * x[0]).cos());
        let w = g.sample(|x| 0.4 * (4.0 * PI * x[0]).cos());
        for internal in [InternalEnergy::BoltzmannEntropy, InternalEnergy::PowerLaw(2.5)] {
            let spec = EnergySpec::new(&g, v.clone(), w.clone(), internal).unwrap();
            let rho = GridMeasure::from_fn(&g, |x| 1.0 + 0.5 * (2.0 * PI * x[0]).sin()).unwrap();
            let eta: Vec<f64> = g.sample(|x| (6.0 * PI * x[0]).cos() + 0.3 * (2.0 * PI * x[0]).sin());
            let dv = first_variation(&spec, &rho).unwrap();
            let exact: f64 = dv.iter().zip(&eta).map(|(a, b)| a * b).sum::<f64>() * g.weight();
            let fd_err = |h: f64| {
                let plus: Vec<f64> = rho.values().iter().zip(&eta).map(|(r, e)| r + h * e).collect();
                let minus: Vec<f64> =
                    rho.values().iter().zip(&eta).map(|(r, e)| r - h * e).collect();
                let fd = (eval_f_values(&spec, &plus).unwrap()
                    - eval_f_values(&spec, &minus).unwrap())
                    / (2.0 * h);
                (fd - exact).abs()
            };
            let e1 = fd_err(1e-3);
            let e2 = fd_err(1e-4);
            let slope = (e1 / e2).log10();
            assert!((1.8..=2.2).contains(&slope), "{internal:?}: slope {slope} ({e1:e}, {e2:e})");
        }
    }

    #[test]
    fn jensen_lower_bound() {
        let g = Grid::new(1, 32).unwrap();
        let v = g.sample(|x| (2.0 * PI * x[0]).cos());
        let w = g.sample(|x| 0.5 * (2.0 * PI * x[0]).cos());
        let vmax = 1.0;
        let wmax = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for internal in [InternalEnergy::BoltzmannEntropy, InternalEnergy::PowerLaw(2.0)] {
            let spec = EnergySpec::new(&g, v.clone(), w.clone(), internal).unwrap();
            for _ in 0..20 {
                let rho = GridMeasure::new(&g, (0..32).map(|_| rng.gen_range(0.0..2.0)).collect())
                    .unwrap();
                assert!(eval_f(&spec, &rho).unwrap() >= internal.f(1.0) - vmax - wmax);
            }
        }
    }
}
