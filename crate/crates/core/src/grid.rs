//! Periodic uniform grids on the flat torus `T^d` (`d` = 1 or 2) and the
//! spectral operators living on them: heat-kernel convolution, gradient and
//! circular convolution. Also hosts the closed-form torus cost used for
//! small-grid cross validation.
//!
//! Grid functions are plain `Vec<f64>` / `&[f64]` of length `n^d` in
//! row-major order (axis 0 slowest). Node `i` along an axis sits at `i / n`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Values of a function sampled at the grid nodes.
pub type GridFunction = Vec<f64>;

/// Uniform periodic grid with `n` points per axis.
///
/// FFT plans for length `n` are built once at construction and shared through
/// `Arc`, so clones are cheap and the grid can be sent across threads.
#[derive(Clone)]
pub struct Grid {
    dim: usize,
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("dim", &self.dim)
            .field("n", &self.n)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.n == other.n
    }
}

impl Grid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::Config(format!(
                "grid dimension must be 1 or 2, got {dim}"
            )));
        }
        if n < 4 || n % 2 != 0 {
            return Err(Error::Config(format!(
                "points per axis must be even and at least 4, got {n}"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            dim,
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Points per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Total number of nodes `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid spacing `1/n`.
    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Quadrature weight of one node, `1/N`.
    pub fn weight(&self) -> f64 {
        1.0 / self.len() as f64
    }

    /// Coordinates of node `i`; the second entry is 0 on 1D grids.
    pub fn node(&self, i: usize) -> [f64; 2] {
        let h = self.spacing();
        match self.dim {
            1 => [i as f64 * h, 0.0],
            _ => [(i / self.n) as f64 * h, (i % self.n) as f64 * h],
        }
    }

    /// Per-axis integer indices of node `i`.
    pub fn unravel(&self, i: usize) -> [usize; 2] {
        match self.dim {
            1 => [i, 0],
            _ => [i / self.n, i % self.n],
        }
    }

    pub fn ravel(&self, idx: [usize; 2]) -> usize {
        match self.dim {
            1 => idx[0],
            _ => idx[0] * self.n + idx[1],
        }
    }

    /// Flat index of the neighbour of `i` shifted by `step` (mod n) along `axis`.
    pub fn shifted(&self, i: usize, axis: usize, step: isize) -> usize {
        let mut idx = self.unravel(i);
        let n = self.n as isize;
        idx[axis] = (idx[axis] as isize + step).rem_euclid(n) as usize;
        self.ravel(idx)
    }

    /// Flat index of the node at `-x_i`.
    pub fn reflected(&self, i: usize) -> usize {
        let idx = self.unravel(i);
        let r = |j: usize| (self.n - j) % self.n;
        match self.dim {
            1 => r(idx[0]),
            _ => self.ravel([r(idx[0]), r(idx[1])]),
        }
    }

    /// Samples `f` at every node.
    pub fn sample(&self, f: impl Fn([f64; 2]) -> f64) -> GridFunction {
        (0..self.len()).map(|i| f(self.node(i))).collect()
    }

    /// Signed integer frequency of DFT index `j`, in `{-n/2, ..., n/2 - 1}`.
    fn frequency(&self, j: usize) -> f64 {
        if j < self.n / 2 {
            j as f64
        } else {
            j as f64 - self.n as f64
        }
    }

    fn frequencies(&self, i: usize) -> [f64; 2] {
        let idx = self.unravel(i);
        [self.frequency(idx[0]), self.frequency(idx[1])]
    }

    pub(crate) fn check_len(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.len() {
            return Err(Error::GridMismatch {
                expected: self.len(),
                got: f.len(),
            });
        }
        Ok(())
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        match self.dim {
            1 => plan.process(data),
            _ => {
                for row in data.chunks_mut(n) {
                    plan.process(row);
                }
                let mut column = vec![Complex64::new(0.0, 0.0); n];
                for c in 0..n {
                    for r in 0..n {
                        column[r] = data[r * n + c];
                    }
                    plan.process(&mut column);
                    for r in 0..n {
                        data[r * n + c] = column[r];
                    }
                }
            }
        }
    }

    fn fft(&self, f: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, &self.forward);
        data
    }

    /// Normalized inverse transform, real part only.
    fn ifft_real(&self, mut data: Vec<Complex64>) -> GridFunction {
        self.transform(&mut data, &self.inverse);
        let scale = self.weight();
        data.iter().map(|c| c.re * scale).collect()
    }

    /// Multiplies the spectrum of `f` by `multiplier(k)` for every frequency
    /// vector `k`.
    fn fourier_multiply(
        &self,
        f: &[f64],
        multiplier: impl Fn([f64; 2]) -> Complex64,
    ) -> GridFunction {
        let mut spectrum = self.fft(f);
        for (i, c) in spectrum.iter_mut().enumerate() {
            *c *= multiplier(self.frequencies(i));
        }
        self.ifft_real(spectrum)
    }
}

/// Fourier multiplier of the heat semigroup `exp(t/2 Δ)` at frequency `k`.
pub fn heat_multiplier(t: f64, k: [f64; 2]) -> f64 {
    (-2.0 * PI * PI * (k[0] * k[0] + k[1] * k[1]) * t).exp()
}

/// Heat-kernel convolution `f * σ_t` where `∂_t σ = ½ Δσ`.
///
/// Nonnegative inputs give outputs clipped at 0; the result is not
/// renormalized.
pub fn apply_heat(grid: &Grid, t: f64, f: &[f64]) -> Result<GridFunction> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Config(format!(
            "diffusion time must be finite and >= 0, got {t}"
        )));
    }
    grid.check_len(f)?;
    if t == 0.0 {
        return Ok(f.to_vec());
    }
    let nonnegative = f.iter().all(|&v| v >= 0.0);
    let mut out = grid.fourier_multiply(f, |k| Complex64::new(heat_multiplier(t, k), 0.0));
    if nonnegative {
        for v in out.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    Ok(out)
}

/// Per-axis derivatives of `f` through the multiplier `2πik`. The Nyquist
/// mode is dropped so the output stays real.
pub fn spectral_gradient(grid: &Grid, f: &[f64]) -> Result<Vec<GridFunction>> {
    grid.check_len(f)?;
    let nyquist = -(grid.n() as f64) / 2.0;
    let spectrum = grid.fft(f);
    let grad = (0..grid.dim())
        .map(|axis| {
            let mut s = spectrum.clone();
            for (i, c) in s.iter_mut().enumerate() {
                let k = grid.frequencies(i)[axis];
                *c *= if k == nyquist {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new(0.0, 2.0 * PI * k)
                };
            }
            grid.ifft_real(s)
        })
        .collect();
    Ok(grad)
}

/// Circular convolution `(W * ρ)(x_i) = (1/N) Σ_j W(x_i - x_j) ρ_j`.
pub fn convolve(grid: &Grid, kernel: &[f64], rho: &[f64]) -> Result<GridFunction> {
    grid.check_len(kernel)?;
    grid.check_len(rho)?;
    let a = grid.fft(kernel);
    let b = grid.fft(rho);
    let w = grid.weight();
    let product = a.iter().zip(&b).map(|(x, y)| x * y * w).collect();
    Ok(grid.ifft_real(product))
}

/// Number of periodic images kept per axis in [`torus_cost`].
fn image_count(eps: f64) -> i64 {
    6.max((6.0 * eps.sqrt()).ceil() as i64)
}

/// Torus cost `c_ε(x, y) = -ε log Σ_{k ∈ Z^d} exp(-|y + k - x|² / 2ε)`.
///
/// Points are given by their coordinates (length 1 or 2). The image sum
/// factorizes over axes and each factor is evaluated with log-sum-exp.
pub fn torus_cost(eps: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Config(format!(
            "regularization must be positive, got {eps}"
        )));
    }
    if x.len() != y.len() {
        return Err(Error::GridMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let kmax = image_count(eps);
    let mut total = 0.0;
    for (&xa, &ya) in x.iter().zip(y) {
        let mut delta = (ya - xa).rem_euclid(1.0);
        if delta >= 0.5 {
            delta -= 1.0;
        }
        let exponents: Vec<f64> = (-kmax..=kmax)
            .map(|k| {
                let d = delta + k as f64;
                -d * d / (2.0 * eps)
            })
            .collect();
        let m = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = exponents.iter().map(|e| (e - m).exp()).sum();
        total += m + s.ln();
    }
    Ok(-eps * total)
}

/// Squared geodesic distance on the torus.
pub fn torus_distance_sq(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&a, &b)| {
            let d = (b - a).rem_euclid(1.0);
            let d = d.min(1.0 - d);
            d * d
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_fn(grid: &Grid, seed: u64) -> GridFunction {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn max_abs(f: &[f64]) -> f64 {
        f.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    #[test]
    fn grid_construction() {
        let g = Grid::new(1, 8).unwrap();
        assert_eq!(g.len(), 8);
        assert_eq!(g.spacing(), 0.125);
        let g = Grid::new(2, 16).unwrap();
        assert_eq!(g.len(), 256);
        assert_eq!(g.spacing(), 0.0625);
        assert!((0..g.len()).map(|_| g.weight()).sum::<f64>() - 1.0 < 1e-15);
        assert!(matches!(Grid::new(3, 8), Err(Error::Config(_))));
        assert!(Grid::new(1, 7).is_err());
        assert!(Grid::new(1, 2).is_err());
    }

    #[test]
    fn heat_preserves_constants_and_mean() {
        for dim in [1, 2] {
            let g = Grid::new(dim, 16).unwrap();
            let ones = vec![1.0; g.len()];
            let out = apply_heat(&g, 0.1, &ones).unwrap();
            assert!(out.iter().all(|v| (v - 1.0).abs() < 1e-14));
            let f = random_fn(&g, 3);
            let mean: f64 = f.iter().sum::<f64>() / g.len() as f64;
            let out = apply_heat(&g, 0.02, &f).unwrap();
            let out_mean: f64 = out.iter().sum::<f64>() / g.len() as f64;
            assert!((mean - out_mean).abs() < 1e-15);
        }
    }

    #[test]
    fn heat_zero_time_is_identity_and_negative_rejected() {
        let g = Grid::new(1, 32).unwrap();
        let f = random_fn(&g, 1);
        assert_eq!(apply_heat(&g, 0.0, &f).unwrap(), f);
        assert!(apply_heat(&g, -1e-3, &f).is_err());
    }

    #[test]
    fn heat_semigroup() {
        for dim in [1, 2] {
            let g = Grid::new(dim, 32).unwrap();
            let f = random_fn(&g, 7);
            let two = apply_heat(&g, 0.003, &apply_heat(&g, 0.004, &f).unwrap()).unwrap();
            let one = apply_heat(&g, 0.007, &f).unwrap();
            let dev = max_abs(&two.iter().zip(&one).map(|(a, b)| a - b).collect::<Vec<_>>());
            assert!(dev <= 1e-12 * max_abs(&f), "deviation {dev}");
        }
    }

    #[test]
    fn heat_spike_matches_image_sum() {
        let n = 256;
        let t = 0.01;
        let g = Grid::new(1, n).unwrap();
        let mut spike = vec![0.0; n];
        spike[0] = n as f64;
        let out = apply_heat(&g, t, &spike).unwrap();
        for (i, v) in out.iter().enumerate() {
            let x = i as f64 / n as f64;
            let oracle: f64 = (-6..=6)
                .map(|k| {
                    let d = x + k as f64;
                    (-d * d / (2.0 * t)).exp() / (2.0 * PI * t).sqrt()
                })
                .sum();
            assert!((v - oracle).abs() <= 1e-8 * oracle, "node {i}: {v} vs {oracle}");
        }
    }

    #[test]
    fn heat_output_of_nonnegative_input_is_nonnegative() {
        let g = Grid::new(1, 64).unwrap();
        let mut f = vec![0.0; 64];
        f[10] = 64.0;
        f[11] = 3.0;
        let out = apply_heat(&g, 1e-5, &f).unwrap();
        assert!(out.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn gradient_of_sine() {
        let g = Grid::new(1, 64).unwrap();
        let f = g.sample(|x| (2.0 * PI * x[0]).sin());
        let grad = spectral_gradient(&g, &f).unwrap();
        for i in 0..64 {
            let x = g.node(i)[0];
            assert!((grad[0][i] - 2.0 * PI * (2.0 * PI * x).cos()).abs() < 1e-10);
        }
        let c = vec![3.5; 64];
        assert!(max_abs(&spectral_gradient(&g, &c).unwrap()[0]) < 1e-12);
    }

    #[test]
    fn gradient_2d_axes() {
        let g = Grid::new(2, 16).unwrap();
        let f = g.sample(|x| (2.0 * PI * x[0]).sin() + (4.0 * PI * x[1]).cos());
        let grad = spectral_gradient(&g, &f).unwrap();
        for i in 0..g.len() {
            let [x, y] = g.node(i);
            assert!((grad[0][i] - 2.0 * PI * (2.0 * PI * x).cos()).abs() < 1e-10);
            assert!((grad[1][i] + 4.0 * PI * (4.0 * PI * y).sin()).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_ignores_constants() {
        let g = Grid::new(1, 32).unwrap();
        let f = random_fn(&g, 11);
        let shifted: Vec<f64> = f.iter().map(|v| v + 4.2).collect();
        let a = spectral_gradient(&g, &f).unwrap();
        let b = spectral_gradient(&g, &shifted).unwrap();
        for (x, y) in a[0].iter().zip(&b[0]) {
            assert!((x - y).abs() < 1e-11);
        }
    }

    #[test]
    fn torus_cost_values() {
        let c = torus_cost(1e-3, &[0.0], &[0.25]).unwrap();
        assert!((c - 0.03125).abs() < 1e-9, "{c}");
        let gaps: Vec<f64> = [0.1, 0.05, 0.01]
            .iter()
            .map(|&e| (torus_cost(e, &[0.0], &[0.4]).unwrap() - 0.08).abs())
            .collect();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
        assert!(torus_cost(0.0, &[0.0], &[0.1]).is_err());
        assert!(torus_cost(-1.0, &[0.0], &[0.1]).is_err());
    }

    #[test]
    fn torus_cost_symmetry_and_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let eps = rng.gen_range(1e-3..0.5);
            let x = [rng.gen::<f64>(), rng.gen::<f64>()];
            let y = [rng.gen::<f64>(), rng.gen::<f64>()];
            let s = [rng.gen::<f64>(), rng.gen::<f64>()];
            let cxy = torus_cost(eps, &x, &y).unwrap();
            let cyx = torus_cost(eps, &y, &x).unwrap();
            assert!((cxy - cyx).abs() < 1e-12);
            let xs = [(x[0] + s[0]) % 1.0, (x[1] + s[1]) % 1.0];
            let ys = [(y[0] + s[0]) % 1.0, (y[1] + s[1]) % 1.0];
            assert!((torus_cost(eps, &xs, &ys).unwrap() - cxy).abs() < 1e-11);
        }
    }

    fn direct_convolution(g: &Grid, w: &[f64], rho: &[f64]) -> Vec<f64> {
        let n = g.n() as isize;
        (0..g.len())
            .map(|i| {
                let ii = g.unravel(i);
                (0..g.len())
                    .map(|j| {
                        let jj = g.unravel(j);
                        let d = [
                            (ii[0] as isize - jj[0] as isize).rem_euclid(n) as usize,
                            (ii[1] as isize - jj[1] as isize).rem_euclid(n) as usize,
                        ];
                        w[g.ravel(d)] * rho[j]
                    })
                    .sum::<f64>()
                    * g.weight()
            })
            .collect()
    }

    #[test]
    fn convolution_matches_direct_sum() {
        for (dim, n) in [(1, 16), (1, 64), (2, 8), (2, 32)] {
            let g = Grid::new(dim, n).unwrap();
            let w = random_fn(&g, 21);
            let rho: Vec<f64> = random_fn(&g, 22).iter().map(|v| v + 1.5).collect();
            let fast = convolve(&g, &w, &rho).unwrap();
            let slow = direct_convolution(&g, &w, &rho);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-11, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn convolution_special_cases() {
        let g = Grid::new(1, 16).unwrap();
        let w = random_fn(&g, 2);
        let ones = vec![1.0; 16];
        let mean = w.iter().sum::<f64>() / 16.0;
        for v in convolve(&g, &w, &ones).unwrap() {
            assert!((v - mean).abs() < 1e-14);
        }
        for v in convolve(&g, &vec![0.0; 16], &ones).unwrap() {
            assert_eq!(v, 0.0);
        }
        assert!(convolve(&g, &w, &[1.0; 8]).is_err());
    }

    #[test]
    fn reflection_and_shift_indices() {
        let g = Grid::new(2, 8).unwrap();
        let i = g.ravel([3, 5]);
        assert_eq!(g.unravel(g.reflected(i)), [5, 3]);
        assert_eq!(g.unravel(g.shifted(i, 1, 4)), [3, 1]);
        assert_eq!(g.unravel(g.shifted(i, 0, -4)), [7, 5]);
    }
}
