//! Probability densities on a periodic grid.

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};

/// Densities below this value are raised to it before logarithms are taken.
pub const POSITIVITY_FLOOR: f64 = 1e-300;

/// Nonnegative density with respect to the normalized Lebesgue measure,
/// stored at the grid nodes with mean 1.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeasure {
    grid: Grid,
    rho: GridFunction,
}

impl GridMeasure {
    /// Validates `values` and rescales them to mean 1.
    pub fn new(grid: &Grid, values: GridFunction) -> Result<Self> {
        Ok(Self::normalized(grid, values)?.0)
    }

    /// Like [`GridMeasure::new`], also returning the mean of the raw values.
    pub fn normalized(grid: &Grid, mut values: GridFunction) -> Result<(Self, f64)> {
        grid.check_len(&values)?;
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidDensity(format!(
                "value {} at node {i} is negative or not finite",
                values[i]
            )));
        }
        let mass = values.iter().sum::<f64>() * grid.weight();
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::InvalidDensity(format!("total mass {mass} is not positive")));
        }
        for v in values.iter_mut() {
            *v /= mass;
        }
        Ok((
            Self {
                grid: grid.clone(),
                rho: values,
            },
            mass,
        ))
    }

    pub fn uniform(grid: &Grid) -> Self {
        Self {
            grid: grid.clone(),
            rho: vec![1.0; grid.len()],
        }
    }

    /// Samples an unnormalized density and normalizes it.
    pub fn from_fn(grid: &Grid, f: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        Self::new(grid, grid.sample(f))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.rho
    }

    pub fn into_values(self) -> GridFunction {
        self.rho
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    /// Quadrature mean `(1/N) Σ ρ_i`.
    pub fn mean(&self) -> f64 {
        self.rho.iter().sum::<f64>() * self.grid.weight()
    }

    pub fn min(&self) -> f64 {
        self.rho.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.rho.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.rho.iter().all(|&v| v > 0.0)
    }

    /// Raises entries below `floor` to `floor` and renormalizes. Returns the
    /// measure and whether anything changed; a warning is logged if so.
    pub fn floored(&self, floor: f64) -> (Self, bool) {
        if self.rho.iter().all(|&v| v >= floor) {
            return (self.clone(), false);
        }
        let count = self.rho.iter().filter(|&&v| v < floor).count();
        log::warn!("flooring {count} density values at {floor:e} before taking logarithms");
        let values = self.rho.iter().map(|&v| v.max(floor)).collect();
        (
            Self::new(&self.grid, values).expect("flooring keeps a valid density"),
            true,
        )
    }

    pub(crate) fn same_grid(&self, other: &GridMeasure) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch {
                expected: self.grid.len(),
                got: other.grid.len(),
            });
        }
        Ok(())
    }
}
