//! Experiment configuration: a flat `key = value` text format with dotted
//! section names, named presets for densities and fields, and resolution of
//! every default so that runs can be archived and replayed.
//!
//! ```text
//! # heat flow with the extra diffusion
//! grid.n = 256
//! initial = wrapped-gaussian(0.5, 0.1)
//! energy.internal = entropy
//! scheme.tau = 0.0025
//! scheme.alpha = 1
//! scheme.t_end = 0.05
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::EpsilonRule;
use crate::energy::{EnergySpec, InternalEnergy};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::jko::JkoConfig;
use crate::measure::GridMeasure;
use crate::pde::PdeConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Flow,
    Pde,
    Compare,
    Sinkhorn,
    Sweep,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Flow => "flow",
            Self::Pde => "pde",
            Self::Compare => "compare",
            Self::Sinkhorn => "sinkhorn",
            Self::Sweep => "sweep",
        }
    }
}

impl FromStr for Command {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "flow" => Self::Flow,
            "pde" => Self::Pde,
            "compare" => Self::Compare,
            "sinkhorn" => Self::Sinkhorn,
            "sweep" => Self::Sweep,
            other => return Err(Error::Config(format!("unknown command `{other}`"))),
        })
    }
}

/// `name(arg, ...)` or a bare `name`.
fn split_call(text: &str) -> Result<(String, Vec<String>)> {
    let text = text.trim();
    match text.find('(') {
        None => Ok((text.to_string(), Vec::new())),
        Some(open) => {
            if !text.ends_with(')') {
                return Err(Error::Config(format!("unbalanced parentheses in `{text}`")));
            }
            let inner = &text[open + 1..text.len() - 1];
            let args = if inner.trim().is_empty() {
                Vec::new()
            } else {
                inner.split(',').map(|a| a.trim().to_string()).collect()
            };
            Ok((text[..open].trim().to_string(), args))
        }
    }
}

fn numbers(name: &str, args: &[String], count: usize) -> Result<Vec<f64>> {
    if args.len() != count {
        return Err(Error::Config(format!(
            "`{name}` takes {count} arguments, got {}",
            args.len()
        )));
    }
    args.iter()
        .map(|a| {
            a.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Config(format!("`{a}` is not a number in `{name}`")))
        })
        .collect()
}

/// Initial or target density.
#[derive(Debug, Clone, PartialEq)]
pub enum DensityPreset {
    Uniform,
    /// Periodized Gaussian of the distance to `(center, …, center)`.
    WrappedGaussian { center: f64, width: f64 },
    /// Equal mixture of two wrapped Gaussians.
    TwoBumps { c1: f64, c2: f64, width: f64 },
    /// `1 + amplitude · U` with `U` uniform in `[-1, 1]` per node, drawn from `seed`.
    Random { amplitude: f64 },
    Csv(PathBuf),
}

impl FromStr for DensityPreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = split_call(s)?;
        Ok(match name.as_str() {
            "uniform" => {
                numbers(&name, &args, 0)?;
                Self::Uniform
            }
            "wrapped-gaussian" => {
                let v = numbers(&name, &args, 2)?;
                if !(v[1] > 0.0) {
                    return Err(Error::Config("gaussian width must be positive".into()));
                }
                Self::WrappedGaussian {
                    center: v[0],
                    width: v[1],
                }
            }
            "two-bumps" => {
                let v = numbers(&name, &args, 3)?;
                if !(v[2] > 0.0) {
                    return Err(Error::Config("bump width must be positive".into()));
                }
                Self::TwoBumps {
                    c1: v[0],
                    c2: v[1],
                    width: v[2],
                }
            }
            "random" => {
                let v = numbers(&name, &args, 1)?;
                if !(v[0] >= 0.0 && v[0] < 1.0) {
                    return Err(Error::Config("random amplitude must lie in [0, 1)".into()));
                }
                Self::Random { amplitude: v[0] }
            }
            "csv" if args.len() == 1 => Self::Csv(PathBuf::from(&args[0])),
            _ => {
                return Err(Error::Config(format!(
                    "unknown density `{s}` (uniform, wrapped-gaussian(c, w), \
                     two-bumps(c1, c2, w), random(a), csv(path))"
                )))
            }
        })
    }
}

impl fmt::Display for DensityPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Uniform => write!(f, "uniform"),
            Self::WrappedGaussian { center, width } => {
                write!(f, "wrapped-gaussian({center}, {width})")
            }
            Self::TwoBumps { c1, c2, width } => write!(f, "two-bumps({c1}, {c2}, {width})"),
            Self::Random { amplitude } => write!(f, "random({amplitude})"),
            Self::Csv(p) => write!(f, "csv({})", p.display()),
        }
    }
}

/// Potential or interaction kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldPreset {
    Zero,
    /// `amplitude · Σ_axes cos(2π frequency x_axis)`.
    Cosine { amplitude: f64, frequency: f64 },
    Csv(PathBuf),
}

impl FromStr for FieldPreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = split_call(s)?;
        Ok(match name.as_str() {
            "zero" => {
                numbers(&name, &args, 0)?;
                Self::Zero
            }
            "cosine" => {
                let v = numbers(&name, &args, 2)?;
                if v[1].fract() != 0.0 {
                    return Err(Error::Config(
                        "cosine frequency must be an integer to be periodic".into(),
                    ));
                }
                Self::Cosine {
                    amplitude: v[0],
                    frequency: v[1],
                }
            }
            "csv" if args.len() == 1 => Self::Csv(PathBuf::from(&args[0])),
            _ => {
                return Err(Error::Config(format!(
                    "unknown field `{s}` (zero, cosine(amplitude, frequency), csv(path))"
                )))
            }
        })
    }
}

impl fmt::Display for FieldPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "zero"),
            Self::Cosine {
                amplitude,
                frequency,
            } => write!(f, "cosine({amplitude}, {frequency})"),
            Self::Csv(p) => write!(f, "csv({})", p.display()),
        }
    }
}

fn parse_internal(s: &str) -> Result<InternalEnergy> {
    let (name, args) = split_call(s)?;
    match name.as_str() {
        "zero" if args.is_empty() => Ok(InternalEnergy::Zero),
        "entropy" if args.is_empty() => Ok(InternalEnergy::BoltzmannEntropy),
        "power" => InternalEnergy::power_law(numbers(&name, &args, 1)?[0]),
        _ => Err(Error::Config(format!(
            "unknown internal energy `{s}` (zero, entropy, power(m))"
        ))),
    }
}

fn internal_name(internal: InternalEnergy) -> String {
    match internal {
        InternalEnergy::Zero => "zero".into(),
        InternalEnergy::BoltzmannEntropy => "entropy".into(),
        InternalEnergy::PowerLaw(m) => format!("power({m})"),
    }
}

/// Reads whitespace- or comma-separated numbers.
fn read_csv_values(path: &Path, expected: usize) -> Result<GridFunction> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let values = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Config(format!("`{t}` in {} is not a number", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.len() != expected {
        return Err(Error::Config(format!(
            "{} holds {} values, the grid has {expected}",
            path.display(),
            values.len()
        )));
    }
    Ok(values)
}

fn wrapped_gaussian(grid: &Grid, center: f64, width: f64) -> GridFunction {
    grid.sample(|x| {
        let mut d2 = 0.0;
        for &xa in x.iter().take(grid.dim()) {
            let d = (xa - center).rem_euclid(1.0);
            let d = d.min(1.0 - d);
            d2 += d * d;
        }
        (-d2 / (2.0 * width * width)).exp()
    })
}

impl DensityPreset {
    /// Unnormalized values on `grid`.
    pub fn sample(&self, grid: &Grid, seed: u64) -> Result<GridFunction> {
        Ok(match self {
            Self::Uniform => vec![1.0; grid.len()],
            Self::WrappedGaussian { center, width } => wrapped_gaussian(grid, *center, *width),
            Self::TwoBumps { c1, c2, width } => wrapped_gaussian(grid, *c1, *width)
                .iter()
                .zip(wrapped_gaussian(grid, *c2, *width))
                .map(|(a, b)| a + b)
                .collect(),
            Self::Random { amplitude } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..grid.len())
                    .map(|_| 1.0 + amplitude * rng.gen_range(-1.0..=1.0))
                    .collect()
            }
            Self::Csv(path) => read_csv_values(path, grid.len())?,
        })
    }

    /// Whether the preset can be sampled on any grid (needed for refined references).
    pub fn is_resolution_free(&self) -> bool {
        !matches!(self, Self::Csv(_) | Self::Random { .. })
    }
}

impl FieldPreset {
    pub fn sample(&self, grid: &Grid) -> Result<GridFunction> {
        Ok(match self {
            Self::Zero => vec![0.0; grid.len()],
            Self::Cosine {
                amplitude,
                frequency,
            } => grid.sample(|x| {
                let k = 2.0 * std::f64::consts::PI * frequency;
                amplitude * x.iter().take(grid.dim()).map(|xa| (k * xa).cos()).sum::<f64>()
            }),
            Self::Csv(path) => read_csv_values(path, grid.len())?,
        })
    }

    pub fn is_resolution_free(&self) -> bool {
        !matches!(self, Self::Csv(_))
    }
}

/// JKO time stepping as resolved from `scheme.*`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scheme {
    pub tau: f64,
    pub eps: f64,
    pub n_steps: usize,
}

impl Scheme {
    pub fn t_end(&self) -> f64 {
        self.n_steps as f64 * self.tau
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    /// Limits of `ε/τ`; `0` is realized as `ε = τ^zero_alpha_exponent`.
    pub alphas: Vec<f64>,
    pub taus: Vec<f64>,
    pub zero_alpha_exponent: f64,
    pub refinement: usize,
}

impl SweepSettings {
    pub fn rules(&self) -> Vec<EpsilonRule> {
        self.alphas
            .iter()
            .map(|&alpha| {
                if alpha == 0.0 {
                    EpsilonRule::Power {
                        exponent: self.zero_alpha_exponent,
                    }
                } else {
                    EpsilonRule::Linear { alpha }
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornSettings {
    pub target: DensityPreset,
    pub eps: f64,
    pub tol: f64,
    pub max_iter: usize,
}

/// Fully validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub command: Command,
    pub dim: usize,
    pub n: usize,
    pub initial: DensityPreset,
    pub initial_floor: f64,
    pub potential: FieldPreset,
    pub interaction: FieldPreset,
    pub internal: InternalEnergy,
    pub scheme: Option<Scheme>,
    /// Whether `ε` came from `scheme.alpha`.
    pub eps_from_alpha: bool,
    /// Tolerances only; time stepping lives in `scheme`.
    pub solver: JkoConfig,
    pub pde: PdeConfig,
    pub sweep: Option<SweepSettings>,
    pub sinkhorn: Option<SinkhornSettings>,
    pub output_dir: PathBuf,
    pub seed: u64,
}

const KNOWN_KEYS: &[&str] = &[
    "grid.d",
    "grid.n",
    "initial",
    "initial.floor",
    "energy.v",
    "energy.w",
    "energy.internal",
    "scheme.tau",
    "scheme.eps",
    "scheme.alpha",
    "scheme.n_steps",
    "scheme.t_end",
    "solver.inner_tol",
    "solver.inner_max_iter",
    "solver.interaction_tol",
    "solver.interaction_max_iter",
    "solver.newton_tol",
    "pde.alpha",
    "pde.t_end",
    "pde.cfl_safety",
    "pde.max_dt",
    "pde.snapshots",
    "sweep.alphas",
    "sweep.taus",
    "sweep.zero_alpha_exponent",
    "sweep.refinement",
    "sinkhorn.target",
    "sinkhorn.eps",
    "sinkhorn.tol",
    "sinkhorn.max_iter",
    "output.dir",
    "seed",
];

/// Raw `key = value` pairs; later assignments override earlier ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    /// Parses the text format: one `key = value` per line, `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = Self::default();
        for (number, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            raw.set_pair(line)
                .map_err(|e| Error::Config(format!("line {}: {e}", number + 1)))?;
        }
        Ok(raw)
    }

    /// Applies one `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected `key = value`, got `{pair}`")))?;
        let key = key.trim();
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        self.entries.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
            })
            .transpose()
    }

    fn number(&self, key: &str) -> Result<Option<f64>> {
        match self.parsed::<f64>(key)? {
            Some(v) if v.is_nan() => Err(Error::Config(format!("`{key}` is NaN"))),
            other => Ok(other),
        }
    }

    fn positive(&self, key: &str) -> Result<Option<f64>> {
        match self.number(key)? {
            Some(v) if !(v > 0.0) || !v.is_finite() => Err(Error::Config(format!(
                "`{key}` must be positive and finite, got {v}"
            ))),
            other => Ok(other),
        }
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|t| !t.is_empty())
                    .map(|t| {
                        t.parse::<f64>()
                            .ok()
                            .filter(|x| x.is_finite())
                            .ok_or_else(|| Error::Config(format!("`{key}`: `{t}` is not a number")))
                    })
                    .collect()
            })
            .transpose()
    }

    fn with_key<T>(key: &str, r: Result<T>) -> Result<T> {
        r.map_err(|e| match e {
            Error::Config(m) if !m.contains(key) => Error::Config(format!("`{key}`: {m}")),
            other => other,
        })
    }

    /// Validates everything needed by `command`. Relative CSV paths are
    /// resolved against `base`.
    pub fn resolve(&self, command: Command, base: &Path) -> Result<ExperimentConfig> {
        let dim = self.parsed::<usize>("grid.d")?.unwrap_or(1);
        let n = self.parsed::<usize>("grid.n")?.unwrap_or(128);
        Self::with_key("grid", Grid::new(dim, n).map(|_| ()))?;

        let rebase = |p: PathBuf| if p.is_relative() { base.join(p) } else { p };
        let density = |key: &str, default: DensityPreset| -> Result<DensityPreset> {
            let preset = match self.get(key) {
                Some(v) => Self::with_key(key, v.parse())?,
                None => default,
            };
            Ok(match preset {
                DensityPreset::Csv(p) => DensityPreset::Csv(rebase(p)),
                other => other,
            })
        };
        let field = |key: &str| -> Result<FieldPreset> {
            let preset = match self.get(key) {
                Some(v) => Self::with_key(key, v.parse())?,
                None => FieldPreset::Zero,
            };
            Ok(match preset {
                FieldPreset::Csv(p) => FieldPreset::Csv(rebase(p)),
                other => other,
            })
        };
        let initial = density(
            "initial",
            DensityPreset::WrappedGaussian {
                center: 0.5,
                width: 0.1,
            },
        )?;
        let initial_floor = self.number("initial.floor")?.unwrap_or(0.0);
        if !(initial_floor >= 0.0) || !initial_floor.is_finite() {
            return Err(Error::Config("`initial.floor` must be >= 0".into()));
        }
        let potential = field("energy.v")?;
        let interaction = field("energy.w")?;
        let internal = match self.get("energy.internal") {
            Some(v) => Self::with_key("energy.internal", parse_internal(v))?,
            None => InternalEnergy::BoltzmannEntropy,
        };

        let mut solver = JkoConfig::new(1.0, 1.0, 1);
        if let Some(v) = self.positive("solver.inner_tol")? {
            solver.inner_tol = v;
        }
        if let Some(v) = self.parsed::<usize>("solver.inner_max_iter")? {
            solver.inner_max_iter = v;
        }
        if let Some(v) = self.positive("solver.interaction_tol")? {
            solver.interaction_tol = v;
        }
        if let Some(v) = self.parsed::<usize>("solver.interaction_max_iter")? {
            solver.interaction_max_iter = v;
        }
        if let Some(v) = self.positive("solver.newton_tol")? {
            solver.newton_tol = v;
        }
        Self::with_key("solver", solver.validate())?;

        let tau = self.positive("scheme.tau")?;
        let eps = self.positive("scheme.eps")?;
        let alpha = self.positive("scheme.alpha")?;
        let n_steps = self.parsed::<usize>("scheme.n_steps")?;
        let t_end = self.positive("scheme.t_end")?;
        if eps.is_some() && alpha.is_some() {
            return Err(Error::Config(
                "`scheme.eps` and `scheme.alpha` are mutually exclusive".into(),
            ));
        }
        if n_steps.is_some() && t_end.is_some() {
            return Err(Error::Config(
                "`scheme.n_steps` and `scheme.t_end` are mutually exclusive".into(),
            ));
        }
        let needs_scheme = matches!(command, Command::Flow | Command::Compare);
        let scheme = match tau {
            Some(tau) => {
                let eps = match (eps, alpha) {
                    (Some(e), _) => e,
                    (None, Some(a)) => a * tau,
                    (None, None) => {
                        return Err(Error::Config(
                            "`scheme.eps` or `scheme.alpha` is required with `scheme.tau`".into(),
                        ))
                    }
                };
                let n_steps = match (n_steps, t_end) {
                    (Some(k), _) => k,
                    (None, Some(t)) => {
                        let k = (t / tau).round();
                        if k < 1.0 || (k * tau - t).abs() > 1e-9 * t {
                            return Err(Error::Config(format!(
                                "`scheme.t_end` = {t} is not a whole number of steps of {tau}"
                            )));
                        }
                        k as usize
                    }
                    (None, None) => {
                        return Err(Error::Config(
                            "`scheme.n_steps` or `scheme.t_end` is required with `scheme.tau`"
                                .into(),
                        ))
                    }
                };
                if n_steps == 0 {
                    return Err(Error::Config("`scheme.n_steps` must be positive".into()));
                }
                Some(Scheme { tau, eps, n_steps })
            }
            None if needs_scheme => {
                return Err(Error::Config(format!(
                    "`scheme.tau` is required for `{}`",
                    command.name()
                )))
            }
            None => None,
        };

        let horizon = scheme.as_ref().map(Scheme::t_end).or(t_end);
        let pde_t_end = self.positive("pde.t_end")?.or(horizon);
        let pde_alpha = match self.number("pde.alpha")? {
            Some(a) => a,
            None => scheme.as_ref().map(|s| s.eps / s.tau).unwrap_or(0.0),
        };
        let mut pde = PdeConfig::new(pde_alpha, pde_t_end.unwrap_or(1.0));
        if let Some(v) = self.positive("pde.cfl_safety")? {
            pde.cfl_safety = v;
        }
        if let Some(v) = self.number("pde.max_dt")? {
            pde.max_dt = v;
        }
        pde.snapshot_times = match self.list("pde.snapshots")? {
            Some(list) => list,
            None => match &scheme {
                Some(s) if command != Command::Sweep => {
                    (0..=s.n_steps).map(|k| k as f64 * s.tau).collect()
                }
                _ => Vec::new(),
            },
        };
        if matches!(command, Command::Pde | Command::Compare) {
            if pde_t_end.is_none() {
                return Err(Error::Config(
                    "`pde.t_end` (or a scheme horizon) is required".into(),
                ));
            }
            Self::with_key("pde", pde.validate())?;
        }

        let sweep = if command == Command::Sweep {
            let taus = self
                .list("sweep.taus")?
                .ok_or_else(|| Error::Config("`sweep.taus` is required".into()))?;
            let alphas = self
                .list("sweep.alphas")?
                .ok_or_else(|| Error::Config("`sweep.alphas` is required".into()))?;
            if let Some(t) = taus.iter().find(|t| !(**t > 0.0)) {
                return Err(Error::Config(format!("`sweep.taus`: {t} is not positive")));
            }
            if let Some(a) = alphas.iter().find(|a| !(**a >= 0.0)) {
                return Err(Error::Config(format!("`sweep.alphas`: {a} is negative")));
            }
            let zero_alpha_exponent = self.number("sweep.zero_alpha_exponent")?.unwrap_or(1.5);
            if !(zero_alpha_exponent > 1.0) {
                return Err(Error::Config(
                    "`sweep.zero_alpha_exponent` must exceed 1".into(),
                ));
            }
            let refinement = self.parsed::<usize>("sweep.refinement")?.unwrap_or(2);
            if refinement == 0 {
                return Err(Error::Config("`sweep.refinement` must be positive".into()));
            }
            let t = t_end.or(horizon).ok_or_else(|| {
                Error::Config("`scheme.t_end` is required for `sweep`".into())
            })?;
            for &tau in &taus {
                let k = (t / tau).round();
                if k < 1.0 || (k * tau - t).abs() > 1e-9 * t {
                    return Err(Error::Config(format!(
                        "`sweep.taus`: {tau} does not divide `scheme.t_end` = {t}"
                    )));
                }
            }
            if refinement > 1
                && !(initial.is_resolution_free()
                    && potential.is_resolution_free()
                    && interaction.is_resolution_free())
            {
                return Err(Error::Config(
                    "`sweep.refinement` > 1 needs presets that can be sampled on any grid \
                     (not csv or random)"
                        .into(),
                ));
            }
            pde.t_end = t;
            pde.snapshot_times = Vec::new();
            Self::with_key("pde", pde.validate())?;
            Some(SweepSettings {
                alphas,
                taus,
                zero_alpha_exponent,
                refinement,
            })
        } else {
            None
        };

        let sinkhorn = if command == Command::Sinkhorn {
            let target = match self.get("sinkhorn.target") {
                Some(_) => density("sinkhorn.target", DensityPreset::Uniform)?,
                None => return Err(Error::Config("`sinkhorn.target` is required".into())),
            };
            let eps = self
                .positive("sinkhorn.eps")?
                .or(scheme.as_ref().map(|s| s.eps))
                .ok_or_else(|| Error::Config("`sinkhorn.eps` is required".into()))?;
            Some(SinkhornSettings {
                target,
                eps,
                tol: self.positive("sinkhorn.tol")?.unwrap_or(1e-10),
                max_iter: self.parsed::<usize>("sinkhorn.max_iter")?.unwrap_or(10_000),
            })
        } else {
            None
        };

        let cfg = ExperimentConfig {
            command,
            dim,
            n,
            initial,
            initial_floor,
            potential,
            interaction,
            internal,
            scheme,
            eps_from_alpha: eps.is_none() && alpha.is_some(),
            solver,
            pde,
            sweep,
            sinkhorn,
            output_dir: PathBuf::from(self.get("output.dir").unwrap_or("out")),
            seed: self.parsed::<u64>("seed")?.unwrap_or(0),
        };
        // sample once so that bad CSVs or kernels surface before any output
        let grid = cfg.grid()?;
        Self::with_key("initial", cfg.problem(&grid).map(|_| ()))?;
        if let Some(s) = &cfg.sinkhorn {
            Self::with_key("sinkhorn.target", cfg.density(&s.target, &grid).map(|_| ()))?;
        }
        Ok(cfg)
    }
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

impl ExperimentConfig {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dim, self.n)
    }

    /// Initial density and energy sampled on `grid`.
    pub fn problem(&self, grid: &Grid) -> Result<(GridMeasure, EnergySpec)> {
        let rho0 = self.density(&self.initial, grid)?;
        let spec = EnergySpec::new(
            grid,
            self.potential.sample(grid)?,
            self.interaction.sample(grid)?,
            self.internal,
        )?;
        Ok((rho0, spec))
    }

    pub fn density(&self, preset: &DensityPreset, grid: &Grid) -> Result<GridMeasure> {
        let values = preset
            .sample(grid, self.seed)?
            .into_iter()
            .map(|v| v + self.initial_floor)
            .collect();
        GridMeasure::new(grid, values)
    }

    /// Solver settings with the resolved time stepping.
    pub fn jko(&self) -> Option<JkoConfig> {
        self.scheme.as_ref().map(|s| JkoConfig {
            tau: s.tau,
            eps: s.eps,
            n_steps: s.n_steps,
            ..self.solver.clone()
        })
    }

    /// Every setting in effect, defaults included, as sorted `key = value` pairs.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out: BTreeMap<String, String> = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            out.insert(k.to_string(), v);
        };
        put("grid.d", self.dim.to_string());
        put("grid.n", self.n.to_string());
        put("initial", self.initial.to_string());
        put("initial.floor", self.initial_floor.to_string());
        put("energy.v", self.potential.to_string());
        put("energy.w", self.interaction.to_string());
        put("energy.internal", internal_name(self.internal));
        if let Some(s) = &self.scheme {
            put("scheme.tau", s.tau.to_string());
            put("scheme.eps", s.eps.to_string());
            put("scheme.alpha", (s.eps / s.tau).to_string());
            put("scheme.n_steps", s.n_steps.to_string());
            put("scheme.t_end", s.t_end().to_string());
            put(
                "scheme.eps_source",
                if self.eps_from_alpha { "alpha" } else { "eps" }.to_string(),
            );
        }
        put("solver.inner_tol", self.solver.inner_tol.to_string());
        put("solver.inner_max_iter", self.solver.inner_max_iter.to_string());
        put("solver.interaction_tol", self.solver.interaction_tol.to_string());
        put(
            "solver.interaction_max_iter",
            self.solver.interaction_max_iter.to_string(),
        );
        put("solver.newton_tol", self.solver.newton_tol.to_string());
        if matches!(self.command, Command::Pde | Command::Compare | Command::Sweep) {
            if self.command != Command::Sweep {
                put("pde.alpha", self.pde.alpha.to_string());
                put("pde.snapshots", join(&self.pde.snapshot_times));
            }
            put("pde.t_end", self.pde.t_end.to_string());
            put("pde.cfl_safety", self.pde.cfl_safety.to_string());
            put("pde.max_dt", self.pde.max_dt.to_string());
        }
        if let Some(s) = &self.sweep {
            put("sweep.alphas", join(&s.alphas));
            put("sweep.taus", join(&s.taus));
            put("sweep.zero_alpha_exponent", s.zero_alpha_exponent.to_string());
            put("sweep.refinement", s.refinement.to_string());
        }
        if let Some(s) = &self.sinkhorn {
            put("sinkhorn.target", s.target.to_string());
            put("sinkhorn.eps", s.eps.to_string());
            put("sinkhorn.tol", s.tol.to_string());
            put("sinkhorn.max_iter", s.max_iter.to_string());
        }
        put("output.dir", self.output_dir.display().to_string());
        put("seed", self.seed.to_string());
        out.into_iter().collect()
    }
}
