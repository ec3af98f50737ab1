//! Entropic JKO scheme on the flat torus.
//!
//! Each proximal step minimizes `D_ε(ρ_n, ρ)² / 2τ + F(ρ)`, where `D_ε` is the
//! Schrödinger cost computed by a log-domain Sinkhorn iteration with the heat
//! kernel as Gibbs kernel. A finite-volume solver for the limiting PDE
//! `∂_t ρ - div(ρ ∇(V + W * ρ)) = Δ g(ρ) + (α/2) Δρ` serves as reference,
//! and [`analysis`] measures how the discrete flows approach it.

pub mod error;
pub mod grid;
pub mod measure;
pub mod schrodinger;
pub mod energy;
pub mod jko;
pub mod pde;
pub mod analysis;
pub mod config;
pub mod cli;

pub use error::{Error, Result};
pub use grid::{apply_heat, convolve, spectral_gradient, torus_cost, Grid, GridFunction};
pub use measure::GridMeasure;
