//! Mean-field analysis on an `M`-point grid of the circle (`d = 2`).

mod costate;
mod evolve;
mod gibbs;
mod grid;
mod hessian;
mod laplacian;
mod response;

pub use costate::{
    backward_costate, one_gd_path, rayleigh_rate, visibility_factor, visibility_numerators, ControlCoupling,
    CostateOptions, CostatePath,
};
pub use evolve::{evolve_density, DensityEvolver, DensityPath};
pub use gibbs::{gibbs_map, gibbs_residual, stationary_gibbs, stationary_gibbs_with_kernel, Branch, GibbsOptions, GibbsSolution};
pub use grid::{energy, energy_and_gap, entropy, grid_interaction, CircleDensity, CircleGrid, GridMeasure};
pub use hessian::Hessian;
pub use laplacian::WeightedLaplacian;
pub use response::{linear_response, ResponsePath};

use crate::attention::AttentionSpec;
use crate::error::Result;

/// Stationary state and linearized operators for one `(A, ε, M)`.
pub struct Linearization {
    pub grid: CircleGrid,
    pub kernel: Vec<f64>,
    pub eps: f64,
    pub gibbs: GibbsSolution,
    pub hessian: Hessian,
    pub laplacian: WeightedLaplacian,
}

impl Linearization {
    pub fn new(a: &AttentionSpec, eps: f64, m: usize, opts: GibbsOptions) -> Result<Self> {
        let grid = CircleGrid::new(m)?;
        let kernel = grid.kernel_matrix(a)?;
        let gibbs = stationary_gibbs_with_kernel(&kernel, eps, &grid, Branch::Positive, opts)?;
        let hessian = Hessian::new(&grid, &kernel, &gibbs.rho, eps)?;
        let laplacian = WeightedLaplacian::new(&grid, &gibbs.rho)?;
        Ok(Self { grid, kernel, eps, gibbs, hessian, laplacian })
    }

    pub fn rho_bar(&self) -> &CircleDensity {
        &self.gibbs.rho
    }

    /// `E(ρ) - E(ρ̄)`, with gaps below `1e-13` reported as zero.
    pub fn gap(&self, rho: &CircleDensity) -> Result<f64> {
        let (_, d) = energy_and_gap(&self.grid, &self.kernel, rho, self.rho_bar(), self.eps)?;
        Ok(if d.abs() < 1e-13 { 0.0 } else { d })
    }
}
