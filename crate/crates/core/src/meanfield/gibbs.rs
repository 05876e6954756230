use serde::{Deserialize, Serialize};

use super::grid::{CircleDensity, CircleGrid};
use crate::attention::AttentionSpec;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// concentrated around `+e₁`
    Positive,
    /// concentrated around `-e₁`
    Negative,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GibbsOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
}

impl Default for GibbsOptions {
    fn default() -> Self {
        Self { tol: 1e-11, max_iter: 20_000, damping: 0.5 }
    }
}

#[derive(Clone, Debug)]
pub struct GibbsSolution {
    pub rho: CircleDensity,
    pub residual: f64,
    pub iterations: usize,
}

/// `normalize(exp(W_ρ / ε))` with the potential max-shifted before exponentiation.
pub fn gibbs_map(grid: &CircleGrid, kernel: &[f64], rho: &[f64], eps: f64) -> Result<Vec<f64>> {
    let w = grid.potential(kernel, rho);
    let wmax = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut v: Vec<f64> = w.iter().map(|x| ((x - wmax) / eps).exp()).collect();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    if !mean.is_finite() || !(mean > 0.0) {
        return Err(Error::Overflow);
    }
    v.iter_mut().for_each(|x| *x /= mean);
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Overflow);
    }
    Ok(v)
}

/// Damped fixed-point iteration `ρ ← (1-τ)ρ + τ G(ρ)` for the stationary density.
pub fn stationary_gibbs(
    a: &AttentionSpec,
    eps: f64,
    grid: &CircleGrid,
    branch: Branch,
    opts: GibbsOptions,
) -> Result<GibbsSolution> {
    let kernel = grid.kernel_matrix(a)?;
    stationary_gibbs_with_kernel(&kernel, eps, grid, branch, opts)
}

pub fn stationary_gibbs_with_kernel(
    kernel: &[f64],
    eps: f64,
    grid: &CircleGrid,
    branch: Branch,
    opts: GibbsOptions,
) -> Result<GibbsSolution> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::invalid("eps must be positive"));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::invalid("damping must lie in (0, 1]"));
    }
    let kappa = (4.0 / eps).min(1e4);
    let mut rho = CircleDensity::von_mises(grid, 0.0, kappa)?.values().to_vec();
    let tau = opts.damping;
    let mut residual = f64::INFINITY;
    for it in 0..opts.max_iter {
        let g = gibbs_map(grid, kernel, &rho, eps)?;
        residual = rho.iter().zip(&g).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if residual < opts.tol {
            // the undamped image is at least as converged, and exact when the kernel is constant
            let g2 = gibbs_map(grid, kernel, &g, eps)?;
            let r2 = g.iter().zip(&g2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let (rho, residual) = if r2 <= residual { (g, r2) } else { (rho, residual) };
            let sol = CircleDensity::from_raw(rho);
            let rho = match branch {
                Branch::Positive => sol,
                Branch::Negative => sol.reflect(),
            };
            return Ok(GibbsSolution { rho, residual, iterations: it });
        }
        for (r, gi) in rho.iter_mut().zip(&g) {
            *r = (1.0 - tau) * *r + tau * gi;
        }
        // keep the mean exactly one against rounding drift
        let mean = rho.iter().sum::<f64>() / rho.len() as f64;
        rho.iter_mut().for_each(|r| *r /= mean);
    }
    Err(Error::NotConverged { iterations: opts.max_iter, residual })
}

/// `sup |ρ - G(ρ)|`
pub fn gibbs_residual(grid: &CircleGrid, kernel: &[f64], rho: &CircleDensity, eps: f64) -> Result<f64> {
    let g = gibbs_map(grid, kernel, rho.values(), eps)?;
    Ok(rho.values().iter().zip(&g).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}
