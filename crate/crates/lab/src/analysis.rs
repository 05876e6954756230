//! Grid-side analyses at `eps_rate`: escape profile and rate fit, escape
//! consistency, stationary state and landscape report.

use serde::{Deserialize, Serialize};
use turnpike_core::meanfield::{
    backward_costate, linear_response, one_gd_path, rayleigh_rate, visibility_factor, Branch, CircleDensity,
    ControlCoupling, CostateOptions, CostatePath, DensityEvolver, GibbsOptions, Linearization,
};
use turnpike_core::objectives::Loss;
use turnpike_core::attention::landscape_constants;
use turnpike_core::{AttentionSpec, FeatureMap, LandscapeConstants};

use crate::config::RateConfig;
use crate::error::LabResult;
use crate::fit::{fit_terminal_rate, last_window, FitResult};

/// Stationary state, costate and one-step-GD control for one loss.
pub struct GridProblem {
    pub lin: Linearization,
    pub g: Vec<f64>,
    pub rayleigh_rate: f64,
    pub costate: CostatePath,
    pub coupling: ControlCoupling,
}

impl GridProblem {
    pub fn new(a: &AttentionSpec, eps: f64, m: usize, loss: &Loss, sigma: FeatureMap, horizon: f64) -> LabResult<Self> {
        let lin = Linearization::new(a, eps, m, GibbsOptions::default())?;
        let g = loss.functional_derivative_on_grid(&lin.grid, lin.rho_bar())?;
        let rayleigh_rate = rayleigh_rate(&g, &lin.hessian, &lin.laplacian)?;
        let costate = backward_costate(&g, &lin.hessian, &lin.laplacian, horizon, CostateOptions::default())?;
        let coupling = ControlCoupling::new(&lin.grid, lin.rho_bar(), sigma)?;
        Ok(Self { lin, g, rayleigh_rate, costate, coupling })
    }

    pub fn evolver(&self) -> LabResult<DensityEvolver<'_>> {
        Ok(DensityEvolver::new(&self.lin.grid, &self.lin.kernel, self.coupling.feature_map(), self.lin.eps)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub param: f64,
    pub rayleigh_rate: f64,
    /// learning rate actually applied, `alpha / ‖g‖_{H⁻¹}`
    pub alpha: f64,
    pub fit: FitResult,
    /// `(t, Δ(ρ_t))` along the one-step-GD escape
    pub profile: Vec<(f64, f64)>,
}

/// Evolves `ρ̄` under the one-step-GD control and fits the terminal lift of its gap.
///
/// The learning rate is taken relative to `‖g‖_{H⁻¹}` so losses of very different
/// size produce escapes of comparable amplitude; the fitted rate does not depend on it.
pub fn escape_rate(
    a: &AttentionSpec,
    eps: f64,
    m: usize,
    loss: &Loss,
    sigma: FeatureMap,
    rate: &RateConfig,
    bin_width: f64,
    param: f64,
) -> LabResult<RatePoint> {
    let gp = GridProblem::new(a, eps, m, loss, sigma, rate.horizon)?;
    let alpha = rate.alpha / gp.lin.hessian.norm_hinv_sq(&gp.g)?.sqrt();
    let w = one_gd_path(&gp.costate, &gp.coupling, alpha, bin_width)?;
    let path = gp.evolver()?.evolve(gp.lin.rho_bar(), Some(&w), rate.horizon, rate.dt)?;
    let mut profile = Vec::with_capacity(path.times.len());
    for (t, rho) in path.times.iter().zip(&path.densities) {
        profile.push((*t, gp.lin.gap(rho)?));
    }
    let fit = fit_terminal_rate(&profile, last_window(rate.horizon, rate.window), rate.floor)?;
    Ok(RatePoint { param, rayleigh_rate: gp.rayleigh_rate, alpha, fit, profile })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeRow {
    pub alpha: f64,
    /// `Δ(ρ_T)` of the nonlinear grid run
    pub gap: f64,
    /// `½‖h_T‖²_H` with `h_T` from the tangent-linear model of the same discrete run
    pub predicted: f64,
    pub ratio: f64,
    /// `½α²‖ζ_T‖²_H` with `ζ` the continuous-forcing linear response
    pub predicted_continuum: f64,
    pub ratio_continuum: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CauchySchwarzRow {
    pub t: f64,
    /// `Ω_{t,T} ‖φ_t‖_{H⁻¹}`
    pub lhs: f64,
    /// `‖H^{1/2} ζ_t‖`
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeReport {
    pub horizon: f64,
    pub eps: f64,
    pub rows: Vec<EscapeRow>,
    pub cauchy_schwarz: Vec<CauchySchwarzRow>,
}

/// Quadratic-expansion check of the one-step escape at each learning rate in `alphas`.
pub fn escape_consistency(
    a: &AttentionSpec,
    eps: f64,
    m: usize,
    loss: &Loss,
    sigma: FeatureMap,
    horizon: f64,
    dt: f64,
    bin_width: f64,
    alphas: &[f64],
) -> LabResult<EscapeReport> {
    let gp = GridProblem::new(a, eps, m, loss, sigma, horizon)?;
    let ev = gp.evolver()?;
    let h = &gp.lin.hessian;
    let response = linear_response(&gp.costate, &gp.coupling, h, &gp.lin.laplacian, 16)?;
    let zeta_sq = h.norm_h_sq(response.zeta.last().expect("response path is never empty"))?;
    let rb = gp.lin.rho_bar().values();
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let w = one_gd_path(&gp.costate, &gp.coupling, alpha, bin_width)?;
        let path = ev.evolve(gp.lin.rho_bar(), Some(&w), horizon, dt)?;
        let gap = gp.lin.gap(path.terminal())?;
        let tangent = ev.tangent(gp.lin.rho_bar(), &w, horizon, dt)?;
        let h_t: Vec<f64> = tangent.last().expect("tangent path is never empty").iter().zip(rb).map(|(d, r)| d / r).collect();
        let predicted = 0.5 * h.norm_h_sq(&h_t)?;
        let predicted_continuum = 0.5 * alpha * alpha * zeta_sq;
        rows.push(EscapeRow {
            alpha,
            gap,
            predicted,
            ratio: gap / predicted,
            predicted_continuum,
            ratio_continuum: gap / predicted_continuum,
        });
    }
    let n = gp.costate.times.len() - 1;
    let mut cauchy_schwarz = Vec::new();
    for frac in [0.75, 0.5, 0.1] {
        let j = n - (frac / (horizon / n as f64)).round() as usize;
        let omega = visibility_factor(&gp.costate, &gp.coupling, h, j)?;
        let phi = h.norm_hinv_sq(&gp.costate.phi[j])?.sqrt();
        cauchy_schwarz.push(CauchySchwarzRow { t: gp.costate.times[j], lhs: omega * phi, rhs: h.norm_h_sq(&response.zeta[j])?.sqrt() });
    }
    Ok(EscapeReport { horizon, eps, rows, cauchy_schwarz })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryReport {
    pub eps: f64,
    pub m: usize,
    pub iterations: usize,
    pub residual: f64,
    /// `sup |ρ̄(θ) - ρ̄(-θ)|`
    pub mirror_defect: f64,
    /// `sup |ρ̄₋(θ) - ρ̄₊(θ + π)|`
    pub antipodal_defect: f64,
    pub second_moment: f64,
    pub sigma_eps_sq: f64,
    pub second_moment_ratio: f64,
}

pub fn stationary(a: &AttentionSpec, eps: f64, m: usize) -> LabResult<(StationaryReport, CircleDensity, CircleDensity)> {
    use turnpike_core::meanfield::{stationary_gibbs_with_kernel, CircleGrid};
    let grid = CircleGrid::new(m)?;
    let kernel = grid.kernel_matrix(a)?;
    let pos = stationary_gibbs_with_kernel(&kernel, eps, &grid, Branch::Positive, GibbsOptions::default())?;
    let neg = stationary_gibbs_with_kernel(&kernel, eps, &grid, Branch::Negative, GibbsOptions::default())?;
    let v = pos.rho.values();
    let mirror_defect = (0..m).map(|i| (v[i] - v[grid.mirror_index(i)]).abs()).fold(0.0, f64::max);
    let antipodal_defect = (0..m).map(|i| (neg.rho.values()[i] - v[grid.antipodal_index(i)]).abs()).fold(0.0, f64::max);
    let second_moment = pos.rho.second_moment_about_mode(&grid);
    let sigma_eps_sq = landscape_constants(a, eps).sigma_eps_sq;
    let report = StationaryReport {
        eps,
        m,
        iterations: pos.iterations,
        residual: pos.residual,
        mirror_defect,
        antipodal_defect,
        second_moment,
        sigma_eps_sq,
        second_moment_ratio: second_moment / sigma_eps_sq,
    };
    Ok((report, pos.rho, neg.rho))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeReport {
    pub lambda1: f64,
    pub lambda2: f64,
    pub eps: f64,
    pub m: usize,
    pub constants: LandscapeConstants,
    /// `λ₁ > λ₂ ≥ 0` with `λ₁ > 0`; spectral claims are skipped otherwise
    pub assumption_holds: bool,
    pub spectral: Option<SpectralReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub h_min: f64,
    pub h_max: f64,
    /// `0.4 (ε/2)(1 - λ₂/λ₁)`
    pub window_lower: f64,
    pub window_upper: f64,
    pub within_window: bool,
    pub gibbs_residual: f64,
    pub second_moment: f64,
    pub second_moment_ratio: f64,
    pub spectrum: Vec<f64>,
}

pub fn landscape(a: &AttentionSpec, eps: f64, m: usize) -> LabResult<LandscapeReport> {
    let constants = landscape_constants(a, eps);
    let assumption_holds = a.is_nondegenerate();
    let spectral = if assumption_holds {
        let lin = Linearization::new(a, eps, m, GibbsOptions::default())?;
        let spectrum = lin.hessian.spectrum();
        let h_min = spectrum[0];
        let h_max = spectrum[spectrum.len() - 1];
        let window_lower = 0.4 * constants.hessian_lower_scale;
        let window_upper = eps * (1.0 + 1e-6);
        let second_moment = lin.rho_bar().second_moment_about_mode(&lin.grid);
        Some(SpectralReport {
            h_min,
            h_max,
            window_lower,
            window_upper,
            within_window: h_min >= window_lower && h_max <= window_upper,
            gibbs_residual: lin.gibbs.residual,
            second_moment,
            second_moment_ratio: second_moment / constants.sigma_eps_sq,
            spectrum,
        })
    } else {
        None
    };
    Ok(LandscapeReport { lambda1: a.lambda1(), lambda2: a.lambda2(), eps, m, constants, assumption_holds, spectral })
}
