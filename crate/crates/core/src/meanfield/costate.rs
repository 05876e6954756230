use nalgebra::{DMatrix, DVector};

use super::grid::{CircleDensity, CircleGrid};
use super::hessian::Hessian;
use super::laplacian::WeightedLaplacian;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::particles::ControlPath;

const ZERO_SIGNAL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostateOptions {
    /// spacing of the stored time grid (upper bound; adjusted to divide `T`)
    pub output_step: f64,
    /// implicit Euler substeps per output interval, rounded up to a power of two
    pub substeps: usize,
}

impl Default for CostateOptions {
    fn default() -> Self {
        Self { output_step: 0.01, substeps: 128 }
    }
}

/// Solution of `∂_t φ + H Δ_ρ̄ φ = 0`, `φ_T = g`, on an ascending time grid.
#[derive(Clone, Debug)]
pub struct CostatePath {
    pub times: Vec<f64>,
    pub phi: Vec<Vec<f64>>,
    pub g: Vec<f64>,
}

impl CostatePath {
    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("costate path is never empty")
    }

    /// Linear interpolation in time.
    pub fn at(&self, t: f64) -> Vec<f64> {
        let (j, w) = locate(&self.times, t);
        if w == 0.0 {
            return self.phi[j].clone();
        }
        self.phi[j].iter().zip(&self.phi[j + 1]).map(|(a, b)| (1.0 - w) * a + w * b).collect()
    }
}

/// Interval index and weight of `t` in an ascending uniform grid.
pub(crate) fn locate(times: &[f64], t: f64) -> (usize, f64) {
    let n = times.len() - 1;
    let dt = (times[n] - times[0]) / n as f64;
    let s = ((t - times[0]) / dt).clamp(0.0, n as f64);
    let j = (s.floor() as usize).min(n.saturating_sub(1));
    let w = s - j as f64;
    if n == 0 || w <= 0.0 {
        (j, 0.0)
    } else {
        (j, w.min(1.0))
    }
}

fn dense_inverse(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.try_inverse().ok_or(Error::Singular("implicit Euler factorization"))
}

/// Implicit Euler in reversed time with step `output_step / 2^k`.
///
/// The one-interval propagator `(I - ds H Δ_ρ̄)^{-2^k}` is formed by repeated
/// squaring and reused for every output interval.
pub fn backward_costate(
    g: &[f64],
    hessian: &Hessian,
    laplacian: &WeightedLaplacian,
    horizon: f64,
    opts: CostateOptions,
) -> Result<CostatePath> {
    let m = hessian.m();
    if g.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: g.len() });
    }
    let mean = hessian.rho_bar().mean_of(g);
    if mean.abs() > 1e-10 {
        return Err(Error::NotMeanZero { mean });
    }
    if !(horizon > 0.0) || !(opts.output_step > 0.0) || opts.substeps == 0 {
        return Err(Error::invalid("costate horizon, step and substeps must be positive"));
    }
    let intervals = ((horizon / opts.output_step) - 1e-9).ceil().max(1.0) as usize;
    let dt = horizon / intervals as f64;
    let squarings = opts.substeps.next_power_of_two().trailing_zeros();
    let ds = dt / (1u64 << squarings) as f64;
    let hl = hessian.matrix() * laplacian.to_dense();
    let mut prop = dense_inverse(DMatrix::identity(m, m) - hl * ds)?;
    for _ in 0..squarings {
        prop = &prop * &prop;
    }
    let mut phi = vec![g.to_vec(); intervals + 1];
    let mut cur = DVector::from_column_slice(g);
    for j in (0..intervals).rev() {
        cur = &prop * cur;
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: j, what: "costate" });
        }
        phi[j] = cur.as_slice().to_vec();
    }
    let times = (0..=intervals).map(|j| j as f64 * dt).collect();
    Ok(CostatePath { times, phi, g: g.to_vec() })
}

/// `R_ρ̄(g) = ‖∇g‖²_{L²(μ̄)} / ‖g‖²_{H⁻¹}` with the numerator as the Dirichlet form of `Δ_ρ̄`.
///
/// Fails with `ZeroSignal` for `g ≈ 0`; callers treat that case as a zero rate.
pub fn rayleigh_rate(g: &[f64], hessian: &Hessian, laplacian: &WeightedLaplacian) -> Result<f64> {
    let l2 = hessian.rho_bar().inner(g, g).sqrt();
    if !(l2 > ZERO_SIGNAL) {
        return Err(Error::ZeroSignal("Rayleigh rate of a vanishing loss derivative"));
    }
    let den = hessian.norm_hinv_sq(g)?;
    Ok(laplacian.dirichlet_form(g) / den)
}

/// The control coupling `B* z = ∫ ∇z σᵀ dμ̄` and its `L²(μ̄)` adjoint `B` on the grid.
#[derive(Clone, Debug)]
pub struct ControlCoupling {
    h: f64,
    p: usize,
    rho: Vec<f64>,
    /// `σ(x_m)`, row-major `M x p`
    sig: Vec<f64>,
    tau: Vec<[f64; 2]>,
    sigma: FeatureMap,
}

impl ControlCoupling {
    pub fn new(grid: &CircleGrid, rho_bar: &CircleDensity, sigma: FeatureMap) -> Result<Self> {
        sigma.check_dim(2)?;
        super::grid::check_len(grid, rho_bar)?;
        let p = sigma.output_dim();
        let m = grid.m();
        let mut sig = vec![0.0; m * p];
        for i in 0..m {
            sigma.eval_into(grid.x(i), &mut sig[i * p..(i + 1) * p]);
        }
        let tau = (0..m).map(|i| grid.tangent(i)).collect();
        Ok(Self { h: grid.h(), p, rho: rho_bar.values().to_vec(), sig, tau, sigma })
    }

    pub fn feature_map(&self) -> FeatureMap {
        self.sigma
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// `(1/M) Σ_m ρ̄_m (∂_θ z)_m τ_m σ_mᵀ`, centered differences; row-major `2 x p`.
    pub fn b_star(&self, z: &[f64]) -> Vec<f64> {
        let m = self.rho.len();
        let p = self.p;
        let mut out = vec![0.0; 2 * p];
        for i in 0..m {
            let dz = (z[(i + 1) % m] - z[(i + m - 1) % m]) / (2.0 * self.h);
            let c = self.rho[i] * dz;
            let s = &self.sig[i * p..(i + 1) * p];
            for r in 0..2 {
                let cr = c * self.tau[i][r];
                out[r * p..(r + 1) * p].iter_mut().zip(s).for_each(|(o, sv)| *o += cr * sv);
            }
        }
        out.iter_mut().for_each(|v| *v /= m as f64);
        out
    }

    /// `B W = -ρ̄⁻¹ ∂_θ(ρ̄ <W σ, τ>)`, the exact discrete adjoint of `b_star`.
    pub fn b_apply(&self, w: &[f64]) -> Vec<f64> {
        let m = self.rho.len();
        let p = self.p;
        let a: Vec<f64> = (0..m)
            .map(|i| {
                let s = &self.sig[i * p..(i + 1) * p];
                let v: f64 = (0..2).map(|r| self.tau[i][r] * crate::sphere::dot(&w[r * p..(r + 1) * p], s)).sum();
                self.rho[i] * v
            })
            .collect();
        (0..m)
            .map(|i| (a[(i + m - 1) % m] - a[(i + 1) % m]) / (2.0 * self.h * self.rho[i]))
            .collect()
    }
}

fn frob_sq(w: &[f64]) -> f64 {
    w.iter().map(|v| v * v).sum()
}

/// `∫₀^{t_j} ‖B* φ_s‖²_F ds` at every costate time (trapezoid rule).
pub fn visibility_numerators(costate: &CostatePath, coupling: &ControlCoupling) -> Vec<f64> {
    let signal: Vec<f64> = costate.phi.iter().map(|p| frob_sq(&coupling.b_star(p))).collect();
    let mut acc = vec![0.0; signal.len()];
    for j in 1..signal.len() {
        let dt = costate.times[j] - costate.times[j - 1];
        acc[j] = acc[j - 1] + 0.5 * dt * (signal[j - 1] + signal[j]);
    }
    acc
}

/// `Ω_{t,T}` at costate grid index `j`.
pub fn visibility_factor(costate: &CostatePath, coupling: &ControlCoupling, hessian: &Hessian, j: usize) -> Result<f64> {
    if j >= costate.times.len() {
        return Err(Error::invalid("time index outside the costate grid"));
    }
    let den = hessian.norm_hinv_sq(&costate.phi[j])?;
    if !(den.sqrt() >= 1e-14) {
        return Err(Error::ZeroSignal("visibility factor with vanishing costate"));
    }
    if j == 0 {
        return Ok(0.0);
    }
    Ok(visibility_numerators(costate, coupling)[j] / den)
}

/// `W_t = -α B* φ_t` sampled at bin midpoints, `φ` interpolated linearly in time.
pub fn one_gd_path(costate: &CostatePath, coupling: &ControlCoupling, alpha: f64, bin_width: f64) -> Result<ControlPath> {
    if !(alpha > 0.0) {
        return Err(Error::invalid("learning rate must be positive"));
    }
    let horizon = costate.horizon();
    let k = (horizon / bin_width).round();
    if k < 1.0 || (k * bin_width - horizon).abs() > 1e-9 {
        return Err(Error::invalid(format!("horizon {horizon} is not a multiple of bin width {bin_width}")));
    }
    let bins = (0..k as usize)
        .map(|b| {
            let t = (b as f64 + 0.5) * bin_width;
            coupling.b_star(&costate.at(t)).into_iter().map(|v| -alpha * v).collect()
        })
        .collect();
    ControlPath::new(2, coupling.p(), bin_width, bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionSpec;

    #[test]
    fn b_is_adjoint_of_b_star() {
        let g = CircleGrid::new(64).unwrap();
        let rho = CircleDensity::von_mises(&g, 0.2, 3.0).unwrap();
        let c = ControlCoupling::new(&g, &rho, FeatureMap::fourier(1)).unwrap();
        let z: Vec<f64> = g.theta().iter().map(|t| (2.0 * t).cos() - 0.3 * t.sin()).collect();
        let w = [0.3, -1.0, 0.4, 0.8, 0.1, -0.5];
        let lhs: f64 = c.b_star(&z).iter().zip(&w).map(|(a, b)| a * b).sum();
        let rhs = rho.inner(&z, &c.b_apply(&w));
        assert!((lhs - rhs).abs() < 1e-13);
        assert!(rho.mean_of(&c.b_apply(&w)).abs() < 1e-14);
    }

    #[test]
    fn zero_terminal_datum() {
        let g = CircleGrid::new(64).unwrap();
        let a = AttentionSpec::zeros(2);
        let k = g.kernel_matrix(&a).unwrap();
        let u = CircleDensity::uniform(&g);
        let h = Hessian::new(&g, &k, &u, 0.1).unwrap();
        let l = WeightedLaplacian::new(&g, &u).unwrap();
        let path = backward_costate(&vec![0.0; 64], &h, &l, 1.0, CostateOptions::default()).unwrap();
        assert!(path.phi.iter().flatten().all(|v| *v == 0.0));
        assert!(matches!(rayleigh_rate(&vec![0.0; 64], &h, &l), Err(Error::ZeroSignal(_))));
        let c = ControlCoupling::new(&g, &u, FeatureMap::identity(2)).unwrap();
        let w = one_gd_path(&path, &c, 0.1, 0.25).unwrap();
        assert_eq!(w.k(), 4);
        assert!(w.bins.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn locate_handles_ends() {
        let t = [0.0, 0.5, 1.0];
        assert_eq!(locate(&t, 0.0), (0, 0.0));
        assert_eq!(locate(&t, 1.0), (1, 1.0));
        let (j, w) = locate(&t, 0.75);
        assert_eq!(j, 1);
        assert!((w - 0.5).abs() < 1e-15);
    }
}
