use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionSpec, DiscreteMeasure};
use crate::error::{Error, Result};

/// Uniform grid `θ_m = 2πm/M` on the circle.
///
/// Node coordinates are built so that the reflections `θ ↦ -θ` and
/// `θ ↦ θ + π` map nodes onto nodes bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct CircleGrid {
    m: usize,
    theta: Vec<f64>,
    /// `(cos θ_m, sin θ_m)`, row-major
    coords: Vec<f64>,
}

impl CircleGrid {
    pub fn new(m: usize) -> Result<Self> {
        if m < 64 || m % 2 != 0 {
            return Err(Error::invalid(format!("grid size must be even and >= 64, got {m}")));
        }
        let half = m / 2;
        let mut cs = vec![(0.0, 0.0); half + 1];
        if m % 4 == 0 {
            let q = m / 4;
            for (j, c) in cs.iter_mut().enumerate().take(q) {
                let t = 2.0 * PI * j as f64 / m as f64;
                *c = (t.cos(), t.sin());
            }
            cs[0] = (1.0, 0.0);
            cs[q] = (0.0, 1.0);
            for j in (q + 1)..=half {
                let (c, s) = cs[half - j];
                cs[j] = (-c, s);
            }
        } else {
            for (j, c) in cs.iter_mut().enumerate() {
                let t = 2.0 * PI * j as f64 / m as f64;
                *c = (t.cos(), t.sin());
            }
            cs[0] = (1.0, 0.0);
            cs[half] = (-1.0, 0.0);
        }
        let mut coords = vec![0.0; 2 * m];
        for j in 0..m {
            let (c, s) = if j <= half { cs[j] } else { (cs[m - j].0, -cs[m - j].1) };
            coords[2 * j] = c;
            coords[2 * j + 1] = s;
        }
        let theta = (0..m).map(|j| 2.0 * PI * j as f64 / m as f64).collect();
        Ok(Self { m, theta, coords })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Node spacing `2π/M`.
    pub fn h(&self) -> f64 {
        2.0 * PI / self.m as f64
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn x(&self, m: usize) -> &[f64] {
        &self.coords[2 * m..2 * m + 2]
    }

    /// Unit tangent `(-sin θ, cos θ)`.
    pub fn tangent(&self, m: usize) -> [f64; 2] {
        let x = self.x(m);
        [-x[1], x[0]]
    }

    /// Kernel matrix `e^{<x_m, A x_n>}`, row-major `M x M`.
    pub fn kernel_matrix(&self, a: &AttentionSpec) -> Result<Vec<f64>> {
        if a.dim() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: a.dim() });
        }
        let m = self.m;
        let mut k = vec![0.0; m * m];
        let mut ax = [0.0; 2];
        for i in 0..m {
            a.apply_into(self.x(i), &mut ax);
            for j in i..m {
                let xj = self.x(j);
                let v = (ax[0] * xj[0] + ax[1] * xj[1]).exp();
                k[i * m + j] = v;
                k[j * m + i] = v;
            }
        }
        Ok(k)
    }

    /// `(1/M) Σ_n K_mn ρ_n`
    pub fn potential(&self, kernel: &[f64], rho: &[f64]) -> Vec<f64> {
        let m = self.m;
        let inv = 1.0 / m as f64;
        kernel.chunks_exact(m).map(|row| row.iter().zip(rho).map(|(k, r)| k * r).sum::<f64>() * inv).collect()
    }

    /// Index of the node `θ_m + π`.
    pub fn antipodal_index(&self, i: usize) -> usize {
        (i + self.m / 2) % self.m
    }

    /// Index of the node `-θ_m`.
    pub fn mirror_index(&self, i: usize) -> usize {
        (self.m - i) % self.m
    }
}

/// Grid density relative to the uniform probability measure on the circle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircleDensity {
    values: Vec<f64>,
}

impl CircleDensity {
    /// Validates nonnegativity, finiteness and unit mean.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::invalid(format!("density value at node {i} is not finite")));
            }
            if v < 0.0 {
                return Err(Error::NegativeDensity { node: i, value: v });
            }
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        if (mean - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("density mean {mean} is not 1")));
        }
        Ok(Self { values })
    }

    /// Rescales nonnegative values to unit mean.
    pub fn normalize(mut values: Vec<f64>) -> Result<Self> {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        if !(mean > 0.0) || !mean.is_finite() {
            return Err(Error::invalid("cannot normalize a density with zero or non-finite mass"));
        }
        values.iter_mut().for_each(|v| *v /= mean);
        Self::new(values)
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn uniform(grid: &CircleGrid) -> Self {
        Self { values: vec![1.0; grid.m()] }
    }

    /// Grid restriction of the von Mises density with mean direction `mu` (angle).
    pub fn von_mises(grid: &CircleGrid, mu: f64, kappa: f64) -> Result<Self> {
        let (c, s) = (mu.cos(), mu.sin());
        let (c, s) = if mu == 0.0 { (1.0, 0.0) } else { (c, s) };
        let v = (0..grid.m())
            .map(|i| {
                let x = grid.x(i);
                (kappa * (c * x[0] + s * x[1] - 1.0)).exp()
            })
            .collect();
        Self::normalize(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// `ρ(θ + π)`
    pub fn reflect(&self) -> Self {
        let m = self.values.len();
        Self { values: (0..m).map(|i| self.values[(i + m / 2) % m]).collect() }
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.values.iter().all(|&v| v > 0.0)
    }

    /// `(1/M) Σ ρ_m f_m`
    pub fn mean_of(&self, f: &[f64]) -> f64 {
        self.values.iter().zip(f).map(|(r, v)| r * v).sum::<f64>() / self.values.len() as f64
    }

    /// `Π₀ f = f - <f>_ρ`
    pub fn center(&self, f: &[f64]) -> Vec<f64> {
        let c = self.mean_of(f);
        f.iter().map(|v| v - c).collect()
    }

    /// `<f, g>_{L²(ρ)}`
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.values.iter().zip(f).zip(g).map(|((r, a), b)| r * a * b).sum::<f64>() / self.values.len() as f64
    }

    pub fn l1_distance(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum::<f64>() / self.values.len() as f64
    }

    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Angular second moment `(1/M) Σ ρ_m (θ_m - θ_mode)²` about the mode, angles wrapped to `(-π, π]`.
    pub fn second_moment_about_mode(&self, grid: &CircleGrid) -> f64 {
        let mode = self
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let t0 = grid.theta()[mode];
        self.values
            .iter()
            .zip(grid.theta())
            .map(|(r, t)| {
                let a = crate::sphere::wrap_angle(t - t0);
                r * a * a
            })
            .sum::<f64>()
            / self.values.len() as f64
    }
}

/// The weighted point measure `Σ_m (ρ_m/M) δ_{x_m}`.
pub struct GridMeasure<'a> {
    pub grid: &'a CircleGrid,
    pub rho: &'a CircleDensity,
}

impl DiscreteMeasure for GridMeasure<'_> {
    fn dim(&self) -> usize {
        2
    }
    fn len(&self) -> usize {
        self.grid.m()
    }
    fn point(&self, i: usize) -> &[f64] {
        self.grid.x(i)
    }
    fn weight(&self, i: usize) -> f64 {
        self.rho.values()[i] / self.grid.m() as f64
    }
}

/// `ε (1/M) Σ ρ log ρ` with `0 log 0 = 0`.
pub fn entropy(rho: &CircleDensity, eps: f64) -> Result<f64> {
    let mut s = 0.0;
    for (i, &v) in rho.values().iter().enumerate() {
        if v < 0.0 {
            return Err(Error::NegativeDensity { node: i, value: v });
        }
        if v > 0.0 {
            s += v * v.ln();
        }
    }
    Ok(eps * s / rho.len() as f64)
}

/// `-½ (1/M²) Σ Σ K_mn ρ_m ρ_n`
pub fn grid_interaction(grid: &CircleGrid, kernel: &[f64], rho: &CircleDensity) -> f64 {
    -0.5 * rho.mean_of(&grid.potential(kernel, rho.values()))
}

/// Free energy `E_{ε,A}` on the grid.
pub fn energy(grid: &CircleGrid, kernel: &[f64], rho: &CircleDensity, eps: f64) -> Result<f64> {
    check_len(grid, rho)?;
    Ok(entropy(rho, eps)? + grid_interaction(grid, kernel, rho))
}

/// `(E(ρ), E(ρ) - E(ρ̄))`.
///
/// The gap is evaluated from `δ = ρ - ρ̄` directly rather than as a difference
/// of two energies, so it keeps full relative accuracy for tiny perturbations.
/// Both densities are taken to be probability densities: the first-variation
/// term is paired with `δ` only after removing its constant part, so rounding
/// in the total mass does not leak into the gap.
pub fn energy_and_gap(
    grid: &CircleGrid,
    kernel: &[f64],
    rho: &CircleDensity,
    rho_bar: &CircleDensity,
    eps: f64,
) -> Result<(f64, f64)> {
    let e = energy(grid, kernel, rho, eps)?;
    check_len(grid, rho_bar)?;
    if !rho_bar.is_strictly_positive() {
        return Ok((e, e - energy(grid, kernel, rho_bar, eps)?));
    }
    let m = grid.m() as f64;
    let rb = rho_bar.values();
    let delta: Vec<f64> = rho.values().iter().zip(rb).map(|(a, b)| a - b).collect();
    let w_bar = grid.potential(kernel, rb);
    // first variation ψ = ε(1 + log ρ̄) - W_ρ̄, nearly constant at a Gibbs state
    let psi: Vec<f64> = rb.iter().zip(&w_bar).map(|(r, w)| eps * (1.0 + r.ln()) - w).collect();
    let psi0 = psi.iter().sum::<f64>() / m;
    let linear = delta.iter().zip(&psi).map(|(d, p)| d * (p - psi0)).sum::<f64>() / m;
    let ent = eps * rb.iter().zip(&delta).map(|(r, d)| r * bregman_xlogx(d / r)).sum::<f64>() / m;
    let quad = -0.5 * delta.iter().zip(grid.potential(kernel, &delta)).map(|(d, w)| d * w).sum::<f64>() / m;
    Ok((e, linear + ent + quad))
}

/// `(1+x) log(1+x) - x`
fn bregman_xlogx(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        // Σ_{k≥2} (-x)^k / (k (k-1))
        let mut s = 0.0;
        let mut p = x * x;
        for k in 2..12 {
            let kf = k as f64;
            s += if k % 2 == 0 { p } else { -p } / (kf * (kf - 1.0));
            p *= x;
        }
        s
    } else if x == -1.0 {
        1.0
    } else {
        (1.0 + x) * x.ln_1p() - x
    }
}

pub(crate) fn check_len(grid: &CircleGrid, rho: &CircleDensity) -> Result<()> {
    if rho.len() != grid.m() {
        return Err(Error::DimensionMismatch { expected: grid.m(), got: rho.len() });
    }
    Ok(())
}
