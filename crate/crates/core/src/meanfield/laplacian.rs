use nalgebra::DMatrix;

use super::grid::{CircleDensity, CircleGrid};
use crate::error::{Error, Result};

/// Conservative weighted Laplacian `ρ̄⁻¹ ∂_θ(ρ̄ ∂_θ ·)` with arithmetic face values.
#[derive(Clone, Debug)]
pub struct WeightedLaplacian {
    h: f64,
    rho: Vec<f64>,
    /// `ρ̄_{m+½} = (ρ̄_m + ρ̄_{m+1}) / 2`
    faces: Vec<f64>,
}

impl WeightedLaplacian {
    pub fn new(grid: &CircleGrid, rho_bar: &CircleDensity) -> Result<Self> {
        super::grid::check_len(grid, rho_bar)?;
        if !rho_bar.is_strictly_positive() {
            return Err(Error::invalid("weighted Laplacian needs a strictly positive density"));
        }
        let r = rho_bar.values().to_vec();
        let m = r.len();
        let faces = (0..m).map(|i| 0.5 * (r[i] + r[(i + 1) % m])).collect();
        Ok(Self { h: grid.h(), rho: r, faces })
    }

    pub fn m(&self) -> usize {
        self.rho.len()
    }

    pub fn apply(&self, phi: &[f64]) -> Vec<f64> {
        let m = self.m();
        let h2 = self.h * self.h;
        (0..m)
            .map(|i| {
                let ip = (i + 1) % m;
                let im = (i + m - 1) % m;
                (self.faces[i] * (phi[ip] - phi[i]) - self.faces[im] * (phi[i] - phi[im])) / (h2 * self.rho[i])
            })
            .collect()
    }

    /// `-<Δ φ, φ>_{L²(μ̄)} = (1/M) Σ_faces ρ̄_{m+½} ((φ_{m+1} - φ_m)/h)²`
    pub fn dirichlet_form(&self, phi: &[f64]) -> f64 {
        let m = self.m();
        (0..m)
            .map(|i| {
                let d = (phi[(i + 1) % m] - phi[i]) / self.h;
                self.faces[i] * d * d
            })
            .sum::<f64>()
            / m as f64
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let m = self.m();
        let h2 = self.h * self.h;
        let mut l = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            let ip = (i + 1) % m;
            let im = (i + m - 1) % m;
            let c = 1.0 / (h2 * self.rho[i]);
            l[(i, ip)] += c * self.faces[i];
            l[(i, im)] += c * self.faces[im];
            l[(i, i)] -= c * (self.faces[i] + self.faces[im]);
        }
        l
    }
}
