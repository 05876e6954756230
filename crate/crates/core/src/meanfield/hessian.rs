use nalgebra::{DMatrix, DVector, SymmetricEigen, LU};

use super::grid::{CircleDensity, CircleGrid};
use crate::error::{Error, Result};

const MEAN_TOL: f64 = 1e-8;

/// `H h = ε h - Π₀ ∫ e^{<x, A y>} h(y) dμ̄(y)` on μ̄-mean-zero grid functions.
pub struct Hessian {
    eps: f64,
    rho_bar: CircleDensity,
    /// dense `M x M` action (row-major in nalgebra storage)
    mat: DMatrix<f64>,
    /// bordered system `[[H, 1], [ρ̄ᵀ/M, 0]]`
    bordered: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl Hessian {
    pub fn new(grid: &CircleGrid, kernel: &[f64], rho_bar: &CircleDensity, eps: f64) -> Result<Self> {
        super::grid::check_len(grid, rho_bar)?;
        if !rho_bar.is_strictly_positive() {
            return Err(Error::invalid("Hessian needs a strictly positive reference density"));
        }
        if !(eps > 0.0) {
            return Err(Error::invalid("eps must be positive"));
        }
        let m = grid.m();
        let inv_m = 1.0 / m as f64;
        let r = rho_bar.values();
        // (K D / M)_{mn} = K_mn ρ̄_n / M, then Π₀ subtracts the ρ̄-weighted column mean
        let mut kd = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                kd[(i, j)] = kernel[i * m + j] * r[j] * inv_m;
            }
        }
        let w: Vec<f64> = r.iter().map(|v| v * inv_m).collect();
        let mut col_mean = vec![0.0; m];
        for j in 0..m {
            col_mean[j] = (0..m).map(|i| w[i] * kd[(i, j)]).sum();
        }
        let mut mat = DMatrix::<f64>::zeros(m, m);
        for j in 0..m {
            for i in 0..m {
                mat[(i, j)] = -(kd[(i, j)] - col_mean[j]);
            }
            mat[(j, j)] += eps;
        }
        let mut b = DMatrix::<f64>::zeros(m + 1, m + 1);
        b.view_mut((0, 0), (m, m)).copy_from(&mat);
        for i in 0..m {
            b[(i, m)] = 1.0;
            b[(m, i)] = w[i];
        }
        let bordered = b.lu();
        if !bordered.is_invertible() {
            return Err(Error::Singular("bordered Hessian"));
        }
        Ok(Self { eps, rho_bar: rho_bar.clone(), mat, bordered })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn rho_bar(&self) -> &CircleDensity {
        &self.rho_bar
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn m(&self) -> usize {
        self.mat.nrows()
    }

    pub fn apply(&self, h: &[f64]) -> Vec<f64> {
        (&self.mat * DVector::from_column_slice(h)).as_slice().to_vec()
    }

    fn check_mean_zero(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.m() {
            return Err(Error::DimensionMismatch { expected: self.m(), got: z.len() });
        }
        let mean = self.rho_bar.mean_of(z);
        if mean.abs() > MEAN_TOL {
            return Err(Error::NotMeanZero { mean });
        }
        Ok(())
    }

    /// Mean-zero `z'` with `H z' = Π₀ z`.
    pub fn solve_hinv(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_mean_zero(z)?;
        let rhs = self.rho_bar.center(z);
        let mut b = DVector::<f64>::zeros(self.m() + 1);
        b.rows_mut(0, self.m()).copy_from_slice(&rhs);
        let x = self.bordered.solve(&b).ok_or(Error::Singular("bordered Hessian"))?;
        Ok(x.as_slice()[..self.m()].to_vec())
    }

    /// `‖z‖²_H = <H z, z>_{L²(μ̄)}`
    pub fn norm_h_sq(&self, z: &[f64]) -> Result<f64> {
        self.check_mean_zero(z)?;
        Ok(self.rho_bar.inner(&self.apply(z), z))
    }

    /// `‖z‖²_{H⁻¹} = <H⁻¹ z, z>_{L²(μ̄)}`
    pub fn norm_hinv_sq(&self, z: &[f64]) -> Result<f64> {
        let s = self.solve_hinv(z)?;
        Ok(self.rho_bar.inner(&s, z))
    }

    /// Eigenvalues of `H` on the mean-zero subspace, ascending.
    ///
    /// Uses the symmetric form `S H S⁻¹` with `S = diag(√(ρ̄/M))`; the constant
    /// direction is pushed below the spectrum and dropped.
    pub fn spectrum(&self) -> Vec<f64> {
        let m = self.m();
        let s: Vec<f64> = self.rho_bar.values().iter().map(|r| (r / m as f64).sqrt()).collect();
        let mut sym = DMatrix::<f64>::zeros(m, m);
        for j in 0..m {
            for i in 0..m {
                sym[(i, j)] = s[i] * self.mat[(i, j)] / s[j];
            }
        }
        // symmetrize away rounding, then deflate the constant direction
        let sym = (&sym + sym.transpose()) * 0.5;
        let shift = -1.0 - sym.norm();
        let sv = DVector::from_column_slice(&s);
        let proj = DMatrix::<f64>::identity(m, m) - &sv * sv.transpose();
        let mut t = &proj * sym * &proj;
        t += &sv * sv.transpose() * shift;
        let mut ev: Vec<f64> = SymmetricEigen::new(t).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev.remove(0);
        ev
    }

    /// Largest asymmetry of `H` under the `L²(μ̄)` inner product.
    pub fn self_adjointness_defect(&self) -> f64 {
        let m = self.m();
        let r = self.rho_bar.values();
        let mut worst: f64 = 0.0;
        for i in 0..m {
            for j in 0..i {
                worst = worst.max((r[i] * self.mat[(i, j)] - r[j] * self.mat[(j, i)]).abs());
            }
        }
        worst / m as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionSpec;

    #[test]
    fn zero_kernel_is_scaled_identity() {
        let g = CircleGrid::new(64).unwrap();
        let k = g.kernel_matrix(&AttentionSpec::zeros(2)).unwrap();
        let u = CircleDensity::uniform(&g);
        let h = Hessian::new(&g, &k, &u, 0.2).unwrap();
        let z: Vec<f64> = g.theta().iter().map(|t| (3.0 * t).sin() + 0.5 * t.cos()).collect();
        let hz = h.apply(&z);
        for (a, b) in hz.iter().zip(&z) {
            assert!((a - 0.2 * b).abs() < 1e-14);
        }
        let n2 = u.inner(&z, &z);
        assert!((h.norm_hinv_sq(&z).unwrap() - n2 / 0.2).abs() < 1e-12);
        for e in h.spectrum() {
            assert!((e - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_centered_input() {
        let g = CircleGrid::new(64).unwrap();
        let k = g.kernel_matrix(&AttentionSpec::zeros(2)).unwrap();
        let h = Hessian::new(&g, &k, &CircleDensity::uniform(&g), 0.2).unwrap();
        assert!(matches!(h.solve_hinv(&vec![1.0; 64]), Err(Error::NotMeanZero { .. })));
    }
}
