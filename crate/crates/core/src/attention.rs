//! The symmetric attention interaction `e^{<x, A y>}` and quantities built from it.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::dot;

const SYM_TOL: f64 = 1e-12;

/// Symmetric attention matrix with its sorted spectrum.
#[derive(Clone, Debug)]
pub struct AttentionSpec {
    d: usize,
    /// row-major `d x d`
    matrix: Vec<f64>,
    /// descending
    eigenvalues: Vec<f64>,
    /// column `k` of the row-major `d x d` array is the eigenvector of `eigenvalues[k]`
    eigenvectors: Vec<f64>,
}

impl AttentionSpec {
    /// Builds a spec and checks positive definiteness with a simple top eigenvalue.
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let spec = Self::new_unchecked(rows)?;
        spec.check_nondegenerate()?;
        Ok(spec)
    }

    /// `A = diag(entries)`, validated.
    pub fn diagonal(entries: &[f64]) -> Result<Self> {
        Self::new(&diag_rows(entries))
    }

    /// Symmetric-only construction for degenerate test matrices (`A = 0`, repeated eigenvalues).
    pub fn new_unchecked(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if d == 0 {
            return Err(Error::invalid("attention matrix must be non-empty"));
        }
        let mut matrix = Vec::with_capacity(d * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: row.len() });
            }
            matrix.extend_from_slice(row);
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("attention matrix has non-finite entries"));
        }
        for i in 0..d {
            for j in 0..i {
                if (matrix[i * d + j] - matrix[j * d + i]).abs() > SYM_TOL {
                    return Err(Error::invalid("attention matrix is not symmetric"));
                }
            }
        }
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &matrix));
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let mut eigenvectors = vec![0.0; d * d];
        for (col, &k) in order.iter().enumerate() {
            for row in 0..d {
                eigenvectors[row * d + col] = eig.eigenvectors[(row, k)];
            }
        }
        Ok(Self { d, matrix, eigenvalues, eigenvectors })
    }

    pub fn diagonal_unchecked(entries: &[f64]) -> Result<Self> {
        Self::new_unchecked(&diag_rows(entries))
    }

    pub fn zeros(d: usize) -> Self {
        Self::new_unchecked(&vec![vec![0.0; d]; d]).expect("zero matrix is symmetric")
    }

    /// Positive definite with `λ₁ > λ₂`.
    pub fn check_nondegenerate(&self) -> Result<()> {
        if self.eigenvalues.iter().any(|&l| l <= 0.0) {
            return Err(Error::invalid("attention matrix must be positive definite"));
        }
        if self.d >= 2 && !(self.eigenvalues[0] > self.eigenvalues[1]) {
            return Err(Error::invalid("top eigenvalue of the attention matrix must be simple"));
        }
        Ok(())
    }

    pub fn is_nondegenerate(&self) -> bool {
        self.check_nondegenerate().is_ok()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.d + j]
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvector(&self, k: usize) -> Vec<f64> {
        (0..self.d).map(|row| self.eigenvectors[row * self.d + k]).collect()
    }

    pub fn lambda1(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda2(&self) -> f64 {
        self.eigenvalues.get(1).copied().unwrap_or(f64::NAN)
    }

    /// `out = A x`
    #[inline]
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.d;
        for i in 0..d {
            out[i] = dot(&self.matrix[i * d..(i + 1) * d], x);
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        self.apply_into(x, &mut out);
        out
    }

    /// `<x, A y>`
    #[inline]
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let d = self.d;
        let mut s = 0.0;
        for i in 0..d {
            s += x[i] * dot(&self.matrix[i * d..(i + 1) * d], y);
        }
        s
    }
}

fn diag_rows(entries: &[f64]) -> Vec<Vec<f64>> {
    let d = entries.len();
    (0..d)
        .map(|i| {
            let mut r = vec![0.0; d];
            r[i] = entries[i];
            r
        })
        .collect()
}

/// A finitely supported probability measure on the sphere: particles with
/// weight `1/N`, or circle-grid nodes weighted by density times `1/M`.
pub trait DiscreteMeasure {
    fn dim(&self) -> usize;
    fn len(&self) -> usize;
    fn point(&self, i: usize) -> &[f64];
    fn weight(&self, i: usize) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `e^{<x, A y>}`
pub fn kernel(x: &[f64], y: &[f64], a: &AttentionSpec) -> f64 {
    a.bilinear(x, y).exp()
}

/// `χ_A[μ](x) = ∫ e^{<x, A y>} A y dμ(y)`
pub fn chi_field<M: DiscreteMeasure + ?Sized>(mu: &M, a: &AttentionSpec, x: &[f64]) -> Result<Vec<f64>> {
    if mu.is_empty() {
        return Err(Error::Empty);
    }
    let d = a.dim();
    if mu.dim() != d || x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.len().min(mu.dim()) });
    }
    let ax = a.apply(x);
    let mut ay = vec![0.0; d];
    let mut out = vec![0.0; d];
    for j in 0..mu.len() {
        let y = mu.point(j);
        let k = mu.weight(j) * dot(&ax, y).exp();
        a.apply_into(y, &mut ay);
        out.iter_mut().zip(&ay).for_each(|(o, v)| *o += k * v);
    }
    Ok(out)
}

/// `-½ ∬ e^{<x, A y>} dμ dμ`, diagonal pairs included.
pub fn interaction_energy<M: DiscreteMeasure + ?Sized>(mu: &M, a: &AttentionSpec) -> Result<f64> {
    if mu.is_empty() {
        return Err(Error::Empty);
    }
    if mu.dim() != a.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: mu.dim() });
    }
    let n = mu.len();
    let d = a.dim();
    let mut ay = vec![0.0; d];
    let mut total = 0.0;
    for i in 0..n {
        let xi = mu.point(i);
        a.apply_into(xi, &mut ay);
        let wi = mu.weight(i);
        let mut row = 0.5 * wi * dot(xi, &ay).exp();
        for j in (i + 1)..n {
            row += mu.weight(j) * dot(mu.point(j), &ay).exp();
        }
        total += wi * row;
    }
    Ok(-total)
}

/// Closed-form landscape scales of the energy for a given attention matrix and noise level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeConstants {
    /// `½ min{sinh λ₁, e^{λ₁} - e^{λ₂}}`
    pub delta0: f64,
    /// `max{e^{λ₂}, cosh λ₁}`
    pub q_a: f64,
    /// `(ε/2)(1 - λ₂/λ₁)`
    pub hessian_lower_scale: f64,
    /// `(1 - λ₂/λ₁)² λ₁ e^{-λ₁}`
    pub a_safe_scale: f64,
    /// `ε / (λ₁ e^{λ₁})`
    pub sigma_eps_sq: f64,
}

pub fn landscape_constants(a: &AttentionSpec, eps: f64) -> LandscapeConstants {
    landscape_constants_from(a.lambda1(), a.lambda2(), eps)
}

pub fn landscape_constants_from(l1: f64, l2: f64, eps: f64) -> LandscapeConstants {
    // e^{λ₁} - e^{λ₂} = e^{λ₂} expm1(λ₁ - λ₂) stays accurate as λ₂ → λ₁
    let exp_gap = l2.exp() * (l1 - l2).exp_m1();
    let ratio_gap = 1.0 - l2 / l1;
    LandscapeConstants {
        delta0: 0.5 * l1.sinh().min(exp_gap),
        q_a: l2.exp().max(l1.cosh()),
        hessian_lower_scale: 0.5 * eps * ratio_gap,
        a_safe_scale: ratio_gap * ratio_gap * l1 * (-l1).exp(),
        sigma_eps_sq: eps / (l1 * l1.exp()),
    }
}
