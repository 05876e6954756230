//! Feature maps `σ` for the feed-forward control `u_W(x) = W σ(x)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum FeatureMap {
    /// `σ(x) = x`, `p = d`
    Identity { d: usize },
    /// `σ(x) = (1, cos θ, sin θ, ..., cos mθ, sin mθ)` on the circle, `p = 1 + 2m`
    Fourier { order: usize },
}

impl FeatureMap {
    pub fn identity(d: usize) -> Self {
        FeatureMap::Identity { d }
    }

    pub fn fourier(order: usize) -> Self {
        FeatureMap::Fourier { order }
    }

    pub fn input_dim(&self) -> usize {
        match *self {
            FeatureMap::Identity { d } => d,
            FeatureMap::Fourier { .. } => 2,
        }
    }

    pub fn output_dim(&self) -> usize {
        match *self {
            FeatureMap::Identity { d } => d,
            FeatureMap::Fourier { order } => 1 + 2 * order,
        }
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        if self.input_dim() != d {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: d });
        }
        Ok(())
    }

    /// `sup_{S^{d-1}} |σ|²`
    pub fn sup_norm_sq(&self) -> f64 {
        match *self {
            FeatureMap::Identity { .. } => 1.0,
            FeatureMap::Fourier { order } => 1.0 + order as f64,
        }
    }

    /// `C_σ = ‖σ‖²_∞ / 2`
    pub fn c_sigma(&self) -> f64 {
        0.5 * self.sup_norm_sq()
    }

    /// Writes `σ(x)` into `out` (length `p`).
    ///
    /// The Fourier variant uses `Re/Im (x₁ + i x₂)^k`, which equals
    /// `cos kθ, sin kθ` on the circle and is smooth in the ambient coordinates.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match *self {
            FeatureMap::Identity { .. } => out.copy_from_slice(x),
            FeatureMap::Fourier { order } => {
                out[0] = 1.0;
                let (mut re, mut im) = (1.0, 0.0);
                for k in 1..=order {
                    (re, im) = (re * x[0] - im * x[1], re * x[1] + im * x[0]);
                    out[2 * k - 1] = re;
                    out[2 * k] = im;
                }
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim()];
        self.eval_into(x, &mut out);
        out
    }

    /// Adds `J_σ(x)ᵀ v` to `acc`.
    pub fn add_vjp(&self, x: &[f64], v: &[f64], acc: &mut [f64]) {
        match *self {
            FeatureMap::Identity { .. } => acc.iter_mut().zip(v).for_each(|(a, b)| *a += b),
            FeatureMap::Fourier { order } => {
                // d z^k = k z^{k-1} dz with dz = dx₁ + i dx₂
                let (mut re, mut im) = (1.0, 0.0);
                for k in 1..=order {
                    let kf = k as f64;
                    let (vr, vi) = (v[2 * k - 1], v[2 * k]);
                    acc[0] += kf * (vr * re + vi * im);
                    acc[1] += kf * (-vr * im + vi * re);
                    (re, im) = (re * x[0] - im * x[1], re * x[1] + im * x[0]);
                }
            }
        }
    }
}
