//! Terminal losses on the token distribution, their particle gradients, and
//! their linear functional derivatives on the circle grid.

use serde::{Deserialize, Serialize};

use crate::attention::DiscreteMeasure;
use crate::error::{Error, Result};
use crate::meanfield::{CircleDensity, CircleGrid, GridMeasure};
use crate::particles::UnitVectorEnsemble;
use crate::sphere::{dot, sample_vmf, RngStream, UnitVector};

/// `ℓ(μ) = 1 - <∫ x dμ, u_tar>`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignLoss {
    pub target: UnitVector,
}

/// `ℓ(μ) = -Σ_w q_w log ∫ softmax(<x, c_w>)_w dμ`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BowLoss {
    pub candidates: Vec<UnitVector>,
    pub q: Vec<f64>,
}

impl BowLoss {
    pub fn new(candidates: Vec<UnitVector>, q: Vec<f64>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::invalid("bag-of-words loss needs at least one candidate"));
        }
        if q.len() != candidates.len() {
            return Err(Error::DimensionMismatch { expected: candidates.len(), got: q.len() });
        }
        if q.iter().any(|v| !(*v >= 0.0)) || (q.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("target distribution must be nonnegative and sum to 1"));
        }
        let d = candidates[0].dim();
        if candidates.iter().any(|c| c.dim() != d) {
            return Err(Error::invalid("candidates must share one dimension"));
        }
        Ok(Self { candidates, q })
    }

    /// `size` candidates drawn from a von Mises law around `mean`, uniform target.
    pub fn sampled(mean: &UnitVector, kappa: f64, size: usize, stream: RngStream) -> Result<Self> {
        let candidates = sample_vmf(mean, kappa, size, stream)?;
        let q = vec![1.0 / size as f64; size];
        Self::new(candidates, q)
    }

    /// Softmax over the vocabulary at `x`.
    fn softmax_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.candidates) {
            *o = dot(x, c.coords());
        }
        let mx = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out.iter_mut().for_each(|v| *v = (*v - mx).exp());
        let s: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= s);
    }

    /// Averaged softmax mass `P_w = ∫ softmax_w dμ`, checked against underflow.
    fn masses<M: DiscreteMeasure + ?Sized>(&self, mu: &M) -> Result<Vec<f64>> {
        let v = self.candidates.len();
        let mut p = vec![0.0; v];
        let mut s = vec![0.0; v];
        for i in 0..mu.len() {
            self.softmax_into(mu.point(i), &mut s);
            let w = mu.weight(i);
            p.iter_mut().zip(&s).for_each(|(a, b)| *a += w * b);
        }
        for (w, (&pw, &qw)) in p.iter().zip(&self.q).enumerate() {
            if qw > 0.0 && !(pw > 0.0) {
                return Err(Error::DegenerateSoftmax { candidate: w });
            }
        }
        Ok(p)
    }

    fn value_on<M: DiscreteMeasure + ?Sized>(&self, mu: &M) -> Result<f64> {
        let p = self.masses(mu)?;
        Ok(-p.iter().zip(&self.q).filter(|(_, q)| **q > 0.0).map(|(p, q)| q * p.ln()).sum::<f64>())
    }
}

/// Terminal losses available for training and analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Loss {
    Align(AlignLoss),
    Bow(BowLoss),
    /// `ℓ ≡ 0`, for isolating the regularizer
    Zero,
}

impl Loss {
    pub fn align(target: UnitVector) -> Self {
        Loss::Align(AlignLoss { target })
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        let ld = match self {
            Loss::Align(a) => a.target.dim(),
            Loss::Bow(b) => b.candidates[0].dim(),
            Loss::Zero => d,
        };
        if ld != d {
            return Err(Error::DimensionMismatch { expected: ld, got: d });
        }
        Ok(())
    }

    fn value_on<M: DiscreteMeasure + ?Sized>(&self, mu: &M) -> Result<f64> {
        if mu.is_empty() {
            return Err(Error::Empty);
        }
        self.check_dim(mu.dim())?;
        match self {
            Loss::Align(a) => {
                let mut m = 0.0;
                for i in 0..mu.len() {
                    m += mu.weight(i) * dot(mu.point(i), a.target.coords());
                }
                Ok(1.0 - m)
            }
            Loss::Bow(b) => b.value_on(mu),
            Loss::Zero => Ok(0.0),
        }
    }

    pub fn value(&self, ensemble: &UnitVectorEnsemble) -> Result<f64> {
        self.value_on(ensemble)
    }

    /// Gradient with respect to the raw particle coordinates, row-major `N x d`.
    pub fn grad(&self, ensemble: &UnitVectorEnsemble) -> Result<Vec<f64>> {
        self.check_dim(ensemble.d())?;
        let n = ensemble.n();
        let d = ensemble.d();
        let inv_n = 1.0 / n as f64;
        match self {
            Loss::Align(a) => Ok(ensemble.rows().flat_map(|_| a.target.coords().iter().map(|u| -u * inv_n)).collect()),
            Loss::Zero => Ok(vec![0.0; n * d]),
            Loss::Bow(b) => {
                let p = b.masses(ensemble)?;
                let coef: Vec<f64> = p.iter().zip(&b.q).map(|(p, q)| if *q > 0.0 { q / p } else { 0.0 }).collect();
                let v = b.candidates.len();
                let mut s = vec![0.0; v];
                let mut out = vec![0.0; n * d];
                for (i, x) in ensemble.rows().enumerate() {
                    b.softmax_into(x, &mut s);
                    // ∂ s_w / ∂ x = s_w (c_w - Σ_v s_v c_v)
                    let mut cbar = vec![0.0; d];
                    for (sv, c) in s.iter().zip(&b.candidates) {
                        cbar.iter_mut().zip(c.coords()).for_each(|(a, cc)| *a += sv * cc);
                    }
                    let gi = &mut out[i * d..(i + 1) * d];
                    for w in 0..v {
                        let f = -inv_n * coef[w] * s[w];
                        if f != 0.0 {
                            let c = b.candidates[w].coords();
                            for r in 0..d {
                                gi[r] += f * (c[r] - cbar[r]);
                            }
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    /// Quadrature value `ℓ(ρ ω)` on the grid.
    pub fn value_on_grid(&self, grid: &CircleGrid, rho: &CircleDensity) -> Result<f64> {
        self.value_on(&GridMeasure { grid, rho })
    }

    /// `Π₀ δℓ/δμ` at `ρ`, centered under `ρ`.
    pub fn functional_derivative_on_grid(&self, grid: &CircleGrid, rho: &CircleDensity) -> Result<Vec<f64>> {
        self.check_dim(2)?;
        let m = grid.m();
        let raw: Vec<f64> = match self {
            Loss::Align(a) => (0..m).map(|i| -dot(grid.x(i), a.target.coords())).collect(),
            Loss::Zero => return Ok(vec![0.0; m]),
            Loss::Bow(b) => {
                let p = b.masses(&GridMeasure { grid, rho })?;
                let mut s = vec![0.0; b.candidates.len()];
                (0..m)
                    .map(|i| {
                        b.softmax_into(grid.x(i), &mut s);
                        -s.iter().zip(&b.q).zip(&p).filter(|(_, pw)| **pw > 0.0).map(|((s, q), pw)| q * s / pw).sum::<f64>()
                    })
                    .collect()
            }
        };
        Ok(rho.center(&raw))
    }
}
