use nalgebra::{DMatrix, DVector};

use super::costate::{locate, ControlCoupling, CostatePath};
use super::hessian::Hessian;
use super::laplacian::WeightedLaplacian;
use crate::error::{Error, Result};

/// `ζ_t` on the costate time grid.
#[derive(Clone, Debug)]
pub struct ResponsePath {
    pub times: Vec<f64>,
    pub zeta: Vec<Vec<f64>>,
}

/// First-order density response `∂_t ζ = Δ_ρ̄ H ζ - B B* φ_t`, `ζ_0 = 0`.
///
/// Implicit Euler in the linear operator with `substeps` steps per costate
/// interval; the forcing is evaluated at the new time level from the costate
/// interpolated linearly.
pub fn linear_response(
    costate: &CostatePath,
    coupling: &ControlCoupling,
    hessian: &Hessian,
    laplacian: &WeightedLaplacian,
    substeps: usize,
) -> Result<ResponsePath> {
    let m = hessian.m();
    if substeps == 0 {
        return Err(Error::invalid("substeps must be positive"));
    }
    let n = costate.times.len() - 1;
    let dt = costate.horizon() / n as f64;
    let ds = dt / substeps as f64;
    let a = laplacian.to_dense() * hessian.matrix();
    let prop = (DMatrix::identity(m, m) - a * ds)
        .try_inverse()
        .ok_or(Error::Singular("linear response factorization"))?;
    let bstar: Vec<Vec<f64>> = costate.phi.iter().map(|p| coupling.b_star(p)).collect();
    let mut zeta = vec![vec![0.0; m]; n + 1];
    let mut cur = DVector::<f64>::zeros(m);
    for j in 0..n {
        for s in 1..=substeps {
            let t = costate.times[j] + s as f64 * ds;
            let (i, w) = locate(&costate.times, t);
            let wmat: Vec<f64> = if w == 0.0 {
                bstar[i].clone()
            } else {
                bstar[i].iter().zip(&bstar[i + 1]).map(|(a, b)| (1.0 - w) * a + w * b).collect()
            };
            let forcing = coupling.b_apply(&wmat);
            for (c, f) in cur.iter_mut().zip(&forcing) {
                *c -= ds * f;
            }
            cur = &prop * cur;
        }
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: j, what: "linear response" });
        }
        zeta[j + 1] = cur.as_slice().to_vec();
    }
    Ok(ResponsePath { times: costate.times.clone(), zeta })
}
