//! Points, tangent projections and sampling on the unit sphere.
//!
//! Everything here works in ambient coordinates. Angular helpers
//! (`signed_angle`, von Mises sampling) are specific to the circle `d = 2`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const UNIT_TOL: f64 = 1e-12;

/// A point on the unit sphere in `R^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Wraps coordinates that already have unit norm.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("unit vector needs at least one coordinate"));
        }
        let n = norm(&coords);
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::invalid(format!("vector norm {n} is not 1")));
        }
        Ok(Self(coords))
    }

    /// Normalizes an arbitrary nonzero vector.
    pub fn normalize(mut coords: Vec<f64>) -> Result<Self> {
        let n = norm(&coords);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::ZeroNorm("normalize"));
        }
        coords.iter_mut().for_each(|c| *c /= n);
        Ok(Self(coords))
    }

    /// Standard basis vector `e_{i+1}` in `R^d`.
    pub fn basis(d: usize, i: usize) -> Self {
        assert!(i < d, "basis index out of range");
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        Self(v)
    }

    /// Point `(cos θ, sin θ)` on the circle.
    pub fn from_angle(theta: f64) -> Self {
        Self(vec![theta.cos(), theta.sin()])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.0
    }

    pub fn antipode(&self) -> Self {
        Self(self.0.iter().map(|c| -c).collect())
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Deterministic, platform-independent random stream.
///
/// The pair `(seed, stream_id)` fully determines the draw sequence
/// (ChaCha8 keyed by the seed, with the stream id selecting the nonce).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Child stream for a labelled sub-task (particle index, training step, ...).
    pub fn derive(&self, tag: u64) -> Self {
        Self {
            seed: self.seed,
            stream_id: splitmix64(self.stream_id ^ splitmix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d))),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `P⊥_x v = v - <v,x> x`.
pub fn project_tangent(x: &UnitVector, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != x.dim() {
        return Err(Error::DimensionMismatch { expected: x.dim(), got: v.len() });
    }
    let mut out = v.to_vec();
    project_tangent_in_place(x.coords(), &mut out);
    Ok(out)
}

#[inline]
pub(crate) fn project_tangent_in_place(x: &[f64], v: &mut [f64]) {
    let c = dot(x, v);
    v.iter_mut().zip(x).for_each(|(vi, xi)| *vi -= c * xi);
}

/// Normalization retraction `(x + step) / |x + step|`.
pub fn retract(x: &UnitVector, step: &[f64]) -> Result<UnitVector> {
    if step.len() != x.dim() {
        return Err(Error::DimensionMismatch { expected: x.dim(), got: step.len() });
    }
    let y: Vec<f64> = x.coords().iter().zip(step).map(|(a, b)| a + b).collect();
    let n = norm(&y);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::ZeroNorm("retract"));
    }
    Ok(UnitVector(y.into_iter().map(|c| c / n).collect()))
}

/// Draws an angle from the von Mises law with mean 0 and concentration `kappa`
/// (Best & Fisher 1979 rejection sampler).
pub fn sample_von_mises_angle<R: Rng + ?Sized>(kappa: f64, rng: &mut R) -> f64 {
    if kappa == 0.0 {
        return PI * (2.0 * rng.random::<f64>() - 1.0);
    }
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        let u3: f64 = rng.random();
        let z = (PI * u1).cos();
        let f = ((1.0 + r * z) / (r + z)).clamp(-1.0, 1.0);
        let c = kappa * (r - f);
        if c * (2.0 - c) - u2 > 0.0 || (u2 > 0.0 && (c / u2).ln() + 1.0 - c >= 0.0) {
            let theta = f.acos();
            return if u3 < 0.5 { -theta } else { theta };
        }
    }
}

/// i.i.d. draws from the density proportional to `exp(kappa <x, mean>)` on the circle.
pub fn sample_vmf(mean: &UnitVector, kappa: f64, n: usize, stream: RngStream) -> Result<Vec<UnitVector>> {
    if mean.dim() != 2 {
        return Err(Error::invalid("von Mises-Fisher sampling is only implemented on the circle (d = 2)"));
    }
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(Error::invalid(format!("concentration must be finite and >= 0, got {kappa}")));
    }
    let mu = mean.coords()[1].atan2(mean.coords()[0]);
    let mut rng = stream.rng();
    Ok((0..n)
        .map(|_| UnitVector::from_angle(mu + sample_von_mises_angle(kappa, &mut rng)))
        .collect())
}

/// Cap initialization around `e_1`: `normalize(e_1 + s ξ)` with `ξ ~ N(0, I_d)`.
pub fn sample_cap_init(d: usize, s: f64, n: usize, stream: RngStream) -> Result<Vec<UnitVector>> {
    if d < 2 {
        return Err(Error::invalid("sphere dimension d must be >= 2"));
    }
    if !(s >= 0.0) || !s.is_finite() {
        return Err(Error::invalid(format!("cap spread must be finite and >= 0, got {s}")));
    }
    let mut rng = stream.rng();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut y: Vec<f64> = (0..d).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect();
        y[0] += 1.0;
        // zero norm has probability zero; redraw if it happens
        if let Ok(u) = UnitVector::normalize(y) {
            out.push(u);
        }
    }
    Ok(out)
}

/// Counterclockwise angle from `reference` to `x` on the circle, in `(-π, π]`.
pub fn signed_angle(x: &UnitVector, reference: &UnitVector) -> Result<f64> {
    if x.dim() != 2 || reference.dim() != 2 {
        return Err(Error::invalid("signed_angle requires d = 2"));
    }
    Ok(signed_angle_raw(x.coords(), reference.coords()))
}

#[inline]
pub(crate) fn signed_angle_raw(x: &[f64], r: &[f64]) -> f64 {
    let cross = r[0] * x[1] - r[1] * x[0];
    let cos = r[0] * x[0] + r[1] * x[1];
    let a = cross.atan2(cos);
    if a <= -PI {
        PI
    } else {
        a
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(i: usize, d: usize) -> UnitVector {
        UnitVector::basis(d, i)
    }

    #[test]
    fn projection_examples() {
        let x = e(0, 3);
        assert_eq!(project_tangent(&x, &[1.0, 0.0, 0.0]).unwrap(), vec![0.0, 0.0, 0.0]);
        assert_eq!(project_tangent(&x, &[0.0, 1.0, 0.0]).unwrap(), vec![0.0, 1.0, 0.0]);
        assert_eq!(project_tangent(&e(0, 2), &[1.0, 1.0]).unwrap(), vec![0.0, 1.0]);
        assert!(matches!(project_tangent(&x, &[1.0, 0.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn retraction_examples() {
        let x = e(0, 3);
        assert_eq!(retract(&x, &[0.0; 3]).unwrap(), x);
        let r = retract(&x, &[0.0, 1.0, 0.0]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((r.coords()[0] - h).abs() < 1e-15 && (r.coords()[1] - h).abs() < 1e-15);
        assert_eq!(retract(&x, &[-2.0, 0.0, 0.0]).unwrap(), x.antipode());
        assert!(matches!(retract(&x, &[-1.0, 0.0, 0.0]), Err(Error::ZeroNorm(_))));
    }

    #[test]
    fn signed_angle_examples() {
        let e1 = e(0, 2);
        let e2 = e(1, 2);
        assert_eq!(signed_angle(&e1, &e1).unwrap(), 0.0);
        assert!((signed_angle(&e2, &e1).unwrap() - PI / 2.0).abs() < 1e-15);
        assert_eq!(signed_angle(&e1.antipode(), &e1).unwrap(), PI);
        // -0.0 cross product must not flip the antipode to -π
        let r = UnitVector::from_angle(0.3);
        let anti = UnitVector::new(r.coords().iter().map(|c| -c).collect()).unwrap();
        assert_eq!(signed_angle(&anti, &r).unwrap(), PI);
        assert!(signed_angle(&e(0, 3), &e(1, 3)).is_err());
    }

    #[test]
    fn vmf_rejects_bad_input() {
        let s = RngStream::new(1, 0);
        assert!(sample_vmf(&e(0, 2), -1.0, 3, s).is_err());
        assert!(sample_vmf(&e(0, 3), 1.0, 3, s).is_err());
    }

    #[test]
    fn vmf_extreme_concentration() {
        let mean = UnitVector::from_angle(1.0);
        let xs = sample_vmf(&mean, 1e6, 10, RngStream::new(7, 3)).unwrap();
        for x in xs {
            assert!(signed_angle(&x, &mean).unwrap().abs() < 0.01);
        }
    }

    #[test]
    fn cap_init_with_zero_spread() {
        let xs = sample_cap_init(3, 0.0, 5, RngStream::new(1, 1)).unwrap();
        assert!(xs.iter().all(|x| x == &e(0, 3)));
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = RngStream::new(42, 9);
        let draw = |s: RngStream| -> Vec<u64> {
            let mut r = s.rng();
            (0..4).map(|_| r.random()).collect()
        };
        assert_eq!(draw(a), draw(a));
        assert_ne!(draw(a), draw(a.derive(1)));
        assert_ne!(draw(a.derive(1)), draw(a.derive(2)));
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
    }
}
