//! Interacting particle SDE on the sphere with piecewise-constant feed-forward controls.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attention::{interaction_energy, AttentionSpec, DiscreteMeasure};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::sphere::{dot, norm, signed_angle_raw, RngStream, UnitVector};

const ROW_NORM_TOL: f64 = 1e-10;

/// `N` unit vectors in `R^d` at one layer time.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitVectorEnsemble {
    d: usize,
    points: Vec<f64>,
    pub time: f64,
}

impl UnitVectorEnsemble {
    pub fn new(d: usize, points: Vec<f64>, time: f64) -> Result<Self> {
        if d == 0 || points.is_empty() || points.len() % d != 0 {
            return Err(Error::invalid("ensemble needs N >= 1 rows of length d"));
        }
        for (i, row) in points.chunks_exact(d).enumerate() {
            let n = norm(row);
            if !((n - 1.0).abs() < ROW_NORM_TOL) {
                return Err(Error::invalid(format!("row {i} has norm {n}")));
            }
        }
        Ok(Self { d, points, time })
    }

    pub fn from_units(units: &[UnitVector], time: f64) -> Result<Self> {
        let d = units.first().ok_or(Error::Empty)?.dim();
        let mut points = Vec::with_capacity(units.len() * d);
        for u in units {
            if u.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, got: u.dim() });
            }
            points.extend_from_slice(u.coords());
        }
        Ok(Self { d, points, time })
    }

    pub(crate) fn from_raw(d: usize, points: Vec<f64>, time: f64) -> Self {
        Self { d, points, time }
    }

    pub fn n(&self) -> usize {
        self.points.len() / self.d
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.points
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.d)
    }

    pub fn max_norm_deviation(&self) -> f64 {
        self.rows().map(|r| (norm(r) - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn antipode(&self) -> Self {
        Self { d: self.d, points: self.points.iter().map(|v| -v).collect(), time: self.time }
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for r in self.rows() {
            m.iter_mut().zip(r).for_each(|(a, b)| *a += b);
        }
        let n = self.n() as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    /// Angles relative to `reference` (d = 2).
    pub fn angles(&self, reference: &[f64]) -> Result<Vec<f64>> {
        if self.d != 2 {
            return Err(Error::invalid("angles require d = 2"));
        }
        Ok(self.rows().map(|r| signed_angle_raw(r, reference)).collect())
    }
}

impl DiscreteMeasure for UnitVectorEnsemble {
    fn dim(&self) -> usize {
        self.d
    }
    fn len(&self) -> usize {
        self.n()
    }
    fn point(&self, i: usize) -> &[f64] {
        self.row(i)
    }
    fn weight(&self, _: usize) -> f64 {
        1.0 / self.n() as f64
    }
}

/// Piecewise-constant `d x p` control matrices over `K` bins of equal width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlPath {
    pub d: usize,
    pub p: usize,
    pub bin_width: f64,
    pub horizon: f64,
    /// each bin is a row-major `d x p` matrix
    pub bins: Vec<Vec<f64>>,
}

impl ControlPath {
    pub fn zeros(d: usize, p: usize, k: usize, bin_width: f64) -> Result<Self> {
        Self::new(d, p, bin_width, vec![vec![0.0; d * p]; k])
    }

    pub fn new(d: usize, p: usize, bin_width: f64, bins: Vec<Vec<f64>>) -> Result<Self> {
        if bins.is_empty() {
            return Err(Error::invalid("control path needs at least one bin"));
        }
        if !(bin_width > 0.0) || !bin_width.is_finite() {
            return Err(Error::invalid("bin width must be positive"));
        }
        for b in &bins {
            if b.len() != d * p {
                return Err(Error::DimensionMismatch { expected: d * p, got: b.len() });
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("control entries must be finite"));
            }
        }
        let horizon = bins.len() as f64 * bin_width;
        Ok(Self { d, p, bin_width, horizon, bins })
    }

    /// Zero path covering `[0, horizon]` with bins of `bin_width`.
    pub fn zeros_for_horizon(d: usize, p: usize, horizon: f64, bin_width: f64) -> Result<Self> {
        let k = (horizon / bin_width).round();
        if k < 1.0 || (k * bin_width - horizon).abs() > 1e-9 {
            return Err(Error::invalid(format!("horizon {horizon} is not a multiple of bin width {bin_width}")));
        }
        Self::zeros(d, p, k as usize, bin_width)
    }

    pub fn k(&self) -> usize {
        self.bins.len()
    }

    /// Bin containing the step interval starting at `t`.
    pub fn bin_index(&self, t: f64) -> usize {
        let b = (t / self.bin_width + 1e-9).floor();
        (b.max(0.0) as usize).min(self.k() - 1)
    }

    pub fn at(&self, t: f64) -> &[f64] {
        &self.bins[self.bin_index(t)]
    }

    /// `Σ_k ‖W_k‖²_F · bin_width`
    pub fn l2_norm_sq(&self) -> f64 {
        self.bins.iter().flatten().map(|v| v * v).sum::<f64>() * self.bin_width
    }

    /// Euclidean norm of all entries.
    pub fn frobenius_norm(&self) -> f64 {
        self.bins.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.bins.iter_mut().flatten().for_each(|v| *v *= c);
        out
    }

    fn check_shape(&self, d: usize, p: usize) -> Result<()> {
        if self.d != d {
            return Err(Error::DimensionMismatch { expected: d, got: self.d });
        }
        if self.p != p {
            return Err(Error::DimensionMismatch { expected: p, got: self.p });
        }
        Ok(())
    }
}

/// Entropy treatment in particle energy estimates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EntropyMode {
    #[default]
    Off,
    /// von Mises kernel density estimate with the given concentration
    Kde { kappa: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub horizon: f64,
    pub dt: f64,
    pub eps: f64,
    pub record_stride: usize,
    pub seed: RngStream,
    pub entropy: EntropyMode,
}

impl SimConfig {
    pub fn new(horizon: f64, dt: f64, eps: f64, record_stride: usize, seed: RngStream) -> Self {
        Self { horizon, dt, eps, record_stride, seed, entropy: EntropyMode::Off }
    }

    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::invalid("dt must be positive"));
        }
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return Err(Error::invalid("eps must be finite and >= 0"));
        }
        if self.record_stride == 0 {
            return Err(Error::invalid("record_stride must be >= 1"));
        }
        let s = (self.horizon / self.dt).round();
        if s < 1.0 || (s * self.dt - self.horizon).abs() > 1e-9 * self.horizon.max(1.0) {
            return Err(Error::invalid(format!("horizon {} is not a multiple of dt {}", self.horizon, self.dt)));
        }
        Ok(s as usize)
    }

    pub(crate) fn validate_against(&self, controls: &ControlPath) -> Result<usize> {
        let steps = self.steps()?;
        if (controls.horizon - self.horizon).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "control horizon {} differs from simulation horizon {}",
                controls.horizon, self.horizon
            )));
        }
        if self.dt > controls.bin_width * (1.0 + 1e-12) {
            return Err(Error::invalid("dt must not exceed the control bin width"));
        }
        Ok(steps)
    }
}

/// Standard normal increments `ξ` for every step and particle, laid out `[step][particle][d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseRealization {
    steps: usize,
    n: usize,
    d: usize,
    xi: Vec<f64>,
}

impl NoiseRealization {
    /// Particle `i` draws from `seed.derive(i)`.
    pub fn generate(seed: RngStream, steps: usize, n: usize, d: usize) -> Self {
        let streams: Vec<RngStream> = (0..n as u64).map(|i| seed.derive(i)).collect();
        Self::from_particle_streams(&streams, steps, d)
    }

    pub fn from_particle_streams(streams: &[RngStream], steps: usize, d: usize) -> Self {
        let n = streams.len();
        let mut xi = vec![0.0; steps * n * d];
        for (i, s) in streams.iter().enumerate() {
            let mut rng = s.rng();
            for k in 0..steps {
                let off = (k * n + i) * d;
                for c in 0..d {
                    xi[off + c] = rng.sample(StandardNormal);
                }
            }
        }
        Self { steps, n, d, xi }
    }

    pub fn zeros(steps: usize, n: usize, d: usize) -> Self {
        Self { steps, n, d, xi: vec![0.0; steps * n * d] }
    }

    pub fn step(&self, k: usize) -> &[f64] {
        &self.xi[k * self.n * self.d..(k + 1) * self.n * self.d]
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn check(&self, steps: usize, n: usize, d: usize) -> Result<()> {
        if self.steps < steps || self.n != n || self.d != d {
            return Err(Error::invalid("noise realization does not match the simulation shape"));
        }
        Ok(())
    }
}

/// Shared per-step quantities of the drift.
pub(crate) struct DriftParts {
    /// `A x_j`, row-major
    pub z: Vec<f64>,
    /// `k_ij`, row-major `N x N`
    pub k: Vec<f64>,
    /// `σ(x_i)`, row-major `N x p`
    pub sig: Vec<f64>,
    /// pre-projection field `a_i = W σ_i + (1/N) Σ_j k_ij z_j`
    pub a: Vec<f64>,
}

pub(crate) fn drift_parts(x: &[f64], d: usize, a_mat: &AttentionSpec, w: &[f64], sigma: &FeatureMap) -> DriftParts {
    let n = x.len() / d;
    let p = sigma.output_dim();
    let mut z = vec![0.0; n * d];
    for i in 0..n {
        a_mat.apply_into(&x[i * d..(i + 1) * d], &mut z[i * d..(i + 1) * d]);
    }
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        let xi = &x[i * d..(i + 1) * d];
        for j in i..n {
            let v = dot(xi, &z[j * d..(j + 1) * d]).exp();
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    let mut sig = vec![0.0; n * p];
    let mut a = vec![0.0; n * d];
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        sigma.eval_into(&x[i * d..(i + 1) * d], &mut sig[i * p..(i + 1) * p]);
        let ai = &mut a[i * d..(i + 1) * d];
        for j in 0..n {
            let kij = k[i * n + j] * inv_n;
            ai.iter_mut().zip(&z[j * d..(j + 1) * d]).for_each(|(o, zj)| *o += kij * zj);
        }
        let si = &sig[i * p..(i + 1) * p];
        for r in 0..d {
            ai[r] += dot(&w[r * p..(r + 1) * p], si);
        }
    }
    DriftParts { z, k, sig, a }
}

fn check_step_inputs(d: usize, a: &AttentionSpec, w: &[f64], sigma: &FeatureMap) -> Result<()> {
    if a.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: a.dim() });
    }
    sigma.check_dim(d)?;
    if w.len() != d * sigma.output_dim() {
        return Err(Error::DimensionMismatch { expected: d * sigma.output_dim(), got: w.len() });
    }
    Ok(())
}

/// Tangent drift `P⊥_{x_i}(W σ(x_i) + (1/N) Σ_j e^{<x_i, A x_j>} A x_j)`, row-major `N x d`.
pub fn drift(ensemble: &UnitVectorEnsemble, a: &AttentionSpec, w: &[f64], sigma: &FeatureMap) -> Result<Vec<f64>> {
    let d = ensemble.d();
    check_step_inputs(d, a, w, sigma)?;
    let mut f = drift_parts(ensemble.as_slice(), d, a, w, sigma).a;
    for (fi, xi) in f.chunks_exact_mut(d).zip(ensemble.rows()) {
        crate::sphere::project_tangent_in_place(xi, fi);
    }
    Ok(f)
}

/// One projected Euler–Maruyama step with given increments `xi` (row-major `N x d`).
pub(crate) fn step_raw(
    x: &[f64],
    d: usize,
    a: &AttentionSpec,
    w: &[f64],
    sigma: &FeatureMap,
    dt: f64,
    eps: f64,
    xi: &[f64],
    step_index: usize,
) -> Result<Vec<f64>> {
    let parts = drift_parts(x, d, a, w, sigma);
    let c = (2.0 * eps * dt).sqrt();
    let mut y = vec![0.0; x.len()];
    for i in 0..x.len() / d {
        let xr = &x[i * d..(i + 1) * d];
        let ar = &parts.a[i * d..(i + 1) * d];
        let nr = &xi[i * d..(i + 1) * d];
        let xa = dot(xr, ar);
        let xn = dot(xr, nr);
        let yr = &mut y[i * d..(i + 1) * d];
        for r in 0..d {
            yr[r] = xr[r] + dt * (ar[r] - xa * xr[r]) + c * (nr[r] - xn * xr[r]);
        }
        let ny = norm(yr);
        if !ny.is_finite() {
            return Err(Error::NonFinite { step: step_index, what: "particle state" });
        }
        if ny == 0.0 {
            return Err(Error::ZeroNorm("retract"));
        }
        yr.iter_mut().for_each(|v| *v /= ny);
    }
    Ok(y)
}

/// One step with fresh standard normal increments drawn from `rng`.
pub fn em_step<R: Rng + ?Sized>(
    ensemble: &UnitVectorEnsemble,
    a: &AttentionSpec,
    w: &[f64],
    sigma: &FeatureMap,
    dt: f64,
    eps: f64,
    rng: &mut R,
) -> Result<UnitVectorEnsemble> {
    let xi: Vec<f64> = (0..ensemble.as_slice().len()).map(|_| rng.sample(StandardNormal)).collect();
    em_step_with_noise(ensemble, a, w, sigma, dt, eps, &xi)
}

pub fn em_step_with_noise(
    ensemble: &UnitVectorEnsemble,
    a: &AttentionSpec,
    w: &[f64],
    sigma: &FeatureMap,
    dt: f64,
    eps: f64,
    xi: &[f64],
) -> Result<UnitVectorEnsemble> {
    let d = ensemble.d();
    check_step_inputs(d, a, w, sigma)?;
    if !(dt > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    if xi.len() != ensemble.as_slice().len() {
        return Err(Error::DimensionMismatch { expected: ensemble.as_slice().len(), got: xi.len() });
    }
    let y = step_raw(ensemble.as_slice(), d, a, w, sigma, dt, eps, xi, 0)?;
    Ok(UnitVectorEnsemble::from_raw(d, y, ensemble.time + dt))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyParts {
    pub interaction: f64,
    pub entropy: f64,
    pub total: f64,
}

/// Interaction energy plus, in KDE mode, `ε (1/N) Σ_i log ρ̂(x_i)`.
pub fn particle_energy(ensemble: &UnitVectorEnsemble, a: &AttentionSpec, eps: f64, mode: EntropyMode) -> Result<EnergyParts> {
    let interaction = interaction_energy(ensemble, a)?;
    let entropy = match mode {
        EntropyMode::Off => 0.0,
        EntropyMode::Kde { kappa } => {
            if ensemble.d() != 2 {
                return Err(Error::invalid("kde entropy requires d = 2"));
            }
            let theta: Vec<f64> = ensemble.rows().map(|r| r[1].atan2(r[0])).collect();
            let rho = von_mises_kde(&theta, kappa)?;
            eps * rho.iter().map(|r| r.ln()).sum::<f64>() / theta.len() as f64
        }
    };
    Ok(EnergyParts { interaction, entropy, total: interaction + entropy })
}

/// Default KDE concentration `1 / (2 s²)` with `s² = -2 ln R̄` the circular variance scale.
pub fn default_kde_kappa(ensemble: &UnitVectorEnsemble) -> f64 {
    let r = norm(&ensemble.mean()).clamp(1e-12, 1.0 - 1e-15);
    1.0 / (2.0 * (-2.0 * r.ln()))
}

/// von Mises KDE at the sample points, relative to the uniform probability measure.
fn von_mises_kde(theta: &[f64], kappa: f64) -> Result<Vec<f64>> {
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(Error::invalid("kde concentration must be finite and >= 0"));
    }
    let n = theta.len();
    if n <= 4096 {
        let norm = 1.0 / bessel_i0e(kappa);
        return Ok(theta
            .iter()
            .map(|ti| {
                let s: f64 = theta.iter().map(|tj| (kappa * ((ti - tj).cos() - 1.0)).exp()).sum();
                norm * s / n as f64
            })
            .collect());
    }
    // Fourier form: e^{κ cos φ}/I₀(κ) = 1 + 2 Σ_k (I_k/I₀)(κ) cos kφ
    let ratios = bessel_ratios(kappa);
    let mut rho = vec![1.0; n];
    for (k, r) in ratios.iter().enumerate().skip(1) {
        let kf = k as f64;
        let (c, s) = theta
            .iter()
            .fold((0.0, 0.0), |(c, s), t| (c + (kf * t).cos(), s + (kf * t).sin()));
        let (c, s) = (c / n as f64, s / n as f64);
        for (ri, t) in rho.iter_mut().zip(theta) {
            *ri += 2.0 * r * (c * (kf * t).cos() + s * (kf * t).sin());
        }
    }
    Ok(rho)
}

/// `I₀(κ) e^{-κ}`
pub(crate) fn bessel_i0e(kappa: f64) -> f64 {
    if kappa <= 30.0 {
        let q = 0.25 * kappa * kappa;
        let mut term = (-kappa).exp();
        let mut sum = term;
        let mut k = 1.0;
        while term > sum * 1e-18 {
            term *= q / (k * k);
            sum += term;
            k += 1.0;
        }
        sum
    } else {
        let x8 = 8.0 * kappa;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..20 {
            let o = (2 * k - 1) as f64;
            term *= o * o / (k as f64 * x8);
            sum += term;
        }
        sum / (2.0 * std::f64::consts::PI * kappa).sqrt()
    }
}

/// `I_k(κ)/I₀(κ)` for `k = 0, 1, ...` until negligible, by backward recurrence.
fn bessel_ratios(kappa: f64) -> Vec<f64> {
    if kappa == 0.0 {
        return vec![1.0];
    }
    let top = (12.0 * kappa.sqrt() + 40.0).ceil() as usize;
    let mut vals = vec![0.0; top + 2];
    vals[top] = 1e-300;
    for k in (1..=top).rev() {
        vals[k - 1] = vals[k + 1] + (2.0 * k as f64 / kappa) * vals[k];
        if vals[k - 1] > 1e250 {
            vals.iter_mut().for_each(|v| *v *= 1e-250);
        }
    }
    let i0 = vals[0];
    let mut out: Vec<f64> = vals.iter().map(|v| v / i0).collect();
    let cut = out.iter().position(|&r| r < 1e-18).unwrap_or(out.len());
    out.truncate(cut.max(1));
    out
}

/// Recorded ensembles and per-record energies of one simulation.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub records: Vec<UnitVectorEnsemble>,
    pub energies: Vec<EnergyParts>,
}

impl Trajectory {
    pub fn terminal(&self) -> &UnitVectorEnsemble {
        self.records.last().expect("trajectory always has the initial record")
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }
}

/// Integrates from `init` over `[0, cfg.horizon]`; noise comes from per-particle streams of `cfg.seed`.
pub fn simulate(
    init: &UnitVectorEnsemble,
    controls: &ControlPath,
    a: &AttentionSpec,
    sigma: &FeatureMap,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    let steps = cfg.validate_against(controls)?;
    let noise = if cfg.eps > 0.0 {
        NoiseRealization::generate(cfg.seed, steps, init.n(), init.d())
    } else {
        NoiseRealization::zeros(steps, init.n(), init.d())
    };
    simulate_with_noise(init, controls, a, sigma, cfg, &noise)
}

pub fn simulate_with_noise(
    init: &UnitVectorEnsemble,
    controls: &ControlPath,
    a: &AttentionSpec,
    sigma: &FeatureMap,
    cfg: &SimConfig,
    noise: &NoiseRealization,
) -> Result<Trajectory> {
    let steps = cfg.validate_against(controls)?;
    let d = init.d();
    check_step_inputs(d, a, &controls.bins[0], sigma)?;
    controls.check_shape(d, sigma.output_dim())?;
    noise.check(steps, init.n(), d)?;
    let mut x = init.as_slice().to_vec();
    let record = |x: &[f64], t: f64| -> Result<(UnitVectorEnsemble, EnergyParts)> {
        let e = UnitVectorEnsemble::from_raw(d, x.to_vec(), t);
        let en = particle_energy(&e, a, cfg.eps, cfg.entropy)?;
        Ok((e, en))
    };
    let mut records = Vec::with_capacity(steps / cfg.record_stride + 2);
    let mut energies = Vec::with_capacity(records.capacity());
    let (e, en) = record(&x, init.time)?;
    records.push(e);
    energies.push(en);
    for k in 0..steps {
        let t = k as f64 * cfg.dt;
        x = step_raw(&x, d, a, controls.at(t), sigma, cfg.dt, cfg.eps, noise.step(k), k)?;
        if (k + 1) % cfg.record_stride == 0 || k + 1 == steps {
            let (e, en) = record(&x, init.time + (k + 1) as f64 * cfg.dt)?;
            records.push(e);
            energies.push(en);
        }
    }
    Ok(Trajectory { records, energies })
}
