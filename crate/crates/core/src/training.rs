//! Training of the control path through a hand-written discrete adjoint of the
//! particle integrator, with Adam updates.

use serde::{Deserialize, Serialize};

use crate::attention::AttentionSpec;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::objectives::Loss;
use crate::particles::{drift_parts, step_raw, ControlPath, NoiseRealization, SimConfig, UnitVectorEnsemble};
use crate::sphere::{dot, norm, RngStream};

const TRAIN_NOISE_TAG: u64 = 0x7452_4149_4e00_0000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub lambda_reg: f64,
    pub resample_noise: bool,
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 600, learning_rate: 0.01, lambda_reg: 0.0, resample_noise: true, grad_clip: None }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("training needs at least one step"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate must be finite and >= 0"));
        }
        if !(self.lambda_reg >= 0.0) {
            return Err(Error::invalid("lambda_reg must be >= 0"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::invalid("grad_clip must be positive"));
            }
        }
        Ok(())
    }
}

/// Adam moments with the same shape as the control bins.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
}

impl AdamState {
    pub fn new(shape: &ControlPath) -> Self {
        let z: Vec<Vec<f64>> = shape.bins.iter().map(|b| vec![0.0; b.len()]).collect();
        Self { first_moment: z.clone(), second_moment: z, step_count: 0, beta1: 0.9, beta2: 0.999, eps_adam: 1e-8 }
    }

    /// Bias-corrected Adam step `W ← W - lr m̂ / (√v̂ + eps)`.
    pub fn update(&mut self, w: &mut ControlPath, grad: &ControlPath, lr: f64) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((wb, gb), (mb, vb)) in w
            .bins
            .iter_mut()
            .zip(&grad.bins)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            for (((wi, gi), mi), vi) in wb.iter_mut().zip(gb).zip(mb.iter_mut()).zip(vb.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *wi -= lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps_adam);
            }
        }
    }
}

/// The fixed parts of a control problem.
#[derive(Clone, Copy)]
pub struct Problem<'a> {
    pub init: &'a UnitVectorEnsemble,
    pub loss: &'a Loss,
    pub a: &'a AttentionSpec,
    pub sigma: &'a FeatureMap,
    pub cfg: &'a SimConfig,
    pub lambda_reg: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParts {
    pub terminal_loss: f64,
    pub reg_term: f64,
}

impl ObjectiveParts {
    pub fn objective(&self) -> f64 {
        self.terminal_loss + self.reg_term
    }
}

impl Problem<'_> {
    fn steps(&self, w: &ControlPath) -> Result<usize> {
        let s = self.cfg.validate_against(w)?;
        self.sigma.check_dim(self.init.d())?;
        if w.d != self.init.d() || w.p != self.sigma.output_dim() {
            return Err(Error::DimensionMismatch { expected: self.init.d() * self.sigma.output_dim(), got: w.d * w.p });
        }
        Ok(s)
    }

    /// Noise used by [`objective`]: the simulation stream of `cfg.seed`.
    pub fn default_noise(&self, w: &ControlPath) -> Result<NoiseRealization> {
        let steps = self.steps(w)?;
        Ok(if self.cfg.eps > 0.0 {
            NoiseRealization::generate(self.cfg.seed, steps, self.init.n(), self.init.d())
        } else {
            NoiseRealization::zeros(steps, self.init.n(), self.init.d())
        })
    }

    fn forward(&self, w: &ControlPath, noise: &NoiseRealization, checkpoints: Option<&mut Vec<Vec<f64>>>) -> Result<Vec<f64>> {
        let steps = self.steps(w)?;
        if noise.steps() < steps {
            return Err(Error::invalid("noise realization is shorter than the simulation"));
        }
        let d = self.init.d();
        let mut x = self.init.as_slice().to_vec();
        let mut cps = checkpoints;
        for k in 0..steps {
            let t = k as f64 * self.cfg.dt;
            if let Some(c) = cps.as_deref_mut() {
                if k == 0 || w.bin_index(t) != w.bin_index(t - self.cfg.dt) {
                    c.push(x.clone());
                }
            }
            x = step_raw(&x, d, self.a, w.at(t), self.sigma, self.cfg.dt, self.cfg.eps, noise.step(k), k)?;
        }
        Ok(x)
    }

    pub fn objective_parts(&self, w: &ControlPath, noise: &NoiseRealization) -> Result<ObjectiveParts> {
        let x = self.forward(w, noise, None)?;
        let terminal = UnitVectorEnsemble::from_raw(self.init.d(), x, self.init.time + self.cfg.horizon);
        Ok(ObjectiveParts { terminal_loss: self.loss.value(&terminal)?, reg_term: 0.5 * self.lambda_reg * w.l2_norm_sq() })
    }

    /// Exact gradient of the discretized objective for a frozen noise realization.
    ///
    /// States are checkpointed at the start of every control bin and recomputed
    /// bin by bin during the reverse sweep.
    pub fn gradient(&self, w: &ControlPath, noise: &NoiseRealization) -> Result<(ObjectiveParts, ControlPath)> {
        let steps = self.steps(w)?;
        let d = self.init.d();
        let p = self.sigma.output_dim();
        let mut checkpoints = Vec::with_capacity(w.k());
        let x_final = self.forward(w, noise, Some(&mut checkpoints))?;
        let terminal = UnitVectorEnsemble::from_raw(d, x_final, self.init.time + self.cfg.horizon);
        let parts = ObjectiveParts { terminal_loss: self.loss.value(&terminal)?, reg_term: 0.5 * self.lambda_reg * w.l2_norm_sq() };

        // segment boundaries: first step index of each checkpointed bin
        let dt = self.cfg.dt;
        let mut starts: Vec<usize> = (0..steps)
            .filter(|&k| k == 0 || w.bin_index(k as f64 * dt) != w.bin_index((k as f64 - 1.0) * dt))
            .collect();
        debug_assert_eq!(starts.len(), checkpoints.len());
        starts.push(steps);

        let mut grad = ControlPath::zeros(d, p, w.k(), w.bin_width)?;
        let mut xbar = self.loss.grad(&terminal)?;
        for seg in (0..checkpoints.len()).rev() {
            let (k0, k1) = (starts[seg], starts[seg + 1]);
            let mut states = Vec::with_capacity(k1 - k0);
            let mut x = checkpoints[seg].clone();
            for k in k0..k1 {
                let next = step_raw(&x, d, self.a, w.at(k as f64 * dt), self.sigma, dt, self.cfg.eps, noise.step(k), k)?;
                states.push(std::mem::replace(&mut x, next));
            }
            for k in (k0..k1).rev() {
                let t = k as f64 * dt;
                let b = w.bin_index(t);
                xbar = step_vjp(&states[k - k0], d, self.a, &w.bins[b], self.sigma, dt, self.cfg.eps, noise.step(k), &xbar, &mut grad.bins[b]);
                if xbar.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { step: k, what: "adjoint state" });
                }
            }
        }
        if self.lambda_reg != 0.0 {
            for (gb, wb) in grad.bins.iter_mut().zip(&w.bins) {
                gb.iter_mut().zip(wb).for_each(|(g, v)| *g += self.lambda_reg * v * w.bin_width);
            }
        }
        Ok((parts, grad))
    }
}

/// Vector–Jacobian product of one projected Euler–Maruyama step.
///
/// Returns `x̄` for the pre-step state and accumulates `W̄` into `wbar`.
#[allow(clippy::too_many_arguments)]
fn step_vjp(
    x: &[f64],
    d: usize,
    a: &AttentionSpec,
    w: &[f64],
    sigma: &FeatureMap,
    dt: f64,
    eps: f64,
    xi: &[f64],
    gbar: &[f64],
    wbar: &mut [f64],
) -> Vec<f64> {
    let n = x.len() / d;
    let p = sigma.output_dim();
    let parts = drift_parts(x, d, a, w, sigma);
    let c = (2.0 * eps * dt).sqrt();
    let inv_n = 1.0 / n as f64;
    let mut xbar = vec![0.0; n * d];
    let mut abar = vec![0.0; n * d];
    let mut y = vec![0.0; d];
    let mut sbar = vec![0.0; p];
    for i in 0..n {
        let xr = &x[i * d..(i + 1) * d];
        let ar = &parts.a[i * d..(i + 1) * d];
        let nr = &xi[i * d..(i + 1) * d];
        let xa = dot(xr, ar);
        let xn = dot(xr, nr);
        for r in 0..d {
            y[r] = xr[r] + dt * (ar[r] - xa * xr[r]) + c * (nr[r] - xn * xr[r]);
        }
        let ny = norm(&y);
        let g = &gbar[i * d..(i + 1) * d];
        // x' = y/|y|
        let xg = dot(&y, g) / ny;
        let ybar: Vec<f64> = (0..d).map(|r| (g[r] - xg * y[r] / ny) / ny).collect();
        let xb = &mut xbar[i * d..(i + 1) * d];
        xb.copy_from_slice(&ybar);
        // tangent noise c (ξ - <x,ξ> x)
        if c != 0.0 {
            let nx = c * dot(&ybar, xr);
            for r in 0..d {
                xb[r] -= nx * nr[r] + xn * c * ybar[r];
            }
        }
        // projected drift dt (a - <x,a> x)
        let fx = dt * dot(&ybar, xr);
        let ab = &mut abar[i * d..(i + 1) * d];
        for r in 0..d {
            let fb = dt * ybar[r];
            ab[r] = fb - fx * xr[r];
            xb[r] -= fx * ar[r] + xa * fb;
        }
        // feed-forward term W σ(x)
        let si = &parts.sig[i * p..(i + 1) * p];
        sbar.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..d {
            let wr = &mut wbar[r * p..(r + 1) * p];
            wr.iter_mut().zip(si).for_each(|(o, s)| *o += ab[r] * s);
            let row = &w[r * p..(r + 1) * p];
            sbar.iter_mut().zip(row).for_each(|(o, v)| *o += ab[r] * v);
        }
        sigma.add_vjp(xr, &sbar, xb);
    }
    // attention coupling (1/N) Σ_j e^{<x_i, A x_j>} A x_j
    let mut aab = vec![0.0; d];
    for i in 0..n {
        let ab = &abar[i * d..(i + 1) * d];
        a.apply_into(ab, &mut aab);
        let zi = &parts.z[i * d..(i + 1) * d];
        let mut acc_i = vec![0.0; d];
        for j in 0..n {
            let zj = &parts.z[j * d..(j + 1) * d];
            let kij = parts.k[i * n + j] * inv_n;
            let s = dot(ab, zj);
            let ks = kij * s;
            for r in 0..d {
                acc_i[r] += ks * zj[r];
                xbar[j * d + r] += ks * zi[r] + kij * aab[r];
            }
        }
        xbar[i * d..(i + 1) * d].iter_mut().zip(&acc_i).for_each(|(o, v)| *o += v);
    }
    xbar
}

/// `ℓ(μ_T^W) + (λ_reg/2) ‖W‖²_{L²}` with the simulation noise of `cfg.seed`.
pub fn objective(w: &ControlPath, problem: &Problem) -> Result<f64> {
    let noise = problem.default_noise(w)?;
    Ok(problem.objective_parts(w, &noise)?.objective())
}

pub fn backprop_gradient(w: &ControlPath, problem: &Problem, frozen_noise: &NoiseRealization) -> Result<ControlPath> {
    Ok(problem.gradient(w, frozen_noise)?.1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub objective: f64,
    pub terminal_loss: f64,
    pub reg_term: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub controls: ControlPath,
    pub history: Vec<HistoryRow>,
    /// step at which a non-finite objective or state stopped training
    pub diverged_at: Option<usize>,
}

/// Adam on the control path; noise is redrawn every step from `seed` unless disabled.
pub fn train(init_controls: ControlPath, problem: &Problem, train_cfg: &TrainConfig, seed: RngStream) -> Result<TrainResult> {
    train_cfg.validate()?;
    let steps = problem.steps(&init_controls)?;
    let (n, d) = (problem.init.n(), problem.init.d());
    let fixed = if train_cfg.resample_noise { None } else { Some(NoiseRealization::generate(seed, steps, n, d)) };
    let mut w = init_controls;
    let mut adam = AdamState::new(&w);
    let mut history = Vec::with_capacity(train_cfg.steps);
    for s in 0..train_cfg.steps {
        let fresh;
        let noise = match &fixed {
            Some(f) => f,
            None => {
                fresh = if problem.cfg.eps > 0.0 {
                    NoiseRealization::generate(seed.derive(TRAIN_NOISE_TAG ^ s as u64), steps, n, d)
                } else {
                    NoiseRealization::zeros(steps, n, d)
                };
                &fresh
            }
        };
        let (parts, mut grad) = match problem.gradient(&w, noise) {
            Ok(v) => v,
            Err(Error::NonFinite { .. }) | Err(Error::ZeroNorm(_)) => {
                return Ok(TrainResult { controls: w, history, diverged_at: Some(s) });
            }
            Err(e) => return Err(e),
        };
        let gnorm = grad.frobenius_norm();
        if !parts.objective().is_finite() || !gnorm.is_finite() {
            return Ok(TrainResult { controls: w, history, diverged_at: Some(s) });
        }
        history.push(HistoryRow {
            step: s,
            objective: parts.objective(),
            terminal_loss: parts.terminal_loss,
            reg_term: parts.reg_term,
            grad_norm: gnorm,
        });
        if let Some(clip) = train_cfg.grad_clip {
            if gnorm > clip {
                grad = grad.scaled(clip / gnorm);
            }
        }
        adam.update(&mut w, &grad, train_cfg.learning_rate);
    }
    Ok(TrainResult { controls: w, history, diverged_at: None })
}
