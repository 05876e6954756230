use super::grid::{check_len, CircleDensity, CircleGrid};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::particles::ControlPath;

const MAX_HALVINGS: u32 = 8;
const CFL: f64 = 0.4;

/// Densities at `t_0 = 0, dt, ..., T`.
#[derive(Clone, Debug)]
pub struct DensityPath {
    pub times: Vec<f64>,
    pub densities: Vec<CircleDensity>,
}

impl DensityPath {
    pub fn terminal(&self) -> &CircleDensity {
        self.densities.last().expect("density path is never empty")
    }
}

/// `B(z) = z / (e^z - 1)`
fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 - 0.5 * z
    } else {
        z / z.exp_m1()
    }
}

/// `B'(z)`
fn bernoulli_prime(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        -0.5 + z / 6.0
    } else {
        let b = bernoulli(z);
        b * (1.0 - b) / z - b
    }
}

/// Face velocities `v_{m+½}` and control contributions for one frozen step.
struct FaceField {
    /// `<W σ(x_{m+½}), τ_{m+½}>` per control bin is recomputed on demand
    tau: Vec<[f64; 2]>,
    x: Vec<[f64; 2]>,
}

impl FaceField {
    fn new(grid: &CircleGrid) -> Self {
        let h = grid.h();
        let (x, tau) = grid
            .theta()
            .iter()
            .map(|t| {
                let (s, c) = (t + 0.5 * h).sin_cos();
                ([c, s], [-s, c])
            })
            .unzip();
        Self { tau, x }
    }

    fn control_velocity(&self, w: &[f64], sigma: &FeatureMap) -> Vec<f64> {
        let p = sigma.output_dim();
        let mut s = vec![0.0; p];
        self.x
            .iter()
            .zip(&self.tau)
            .map(|(x, tau)| {
                sigma.eval_into(x, &mut s);
                (0..2).map(|r| tau[r] * crate::sphere::dot(&w[r * p..(r + 1) * p], &s)).sum()
            })
            .collect()
    }
}

/// Solves the cyclic tridiagonal system `lo_i x_{i-1} + di_i x_i + up_i x_{i+1} = b_i`.
fn solve_cyclic(lo: &[f64], di: &[f64], up: &[f64], b: &[f64]) -> Vec<f64> {
    let n = di.len();
    // Sherman–Morrison on top of the Thomas algorithm
    let gamma = -di[0];
    let alpha = up[n - 1];
    let beta = lo[0];
    let mut dd = di.to_vec();
    dd[0] -= gamma;
    dd[n - 1] -= alpha * beta / gamma;
    let thomas = |rhs: &[f64]| -> Vec<f64> {
        let mut c = vec![0.0; n];
        let mut x = vec![0.0; n];
        let mut bet = dd[0];
        x[0] = rhs[0] / bet;
        for i in 1..n {
            c[i] = up[i - 1] / bet;
            bet = dd[i] - lo[i] * c[i];
            x[i] = (rhs[i] - lo[i] * x[i - 1]) / bet;
        }
        for i in (0..n - 1).rev() {
            x[i] -= c[i + 1] * x[i + 1];
        }
        x
    };
    let x = thomas(b);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = thomas(&u);
    let fact = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(a, b)| a - fact * b).collect()
}

/// Finite-volume solver for the controlled non-local Fokker–Planck equation on the circle.
///
/// Fluxes are exponentially fitted (Scharfetter–Gummel) with the face velocity
/// frozen at the start of each step and the resulting linear system solved
/// implicitly, so mass is conserved and positivity kept for any step size;
/// the grid Gibbs states are exact fixed points.
pub struct DensityEvolver<'a> {
    grid: &'a CircleGrid,
    kernel: &'a [f64],
    sigma: FeatureMap,
    eps: f64,
    faces: FaceField,
}

impl<'a> DensityEvolver<'a> {
    pub fn new(grid: &'a CircleGrid, kernel: &'a [f64], sigma: FeatureMap, eps: f64) -> Result<Self> {
        sigma.check_dim(2)?;
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::invalid("eps must be positive"));
        }
        if kernel.len() != grid.m() * grid.m() {
            return Err(Error::DimensionMismatch { expected: grid.m() * grid.m(), got: kernel.len() });
        }
        Ok(Self { grid, kernel, sigma, eps, faces: FaceField::new(grid) })
    }

    fn velocity(&self, rho: &[f64], control: &[f64]) -> Vec<f64> {
        let m = self.grid.m();
        let h = self.grid.h();
        let w = self.grid.potential(self.kernel, rho);
        let u = self.faces.control_velocity(control, &self.sigma);
        (0..m).map(|i| (w[(i + 1) % m] - w[i]) / h + u[i]).collect()
    }

    fn step(&self, rho: &[f64], v: &[f64], dt: f64) -> Vec<f64> {
        let m = rho.len();
        let h = self.grid.h();
        let c = dt * self.eps / (h * h);
        let pe: Vec<f64> = v.iter().map(|vf| vf * h / self.eps).collect();
        let mut lo = vec![0.0; m];
        let mut di = vec![0.0; m];
        let mut up = vec![0.0; m];
        for i in 0..m {
            let pp = pe[i];
            let pm = pe[(i + m - 1) % m];
            di[i] = 1.0 + c * (bernoulli(-pp) + bernoulli(pm));
            up[i] = -c * bernoulli(pp);
            lo[i] = -c * bernoulli(-pm);
        }
        solve_cyclic(&lo, &di, &up, rho)
    }

    /// Tangent-linear model of [`evolve`](Self::evolve) about the uncontrolled
    /// run from `rho_bar`: returns the first-order density perturbation `δρ_t`
    /// at every output time produced by `controls`.
    ///
    /// Sub-steps are chosen from the base velocity plus the control velocity,
    /// which matches the nonlinear run whenever no halving is triggered there.
    pub fn tangent(&self, rho_bar: &CircleDensity, controls: &ControlPath, t_end: f64, dt: f64) -> Result<Vec<Vec<f64>>> {
        check_len(self.grid, rho_bar)?;
        let steps = self.check_horizon(Some(controls), t_end, dt)?;
        let m = self.grid.m();
        let h = self.grid.h();
        let full = 1u32 << MAX_HALVINGS;
        let zero = vec![0.0; controls.d * controls.p];
        let mut base = rho_bar.values().to_vec();
        let mut delta = vec![0.0; m];
        let mut out = Vec::with_capacity(steps + 1);
        out.push(delta.clone());
        let mut halvings = 0u32;
        for n in 0..steps {
            let t0 = n as f64 * dt;
            let mut ticks = 0u32;
            halvings = halvings.saturating_sub(1);
            while ticks < full {
                let t = t0 + dt * ticks as f64 / full as f64;
                let v = self.velocity(&base, &zero);
                let dv = self.velocity(&delta, controls.at(t));
                let vmax = v.iter().zip(&dv).fold(0.0f64, |a, (b, c)| a.max((b + c).abs()));
                let limit = if vmax > 0.0 { CFL * h / vmax } else { f64::INFINITY };
                while dt / (1u64 << halvings) as f64 > limit || (full - ticks) % (full >> halvings) != 0 {
                    halvings += 1;
                    if halvings > MAX_HALVINGS {
                        return Err(Error::Cfl { t, dt: dt / full as f64, limit });
                    }
                }
                let sub = dt / (1u64 << halvings) as f64;
                let next = self.step(&base, &v, sub);
                // M(v) ρ' = ρ  ⇒  M δ' = δ - (∂M/∂v · δv) ρ'
                let c = sub / h;
                let g: Vec<f64> = (0..m)
                    .map(|i| {
                        let pe = v[i] * h / self.eps;
                        -bernoulli_prime(-pe) * next[i] - bernoulli_prime(pe) * next[(i + 1) % m]
                    })
                    .collect();
                let rhs: Vec<f64> = (0..m)
                    .map(|i| {
                        let j = (i + m - 1) % m;
                        delta[i] - c * (g[i] * dv[i] - g[j] * dv[j])
                    })
                    .collect();
                delta = self.step(&rhs, &v, sub);
                base = next;
                ticks += full >> halvings;
            }
            if delta.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { step: n, what: "density perturbation" });
            }
            out.push(delta.clone());
        }
        Ok(out)
    }

    fn check_horizon(&self, controls: Option<&ControlPath>, t_end: f64, dt: f64) -> Result<usize> {
        if !(dt > 0.0) || !(t_end > 0.0) {
            return Err(Error::invalid("dt and horizon must be positive"));
        }
        let steps = (t_end / dt).round();
        if (steps * dt - t_end).abs() > 1e-9 * t_end.max(1.0) {
            return Err(Error::invalid(format!("horizon {t_end} is not a multiple of dt {dt}")));
        }
        let p = self.sigma.output_dim();
        if let Some(c) = controls {
            if c.d != 2 || c.p != p {
                return Err(Error::DimensionMismatch { expected: 2 * p, got: c.d * c.p });
            }
            if c.horizon + 1e-9 < t_end {
                return Err(Error::invalid("control path is shorter than the evolution horizon"));
            }
        }
        Ok(steps as usize)
    }

    /// Integrates from `rho0` over `[0, t_end]` with output every `dt`.
    pub fn evolve(&self, rho0: &CircleDensity, controls: Option<&ControlPath>, t_end: f64, dt: f64) -> Result<DensityPath> {
        check_len(self.grid, rho0)?;
        let steps = self.check_horizon(controls, t_end, dt)?;
        let p = self.sigma.output_dim();
        let zero = vec![0.0; 2 * p];
        let full = 1u32 << MAX_HALVINGS;
        let h = self.grid.h();
        let mut rho = rho0.values().to_vec();
        let mut times = Vec::with_capacity(steps + 1);
        let mut densities = Vec::with_capacity(steps + 1);
        times.push(0.0);
        densities.push(rho0.clone());
        let mut halvings = 0u32;
        for n in 0..steps {
            let t0 = n as f64 * dt;
            let mut ticks = 0u32;
            // relax back towards the requested step once the velocity allows it
            halvings = halvings.saturating_sub(1);
            while ticks < full {
                let t = t0 + dt * ticks as f64 / full as f64;
                let control = controls.map_or(zero.as_slice(), |c| c.at(t));
                let v = self.velocity(&rho, control);
                let vmax = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
                let limit = if vmax > 0.0 { CFL * h / vmax } else { f64::INFINITY };
                while dt / (1u64 << halvings) as f64 > limit || (full - ticks) % (full >> halvings) != 0 {
                    halvings += 1;
                    if halvings > MAX_HALVINGS {
                        return Err(Error::Cfl { t, dt: dt / full as f64, limit });
                    }
                }
                let sub = dt / (1u64 << halvings) as f64;
                rho = self.step(&rho, &v, sub);
                ticks += full >> halvings;
            }
            if let Some((i, &v)) = rho.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < -1e-13) {
                return Err(if v.is_finite() {
                    Error::NegativeDensity { node: i, value: v }
                } else {
                    Error::NonFinite { step: n, what: "density" }
                });
            }
            times.push((n + 1) as f64 * dt);
            densities.push(CircleDensity::from_raw(rho.clone()));
        }
        Ok(DensityPath { times, densities })
    }
}

/// Convenience wrapper building the evolver for one run.
#[allow(clippy::too_many_arguments)]
pub fn evolve_density(
    grid: &CircleGrid,
    kernel: &[f64],
    rho0: &CircleDensity,
    controls: Option<&ControlPath>,
    sigma: FeatureMap,
    eps: f64,
    t_end: f64,
    dt: f64,
) -> Result<DensityPath> {
    DensityEvolver::new(grid, kernel, sigma, eps)?.evolve(rho0, controls, t_end, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionSpec;

    #[test]
    fn cyclic_solver_matches_dense() {
        let n = 7;
        let lo: Vec<f64> = (0..n).map(|i| -0.3 - 0.01 * i as f64).collect();
        let up: Vec<f64> = (0..n).map(|i| -0.2 + 0.02 * i as f64).collect();
        let di: Vec<f64> = (0..n).map(|i| 2.0 + 0.1 * i as f64).collect();
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = solve_cyclic(&lo, &di, &up, &b);
        for i in 0..n {
            let r = lo[i] * x[(i + n - 1) % n] + di[i] * x[i] + up[i] * x[(i + 1) % n];
            assert!((r - b[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn heat_flow_reaches_uniform() {
        let g = CircleGrid::new(64).unwrap();
        let k = g.kernel_matrix(&AttentionSpec::zeros(2)).unwrap();
        let rho0 = CircleDensity::von_mises(&g, 1.0, 4.0).unwrap();
        let path = evolve_density(&g, &k, &rho0, None, FeatureMap::identity(2), 1.0, 20.0, 0.05).unwrap();
        let u = CircleDensity::uniform(&g);
        assert!(path.terminal().l1_distance(&u) < 1e-6);
        for d in &path.densities {
            assert!((d.mass() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn large_step_is_subdivided() {
        let g = CircleGrid::new(64).unwrap();
        let a = AttentionSpec::diagonal(&[1.0, 0.65]).unwrap();
        let k = g.kernel_matrix(&a).unwrap();
        let rho0 = CircleDensity::von_mises(&g, 0.5, 2.0).unwrap();
        let ev = DensityEvolver::new(&g, &k, FeatureMap::identity(2), 0.1).unwrap();
        let path = ev.evolve(&rho0, None, 0.5, 0.5).unwrap();
        assert_eq!(path.densities.len(), 2);
        let huge = ControlPath::new(2, 2, 1.0, vec![vec![0.0, -1e9, 1e9, 0.0]]).unwrap();
        assert!(matches!(ev.evolve(&rho0, Some(&huge), 1.0, 1.0), Err(Error::Cfl { .. })));
    }
}
