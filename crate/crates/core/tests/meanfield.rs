use proptest::prelude::*;
use turnpike_core::meanfield::{
    backward_costate, energy, energy_and_gap, evolve_density, linear_response, one_gd_path, rayleigh_rate,
    stationary_gibbs, Branch, CircleDensity, CircleGrid, ControlCoupling, CostateOptions, GibbsOptions, Hessian,
    Linearization, WeightedLaplacian,
};
use turnpike_core::objectives::Loss;
use turnpike_core::{AttentionSpec, FeatureMap, UnitVector};

/// Energy of the normalized `e^{5 cos θ}` at `A = diag(1, 0.65)`, `ε = 0.1`, from an
/// independent dense evaluation on 8192 nodes.
const VMF5_ENERGY: f64 = -1.019_143_417_102_429_2;

fn a065() -> AttentionSpec {
    AttentionSpec::diagonal(&[1.0, 0.65]).unwrap()
}

fn lin(eps: f64, m: usize) -> Linearization {
    Linearization::new(&a065(), eps, m, GibbsOptions::default()).unwrap()
}

fn align_g(l: &Linearization) -> Vec<f64> {
    Loss::align(UnitVector::basis(2, 1)).functional_derivative_on_grid(&l.grid, l.rho_bar()).unwrap()
}

#[test]
fn gibbs_state_is_converged_and_even() {
    let l = lin(0.1, 512);
    assert!(l.gibbs.residual < 1e-10);
    let v = l.rho_bar().values();
    let defect = (0..512).map(|i| (v[i] - v[l.grid.mirror_index(i)]).abs()).fold(0.0, f64::max);
    assert!(defect < 1e-10);

}

#[test]
fn small_noise_second_moment() {
    let l = lin(0.01, 1024);
    let sigma_sq = 0.01 / std::f64::consts::E;
    let ratio = l.rho_bar().second_moment_about_mode(&l.grid) / sigma_sq;
    assert!((ratio - 1.0).abs() < 0.15, "{ratio}");
}

#[test]
fn energy_matches_fine_grid() {
    let grid = CircleGrid::new(512).unwrap();
    let rho = CircleDensity::von_mises(&grid, 0.0, 5.0).unwrap();
    let e = energy(&grid, &grid.kernel_matrix(&a065()).unwrap(), &rho, 0.1).unwrap();
    assert!((e - VMF5_ENERGY).abs() < 1e-6, "{e}");
}

#[test]
fn grid_refinement_is_converged() {
    let (coarse, fine) = (lin(0.1, 512), lin(0.1, 1024));
    let rc = rayleigh_rate(&align_g(&coarse), &coarse.hessian, &coarse.laplacian).unwrap();
    let rf = rayleigh_rate(&align_g(&fine), &fine.hessian, &fine.laplacian).unwrap();
    assert!((rc / rf - 1.0).abs() < 1e-4, "{rc} vs {rf}");
    let (sc, sf) = (coarse.hessian.spectrum(), fine.hessian.spectrum());
    assert!((sc[0] / sf[0] - 1.0).abs() < 1e-4);
    let peak = |l: &Linearization| l.rho_bar().values()[0];
    assert!((peak(&coarse) / peak(&fine) - 1.0).abs() < 1e-4);
}

#[test]
fn hessian_inverse_and_window() {
    let l = lin(0.01, 1024);
    let s = l.hessian.spectrum();
    assert!(s[s.len() - 1] <= 0.01 * (1.0 + 1e-6));
    assert!(s[0] >= 0.4 * 0.005 * 0.35);
    let rb = l.rho_bar();
    for k in 1..=3 {
        let z: Vec<f64> = l.grid.theta().iter().map(|t| (k as f64 * t).sin() + 0.3 * (t * 2.0).cos() + 1.0).collect();
        let pz = rb.center(&z);
        let back = l.hessian.apply(&l.hessian.solve_hinv(&pz).unwrap());
        let err = back.iter().zip(&pz).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }
}

#[test]
fn flat_hessian_is_scaled_identity() {
    let grid = CircleGrid::new(128).unwrap();
    let zero = AttentionSpec::diagonal_unchecked(&[0.0, 0.0]).unwrap();
    let u = CircleDensity::uniform(&grid);
    let h = Hessian::new(&grid, &grid.kernel_matrix(&zero).unwrap(), &u, 0.2).unwrap();
    let z: Vec<f64> = grid.theta().iter().map(|t| (3.0 * t).cos()).collect();
    assert!((h.norm_hinv_sq(&z).unwrap() - u.inner(&z, &z) / 0.2).abs() < 1e-12);
}

#[test]
fn heat_decay_closed_form() {
    let (m, eps, horizon) = (512, 0.1, 2.0);
    let grid = CircleGrid::new(m).unwrap();
    let zero = AttentionSpec::diagonal_unchecked(&[0.0, 0.0]).unwrap();
    let u = CircleDensity::uniform(&grid);
    let h = Hessian::new(&grid, &grid.kernel_matrix(&zero).unwrap(), &u, eps).unwrap();
    let lap = WeightedLaplacian::new(&grid, &u).unwrap();
    let g: Vec<f64> = grid.theta().iter().map(|t| t.cos()).collect();
    let path = backward_costate(&g, &h, &lap, horizon, CostateOptions::default()).unwrap();
    let hh = grid.h();
    let symbol = (2.0 - 2.0 * hh.cos()) / (hh * hh);
    for (t, phi) in path.times.iter().zip(&path.phi) {
        let decay = (-eps * symbol * (horizon - t)).exp();
        let err = phi.iter().zip(&g).map(|(p, c)| (p - decay * c).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "t = {t}: {err}");
    }
    let r = rayleigh_rate(&g, &h, &lap).unwrap();
    assert!((r - 0.1).abs() < 1e-4);
}

#[test]
fn costate_obeys_jensen_and_dissipates() {
    let l = lin(0.1, 512);
    let g = align_g(&l);
    let horizon = 8.0;
    let r = rayleigh_rate(&g, &l.hessian, &l.laplacian).unwrap();
    let path = backward_costate(&g, &l.hessian, &l.laplacian, horizon, CostateOptions::default()).unwrap();
    let g_norm = l.hessian.norm_hinv_sq(&g).unwrap().sqrt();
    let norms: Vec<f64> = path.phi.iter().map(|p| l.hessian.norm_hinv_sq(p).unwrap().sqrt()).collect();
    for (t, n) in path.times.iter().zip(&norms) {
        assert!(*n >= g_norm * (-(horizon - t) * r).exp() * (1.0 - 1e-8), "t = {t}");
    }
    assert!(norms.windows(2).all(|w| w[1] >= w[0]));
    for c in [-2.5, 0.01, 7.0] {
        let scaled: Vec<f64> = g.iter().map(|v| c * v).collect();
        assert!((rayleigh_rate(&scaled, &l.hessian, &l.laplacian).unwrap() / r - 1.0).abs() < 1e-10);
    }
}

#[test]
fn zero_control_flow_dissipates_to_the_stationary_state() {
    let l = lin(0.1, 256);
    let rho0 = CircleDensity::von_mises(&l.grid, 0.0, 3.0).unwrap();
    let path = evolve_density(&l.grid, &l.kernel, &rho0, None, FeatureMap::identity(2), 0.1, 60.0, 0.05).unwrap();
    let energies: Vec<f64> = path.densities.iter().map(|r| energy(&l.grid, &l.kernel, r, 0.1).unwrap()).collect();
    assert!(energies.windows(2).all(|w| w[1] <= w[0] + 1e-10));
    assert!(path.densities.iter().all(|r| (r.mass() - 1.0).abs() < 1e-12 && r.values().iter().all(|&v| v >= -1e-13)));
    assert!(path.terminal().l1_distance(l.rho_bar()) < 1e-3);

    let still = evolve_density(&l.grid, &l.kernel, l.rho_bar(), None, FeatureMap::identity(2), 0.1, 10.0, 0.05).unwrap();
    assert!(still.densities.iter().all(|r| r.sup_distance(l.rho_bar()) < 1e-6));
}

#[test]
fn one_step_path_matches_midpoint_quadrature() {
    let l = lin(0.1, 256);
    let g = align_g(&l);
    let costate = backward_costate(&g, &l.hessian, &l.laplacian, 8.0, CostateOptions::default()).unwrap();
    let coupling = ControlCoupling::new(&l.grid, l.rho_bar(), FeatureMap::identity(2)).unwrap();
    let w1 = one_gd_path(&costate, &coupling, 1e-3, 0.25).unwrap();
    let w2 = one_gd_path(&costate, &coupling, 2e-3, 0.25).unwrap();
    let (m, h) = (l.grid.m(), l.grid.h());
    let rb = l.rho_bar().values();
    for (b, (bin1, bin2)) in w1.bins.iter().zip(&w2.bins).enumerate() {
        for (x, y) in bin1.iter().zip(bin2) {
            assert!((2.0 * x - y).abs() <= 1e-15 * y.abs().max(1e-300));
        }
        let phi = costate.at((b as f64 + 0.5) * 0.25);
        let mut w = [0.0; 4];
        for i in 0..m {
            let th = l.grid.theta()[i];
            let dphi = (phi[(i + 1) % m] - phi[(i + m - 1) % m]) / (2.0 * h);
            let (tau, x) = ([-th.sin(), th.cos()], [th.cos(), th.sin()]);
            for r in 0..2 {
                for c in 0..2 {
                    w[2 * r + c] -= 1e-3 * rb[i] * dphi * tau[r] * x[c] / m as f64;
                }
            }
        }
        for (x, y) in bin1.iter().zip(&w) {
            assert!((x - y).abs() < 1e-8 * y.abs().max(1e-6), "bin {b}: {x} vs {y}");
        }
    }
}

#[test]
fn response_is_linear_and_tangent_model_is_consistent() {
    let l = lin(0.1, 128);
    let g = align_g(&l);
    let coupling = ControlCoupling::new(&l.grid, l.rho_bar(), FeatureMap::identity(2)).unwrap();
    let cs = |g: &[f64]| backward_costate(g, &l.hessian, &l.laplacian, 2.0, CostateOptions::default()).unwrap();
    let z1 = linear_response(&cs(&g), &coupling, &l.hessian, &l.laplacian, 4).unwrap();
    let g3: Vec<f64> = g.iter().map(|v| -3.0 * v).collect();
    let z3 = linear_response(&cs(&g3), &coupling, &l.hessian, &l.laplacian, 4).unwrap();
    for (a, b) in z1.zeta.iter().flatten().zip(z3.zeta.iter().flatten()) {
        assert!((-3.0 * a - b).abs() < 1e-10 * (1.0 + b.abs()));
    }

    let w = one_gd_path(&cs(&g), &coupling, 1e-2, 0.25).unwrap();
    let ev = turnpike_core::meanfield::DensityEvolver::new(&l.grid, &l.kernel, FeatureMap::identity(2), 0.1).unwrap();
    let tangent = ev.tangent(l.rho_bar(), &w, 2.0, 0.01).unwrap();
    let small = w.scaled(1e-3);
    let path = ev.evolve(l.rho_bar(), Some(&small), 2.0, 0.01).unwrap();
    let rb = l.rho_bar().values();
    let last = tangent.last().unwrap();
    let scale = last.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for ((r, b), d) in path.terminal().values().iter().zip(rb).zip(last) {
        assert!(((r - b) / 1e-3 - d).abs() < 1e-3 * scale);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gap_is_reflection_invariant_and_nonnegative(k in 0.0f64..6.0, mu in -3.0f64..3.0, c in 0.0f64..0.5) {
        let grid = CircleGrid::new(128).unwrap();
        let kernel = grid.kernel_matrix(&a065()).unwrap();
        let rb = stationary_gibbs(&a065(), 0.1, &grid, Branch::Positive, GibbsOptions::default()).unwrap().rho;
        let v: Vec<f64> = grid.theta().iter().map(|t| (k * (t - mu).cos()).exp() + c * (3.0 * t).sin().abs()).collect();
        let rho = CircleDensity::normalize(v).unwrap();
        let (e1, d1) = energy_and_gap(&grid, &kernel, &rho, &rb, 0.1).unwrap();
        let (e2, d2) = energy_and_gap(&grid, &kernel, &rho.reflect(), &rb, 0.1).unwrap();
        prop_assert!((e1 - e2).abs() < 1e-12 && (d1 - d2).abs() < 1e-12);
        prop_assert!(d1 >= 0.0);
    }
}
