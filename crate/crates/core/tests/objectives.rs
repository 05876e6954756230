use proptest::prelude::*;
use turnpike_core::meanfield::{CircleDensity, CircleGrid};
use turnpike_core::objectives::{BowLoss, Loss};
use turnpike_core::{RngStream, UnitVector, UnitVectorEnsemble};

fn from_angles(th: &[f64]) -> UnitVectorEnsemble {
    UnitVectorEnsemble::new(2, th.iter().flat_map(|t| [t.cos(), t.sin()]).collect(), 0.0).unwrap()
}

/// Worst relative error of the gradient along each particle's tangent direction,
/// against central differences in the particle angles.
fn angular_fd_error(loss: &Loss, th: &[f64]) -> f64 {
    let g = loss.grad(&from_angles(th)).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..th.len() {
        let (mut p, mut m) = (th.to_vec(), th.to_vec());
        p[i] += h;
        m[i] -= h;
        let fd = (loss.value(&from_angles(&p)).unwrap() - loss.value(&from_angles(&m)).unwrap()) / (2.0 * h);
        let an = -th[i].sin() * g[2 * i] + th[i].cos() * g[2 * i + 1];
        worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-3));
    }
    worst
}

#[test]
fn bow_gradient_matches_finite_differences() {
    let cands = [0.4, 1.9, -2.2, 3.0].iter().map(|&t| UnitVector::from_angle(t)).collect();
    let bow = Loss::Bow(BowLoss::new(cands, vec![0.1, 0.2, 0.3, 0.4]).unwrap());
    let err = angular_fd_error(&bow, &[0.2, 1.3, -2.5]);
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn bow_single_candidate_vanishes() {
    let bow = Loss::Bow(BowLoss::new(vec![UnitVector::from_angle(0.7)], vec![1.0]).unwrap());
    assert_eq!(bow.value(&from_angles(&[0.1, 2.0, -1.0])).unwrap(), 0.0);
}

fn mean_zero(rho: &CircleDensity, raw: &[f64]) -> Vec<f64> {
    rho.center(raw)
}

#[test]
fn grid_derivative_is_a_directional_derivative() {
    let grid = CircleGrid::new(256).unwrap();
    let rho = CircleDensity::von_mises(&grid, 0.4, 2.0).unwrap();
    let bow = Loss::Bow(BowLoss::sampled(&UnitVector::basis(2, 1), 2.0, 6, RngStream::new(2, 0)).unwrap());
    let losses = [Loss::align(UnitVector::from_angle(1.1)), bow];
    for loss in &losses {
        let g = loss.functional_derivative_on_grid(&grid, &rho).unwrap();
        assert!(rho.mean_of(&g).abs() < 1e-12);
        for k in 1..=3 {
            let h = mean_zero(&rho, &grid.theta().iter().map(|t| (k as f64 * t + 0.3 * k as f64).cos()).collect::<Vec<_>>());
            let perturbed = |s: f64| {
                let v = rho.values().iter().zip(&h).map(|(r, hh)| r * (1.0 + s * hh)).collect();
                loss.value_on_grid(&grid, &CircleDensity::new(v).unwrap()).unwrap()
            };
            let s = 1e-5;
            let fd = (perturbed(s) - perturbed(-s)) / (2.0 * s);
            assert!((fd - rho.inner(&g, &h)).abs() < 1e-6, "k={k}: {fd} vs {}", rho.inner(&g, &h));
        }
    }
}

proptest! {
    #[test]
    fn align_is_bounded_with_correct_gradient(th in prop::collection::vec(-3.1f64..3.1, 1..6), t in -3.1f64..3.1) {
        let loss = Loss::align(UnitVector::from_angle(t));
        let v = loss.value(&from_angles(&th)).unwrap();
        prop_assert!((0.0..=2.0).contains(&v));
        prop_assert!(angular_fd_error(&loss, &th) < 1e-5);
    }

    #[test]
    fn bow_is_finite_with_correct_gradient(th in prop::collection::vec(-3.1f64..3.1, 1..5), seed in 0u64..500) {
        let loss = Loss::Bow(BowLoss::sampled(&UnitVector::basis(2, 1), 1.0, 4, RngStream::new(seed, 0)).unwrap());
        prop_assert!(loss.value(&from_angles(&th)).unwrap().is_finite());
        prop_assert!(angular_fd_error(&loss, &th) < 1e-5);
    }
}
