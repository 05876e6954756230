use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use turnpike_core::RngStream;
use turnpike_lab::{fit_terminal_rate, LabError};

fn series(a: f64, c: f64, n: usize, horizon: f64) -> Vec<(f64, f64)> {
    (0..n).map(|i| {
        let t = horizon * i as f64 / (n - 1) as f64;
        (t, c * (-a * (horizon - t)).exp())
    }).collect()
}

#[test]
fn noisy_fits_recover_the_rate() {
    let truth = 0.8;
    for seed in 0..100 {
        let mut rng = RngStream::new(seed, 0).rng();
        let noisy: Vec<(f64, f64)> = series(truth, 3e-4, 200, 10.0)
            .into_iter()
            .map(|(t, g)| (t, g * (1.0 + 0.01 * rng.sample::<f64, _>(StandardNormal))))
            .collect();
        let f = fit_terminal_rate(&noisy, [0.0, 10.0], 1e-12).unwrap();
        assert!((f.a / truth - 1.0).abs() < 0.05, "seed {seed}: a = {}", f.a);
    }
}

#[test]
fn floor_level_series_reports_no_lift() {
    let flat: Vec<(f64, f64)> = (0..50).map(|i| (i as f64 * 0.2, 1e-12)).collect();
    assert!(matches!(fit_terminal_rate(&flat, [0.0, 10.0], 1e-12), Err(LabError::NoLift { .. })));
}

proptest! {
    #[test]
    fn scaling_the_gap_scales_only_the_prefactor(a in 0.05f64..3.0, c in 1e-9f64..1.0, k in 1e-6f64..1e6) {
        let base: Vec<(f64, f64)> = series(a, c, 40, 10.0)
            .into_iter()
            .enumerate()
            .map(|(i, (t, g))| (t, g * (1.0 + 0.05 * (i as f64).sin())))
            .collect();
        let scaled: Vec<(f64, f64)> = base.iter().map(|&(t, g)| (t, k * g)).collect();
        let f = fit_terminal_rate(&base, [0.0, 10.0], 1e-300).unwrap();
        let g = fit_terminal_rate(&scaled, [0.0, 10.0], 1e-300).unwrap();
        prop_assert!((f.a - g.a).abs() < 1e-12);
        prop_assert!((g.c / (k * f.c) - 1.0).abs() < 1e-12);
    }
}
