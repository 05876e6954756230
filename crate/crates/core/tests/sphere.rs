use proptest::prelude::*;
use turnpike_core::sphere::{project_tangent, retract, sample_cap_init, sample_vmf, signed_angle, wrap_angle};
use turnpike_core::{RngStream, UnitVector};

/// I₁(2)/I₀(2), evaluated to 30 digits with an arbitrary-precision Bessel routine.
const MEAN_RESULTANT_KAPPA_2: f64 = 0.697_774_657_964_007_982;

/// E[θ²] for θ = atan2(0.3 ξ₂, 1 + 0.3 ξ₁), Monte Carlo with 10⁷ draws from a different generator.
const CAP_SECOND_MOMENT: f64 = 0.102_255_188_716_803_9;

fn angles(v: &[UnitVector]) -> Vec<f64> {
    v.iter().map(|u| u.coords()[1].atan2(u.coords()[0])).collect()
}

fn resultant(th: &[f64]) -> f64 {
    let (c, s) = th.iter().fold((0.0, 0.0), |(c, s), t| (c + t.cos(), s + t.sin()));
    (c * c + s * s).sqrt() / th.len() as f64
}

#[test]
fn vmf_mean_resultant_matches_bessel_ratio() {
    let th = angles(&sample_vmf(&UnitVector::basis(2, 0), 2.0, 1_000_000, RngStream::new(3, 0)).unwrap());
    let r = resultant(&th);
    // standard error of the resultant at n = 10⁶ is about 6e-4
    assert!((r - MEAN_RESULTANT_KAPPA_2).abs() < 3e-3, "R = {r}");
}

#[test]
fn uniform_vmf_passes_chi_square() {
    let n = 100_000;
    let th = angles(&sample_vmf(&UnitVector::basis(2, 0), 0.0, n, RngStream::new(4, 0)).unwrap());
    assert!(resultant(&th) < 0.02);
    let mut counts = [0usize; 16];
    for t in th {
        let b = ((t + std::f64::consts::PI) / (2.0 * std::f64::consts::PI) * 16.0).floor() as usize;
        counts[b.min(15)] += 1;
    }
    let expected = n as f64 / 16.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 0.999 quantile of chi-square with 15 degrees of freedom
    assert!(chi2 < 37.70, "chi2 = {chi2}");
}

#[test]
fn cap_init_moments() {
    let th = angles(&sample_cap_init(2, 0.3, 100_000, RngStream::new(5, 0)).unwrap());
    let (c, s) = th.iter().fold((0.0, 0.0), |(c, s), t| (c + t.cos(), s + t.sin()));
    assert!(s.atan2(c).abs() < 0.02);
    let m2 = th.iter().map(|t| t * t).sum::<f64>() / th.len() as f64;
    assert!((m2 / CAP_SECOND_MOMENT - 1.0).abs() < 0.02, "second moment {m2}");
}

fn unit(d: usize) -> impl Strategy<Value = UnitVector> {
    prop::collection::vec(-1.0f64..1.0, d).prop_filter_map("nonzero", |v| UnitVector::normalize(v).ok())
}

proptest! {
    #[test]
    fn projection_is_tangent(x in unit(4), v in prop::collection::vec(-10.0f64..10.0, 4)) {
        let p = project_tangent(&x, &v).unwrap();
        let ip: f64 = p.iter().zip(x.coords()).map(|(a, b)| a * b).sum();
        prop_assert!(ip.abs() < 1e-12);
    }

    #[test]
    fn zero_step_retraction_is_identity(x in unit(3)) {
        let y = retract(&x, &[0.0; 3]).unwrap();
        for (a, b) in x.coords().iter().zip(y.coords()) {
            prop_assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn signed_angle_is_antisymmetric(a in -3.1f64..3.1, b in -3.1f64..3.1) {
        prop_assume!((wrap_angle(a - b).abs() - std::f64::consts::PI).abs() > 1e-9);
        let (x, r) = (UnitVector::from_angle(a), UnitVector::from_angle(b));
        let s = signed_angle(&x, &r).unwrap() + signed_angle(&r, &x).unwrap();
        let k = (s / (2.0 * std::f64::consts::PI)).round();
        prop_assert!((s - 2.0 * std::f64::consts::PI * k).abs() < 1e-12);
    }
}
