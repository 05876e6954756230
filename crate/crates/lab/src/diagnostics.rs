//! Particle-side turnpike diagnostics and their CSV forms.

use serde::{Deserialize, Serialize};
use turnpike_core::export::{csv_row, fmt_f64};
use turnpike_core::particles::Trajectory;
use turnpike_core::sphere::signed_angle;
use turnpike_core::{AttentionSpec, UnitVector};

use crate::error::LabResult;

/// Interaction gap `E_int + ½ e^{λ₁}`; zero exactly when all tokens sit on a top eigendirection.
pub fn particle_gaps(tr: &Trajectory, a: &AttentionSpec) -> Vec<f64> {
    let floor = 0.5 * a.lambda1().exp();
    tr.energies.iter().map(|e| e.interaction + floor).collect()
}

fn in_interior(t: f64, horizon: f64) -> bool {
    t >= 0.25 * horizon - 1e-9 && t <= 0.75 * horizon + 1e-9
}

/// Circular mean of all tokens over `t ∈ [T/4, 3T/4]`, falling back to `e₁`.
pub fn reference_direction(tr: &Trajectory, horizon: f64) -> UnitVector {
    let d = tr.records[0].d();
    let mut c = vec![0.0; d];
    for rec in tr.records.iter().filter(|r| in_interior(r.time, horizon)) {
        for x in rec.rows() {
            c.iter_mut().zip(x).for_each(|(a, b)| *a += b);
        }
    }
    UnitVector::normalize(c).unwrap_or_else(|_| UnitVector::basis(d, 0))
}

/// Signed angle of every token relative to `reference`, per record.
pub fn angles(tr: &Trajectory, reference: &UnitVector) -> LabResult<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(tr.records.len());
    for rec in &tr.records {
        let mut th = Vec::with_capacity(rec.n());
        for x in rec.rows() {
            th.push(signed_angle(&UnitVector::new(x.to_vec())?, reference)?);
        }
        out.push(th);
    }
    Ok(out)
}

/// Root mean square of the signed angles.
pub fn dispersion(theta: &[f64]) -> f64 {
    (theta.iter().map(|t| t * t).sum::<f64>() / theta.len() as f64).sqrt()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnpikeProfile {
    pub reference_angle: f64,
    /// median gap over `[T/4, 3T/4]`
    pub interior_plateau: f64,
    pub terminal_gap: f64,
    pub lift_ratio: f64,
    /// RMS signed angle over all tokens and interior records
    pub interior_dispersion: f64,
    pub terminal_dispersion: f64,
    /// RMS spread about the instantaneous circular mean at `T`
    pub terminal_spread: f64,
}

pub fn turnpike_profile(tr: &Trajectory, a: &AttentionSpec, horizon: f64) -> LabResult<TurnpikeProfile> {
    let gaps = particle_gaps(tr, a);
    let reference = reference_direction(tr, horizon);
    let th = angles(tr, &reference)?;
    let interior: Vec<usize> = (0..tr.records.len()).filter(|&k| in_interior(tr.records[k].time, horizon)).collect();
    let plateau = median(interior.iter().map(|&k| gaps[k]).collect());
    let terminal_gap = *gaps.last().expect("trajectory has records");
    let all: Vec<f64> = interior.iter().flat_map(|&k| th[k].iter().copied()).collect();
    let last = tr.terminal();
    let spread = match UnitVector::normalize(last.mean()) {
        Ok(m) => {
            let t: Vec<f64> = last.rows().map(|x| signed_angle(&UnitVector::new(x.to_vec()).expect("unit row"), &m)).collect::<Result<_, _>>()?;
            dispersion(&t)
        }
        Err(_) => f64::NAN,
    };
    let r = reference.coords();
    Ok(TurnpikeProfile {
        reference_angle: r[1].atan2(r[0]),
        interior_plateau: plateau,
        terminal_gap,
        lift_ratio: terminal_gap / plateau,
        interior_dispersion: dispersion(&all),
        terminal_dispersion: dispersion(th.last().expect("trajectory has records")),
        terminal_spread: spread,
    })
}

/// Affine map of the finite values onto `[0, 1]` (min → 0, max → 1).
pub fn normalize_unit(v: &[f64]) -> Vec<f64> {
    let (lo, hi) = v.iter().filter(|x| x.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = hi - lo;
    v.iter().map(|x| if span > 0.0 { (x - lo) / span } else { 0.0 }).collect()
}

pub fn angular_csv(tr: &Trajectory, theta: &[Vec<f64>]) -> String {
    let mut s = String::from("t,particle,theta\n");
    for (rec, th) in tr.records.iter().zip(theta) {
        for (i, v) in th.iter().enumerate() {
            csv_row(&mut s, &[fmt_f64(rec.time), i.to_string(), fmt_f64(*v)]);
        }
    }
    s
}

pub fn energy_csv(tr: &Trajectory, gaps: &[f64]) -> String {
    let mut s = String::from("t,interaction,entropy,total,gap\n");
    for ((rec, e), g) in tr.records.iter().zip(&tr.energies).zip(gaps) {
        csv_row(&mut s, &[fmt_f64(rec.time), fmt_f64(e.interaction), fmt_f64(e.entropy), fmt_f64(e.total), fmt_f64(*g)]);
    }
    s
}

/// Normalized observed gap against the normalized envelope `e^{-2 R (T - t)}`.
pub fn overlay_csv(times: &[f64], gaps: &[f64], rate: f64, horizon: f64) -> String {
    let obs = normalize_unit(gaps);
    let env: Vec<f64> = times.iter().map(|t| (-2.0 * rate * (horizon - t)).exp()).collect();
    let env = normalize_unit(&env);
    let mut s = String::from("t,observed,theory\n");
    for ((t, o), e) in times.iter().zip(&obs).zip(&env) {
        csv_row(&mut s, &[fmt_f64(*t), fmt_f64(*o), fmt_f64(*e)]);
    }
    s
}

pub fn series_csv(header: &str, rows: &[(f64, f64)]) -> String {
    let mut s = format!("{header}\n");
    for (a, b) in rows {
        csv_row(&mut s, &[fmt_f64(*a), fmt_f64(*b)]);
    }
    s
}

/// Spearman rank correlation (no tie correction needed for distinct values).
pub fn rank_correlation(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        for (k, &i) in idx.iter().enumerate() {
            r[i] = k as f64;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let m = (n - 1.0) / 2.0;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - m) * (b - m)).sum();
    let var: f64 = rx.iter().map(|a| (a - m).powi(2)).sum();
    cov / var
}

pub fn strictly_monotone(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0]) || v.windows(2).all(|w| w[1] < w[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_is_affine_invariant() {
        let v = [3.0, -1.0, 7.5, 2.0];
        let w: Vec<f64> = v.iter().map(|x| 4.0 + 2.5 * x).collect();
        for (a, b) in normalize_unit(&v).iter().zip(normalize_unit(&w)) {
            assert!((a - b).abs() < 1e-15);
        }
        let n = normalize_unit(&v);
        assert_eq!(n[1], 0.0);
        assert_eq!(n[2], 1.0);
    }

    #[test]
    fn ranks_and_monotonicity() {
        assert_eq!(rank_correlation(&[1.0, 2.0, 3.0], &[0.1, 5.0, 9.0]), 1.0);
        assert_eq!(rank_correlation(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
        assert!(strictly_monotone(&[3.0, 2.0, 1.0]));
        assert!(!strictly_monotone(&[1.0, 1.0, 2.0]));
        assert_eq!(median(vec![4.0, 1.0, 3.0, 2.0]), 2.5);
    }
}
