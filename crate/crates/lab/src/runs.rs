//! The experiments. Each writes its artifacts through a [`RunDir`] and returns
//! the threshold checks used by `--check` mode.
//!
//! Random streams: the config seed gives the root stream; sweep point `i` uses
//! `root.derive(POINT_BASE + i)` (exp0 uses `POINT_BASE`), and within a point the
//! initial cap, simulation noise, training noise and BoW candidates use the tags
//! below.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use turnpike_core::export::{control_path_json, csv_row, fmt_f64, history_csv};
use turnpike_core::objectives::{BowLoss, Loss};
use turnpike_core::particles::{simulate, ControlPath, SimConfig, Trajectory, UnitVectorEnsemble};
use turnpike_core::sphere::sample_cap_init;
use turnpike_core::training::{train, HistoryRow, Problem};
use turnpike_core::{AttentionSpec, RngStream};

use crate::analysis::{escape_consistency, escape_rate, landscape, stationary, GridProblem, RatePoint};
use crate::config::{Experiment, ExperimentConfig, LossKind};
use crate::diagnostics::{
    angles, energy_csv, overlay_csv, particle_gaps, rank_correlation, reference_direction, series_csv, strictly_monotone,
    turnpike_profile, TurnpikeProfile,
};
use crate::error::LabResult;
use crate::fit::{fit_terminal_rate, last_window};
use crate::manifest::{RunDir, RunManifest};
use crate::svg::emit_svg_plots;

pub const POINT_BASE: u64 = 0x100;
pub const TAG_INIT: u64 = 1;
pub const TAG_SIM: u64 = 2;
pub const TAG_TRAIN: u64 = 3;
pub const TAG_CANDIDATES: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.to_string(), passed, detail }
    }
}

#[derive(Debug)]
pub struct Outcome {
    pub manifest: RunManifest,
    pub checks: Vec<Check>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Runs the experiment the config is bound to, writing into `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> LabResult<Outcome> {
    let mut dir = RunDir::start(out, cfg)?;
    dir.write("config.toml", &toml::to_string(cfg).map_err(|e| crate::error::LabError::Config(e.to_string()))?)?;
    let checks = match cfg.experiment() {
        Experiment::Exp0 => run_exp0(cfg, &mut dir)?,
        Experiment::SweepLambda2 => run_sweep_lambda2(cfg, &mut dir)?,
        Experiment::SweepKappa => run_sweep_kappa(cfg, &mut dir)?,
        Experiment::Stationary => run_stationary(cfg, &mut dir)?,
        Experiment::Rate => run_rate(cfg, &mut dir)?,
        Experiment::Escape => run_escape(cfg, &mut dir)?,
        Experiment::Landscape => run_landscape(cfg, &mut dir)?,
    };
    let files = dir.manifest().files.clone();
    for (name, svg) in emit_svg_plots(dir.path(), &files)? {
        dir.write(&name, &svg)?;
    }
    dir.write_json("checks.json", &checks)?;
    Ok(Outcome { manifest: dir.finish()?, checks })
}

fn point_stream(cfg: &ExperimentConfig, index: usize) -> RngStream {
    cfg.root_stream().derive(POINT_BASE + index as u64)
}

pub fn initial_ensemble(cfg: &ExperimentConfig, stream: RngStream) -> LabResult<UnitVectorEnsemble> {
    let units = sample_cap_init(cfg.model.d, cfg.model.init_spread, cfg.model.n, stream.derive(TAG_INIT))?;
    Ok(UnitVectorEnsemble::from_units(&units, 0.0)?)
}

pub fn sim_config(cfg: &ExperimentConfig, stream: RngStream) -> SimConfig {
    let m = &cfg.model;
    let mut s = SimConfig::new(m.horizon, m.dt, m.eps_sim, m.record_stride, stream.derive(TAG_SIM));
    s.entropy = m.entropy;
    s
}

/// Loss of the config's kind; BoW candidates come from the point stream.
pub fn build_loss(cfg: &ExperimentConfig, kind: LossKind, stream: RngStream) -> LabResult<Loss> {
    Ok(match kind {
        LossKind::Align => Loss::align(cfg.target()?),
        LossKind::Bow => Loss::Bow(BowLoss::sampled(
            &cfg.cand_mean()?,
            cfg.loss.kappa_cand,
            cfg.loss.vocab,
            stream.derive(TAG_CANDIDATES),
        )?),
    })
}

pub struct ParticleRun {
    pub name: String,
    pub trajectory: Trajectory,
    pub controls: ControlPath,
    pub history: Option<Vec<HistoryRow>>,
    pub diverged_at: Option<usize>,
}

/// Simulates one run; trains the controls first when a loss is given.
pub fn particle_run(
    cfg: &ExperimentConfig,
    a: &AttentionSpec,
    loss: Option<&Loss>,
    stream: RngStream,
    name: &str,
) -> LabResult<ParticleRun> {
    let init = initial_ensemble(cfg, stream)?;
    let sim = sim_config(cfg, stream);
    let sigma = cfg.model.features;
    let zero = ControlPath::zeros_for_horizon(cfg.model.d, sigma.output_dim(), cfg.model.horizon, cfg.training.bin_width)?;
    let (controls, history, diverged_at) = match loss {
        None => (zero, None, None),
        Some(loss) => {
            let problem = Problem { init: &init, loss, a, sigma: &sigma, cfg: &sim, lambda_reg: cfg.training.lambda_reg };
            let res = train(zero, &problem, &cfg.training.train_config(), stream.derive(TAG_TRAIN))?;
            (res.controls, Some(res.history), res.diverged_at)
        }
    };
    let trajectory = simulate(&init, &controls, a, &sigma, &sim)?;
    Ok(ParticleRun { name: name.to_string(), trajectory, controls, history, diverged_at })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub profile: TurnpikeProfile,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub diverged_at: Option<usize>,
    /// fit of the particle gap series over the same window as the grid fit
    pub particle_fit_a: Option<f64>,
}

/// Writes the per-run CSV/JSON artifacts and returns its summary.
fn write_particle_run(
    cfg: &ExperimentConfig,
    dir: &mut RunDir,
    a: &AttentionSpec,
    run: &ParticleRun,
    rate: Option<f64>,
) -> LabResult<RunSummary> {
    let tr = &run.trajectory;
    let horizon = cfg.model.horizon;
    let gaps = particle_gaps(tr, a);
    let reference = reference_direction(tr, horizon);
    let theta = angles(tr, &reference)?;
    let profile = turnpike_profile(tr, a, horizon)?;
    let times = tr.times();
    dir.write(&format!("{}_angular.csv", run.name), &crate::diagnostics::angular_csv(tr, &theta))?;
    dir.write(&format!("{}_energy.csv", run.name), &energy_csv(tr, &gaps))?;
    if let Some(r) = rate {
        dir.write(&format!("{}_overlay.csv", run.name), &overlay_csv(&times, &gaps, r, horizon))?;
    }
    if let Some(h) = &run.history {
        dir.write(&format!("{}_history.csv", run.name), &history_csv(h))?;
        dir.write(&format!("{}_controls.json", run.name), &(control_path_json(&run.controls, cfg.model.features)? + "\n"))?;
    }
    let series: Vec<(f64, f64)> = times.iter().copied().zip(gaps.iter().copied()).collect();
    let particle_fit_a = fit_terminal_rate(&series, last_window(horizon, cfg.rate.window), cfg.rate.floor).ok().map(|f| f.a);
    Ok(RunSummary {
        name: run.name.clone(),
        profile,
        initial_loss: run.history.as_ref().and_then(|h| h.first()).map(|r| r.terminal_loss),
        final_loss: run.history.as_ref().and_then(|h| h.last()).map(|r| r.terminal_loss),
        diverged_at: run.diverged_at,
        particle_fit_a,
    })
}

fn grid_rate(cfg: &ExperimentConfig, a: &AttentionSpec, loss: &Loss) -> LabResult<f64> {
    let gp = GridProblem::new(a, cfg.model.eps_rate, cfg.model.m, loss, cfg.model.features, cfg.rate.horizon)?;
    Ok(gp.rayleigh_rate)
}

fn run_exp0(cfg: &ExperimentConfig, dir: &mut RunDir) -> LabResult<Vec<Check>> {
    let a = cfg.attention()?;
    let stream = point_stream(cfg, 0);
    let align = build_loss(cfg, LossKind::Align, stream)?;
    let bow = build_loss(cfg, LossKind::Bow, stream)?;
    let specs: [(&str, Option<&Loss>); 3] = [("untrained", None), ("align", Some(&align)), ("bow", Some(&bow))];
    let runs: Vec<LabResult<ParticleRun>> =
        specs.par_iter().map(|(name, loss)| particle_run(cfg, &a, *loss, stream, name)).collect();
    let rates = [None, Some(grid_rate(cfg, &a, &align)?), Some(grid_rate(cfg, &a, &bow)?)];
    let mut summaries = Vec::new();
    for (run, rate) in runs.into_iter().zip(rates) {
        summaries.push(write_particle_run(cfg, dir, &a, &run?, rate)?);
    }
    dir.write_json("profile.json", &summaries)?;
    let (u, al, bw) = (&summaries[0].profile, &summaries[1].profile, &summaries[2].profile);
    Ok(vec![
        Check::new("untrained lift ratio <= 2", u.lift_ratio <= 2.0, format!("{:.4}", u.lift_ratio)),
        Check::new("align lift ratio >= 10", al.lift_ratio >= 10.0, format!("{:.4}", al.lift_ratio)),
        Check::new(
            "align interior dispersion < 0.1 rad",
            al.interior_dispersion < 0.1,
            format!("{:.4e}", al.interior_dispersion),
        ),
        Check::new(
            "bow terminal dispersion >= 3x interior",
            bw.terminal_dispersion >= 3.0 * bw.interior_dispersion,
            format!("{:.4e} vs {:.4e}", bw.terminal_dispersion, bw.interior_dispersion),
        ),
    ])
}

fn rate_csv(points: &[RatePoint], particle_a: &[Option<f64>]) -> String {
    let mut s = String::from("param,fitted_a,fitted_C,rms_residual,rayleigh_rate,particle_fitted_a\n");
    for (p, pa) in points.iter().zip(particle_a) {
        csv_row(
            &mut s,
            &[
                fmt_f64(p.param),
                fmt_f64(p.fit.a),
                fmt_f64(p.fit.c),
                fmt_f64(p.fit.rms_log_residual),
                fmt_f64(p.rayleigh_rate),
                fmt_f64(pa.unwrap_or(f64::NAN)),
            ],
        );
    }
    s
}

/// Grid rate point for the `λ₂` sweep; exposed for the acceptance suite.
pub fn lambda2_rate_point(cfg: &ExperimentConfig, l2: f64) -> LabResult<RatePoint> {
    let c = cfg.with_lambda2(l2);
    let a = c.attention()?;
    let loss = build_loss(&c, LossKind::Align, c.root_stream())?;
    escape_rate(&a, c.model.eps_rate, c.model.m, &loss, c.model.features, &c.rate, c.training.bin_width, l2)
}

fn run_sweep_lambda2(cfg: &ExperimentConfig, dir: &mut RunDir) -> LabResult<Vec<Check>> {
    let values = &cfg.sweep.lambda2;
    let points: Vec<RatePoint> = values.par_iter().map(|&l2| lambda2_rate_point(cfg, l2)).collect::<LabResult<_>>()?;
    let mut particle_a = vec![None; values.len()];
    if cfg.sweep.particles {
        let runs: Vec<LabResult<(ParticleRun, AttentionSpec)>> = values
            .par_iter()
            .enumerate()
            .map(|(i, &l2)| {
                let c = cfg.with_lambda2(l2);
                let a = c.attention()?;
                let loss = build_loss(&c, LossKind::Align, point_stream(cfg, i))?;
                Ok((particle_run(&c, &a, Some(&loss), point_stream(cfg, i), &format!("lambda2_{l2}"))?, a))
            })
            .collect();
        let mut summaries = Vec::new();
        for ((run, p), pa) in runs.into_iter().zip(&points).zip(particle_a.iter_mut()) {
            let (run, a) = run?;
            let s = write_particle_run(cfg, dir, &a, &run, Some(p.rayleigh_rate))?;
            *pa = s.particle_fit_a;
            summaries.push(s);
        }
        dir.write_json("profile.json", &summaries)?;
    }
    for p in &points {
        dir.write(&format!("escape_lambda2_{}.csv", p.param), &series_csv("t,gap", &p.profile))?;
    }
    dir.write("rate.csv", &rate_csv(&points, &particle_a))?;
    Ok(sweep_checks(&points))
}

fn sweep_checks(points: &[RatePoint]) -> Vec<Check> {
    let r: Vec<f64> = points.iter().map(|p| p.rayleigh_rate).collect();
    let a: Vec<f64> = points.iter().map(|p| p.fit.a).collect();
    let rho = rank_correlation(&a, &r);
    vec![
        Check::new("rayleigh rate strictly monotone", strictly_monotone(&r), format!("{r:?}")),
        Check::new("rank correlation of fitted a with R is +1", rho == 1.0, format!("{rho} (a = {a:?})")),
    ]
}

fn run_sweep_kappa(cfg: &ExperimentConfig, dir: &mut RunDir) -> LabResult<Vec<Check>> {
    let a = cfg.attention()?;
    let values = &cfg.sweep.kappa;
    let losses: Vec<Loss> = values
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let mut c = cfg.clone();
            c.loss.kappa_cand = k;
            build_loss(&c, LossKind::Bow, point_stream(cfg, i))
        })
        .collect::<LabResult<_>>()?;
    let points: Vec<RatePoint> = values
        .par_iter()
        .zip(&losses)
        .map(|(&k, loss)| escape_rate(&a, cfg.model.eps_rate, cfg.model.m, loss, cfg.model.features, &cfg.rate, cfg.training.bin_width, k))
        .collect::<LabResult<_>>()?;
    let mut checks = Vec::new();
    let mut particle_a = vec![None; values.len()];
    if cfg.sweep.particles {
        let runs: Vec<LabResult<ParticleRun>> = values
            .par_iter()
            .zip(&losses)
            .enumerate()
            .map(|(i, (&k, loss))| particle_run(cfg, &a, Some(loss), point_stream(cfg, i), &format!("kappa_{k}")))
            .collect();
        let mut summaries = Vec::new();
        for ((run, p), pa) in runs.into_iter().zip(&points).zip(particle_a.iter_mut()) {
            let s = write_particle_run(cfg, dir, &a, &run?, Some(p.rayleigh_rate))?;
            *pa = s.particle_fit_a;
            summaries.push(s);
        }
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        let disp: Vec<f64> = order.iter().map(|&i| summaries[i].profile.terminal_dispersion).collect();
        checks.push(Check::new(
            "smaller kappa gives larger terminal dispersion",
            disp.windows(2).all(|w| w[0] > w[1]),
            format!("{disp:?}"),
        ));
        dir.write_json("profile.json", &summaries)?;
    }
    for (p, loss) in points.iter().zip(&losses) {
        dir.write(&format!("escape_kappa_{}.csv", p.param), &series_csv("t,gap", &p.profile))?;
        if let Loss::Bow(b) = loss {
            let mut s = String::from("candidate,x0,x1\n");
            for (w, c) in b.candidates.iter().enumerate() {
                csv_row(&mut s, &[w.to_string(), fmt_f64(c.coords()[0]), fmt_f64(c.coords()[1])]);
            }
            dir.write(&format!("candidates_kappa_{}.csv", p.param), &s)?;
        }
    }
    dir.write("rate.csv", &rate_csv(&points, &particle_a))?;
    let ratios: Vec<f64> = points.iter().map(|p| p.fit.a / p.rayleigh_rate).collect();
    checks.push(Check::new(
        "fitted a within a factor 3 of R",
        ratios.iter().all(|r| (1.0 / 3.0..=3.0).contains(r)),
        format!("{ratios:?}"),
    ));
    Ok(checks)
}

fn run_stationary(cfg: &ExperimentConfig, dir: &mut RunDir) -> LabResult<Vec<Check>> {
    let a = cfg.attention()?;
    let (report, pos, neg) = stationary(&a, cfg.model.eps_rate, cfg.model.m)?;
    let grid = turnpike_core::meanfield::CircleGrid::new(cfg.model.m)?;
    let mut s = String::from("theta,rho_positive,rho_negative\n");
    for ((t, p), n) in grid.theta().iter().zip(pos.values()).zip(neg.values()) {
        csv_row(&mut s, &[fmt_f64(*t), fmt_f64(*p), fmt_f64(*n)]);
    }
    dir.write("stationary.csv", &s)?;
    dir.write_json("stationary.json", &report)?;
    Ok(vec![
        Check::new("fixed-point residual < 1e-10", report.residual < 1e-10, format!("{:e}", report.residual)),
        Check::new(
            "reflection symmetry < 1e-10",
            report.mirror_defect < 1e-10 && report.antipodal_defect < 1e-10,
            format!("{:e} / {:e}", report.mirror_defect, report.antipodal_defect),
        ),
    ])
}

fn run_rate(cfg: &ExperimentConfig, dir: &mut RunDir) -> LabResult<Vec<Check>> {
    let a = cfg.attention()?;
    let loss = build_loss(cfg, cfg.loss.kind, point_stream(cfg, 0))?;
    let p = escape_rate(&a, cfg.model.eps_rate, cfg.model.m, &loss, cfg.model.features, &cfg.rate, cfg.training.bin_width, a.lambda2())?;
    dir.write("escape_profile.csv", &series_csv("t,gap", &p.profile))?;
    dir.write("rate.csv", &rate_csv(std::slice::from_ref(&p), &[None]))?;
    dir.write_json("fit.json", &serde_json::json!({ "alpha": p.alpha, "rayleigh_rate": p.rayleigh_rate, "fit": p.fit }))?;
    Ok(vec![Check::new("lift detected", p.fit.points_used >= 4 && p.fit.a.is_finite(), format!("a = {}", p.fit.a))])
}

fn run_escape(cfg: &ExperimentConfig, dir: &mut RunDir) -> LabResult<Vec<Check>> {
    let a = cfg.attention()?;
    let loss = build_loss(cfg, cfg.loss.kind, point_stream(cfg, 0))?;
    let r = &cfg.rate;
    let rep = escape_consistency(
        &a,
        cfg.model.eps_rate,
        cfg.model.m,
        &loss,
        cfg.model.features,
        r.escape_horizon,
        r.dt,
        cfg.training.bin_width,
        &[r.alpha, r.alpha_small],
    )?;
    dir.write_json("escape.json", &rep)?;
    Ok(escape_checks(&rep))
}

pub fn escape_checks(rep: &crate::analysis::EscapeReport) -> Vec<Check> {
    let (big, small) = (&rep.rows[0], &rep.rows[1]);
    let (e1, e2) = ((big.ratio - 1.0).abs(), (small.ratio - 1.0).abs());
    let cs_ok = rep.cauchy_schwarz.iter().all(|c| c.lhs <= c.rhs * (1.0 + 1e-8));
    vec![
        Check::new("escape ratio within 0.1", e1 < 0.1, format!("ratio {} at alpha {}", big.ratio, big.alpha)),
        Check::new("ratio error shrinks with alpha", e2 < e1, format!("{e1:e} -> {e2:e}")),
        Check::new(
            "cauchy-schwarz at three late times",
            cs_ok,
            rep.cauchy_schwarz.iter().map(|c| format!("t={}: {} <= {}", c.t, c.lhs, c.rhs)).collect::<Vec<_>>().join("; "),
        ),
    ]
}

fn run_landscape(cfg: &ExperimentConfig, dir: &mut RunDir) -> LabResult<Vec<Check>> {
    let a = cfg.attention()?;
    let rep = landscape(&a, cfg.model.eps_rate, cfg.model.m)?;
    dir.write_json("landscape.json", &rep)?;
    let mut checks = Vec::new();
    match &rep.spectral {
        Some(s) => {
            let mut csv = String::from("index,eigenvalue\n");
            for (i, v) in s.spectrum.iter().enumerate() {
                csv_row(&mut csv, &[i.to_string(), fmt_f64(*v)]);
            }
            dir.write("spectrum.csv", &csv)?;
            checks.push(Check::new(
                "hessian spectrum inside window",
                s.within_window,
                format!("[{:e}, {:e}] within [{:e}, {:e}]", s.h_min, s.h_max, s.window_lower, s.window_upper),
            ));
        }
        None => checks.push(Check::new("attention assumption violated; spectral claims skipped", true, String::new())),
    }
    Ok(checks)
}
