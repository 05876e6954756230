//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use turnpike_core::attention::landscape_constants_from;
use turnpike_core::meanfield::{
    backward_costate, energy, evolve_density, rayleigh_rate, CircleDensity, CircleGrid, CostateOptions, GibbsOptions,
    Hessian, Linearization, WeightedLaplacian,
};
use turnpike_core::objectives::Loss;
use turnpike_core::sphere::sample_cap_init;
use turnpike_core::training::{backprop_gradient, Problem};
use turnpike_core::{AttentionSpec, ControlPath, FeatureMap, RngStream, SimConfig, UnitVector, UnitVectorEnsemble};
use turnpike_lab::analysis::{escape_consistency, landscape};
use turnpike_lab::runs::escape_checks;
use turnpike_lab::{run, Experiment, ExperimentConfig};

/// `(λ₁, λ₂, Δ₀, Q_A)` from an independent 40-digit evaluation.
const CLOSED_FORMS: [(f64, f64, f64, f64); 20] = [
    (0.48685610675730573, 0.2770957079853799, 0.1539499093505791443, 1.3192926318326984553),
    (2.025421751105351, 0.8359150584213824, 1.8618421663293125786, 3.8556225190346773081),
    (0.9597313380817643, 0.1752670002064633, 0.55699978393834072172, 1.4969953364087120584),
    (2.151777203387578, 2.050250606571885, 0.41514048237444475313, 7.7698480373204290381),
    (1.6264550609055641, 0.8661237490129896, 1.2222971149345127146, 2.6412195949426343637),
    (0.25390400128185986, 0.1870856441624731, 0.041658753478280972714, 1.2057305444107251802),
    (2.453695916855714, 1.5421518403478967, 2.8863200722044797796, 5.8586153856386487896),
    (2.320206965033862, 1.494373818111222, 2.5198818210719473922, 5.1380168906568899649),
    (0.2782301999021588, 0.01086476712291104, 0.14091692401721648167, 1.0389563599583458217),
    (2.6885255578519027, 1.2732525146321223, 3.6604974555389788675, 7.38897601078994939),
    (1.7338318131008794, 1.154081645209206, 1.2455997136174088176, 3.1711098759532202823),
    (2.8622532348134273, 1.035047896621961, 4.3609440878455434779, 8.7790280412617430551),
    (1.2437576350004587, 0.15852721726344157, 0.79508099190759088488, 1.8784608419583929162),
    (1.946380672006759, 0.6817129660564952, 1.715126123637314777, 3.5730421883785036409),
    (1.552483204390351, 0.3666875479980079, 1.1278656729163838524, 2.4674529184105032191),
    (2.145435305550528, 1.0231689157253252, 2.1071858392316854032, 4.3313887662312383675),
    (1.7123125953799623, 0.5434459818741195, 1.3403286295042338667, 2.8611052655005182915),
    (2.301332954523374, 1.7592660508480342, 2.0896567626135506021, 5.8081729260490108776),
    (0.8308150234526346, 0.7127435277673626, 0.12780468934702342907, 2.0395792320184449748),
    (1.6640718633894394, 1.3097314145224288, 0.7877956387003618095, 3.705178421440049502),
];

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn a065() -> AttentionSpec {
    AttentionSpec::diagonal(&[1.0, 0.65]).unwrap()
}

fn align_e2() -> Loss {
    Loss::align(UnitVector::basis(2, 1))
}

fn adjoint() -> Verdict {
    let init = UnitVectorEnsemble::from_units(&sample_cap_init(2, 0.3, 8, RngStream::new(1, 1)).unwrap(), 0.0).unwrap();
    let a = a065();
    let sigma = FeatureMap::identity(2);
    let cfg = SimConfig::new(2.0, 0.05, 0.01, 1, RngStream::new(1, 2));
    let mut rng = RngStream::new(1, 3).rng();
    let bins = (0..8).map(|_| (0..4).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect()).collect();
    let w = ControlPath::new(2, 2, 0.25, bins).unwrap();
    let loss = align_e2();
    let problem = Problem { init: &init, loss: &loss, a: &a, sigma: &sigma, cfg: &cfg, lambda_reg: 0.0 };
    let noise = problem.default_noise(&w).unwrap();
    let g = backprop_gradient(&w, &problem, &noise).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for b in 0..w.k() {
        for e in 0..w.bins[b].len() {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp.bins[b][e] += h;
            wm.bins[b][e] -= h;
            let fd = (problem.objective_parts(&wp, &noise).unwrap().objective()
                - problem.objective_parts(&wm, &noise).unwrap().objective())
                / (2.0 * h);
            let an = g.bins[b][e];
            // relative 1e-4, or absolute 1e-8 for tiny entries
            worst = worst.max(((fd - an).abs() / fd.abs().max(an.abs()).max(1e-4)).min((fd - an).abs() / 1e-8 * 1e-4));
        }
    }
    verdict(worst < 1e-4, format!("max relative gradient error {worst:.3e}"))
}

fn gibbs() -> Verdict {
    let l = Linearization::new(&a065(), 0.1, 512, GibbsOptions::default()).unwrap();
    let v = l.rho_bar().values();
    let mirror = (0..512).map(|i| (v[i] - v[l.grid.mirror_index(i)]).abs()).fold(0.0, f64::max);
    let fine = Linearization::new(&a065(), 0.01, 1024, GibbsOptions::default()).unwrap();
    let ratio = fine.rho_bar().second_moment_about_mode(&fine.grid) / (0.01 / std::f64::consts::E);
    verdict(
        l.gibbs.residual < 1e-10 && mirror < 1e-10 && (ratio - 1.0).abs() < 0.15,
        format!("residual {:.2e}, reflection {mirror:.2e}, second moment / sigma^2 = {ratio:.4}", l.gibbs.residual),
    )
}

fn hessian_window() -> Verdict {
    let rep = landscape(&a065(), 0.01, 1024).unwrap();
    let s = rep.spectral.unwrap();
    let upper = s.h_max <= 0.01 * (1.0 + 1e-6);
    let lower = s.h_min >= 0.4 * 0.005 * (1.0 - 0.65);
    verdict(upper && lower, format!("spectrum [{:.6e}, {:.12e}]", s.h_min, s.h_max))
}

fn costate() -> Verdict {
    let l = Linearization::new(&a065(), 0.1, 512, GibbsOptions::default()).unwrap();
    let g = align_e2().functional_derivative_on_grid(&l.grid, l.rho_bar()).unwrap();
    let horizon = 8.0;
    let r = rayleigh_rate(&g, &l.hessian, &l.laplacian).unwrap();
    let path = backward_costate(&g, &l.hessian, &l.laplacian, horizon, CostateOptions::default()).unwrap();
    let gn = l.hessian.norm_hinv_sq(&g).unwrap().sqrt();
    let mut slack = f64::INFINITY;
    for (t, phi) in path.times.iter().zip(&path.phi) {
        let lhs = l.hessian.norm_hinv_sq(phi).unwrap().sqrt();
        slack = slack.min(lhs / (gn * (-(horizon - t) * r).exp()));
    }

    let grid = CircleGrid::new(512).unwrap();
    let zero = AttentionSpec::diagonal_unchecked(&[0.0, 0.0]).unwrap();
    let u = CircleDensity::uniform(&grid);
    let h = Hessian::new(&grid, &grid.kernel_matrix(&zero).unwrap(), &u, 0.1).unwrap();
    let lap = WeightedLaplacian::new(&grid, &u).unwrap();
    let cosine: Vec<f64> = grid.theta().iter().map(|t| t.cos()).collect();
    let heat = backward_costate(&cosine, &h, &lap, 2.0, CostateOptions::default()).unwrap();
    let symbol = (2.0 - 2.0 * grid.h().cos()) / grid.h().powi(2);
    let mut heat_err: f64 = 0.0;
    for (t, phi) in heat.times.iter().zip(&heat.phi) {
        let decay = (-0.1 * symbol * (2.0 - t)).exp();
        heat_err = heat_err.max(phi.iter().zip(&cosine).map(|(p, c)| (p - decay * c).abs()).fold(0.0, f64::max));
    }
    verdict(
        slack >= 1.0 - 1e-8 && heat_err < 1e-6,
        format!("min Jensen ratio {slack:.10} over {} times, heat-decay error {heat_err:.2e}", path.times.len()),
    )
}

fn dissipation() -> Verdict {
    let l = Linearization::new(&a065(), 0.1, 512, GibbsOptions::default()).unwrap();
    let rho0 = CircleDensity::von_mises(&l.grid, 0.0, 3.0).unwrap();
    let path = evolve_density(&l.grid, &l.kernel, &rho0, None, FeatureMap::identity(2), 0.1, 60.0, 0.05).unwrap();
    let e: Vec<f64> = path.densities.iter().map(|r| energy(&l.grid, &l.kernel, r, 0.1).unwrap()).collect();
    let rise = e.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let mass = path.densities.windows(2).map(|w| (w[1].mass() - w[0].mass()).abs()).fold(0.0, f64::max);
    let l1 = path.terminal().l1_distance(l.rho_bar());
    verdict(
        rise <= 1e-10 && mass <= 1e-12 && l1 < 1e-3,
        format!("max energy increase {rise:.2e}, max mass change {mass:.2e}, final L1 distance {l1:.2e}"),
    )
}

fn escape() -> Verdict {
    let rep = escape_consistency(&a065(), 0.1, 512, &align_e2(), FeatureMap::identity(2), 8.0, 0.01, 0.25, &[1e-3, 3e-4]).unwrap();
    let checks = escape_checks(&rep);
    let detail = checks.iter().map(|c| format!("{}: {}", c.name, c.detail)).collect::<Vec<_>>().join("; ");
    let continuum = rep.rows.iter().map(|r| format!("{:.5}", r.ratio_continuum)).collect::<Vec<_>>().join(", ");
    verdict(checks.iter().all(|c| c.passed), format!("{detail}; continuum-response ratios [{continuum}]"))
}

fn lab_run(experiment: Experiment, overrides: &[&str], out: &Path) -> turnpike_lab::Outcome {
    let ov: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    let cfg = ExperimentConfig::from_toml_str("", &ov).unwrap().resolve(experiment).unwrap();
    run(&cfg, out).unwrap()
}

fn checks_verdict(out: &turnpike_lab::Outcome) -> Verdict {
    let detail = out.checks.iter().map(|c| format!("{}: {}", c.name, c.detail)).collect::<Vec<_>>().join("; ");
    verdict(out.passed(), detail)
}

fn exp0() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    checks_verdict(&lab_run(Experiment::Exp0, &[], dir.path()))
}

fn lambda2_trend() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    checks_verdict(&lab_run(Experiment::SweepLambda2, &["sweep.particles=false"], dir.path()))
}

fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "manifest.json")
        .map(|e| (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap()))
        .collect()
}

fn determinism() -> Verdict {
    let cases: [(Experiment, &[&str]); 2] = [
        (Experiment::Exp0, &["model.n=8", "model.horizon=4", "training.steps=4"]),
        (Experiment::SweepKappa, &["sweep.particles=false", "model.m=128", "loss.kind=\"bow\""]),
    ];
    let mut compared = 0;
    for (exp, ov) in cases {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        lab_run(exp, ov, a.path());
        lab_run(exp, ov, b.path());
        let (x, y) = (artifacts(a.path()), artifacts(b.path()));
        if x != y {
            let differing: Vec<&String> = x.keys().filter(|k| x.get(*k) != y.get(*k)).collect();
            return verdict(false, format!("{}: differing files {differing:?}", exp.name()));
        }
        compared += x.keys().filter(|k| k.ends_with(".csv") || k.ends_with(".svg")).count();
    }
    verdict(true, format!("{compared} CSV/SVG files byte-identical across reruns"))
}

fn closed_forms() -> Verdict {
    let mut worst: f64 = 0.0;
    for (l1, l2, d0, qa) in CLOSED_FORMS {
        let c = landscape_constants_from(l1, l2, 0.01);
        worst = worst.max((c.delta0 - d0).abs()).max((c.q_a - qa).abs());
    }
    verdict(worst < 1e-12, format!("max abs error {worst:.2e} over {} pairs", CLOSED_FORMS.len()))
}

fn main() {
    let criteria: [(&str, f64, fn() -> Verdict); 10] = [
        ("adjoint gradient", 10.0, adjoint),
        ("gibbs solver", 30.0, gibbs),
        ("hessian window", 60.0, hessian_window),
        ("costate jensen bound", f64::INFINITY, costate),
        ("energy dissipation", f64::INFINITY, dissipation),
        ("one-step escape", 120.0, escape),
        ("experiment 0 phases", 1200.0, exp0),
        ("lambda2 trend", 600.0, lambda2_trend),
        ("determinism", f64::INFINITY, determinism),
        ("closed-form constants", f64::INFINITY, closed_forms),
    ];
    let mut failures = 0;
    for (i, (name, budget, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = f();
        let secs = start.elapsed().as_secs_f64();
        let ok = v.passed && secs <= *budget;
        if !ok {
            failures += 1;
        }
        let limit = if budget.is_finite() { format!(" (limit {budget:.0}s)") } else { String::new() };
        println!("{} {:>2} {name}: {} [{secs:.1}s{limit}]", if ok { "PASS" } else { "FAIL" }, i + 1, v.detail);
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
