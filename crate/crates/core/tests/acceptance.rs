//! Acceptance suite. Runs every criterion in order, prints one
//! `criterion N: PASS|FAIL` line each with the measured quantities, and
//! exits nonzero if any failed. Extra arguments filter by function name.

use std::time::Instant;

use pulsekg_core::blowup::{comparison_check, UpsilonMonitor, COMPARISON_TOL};
use pulsekg_core::data::{blowup_grid, Bump, PulseParams};
use pulsekg_core::grid::{GridSpec, Scheme};
use pulsekg_core::hyperboloid::{decay_fit, flux_identity_check, s_schedule, DecayClock, HyperboloidMonitor};
use pulsekg_core::integrator::{run, Frame, InitialData, RunConfig, Runner, Termination};
use pulsekg_core::nonlinearity::CubicTensor;
use pulsekg_core::sweep::{bisect_with, classify_point, Bisection, Class, Outcome, SweepPlan};
use pulsekg_core::validation;

fn verdict(n: u32, pass: bool, detail: String) -> bool {
    println!("criterion {n}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    pass
}

fn criterion_01_profile_plateaus() -> bool {
    let start = Instant::now();
    let e = validation::plateau_errors();
    let secs = start.elapsed().as_secs_f64();
    let pass = e.iter().all(|&x| x <= 1e-8) && secs < 5.0;
    verdict(1, pass, format!("max|f-1| {:.1e}, max|h-1| {:.1e}, max|g'-1| {:.1e}, {secs:.2}s", e[0], e[1], e[2]))
}

fn criterion_02_initial_functional() -> bool {
    let start = Instant::now();
    let deltas = [0.1, 0.25, 0.5];
    let margins = validation::upsilon_bound_margins(&deltas, 48).unwrap();
    let fact = validation::upsilon_factorization_error(&deltas, &[-1.0, -0.5, 0.0], 48).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = margins.iter().all(|&m| m > 1.0) && fact <= 1e-8 && secs < 30.0;
    verdict(2, pass, format!("Y(0)/18d^2 = {margins:.4?}, factorization error {fact:.1e}, {secs:.1}s"))
}

fn criterion_03_riccati_closed_form() -> bool {
    let deltas: Vec<f64> = (1..=10).map(|k| 0.01 * k as f64 + 0.003 * (k * k) as f64).collect();
    let e = validation::riccati_error(&deltas).unwrap();
    verdict(3, e <= 1e-12, format!("max |t*/d - (3/(2 sqrt 2) - 1)| = {e:.1e} over 10 values"))
}

fn criterion_04_convergence_order() -> bool {
    let start = Instant::now();
    let r = validation::convergence_ratios(&[16, 32, 64], 0.5, Scheme::Standard).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = r.iter().all(|x| (12.0..=20.0).contains(x)) && secs < 300.0;
    verdict(4, pass, format!("error ratios {r:.2?} on 17/33/65 points per axis, {secs:.1}s"))
}

fn criterion_05_linear_energy() -> bool {
    let start = Instant::now();
    let d = validation::linear_energy_drift(1000, 0.0625, 0.02, Scheme::Standard).unwrap();
    let secs = start.elapsed().as_secs_f64();
    verdict(5, d <= 1e-6 && secs < 120.0, format!("1000 steps, relative drift {d:.2e}, {secs:.1}s"))
}

/// Scaled-frame bump run with a hyperboloid monitor on `s = 2, 2 + ds, …`.
fn scaled_bump_run(h: f64, ds: f64, s_max: f64, keep: bool) -> (Termination, HyperboloidMonitor) {
    let pulse = PulseParams::new(0.25, 0.0).unwrap();
    let t_last = 0.5 * (s_max * s_max + 1.0);
    let duration = t_last - 2.0 + 0.1;
    let radius = 0.9;
    let half = ((radius + duration + 4.0 * h) / h).ceil() * h;
    let grid = GridSpec::cube(half, h).unwrap();
    let mut c = RunConfig::for_frame(Frame::Scaled, pulse, &CubicTensor::preset_blowup(), grid, duration).unwrap();
    c.initial = InitialData::Bump(Bump { amplitude: 0.1, tilt: 0.5, velocity: 0.1, radius });
    c.output_every = 1000;
    let schedule = s_schedule(2.0, ds, t_last + 1e-9);
    let mut mon = HyperboloidMonitor::new(schedule, c.mass, c.tensor.clone(), c.dt()).unwrap().keep_samples(keep);
    let mut runner = Runner::new(&c).unwrap();
    runner.observe(&mut mon);
    let rec = runner.run().unwrap();
    (rec.termination, mon)
}

fn criterion_06_energy_form_identity() -> bool {
    let start = Instant::now();
    let random = validation::energy_form_gap(20, 2024).unwrap();
    let (term, mon) = scaled_bump_run(0.125, 0.1, 2.6, true);
    let live = mon.samples.iter().map(|s| s.form_gap()).fold(0.0f64, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let pass = random <= 1e-10 && live <= 1e-10 && !mon.samples.is_empty() && secs < 60.0;
    verdict(
        6,
        pass,
        format!("random fields {random:.1e}, {} live samples {live:.1e}, run {term:?}, {secs:.1}s", mon.samples.len()),
    )
}

fn criterion_07_commutators() -> bool {
    let start = Instant::now();
    let p = validation::commutator_polynomial_residual(Scheme::Standard);
    let r = validation::commutator_ratios(&[0.2, 0.1, 0.05], Scheme::Standard).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = p <= 1e-12 && r.iter().all(|&x| x >= 12.0) && secs < 60.0;
    verdict(7, pass, format!("polynomial residual {p:.1e}, smooth ratios {r:.2?}, {secs:.1}s"))
}

fn flux_defect(h: f64, ds: f64) -> (f64, usize) {
    let (term, mon) = scaled_bump_run(h, ds, 2.6, false);
    assert!(matches!(term, Termination::Completed { .. }), "flux run ended with {term:?}");
    let rows = mon.finish().unwrap();
    let s: Vec<f64> = rows.iter().map(|r| r.s).collect();
    let e: Vec<f64> = rows.iter().map(|r| r.e_flat).collect();
    let f: Vec<f64> = rows.iter().map(|r| r.flux).collect();
    (flux_identity_check(&s, &e, &f).unwrap().max_defect, rows.len())
}

fn criterion_08_flux_identity() -> bool {
    let start = Instant::now();
    let (coarse, n1) = flux_defect(1.0 / 16.0, 0.1);
    let (fine, n2) = flux_defect(1.0 / 32.0, 0.05);
    let secs = start.elapsed().as_secs_f64();
    let gain = coarse / fine;
    let pass = coarse <= 0.05 && gain >= 1.5 && secs < 600.0;
    verdict(
        8,
        pass,
        format!("defect {coarse:.2e} ({n1} sheets, h = 1/16) -> {fine:.2e} ({n2} sheets, h = 1/32), gain {gain:.1}, {secs:.0}s"),
    )
}

struct BlowupRun {
    detect: Option<f64>,
    t_star: f64,
    ineq_ratio: f64,
    ineq_violations: usize,
    riccati_ratio: f64,
    riccati_violations: usize,
    samples: usize,
}

fn blowup_run(per_delta: usize) -> BlowupRun {
    let delta = 0.25;
    let pulse = PulseParams::new(delta, -0.6).unwrap();
    let grid = blowup_grid(delta, per_delta).unwrap();
    let c = RunConfig::for_frame(Frame::Original, pulse, &CubicTensor::preset_blowup(), grid, 0.1).unwrap();
    let mut mon = UpsilonMonitor::new(delta, 1);
    let mut runner = Runner::new(&c).unwrap();
    runner.observe(&mut mon);
    let rec = runner.run().unwrap();
    let detect = match rec.termination {
        Termination::Blowup { t, .. } => Some(t),
        _ => None,
    };
    // Samples strictly before detection.
    let mut series = mon.series.clone();
    if detect.is_some() && series.len() > 1 {
        let keep = series.times.iter().filter(|&&t| Some(t) < detect).count();
        series.times.truncate(keep);
        series.upsilon.truncate(keep);
        series.rate.truncate(keep);
    }
    let rep = comparison_check(&series, COMPARISON_TOL).unwrap();
    BlowupRun {
        detect,
        t_star: rep.t_star,
        ineq_ratio: rep.max_inequality_ratio,
        ineq_violations: rep.inequality_violations,
        riccati_ratio: rep.min_riccati_ratio,
        riccati_violations: rep.riccati_violations,
        samples: rep.samples,
    }
}

fn criterion_09_blowup_regime() -> bool {
    let start = Instant::now();
    let a = blowup_run(48);
    let b = blowup_run(96);
    let secs = start.elapsed().as_secs_f64();
    let detected = a.detect.is_some() && b.detect.is_some();
    let within = a.detect.is_some_and(|t| t <= 1.5 * a.t_star);
    let refined = matches!((a.detect, b.detect), (Some(x), Some(y)) if y <= x);
    let inequality = a.ineq_violations == 0;
    let riccati = a.riccati_violations == 0;
    let pass = detected && within && refined && inequality && riccati && secs < 600.0;
    verdict(
        9,
        pass,
        format!(
            "detection {:?} (h = d/48) and {:?} (h = d/96), t* {:.5}, within 1.5 t*: {within}; \
             max Y^2/((t+d)^3 Y') = {:.3} with {} of {} samples over 5%; min Y/y = {:.3} with {} violations; {secs:.0}s",
            a.detect, b.detect, a.t_star, a.ineq_ratio, a.ineq_violations, a.samples, a.riccati_ratio, a.riccati_violations
        ),
    )
}

fn criterion_10_decay_regime() -> bool {
    let start = Instant::now();
    let pulse = PulseParams::new(0.25, 0.0).unwrap();
    let grid = GridSpec::cube(12.0, 0.125).unwrap();
    let mut c = RunConfig::for_frame(Frame::Scaled, pulse, &CubicTensor::preset_blowup(), grid, 10.0).unwrap();
    c.output_every = 4;
    let rec = run(&c).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let completed = matches!(rec.termination, Termination::Completed { .. });
    let t: Vec<f64> = rec.rows.iter().map(|r| r.t).collect();
    let v: Vec<f64> = rec.rows.iter().map(|r| r.sup_u).collect();
    let fit = decay_fit(&t, &v, [4.0, 12.0], DecayClock::Scaled);
    let max = v.iter().copied().fold(0.0f64, f64::max);
    let last = v.last().copied().unwrap_or(f64::NAN);
    let exponent_ok = fit.as_ref().is_ok_and(|f| (-2.0..=-1.0).contains(&f.exponent));
    let pass = completed && exponent_ok && last <= 0.2 * max && secs < 1200.0;
    verdict(
        10,
        pass,
        format!(
            "termination {:?}, fit {:?}, final sup|u| / max = {:.3}, {secs:.0}s",
            rec.termination,
            fit.map(|f| f.exponent),
            last / max
        ),
    )
}

fn criterion_11_criticality_sweep() -> bool {
    let start = Instant::now();
    let plan = SweepPlan::default();
    let nus = [-1.0, -0.75, -0.5, -0.25, 0.0];
    let outcomes: Vec<Outcome> = nus.iter().map(|&nu| classify_point(&plan, nu, 0.25).unwrap()).collect();
    let class_of = |nu: f64| outcomes.iter().find(|o| o.nu == nu).map(|o| o.class);
    let blowups = class_of(-1.0) == Some(Class::Blowup) && class_of(-0.75) == Some(Class::Blowup);
    let decays = class_of(-0.25) == Some(Class::Decay) && class_of(0.0) == Some(Class::Decay);
    let undecided_ok = outcomes.iter().all(|o| o.class != Class::Undecided || o.nu == -0.5);
    let bisection = Bisection { lo: -1.0, hi: 0.0, tolerance: 0.125, budget: 6 };
    let bracket = bisect_with(bisection, |nu| match outcomes.iter().find(|o| o.nu == nu) {
        Some(o) => Ok(o.clone()),
        None => classify_point(&plan, nu, 0.25),
    });
    let secs = start.elapsed().as_secs_f64();
    let bracket_ok = bracket.as_ref().is_ok_and(|b| b.width() <= 0.125 && b.contains(-0.5));
    let pass = blowups && decays && undecided_ok && bracket_ok && secs < 2700.0;
    let table: Vec<String> = outcomes
        .iter()
        .map(|o| match o.t_detect {
            Some(t) => format!("nu {} {} at t = {t:.4}", o.nu, o.class),
            None => format!("nu {} {}", o.nu, o.class),
        })
        .collect();
    let br = match &bracket {
        Ok(b) => format!("[{}, {}]", b.lo, b.hi),
        Err(e) => format!("none: {e}"),
    };
    verdict(11, pass, format!("{}; bracket {br}; {secs:.0}s", table.join(", ")))
}

fn main() {
    let criteria = [
        ("criterion_01_profile_plateaus", criterion_01_profile_plateaus as fn() -> bool),
        ("criterion_02_initial_functional", criterion_02_initial_functional as fn() -> bool),
        ("criterion_03_riccati_closed_form", criterion_03_riccati_closed_form as fn() -> bool),
        ("criterion_04_convergence_order", criterion_04_convergence_order as fn() -> bool),
        ("criterion_05_linear_energy", criterion_05_linear_energy as fn() -> bool),
        ("criterion_06_energy_form_identity", criterion_06_energy_form_identity as fn() -> bool),
        ("criterion_07_commutators", criterion_07_commutators as fn() -> bool),
        ("criterion_08_flux_identity", criterion_08_flux_identity as fn() -> bool),
        ("criterion_09_blowup_regime", criterion_09_blowup_regime as fn() -> bool),
        ("criterion_10_decay_regime", criterion_10_decay_regime as fn() -> bool),
        ("criterion_11_criticality_sweep", criterion_11_criticality_sweep as fn() -> bool),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    for (name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let pass = std::panic::catch_unwind(run).unwrap_or_else(|_| {
            println!("{name}: FAIL (panicked)");
            false
        });
        if !pass {
            failed.push(name);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
