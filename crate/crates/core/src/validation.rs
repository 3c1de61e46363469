//! Built-in validation battery.
//!
//! Each measurement is a plain function so callers can apply their own
//! thresholds; [`run_battery`] applies the default ones.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{blowup_grid, upsilon_initial, Bump, PulseParams};
use crate::error::Result;
use crate::grid::{commutator_residual_with, Axis, GridSpec, Scheme, ScalarField, SpaceTimeFunction, StateSlice};
use crate::hyperboloid::{sample_hyperboloid, SliceBuffer};
use crate::integrator::{flat_energy, manufactured_error, Dynamics, Integrator};
use crate::nonlinearity::CubicTensor;
use crate::profile::Profiles;
use crate::blowup::riccati_solve;

/// `max|f − 1|` on `[−3/4, −1/4]`, `max|h − 1|` on `[−3/4, 3/4]`,
/// `max|g′ − 1|` on `[−3/4, −1/4]`, each over 2001 points.
pub fn plateau_errors() -> [f64; 3] {
    let p = Profiles::shared();
    let sup = |lo: f64, hi: f64, f: &dyn Fn(f64) -> f64| {
        (0..=2000).map(|k| lo + (hi - lo) * k as f64 / 2000.0).fold(0.0f64, |m, th| m.max((f(th) - 1.0).abs()))
    };
    [
        sup(-0.75, -0.25, &|t| p.f.value(t)),
        sup(-0.75, 0.75, &|t| p.h.value(t)),
        sup(-0.75, -0.25, &|t| p.g.derivative(t)),
    ]
}

/// `Υ(0) / 18δ²` at `ν = −1/2` for each `δ`.
pub fn upsilon_bound_margins(deltas: &[f64], per_delta: usize) -> Result<Vec<f64>> {
    deltas
        .iter()
        .map(|&d| {
            let up = upsilon_initial(&blowup_grid(d, per_delta)?, PulseParams::new(d, -0.5)?)?;
            Ok(up.value / (18.0 * d * d))
        })
        .collect()
}

/// Worst `|Υ(0) / (δ^{2ν+3} Υ_unit) − 1|` over a `(δ, ν)` grid.
pub fn upsilon_factorization_error(deltas: &[f64], nus: &[f64], per_delta: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for &d in deltas {
        let g = blowup_grid(d, per_delta)?;
        for &nu in nus {
            let up = upsilon_initial(&g, PulseParams::new(d, nu)?)?;
            worst = worst.max((up.factorization_ratio() - 1.0).abs());
        }
    }
    Ok(worst)
}

/// Worst `|t*(18δ², δ)/δ − (3/(2√2) − 1)|`.
pub fn riccati_error(deltas: &[f64]) -> Result<f64> {
    let want = 3.0 / (2.0 * 2f64.sqrt()) - 1.0;
    let mut worst = 0.0f64;
    for &d in deltas {
        let r = riccati_solve(18.0 * d * d, d)?;
        worst = worst.max((r.t_star / d - want).abs());
    }
    Ok(worst)
}

/// Successive error ratios of the manufactured solution on `[0, π]³`.
pub fn convergence_ratios(cells: &[usize], t_end: f64, scheme: Scheme) -> Result<Vec<f64>> {
    let errs = cells.iter().map(|&n| manufactured_error(n, t_end, 0.25, scheme)).collect::<Result<Vec<_>>>()?;
    Ok(errs.windows(2).map(|w| w[0] / w[1]).collect())
}

/// Relative drift of the flat energy over `steps` linear steps of a bump on
/// a grid of spacing `h`.
pub fn linear_energy_drift(steps: usize, h: f64, cfl: f64, scheme: Scheme) -> Result<f64> {
    let radius = 0.5;
    let dt = cfl * h;
    let half = ((radius + steps as f64 * dt + 4.0 * h) / h).ceil() * h;
    let grid = GridSpec::cube(half, h)?;
    let pair = Bump { amplitude: 1.0, tilt: 0.3, velocity: 0.5, radius }.assemble(&grid)?;
    let mut state = StateSlice::new(0.0, pair.u0, pair.u1)?;
    let mut integ = Integrator::new(grid, Dynamics::new(1.0, CubicTensor::zero()).with_scheme(scheme));
    let e0 = flat_energy(&state, 1.0);
    let mut worst = 0.0f64;
    for _ in 0..steps {
        integ.step(&mut state, dt)?;
        worst = worst.max((flat_energy(&state, 1.0) - e0).abs());
    }
    Ok(worst / e0)
}

/// A random smooth space-time field: a sum of Gaussians with oscillating
/// amplitudes.
#[derive(Clone, Debug)]
pub struct RandomField {
    terms: Vec<([f64; 3], f64, f64, f64, f64)>,
}

impl RandomField {
    pub fn new(rng: &mut impl Rng) -> Self {
        let terms = (0..4)
            .map(|_| {
                let c = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                (c, rng.gen_range(0.5..2.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.2..2.0), rng.gen_range(0.0..6.3))
            })
            .collect();
        Self { terms }
    }
}

impl SpaceTimeFunction for RandomField {
    fn value(&self, t: f64, x: [f64; 3]) -> f64 {
        self.terms
            .iter()
            .map(|&(c, k, a, w, p)| {
                let r2: f64 = (0..3).map(|i| (x[i] - c[i]).powi(2)).sum();
                a * (-k * r2).exp() * (w * t + p).cos()
            })
            .sum()
    }

    fn time_derivative(&self, t: f64, x: [f64; 3]) -> f64 {
        self.terms
            .iter()
            .map(|&(c, k, a, w, p)| {
                let r2: f64 = (0..3).map(|i| (x[i] - c[i]).powi(2)).sum();
                -a * w * (-k * r2).exp() * (w * t + p).sin()
            })
            .sum()
    }
}

/// Fills a slice buffer from a closed-form field.
pub fn buffer_from(f: &dyn SpaceTimeFunction, grid: GridSpec, t0: f64, dt: f64, n: usize) -> Result<SliceBuffer> {
    let mut b = SliceBuffer::new(n)?;
    for k in 0..n {
        let t = t0 + k as f64 * dt;
        b.push(StateSlice::new(t, ScalarField::from_fn(grid, |x| f.value(t, x)), ScalarField::from_fn(grid, |x| f.time_derivative(t, x)))?)?;
    }
    Ok(b)
}

/// Worst relative gap between the two energy forms over `count` random
/// fields, each sampled on a random hyperboloid `s ∈ [2, 2.5]`.
pub fn energy_form_gap(count: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = GridSpec::cube(2.75, 0.125)?;
    let mut worst = 0.0f64;
    for _ in 0..count {
        let f = RandomField::new(&mut rng);
        let s: f64 = rng.gen_range(2.0..2.5);
        let t_hi = 0.5 * (s * s + 1.0);
        let dt = 0.05;
        let n = ((t_hi - 1.85) / dt).ceil() as usize + 4;
        let b = buffer_from(&f, grid, 1.85, dt, n)?;
        let smp = sample_hyperboloid(&b, s, 0.25)?;
        worst = worst.max(smp.form_gap());
    }
    Ok(worst)
}

/// `u = t x₁`: the commutators hold exactly for it.
pub struct BoostPolynomial;

impl SpaceTimeFunction for BoostPolynomial {
    fn value(&self, t: f64, x: [f64; 3]) -> f64 {
        t * x[0] + x[1] * x[2]
    }
    fn time_derivative(&self, _t: f64, x: [f64; 3]) -> f64 {
        x[0]
    }
}

/// `u = sin x₁ cos t · e^{x₂/2}`.
pub struct SmoothWave;

impl SpaceTimeFunction for SmoothWave {
    fn value(&self, t: f64, x: [f64; 3]) -> f64 {
        x[0].sin() * t.cos() * (0.5 * x[1]).exp()
    }
    fn time_derivative(&self, t: f64, x: [f64; 3]) -> f64 {
        -x[0].sin() * t.sin() * (0.5 * x[1]).exp()
    }
}

/// Worst commutator residual of a polynomial over all three axes.
pub fn commutator_polynomial_residual(scheme: Scheme) -> f64 {
    let g = GridSpec::cube(1.0, 0.2).unwrap();
    Axis::ALL.iter().map(|&a| commutator_residual_with(a, &BoostPolynomial, &g, 1.1, scheme)).fold(0.0, f64::max)
}

/// Residual ratios of a smooth field under successive halvings of `h`.
pub fn commutator_ratios(spacings: &[f64], scheme: Scheme) -> Result<Vec<f64>> {
    let res = spacings
        .iter()
        .map(|&h| Ok(commutator_residual_with(Axis::X1, &SmoothWave, &GridSpec::cube(1.5, h)?, 0.7, scheme)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(res.windows(2).map(|w| w[0] / w[1]).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BatteryOptions {
    pub quick: bool,
    /// Swap the fourth-order stencils for second-order ones, which the
    /// order checks must catch.
    pub force_failure: bool,
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    let start = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    Check { name, passed, detail, seconds: start.elapsed().as_secs_f64() }
}

fn in_order_band(r: &[f64]) -> bool {
    r.iter().all(|x| (12.0..=20.0).contains(x))
}

pub fn run_battery(opts: BatteryOptions) -> Vec<Check> {
    let scheme = if opts.force_failure { Scheme::Degraded } else { Scheme::Standard };
    let mut out = Vec::new();
    out.push(timed("profile plateaus", || {
        let e = plateau_errors();
        Ok((e.iter().all(|&x| x <= 1e-8), format!("f {:.1e}, h {:.1e}, g' {:.1e}", e[0], e[1], e[2])))
    }));
    out.push(timed("initial functional bound", || {
        let deltas: &[f64] = if opts.quick { &[0.25] } else { &[0.1, 0.25, 0.5] };
        let m = upsilon_bound_margins(deltas, 32)?;
        let f = upsilon_factorization_error(deltas, &[-1.0, -0.5, 0.0], 32)?;
        Ok((m.iter().all(|&x| x > 1.0) && f <= 1e-8, format!("min Υ(0)/18δ² {:.3}, factorization {f:.1e}", m.iter().copied().fold(f64::INFINITY, f64::min))))
    }));
    out.push(timed("riccati closed form", || {
        let deltas: Vec<f64> = (1..=10).map(|k| 0.05 * k as f64).collect();
        let e = riccati_error(&deltas)?;
        Ok((e <= 1e-12, format!("{e:.1e}")))
    }));
    out.push(timed("convergence order", || {
        let cells: &[usize] = if opts.quick { &[8, 16, 32] } else { &[16, 32, 64] };
        let r = convergence_ratios(cells, 0.5, scheme)?;
        Ok((in_order_band(&r), format!("ratios {r:.2?}")))
    }));
    out.push(timed("linear energy conservation", || {
        let steps = if opts.quick { 250 } else { 1000 };
        let d = linear_energy_drift(steps, 0.0625, 0.02, scheme)?;
        Ok((d <= 1e-6, format!("{steps} steps, drift {d:.2e}")))
    }));
    out.push(timed("energy form identity", || {
        let g = energy_form_gap(if opts.quick { 5 } else { 20 }, 7)?;
        Ok((g <= 1e-10, format!("max gap {g:.1e}")))
    }));
    out.push(timed("commutator residuals", || {
        let p = commutator_polynomial_residual(scheme);
        let spacings: &[f64] = if opts.quick { &[0.1, 0.05] } else { &[0.2, 0.1, 0.05] };
        let r = commutator_ratios(spacings, scheme)?;
        Ok((p <= 1e-12 && r.iter().all(|&x| x >= 12.0), format!("polynomial {p:.1e}, ratios {r:.2?}")))
    }));
    out
}
