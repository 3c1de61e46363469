//! Batteries of runs over `(ν, δ)`: classification, bisection toward the
//! critical power, and persistence.
//!
//! A point is classified in two stages. An original-frame probe runs to
//! `3 t*(δ)` with `t*(δ) = (3/(2√2) − 1) δ`; a detected blowup ends the
//! classification there. Otherwise a scaled-frame run to `τ_end` measures
//! the decay of `sup|u|`.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blowup::UpsilonSeries;
use crate::data::{blowup_grid, PulseParams};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::hyperboloid::{decay_fit, DecayClock, DecayFit};
use crate::integrator::{run, Frame, RunConfig, RunRecord, Termination, DEFAULT_CFL};
use crate::nonlinearity::CubicTensor;

pub const SCHEMA_VERSION: u32 = 1;

/// `(3/(2√2) − 1) δ`.
pub fn riccati_time_bound(delta: f64) -> f64 {
    (3.0 / (2.0 * 2f64.sqrt()) - 1.0) * delta
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Class {
    Blowup,
    Decay,
    Undecided,
}

impl std::fmt::Display for Class {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Class::Blowup => "BLOWUP",
            Class::Decay => "DECAY",
            Class::Undecided => "UNDECIDED",
        })
    }
}

impl std::str::FromStr for Class {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "BLOWUP" => Ok(Class::Blowup),
            "DECAY" => Ok(Class::Decay),
            "UNDECIDED" => Ok(Class::Undecided),
            _ => Err(Error::Corrupt(format!("unknown class `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayCriterion {
    /// A fitted exponent at or below this counts as decay.
    pub max_exponent: f64,
    /// Final `sup|u|` must be at most this fraction of the initial one.
    pub final_fraction: f64,
}

impl Default for DecayCriterion {
    fn default() -> Self {
        Self { max_exponent: -0.75, final_fraction: 0.1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bisection {
    pub lo: f64,
    pub hi: f64,
    pub tolerance: f64,
    /// Maximum number of midpoint classifications.
    #[serde(default = "default_budget")]
    pub budget: usize,
}

fn default_budget() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepPlan {
    pub nus: Vec<f64>,
    pub deltas: Vec<f64>,
    #[serde(default)]
    pub bisection: Option<Bisection>,
    pub tensor: CubicTensor,
    /// Probe grid: `[-1.5δ, 1.5δ]³` with `h = δ / per_delta`.
    pub per_delta: usize,
    /// Probe horizon in units of `t*(δ)`.
    pub blowup_horizon: f64,
    /// Decay run: cube `[-radius, radius]³` in scaled units, spacing `h`.
    pub decay_radius: f64,
    pub decay_spacing: f64,
    pub decay_tau_end: f64,
    pub fit_window: [f64; 2],
    pub criterion: DecayCriterion,
    pub cfl: f64,
    /// Concurrent runs.
    pub parallel: usize,
}

impl Default for SweepPlan {
    fn default() -> Self {
        Self {
            nus: vec![-1.0, -0.75, -0.5, -0.25, 0.0],
            deltas: vec![0.25],
            bisection: None,
            tensor: CubicTensor::preset_blowup(),
            per_delta: 48,
            blowup_horizon: 3.0,
            decay_radius: 12.0,
            decay_spacing: 0.125,
            decay_tau_end: 12.0,
            fit_window: [4.0, 12.0],
            criterion: DecayCriterion::default(),
            cfl: DEFAULT_CFL,
            parallel: 1,
        }
    }
}

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        for &d in &self.deltas {
            PulseParams::new(d, 0.0)?;
        }
        if self.nus.iter().any(|n| !n.is_finite()) {
            return Err(Error::Plan("ν values must be finite".into()));
        }
        if self.per_delta < 4 || !(self.blowup_horizon > 0.0) {
            return Err(Error::Plan("probe needs per_delta ≥ 4 and a positive horizon".into()));
        }
        if !(self.decay_spacing > 0.0 && self.decay_tau_end > 2.0 && self.decay_radius > 0.0) {
            return Err(Error::Plan("decay run needs positive spacing and radius and τ_end > 2".into()));
        }
        if !(self.fit_window[0] < self.fit_window[1]) {
            return Err(Error::Plan("fit window is empty".into()));
        }
        if self.parallel == 0 {
            return Err(Error::Plan("parallel width must be at least 1".into()));
        }
        if let Some(b) = self.bisection {
            if !(b.lo < b.hi) || !(b.tolerance > 0.0) {
                return Err(Error::Plan(format!("bisection needs lo < hi and tolerance > 0, got {b:?}")));
            }
            if self.deltas.is_empty() {
                return Err(Error::Plan("bisection needs a δ value".into()));
            }
        }
        Ok(())
    }

    pub fn probe_config(&self, nu: f64, delta: f64) -> Result<RunConfig> {
        let pulse = PulseParams::new(delta, nu)?;
        let grid = blowup_grid(delta, self.per_delta)?;
        let mut c = RunConfig::for_frame(Frame::Original, pulse, &self.tensor, grid, self.blowup_horizon * riccati_time_bound(delta))?;
        c.cfl = self.cfl;
        c.track_upsilon = true;
        Ok(c)
    }

    pub fn decay_config(&self, nu: f64, delta: f64) -> Result<RunConfig> {
        let pulse = PulseParams::new(delta, nu)?;
        let h = self.decay_spacing;
        let grid = GridSpec::cube((self.decay_radius / h).round() * h, h)?;
        let mut c = RunConfig::for_frame(Frame::Scaled, pulse, &self.tensor, grid, self.decay_tau_end - 2.0)?;
        c.cfl = self.cfl;
        // Roughly ten rows per unit of τ.
        c.output_every = ((0.1 / c.dt()).round() as usize).max(1);
        Ok(c)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub upsilon0: Option<f64>,
    pub max_upsilon: Option<f64>,
    pub initial_sup_u: f64,
    pub final_sup_u: f64,
    pub fit_residual: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub nu: f64,
    pub delta: f64,
    pub class: Class,
    /// Detection time in original-frame units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_detect: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
    pub metrics: Metrics,
}

impl Outcome {
    /// The single number plotted for this outcome: detection time,
    /// fitted exponent, or the final-to-initial `sup|u|` ratio.
    pub fn metric(&self) -> f64 {
        match self.class {
            Class::Blowup => self.t_detect.unwrap_or(f64::NAN),
            Class::Decay => self.exponent.unwrap_or(f64::NAN),
            Class::Undecided => {
                if self.metrics.initial_sup_u > 0.0 {
                    self.metrics.final_sup_u / self.metrics.initial_sup_u
                } else {
                    0.0
                }
            }
        }
    }
}

fn to_original_time(config: &RunConfig, t: f64) -> f64 {
    match config.frame {
        Frame::Original => t,
        Frame::Scaled => config.pulse.delta() * (t - 2.0),
    }
}

/// Classifies one finished run.
pub fn classify_run(
    record: &RunRecord,
    upsilon: Option<&UpsilonSeries>,
    fit: Option<&DecayFit>,
    criterion: &DecayCriterion,
) -> Outcome {
    let c = &record.config;
    let initial = record.initial_sup_u();
    let final_sup = record.rows.last().map_or(0.0, |r| r.sup_u);
    let ups: Vec<f64> = match upsilon {
        Some(s) => s.upsilon.clone(),
        None => record.rows.iter().filter_map(|r| r.upsilon).collect(),
    };
    let metrics = Metrics {
        upsilon0: ups.first().copied(),
        max_upsilon: ups.iter().copied().fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x)))),
        initial_sup_u: initial,
        final_sup_u: final_sup,
        fit_residual: fit.map(|f| f.residual),
    };
    let mut out = Outcome {
        nu: c.pulse.nu(),
        delta: c.pulse.delta(),
        class: Class::Undecided,
        t_detect: None,
        exponent: fit.map(|f| f.exponent),
        metrics,
    };
    match &record.termination {
        Termination::Blowup { t, .. } => {
            out.class = Class::Blowup;
            out.t_detect = Some(to_original_time(c, *t));
            out.exponent = None;
        }
        Termination::Completed { .. } => {
            if initial > 0.0 {
                if let Some(f) = fit {
                    if f.exponent <= criterion.max_exponent && final_sup <= criterion.final_fraction * initial {
                        out.class = Class::Decay;
                    }
                }
            }
        }
        Termination::NumericalFailure { .. } => {}
    }
    out
}

/// Fit of `sup|u|` over the plan's window, if one is possible.
pub fn fit_record(record: &RunRecord, window: [f64; 2]) -> Option<DecayFit> {
    let clock = match record.config.frame {
        Frame::Original => DecayClock::Original { delta: record.config.pulse.delta() },
        Frame::Scaled => DecayClock::Scaled,
    };
    let t: Vec<f64> = record.rows.iter().map(|r| r.t).collect();
    let v: Vec<f64> = record.rows.iter().map(|r| r.sup_u).collect();
    decay_fit(&t, &v, window, clock).ok()
}

/// Both stages for one `(ν, δ)`.
pub fn classify_point(plan: &SweepPlan, nu: f64, delta: f64) -> Result<Outcome> {
    let probe = run(&plan.probe_config(nu, delta)?)?;
    let first = classify_run(&probe, None, None, &plan.criterion);
    if first.class == Class::Blowup {
        return Ok(first);
    }
    let decay = run(&plan.decay_config(nu, delta)?)?;
    let fit = fit_record(&decay, plan.fit_window);
    let mut out = classify_run(&decay, None, fit.as_ref(), &plan.criterion);
    out.metrics.upsilon0 = first.metrics.upsilon0;
    out.metrics.max_upsilon = first.metrics.max_upsilon;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
    pub lo_class: Class,
    pub hi_class: Class,
    pub evaluations: Vec<Outcome>,
}

impl Bracket {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, nu: f64) -> bool {
        self.lo <= nu && nu <= self.hi
    }
}

/// Bisects `[lo, hi]` with an arbitrary classifier.
///
/// The endpoints must classify as one BLOWUP and one DECAY. An UNDECIDED
/// midpoint replaces the BLOWUP endpoint, so the bracket moves toward the
/// decay side.
pub fn bisect_with<F>(b: Bisection, mut classify: F) -> Result<Bracket>
where
    F: FnMut(f64) -> Result<Outcome>,
{
    let a = classify(b.lo)?;
    let z = classify(b.hi)?;
    let pair = (a.class, z.class);
    if !matches!(pair, (Class::Blowup, Class::Decay) | (Class::Decay, Class::Blowup)) {
        return Err(Error::Plan(format!(
            "bisection endpoints must classify as BLOWUP and DECAY; ν = {} gave {} and ν = {} gave {}",
            b.lo, a.class, b.hi, z.class
        )));
    }
    let mut br = Bracket { lo: b.lo, hi: b.hi, lo_class: a.class, hi_class: z.class, evaluations: vec![a, z] };
    let mut budget = b.budget;
    while br.width() > b.tolerance && budget > 0 {
        budget -= 1;
        let mid = 0.5 * (br.lo + br.hi);
        let o = classify(mid)?;
        let class = if o.class == Class::Undecided { Class::Blowup } else { o.class };
        if class == br.lo_class {
            br.lo = mid;
        } else {
            br.hi = mid;
        }
        br.evaluations.push(o);
    }
    Ok(br)
}

pub fn bisect_critical(plan: &SweepPlan) -> Result<Bracket> {
    plan.validate()?;
    let b = plan.bisection.ok_or_else(|| Error::Plan("plan has no bisection interval".into()))?;
    let delta = plan.deltas[0];
    bisect_with(b, |nu| classify_point(plan, nu, delta))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub outcomes: Vec<Outcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bracket: Option<Bracket>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Pairs where a DECAY sits at smaller `ν` than a BLOWUP at the same `δ`.
pub fn monotonicity_warnings(outcomes: &[Outcome]) -> Vec<String> {
    let mut out = Vec::new();
    for a in outcomes.iter().filter(|o| o.class == Class::Decay) {
        for b in outcomes.iter().filter(|o| o.class == Class::Blowup) {
            if a.delta == b.delta && a.nu < b.nu {
                out.push(format!(
                    "δ = {}: DECAY at ν = {} below BLOWUP at ν = {}; resolution may be insufficient",
                    a.delta, a.nu, b.nu
                ));
            }
        }
    }
    out
}

fn sort_outcomes(v: &mut [Outcome]) {
    v.sort_by(|a, b| a.nu.total_cmp(&b.nu).then(a.delta.total_cmp(&b.delta)));
}

/// Runs every `(ν, δ)` of the plan, then the bisection if one is set.
pub fn run_sweep(plan: &SweepPlan) -> Result<SweepReport> {
    plan.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.parallel)
        .build()
        .map_err(|e| Error::Plan(format!("cannot start worker pool: {e}")))?;
    let pairs: Vec<(f64, f64)> = plan.nus.iter().flat_map(|&n| plan.deltas.iter().map(move |&d| (n, d))).collect();
    let results: Vec<Result<Outcome>> =
        pool.install(|| pairs.par_iter().map(|&(n, d)| classify_point(plan, n, d)).collect());
    let mut outcomes = results.into_iter().collect::<Result<Vec<_>>>()?;
    sort_outcomes(&mut outcomes);
    let bracket = match plan.bisection {
        Some(_) => Some(bisect_critical(plan)?),
        None => None,
    };
    let warnings = monotonicity_warnings(&outcomes);
    Ok(SweepReport { outcomes, bracket, warnings })
}

#[derive(Serialize, Deserialize)]
struct Document {
    version: u32,
    plan: SweepPlan,
    outcomes: Vec<Outcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bracket: Option<Bracket>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

pub fn to_json(plan: &SweepPlan, report: &SweepReport) -> Result<String> {
    let doc = Document {
        version: SCHEMA_VERSION,
        plan: plan.clone(),
        outcomes: report.outcomes.clone(),
        bracket: report.bracket.clone(),
        warnings: report.warnings.clone(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn from_json(text: &str) -> Result<(SweepPlan, SweepReport)> {
    let v: serde_json::Value = serde_json::from_str(text)?;
    let found = v.get("version").and_then(|x| x.as_u64());
    if found != Some(SCHEMA_VERSION as u64) {
        return Err(Error::VersionMismatch {
            expected: SCHEMA_VERSION.to_string(),
            found: v.get("version").map_or("none".into(), |x| x.to_string()),
        });
    }
    let doc: Document = serde_json::from_value(v)?;
    Ok((doc.plan, SweepReport { outcomes: doc.outcomes, bracket: doc.bracket, warnings: doc.warnings }))
}

pub fn persist(plan: &SweepPlan, report: &SweepReport, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(plan, report)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(SweepPlan, SweepReport)> {
    from_json(&std::fs::read_to_string(path)?)
}

pub const PHASE_HEADER: &str = "nu,delta,class,metric";

pub fn write_phase_csv<W: Write>(outcomes: &[Outcome], mut out: W) -> Result<()> {
    writeln!(out, "{PHASE_HEADER}")?;
    for o in outcomes {
        writeln!(out, "{},{},{},{:e}", o.nu, o.delta, o.class, o.metric())?;
    }
    Ok(())
}

pub fn read_phase_csv(text: &str) -> Result<Vec<(f64, f64, Class, f64)>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(PHASE_HEADER) {
        return Err(Error::Corrupt(format!("phase CSV must start with `{PHASE_HEADER}`")));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Corrupt(format!("bad number `{s}`: {e}")));
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(Error::Corrupt(format!("phase CSV row `{l}` needs 4 fields")));
            }
            Ok((num(f[0])?, num(f[1])?, f[2].parse()?, num(f[3])?))
        })
        .collect()
}
