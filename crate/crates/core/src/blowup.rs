//! The blowup functional `Υ(t) = ∫ ∂_t u ∂_1 u dx`, its rate
//! `∫ (∂_t u ∂_1 u)² dx`, and the Riccati comparison
//! `y' = y² / (t + δ)³` that bounds it from below.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{derivative, ordered_sum, Axis, StateSlice};
use crate::integrator::SliceObserver;

fn reduce(state: &StateSlice, f: impl Fn(f64) -> f64 + Sync) -> f64 {
    let d1 = derivative(state.u(), Axis::X1);
    let grid = state.grid();
    let plane = grid.plane_len();
    let v = state.v().values();
    let d = d1.values();
    ordered_sum(v.par_chunks(plane).zip(d.par_chunks(plane)).map(|(vp, dp)| {
        vp.iter().zip(dp).map(|(&a, &b)| f(a * b)).sum::<f64>()
    })) * grid.cell_volume()
}

fn require_finite(state: &StateSlice) -> Result<()> {
    if !state.is_finite() {
        return Err(Error::NumericalFailure { t: state.t(), reason: "Υ of a non-finite state".into() });
    }
    Ok(())
}

/// `h³ Σ v ∂_1 u`.
pub fn upsilon(state: &StateSlice) -> Result<f64> {
    require_finite(state)?;
    Ok(upsilon_unchecked(state))
}

pub(crate) fn upsilon_unchecked(state: &StateSlice) -> f64 {
    reduce(state, |x| x)
}

/// `h³ Σ (v ∂_1 u)²`.
pub fn upsilon_rate(state: &StateSlice) -> Result<f64> {
    require_finite(state)?;
    Ok(reduce(state, |x| x * x))
}

/// Closed-form solution of `y' = y²/(t + δ)³`, `y(0) = y0`:
/// `y(t) = [1/y0 − ½(δ⁻² − (t + δ)⁻²)]⁻¹`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiccatiSolution {
    pub y0: f64,
    pub delta: f64,
    /// `+∞` when the bracket never vanishes.
    pub t_star: f64,
}

pub fn riccati_solve(y0: f64, delta: f64) -> Result<RiccatiSolution> {
    if !(y0 > 0.0 && y0.is_finite()) {
        return Err(Error::Domain(format!("Riccati seed must be positive, got {y0}")));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Domain(format!("δ must lie in (0, 1], got {delta}")));
    }
    let q = 1.0 - 2.0 * delta * delta / y0;
    let t_star = if q > 0.0 { delta * (1.0 / q.sqrt() - 1.0) } else { f64::INFINITY };
    Ok(RiccatiSolution { y0, delta, t_star })
}

impl RiccatiSolution {
    /// `y(t)`, or `None` at and beyond `t*`.
    pub fn eval(&self, t: f64) -> Option<f64> {
        if t >= self.t_star {
            return None;
        }
        let d = self.delta;
        let bracket = 1.0 / self.y0 - 0.5 * (1.0 / (d * d) - 1.0 / ((t + d) * (t + d)));
        (bracket > 0.0).then(|| 1.0 / bracket)
    }

    /// `y'(t) = y²/(t + δ)³`.
    pub fn derivative(&self, t: f64) -> Option<f64> {
        self.eval(t).map(|y| y * y / (t + self.delta).powi(3))
    }
}

/// `Υ` and its rate sampled along a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpsilonSeries {
    pub delta: f64,
    pub times: Vec<f64>,
    pub upsilon: Vec<f64>,
    pub rate: Vec<f64>,
}

pub const UPSILON_HEADER: &str = "t,upsilon,rate,riccati_y,ratio";

impl UpsilonSeries {
    pub fn new(delta: f64) -> Self {
        Self { delta, ..Default::default() }
    }

    pub fn push(&mut self, t: f64, upsilon: f64, rate: f64) {
        self.times.push(t);
        self.upsilon.push(upsilon);
        self.rate.push(rate);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Riccati comparison seeded at the first sample, with time measured
    /// from that sample.
    pub fn riccati(&self) -> Option<RiccatiSolution> {
        let y0 = *self.upsilon.first()?;
        riccati_solve(y0, self.delta).ok()
    }

    /// Whether `Υ` never drops by more than `tol · max|Υ|`.
    pub fn is_nondecreasing(&self, tol: f64) -> bool {
        let scale = self.upsilon.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        self.upsilon.windows(2).all(|w| w[1] >= w[0] - tol * scale)
    }

    /// Max over interior samples of `|dΥ/dt − rate| / max rate`, with
    /// `dΥ/dt` from central differences of the series.
    pub fn rate_identity_defect(&self) -> Result<f64> {
        if self.len() < 3 {
            return Err(Error::Insufficient("rate identity needs at least 3 samples".into()));
        }
        let scale = self.rate.iter().fold(0.0_f64, |m, &x| m.max(x));
        if scale == 0.0 {
            return Ok(0.0);
        }
        let mut worst = 0.0_f64;
        for i in 1..self.len() - 1 {
            let d = (self.upsilon[i + 1] - self.upsilon[i - 1]) / (self.times[i + 1] - self.times[i - 1]);
            worst = worst.max((d - self.rate[i]).abs() / scale);
        }
        Ok(worst)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{UPSILON_HEADER}")?;
        let ric = self.riccati();
        let t0 = self.times.first().copied().unwrap_or(0.0);
        for i in 0..self.len() {
            let y = ric.and_then(|r| r.eval(self.times[i] - t0));
            let (ys, rs) = match y {
                Some(y) => (format!("{y:.17e}"), format!("{:.17e}", self.upsilon[i] / y)),
                None => (String::new(), String::new()),
            };
            writeln!(out, "{:.17e},{:.17e},{:.17e},{ys},{rs}", self.times[i], self.upsilon[i], self.rate[i])?;
        }
        Ok(())
    }

    pub fn read_csv(text: &str, delta: f64) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(UPSILON_HEADER) {
            return Err(Error::Corrupt("Υ CSV header mismatch".into()));
        }
        let mut s = Self::new(delta);
        for l in lines.filter(|l| !l.is_empty()) {
            let c: Vec<&str> = l.split(',').collect();
            if c.len() != 5 {
                return Err(Error::Corrupt(format!("Υ row has {} columns", c.len())));
            }
            let num = |x: &str| x.parse::<f64>().map_err(|e| Error::Corrupt(format!("bad number {x:?}: {e}")));
            s.push(num(c[0])?, num(c[1])?, num(c[2])?);
        }
        Ok(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// `Υ² > (t + δ)³ Υ' (1 + tol)`.
    Inequality,
    /// `Υ < (1 − tol) y`.
    BelowRiccati,
    /// A sample at or past the Riccati blowup time.
    PastRiccatiBlowup,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub index: usize,
    pub t: f64,
    pub kind: ViolationKind,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub samples: usize,
    pub tolerance: f64,
    /// Max of `Υ² / ((t + δ)³ Υ')` over samples with positive rate.
    pub max_inequality_ratio: f64,
    /// Min of `Υ / y` over samples before `t*`.
    pub min_riccati_ratio: f64,
    pub t_star: f64,
    pub inequality_violations: usize,
    pub riccati_violations: usize,
    pub first_violation: Option<Violation>,
}

impl ComparisonReport {
    pub fn clean(&self) -> bool {
        self.first_violation.is_none()
    }
}

pub const COMPARISON_TOL: f64 = 0.05;

/// Checks `Υ² ≤ (t+δ)³ Υ'` and `Υ ≥ y` at every sample, both with relative
/// slack `tol`. Times are measured from the first sample.
pub fn comparison_check(series: &UpsilonSeries, tol: f64) -> Result<ComparisonReport> {
    if series.is_empty() {
        return Err(Error::Insufficient("empty Υ series".into()));
    }
    let d = series.delta;
    let t0 = series.times[0];
    let ric = if series.upsilon[0] > 0.0 { Some(riccati_solve(series.upsilon[0], d)?) } else { None };
    let mut rep = ComparisonReport {
        samples: series.len(),
        tolerance: tol,
        max_inequality_ratio: 0.0,
        min_riccati_ratio: f64::INFINITY,
        t_star: ric.map_or(f64::INFINITY, |r| r.t_star),
        inequality_violations: 0,
        riccati_violations: 0,
        first_violation: None,
    };
    let note = |rep: &mut ComparisonReport, v: Violation| {
        if rep.first_violation.is_none() {
            rep.first_violation = Some(v);
        }
    };
    for i in 0..series.len() {
        let t = series.times[i] - t0;
        let up = series.upsilon[i];
        let lhs = up * up;
        let rhs = (t + d).powi(3) * series.rate[i];
        if rhs > 0.0 {
            rep.max_inequality_ratio = rep.max_inequality_ratio.max(lhs / rhs);
        }
        if lhs > rhs * (1.0 + tol) {
            rep.inequality_violations += 1;
            note(&mut rep, Violation { index: i, t: series.times[i], kind: ViolationKind::Inequality, value: lhs / rhs });
        }
        if let Some(r) = ric {
            match r.eval(t) {
                Some(y) => {
                    let ratio = up / y;
                    rep.min_riccati_ratio = rep.min_riccati_ratio.min(ratio);
                    if ratio < 1.0 - tol {
                        rep.riccati_violations += 1;
                        note(&mut rep, Violation { index: i, t: series.times[i], kind: ViolationKind::BelowRiccati, value: ratio });
                    }
                }
                None => {
                    rep.riccati_violations += 1;
                    note(
                        &mut rep,
                        Violation { index: i, t: series.times[i], kind: ViolationKind::PastRiccatiBlowup, value: t },
                    );
                }
            }
        }
    }
    if !rep.min_riccati_ratio.is_finite() {
        rep.min_riccati_ratio = 1.0;
    }
    Ok(rep)
}

/// Records `Υ` and its rate every `every` steps of a run.
pub struct UpsilonMonitor {
    pub series: UpsilonSeries,
    every: usize,
}

impl UpsilonMonitor {
    pub fn new(delta: f64, every: usize) -> Self {
        Self { series: UpsilonSeries::new(delta), every: every.max(1) }
    }
}

impl SliceObserver for UpsilonMonitor {
    fn observe(&mut self, step: usize, slice: &StateSlice) -> Result<()> {
        if step % self.every == 0 && slice.is_finite() {
            self.series.push(slice.t(), upsilon_unchecked(slice), reduce(slice, |x| x * x));
        }
        Ok(())
    }
}
