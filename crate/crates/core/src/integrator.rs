//! Method-of-lines evolution of `∂_t u = v`, `∂_t v = Δu − m²u + F(u, ∂u)`
//! with classical RK4, homogeneous Dirichlet boundaries and a domain sized so
//! the boundary never sees the solution.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blowup;
use crate::checkpoint;
use crate::data::{assemble_blowup_data, assemble_scaled_blowup_data, Bump, PulseParams};
use crate::error::{Error, Result};
use crate::grid::{diff_plane, laplacian, ordered_sum, GridSpec, Order, ScalarField, Scheme, StateSlice};
use crate::nonlinearity::{CubicTensor, Slot};

/// Coordinates the equation is posed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    /// `(t, x)`, unit mass.
    Original,
    /// `(τ, z) = (t/δ + 2, x/δ)`, mass `δ`.
    Scaled,
}

impl Frame {
    pub fn code(self) -> u8 {
        match self {
            Frame::Original => 0,
            Frame::Scaled => 1,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Frame::Original),
            1 => Ok(Frame::Scaled),
            _ => Err(Error::Corrupt(format!("unknown frame code {c}"))),
        }
    }
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Frame::Original => "original",
            Frame::Scaled => "scaled",
        })
    }
}

/// Initial data generator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitialData {
    Zero,
    /// The product-profile blowup data at the run's pulse parameters.
    Pulse,
    Bump(Bump),
}

/// Everything a run needs. `tensor` is used literally: in the scaled frame
/// it must already carry the δ-factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub frame: Frame,
    pub mass: f64,
    pub tensor: CubicTensor,
    pub grid: GridSpec,
    pub cfl: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub output_every: usize,
    /// `None` picks `10⁶ (sup|u| + sup|v| + 1)` of the initial state.
    pub blowup_threshold: Option<f64>,
    pub pulse: PulseParams,
    pub initial: InitialData,
    /// Record `Υ` in the diagnostics rows.
    #[serde(default)]
    pub track_upsilon: bool,
}

pub const DEFAULT_CFL: f64 = 0.25;

impl RunConfig {
    /// Frame-consistent defaults: original frame from `t = 0` with `m = 1`,
    /// scaled frame from `τ = 2` with `m = δ` and the δ-scaled tensor.
    pub fn for_frame(frame: Frame, pulse: PulseParams, tensor: &CubicTensor, grid: GridSpec, duration: f64) -> Result<Self> {
        let (mass, tensor, t_start) = match frame {
            Frame::Original => (1.0, tensor.clone(), 0.0),
            Frame::Scaled => (pulse.delta(), tensor.scaled(pulse.delta())?, 2.0),
        };
        Ok(Self {
            frame,
            mass,
            tensor,
            grid,
            cfl: DEFAULT_CFL,
            t_start,
            t_end: t_start + duration,
            output_every: 1,
            blowup_threshold: None,
            pulse,
            initial: InitialData::Pulse,
            track_upsilon: false,
        })
    }

    pub fn dt(&self) -> f64 {
        self.cfl * self.grid.spacing()
    }

    /// Radius of the box `[-r, r]³` holding the initial data.
    pub fn support_radius(&self) -> f64 {
        match self.initial {
            InitialData::Zero => 0.0,
            InitialData::Pulse => match self.frame {
                Frame::Original => self.pulse.delta(),
                Frame::Scaled => 1.0,
            },
            InitialData::Bump(b) => b.radius,
        }
    }

    /// Steps needed to reach `t_end`; the last step may overshoot by less
    /// than one `dt`.
    pub fn total_steps(&self) -> usize {
        ((self.t_end - self.t_start) / self.dt() - 1e-9).ceil().max(0.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let want = match self.frame {
            Frame::Original => 1.0,
            Frame::Scaled => self.pulse.delta(),
        };
        if (self.mass - want).abs() > 1e-12 * want.max(1.0) {
            return Err(Error::Config(format!(
                "{} frame requires mass {want}, got {}",
                self.frame, self.mass
            )));
        }
        if !(self.cfl > 0.0 && self.cfl <= 0.5) {
            return Err(Error::Config(format!("cfl must lie in (0, 0.5], got {}", self.cfl)));
        }
        if !(self.t_start.is_finite() && self.t_end.is_finite() && self.t_end > self.t_start) {
            return Err(Error::Config(format!("need t_end > t_start, got [{}, {}]", self.t_start, self.t_end)));
        }
        if self.output_every == 0 {
            return Err(Error::Config("output_every must be at least 1".into()));
        }
        if let Some(th) = self.blowup_threshold {
            if !(th > 0.0 && th.is_finite()) {
                return Err(Error::Config(format!("blowup threshold must be positive, got {th}")));
            }
        }
        if let InitialData::Bump(b) = self.initial {
            b.validate()?;
        }
        let h = self.grid.spacing();
        let need = self.support_radius() + (self.t_end - self.t_start) + 4.0 * h;
        let lo = self.grid.origin();
        let hi = self.grid.upper();
        for a in 0..3 {
            let have = (-lo[a]).min(hi[a]);
            if have < need - 1e-12 {
                return Err(Error::Config(format!(
                    "axis {} half-width {have} is below support + duration + 4h = {need}",
                    a + 1
                )));
            }
        }
        Ok(())
    }

    pub fn initial_state(&self) -> Result<StateSlice> {
        let pair = match self.initial {
            InitialData::Zero => return Ok(StateSlice::zeros(self.grid, self.t_start)),
            InitialData::Pulse => match self.frame {
                Frame::Original => assemble_blowup_data(&self.grid, self.pulse)?,
                Frame::Scaled => assemble_scaled_blowup_data(&self.grid, self.pulse)?,
            },
            InitialData::Bump(b) => b.assemble(&self.grid)?,
        };
        StateSlice::new(self.t_start, pair.u0, pair.u1)
    }

    pub fn dynamics(&self) -> Dynamics {
        Dynamics::new(self.mass, self.tensor.clone())
    }
}

/// An extra forcing term `S(t, x)` added to `∂_t v`; validation only.
pub trait Source: Send + Sync {
    fn eval(&self, t: f64, x: [f64; 3]) -> f64;
}

/// The right-hand side: mass, nonlinearity, stencil choice and optional
/// forcing.
#[derive(Clone)]
pub struct Dynamics {
    pub mass: f64,
    pub tensor: CubicTensor,
    pub scheme: Scheme,
    pub source: Option<Arc<dyn Source>>,
}

impl fmt::Debug for Dynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Dynamics")
            .field("mass", &self.mass)
            .field("tensor", &self.tensor)
            .field("scheme", &self.scheme)
            .field("source", &self.source.is_some())
            .finish()
    }
}

impl Dynamics {
    pub fn new(mass: f64, tensor: CubicTensor) -> Self {
        Self { mass, tensor, scheme: Scheme::Standard, source: None }
    }

    pub fn with_source(mut self, s: Arc<dyn Source>) -> Self {
        self.source = Some(s);
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    fn gradient_axes(&self) -> [bool; 3] {
        let mut need = [false; 3];
        for e in self.tensor.entries() {
            for s in e.slots {
                match s {
                    Slot::D1 => need[0] = true,
                    Slot::D2 => need[1] = true,
                    Slot::D3 => need[2] = true,
                    _ => {}
                }
            }
        }
        need
    }

    /// Writes `Δu − m²u + F + S` into `out`; boundary nodes get 0.
    pub(crate) fn accel(&self, grid: &GridSpec, t: f64, u: &[f64], v: &[f64], out: &mut [f64]) {
        let [nx, ny, nz] = grid.dims();
        let plane = nx * ny;
        let h = grid.spacing();
        let inv_h2 = 1.0 / (h * h);
        let inv_h = 1.0 / h;
        let m2 = self.mass * self.mass;
        let need = self.gradient_axes();
        let nonlinear = !self.tensor.is_zero();
        out.par_chunks_mut(plane).enumerate().for_each(|(k, o)| {
            if k == 0 || k == nz - 1 {
                o.iter_mut().for_each(|x| *x = 0.0);
                return;
            }
            for axis in 0..3 {
                diff_plane(u, grid, axis, Order::Second, self.scheme, k, inv_h2, axis > 0, o);
            }
            let up = &u[k * plane..(k + 1) * plane];
            let vp = &v[k * plane..(k + 1) * plane];
            for (x, &ui) in o.iter_mut().zip(up) {
                *x -= m2 * ui;
            }
            if nonlinear {
                let mut grads: [Vec<f64>; 3] = Default::default();
                for axis in 0..3 {
                    if need[axis] {
                        grads[axis] = vec![0.0; plane];
                        diff_plane(u, grid, axis, Order::First, self.scheme, k, inv_h, false, &mut grads[axis]);
                    }
                }
                self.tensor.accumulate(up, vp, [&grads[0], &grads[1], &grads[2]], o);
            }
            if let Some(src) = &self.source {
                let z = grid.coordinate(2, k);
                for j in 0..ny {
                    let y = grid.coordinate(1, j);
                    for i in 0..nx {
                        o[i + nx * j] += src.eval(t, [grid.coordinate(0, i), y, z]);
                    }
                }
            }
            for j in 0..ny {
                if j == 0 || j == ny - 1 {
                    o[j * nx..(j + 1) * nx].iter_mut().for_each(|x| *x = 0.0);
                } else {
                    o[j * nx] = 0.0;
                    o[j * nx + nx - 1] = 0.0;
                }
            }
        });
    }
}

fn check_finite(state: &StateSlice) -> Result<()> {
    if !state.is_finite() {
        return Err(Error::NumericalFailure { t: state.t(), reason: "non-finite state".into() });
    }
    Ok(())
}

/// `(du, dv) = (v, Δu − m²u + F)`, zero on boundary nodes.
pub fn rhs(state: &StateSlice, dynamics: &Dynamics) -> Result<(ScalarField, ScalarField)> {
    check_finite(state)?;
    let grid = *state.grid();
    let mut dv = vec![0.0; grid.len()];
    dynamics.accel(&grid, state.t(), state.u().values(), state.v().values(), &mut dv);
    let mut du = state.v().clone();
    zero_boundary(&grid, du.values_mut());
    Ok((du, ScalarField::from_values(grid, dv)?))
}

fn zero_boundary(grid: &GridSpec, f: &mut [f64]) {
    let [nx, ny, nz] = grid.dims();
    f.par_chunks_mut(nx * ny).enumerate().for_each(|(k, o)| {
        for j in 0..ny {
            for i in 0..nx {
                if k == 0 || k == nz - 1 || j == 0 || j == ny - 1 || i == 0 || i == nx - 1 {
                    o[i + nx * j] = 0.0;
                }
            }
        }
    });
}

/// RK4 with reusable stage storage.
pub struct Integrator {
    dynamics: Dynamics,
    grid: GridSpec,
    acc_u: Vec<f64>,
    acc_v: Vec<f64>,
    su: Vec<f64>,
    sv: Vec<f64>,
    dv: Vec<f64>,
}

const CHUNK: usize = 1 << 14;

impl Integrator {
    pub fn new(grid: GridSpec, dynamics: Dynamics) -> Self {
        let n = grid.len();
        Self {
            dynamics,
            grid,
            acc_u: vec![0.0; n],
            acc_v: vec![0.0; n],
            su: vec![0.0; n],
            sv: vec![0.0; n],
            dv: vec![0.0; n],
        }
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    /// Advances `state` by `dt` in place (`dt` may be negative).
    pub fn step(&mut self, state: &mut StateSlice, dt: f64) -> Result<()> {
        if *state.grid() != self.grid {
            return Err(Error::Config("state grid differs from integrator grid".into()));
        }
        let (t_ref, u_f, v_f) = state.parts_mut();
        let t = *t_ref;
        let u = u_f.values_mut();
        let v = v_f.values_mut();
        self.su.copy_from_slice(u);
        self.sv.copy_from_slice(v);
        zero_boundary(&self.grid, &mut self.sv);
        self.acc_u.iter_mut().for_each(|x| *x = 0.0);
        self.acc_v.iter_mut().for_each(|x| *x = 0.0);
        let weights = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];
        let next_c = [0.5, 0.5, 1.0];
        let stage_t = [t, t + 0.5 * dt, t + 0.5 * dt, t + dt];
        for stage in 0..4 {
            self.dynamics.accel(&self.grid, stage_t[stage], &self.su, &self.sv, &mut self.dv);
            let w = weights[stage];
            let c = if stage < 3 { Some(next_c[stage] * dt) } else { None };
            self.acc_u
                .par_chunks_mut(CHUNK)
                .zip(self.acc_v.par_chunks_mut(CHUNK))
                .zip(self.su.par_chunks_mut(CHUNK))
                .zip(self.sv.par_chunks_mut(CHUNK))
                .zip(self.dv.par_chunks(CHUNK))
                .zip(u.par_chunks(CHUNK))
                .zip(v.par_chunks(CHUNK))
                .for_each(|((((((au, av), su), sv), dv), u0), v0)| {
                    for i in 0..au.len() {
                        let ku = sv[i];
                        let kv = dv[i];
                        au[i] += w * ku;
                        av[i] += w * kv;
                        if let Some(c) = c {
                            su[i] = u0[i] + c * ku;
                            sv[i] = v0[i] + c * kv;
                        }
                    }
                });
            if c.is_some() {
                zero_boundary(&self.grid, &mut self.sv);
            }
        }
        u.par_chunks_mut(CHUNK)
            .zip(v.par_chunks_mut(CHUNK))
            .zip(self.acc_u.par_chunks(CHUNK))
            .zip(self.acc_v.par_chunks(CHUNK))
            .for_each(|(((u, v), au), av)| {
                for i in 0..u.len() {
                    u[i] += dt * au[i];
                    v[i] += dt * av[i];
                }
            });
        *t_ref = t + dt;
        Ok(())
    }
}

/// One RK4 step returning a new slice; errors if the result is not finite.
pub fn rk4_step(state: &StateSlice, dt: f64, dynamics: &Dynamics) -> Result<StateSlice> {
    check_finite(state)?;
    let mut out = state.clone();
    Integrator::new(*state.grid(), dynamics.clone()).step(&mut out, dt)?;
    if !out.is_finite() {
        return Err(Error::NumericalFailure { t: out.t(), reason: "RK4 step produced non-finite values".into() });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BlowupCause {
    Threshold,
    NonFinite,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlowupEvent {
    pub t: f64,
    pub cause: BlowupCause,
}

/// `(sup|u|, sup|v|)`, NaN if either field holds a non-finite value.
pub fn sup_norms(state: &StateSlice) -> (f64, f64) {
    let sup = |f: &ScalarField| {
        let plane = f.grid().plane_len();
        let parts: Vec<f64> = f
            .values()
            .par_chunks(plane)
            .map(|c| c.iter().fold(0.0_f64, |m, &x| if x.is_finite() && m.is_finite() { m.max(x.abs()) } else { f64::NAN }))
            .collect();
        parts.iter().fold(0.0_f64, |m, &x| if x.is_finite() && m.is_finite() { m.max(x) } else { f64::NAN })
    };
    (sup(state.u()), sup(state.v()))
}

pub fn detect_blowup(state: &StateSlice, threshold: f64) -> Option<BlowupEvent> {
    let (su, sv) = sup_norms(state);
    if !(su.is_finite() && sv.is_finite()) {
        return Some(BlowupEvent { t: state.t(), cause: BlowupCause::NonFinite });
    }
    if su + sv > threshold {
        return Some(BlowupEvent { t: state.t(), cause: BlowupCause::Threshold });
    }
    None
}

pub fn default_threshold(state: &StateSlice) -> f64 {
    let (su, sv) = sup_norms(state);
    1e6 * (su + sv + 1.0)
}

/// `h³ Σ (v² − u Δ_h u + m² u²)`: the discrete energy the semi-discrete
/// linear scheme conserves, equal to `∫ v² + |∇u|² + m²u²` for compactly
/// supported fields up to stencil error.
pub fn flat_energy(state: &StateSlice, mass: f64) -> f64 {
    let lap = laplacian(state.u());
    let m2 = mass * mass;
    let grid = state.grid();
    let plane = grid.plane_len();
    let u = state.u().values();
    let v = state.v().values();
    let l = lap.values();
    ordered_sum((0..grid.dims()[2]).into_par_iter().map(|k| {
        let r = k * plane..(k + 1) * plane;
        let mut s = 0.0;
        for i in r {
            s += v[i] * v[i] - u[i] * l[i] + m2 * u[i] * u[i];
        }
        s
    })) * grid.cell_volume()
}

/// One output row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub step: usize,
    pub t: f64,
    pub sup_u: f64,
    pub sup_v: f64,
    pub energy_flat: f64,
    pub upsilon: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Termination {
    Completed { t: f64 },
    Blowup { t: f64, cause: BlowupCause },
    NumericalFailure { t: f64, reason: String },
}

impl Termination {
    pub fn is_blowup(&self) -> bool {
        matches!(self, Termination::Blowup { .. })
    }

    pub fn time(&self) -> f64 {
        match self {
            Termination::Completed { t } | Termination::Blowup { t, .. } | Termination::NumericalFailure { t, .. } => *t,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub rows: Vec<DiagnosticsRow>,
    pub termination: Termination,
    pub steps: usize,
}

pub const DIAGNOSTICS_HEADER: &str = "step,t,sup_u,sup_v,energy_flat,upsilon";

impl RunRecord {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{DIAGNOSTICS_HEADER}")?;
        for r in &self.rows {
            let up = r.upsilon.map(|x| format!("{x:.17e}")).unwrap_or_default();
            writeln!(out, "{},{:.17e},{:.17e},{:.17e},{:.17e},{up}", r.step, r.t, r.sup_u, r.sup_v, r.energy_flat)?;
        }
        Ok(())
    }

    pub fn read_csv(text: &str) -> Result<Vec<DiagnosticsRow>> {
        let mut lines = text.lines();
        if lines.next() != Some(DIAGNOSTICS_HEADER) {
            return Err(Error::Corrupt("diagnostics CSV header mismatch".into()));
        }
        lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let c: Vec<&str> = l.split(',').collect();
                if c.len() != 6 {
                    return Err(Error::Corrupt(format!("diagnostics row has {} columns", c.len())));
                }
                let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Corrupt(format!("bad number {s:?}: {e}")));
                Ok(DiagnosticsRow {
                    step: c[0].parse().map_err(|e| Error::Corrupt(format!("bad step {:?}: {e}", c[0])))?,
                    t: num(c[1])?,
                    sup_u: num(c[2])?,
                    sup_v: num(c[3])?,
                    energy_flat: num(c[4])?,
                    upsilon: if c[5].is_empty() { None } else { Some(num(c[5])?) },
                })
            })
            .collect()
    }

    pub fn initial_sup_u(&self) -> f64 {
        self.rows.first().map_or(0.0, |r| r.sup_u)
    }
}

/// Receives every slice of a run, starting with the initial one.
pub trait SliceObserver {
    fn observe(&mut self, step: usize, slice: &StateSlice) -> Result<()>;
}

/// Drives a run: initial data, stepping, diagnostics, observers,
/// checkpoints.
pub struct Runner<'a> {
    config: RunConfig,
    state: StateSlice,
    step: usize,
    threshold: f64,
    observers: Vec<&'a mut dyn SliceObserver>,
    checkpoint: Option<(PathBuf, usize)>,
}

impl<'a> Runner<'a> {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let state = config.initial_state()?;
        let threshold = config.blowup_threshold.unwrap_or_else(|| default_threshold(&state));
        let mut config = config.clone();
        config.blowup_threshold = Some(threshold);
        Ok(Self { config, state, step: 0, threshold, observers: Vec::new(), checkpoint: None })
    }

    /// Continues from a saved slice. The step index is recovered from the
    /// slice time.
    pub fn resume(config: &RunConfig, state: StateSlice) -> Result<Self> {
        config.validate()?;
        if *state.grid() != config.grid {
            return Err(Error::Config("checkpoint grid differs from run grid".into()));
        }
        let threshold = config
            .blowup_threshold
            .ok_or_else(|| Error::Config("resumed runs need the resolved blowup threshold".into()))?;
        let step = ((state.t() - config.t_start) / config.dt()).round() as usize;
        Ok(Self { config: config.clone(), state, step, threshold, observers: Vec::new(), checkpoint: None })
    }

    pub fn observe(&mut self, obs: &'a mut dyn SliceObserver) {
        self.observers.push(obs);
    }

    /// Save a checkpoint into `dir` every `every` steps.
    pub fn checkpoint_every(&mut self, every: usize, dir: impl Into<PathBuf>) {
        if every > 0 {
            self.checkpoint = Some((dir.into(), every));
        }
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn state(&self) -> &StateSlice {
        &self.state
    }

    fn row(&self) -> DiagnosticsRow {
        let (sup_u, sup_v) = sup_norms(&self.state);
        DiagnosticsRow {
            step: self.step,
            t: self.state.t(),
            sup_u,
            sup_v,
            energy_flat: flat_energy(&self.state, self.config.mass),
            upsilon: self.config.track_upsilon.then(|| blowup::upsilon_unchecked(&self.state)),
        }
    }

    fn notify(&mut self) -> Result<()> {
        for o in self.observers.iter_mut() {
            o.observe(self.step, &self.state)?;
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<RunRecord> {
        let dt = self.config.dt();
        let total = self.config.total_steps();
        let mut rows = Vec::new();
        let start = self.step;
        if !self.state.is_finite() {
            return Ok(RunRecord {
                config: self.config,
                rows,
                termination: Termination::NumericalFailure { t: self.state.t(), reason: "non-finite initial data".into() },
                steps: start,
            });
        }
        if start % self.config.output_every == 0 {
            rows.push(self.row());
        }
        self.notify()?;
        let mut integ = Integrator::new(self.config.grid, self.config.dynamics());
        let termination = loop {
            if self.step >= total {
                break Termination::Completed { t: self.state.t() };
            }
            integ.step(&mut self.state, dt)?;
            self.step += 1;
            let t = self.config.t_start + self.step as f64 * dt;
            *self.state.parts_mut().0 = t;
            if let Some(ev) = detect_blowup(&self.state, self.threshold) {
                break Termination::Blowup { t: ev.t, cause: ev.cause };
            }
            if self.step % self.config.output_every == 0 || self.step == total {
                rows.push(self.row());
            }
            self.notify()?;
            if let Some((dir, every)) = &self.checkpoint {
                if self.step % every == 0 {
                    std::fs::create_dir_all(dir)?;
                    let path = dir.join(format!("step_{:08}.pkg", self.step));
                    checkpoint::save(&self.state, &self.config, &path)?;
                }
            }
        };
        Ok(RunRecord { config: self.config, rows, termination, steps: self.step })
    }
}

/// Convenience: run a config with no observers.
pub fn run(config: &RunConfig) -> Result<RunRecord> {
    Runner::new(config)?.run()
}

/// `u = sin x₁ sin x₂ sin x₃ cos ωt`, exact for the linear equation with
/// forcing `(3 + m² − ω²) u`.
#[derive(Clone, Copy, Debug)]
pub struct Manufactured {
    pub omega: f64,
    pub mass: f64,
}

impl Manufactured {
    pub fn spatial(x: [f64; 3]) -> f64 {
        x[0].sin() * x[1].sin() * x[2].sin()
    }

    pub fn u(&self, t: f64, x: [f64; 3]) -> f64 {
        Self::spatial(x) * (self.omega * t).cos()
    }

    pub fn v(&self, t: f64, x: [f64; 3]) -> f64 {
        -self.omega * Self::spatial(x) * (self.omega * t).sin()
    }

    pub fn slice(&self, grid: GridSpec, t: f64) -> StateSlice {
        StateSlice::new(t, ScalarField::from_fn(grid, |x| self.u(t, x)), ScalarField::from_fn(grid, |x| self.v(t, x)))
            .expect("same grid")
    }
}

impl Source for Manufactured {
    fn eval(&self, t: f64, x: [f64; 3]) -> f64 {
        (3.0 + self.mass * self.mass - self.omega * self.omega) * self.u(t, x)
    }
}

/// Max-norm error of the manufactured solution after integrating on
/// `[0, π]³` with `cells` cells per axis up to `t_end` at `cfl`.
pub fn manufactured_error(cells: usize, t_end: f64, cfl: f64, scheme: Scheme) -> Result<f64> {
    let m = Manufactured { omega: 1.5, mass: 1.0 };
    let grid = GridSpec::uniform_box(0.0, std::f64::consts::PI, cells)?;
    let dynamics = Dynamics::new(m.mass, CubicTensor::zero()).with_source(Arc::new(m)).with_scheme(scheme);
    let mut integ = Integrator::new(grid, dynamics);
    let mut state = m.slice(grid, 0.0);
    let dt0 = cfl * grid.spacing();
    let n = (t_end / dt0).ceil() as usize;
    let dt = t_end / n as f64;
    for _ in 0..n {
        integ.step(&mut state, dt)?;
    }
    let exact = m.slice(grid, t_end);
    let err = state.u().combine(1.0, exact.u(), -1.0)?.sup_abs();
    Ok(err)
}
