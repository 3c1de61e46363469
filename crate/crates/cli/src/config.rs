//! Run configuration files.
//!
//! ```toml
//! [grid]
//! spacing = 0.005        # length units of the chosen frame
//! half_width = 0.4       # optional; defaults to the finite-speed minimum
//!
//! [pulse]
//! delta = 0.25           # pulse width, original length units
//! nu = -0.6              # amplitude exponent (dimensionless)
//!
//! [tensor]
//! preset = "blowup"      # or "zero"; or give `entries = [[j, k, l, value], ...]`
//!
//! [run]
//! frame = "original"
//! duration = 0.1         # time units of the frame
//! initial = "pulse"      # "pulse", "zero" or "bump"
//!
//! [diagnostics]
//! upsilon = true
//! hyperboloid = false
//!
//! [sweep]                # only read by `pulsekg sweep`
//! nus = [-1.0, 0.0]
//! ```

use std::path::Path;

use pulsekg_core::data::{Bump, PulseParams};
use pulsekg_core::grid::GridSpec;
use pulsekg_core::integrator::{Frame, InitialData, RunConfig};
use pulsekg_core::nonlinearity::CubicTensor;
use pulsekg_core::sweep::{riccati_time_bound, SweepPlan};
use pulsekg_core::{Error, Result};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub pulse: PulseSection,
    #[serde(default)]
    pub tensor: TensorSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub sweep: Option<toml::Table>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub spacing: Option<f64>,
    /// Points per pulse width; original frame only.
    pub per_delta: Option<usize>,
    pub half_width: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSection {
    pub delta: f64,
    pub nu: f64,
}

impl Default for PulseSection {
    fn default() -> Self {
        Self { delta: 0.25, nu: -0.6 }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorSection {
    pub preset: Option<String>,
    pub entries: Option<Vec<(i8, i8, i8, f64)>>,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum InitialKind {
    #[default]
    Pulse,
    Zero,
    Bump,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub frame: Option<Frame>,
    pub duration: Option<f64>,
    pub cfl: Option<f64>,
    pub output_every: Option<usize>,
    #[serde(default)]
    pub initial: InitialKind,
    pub bump: Option<BumpSection>,
    pub blowup_threshold: Option<f64>,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpSection {
    pub amplitude: f64,
    pub tilt: f64,
    pub velocity: f64,
    pub radius: f64,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSection {
    /// Defaults to on in the original frame.
    pub upsilon: Option<bool>,
    pub upsilon_every: usize,
    /// Defaults to on in the scaled frame.
    pub hyperboloid: Option<bool>,
    pub hyperboloid_ds: f64,
    /// 0 records `E` only; 1 or 2 adds `M₁`, `M₂`.
    pub ladder_order: usize,
    pub checkpoint_every: usize,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self { upsilon: None, upsilon_every: 1, hyperboloid: None, hyperboloid_ds: 0.1, ladder_order: 0, checkpoint_every: 0 }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Clone, Copy, Debug)]
pub struct Overrides {
    pub frame: Option<Frame>,
    pub resolution_scale: f64,
    pub quick: bool,
    pub no_hyperboloid: bool,
    pub checkpoint_every: Option<usize>,
}

impl Default for Overrides {
    fn default() -> Self {
        Self { frame: None, resolution_scale: 1.0, quick: false, no_hyperboloid: false, checkpoint_every: None }
    }
}

/// A resolved simulation: the run itself plus which monitors to attach.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub run: RunConfig,
    pub upsilon_every: Option<usize>,
    pub hyperboloid_ds: Option<f64>,
    pub ladder_order: usize,
    pub checkpoint_every: usize,
}

pub fn load(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Parse errors carry the line and column of the offending key.
pub fn parse(text: &str) -> Result<ConfigFile> {
    toml::from_str(text).map_err(|e| {
        let at = e.span().map(|s| line_col(text, s.start));
        match at {
            Some((line, col)) => Error::Config(format!("line {line}, column {col}: {}", e.message())),
            None => Error::Config(e.message().to_string()),
        }
    })
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

impl TensorSection {
    pub fn resolve(&self) -> Result<CubicTensor> {
        match (&self.preset, &self.entries) {
            (Some(_), Some(_)) => Err(Error::Config("[tensor] takes either `preset` or `entries`, not both".into())),
            (_, Some(q)) => CubicTensor::from_quadruples(q),
            (None, None) => Ok(CubicTensor::preset_blowup()),
            (Some(p), None) => match p.as_str() {
                "blowup" => Ok(CubicTensor::preset_blowup()),
                "zero" => Ok(CubicTensor::zero()),
                other => Err(Error::Config(format!("unknown tensor preset `{other}` (expected blowup or zero)"))),
            },
        }
    }
}

impl ConfigFile {
    pub fn simulation(&self, o: &Overrides) -> Result<Simulation> {
        let pulse = PulseParams::new(self.pulse.delta, self.pulse.nu)?;
        let delta = pulse.delta();
        let frame = o.frame.or(self.run.frame).unwrap_or(Frame::Original);
        if !(o.resolution_scale > 0.0) {
            return Err(Error::Config(format!("resolution scale must be positive, got {}", o.resolution_scale)));
        }
        let duration = self.run.duration.unwrap_or(match frame {
            Frame::Original => 3.0 * riccati_time_bound(delta),
            Frame::Scaled => 10.0,
        });

        let base = match (self.grid.spacing, self.grid.per_delta) {
            (Some(_), Some(_)) => return Err(Error::Config("[grid] takes either `spacing` or `per_delta`, not both".into())),
            (Some(h), None) => h,
            (None, Some(n)) if frame == Frame::Original => delta / n as f64,
            (None, Some(_)) => return Err(Error::Config("`per_delta` applies to the original frame only".into())),
            (None, None) => match frame {
                Frame::Original => delta / 48.0,
                Frame::Scaled => 0.125,
            },
        };
        let spacing = base / o.resolution_scale * if o.quick { 2.0 } else { 1.0 };

        let initial = match (self.run.initial, self.run.bump) {
            (InitialKind::Bump, Some(b)) => InitialData::Bump(Bump {
                amplitude: b.amplitude,
                tilt: b.tilt,
                velocity: b.velocity,
                radius: b.radius,
            }),
            (InitialKind::Bump, None) => return Err(Error::Config("initial = \"bump\" needs a [run.bump] table".into())),
            (_, Some(_)) => return Err(Error::Config("[run.bump] is only used with initial = \"bump\"".into())),
            (InitialKind::Pulse, None) => InitialData::Pulse,
            (InitialKind::Zero, None) => InitialData::Zero,
        };

        // Placeholder grid; replaced once the support radius is known.
        let probe = GridSpec::cube(spacing * 8.0, spacing)?;
        let mut run = RunConfig::for_frame(frame, pulse, &self.tensor.resolve()?, probe, duration)?;
        run.initial = initial;
        if let Some(c) = self.run.cfl {
            run.cfl = c;
        }
        run.blowup_threshold = self.run.blowup_threshold;
        let half = match self.grid.half_width {
            Some(w) => w,
            None => ((run.support_radius() + duration + 4.0 * spacing) / spacing).ceil() * spacing,
        };
        run.grid = GridSpec::cube(half, spacing)?;
        run.output_every = self.run.output_every.unwrap_or(1);

        let d = &self.diagnostics;
        let upsilon = d.upsilon.unwrap_or(frame == Frame::Original);
        if upsilon && frame != Frame::Original {
            return Err(Error::Config("upsilon diagnostics need the original frame".into()));
        }
        run.track_upsilon = upsilon;
        let hyper = !o.no_hyperboloid && d.hyperboloid.unwrap_or(frame == Frame::Scaled);
        if hyper && frame != Frame::Scaled {
            return Err(Error::Config("hyperboloid diagnostics need the scaled frame".into()));
        }
        if d.ladder_order > 2 {
            return Err(Error::Config(format!("ladder_order must be 0, 1 or 2, got {}", d.ladder_order)));
        }
        run.validate()?;
        Ok(Simulation {
            run,
            upsilon_every: upsilon.then_some(d.upsilon_every.max(1)),
            hyperboloid_ds: hyper.then_some(d.hyperboloid_ds),
            ladder_order: d.ladder_order,
            checkpoint_every: o.checkpoint_every.unwrap_or(d.checkpoint_every),
        })
    }

    /// The `[sweep]` table as a plan. Its tensor comes from `[tensor]`.
    pub fn sweep_plan(&self, quick: bool) -> Result<SweepPlan> {
        let table = self.sweep.clone().unwrap_or_default();
        if table.contains_key("tensor") {
            return Err(Error::Config("set the sweep tensor in [tensor], not [sweep]".into()));
        }
        let mut plan: SweepPlan =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(format!("[sweep]: {}", e.message())))?;
        plan.tensor = self.tensor.resolve()?;
        if quick {
            plan.per_delta = (plan.per_delta / 2).max(8);
            plan.decay_spacing *= 2.0;
        }
        plan.validate()?;
        Ok(plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_blowup_preset() {
        let sim = parse("").unwrap().simulation(&Overrides::default()).unwrap();
        assert_eq!(sim.run.frame, Frame::Original);
        assert_eq!(sim.run.initial, InitialData::Pulse);
        assert!((sim.run.grid.spacing() - 0.25 / 48.0).abs() < 1e-15);
        assert_eq!(sim.upsilon_every, Some(1));
        assert_eq!(sim.hyperboloid_ds, None);
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = parse("[grid]\nspacing = 0.1\n\n[run]\nduraton = 2.0\n").unwrap_err().to_string();
        assert!(err.contains("line 5"), "{err}");
        assert!(err.contains("duraton"), "{err}");
    }

    #[test]
    fn type_error_reports_line() {
        let err = parse("[pulse]\ndelta = \"wide\"\nnu = 0.0\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn tensor_entries_are_literal() {
        let c = parse("[tensor]\nentries = [[-1, -1, 1, 2.0], [0, 0, 0, -1.0]]\n").unwrap();
        assert_eq!(c.tensor.resolve().unwrap().to_quadruples(), vec![(-1, -1, 1, 2.0), (0, 0, 0, -1.0)]);
        assert!(parse("[tensor]\npreset = \"zero\"\nentries = []\n").unwrap().tensor.resolve().is_err());
        assert!(parse("[tensor]\npreset = \"quartic\"\n").unwrap().tensor.resolve().is_err());
    }

    #[test]
    fn overrides_apply() {
        let c = parse("[grid]\nspacing = 0.1\n[run]\nframe = \"scaled\"\nduration = 1.0\n").unwrap();
        let o = Overrides { resolution_scale: 2.0, quick: true, no_hyperboloid: true, ..Overrides::default() };
        let sim = c.simulation(&o).unwrap();
        assert!((sim.run.grid.spacing() - 0.1).abs() < 1e-15);
        assert_eq!(sim.hyperboloid_ds, None);
        assert_eq!(sim.upsilon_every, None);
        assert_eq!(sim.run.mass, 0.25);
    }

    #[test]
    fn domain_covers_finite_speed() {
        let c = parse("[run]\nframe = \"scaled\"\nduration = 1.0\n").unwrap();
        let sim = c.simulation(&Overrides::default()).unwrap();
        assert!(-sim.run.grid.origin()[0] >= 1.0 + 1.0 + 4.0 * 0.125 - 1e-12);
    }

    #[test]
    fn frame_mismatched_diagnostics_are_rejected() {
        let c = parse("[run]\nframe = \"scaled\"\n[diagnostics]\nupsilon = true\n").unwrap();
        assert!(c.simulation(&Overrides::default()).is_err());
        let c = parse("[diagnostics]\nhyperboloid = true\n").unwrap();
        assert!(c.simulation(&Overrides::default()).is_err());
    }

    #[test]
    fn bump_needs_its_table() {
        let c = parse("[run]\ninitial = \"bump\"\n").unwrap();
        assert!(c.simulation(&Overrides::default()).is_err());
    }

    #[test]
    fn sweep_section_is_strict_and_partial() {
        let c = parse("[sweep]\nnus = [-1.0, 0.0]\nper_delta = 24\n").unwrap();
        let p = c.sweep_plan(false).unwrap();
        assert_eq!(p.nus, vec![-1.0, 0.0]);
        assert_eq!(p.per_delta, 24);
        assert_eq!(p.deltas, vec![0.25]);
        assert!(parse("[sweep]\nnu = [0.0]\n").unwrap().sweep_plan(false).is_err());
        assert!(parse("[sweep]\ntensor = 1\n").unwrap().sweep_plan(false).is_err());
    }
}
