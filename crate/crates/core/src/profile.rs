//! The mollified one-dimensional profiles `f`, `g`, `h` that build the
//! blowup data, tabulated once and looked up by cubic interpolation.
//!
//! Each raw profile is piecewise linear with compact support in
//! `[-13/16, 13/16]`; convolving with a mollifier of half-width 1/16 keeps the
//! support inside `(-1, 1)` and leaves the plateaus on `[-3/4, -1/4]` (or
//! `[-3/4, 3/4]`) untouched. The mollifier has unit mass in one dimension.

use std::io::Write;
use std::sync::OnceLock;

use crate::error::Result;

/// Simpson panels per unit-scale window (`[-1, 1]` for the mollifier).
pub const PANELS: usize = 1 << 12;
/// Mollifier half-width used by the construction.
pub const WIDTH: f64 = 1.0 / 16.0;
/// Node count of a [`ProfileTable`].
pub const TABLE_NODES: usize = 4096;
/// The table covers `[-TABLE_EXTENT, TABLE_EXTENT]`.
pub const TABLE_EXTENT: f64 = 1.25;

fn bump(theta: f64) -> f64 {
    if theta.abs() < 1.0 {
        (-1.0 / (1.0 - theta * theta)).exp()
    } else {
        0.0
    }
}

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    debug_assert!(n % 2 == 0);
    if b <= a {
        return 0.0;
    }
    let h = (b - a) / n as f64;
    let mut odd = 0.0;
    let mut even = 0.0;
    for i in 1..n {
        let y = f(a + i as f64 * h);
        if i % 2 == 1 {
            odd += y;
        } else {
            even += y;
        }
    }
    (f(a) + f(b) + 4.0 * odd + 2.0 * even) * h / 3.0
}

/// Normalizer `C` with `∫_{-1}^{1} C exp(-1/(1-θ²)) dθ = 1` under the
/// Simpson rule.
pub fn mollifier_constant() -> f64 {
    static C: OnceLock<f64> = OnceLock::new();
    *C.get_or_init(|| 1.0 / simpson(bump, -1.0, 1.0, PANELS))
}

/// Unit-mass Friedrichs mollifier supported on `(-1, 1)`.
pub fn mollifier(theta: f64) -> f64 {
    mollifier_constant() * bump(theta)
}

/// `α_w(θ) = α(θ/w)/w`, unit mass on `(-w, w)`.
pub fn scaled_mollifier(theta: f64, width: f64) -> f64 {
    mollifier(theta / width) / width
}

/// The raw piecewise profiles before mollification.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RawProfile {
    /// Indicator of `[-13/16, -3/16]`.
    F,
    /// `θ + 1` on `[-13/16, 9/16]`, zero elsewhere.
    G,
    /// Indicator of `[-13/16, 13/16]`.
    H,
}

impl RawProfile {
    /// Interval carrying the absolutely continuous part.
    fn interval(self) -> (f64, f64) {
        match self {
            RawProfile::F => (-13.0 / 16.0, -3.0 / 16.0),
            RawProfile::G => (-13.0 / 16.0, 9.0 / 16.0),
            RawProfile::H => (-13.0 / 16.0, 13.0 / 16.0),
        }
    }

    fn density(self, y: f64) -> f64 {
        match self {
            RawProfile::G => y + 1.0,
            _ => 1.0,
        }
    }

    /// Slope of the density on its interval.
    fn slope(self) -> f64 {
        match self {
            RawProfile::G => 1.0,
            _ => 0.0,
        }
    }

    pub fn eval(self, y: f64) -> f64 {
        let (a, b) = self.interval();
        if (a..=b).contains(&y) {
            self.density(y)
        } else {
            0.0
        }
    }

    /// Point masses of the distributional derivative: the jump at each end.
    fn jumps(self) -> [(f64, f64); 2] {
        let (a, b) = self.interval();
        [(a, self.density(a)), (b, -self.density(b))]
    }
}

/// `∫_a^b w(y) α_w(θ - y) dy` over the part of `[a, b]` inside the window.
fn window_integral(theta: f64, a: f64, b: f64, width: f64, w: impl Fn(f64) -> f64) -> f64 {
    let lo = a.max(theta - width);
    let hi = b.min(theta + width);
    if hi <= lo {
        return 0.0;
    }
    // Keep the panel density of the normalization: PANELS panels per 2·width.
    let n = ((PANELS as f64 * (hi - lo) / (2.0 * width)).ceil() as usize).max(2);
    let n = n + n % 2;
    simpson(|y| w(y) * scaled_mollifier(theta - y, width), lo, hi, n)
}

/// Value and derivative of `raw * α_w` at `theta`.
pub fn mollify_at(raw: RawProfile, theta: f64, width: f64) -> (f64, f64) {
    let (a, b) = raw.interval();
    let value = window_integral(theta, a, b, width, |y| raw.density(y));
    let mut deriv = 0.0;
    if raw.slope() != 0.0 {
        deriv += raw.slope() * window_integral(theta, a, b, width, |_| 1.0);
    }
    for (pos, mass) in raw.jumps() {
        deriv += mass * scaled_mollifier(theta - pos, width);
    }
    (value, deriv)
}

/// A profile tabulated on a uniform grid together with its derivative.
#[derive(Clone, Debug)]
pub struct ProfileTable {
    lo: f64,
    step: f64,
    values: Vec<f64>,
    derivative_values: Vec<f64>,
}

impl ProfileTable {
    /// Tabulates `raw * α_width` on [`TABLE_NODES`] nodes.
    pub fn mollify(raw: RawProfile, width: f64) -> Self {
        let lo = -TABLE_EXTENT;
        let step = 2.0 * TABLE_EXTENT / (TABLE_NODES - 1) as f64;
        let (values, derivative_values) =
            (0..TABLE_NODES).map(|i| mollify_at(raw, lo + i as f64 * step, width)).unzip();
        Self { lo, step, values, derivative_values }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(|i| self.lo + i as f64 * self.step)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn derivative_values(&self) -> &[f64] {
        &self.derivative_values
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    fn locate(&self, theta: f64) -> Option<(usize, f64)> {
        if !(theta.abs() < 1.0) {
            return None;
        }
        let x = (theta - self.lo) / self.step;
        let i = (x.floor() as usize).min(self.values.len() - 2);
        Some((i, x - i as f64))
    }

    /// Cubic Hermite interpolation from values and tabulated derivatives.
    pub fn value(&self, theta: f64) -> f64 {
        let Some((i, s)) = self.locate(theta) else { return 0.0 };
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (d0, d1) = (self.derivative_values[i] * self.step, self.derivative_values[i + 1] * self.step);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * d0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * d1
    }

    /// Four-point cubic Lagrange interpolation of the tabulated derivative.
    pub fn derivative(&self, theta: f64) -> f64 {
        let Some((i, s)) = self.locate(theta) else { return 0.0 };
        let i0 = i.clamp(1, self.values.len() - 3) - 1;
        let x = s + (i - i0) as f64;
        let d = &self.derivative_values[i0..i0 + 4];
        let w0 = -(x - 1.0) * (x - 2.0) * (x - 3.0) / 6.0;
        let w1 = x * (x - 2.0) * (x - 3.0) / 2.0;
        let w2 = -x * (x - 1.0) * (x - 3.0) / 2.0;
        let w3 = x * (x - 1.0) * (x - 2.0) / 6.0;
        w0 * d[0] + w1 * d[1] + w2 * d[2] + w3 * d[3]
    }

    /// Largest tabulated value.
    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::MIN, f64::max)
    }
}

/// The three tables `f`, `g`, `h`.
#[derive(Clone, Debug)]
pub struct Profiles {
    pub f: ProfileTable,
    pub g: ProfileTable,
    pub h: ProfileTable,
}

impl Profiles {
    pub fn build() -> Self {
        Self {
            f: ProfileTable::mollify(RawProfile::F, WIDTH),
            g: ProfileTable::mollify(RawProfile::G, WIDTH),
            h: ProfileTable::mollify(RawProfile::H, WIDTH),
        }
    }

    /// Process-wide tables, built on first use.
    pub fn shared() -> &'static Profiles {
        static P: OnceLock<Profiles> = OnceLock::new();
        P.get_or_init(Profiles::build)
    }

    /// CSV with columns `theta,f,g,gprime,h`, one row per table node.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "theta,f,g,gprime,h")?;
        for (i, theta) in self.f.nodes().enumerate() {
            writeln!(
                out,
                "{theta:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                self.f.values[i], self.g.values[i], self.g.derivative_values[i], self.h.values[i]
            )?;
        }
        Ok(())
    }
}
