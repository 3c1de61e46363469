//! Short-pulse initial data: the blowup pair built from the mollified
//! profiles, a smooth radial bump for validation runs, discrete Sobolev
//! norms, and the initial value of the blowup functional.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{derivative, Axis, GridSpec, ScalarField};
use crate::profile::Profiles;

/// Pulse width `δ` and amplitude exponent `ν`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PulseParamsRaw")]
pub struct PulseParams {
    delta: f64,
    nu: f64,
}

#[derive(Deserialize)]
struct PulseParamsRaw {
    delta: f64,
    nu: f64,
}

impl TryFrom<PulseParamsRaw> for PulseParams {
    type Error = Error;
    fn try_from(r: PulseParamsRaw) -> Result<Self> {
        PulseParams::new(r.delta, r.nu)
    }
}

impl PulseParams {
    /// `δ = 1` is admitted so the unscaled data can be built through the
    /// same path.
    pub fn new(delta: f64, nu: f64) -> Result<Self> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::Config(format!("pulse width δ must lie in (0, 1], got {delta}")));
        }
        if !nu.is_finite() {
            return Err(Error::Config(format!("amplitude exponent ν must be finite, got {nu}")));
        }
        Ok(Self { delta, nu })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }
}

/// `u(t₀, ·)` and `∂_t u(t₀, ·)` on a common grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DataPair {
    pub u0: ScalarField,
    pub u1: ScalarField,
}

fn check_support(grid: &GridSpec, radius: f64) -> Result<()> {
    if !grid.contains_centered_box(radius, 0.0) {
        return Err(Error::Config(format!(
            "grid [{:?}, {:?}] does not contain the data support [-{radius}, {radius}]³",
            grid.origin(),
            grid.upper()
        )));
    }
    Ok(())
}

fn product_data(grid: GridSpec, scale: f64, amp_u: f64, amp_v: f64) -> DataPair {
    let p = Profiles::shared();
    let hh = |x: [f64; 3]| p.h.value(x[1] / scale) * p.h.value(x[2] / scale);
    DataPair {
        u0: ScalarField::from_fn(grid, |x| amp_u * 4.0 * p.g.value(x[0] / scale) * hh(x)),
        u1: ScalarField::from_fn(grid, |x| amp_v * 4.0 * p.f.value(x[0] / scale) * hh(x)),
    }
}

/// Blowup data in the original frame at `t = 0`:
/// `u = δ^{ν+1} 4 g(x₁/δ) h(x₂/δ) h(x₃/δ)`, `∂_t u = δ^ν 4 f(x₁/δ) h h`.
pub fn assemble_blowup_data(grid: &GridSpec, params: PulseParams) -> Result<DataPair> {
    let d = params.delta;
    check_support(grid, d)?;
    Ok(product_data(*grid, d, d.powf(params.nu + 1.0), d.powf(params.nu)))
}

/// The same data expressed in `(τ, z) = (t/δ + 2, x/δ)` at `τ = 2`. Both
/// fields carry `δ^{ν+1}` since `∂_τ = δ ∂_t`.
pub fn assemble_scaled_blowup_data(grid: &GridSpec, params: PulseParams) -> Result<DataPair> {
    check_support(grid, 1.0)?;
    let a = params.delta.powf(params.nu + 1.0);
    Ok(product_data(*grid, 1.0, a, a))
}

/// Smooth compactly supported bump data for validation:
/// `u = a (1 + tilt·x₁/r) b(|x|/r)`, `∂_t u = c b(|x|/r)`, with
/// `b(ρ) = exp(1 − 1/(1 − ρ²))` so that `b(0) = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub amplitude: f64,
    #[serde(default)]
    pub tilt: f64,
    #[serde(default)]
    pub velocity: f64,
    pub radius: f64,
}

impl Bump {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::Config(format!("bump radius must be positive, got {}", self.radius)));
        }
        if ![self.amplitude, self.tilt, self.velocity].iter().all(|x| x.is_finite()) {
            return Err(Error::Config("bump coefficients must be finite".into()));
        }
        Ok(())
    }

    pub fn profile(rho: f64) -> f64 {
        if rho < 1.0 {
            (1.0 - 1.0 / (1.0 - rho * rho)).exp()
        } else {
            0.0
        }
    }

    pub fn assemble(&self, grid: &GridSpec) -> Result<DataPair> {
        self.validate()?;
        check_support(grid, self.radius)?;
        let r = self.radius;
        let rho = |x: [f64; 3]| (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt() / r;
        Ok(DataPair {
            u0: ScalarField::from_fn(*grid, |x| self.amplitude * (1.0 + self.tilt * x[0] / r) * Self::profile(rho(x))),
            u1: ScalarField::from_fn(*grid, |x| self.velocity * Self::profile(rho(x))),
        })
    }
}

/// Discrete `H^k` norm: `(h³ Σ_x Σ_{|β| ≤ k} (D^β f)²)^{1/2}` with the
/// fourth-order grid derivatives; every multi-index `β` counted once.
pub fn sobolev_norm(f: &ScalarField, order: usize) -> Result<f64> {
    if order > 5 {
        return Err(Error::Domain(format!("Sobolev order must be in 0..=5, got {order}")));
    }
    fn walk(f: &ScalarField, first_axis: usize, depth_left: usize) -> f64 {
        let mut total = f.values().iter().map(|x| x * x).sum::<f64>();
        if depth_left > 0 {
            for a in first_axis..3 {
                total += walk(&derivative(f, Axis::ALL[a]), a, depth_left - 1);
            }
        }
        total
    }
    Ok((walk(f, 0, order) * f.grid().cell_volume()).sqrt())
}

/// Discrete `Υ(0) = h³ Σ u₁ ∂₁u₀` together with its scaling factorization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpsilonInitial {
    pub value: f64,
    /// The same sum for `δ = 1, ν = −1` on the grid scaled by `1/δ`.
    pub unit_value: f64,
    /// `δ^{2ν+3}`.
    pub scale: f64,
    /// Set when `h > δ/32`.
    pub under_resolved: bool,
}

impl UpsilonInitial {
    pub fn factorization_ratio(&self) -> f64 {
        self.value / (self.scale * self.unit_value)
    }
}

/// `h³ Σ u₁ ∂₁u₀`.
pub fn upsilon_of(pair: &DataPair) -> f64 {
    let d1 = derivative(&pair.u0, Axis::X1);
    pair.u1.mul(&d1).map(|f| f.integral()).unwrap_or(f64::NAN)
}

pub fn upsilon_initial(grid: &GridSpec, params: PulseParams) -> Result<UpsilonInitial> {
    let pair = assemble_blowup_data(grid, params)?;
    let d = params.delta;
    let unit_grid = grid.rescaled(d)?;
    let unit = assemble_blowup_data(&unit_grid, PulseParams::new(1.0, -1.0)?)?;
    Ok(UpsilonInitial {
        value: upsilon_of(&pair),
        unit_value: upsilon_of(&unit),
        scale: d.powf(2.0 * params.nu + 3.0),
        under_resolved: grid.spacing() > d / 32.0 * (1.0 + 1e-12),
    })
}

/// Blowup-study domain `[-1.5δ, 1.5δ]³` at spacing `δ/per_delta`.
pub fn blowup_grid(delta: f64, per_delta: usize) -> Result<GridSpec> {
    GridSpec::cube(1.5 * delta, delta / per_delta as f64)
}
