//! Uniform cell-vertex Cartesian grids, scalar fields on them, and the
//! discrete calculus used everywhere else: fourth-order first and second
//! derivatives, the Lorentz boosts `L_a = x_a ∂_t + t ∂_a`, the rotations
//! `Ω_ab = x_a ∂_b − x_b ∂_a`, and the hyperboloidal frame derivatives.
//!
//! Values are stored x-fastest: `index(i, j, k) = i + nx * (j + ny * k)`.
//! Interior points use five-point central stencils; the two outermost layers
//! on each side fall back to one-sided fourth-order stencils.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum points per axis: one five-point stencil plus a two-point halo on
/// each side.
pub const MIN_DIMS: usize = 9;

/// A spatial axis `x_1`, `x_2` or `x_3`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    X1,
    X2,
    X3,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X1, Axis::X2, Axis::X3];

    /// Zero-based storage index.
    pub fn index(self) -> usize {
        match self {
            Axis::X1 => 0,
            Axis::X2 => 1,
            Axis::X3 => 2,
        }
    }

    /// One-based axis number `a ∈ {1, 2, 3}`.
    pub fn number(self) -> usize {
        self.index() + 1
    }

    pub fn from_number(a: usize) -> Result<Axis> {
        match a {
            1 => Ok(Axis::X1),
            2 => Ok(Axis::X2),
            3 => Ok(Axis::X3),
            _ => Err(Error::Domain(format!("axis index {a} is not in {{1, 2, 3}}"))),
        }
    }
}

#[derive(Deserialize)]
struct GridSpecRaw {
    origin: [f64; 3],
    spacing: f64,
    dims: [usize; 3],
}

impl TryFrom<GridSpecRaw> for GridSpec {
    type Error = Error;

    fn try_from(raw: GridSpecRaw) -> Result<Self> {
        GridSpec::new(raw.origin, raw.spacing, raw.dims)
    }
}

/// Geometry of a uniform axis-aligned cell-vertex grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpecRaw")]
pub struct GridSpec {
    origin: [f64; 3],
    spacing: f64,
    dims: [usize; 3],
}

impl GridSpec {
    pub fn new(origin: [f64; 3], spacing: f64, dims: [usize; 3]) -> Result<Self> {
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::Config(format!("grid spacing must be positive, got {spacing}")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Config("grid origin must be finite".into()));
        }
        if dims.iter().any(|&n| n < MIN_DIMS) {
            return Err(Error::Config(format!(
                "grid needs at least {MIN_DIMS} points per axis, got {dims:?}"
            )));
        }
        Ok(Self { origin, spacing, dims })
    }

    /// Cube `[-half_width, half_width]³` centred on the origin. The point
    /// count is rounded so that the spacing is exactly `spacing`; the actual
    /// half-width may therefore exceed the request by less than `spacing/2`.
    pub fn cube(half_width: f64, spacing: f64) -> Result<Self> {
        if !(half_width > 0.0) {
            return Err(Error::Config(format!("half-width must be positive, got {half_width}")));
        }
        let cells = (2.0 * half_width / spacing - 1e-9).ceil() as usize;
        let cells = cells + cells % 2;
        let n = cells + 1;
        let lo = -(cells as f64) * spacing / 2.0;
        Self::new([lo; 3], spacing, [n; 3])
    }

    /// Box `[lo, hi]³` with `cells` cells per axis.
    pub fn uniform_box(lo: f64, hi: f64, cells: usize) -> Result<Self> {
        if !(hi > lo) {
            return Err(Error::Config(format!("empty box [{lo}, {hi}]")));
        }
        Self::new([lo; 3], (hi - lo) / cells as f64, [cells + 1; 3])
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn plane_len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(3)
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    pub fn coordinate(&self, axis: usize, i: usize) -> f64 {
        self.origin[axis] + i as f64 * self.spacing
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [self.coordinate(0, i), self.coordinate(1, j), self.coordinate(2, k)]
    }

    pub fn point_of(&self, idx: usize) -> [f64; 3] {
        let [i, j, k] = self.unravel(idx);
        self.point(i, j, k)
    }

    /// Upper corner of the grid box.
    pub fn upper(&self) -> [f64; 3] {
        let mut hi = self.origin;
        for (a, h) in hi.iter_mut().enumerate() {
            *h += (self.dims[a] - 1) as f64 * self.spacing;
        }
        hi
    }

    /// Whether the box `[-r, r]³` lies inside the grid with `margin` to spare.
    pub fn contains_centered_box(&self, r: f64, margin: f64) -> bool {
        let hi = self.upper();
        (0..3).all(|a| self.origin[a] <= -r - margin && hi[a] >= r + margin)
    }

    /// Distance of a node from the nearest boundary layer, in nodes.
    pub fn boundary_depth(&self, i: usize, j: usize, k: usize) -> usize {
        let [nx, ny, nz] = self.dims;
        [i, nx - 1 - i, j, ny - 1 - j, k, nz - 1 - k].into_iter().min().unwrap()
    }

    /// Same geometry with every length divided by `factor`.
    pub fn rescaled(&self, factor: f64) -> Result<Self> {
        let o = self.origin;
        Self::new([o[0] / factor, o[1] / factor, o[2] / factor], self.spacing / factor, self.dims)
    }
}

/// Real samples on every node of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Config(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    /// Samples `f(x)` at every node, in parallel over z-planes.
    pub fn from_fn<F>(grid: GridSpec, f: F) -> Self
    where
        F: Fn([f64; 3]) -> f64 + Sync,
    {
        let mut values = vec![0.0; grid.len()];
        let plane = grid.plane_len();
        values.par_chunks_mut(plane).enumerate().for_each(|(k, out)| {
            let z = grid.coordinate(2, k);
            for j in 0..grid.dims[1] {
                let y = grid.coordinate(1, j);
                for i in 0..grid.dims[0] {
                    out[i + grid.dims[0] * j] = f([grid.coordinate(0, i), y, z]);
                }
            }
        });
        Self { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.grid.index(i, j, k)]
    }

    pub fn sup_abs(&self) -> f64 {
        // NaN must not be swallowed by f64::max.
        self.values.iter().fold(0.0_f64, |m, &x| if x.is_nan() || m.is_nan() { f64::NAN } else { m.max(x.abs()) })
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    pub fn same_grid(&self, other: &ScalarField) -> bool {
        self.grid == other.grid
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> ScalarField {
        let values = self.values.par_iter().map(|&x| f(x)).collect();
        Self { grid: self.grid, values }
    }

    pub fn scaled(&self, c: f64) -> ScalarField {
        self.map(|x| c * x)
    }

    /// `alpha * self + beta * other`.
    pub fn combine(&self, alpha: f64, other: &ScalarField, beta: f64) -> Result<ScalarField> {
        ensure_same_grid(self, other)?;
        let values = self
            .values
            .par_iter()
            .zip(other.values.par_iter())
            .map(|(&a, &b)| alpha * a + beta * b)
            .collect();
        Ok(Self { grid: self.grid, values })
    }

    /// Pointwise product.
    pub fn mul(&self, other: &ScalarField) -> Result<ScalarField> {
        ensure_same_grid(self, other)?;
        let values = self.values.par_iter().zip(other.values.par_iter()).map(|(&a, &b)| a * b).collect();
        Ok(Self { grid: self.grid, values })
    }

    /// Pointwise `w(x) * self`.
    pub fn weighted(&self, w: impl Fn([f64; 3]) -> f64 + Sync) -> ScalarField {
        let grid = self.grid;
        let values = self
            .values
            .par_iter()
            .enumerate()
            .map(|(idx, &x)| w(grid.point_of(idx)) * x)
            .collect();
        Self { grid, values }
    }

    /// `h³ Σ values`, summed plane by plane in a fixed order.
    pub fn integral(&self) -> f64 {
        let plane = self.grid.plane_len();
        ordered_sum(self.values.par_chunks(plane).map(|c| c.iter().sum::<f64>())) * self.grid.cell_volume()
    }

    /// Pointwise first derivative along `axis` at node `(i, j, k)`.
    pub fn derivative_at(&self, axis: Axis, i: usize, j: usize, k: usize) -> f64 {
        let pos = [i, j, k];
        let a = axis.index();
        let n = self.grid.dims[a];
        let stride = axis_stride(&self.grid, a);
        let base = self.grid.index(i, j, k) as isize;
        let w = d1_weights(pos[a], n, Scheme::Standard);
        let mut acc = 0.0;
        for &(o, c) in w {
            acc += c * self.values[(base + o * stride as isize) as usize];
        }
        acc / self.grid.spacing
    }
}

pub(crate) fn ensure_same_grid(a: &ScalarField, b: &ScalarField) -> Result<()> {
    if a.grid != b.grid {
        return Err(Error::Config("fields live on different grids".into()));
    }
    Ok(())
}

/// Sum a parallel iterator of partial sums in index order, so the result does
/// not depend on the worker count.
pub(crate) fn ordered_sum<I>(parts: I) -> f64
where
    I: IndexedParallelIterator<Item = f64>,
{
    let parts: Vec<f64> = parts.collect();
    parts.iter().sum()
}

/// `(t, u, v)` with `v = ∂_t u`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSlice {
    t: f64,
    u: ScalarField,
    v: ScalarField,
}

impl StateSlice {
    pub fn new(t: f64, u: ScalarField, v: ScalarField) -> Result<Self> {
        ensure_same_grid(&u, &v)?;
        Ok(Self { t, u, v })
    }

    pub fn zeros(grid: GridSpec, t: f64) -> Self {
        Self { t, u: ScalarField::zeros(grid), v: ScalarField::zeros(grid) }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn u(&self) -> &ScalarField {
        &self.u
    }

    pub fn v(&self) -> &ScalarField {
        &self.v
    }

    pub fn grid(&self) -> &GridSpec {
        self.u.grid()
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.u.is_finite() && self.v.is_finite()
    }

    pub fn into_parts(self) -> (f64, ScalarField, ScalarField) {
        (self.t, self.u, self.v)
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut f64, &mut ScalarField, &mut ScalarField) {
        (&mut self.t, &mut self.u, &mut self.v)
    }
}

// ---------------------------------------------------------------------------
// Stencils

/// Difference scheme. `Degraded` swaps the interior stencils for second-order
/// ones; it exists only so the validation battery can prove it notices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Scheme {
    #[default]
    Standard,
    Degraded,
}

type Weights = &'static [(isize, f64)];

const D1_CENTRAL: Weights = &[(-2, 1.0 / 12.0), (-1, -8.0 / 12.0), (1, 8.0 / 12.0), (2, -1.0 / 12.0)];
const D1_LEFT0: Weights =
    &[(0, -25.0 / 12.0), (1, 48.0 / 12.0), (2, -36.0 / 12.0), (3, 16.0 / 12.0), (4, -3.0 / 12.0)];
const D1_LEFT1: Weights =
    &[(-1, -3.0 / 12.0), (0, -10.0 / 12.0), (1, 18.0 / 12.0), (2, -6.0 / 12.0), (3, 1.0 / 12.0)];
const D1_RIGHT1: Weights =
    &[(1, 3.0 / 12.0), (0, 10.0 / 12.0), (-1, -18.0 / 12.0), (-2, 6.0 / 12.0), (-3, -1.0 / 12.0)];
const D1_RIGHT0: Weights =
    &[(0, 25.0 / 12.0), (-1, -48.0 / 12.0), (-2, 36.0 / 12.0), (-3, -16.0 / 12.0), (-4, 3.0 / 12.0)];

const D2_CENTRAL: Weights =
    &[(-2, -1.0 / 12.0), (-1, 16.0 / 12.0), (0, -30.0 / 12.0), (1, 16.0 / 12.0), (2, -1.0 / 12.0)];
const D2_LEFT0: Weights = &[
    (0, 45.0 / 12.0),
    (1, -154.0 / 12.0),
    (2, 214.0 / 12.0),
    (3, -156.0 / 12.0),
    (4, 61.0 / 12.0),
    (5, -10.0 / 12.0),
];
const D2_LEFT1: Weights =
    &[(-1, 10.0 / 12.0), (0, -15.0 / 12.0), (1, -4.0 / 12.0), (2, 14.0 / 12.0), (3, -6.0 / 12.0), (4, 1.0 / 12.0)];
const D2_RIGHT1: Weights =
    &[(1, 10.0 / 12.0), (0, -15.0 / 12.0), (-1, -4.0 / 12.0), (-2, 14.0 / 12.0), (-3, -6.0 / 12.0), (-4, 1.0 / 12.0)];
const D2_RIGHT0: Weights = &[
    (0, 45.0 / 12.0),
    (-1, -154.0 / 12.0),
    (-2, 214.0 / 12.0),
    (-3, -156.0 / 12.0),
    (-4, 61.0 / 12.0),
    (-5, -10.0 / 12.0),
];

const D1_DEGRADED: Weights = &[(-1, -0.5), (1, 0.5)];
const D2_DEGRADED: Weights = &[(-1, 1.0), (0, -2.0), (1, 1.0)];

fn d1_weights(p: usize, n: usize, scheme: Scheme) -> Weights {
    match p {
        0 => D1_LEFT0,
        1 => D1_LEFT1,
        _ if p == n - 1 => D1_RIGHT0,
        _ if p == n - 2 => D1_RIGHT1,
        _ => match scheme {
            Scheme::Standard => D1_CENTRAL,
            Scheme::Degraded => D1_DEGRADED,
        },
    }
}

fn d2_weights(p: usize, n: usize, scheme: Scheme) -> Weights {
    match p {
        0 => D2_LEFT0,
        1 => D2_LEFT1,
        _ if p == n - 1 => D2_RIGHT0,
        _ if p == n - 2 => D2_RIGHT1,
        _ => match scheme {
            Scheme::Standard => D2_CENTRAL,
            Scheme::Degraded => D2_DEGRADED,
        },
    }
}

fn axis_stride(grid: &GridSpec, axis: usize) -> usize {
    match axis {
        0 => 1,
        1 => grid.dims[0],
        _ => grid.dims[0] * grid.dims[1],
    }
}

#[derive(Clone, Copy)]
pub(crate) enum Order {
    First,
    Second,
}

/// Writes (or adds, when `accumulate`) `scale · D f` along `axis` for the
/// z-plane `k` into `out` (length `nx * ny`).
pub(crate) fn diff_plane(
    src: &[f64],
    grid: &GridSpec,
    axis: usize,
    order: Order,
    scheme: Scheme,
    k: usize,
    scale: f64,
    accumulate: bool,
    out: &mut [f64],
) {
    let [nx, ny, nz] = grid.dims;
    let plane = nx * ny;
    let base = k * plane;
    let weights = |p: usize, n: usize| match order {
        Order::First => d1_weights(p, n, scheme),
        Order::Second => d2_weights(p, n, scheme),
    };
    if !accumulate {
        out.iter_mut().for_each(|x| *x = 0.0);
    }
    match axis {
        0 => {
            for j in 0..ny {
                let row = &src[base + j * nx..base + (j + 1) * nx];
                let o = &mut out[j * nx..(j + 1) * nx];
                let fast = scheme == Scheme::Standard;
                for i in [0, 1, nx - 2, nx - 1] {
                    let mut acc = 0.0;
                    for &(off, c) in weights(i, nx) {
                        acc += c * row[(i as isize + off) as usize];
                    }
                    o[i] += scale * acc;
                }
                if fast {
                    match order {
                        Order::First => {
                            let s = scale / 12.0;
                            for i in 2..nx - 2 {
                                o[i] += s * (row[i - 2] - 8.0 * row[i - 1] + 8.0 * row[i + 1] - row[i + 2]);
                            }
                        }
                        Order::Second => {
                            let s = scale / 12.0;
                            for i in 2..nx - 2 {
                                o[i] += s
                                    * (-row[i - 2] + 16.0 * row[i - 1] - 30.0 * row[i] + 16.0 * row[i + 1]
                                        - row[i + 2]);
                            }
                        }
                    }
                } else {
                    for i in 2..nx - 2 {
                        let mut acc = 0.0;
                        for &(off, c) in weights(i, nx) {
                            acc += c * row[(i as isize + off) as usize];
                        }
                        o[i] += scale * acc;
                    }
                }
            }
        }
        1 => {
            for j in 0..ny {
                let o = &mut out[j * nx..(j + 1) * nx];
                for &(off, c) in weights(j, ny) {
                    let jj = (j as isize + off) as usize;
                    let row = &src[base + jj * nx..base + (jj + 1) * nx];
                    let cs = c * scale;
                    for (oi, &r) in o.iter_mut().zip(row) {
                        *oi += cs * r;
                    }
                }
            }
        }
        _ => {
            for &(off, c) in weights(k, nz) {
                let kk = (k as isize + off) as usize;
                let src_plane = &src[kk * plane..(kk + 1) * plane];
                let cs = c * scale;
                for (oi, &r) in out.iter_mut().zip(src_plane) {
                    *oi += cs * r;
                }
            }
        }
    }
}

/// First derivative `∂_a f`.
pub fn derivative(f: &ScalarField, axis: Axis) -> ScalarField {
    derivative_with(f, axis, Scheme::Standard)
}

pub fn derivative_with(f: &ScalarField, axis: Axis, scheme: Scheme) -> ScalarField {
    let grid = f.grid;
    let mut out = vec![0.0; grid.len()];
    let inv_h = 1.0 / grid.spacing;
    out.par_chunks_mut(grid.plane_len()).enumerate().for_each(|(k, o)| {
        diff_plane(&f.values, &grid, axis.index(), Order::First, scheme, k, inv_h, false, o);
    });
    ScalarField { grid, values: out }
}

/// `(∂_1 f, ∂_2 f, ∂_3 f)`; exact on polynomials of degree ≤ 4.
pub fn gradient(f: &ScalarField) -> [ScalarField; 3] {
    gradient_with(f, Scheme::Standard)
}

pub fn gradient_with(f: &ScalarField, scheme: Scheme) -> [ScalarField; 3] {
    Axis::ALL.map(|a| derivative_with(f, a, scheme))
}

/// Second derivative `∂_a² f`.
pub fn second_derivative(f: &ScalarField, axis: Axis) -> ScalarField {
    let grid = f.grid;
    let mut out = vec![0.0; grid.len()];
    let s = 1.0 / (grid.spacing * grid.spacing);
    out.par_chunks_mut(grid.plane_len()).enumerate().for_each(|(k, o)| {
        diff_plane(&f.values, &grid, axis.index(), Order::Second, Scheme::Standard, k, s, false, o);
    });
    ScalarField { grid, values: out }
}

/// `Δf = Σ_a ∂_a² f`; exact on polynomials of degree ≤ 5.
pub fn laplacian(f: &ScalarField) -> ScalarField {
    laplacian_with(f, Scheme::Standard)
}

pub fn laplacian_with(f: &ScalarField, scheme: Scheme) -> ScalarField {
    let grid = f.grid;
    let mut out = vec![0.0; grid.len()];
    let s = 1.0 / (grid.spacing * grid.spacing);
    out.par_chunks_mut(grid.plane_len()).enumerate().for_each(|(k, o)| {
        for axis in 0..3 {
            diff_plane(&f.values, &grid, axis, Order::Second, scheme, k, s, axis > 0, o);
        }
    });
    ScalarField { grid, values: out }
}

/// `L_a u = x_a ∂_t u + t ∂_a u`, with `∂_t u` taken from the slice's `v`.
pub fn lorentz_apply(axis: Axis, slice: &StateSlice) -> ScalarField {
    let du = derivative(&slice.u, axis);
    let t = slice.t;
    let grid = *slice.grid();
    let a = axis.index();
    let values = slice
        .v
        .values
        .par_iter()
        .zip(du.values.par_iter())
        .enumerate()
        .map(|(idx, (&v, &d))| grid.point_of(idx)[a] * v + t * d)
        .collect();
    ScalarField { grid, values }
}

/// `Ω_ab f = x_a ∂_b f − x_b ∂_a f` for `a < b`.
pub fn rotation_apply(a: Axis, b: Axis, f: &ScalarField) -> Result<ScalarField> {
    if a.index() >= b.index() {
        return Err(Error::Domain(format!("rotation needs a < b, got ({}, {})", a.number(), b.number())));
    }
    let da = derivative(f, a);
    let db = derivative(f, b);
    let grid = f.grid;
    let values = da
        .values
        .par_iter()
        .zip(db.values.par_iter())
        .enumerate()
        .map(|(idx, (&fa, &fb))| {
            let x = grid.point_of(idx);
            x[a.index()] * fb - x[b.index()] * fa
        })
        .collect();
    Ok(ScalarField { grid, values })
}

fn require_positive_time(slice: &StateSlice) -> Result<()> {
    if !(slice.t > 0.0) {
        return Err(Error::Domain(format!("hyperboloidal derivatives need t > 0, got {}", slice.t)));
    }
    Ok(())
}

/// `∂̲_a u = (x_a / t) ∂_t u + ∂_a u`.
pub fn underbar_apply(axis: Axis, slice: &StateSlice) -> Result<ScalarField> {
    require_positive_time(slice)?;
    let du = derivative(&slice.u, axis);
    let inv_t = 1.0 / slice.t;
    let grid = *slice.grid();
    let a = axis.index();
    let values = slice
        .v
        .values
        .par_iter()
        .zip(du.values.par_iter())
        .enumerate()
        .map(|(idx, (&v, &d))| grid.point_of(idx)[a] * inv_t * v + d)
        .collect();
    Ok(ScalarField { grid, values })
}

/// `∂̲_⊥ u = ∂_t u + Σ_a (x_a / t) ∂_a u`.
pub fn underbar_perp(slice: &StateSlice) -> Result<ScalarField> {
    require_positive_time(slice)?;
    let g = gradient(&slice.u);
    let inv_t = 1.0 / slice.t;
    let grid = *slice.grid();
    let values = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let x = grid.point_of(idx);
            slice.v.values[idx] + inv_t * (0..3).map(|a| x[a] * g[a].values[idx]).sum::<f64>()
        })
        .collect();
    Ok(ScalarField { grid, values })
}

/// A closed-form space-time function together with its time derivative.
pub trait SpaceTimeFunction: Sync {
    fn value(&self, t: f64, x: [f64; 3]) -> f64;
    fn time_derivative(&self, t: f64, x: [f64; 3]) -> f64;
}

/// Max-norm over interior nodes of the discrete commutator defects
/// `([∂_0, L_a] − ∂_a) φ` and `([∂_b, L_a] − δ_ab ∂_0) φ`, `b = 1, 2, 3`.
///
/// Spatial derivatives are the grid stencils. `∂_0` of a sampled field is the
/// five-point central difference in time with step equal to the grid spacing,
/// while `∂_0 φ` itself comes from the supplied analytic time derivative.
/// Interior means at least two nodes away from every boundary.
pub fn commutator_residual(axis: Axis, test: &dyn SpaceTimeFunction, grid: &GridSpec, t: f64) -> f64 {
    commutator_residual_with(axis, test, grid, t, Scheme::Standard)
}

pub fn commutator_residual_with(
    axis: Axis,
    test: &dyn SpaceTimeFunction,
    grid: &GridSpec,
    t: f64,
    scheme: Scheme,
) -> f64 {
    let k = grid.spacing;
    let a = axis.index();
    let offsets = [-2.0, -1.0, 1.0, 2.0];
    let dt_weights = [1.0 / 12.0, -8.0 / 12.0, 8.0 / 12.0, -1.0 / 12.0];
    let sample = |tt: f64| ScalarField::from_fn(*grid, |x| test.value(tt, x));
    let sample_dt = |tt: f64| ScalarField::from_fn(*grid, |x| test.time_derivative(tt, x));

    // ψ_m = ∂_a φ at t + m k.
    let psi: Vec<ScalarField> = offsets.iter().map(|m| derivative_with(&sample(t + m * k), axis, scheme)).collect();
    let psi0 = derivative_with(&sample(t), axis, scheme);
    let phi_t: Vec<ScalarField> = offsets.iter().map(|m| sample_dt(t + m * k)).collect();
    let phi_t0 = sample_dt(t);
    let grad_phi_t0 = Axis::ALL.map(|b| derivative_with(&phi_t0, b, scheme));

    // First identity: D_t(x_a φ_t + t' ∂_a φ) − (x_a D_t φ_t + t ∂_a φ_t) − ∂_a φ.
    let mut first = vec![0.0; grid.len()];
    for (idx, out) in first.iter_mut().enumerate() {
        let x = grid.point_of(idx)[a];
        let mut dt_l = 0.0;
        let mut dt_phit = 0.0;
        for (n, (&m, &w)) in offsets.iter().zip(&dt_weights).enumerate() {
            let tm = t + m * k;
            dt_l += w * (x * phi_t[n].values[idx] + tm * psi[n].values[idx]);
            dt_phit += w * phi_t[n].values[idx];
        }
        dt_l /= k;
        dt_phit /= k;
        *out = dt_l - (x * dt_phit + t * grad_phi_t0[a].values[idx]) - psi0.values[idx];
    }

    // Second identity: ∂_b(x_a φ_t + t ∂_a φ) − (x_a ∂_b φ_t + t ∂_a ∂_b φ) − δ_ab φ_t.
    let x_a_phit = phi_t0.weighted(|x| x[a]);
    let mut worst = 0.0_f64;
    let interior = |idx: usize| {
        let [i, j, kk] = grid.unravel(idx);
        grid.boundary_depth(i, j, kk) >= 2
    };
    for (idx, r) in first.iter().enumerate() {
        if interior(idx) {
            worst = worst.max(r.abs());
        }
    }
    for b in Axis::ALL {
        let lhs1 = derivative_with(&x_a_phit, b, scheme);
        let lhs2 = derivative_with(&psi0, b, scheme);
        let db_phit = derivative_with(&phi_t0, b, scheme);
        let db_psi = derivative_with(&psi0, b, scheme);
        for idx in 0..grid.len() {
            if !interior(idx) {
                continue;
            }
            let x = grid.point_of(idx)[a];
            let kron = if b == axis { phi_t0.values[idx] } else { 0.0 };
            let r = lhs1.values[idx] + t * lhs2.values[idx] - (x * db_phit.values[idx] + t * db_psi.values[idx]) - kron;
            worst = worst.max(r.abs());
        }
    }
    worst
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn operators_are_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, kx in 0.2f64..2.0, ky in 0.2f64..2.0) {
            let g = GridSpec::cube(1.0, 0.25).unwrap();
            let f = ScalarField::from_fn(g, |x| (kx * x[0]).sin() * (ky * x[1]).cos() + x[2]);
            let h = ScalarField::from_fn(g, |x| (x[0] * x[1]).exp() - x[2] * x[2]);
            let comb = f.combine(a, &h, b).unwrap();
            let scale = 1.0 + a.abs() + b.abs();
            let lhs = laplacian(&comb);
            let rhs = laplacian(&f).combine(a, &laplacian(&h), b).unwrap();
            let lf = lhs.combine(1.0, &rhs, -1.0).unwrap().sup_abs() / (1.0 + rhs.sup_abs());
            prop_assert!(lf < 1e-12 * scale);
            for axis in Axis::ALL {
                let lhs = derivative(&comb, axis);
                let rhs = derivative(&f, axis).combine(a, &derivative(&h, axis), b).unwrap();
                let d = lhs.combine(1.0, &rhs, -1.0).unwrap().sup_abs() / (1.0 + rhs.sup_abs());
                prop_assert!(d < 1e-12 * scale);
            }
            let r1 = rotation_apply(Axis::X1, Axis::X3, &comb).unwrap();
            let r2 = rotation_apply(Axis::X1, Axis::X3, &f).unwrap()
                .combine(a, &rotation_apply(Axis::X1, Axis::X3, &h).unwrap(), b).unwrap();
            prop_assert!(r1.combine(1.0, &r2, -1.0).unwrap().sup_abs() / (1.0 + r2.sup_abs()) < 1e-12 * scale);
        }
    }
}
