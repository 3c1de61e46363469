//! Diagnostics on the hyperboloids `t² − |x|² = s²` inside the cone
//! `K = {t ≥ 2, t ≥ |x| + 1}` of the scaled problem.
//!
//! Every integral uses the `x`-parametrization: a hyperboloid is sampled at
//! the grid nodes `x` inside the mask, each at its own time
//! `t(x) = √(s² + |x|²)`, and summed with weight `h³`.
//!
//! Two samplers share the masking and the 4-point Lagrange interpolation in
//! time:
//!
//! - [`SliceBuffer`] keeps whole slices and supports the derivative ladder.
//! - [`HyperboloidMonitor`] streams a run, accumulating each node's stencil
//!   as slices go by, so its memory is one accumulator per masked node.

use std::collections::VecDeque;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{derivative, Axis, GridSpec, ScalarField, StateSlice};
use crate::integrator::SliceObserver;
use crate::nonlinearity::{CubicTensor, Slots};

/// Start of the foliation.
pub const S_STAR: f64 = 1.732_050_807_568_877_2;
/// First hyperboloid lying entirely above the initial slice `t = 2`.
pub const S_ZERO: f64 = 2.0;
pub const T_ZERO: f64 = 2.0;
pub const DEFAULT_DS: f64 = 0.1;
pub const MIN_BUFFER: usize = 8;

pub fn in_cone(t: f64, x: [f64; 3]) -> bool {
    t >= T_ZERO && t >= norm(x) + 1.0
}

fn norm(x: [f64; 3]) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

/// Time of the hyperboloid `s` above `x`.
pub fn hyperboloid_time(s: f64, x: [f64; 3]) -> f64 {
    (s * s + x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

fn check_s(s: f64) -> Result<()> {
    if !(s >= S_STAR - 1e-12) || !s.is_finite() {
        return Err(Error::Domain(format!("hyperboloid parameter s = {s} is below √3")));
    }
    Ok(())
}

/// Grid indices of `ϰ_s ∩ K`, in index order.
pub fn mask(grid: &GridSpec, s: f64) -> Result<Vec<usize>> {
    check_s(s)?;
    let r = 0.5 * (s * s - 1.0);
    Ok((0..grid.len())
        .into_par_iter()
        .filter(|&idx| {
            let x = grid.point_of(idx);
            norm(x) <= r && hyperboloid_time(s, x) >= T_ZERO
        })
        .collect())
}

/// Earliest time on `ϰ_s ∩ K`.
fn earliest_time(s: f64) -> f64 {
    s.max(T_ZERO)
}

/// Cubic Lagrange weights on nodes 0..3 at position `th`.
fn lagrange4(th: f64) -> [f64; 4] {
    let (a, b, c, d) = (th, th - 1.0, th - 2.0, th - 3.0);
    [-b * c * d / 6.0, a * c * d / 2.0, -a * b * d / 2.0, a * b * c / 6.0]
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HyperPoint {
    pub x: [f64; 3],
    pub t: f64,
    pub u: f64,
    pub v: f64,
    pub grad: [f64; 3],
}

impl HyperPoint {
    fn slots(&self) -> Slots {
        Slots { u: self.u, v: self.v, grad: self.grad }
    }
}

/// `v² + |∇u|² + 2 Σ (x_a/t) v ∂_a u + δ²u²`.
pub fn flat_integrand(p: &HyperPoint, delta: f64) -> f64 {
    let mut acc = p.v * p.v + delta * delta * p.u * p.u;
    for a in 0..3 {
        acc += p.grad[a] * p.grad[a] + 2.0 * (p.x[a] / p.t) * p.v * p.grad[a];
    }
    acc
}

/// `(s/t · v)² + Σ (∂̲_a u)² + δ²u²`.
pub fn hyper_integrand(p: &HyperPoint, s: f64, delta: f64) -> f64 {
    let w = s / p.t * p.v;
    let mut acc = w * w + delta * delta * p.u * p.u;
    for a in 0..3 {
        let d = p.x[a] / p.t * p.v + p.grad[a];
        acc += d * d;
    }
    acc
}

#[derive(Clone, Debug, PartialEq)]
pub struct HyperboloidSample {
    pub s: f64,
    pub delta: f64,
    pub cell_volume: f64,
    pub points: Vec<HyperPoint>,
    pub e_flat: f64,
    pub e_hyper: f64,
}

impl HyperboloidSample {
    pub fn new(s: f64, delta: f64, cell_volume: f64, points: Vec<HyperPoint>) -> Self {
        let mut out = Self { s, delta, cell_volume, points, e_flat: 0.0, e_hyper: 0.0 };
        out.e_flat = energy_flat_form(&out, delta);
        out.e_hyper = energy_hyper_form(&out, delta);
        out
    }

    /// Relative gap between the two energy forms.
    pub fn form_gap(&self) -> f64 {
        (self.e_flat - self.e_hyper).abs() / self.e_flat.max(1e-30)
    }

    pub fn sup_abs_u(&self) -> f64 {
        self.points.iter().fold(0.0, |m, p| m.max(p.u.abs()))
    }
}

pub fn energy_flat_form(sample: &HyperboloidSample, delta: f64) -> f64 {
    sample.cell_volume * sample.points.iter().map(|p| flat_integrand(p, delta)).sum::<f64>()
}

pub fn energy_hyper_form(sample: &HyperboloidSample, delta: f64) -> f64 {
    sample.cell_volume * sample.points.iter().map(|p| hyper_integrand(p, sample.s, delta)).sum::<f64>()
}

/// `∫_{ϰ_s} 2 (s/t) ∂_t u F dx`.
pub fn flux_integral(sample: &HyperboloidSample, tensor: &CubicTensor) -> f64 {
    if tensor.is_zero() {
        return 0.0;
    }
    sample.cell_volume
        * sample.points.iter().map(|p| 2.0 * sample.s / p.t * p.v * tensor.eval_point(&p.slots())).sum::<f64>()
}

/// Ring of the most recent slices at uniform spacing.
#[derive(Clone, Debug)]
pub struct SliceBuffer {
    capacity: usize,
    slices: VecDeque<StateSlice>,
    dt: Option<f64>,
}

impl SliceBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity < MIN_BUFFER {
            return Err(Error::Config(format!("slice buffer needs at least {MIN_BUFFER} slots, got {capacity}")));
        }
        Ok(Self { capacity, slices: VecDeque::with_capacity(capacity), dt: None })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn dt(&self) -> Option<f64> {
        self.dt
    }

    pub fn slice(&self, i: usize) -> &StateSlice {
        &self.slices[i]
    }

    pub fn grid(&self) -> Option<&GridSpec> {
        self.slices.front().map(|s| s.grid())
    }

    pub fn push(&mut self, slice: StateSlice) -> Result<()> {
        if let Some(last) = self.slices.back() {
            if last.grid() != slice.grid() {
                return Err(Error::Config("slice grid differs from the buffer's grid".into()));
            }
            let step = slice.t() - last.t();
            if !(step > 0.0) {
                return Err(Error::Config(format!("slice times must increase: {} after {}", slice.t(), last.t())));
            }
            match self.dt {
                None => self.dt = Some(step),
                Some(dt) if (step - dt).abs() > 1e-9 * dt.max(1.0) => {
                    return Err(Error::Config(format!("slice spacing {step} differs from buffer spacing {dt}")));
                }
                _ => {}
            }
        }
        if self.slices.len() == self.capacity {
            self.slices.pop_front();
        }
        self.slices.push_back(slice);
        Ok(())
    }

    /// Times at which a value can be interpolated when `margin` extra
    /// slices are needed on each side of the 4-point stencil.
    pub fn interpolable(&self, margin: usize) -> Option<(f64, f64)> {
        let dt = self.dt?;
        let n = self.slices.len();
        if n < 4 + 2 * margin {
            return None;
        }
        let t0 = self.slices[0].t();
        Some((t0 + (margin + 1) as f64 * dt, t0 + (n - 2 - margin) as f64 * dt))
    }

    fn stencil(&self, t: f64, margin: usize) -> Option<(usize, [f64; 4])> {
        let dt = self.dt?;
        let n = self.slices.len();
        if n < 4 + 2 * margin {
            return None;
        }
        let hi = n - 1 - margin;
        let rel = (t - self.slices[0].t()) / dt;
        let fl = rel.floor();
        if !fl.is_finite() || fl < 1.0 {
            return None;
        }
        let mut i0 = fl as usize - 1;
        if i0 + 3 > hi && rel - (hi - 3) as f64 <= 2.0 + 1e-9 {
            i0 = hi.checked_sub(3)?;
        }
        if i0 < margin || i0 + 3 > hi {
            return None;
        }
        Some((i0, lagrange4(rel - i0 as f64)))
    }
}

/// Interpolates groups of five fields (`w, ∂_t w, ∇w`) onto `ϰ_s`.
///
/// `fields(i)` is called once per needed buffer slot, in increasing order,
/// and returns one 5-tuple per group.
fn interpolate_groups<F>(
    buffer: &SliceBuffer,
    s: f64,
    margin: usize,
    groups: usize,
    mut fields: F,
) -> Result<(Vec<usize>, Vec<f64>, Vec<Vec<[f64; 5]>>)>
where
    F: FnMut(usize) -> Result<Vec<[ScalarField; 5]>>,
{
    let grid = *buffer.grid().ok_or_else(|| Error::Insufficient("empty slice buffer".into()))?;
    let idx = mask(&grid, s)?;
    let times: Vec<f64> = idx.iter().map(|&i| hyperboloid_time(s, grid.point_of(i))).collect();
    let mut stencils = Vec::with_capacity(idx.len());
    for &t in &times {
        match buffer.stencil(t, margin) {
            Some(st) => stencils.push(st),
            None => {
                let (lo, hi) = buffer.interpolable(margin).unwrap_or((f64::NAN, f64::NAN));
                let needed = times.iter().fold(0.0f64, |m, &x| m.max(x));
                let available = if t < lo { lo } else { hi };
                return Err(Error::SpanViolation { s, available, needed: if t < lo { t } else { needed } });
            }
        }
    }
    let mut acc = vec![vec![[0.0; 5]; idx.len()]; groups];
    let Some(first) = stencils.iter().map(|s| s.0).min() else {
        return Ok((idx, times, acc));
    };
    let last = stencils.iter().map(|s| s.0 + 3).max().unwrap();
    for slot in first..=last {
        let fs = fields(slot)?;
        for (g, f) in fs.iter().enumerate() {
            acc[g].par_iter_mut().zip(idx.par_iter()).zip(stencils.par_iter()).for_each(|((a, &i), &(i0, w))| {
                if slot >= i0 && slot <= i0 + 3 {
                    let c = w[slot - i0];
                    for q in 0..5 {
                        a[q] += c * f[q].values()[i];
                    }
                }
            });
        }
    }
    Ok((idx, times, acc))
}

fn to_points(grid: &GridSpec, idx: &[usize], times: &[f64], acc: &[[f64; 5]]) -> Vec<HyperPoint> {
    idx.iter()
        .zip(times)
        .zip(acc)
        .map(|((&i, &t), a)| HyperPoint { x: grid.point_of(i), t, u: a[0], v: a[1], grad: [a[2], a[3], a[4]] })
        .collect()
}

fn slice_fields(slice: &StateSlice) -> [ScalarField; 5] {
    let u = slice.u();
    [u.clone(), slice.v().clone(), derivative(u, Axis::X1), derivative(u, Axis::X2), derivative(u, Axis::X3)]
}

pub fn sample_hyperboloid(buffer: &SliceBuffer, s: f64, delta: f64) -> Result<HyperboloidSample> {
    let (idx, times, acc) = interpolate_groups(buffer, s, 0, 1, |i| Ok(vec![slice_fields(buffer.slice(i))]))?;
    let grid = *buffer.grid().unwrap();
    Ok(HyperboloidSample::new(s, delta, grid.cell_volume(), to_points(&grid, &idx, &times, &acc[0])))
}

/// One operator word `∂^I L^J`: `partials` holds `I` as a nondecreasing list
/// over 0..=3 and `boosts` holds `J` over 1..=3, applied right to left.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Word {
    pub partials: Vec<u8>,
    pub boosts: Vec<u8>,
}

impl Word {
    pub fn order(&self) -> usize {
        self.partials.len() + self.boosts.len()
    }

    fn label(&self) -> String {
        let mut s = String::new();
        for p in &self.partials {
            s.push_str(&format!("d{p}"));
        }
        for b in &self.boosts {
            s.push_str(&format!("L{b}"));
        }
        if s.is_empty() {
            s.push('u');
        }
        s
    }
}

impl std::fmt::Display for Word {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

/// All words with `|I| + |J| ≤ max_order`, by order, then `I`, then `J`.
pub fn ladder_words(max_order: usize) -> Vec<Word> {
    fn multisets(len: usize, from: u8, prefix: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if prefix.len() == len {
            out.push(prefix.clone());
            return;
        }
        for p in from..=3 {
            prefix.push(p);
            multisets(len, p, prefix, out);
            prefix.pop();
        }
    }
    fn sequences(len: usize, prefix: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if prefix.len() == len {
            out.push(prefix.clone());
            return;
        }
        for b in 1..=3 {
            prefix.push(b);
            sequences(len, prefix, out);
            prefix.pop();
        }
    }
    let mut words = Vec::new();
    for order in 0..=max_order {
        for ni in (0..=order).rev() {
            let mut is = Vec::new();
            multisets(ni, 0, &mut Vec::new(), &mut is);
            let mut js = Vec::new();
            sequences(order - ni, &mut Vec::new(), &mut js);
            for i in &is {
                for j in &js {
                    words.push(Word { partials: i.clone(), boosts: j.clone() });
                }
            }
        }
    }
    words
}

/// Time jet `[w, ∂_t w, ∂_t² w, …]` of a field at one slice time.
struct Jet {
    t: f64,
    parts: Vec<ScalarField>,
}

impl Jet {
    fn partial(&self, p: u8) -> Jet {
        let parts = if p == 0 {
            self.parts[1..].to_vec()
        } else {
            let axis = Axis::from_number(p as usize).unwrap();
            self.parts.iter().map(|f| derivative(f, axis)).collect()
        };
        Jet { t: self.t, parts }
    }

    /// `(L_a w)^{(k)} = x_a w^{(k+1)} + t ∂_a w^{(k)} + k ∂_a w^{(k−1)}`.
    fn boost(&self, b: u8) -> Jet {
        let axis = Axis::from_number(b as usize).unwrap();
        let a = axis.index();
        let d: Vec<ScalarField> = self.parts.iter().map(|f| derivative(f, axis)).collect();
        let grid = *self.parts[0].grid();
        let t = self.t;
        let parts = (0..self.parts.len() - 1)
            .map(|k| {
                let next = self.parts[k + 1].values();
                let dk = d[k].values();
                let prev = (k > 0).then(|| d[k - 1].values());
                let values = (0..grid.len())
                    .into_par_iter()
                    .map(|i| {
                        let mut x = grid.point_of(i)[a] * next[i] + t * dk[i];
                        if let Some(p) = prev {
                            x += k as f64 * p[i];
                        }
                        x
                    })
                    .collect();
                ScalarField::from_values(grid, values).unwrap()
            })
            .collect();
        Jet { t, parts }
    }

    fn apply(&self, word: &Word) -> Jet {
        let mut j = Jet { t: self.t, parts: self.parts.clone() };
        for &b in word.boosts.iter().rev() {
            j = j.boost(b);
        }
        for &p in &word.partials {
            j = j.partial(p);
        }
        j
    }

    fn energy_fields(&self) -> [ScalarField; 5] {
        let w = &self.parts[0];
        [w.clone(), self.parts[1].clone(), derivative(w, Axis::X1), derivative(w, Axis::X2), derivative(w, Axis::X3)]
    }
}

/// Jet of `u` of length `len` at buffer slot `i`; entries past `v` come
/// from five-point differences of `v` in time.
fn jet_at(buffer: &SliceBuffer, i: usize, len: usize) -> Result<Jet> {
    let s = buffer.slice(i);
    let mut parts = vec![s.u().clone(), s.v().clone()];
    if len > 2 {
        let dt = buffer.dt().ok_or_else(|| Error::Insufficient("buffer has a single slice".into()))?;
        if i < 2 || i + 2 >= buffer.len() {
            return Err(Error::Insufficient("time jet needs two slices on each side".into()));
        }
        let v: Vec<&[f64]> = (i - 2..=i + 2).map(|k| buffer.slice(k).v().values()).collect();
        let grid = *s.grid();
        let n = grid.len();
        let d1 = (0..n).into_par_iter().map(|q| (v[0][q] - 8.0 * v[1][q] + 8.0 * v[3][q] - v[4][q]) / (12.0 * dt)).collect();
        parts.push(ScalarField::from_values(grid, d1)?);
        if len > 3 {
            let d2 = (0..n)
                .into_par_iter()
                .map(|q| (-v[0][q] + 16.0 * v[1][q] - 30.0 * v[2][q] + 16.0 * v[3][q] - v[4][q]) / (12.0 * dt * dt))
                .collect();
            parts.push(ScalarField::from_values(grid, d2)?);
        }
    }
    parts.truncate(len.max(2));
    Ok(Jet { t: s.t(), parts })
}

/// Samples every word on `ϰ_s`.
fn sample_words(buffer: &SliceBuffer, s: f64, delta: f64, words: &[Word]) -> Result<Vec<HyperboloidSample>> {
    let jet_len = words.iter().map(|w| w.order() + 2).max().unwrap_or(2);
    let margin = if jet_len > 2 { 2 } else { 0 };
    let grid = *buffer.grid().ok_or_else(|| Error::Insufficient("empty slice buffer".into()))?;
    let (idx, times, acc) = interpolate_groups(buffer, s, margin, words.len(), |i| {
        let jet = jet_at(buffer, i, jet_len)?;
        Ok(words.iter().map(|w| jet.apply(w).energy_fields()).collect())
    })?;
    Ok(acc
        .iter()
        .map(|a| HyperboloidSample::new(s, delta, grid.cell_volume(), to_points(&grid, &idx, &times, a)))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderEntry {
    pub word: Word,
    pub energy_sqrt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyLadder {
    pub s: f64,
    pub entries: Vec<LadderEntry>,
    /// `M_k` for `k = 0..=max_order`.
    pub partial_sums: Vec<f64>,
}

pub fn energy_ladder(buffer: &SliceBuffer, s: f64, delta: f64, max_order: usize) -> Result<EnergyLadder> {
    if max_order > 2 {
        return Err(Error::Config(format!("ladder order {max_order} exceeds 2")));
    }
    let words = ladder_words(max_order);
    let samples = sample_words(buffer, s, delta, &words)?;
    let entries: Vec<LadderEntry> = words
        .into_iter()
        .zip(&samples)
        .map(|(word, smp)| LadderEntry { word, energy_sqrt: smp.e_flat.max(0.0).sqrt() })
        .collect();
    let partial_sums =
        (0..=max_order).map(|k| entries.iter().filter(|e| e.word.order() <= k).map(|e| e.energy_sqrt).sum()).collect();
    Ok(EnergyLadder { s, entries, partial_sums })
}

fn l2(sample: &HyperboloidSample) -> f64 {
    (sample.cell_volume * sample.points.iter().map(|p| p.u * p.u).sum::<f64>()).sqrt()
}

/// `sup t^{3/2}|u|` over `ϰ_s` divided by `Σ_{|I| ≤ 2} ‖L^I u‖`.
pub fn sobolev_embedding_check(buffer: &SliceBuffer, s: f64) -> Result<f64> {
    let words: Vec<Word> = ladder_words(2).into_iter().filter(|w| w.partials.is_empty()).collect();
    let samples = sample_words(buffer, s, 0.0, &words)?;
    let num = samples[0].points.iter().fold(0.0f64, |m, p| m.max(p.t.powf(1.5) * p.u.abs()));
    let den: f64 = samples.iter().map(l2).sum();
    ratio(num, den, "Sobolev embedding")
}

fn ratio(num: f64, den: f64, what: &str) -> Result<f64> {
    if den > 0.0 {
        Ok(num / den)
    } else if num == 0.0 {
        Ok(0.0)
    } else {
        Err(Error::Inconsistent(format!("{what}: zero right-hand side with left-hand side {num}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayRatios {
    /// `[Σ_α sup (s/t)|∂_α w| + δ sup|w|] / (s^{−3/2} M₂)`, max over words.
    pub weighted: f64,
    /// `[Σ_α sup (t/s)|∂_α w|] / (s^{−1} M₂)`, max over words.
    pub boosted: f64,
}

/// Pointwise decay ratios for words of order `≤ order`, with the ladder
/// truncated at `M₂` on the right.
pub fn pointwise_decay_check(buffer: &SliceBuffer, s: f64, delta: f64, order: usize) -> Result<DecayRatios> {
    if order > 1 {
        return Err(Error::Config(format!("pointwise decay order {order} exceeds 1")));
    }
    let ladder_words = ladder_words(2);
    let samples = sample_words(buffer, s, delta, &ladder_words)?;
    let m2: f64 = samples.iter().map(|x| x.e_flat.max(0.0).sqrt()).sum();
    let mut weighted = 0.0f64;
    let mut boosted = 0.0f64;
    for (w, smp) in ladder_words.iter().zip(&samples) {
        if w.order() > order {
            continue;
        }
        let mut sup = [0.0f64; 4];
        let mut sup_t = [0.0f64; 4];
        let mut sup_u = 0.0f64;
        for p in &smp.points {
            let d = [p.v, p.grad[0], p.grad[1], p.grad[2]];
            for a in 0..4 {
                sup[a] = sup[a].max(s / p.t * d[a].abs());
                sup_t[a] = sup_t[a].max(p.t / s * d[a].abs());
            }
            sup_u = sup_u.max(p.u.abs());
        }
        let lhs = sup.iter().sum::<f64>() + delta * sup_u;
        weighted = weighted.max(ratio(lhs, s.powf(-1.5) * m2, "weighted decay")?);
        boosted = boosted.max(ratio(sup_t.iter().sum(), m2 / s, "boosted decay")?);
    }
    Ok(DecayRatios { weighted, boosted })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluxCheck {
    /// Per-sample relative defect; `None` at the two samples on each end.
    pub defects: Vec<Option<f64>>,
    pub max_defect: f64,
    /// Normalization used: max |flux|, or max |E| when the flux vanishes.
    pub scale: f64,
}

/// Compares a fourth-order central `dE/ds` with the sampled flux.
pub fn flux_identity_check(s: &[f64], energy: &[f64], flux: &[f64]) -> Result<FluxCheck> {
    let n = s.len();
    if energy.len() != n || flux.len() != n {
        return Err(Error::Insufficient("s, energy and flux series differ in length".into()));
    }
    if n < 5 {
        return Err(Error::Insufficient(format!("flux identity needs 5 hyperboloids, got {n}")));
    }
    let ds = s[1] - s[0];
    if !(ds > 0.0) || s.windows(2).any(|w| ((w[1] - w[0]) - ds).abs() > 1e-9 * ds) {
        return Err(Error::Insufficient("hyperboloid parameters are not uniformly spaced".into()));
    }
    let interior = 2..n - 2;
    let de: Vec<f64> = interior
        .clone()
        .map(|i| (energy[i - 2] - 8.0 * energy[i - 1] + 8.0 * energy[i + 1] - energy[i + 2]) / (12.0 * ds))
        .collect();
    let fmax = interior.clone().fold(0.0f64, |m, i| m.max(flux[i].abs()));
    let scale = if fmax > 0.0 { fmax } else { energy.iter().fold(0.0f64, |m, e| m.max(e.abs())) };
    let mut defects = vec![None; n];
    let mut max_defect = 0.0f64;
    for (k, i) in interior.enumerate() {
        let d = if scale > 0.0 { (de[k] - flux[i]).abs() / scale } else { 0.0 };
        defects[i] = Some(d);
        max_defect = max_defect.max(d);
    }
    Ok(FluxCheck { defects, max_defect, scale })
}

/// Clock of a decay fit: `δ⁻¹t + 2` for original-frame times, the time
/// itself for scaled-frame times.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "frame", rename_all = "lowercase")]
pub enum DecayClock {
    Original { delta: f64 },
    Scaled,
}

impl DecayClock {
    pub fn eval(self, t: f64) -> f64 {
        match self {
            DecayClock::Original { delta } => t / delta + 2.0,
            DecayClock::Scaled => t,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub window: [f64; 2],
    pub exponent: f64,
    pub amplitude: f64,
    pub residual: f64,
    pub samples: usize,
}

pub const MIN_FIT_SAMPLES: usize = 10;

/// Least squares of `log value` against `log clock(t)` over `window`.
pub fn decay_fit(times: &[f64], values: &[f64], window: [f64; 2], clock: DecayClock) -> Result<DecayFit> {
    if times.len() != values.len() {
        return Err(Error::Insufficient("times and values differ in length".into()));
    }
    if !(window[0] < window[1]) {
        return Err(Error::Config(format!("fit window [{}, {}] is empty", window[0], window[1])));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&t, &v) in times.iter().zip(values) {
        if t < window[0] || t > window[1] {
            continue;
        }
        if !(v > 0.0) {
            return Err(Error::Domain(format!("nonpositive value {v} at t = {t} inside the fit window")));
        }
        let c = clock.eval(t);
        if !(c > 0.0) {
            return Err(Error::Domain(format!("fit clock is nonpositive at t = {t}")));
        }
        xs.push(c.ln());
        ys.push(v.ln());
    }
    let n = xs.len();
    if n < MIN_FIT_SAMPLES {
        return Err(Error::Insufficient(format!("decay fit needs {MIN_FIT_SAMPLES} samples in the window, got {n}")));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Insufficient("fit window holds a single clock value".into()));
    }
    let p = sxy / sxx;
    let b = my - p * mx;
    let residual = (xs.iter().zip(&ys).map(|(x, y)| (y - b - p * x).powi(2)).sum::<f64>() / n as f64).sqrt();
    Ok(DecayFit { window, exponent: p, amplitude: b.exp(), residual, samples: n })
}

/// One line of the hyperboloid series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperboloidRow {
    pub s: f64,
    pub e_flat: f64,
    pub e_hyper: f64,
    pub m: [Option<f64>; 3],
    pub flux: f64,
    pub defect: Option<f64>,
}

pub const HYPERBOLOID_HEADER: &str = "s,E_flat,E_hyper,M0,M1,M2,flux,defect";

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:e}")).unwrap_or_default()
}

pub fn write_rows<W: Write>(rows: &[HyperboloidRow], mut out: W) -> Result<()> {
    writeln!(out, "{HYPERBOLOID_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{:e},{:e},{:e},{},{},{},{:e},{}",
            r.s,
            r.e_flat,
            r.e_hyper,
            opt(r.m[0]),
            opt(r.m[1]),
            opt(r.m[2]),
            r.flux,
            opt(r.defect)
        )?;
    }
    Ok(())
}

pub fn read_rows(text: &str) -> Result<Vec<HyperboloidRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(HYPERBOLOID_HEADER) {
        return Err(Error::Corrupt(format!("hyperboloid CSV must start with `{HYPERBOLOID_HEADER}`")));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Corrupt(format!("bad number `{s}`: {e}")));
    let optn = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(Error::Corrupt(format!("hyperboloid CSV line {}: expected 8 fields", ln + 2)));
        }
        rows.push(HyperboloidRow {
            s: num(f[0])?,
            e_flat: num(f[1])?,
            e_hyper: num(f[2])?,
            m: [optn(f[3])?, optn(f[4])?, optn(f[5])?],
            flux: num(f[6])?,
            defect: optn(f[7])?,
        });
    }
    Ok(rows)
}

/// Hyperboloid parameters `start, start + ds, …` whose whole sheet lies
/// at or before `t_end`.
pub fn s_schedule(start: f64, ds: f64, t_end: f64) -> Vec<f64> {
    let mut out = Vec::new();
    if !(ds > 0.0) {
        return out;
    }
    for k in 0.. {
        let s = start + k as f64 * ds;
        if s * s + 1.0 > 2.0 * t_end || k > 100_000 {
            break;
        }
        out.push(s);
    }
    out
}

/// One hyperboloid being accumulated by the streaming monitor.
struct Track {
    s: f64,
    /// `(first stencil step, grid index)`, sorted.
    nodes: Vec<(u32, u32)>,
    acc: Vec<[f64; 5]>,
    last_step: usize,
}

/// Streams a run and records the energy, flux and (optionally) ladder on a
/// schedule of hyperboloids.
pub struct HyperboloidMonitor {
    schedule: Vec<f64>,
    next: usize,
    delta: f64,
    tensor: CubicTensor,
    dt: f64,
    origin: Option<(usize, f64)>,
    active: Vec<Track>,
    keep_samples: bool,
    ladder: Option<(usize, SliceBuffer)>,
    pending_ladder: Vec<HyperboloidSample>,
    pub samples: Vec<HyperboloidSample>,
    pub rows: Vec<HyperboloidRow>,
    pub skipped: Vec<(f64, String)>,
}

impl HyperboloidMonitor {
    /// `delta` is the mass of the scaled problem, `tensor` the scaled
    /// tensor, `dt` the run's step.
    pub fn new(schedule: Vec<f64>, delta: f64, tensor: CubicTensor, dt: f64) -> Result<Self> {
        for &s in &schedule {
            check_s(s)?;
        }
        if schedule.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("hyperboloid schedule must increase".into()));
        }
        if !(dt > 0.0) {
            return Err(Error::Config(format!("time step must be positive, got {dt}")));
        }
        Ok(Self {
            schedule,
            next: 0,
            delta,
            tensor,
            dt,
            origin: None,
            active: Vec::new(),
            keep_samples: false,
            ladder: None,
            pending_ladder: Vec::new(),
            samples: Vec::new(),
            rows: Vec::new(),
            skipped: Vec::new(),
        })
    }

    /// Keep full samples (not just rows) for inspection.
    pub fn keep_samples(mut self, keep: bool) -> Self {
        self.keep_samples = keep;
        self
    }

    /// Also compute `M₁`/`M₂` up to `order`, holding enough whole slices to
    /// cover the last scheduled hyperboloid. Memory grows with the span.
    pub fn with_ladder(mut self, order: usize) -> Result<Self> {
        if order == 0 || order > 2 {
            return Err(Error::Config(format!("ladder order must be 1 or 2, got {order}")));
        }
        let s_max = self.schedule.last().copied().unwrap_or(S_ZERO);
        let span = 0.5 * (s_max * s_max + 1.0) - earliest_time(self.schedule.first().copied().unwrap_or(S_ZERO));
        let cap = ((span / self.dt).ceil() as usize + 12).max(MIN_BUFFER);
        self.ladder = Some((order, SliceBuffer::new(cap)?));
        Ok(self)
    }

    fn rel_step(&self, t: f64) -> f64 {
        let (_, t0) = self.origin.unwrap();
        (t - t0) / self.dt
    }

    fn open(&mut self, grid: &GridSpec, s: f64, first: usize) -> Result<Track> {
        let idx = mask(grid, s)?;
        let mut nodes: Vec<(u32, u32)> = idx
            .iter()
            .map(|&i| {
                let rel = self.rel_step(hyperboloid_time(s, grid.point_of(i)));
                let n0 = (rel.floor() as i64 - 1).max(0) as usize;
                ((first + n0) as u32, i as u32)
            })
            .collect();
        nodes.sort_unstable();
        let last_step = nodes.iter().map(|n| n.0 as usize + 3).max().unwrap_or(first);
        Ok(Track { s, acc: vec![[0.0; 5]; nodes.len()], nodes, last_step })
    }

    fn close(&mut self, track: Track, grid: &GridSpec) {
        let points: Vec<HyperPoint> = track
            .nodes
            .iter()
            .zip(&track.acc)
            .map(|(&(_, i), a)| {
                let x = grid.point_of(i as usize);
                HyperPoint { x, t: hyperboloid_time(track.s, x), u: a[0], v: a[1], grad: [a[2], a[3], a[4]] }
            })
            .collect();
        let sample = HyperboloidSample::new(track.s, self.delta, grid.cell_volume(), points);
        let flux = flux_integral(&sample, &self.tensor);
        let m0 = sample.e_flat.max(0.0).sqrt();
        self.rows.push(HyperboloidRow {
            s: track.s,
            e_flat: sample.e_flat,
            e_hyper: sample.e_hyper,
            m: [Some(m0), None, None],
            flux,
            defect: None,
        });
        if self.ladder.is_some() {
            self.pending_ladder.push(HyperboloidSample { points: Vec::new(), ..sample.clone() });
        }
        if self.keep_samples {
            self.samples.push(sample);
        }
    }

    fn run_ladders(&mut self) -> Result<()> {
        let Some((order, buffer)) = &self.ladder else { return Ok(()) };
        let mut keep = Vec::new();
        for smp in std::mem::take(&mut self.pending_ladder) {
            match energy_ladder(buffer, smp.s, self.delta, *order) {
                Ok(l) => {
                    if let Some(row) = self.rows.iter_mut().find(|r| r.s == smp.s) {
                        for (k, m) in l.partial_sums.iter().enumerate() {
                            row.m[k] = Some(*m);
                        }
                    }
                }
                Err(Error::SpanViolation { .. }) => keep.push(smp),
                Err(e) => return Err(e),
            }
        }
        self.pending_ladder = keep;
        Ok(())
    }

    /// Fills the flux-identity defects and returns the finished rows.
    pub fn finish(mut self) -> Result<Vec<HyperboloidRow>> {
        annotate_defects(&mut self.rows);
        Ok(self.rows)
    }

    pub fn annotate(&mut self) {
        annotate_defects(&mut self.rows);
    }
}

/// Writes flux-identity defects into the longest uniformly spaced run of
/// rows; rows outside it keep `None`.
pub fn annotate_defects(rows: &mut [HyperboloidRow]) {
    if rows.len() < 5 {
        return;
    }
    let s: Vec<f64> = rows.iter().map(|r| r.s).collect();
    let e: Vec<f64> = rows.iter().map(|r| r.e_flat).collect();
    let f: Vec<f64> = rows.iter().map(|r| r.flux).collect();
    if let Ok(check) = flux_identity_check(&s, &e, &f) {
        for (r, d) in rows.iter_mut().zip(check.defects) {
            r.defect = d;
        }
    }
}

impl SliceObserver for HyperboloidMonitor {
    fn observe(&mut self, step: usize, slice: &StateSlice) -> Result<()> {
        if !slice.is_finite() {
            return Ok(());
        }
        let grid = *slice.grid();
        if self.origin.is_none() {
            self.origin = Some((step, slice.t()));
        }
        let (first, t0) = self.origin.unwrap();
        while self.next < self.schedule.len() {
            let s = self.schedule[self.next];
            let tmin = earliest_time(s);
            let open_at = first + ((tmin - t0) / self.dt).floor().max(1.0) as usize - 1;
            if open_at > step {
                break;
            }
            self.next += 1;
            if tmin < t0 - 1e-12 {
                self.skipped.push((s, format!("sheet starts at t = {tmin}, before the first observed slice t = {t0}")));
                continue;
            }
            let track = self.open(&grid, s, first)?;
            self.active.push(track);
        }
        let u = slice.u();
        let v = slice.v().values();
        for track in self.active.iter_mut() {
            let lo = track.nodes.partition_point(|n| (n.0 as usize) + 3 < step);
            let hi = track.nodes.partition_point(|n| n.0 as usize <= step);
            let s = track.s;
            let dt = self.dt;
            track.nodes[lo..hi].par_iter().zip(track.acc[lo..hi].par_iter_mut()).for_each(|(&(n0, i), a)| {
                let i = i as usize;
                let x = grid.point_of(i);
                let th = (hyperboloid_time(s, x) - t0) / dt - (n0 as usize - first) as f64;
                let w = lagrange4(th)[step - n0 as usize];
                let [ii, jj, kk] = grid.unravel(i);
                a[0] += w * u.values()[i];
                a[1] += w * v[i];
                for (q, axis) in Axis::ALL.into_iter().enumerate() {
                    a[2 + q] += w * u.derivative_at(axis, ii, jj, kk);
                }
            });
        }
        let mut k = 0;
        while k < self.active.len() {
            if self.active[k].last_step <= step {
                let track = self.active.remove(k);
                self.close(track, &grid);
            } else {
                k += 1;
            }
        }
        if let Some((_, buffer)) = &mut self.ladder {
            buffer.push(slice.clone())?;
        }
        if !self.pending_ladder.is_empty() {
            self.run_ladders()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn buffer_of(grid: GridSpec, t0: f64, dt: f64, n: usize, u: impl Fn(f64, [f64; 3]) -> f64 + Sync, v: impl Fn(f64, [f64; 3]) -> f64 + Sync) -> SliceBuffer {
        let mut b = SliceBuffer::new(n.max(MIN_BUFFER)).unwrap();
        for k in 0..n {
            let t = t0 + k as f64 * dt;
            let s = StateSlice::new(t, ScalarField::from_fn(grid, |x| u(t, x)), ScalarField::from_fn(grid, |x| v(t, x))).unwrap();
            b.push(s).unwrap();
        }
        b
    }

    fn grid() -> GridSpec {
        GridSpec::cube(2.0, 0.125).unwrap()
    }

    #[test]
    fn lagrange_reproduces_cubics() {
        for th in [0.0, 0.3, 1.0, 1.7, 2.0, 3.0] {
            let w = lagrange4(th);
            for p in 0..4 {
                let exact = th.powi(p);
                let got: f64 = (0..4).map(|k| w[k] * (k as f64).powi(p)).sum();
                assert!((got - exact).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn buffer_invariants() {
        assert!(SliceBuffer::new(7).is_err());
        let g = grid();
        let mut b = SliceBuffer::new(8).unwrap();
        b.push(StateSlice::zeros(g, 2.0)).unwrap();
        b.push(StateSlice::zeros(g, 2.1)).unwrap();
        assert!(b.push(StateSlice::zeros(g, 2.1)).is_err());
        assert!(b.push(StateSlice::zeros(g, 2.25)).is_err());
        for k in 2..12 {
            b.push(StateSlice::zeros(g, 2.0 + 0.1 * k as f64)).unwrap();
        }
        assert_eq!(b.len(), 8);
        let (lo, hi) = b.interpolable(0).unwrap();
        assert!((lo - 2.5).abs() < 1e-12 && (hi - 3.0).abs() < 1e-12);
    }

    #[test]
    fn samples_closed_forms() {
        let g = grid();
        let s = 2.2;
        let static_b = buffer_of(g, 2.0, 0.05, 40, |_, x| (x[0] - 0.3 * x[1]).sin(), |_, _| 0.0);
        let smp = sample_hyperboloid(&static_b, s, 0.25).unwrap();
        assert!(!smp.points.is_empty());
        for p in &smp.points {
            assert!((p.u - (p.x[0] - 0.3 * p.x[1]).sin()).abs() < 1e-14);
            assert!(in_cone(p.t, p.x));
        }
        let lin = buffer_of(g, 2.0, 0.05, 40, |t, _| t, |_, _| 1.0);
        for p in sample_hyperboloid(&lin, s, 0.25).unwrap().points {
            assert!((p.u - hyperboloid_time(s, p.x)).abs() < 1e-12);
        }
        let level = buffer_of(g, 2.0, 0.05, 40, |t, x| t * t - x[0] * x[0] - x[1] * x[1] - x[2] * x[2], |t, _| 2.0 * t);
        let smp = sample_hyperboloid(&level, s, 0.25).unwrap();
        let d = 0.25;
        let per = 4.0 * s * s + d * d * s.powi(4);
        let vol = smp.points.len() as f64 * smp.cell_volume;
        for p in &smp.points {
            assert!((p.u - s * s).abs() < 1e-11);
            assert!((flat_integrand(p, d) - per).abs() < 1e-9 * per);
        }
        assert!((smp.e_flat - per * vol).abs() < 1e-9 * smp.e_flat);
        assert!((smp.e_hyper - per * vol).abs() < 1e-9 * smp.e_hyper);
    }

    #[test]
    fn span_violation_reported() {
        let g = grid();
        let b = buffer_of(g, 2.0, 0.05, 10, |_, _| 0.0, |_, _| 0.0);
        assert!(matches!(sample_hyperboloid(&b, 2.5, 0.25), Err(Error::SpanViolation { .. })));
        assert!(sample_hyperboloid(&b, 1.0, 0.25).is_err());
    }

    #[test]
    fn zero_field_diagnostics() {
        let g = GridSpec::cube(1.5, 0.125).unwrap();
        let b = buffer_of(g, 1.8, 0.05, 30, |_, _| 0.0, |_, _| 0.0);
        let smp = sample_hyperboloid(&b, 2.0, 0.25).unwrap();
        assert_eq!((smp.e_flat, smp.e_hyper), (0.0, 0.0));
        let l = energy_ladder(&b, 2.0, 0.25, 2).unwrap();
        assert!(l.entries.iter().all(|e| e.energy_sqrt == 0.0));
        assert_eq!(sobolev_embedding_check(&b, 2.0).unwrap(), 0.0);
        let r = pointwise_decay_check(&b, 2.0, 0.25, 1).unwrap();
        assert_eq!((r.weighted, r.boosted), (0.0, 0.0));
    }

    #[test]
    fn mask_is_nested() {
        let g = GridSpec::cube(3.0, 0.25).unwrap();
        let a = mask(&g, 2.0).unwrap();
        let b = mask(&g, 2.5).unwrap();
        assert!(a.iter().all(|i| b.contains(i)));
        for &i in &b {
            let x = g.point_of(i);
            assert!(hyperboloid_time(2.5, x) >= hyperboloid_time(2.0, x));
        }
    }

    #[test]
    fn ladder_words_count_and_order() {
        assert_eq!(ladder_words(0).len(), 1);
        assert_eq!(ladder_words(1).len(), 8);
        assert_eq!(ladder_words(2).len(), 39);
        let w = ladder_words(2);
        assert!(w.windows(2).all(|p| p[0].order() <= p[1].order()));
        assert_eq!(w[0].to_string(), "u");
    }

    #[test]
    fn ladder_order_zero_is_energy() {
        let g = GridSpec::cube(1.5, 0.125).unwrap();
        let b = buffer_of(g, 1.8, 0.05, 30, |t, x| (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) * 2.0).exp() * t.cos(), |t, x| -(-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) * 2.0).exp() * t.sin());
        let smp = sample_hyperboloid(&b, 2.1, 0.25).unwrap();
        let l = energy_ladder(&b, 2.1, 0.25, 0).unwrap();
        assert_eq!(l.entries.len(), 1);
        assert!((l.partial_sums[0] - smp.e_flat.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn boosts_of_an_exact_field() {
        // u = t x₁: L₁u = x₁² + t², L₂u = x₁x₂, ∂₀u = x₁, ∂₀L₁u = 2t.
        let g = GridSpec::cube(1.5, 0.125).unwrap();
        let b = buffer_of(g, 1.8, 0.05, 40, |t, x| t * x[0], |_, x| x[0]);
        let words = vec![
            Word { partials: vec![], boosts: vec![1] },
            Word { partials: vec![], boosts: vec![2] },
            Word { partials: vec![0], boosts: vec![] },
            Word { partials: vec![0], boosts: vec![1] },
        ];
        let smp = sample_words(&b, 2.0, 0.25, &words).unwrap();
        for (k, p) in smp[0].points.iter().enumerate() {
            let (t, x) = (p.t, p.x);
            assert!((p.u - (x[0] * x[0] + t * t)).abs() < 1e-9, "L1u");
            assert!((p.v - 2.0 * t).abs() < 1e-8);
            assert!((smp[1].points[k].u - x[0] * x[1]).abs() < 1e-9, "L2u");
            assert!((smp[2].points[k].u - x[0]).abs() < 1e-9, "d0u");
            assert!((smp[3].points[k].u - 2.0 * t).abs() < 1e-8, "d0L1u");
        }
    }

    #[test]
    fn sobolev_ratio_is_homogeneous() {
        let g = GridSpec::cube(1.5, 0.125).unwrap();
        let f = |t: f64, x: [f64; 3]| (1.0 + 0.3 * t) * (-(x[0] * x[0] + 2.0 * x[1] * x[1] + x[2] * x[2])).exp();
        let ft = |_: f64, x: [f64; 3]| 0.3 * (-(x[0] * x[0] + 2.0 * x[1] * x[1] + x[2] * x[2])).exp();
        let b1 = buffer_of(g, 1.8, 0.05, 30, f, ft);
        let b2 = buffer_of(g, 1.8, 0.05, 30, |t, x| -3.5 * f(t, x), |t, x| -3.5 * ft(t, x));
        let r1 = sobolev_embedding_check(&b1, 2.1).unwrap();
        let r2 = sobolev_embedding_check(&b2, 2.1).unwrap();
        assert!(r1 > 0.0 && r1.is_finite());
        assert!((r1 - r2).abs() < 1e-12 * r1);
        let d1 = pointwise_decay_check(&b1, 2.1, 0.25, 1).unwrap();
        let d2 = pointwise_decay_check(&b2, 2.1, 0.25, 1).unwrap();
        assert!((d1.weighted - d2.weighted).abs() < 1e-12 * d1.weighted);
        assert!((d1.boosted - d2.boosted).abs() < 1e-12 * d1.boosted);
    }

    #[test]
    fn flux_check_basics() {
        let s: Vec<f64> = (0..7).map(|k| 2.0 + 0.1 * k as f64).collect();
        let e: Vec<f64> = s.iter().map(|x| x * x * x).collect();
        let f: Vec<f64> = s.iter().map(|x| 3.0 * x * x).collect();
        let c = flux_identity_check(&s, &e, &f).unwrap();
        assert!(c.max_defect < 1e-12);
        assert_eq!(c.defects.iter().filter(|d| d.is_some()).count(), 3);
        let z = vec![0.0; 7];
        assert_eq!(flux_identity_check(&s, &z, &z).unwrap().max_defect, 0.0);
        assert!(flux_identity_check(&s[..4], &e[..4], &f[..4]).is_err());
        let mut bad = s.clone();
        bad[3] += 0.01;
        assert!(flux_identity_check(&bad, &e, &f).is_err());
    }

    #[test]
    fn decay_fit_recovers_generators() {
        let d = 0.25;
        let t: Vec<f64> = (0..40).map(|k| 0.1 * k as f64).collect();
        let v: Vec<f64> = t.iter().map(|&t| 7.0 * (t / d + 2.0).powf(-1.5)).collect();
        let fit = decay_fit(&t, &v, [0.5, 3.5], DecayClock::Original { delta: d }).unwrap();
        assert!((fit.exponent + 1.5).abs() < 1e-10);
        assert!((fit.amplitude - 7.0).abs() < 1e-9);
        assert!(fit.residual < 1e-12);
        let c = vec![3.0; 40];
        let tau: Vec<f64> = (0..40).map(|k| 2.0 + 0.25 * k as f64).collect();
        let fit = decay_fit(&tau, &c, [4.0, 12.0], DecayClock::Scaled).unwrap();
        assert!(fit.exponent.abs() < 1e-12);
        let mut neg = c.clone();
        neg[20] = 0.0;
        assert!(matches!(decay_fit(&tau, &neg, [4.0, 12.0], DecayClock::Scaled), Err(Error::Domain(_))));
        assert!(decay_fit(&tau, &c, [4.0, 5.0], DecayClock::Scaled).is_err());
    }

    #[test]
    fn rows_round_trip() {
        let rows = vec![
            HyperboloidRow { s: 2.0, e_flat: 1.5, e_hyper: 1.5, m: [Some(1.2), None, None], flux: 0.0, defect: None },
            HyperboloidRow { s: 2.1, e_flat: 0.1, e_hyper: 0.1, m: [Some(0.3), Some(1.0), Some(2.0)], flux: -1e-3, defect: Some(0.01) },
        ];
        let mut buf = Vec::new();
        write_rows(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(HYPERBOLOID_HEADER));
        assert_eq!(read_rows(&text).unwrap(), rows);
        assert!(read_rows("s,E\n").is_err());
    }

    #[test]
    fn schedule_stays_inside_run() {
        let s = s_schedule(2.0, 0.1, 3.0);
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|x| 0.5 * (x * x + 1.0) <= 3.0));
    }
}
