//! Cubic nonlinearities `F(u, ∂u) = Σ g^{jkl} ∂_j u ∂_k u ∂_l u` where the
//! slot `-1` is the identity (`∂_{-1} u = u`) and `0` is the time derivative.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ensure_same_grid, ScalarField};

/// One slot of a cubic term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Slot {
    /// `u` itself.
    Identity,
    /// `∂_t u`.
    Time,
    /// `∂_1 u`.
    D1,
    D2,
    D3,
}

impl Slot {
    pub fn from_index(j: i8) -> Result<Slot> {
        match j {
            -1 => Ok(Slot::Identity),
            0 => Ok(Slot::Time),
            1 => Ok(Slot::D1),
            2 => Ok(Slot::D2),
            3 => Ok(Slot::D3),
            _ => Err(Error::Config(format!("tensor index {j} is not in -1..=3"))),
        }
    }

    pub fn index(self) -> i8 {
        match self {
            Slot::Identity => -1,
            Slot::Time => 0,
            Slot::D1 => 1,
            Slot::D2 => 2,
            Slot::D3 => 3,
        }
    }

    /// Number of derivatives carried by the slot; governs the δ-scaling.
    pub fn derivative_count(self) -> i32 {
        match self {
            Slot::Identity => 0,
            _ => 1,
        }
    }

    fn pick(self, s: &Slots) -> f64 {
        match self {
            Slot::Identity => s.u,
            Slot::Time => s.v,
            Slot::D1 => s.grad[0],
            Slot::D2 => s.grad[1],
            Slot::D3 => s.grad[2],
        }
    }
}

impl TryFrom<i8> for Slot {
    type Error = Error;
    fn try_from(j: i8) -> Result<Slot> {
        Slot::from_index(j)
    }
}

impl From<Slot> for i8 {
    fn from(s: Slot) -> i8 {
        s.index()
    }
}

/// Pointwise values of `(u, ∂_t u, ∇u)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Slots {
    pub u: f64,
    pub v: f64,
    pub grad: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub slots: [Slot; 3],
    pub value: f64,
}

/// Sparse list of nonzero `g^{jkl}`. Ordered triples are kept literally;
/// `(0, 0, 1)` and `(0, 1, 0)` are distinct entries.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CubicTensor {
    entries: Vec<Entry>,
}

impl CubicTensor {
    pub fn zero() -> Self {
        Self::default()
    }

    /// From `(j, k, l, value)` quadruples. Repeated triples are summed and
    /// zero coefficients dropped.
    pub fn from_quadruples(quads: &[(i8, i8, i8, f64)]) -> Result<Self> {
        let mut t = Self::zero();
        for &(j, k, l, value) in quads {
            t.add(Slot::from_index(j)?, Slot::from_index(k)?, Slot::from_index(l)?, value)?;
        }
        Ok(t)
    }

    pub fn add(&mut self, j: Slot, k: Slot, l: Slot, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Config(format!("tensor entry ({}, {}, {}) is not finite", j.index(), k.index(), l.index())));
        }
        let slots = [j, k, l];
        match self.entries.iter_mut().find(|e| e.slots == slots) {
            Some(e) => e.value += value,
            None => self.entries.push(Entry { slots, value }),
        }
        self.entries.retain(|e| e.value != 0.0);
        Ok(())
    }

    /// `F = (∂_t u)² ∂_1 u`.
    pub fn preset_blowup() -> Self {
        Self { entries: vec![Entry { slots: [Slot::Time, Slot::Time, Slot::D1], value: 1.0 }] }
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn coefficient(&self, j: Slot, k: Slot, l: Slot) -> f64 {
        self.entries.iter().find(|e| e.slots == [j, k, l]).map_or(0.0, |e| e.value)
    }

    pub fn to_quadruples(&self) -> Vec<(i8, i8, i8, f64)> {
        self.entries.iter().map(|e| (e.slots[0].index(), e.slots[1].index(), e.slots[2].index(), e.value)).collect()
    }

    /// Coefficients of the rescaled equation in `(τ, z) = (t/δ + 2, x/δ)`:
    /// each entry gains `δ^{2 - n_j - n_k - n_l}`.
    pub fn scaled(&self, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::Domain(format!("tensor scaling needs δ in (0, 1], got {delta}")));
        }
        let entries = self
            .entries
            .iter()
            .map(|e| {
                let n: i32 = e.slots.iter().map(|s| s.derivative_count()).sum();
                Entry { slots: e.slots, value: e.value * delta.powi(2 - n) }
            })
            .collect();
        Ok(Self { entries })
    }

    /// `F` at one point.
    pub fn eval_point(&self, s: &Slots) -> f64 {
        self.entries.iter().map(|e| e.value * e.slots[0].pick(s) * e.slots[1].pick(s) * e.slots[2].pick(s)).sum()
    }

    /// `∂_t F` at one point, given `(u, v, ∇u)` and their time derivatives.
    pub fn eval_point_dt(&self, s: &Slots, ds: &Slots) -> f64 {
        self.entries
            .iter()
            .map(|e| {
                let [a, b, c] = e.slots;
                let (pa, pb, pc) = (a.pick(s), b.pick(s), c.pick(s));
                e.value * (a.pick(ds) * pb * pc + pa * b.pick(ds) * pc + pa * pb * c.pick(ds))
            })
            .sum()
    }

    /// `F` over a grid.
    pub fn eval(&self, u: &ScalarField, v: &ScalarField, grad: &[ScalarField; 3]) -> Result<ScalarField> {
        ensure_same_grid(u, v)?;
        for g in grad {
            ensure_same_grid(u, g)?;
        }
        let grid = *u.grid();
        let mut out = vec![0.0; grid.len()];
        self.eval_into(u.values(), v.values(), [grad[0].values(), grad[1].values(), grad[2].values()], &mut out);
        ScalarField::from_values(grid, out)
    }

    /// Adds `F` into `out`, elementwise over the slices. All slices must have
    /// equal length.
    pub(crate) fn accumulate(&self, u: &[f64], v: &[f64], grad: [&[f64]; 3], out: &mut [f64]) {
        for e in &self.entries {
            let pick = |s: Slot| -> &[f64] {
                match s {
                    Slot::Identity => u,
                    Slot::Time => v,
                    Slot::D1 => grad[0],
                    Slot::D2 => grad[1],
                    Slot::D3 => grad[2],
                }
            };
            let (a, b, c) = (pick(e.slots[0]), pick(e.slots[1]), pick(e.slots[2]));
            let g = e.value;
            for i in 0..out.len() {
                out[i] += g * a[i] * b[i] * c[i];
            }
        }
    }

    fn eval_into(&self, u: &[f64], v: &[f64], grad: [&[f64]; 3], out: &mut [f64]) {
        const CHUNK: usize = 4096;
        out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, o)| {
            let r = c * CHUNK..c * CHUNK + o.len();
            self.accumulate(
                &u[r.clone()],
                &v[r.clone()],
                [&grad[0][r.clone()], &grad[1][r.clone()], &grad[2][r.clone()]],
                o,
            );
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn g() -> GridSpec {
        GridSpec::cube(1.0, 0.25).unwrap()
    }

    fn consts(u: f64, v: f64, d: [f64; 3]) -> (ScalarField, ScalarField, [ScalarField; 3]) {
        let g = g();
        (ScalarField::constant(g, u), ScalarField::constant(g, v), d.map(|x| ScalarField::constant(g, x)))
    }

    #[test]
    fn direct_products() {
        let (u, v, d) = consts(0.0, 2.0, [3.0, 0.0, 0.0]);
        let f = CubicTensor::preset_blowup().eval(&u, &v, &d).unwrap();
        assert!(f.values().iter().all(|&x| x == 12.0));
        assert_eq!(CubicTensor::zero().eval(&u, &v, &d).unwrap().sup_abs(), 0.0);
        let t = CubicTensor::from_quadruples(&[(-1, -1, -1, 1.0)]).unwrap();
        let (u, v, d) = consts(1.5, 0.0, [0.0; 3]);
        assert!(t.eval(&u, &v, &d).unwrap().values().iter().all(|&x| (x - 3.375).abs() < 1e-15));
    }

    #[test]
    fn preset_examples() {
        let (u, v, d) = consts(0.0, 1.0, [1.0, 0.0, 0.0]);
        assert!(CubicTensor::preset_blowup().eval(&u, &v, &d).unwrap().values().iter().all(|&x| x == 1.0));
        let (u, v, d) = consts(0.0, 0.0, [1.0, 0.0, 0.0]);
        assert_eq!(CubicTensor::preset_blowup().eval(&u, &v, &d).unwrap().sup_abs(), 0.0);
        let grid = g();
        let u = ScalarField::from_fn(grid, |x| x[0]);
        let v = u.clone();
        let d = crate::grid::gradient(&u);
        let f = CubicTensor::preset_blowup().eval(&u, &v, &d).unwrap();
        for (i, &val) in f.values().iter().enumerate() {
            let x = grid.point_of(i)[0];
            assert!((val - x * x).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_grids() {
        let (u, v, d) = consts(0.0, 1.0, [1.0, 0.0, 0.0]);
        let other = ScalarField::zeros(GridSpec::cube(1.0, 0.2).unwrap());
        assert!(matches!(CubicTensor::preset_blowup().eval(&other, &v, &d), Err(Error::Config(_))));
        let _ = u;
    }

    #[test]
    fn scaling_factors() {
        let t = CubicTensor::from_quadruples(&[(0, 0, 1, 1.0), (-1, -1, -1, 1.0), (-1, 0, 2, 3.0)]).unwrap();
        let s = t.scaled(0.5).unwrap();
        assert!((s.coefficient(Slot::Time, Slot::Time, Slot::D1) - 2.0).abs() < 1e-15);
        assert!((s.coefficient(Slot::Identity, Slot::Identity, Slot::Identity) - 0.25).abs() < 1e-15);
        assert!((s.coefficient(Slot::Identity, Slot::Time, Slot::D2) - 3.0).abs() < 1e-15);
        assert_eq!(t.scaled(1.0).unwrap(), t);
        assert!(t.scaled(0.0).is_err());
        assert!(t.scaled(-0.5).is_err());
        assert!(t.scaled(1.5).is_err());
    }

    #[test]
    fn quadruple_handling() {
        assert!(CubicTensor::from_quadruples(&[(4, 0, 0, 1.0)]).is_err());
        assert!(CubicTensor::from_quadruples(&[(0, 0, 0, f64::NAN)]).is_err());
        let t = CubicTensor::from_quadruples(&[(0, 0, 1, 1.0), (0, 1, 0, 2.0), (0, 0, 1, -1.0)]).unwrap();
        assert_eq!(t.entries().len(), 1);
        assert_eq!(t.to_quadruples(), vec![(0, 1, 0, 2.0)]);
        let json = serde_json::to_string(&t).unwrap();
        let back: CubicTensor = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn time_derivative_by_product_rule() {
        let t = CubicTensor::from_quadruples(&[(0, 0, 1, 1.0), (-1, 2, 3, 0.5)]).unwrap();
        let at = |tt: f64| Slots { u: tt.sin(), v: tt.cos(), grad: [tt * tt, tt.exp(), 1.0 + tt] };
        let dat = |tt: f64| Slots { u: tt.cos(), v: -tt.sin(), grad: [2.0 * tt, tt.exp(), 1.0] };
        let t0 = 0.4;
        let e = 1e-5;
        let fd = (t.eval_point(&at(t0 + e)) - t.eval_point(&at(t0 - e))) / (2.0 * e);
        assert!((fd - t.eval_point_dt(&at(t0), &dat(t0))).abs() < 1e-8);
    }
}
