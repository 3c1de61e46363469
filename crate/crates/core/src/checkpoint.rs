//! Binary snapshots of a run.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "PKG1"
//! dims        3 × u64
//! spacing     f64
//! origin      3 × f64
//! t           f64
//! frame       u8   (0 original, 1 scaled)
//! mass        f64
//! cfl         f64
//! u           n × f64, x-fastest
//! v           n × f64
//! config_len  u64
//! config      config_len bytes of JSON
//! ```
//!
//! The JSON trailer carries the full run configuration so a resumed run
//! needs nothing else.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField, StateSlice};
use crate::integrator::{Frame, RunConfig};

pub const MAGIC: &[u8; 4] = b"PKG1";

pub fn to_bytes(state: &StateSlice, config: &RunConfig) -> Result<Vec<u8>> {
    let g = state.grid();
    if *g != config.grid {
        return Err(Error::Config("state grid differs from config grid".into()));
    }
    let n = g.len();
    let json = serde_json::to_vec(config)?;
    let mut out = Vec::with_capacity(4 + 8 * (12 + 2 * n) + 1 + json.len());
    out.extend_from_slice(MAGIC);
    for d in g.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(&g.spacing().to_le_bytes());
    for o in g.origin() {
        out.extend_from_slice(&o.to_le_bytes());
    }
    out.extend_from_slice(&state.t().to_le_bytes());
    out.push(config.frame.code());
    out.extend_from_slice(&config.mass.to_le_bytes());
    out.extend_from_slice(&config.cfl.to_le_bytes());
    for f in [state.u(), state.v()] {
        for x in f.values() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Corrupt(format!("truncated checkpoint: need {n} bytes at offset {}, have {}", self.pos, self.buf.len()))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<(StateSlice, RunConfig)> {
    if buf.len() < 4 {
        return Err(Error::Corrupt("file shorter than the magic number".into()));
    }
    if &buf[..4] != MAGIC {
        if &buf[..3] == b"PKG" {
            return Err(Error::VersionMismatch {
                expected: "PKG1".into(),
                found: String::from_utf8_lossy(&buf[..4]).into_owned(),
            });
        }
        return Err(Error::Corrupt("not a checkpoint file (bad magic)".into()));
    }
    let mut r = Reader { buf, pos: 4 };
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        *d = usize::try_from(r.u64()?).map_err(|_| Error::Corrupt("dimension overflows usize".into()))?;
    }
    let spacing = r.f64()?;
    let origin = [r.f64()?, r.f64()?, r.f64()?];
    let grid = GridSpec::new(origin, spacing, dims).map_err(|e| Error::Corrupt(format!("bad grid header: {e}")))?;
    let t = r.f64()?;
    let frame = Frame::from_code(r.take(1)?[0])?;
    let mass = r.f64()?;
    let cfl = r.f64()?;
    let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Corrupt("grid too large".into()))?;
    let read_field = |r: &mut Reader| -> Result<Vec<f64>> {
        let bytes = r.take(n.checked_mul(8).ok_or_else(|| Error::Corrupt("grid too large".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    };
    let u = read_field(&mut r)?;
    let v = read_field(&mut r)?;
    let len = r.u64()? as usize;
    let json = r.take(len)?;
    if r.pos != buf.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes after checkpoint", buf.len() - r.pos)));
    }
    let config: RunConfig =
        serde_json::from_slice(json).map_err(|e| Error::Corrupt(format!("bad config trailer: {e}")))?;
    if config.grid != grid
        || config.frame != frame
        || config.mass.to_bits() != mass.to_bits()
        || config.cfl.to_bits() != cfl.to_bits()
    {
        return Err(Error::Corrupt("header disagrees with the embedded config".into()));
    }
    let state = StateSlice::new(t, ScalarField::from_values(grid, u)?, ScalarField::from_values(grid, v)?)?;
    Ok((state, config))
}

pub fn save(state: &StateSlice, config: &RunConfig, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(state, config)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(StateSlice, RunConfig)> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Bump, PulseParams};
    use crate::integrator::{InitialData, Runner};
    use crate::nonlinearity::CubicTensor;

    fn config() -> RunConfig {
        let pulse = PulseParams::new(0.5, -0.2).unwrap();
        let mut c =
            RunConfig::for_frame(Frame::Original, pulse, &CubicTensor::preset_blowup(), GridSpec::cube(1.3, 0.1).unwrap(), 0.3)
                .unwrap();
        c.initial = InitialData::Bump(Bump { amplitude: 0.4, tilt: 0.5, velocity: 0.3, radius: 0.5 });
        c.blowup_threshold = Some(1e6);
        c.track_upsilon = true;
        c
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let c = config();
        let s = c.initial_state().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.pkg");
        let p2 = dir.path().join("b.pkg");
        save(&s, &c, &p1).unwrap();
        let (s2, c2) = load(&p1).unwrap();
        assert_eq!(s2, s);
        assert_eq!(c2, c);
        save(&s2, &c2, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn truncation_and_version() {
        let c = config();
        let bytes = to_bytes(&c.initial_state().unwrap(), &c).unwrap();
        for cut in [0, 3, 20, 100, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(from_bytes(&bytes[..cut]), Err(Error::Corrupt(_))), "cut {cut}");
        }
        let mut v2 = bytes.clone();
        v2[3] = b'2';
        assert!(matches!(from_bytes(&v2), Err(Error::VersionMismatch { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Corrupt(_))));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(from_bytes(&extra), Err(Error::Corrupt(_))));
    }

    #[test]
    fn resumed_run_matches_unbroken_run() {
        let c = config();
        let dir = tempfile::tempdir().unwrap();
        let mut runner = Runner::new(&c).unwrap();
        runner.checkpoint_every(4, dir.path());
        let full = runner.run().unwrap();
        let (state, saved) = load(&dir.path().join("step_00000004.pkg")).unwrap();
        let resumed = Runner::resume(&saved, state).unwrap().run().unwrap();
        assert_eq!(resumed.termination, full.termination);
        let tail: Vec<_> = full.rows.iter().filter(|r| r.step >= 4).cloned().collect();
        assert_eq!(resumed.rows.len(), tail.len());
        for (a, b) in resumed.rows.iter().zip(&tail) {
            assert_eq!(a.step, b.step);
            for (x, y) in [(a.t, b.t), (a.sup_u, b.sup_u), (a.energy_flat, b.energy_flat), (a.upsilon.unwrap(), b.upsilon.unwrap())] {
                assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }
    }
}
