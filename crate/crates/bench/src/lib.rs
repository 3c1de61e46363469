//! Fixtures shared by the benchmarks.

use pulsekg_core::data::{blowup_grid, PulseParams};
use pulsekg_core::grid::StateSlice;
use pulsekg_core::integrator::{Frame, RunConfig};
use pulsekg_core::nonlinearity::CubicTensor;
use pulsekg_core::Result;

/// Blowup-preset configuration on the probe grid with `per_delta` points
/// per pulse width.
pub fn pulse_config(per_delta: usize) -> Result<RunConfig> {
    let pulse = PulseParams::new(0.25, -0.6)?;
    let grid = blowup_grid(pulse.delta(), per_delta)?;
    RunConfig::for_frame(Frame::Original, pulse, &CubicTensor::preset_blowup(), grid, 0.05)
}

pub fn pulse_state(per_delta: usize) -> Result<(RunConfig, StateSlice)> {
    let c = pulse_config(per_delta)?;
    let s = c.initial_state()?;
    Ok((c, s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_is_nonzero() {
        let (_, s) = pulse_state(8).unwrap();
        assert!(s.u().values().iter().any(|&x| x != 0.0));
    }
}
