pub mod blowup;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod grid;
pub mod hyperboloid;
pub mod integrator;
pub mod nonlinearity;
pub mod profile;
pub mod sweep;
pub mod validation;

pub use error::{Error, Result};
pub use grid::{GridSpec, ScalarField, Scheme, StateSlice};
pub use integrator::{Frame, InitialData, RunConfig, RunRecord, Termination};
pub use nonlinearity::CubicTensor;
pub use data::{Bump, PulseParams};
pub use sweep::{Class, Outcome, SweepPlan};
