//! Metropolized Hamiltonian Monte Carlo (one leapfrog step per iteration) for
//! smooth, strongly logconcave densities `π ∝ exp(−f)`, with diagnostics and
//! experiment drivers for its mixing-time behaviour.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix `f64`, which is what the experiments use.

pub mod diagnostics;
mod error;
pub mod experiments;
pub mod hmc;
pub mod report;
pub mod rng;
pub mod sampler;
mod scalar;
pub mod target;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use hmc::{PhaseState, StepOutcome, StepSizePolicy};
pub use sampler::{ChainResult, HmcConfig};
pub use target::{make_target, TargetDensity, TargetKind, TargetSpec};

pub type Target = TargetDensity<f64>;
pub type Target32 = TargetDensity<f32>;
pub type State = PhaseState<f64>;
pub type Outcome = StepOutcome<f64>;
pub type Chain = ChainResult<f64>;
