//! Spectral Galerkin simulator for the 3D stochastic primitive equations of
//! the ocean on the periodic domain `T^2 x (-1, 1)`.
//!
//! The state is `Y = (v, S)`: horizontal velocity `v` (even in `z`) and scaled
//! temperature `S` (odd in `z`). The Galerkin system
//!
//! ```text
//! dY + A Y dt + P_N B(Y, Y) dt + P_N G(Y) dt = P_N Psi dW
//! ```
//!
//! is stepped with a semi-implicit Euler-Maruyama scheme. On top of the
//! stepper sit the tangent flow, the stochastic convolution, path
//! diagnostics, a two-chain coupling construction and a parallel ensemble
//! driver.
//!
//! ```
//! use spe_core::prelude::*;
//!
//! let spectrum = std::sync::Arc::new(Spectrum::new(2, 2).unwrap());
//! let model = PrimitiveEquations::new(spectrum.clone(), PhysicalParams::default()).unwrap();
//! let y = make_initial_state(&spectrum, &InitialKind::RandomSmooth { seed: 1, decay: 4.0, amplitude: 0.1 });
//! let drift = model.galerkin_drift(&y).unwrap();
//! assert!(drift.norm_sq().is_finite());
//! ```

pub mod checkpoint;
pub mod config;
pub mod coupling;
pub mod diagnostics;
pub mod ensemble;
pub mod error;
pub mod integrator;
pub mod io;
pub mod noise;
pub mod operators;
pub mod rng;
pub mod spectral;
pub mod state;
pub mod verify;

pub use error::{Result, SpeError};

pub mod prelude {
    pub use crate::config::RunConfig;
    pub use crate::coupling::{CouplingChain, CouplingConfig, Regime};
    pub use crate::diagnostics::{ObservableSet, TrajectoryRecord};
    pub use crate::ensemble::{EnsembleSpec, InitialLaw};
    pub use crate::error::{Result, SpeError};
    pub use crate::integrator::{integrate, Scheme, Stepper, StepperConfig};
    pub use crate::noise::{certify_h1, NoiseEnvelope};
    pub use crate::operators::{DriftTerms, PrimitiveEquations};
    pub use crate::rng::NoiseStream;
    pub use crate::spectral::{Channel, ModeIndex, Parity, SpectralField, Spectrum, Transform, Truncation};
    pub use crate::state::{make_initial_state, InitialKind, PhysicalParams, StateY};
}
