//! Spectral-injection diagnostics for equivariant readouts.
//!
//! The crate is organised bottom-up:
//!
//! * [`sphharm`]: real spherical harmonics, product quadrature and projection.
//! * [`cgspan`]: Gaunt coefficients, harmonic products and executable span
//!   checks for polynomial readouts of degree-`L` features.
//! * [`injector`]: body-frame construction and controlled angular-degree
//!   energy/force injection into molecular datasets.
//! * [`probe`]: ideal polynomial least-squares probes, the spectral
//!   prediction network head and the synthetic saturation grid.
//! * [`metrics`]: recovery fraction, sharpness, injected-residual R² and the
//!   bootstrap protocols.
//! * [`bandwidth`]: per-atom angular bandwidth and natural-energy spectra.
//! * [`xyz`]: extended-XYZ and point-cloud I/O.

pub mod bandwidth;
pub mod cgspan;
mod error;
pub mod injector;
pub(crate) mod linalg;
pub mod metrics;
pub mod probe;
pub mod rng;
pub mod sphharm;
pub mod xyz;

pub use error::{Error, Result};
