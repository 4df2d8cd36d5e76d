//! Binaural signal matching (BSM) filter design for head-mounted and other
//! rigid-sphere microphone arrays.
//!
//! The crate designs per-frequency filters `c(f)` that map `M` microphone
//! signals to two ear signals, `z = c^H x`, by three methods:
//!
//! * [`design::mse_filters`]: regularized complex least squares;
//! * [`design::magls_filters`]: magnitude least squares by variable
//!   exchange, optionally followed by [`design::apply_covariance_constraint`];
//! * [`imagls::optimize_imagls`]: magnitude least squares with an added
//!   gammatone-weighted interaural level difference penalty, solved by
//!   L-BFGS with analytic Wirtinger gradients.
//!
//! Steering vectors come from the rigid-sphere scattering model in
//! [`array`]; evaluation lives in [`metrics`] and time-domain rendering in
//! [`render`]. All spectra use the `e^{-i 2 pi f t}` time convention.

// `!(x > 0.0)` deliberately rejects NaN together with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array;
pub mod bank;
mod container;
pub mod design;
pub mod error;
pub mod gammatone;
pub mod hrtf;
pub mod imagls;
pub mod metrics;
pub mod render;
pub mod sphmath;
#[cfg(test)]
mod testutil;

pub use array::{ArrayGeometry, Baffle, Direction, SteeringMatrix};
pub use bank::{DesignKind, FilterBank};
pub use design::{DesignProblem, MaglsSettings};
pub use error::{Error, Result};
pub use gammatone::IldSpec;
pub use hrtf::{HrtfSet, SphericalGrid};
pub use imagls::{ImaglsConfig, ImaglsOutcome, InitKind};
pub use metrics::EvalReport;
pub use render::{FirSet, MultichannelAudio};
pub use sphmath::Complex;
