//! Supervision-target generation for scattering-structure-aware SAR airplane
//! detection.
//!
//! The crate turns single-channel amplitude chips into training targets:
//!
//! * [`scattering`] extracts dominant scattering points with a Harris-Laplace
//!   detector,
//! * [`mixture`] fits a Gaussian mixture to the point coordinates by EM and
//!   replaces under-populated components by a fixed small Gaussian,
//! * [`heatmap`] renders the weight-sorted mixture as a K-channel heatmap
//!   truncated at three Mahalanobis units, and scores predictions with MSE,
//! * [`pgip`] builds per-head binary instance-perception targets and the
//!   focal loss used to score them,
//! * [`pgfe`] evaluates the cross-attention feature enhancement block and
//!   its exact reverse-mode gradients,
//! * [`pipeline`] drives all of the above over a directory of chips.

// `!(x > 0.0)` is deliberate: it rejects NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod container;
pub mod error;
pub mod grid;
pub mod heatmap;
pub mod imaging;
pub mod mixture;
pub mod pgfe;
pub mod pgip;
pub mod pipeline;
pub mod rng;
pub mod scattering;

pub use error::{Error, Result};
pub use grid::Grid;
