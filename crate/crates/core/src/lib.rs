//! Effective kernels for deep Gaussian processes.
//!
//! * [`kernel`]: single-layer covariance functions.
//! * [`compose`]: stacked kernels through exact second-moment wraps, χ and
//!   derivative diagnostics, and the JSON spec format.
//! * [`moments`]: Gaussian expectation identities, fourth-moment pairings, an
//!   ancestral sampler of the un-marginalized process and Monte-Carlo checks.
//! * [`gp`]: exact GP regression over any [`KernelSpec`].
//! * [`optimize`]: multi-restart simplex search of the log marginal likelihood.
//! * [`data`]: CSV datasets and synthetic generators.

pub mod compose;
pub mod data;
pub mod error;
pub mod gp;
pub mod kernel;
pub mod moments;
pub mod optimize;
pub mod rng;
pub mod sweep;

pub use compose::{chi, expected_sq_derivative, wrap_outer, InnerEval, KernelSpec, OuterKernel};
pub use data::Dataset;
pub use error::{Error, Result};
pub use gp::{GpModel, GramResult};
pub use kernel::BaseKernel;
pub use moments::MomentEstimate;
pub use optimize::{FitReport, HyperVector};
