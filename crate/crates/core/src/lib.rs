//! Library for discovering which covariates causally drive the strength of
//! extremal dependence between two variables.
//!
//! The pieces, bottom to top:
//!
//! * [`evt`]: GEV margins and the unit Frechet probability integral transform.
//! * [`copula`]: bivariate max-stable dependence families (logistic,
//!   Husler-Reiss), Pickands functions, extremal coefficients, and an exact
//!   conditional-inversion sampler.
//! * [`projection`]: scalar projections of a dependent pair whose location
//!   encodes the extremal coefficient.
//! * [`gam`]: penalized additive fitting of a Gumbel location model for the
//!   projection, and of covariate-dependent GEV margins.
//! * [`adtest`]: k-sample Anderson-Darling test for equality of residual
//!   distributions across environments.
//! * [`icp`]: invariant-subset search over covariate sets.
//! * [`scm`]: structural simulation designs used by the study harness.
//! * [`experiments`]: reproducible simulation studies over parameter grids.
//! * [`pipeline`]: the end-to-end application on station-level hourly data.

pub mod adtest;
pub mod copula;
pub mod error;
pub mod evt;
pub mod experiments;
pub mod gam;
pub mod icp;
pub mod pipeline;
pub mod projection;
pub mod scm;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
