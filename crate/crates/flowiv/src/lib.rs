//! Flow-occupancy fundamental diagram estimation for loop detector data.
//!
//! Observed flow-occupancy scatter mixes the structural response of flow to
//! occupancy with feedback and shared shocks, so a plain curve fit of flow on
//! occupancy is biased. The estimator here treats occupancy as endogenous and
//! uses lagged detector occupancy (same slot window, previous workday) as an
//! instrument:
//!
//! ```text
//! q = S(o) + e2          structural flow curve
//! o = h(z) + e1          first stage on the lagged instrument
//! (e1, e2) ~ DPM         joint error density, Dirichlet process mixture
//! ```
//!
//! Both `S` and `h` are penalized B-splines; the joint error term is a
//! truncated Dirichlet process mixture of bivariate Gaussians whose
//! conditional mean acts as a control function. Everything is sampled in one
//! blocked Gibbs sweep with seeded, reproducible draws.
//!
//! The crate also carries the surrounding workflow: detector CSV ingestion
//! and instrument construction, simultaneous credible bands, capacity and
//! flow-drop analysis, parametric baselines (polynomial OLS and 2SLS, weak
//! instrument F tests), and the simulation study used to benchmark the
//! estimators against each other.

// Validation guards are written `!(x > 0.0)` on purpose so NaN fails them;
// sampler loops index several parallel arrays at once, where the iterator
// rewrite obscures more than it helps.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod baselines;
pub mod cli;
pub mod error;
pub mod ingest;
pub mod mixture;
pub mod npiv;
pub mod simulation;
pub mod splines;
pub mod summary;

pub use error::{Error, Result};
pub use ingest::RegressionSample;
pub use npiv::{fit_np, fit_npiv, McmcConfig, MixtureSpec, PosteriorDraws, SplinePriors};
pub use summary::CurveBand;
