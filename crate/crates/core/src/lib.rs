//! Scenario discovery for robust decision-making: sample an uncertainty
//! space, run a simulator under a policy lever, and search the results for
//! interpretable regions of vulnerable futures.
//!
//! The crate is organized around one pipeline:
//!
//! 1. [`experiment`] declares the uncertainty space, policy lever, simulator
//!    binding, and vulnerability rule.
//! 2. [`sampling`] draws Latin hypercube or uniform designs over the space.
//! 3. [`simulator`] evaluates scenarios (built-in stress surrogate plus
//!    analytic oracles with known vulnerable regions).
//! 4. [`prim`] and [`cart`] induce axis-aligned boxes over labeled samples.
//! 5. [`metamodel`] fits a Gaussian-process surrogate of the simulator, and
//!    [`adaptive`] uses it to steer sampling toward the vulnerable region.
//! 6. [`metrics`] provides regression scores and policy-sweep analytics.

// Validation guards use `!(x >= y)` on purpose: NaN must fail the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod cart;
pub mod error;
pub mod experiment;
pub mod metamodel;
pub mod metrics;
pub mod prim;
pub mod sampling;
pub mod seed;
pub mod simulator;

pub use error::{Error, Result};
