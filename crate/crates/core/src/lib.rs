//! Policy-optimization laboratory: mirror descent with convolutional function
//! approximation on MDPs whose states live on a low-dimensional manifold
//! embedded in a high-dimensional ambient space.
//!
//! The crate is organised as a stack of small modules:
//!
//! - [`manifold`]: ε-net point clouds, graph geodesics, Lipschitz/Hölder
//!   diagnostics (constant estimation, envelopes, witness arithmetic).
//! - [`env`]: finite MDPs (optionally carried on a net), exact linear-algebra
//!   oracles — policy evaluation, optimal values, discounted visitation,
//!   distribution-mismatch and smoothness reports.
//! - [`sampler`]: geometric-stopping simulation of the discounted visitation
//!   measure and regression datasets for the critic.
//! - [`cnn`]: a one-sided convolutional network class with hard parameter
//!   caps, exact reverse-mode gradients, and capped/truncated ERM training.
//! - [`spline`]: tensor-product linear B-spline interpolation together with a
//!   sup-norm approximation-rate checker.
//! - [`npmd`]: schedules, softmax policies, mirror-descent updates (both the
//!   exact tabular loop and the sampled actor–critic loop) and run logging.

pub mod cnn;
pub mod env;
pub mod manifold;
pub mod npmd;
pub mod sampler;
pub mod spline;
