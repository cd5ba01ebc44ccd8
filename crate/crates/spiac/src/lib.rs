//! Actor-critic continuous control trained by stochastic proximal iteration.
//!
//! Target networks are the slow variable of a damped proximal-point
//! iteration: each training step runs a small inner gradient loop on the
//! batch loss plus an MSE proximal penalty toward the targets, then drags the
//! targets toward the result. The combined batch loss couples twin critics
//! (huberized TD errors against a min-of-targets bootstrap) with a policy
//! term that maximizes the averaged target-critic value.
//!
//! The crate is self-contained: hand-rolled dense networks with exact
//! reverse-mode gradients ([`nn`]), the scalar objectives ([`losses`]), the
//! proximal machinery and baselines ([`prox`]), the agent ([`agent`]),
//! checkable toy environments with a Riccati oracle ([`envs`]), and the
//! training/evaluation harness ([`harness`]).

pub mod agent;
pub mod envs;
pub mod error;
pub mod harness;
pub mod losses;
pub mod nn;
pub mod prox;
pub mod seeding;

pub use error::{Error, Result};
