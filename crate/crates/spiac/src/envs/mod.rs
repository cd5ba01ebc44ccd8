//! Deterministic, dependency-free continuous-control environments with known
//! structure: a pendulum swing-up, a 2-D double-integrator reacher, and a
//! linear-quadratic regulator whose optimal return is computable by the
//! Riccati solver in [`riccati`].
//!
//! All rewards are non-positive. Terminal `done` means failure or goal, never
//! the time limit; hitting the step limit is reported as `truncated`.

pub mod lqr;
mod pendulum;
mod reacher;
pub mod riccati;

pub use lqr::LqrEnv;
pub use pendulum::PendulumEnv;
pub use reacher::Reacher2dEnv;

use crate::error::{Error, Result};

/// Static description of an environment's interface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvSpec {
    pub obs_dim: usize,
    pub act_dim: usize,
    /// Per-dimension symmetric action bound: valid actions lie in
    /// `[-action_bound, action_bound]`.
    pub action_bound: f64,
    pub max_episode_steps: u64,
    /// Integration / discretization step in seconds.
    pub dt: f64,
}

/// Outcome of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// Failure or goal condition; never set by the time limit alone.
    pub done: bool,
    /// The episode step limit was reached.
    pub truncated: bool,
}

/// A deterministic single-owner environment. `reset(seed)` is a pure function
/// of the seed; `step` is a pure function of the current state, the action,
/// and the environment constants.
pub trait Env: Send {
    fn spec(&self) -> EnvSpec;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> StepResult;
    /// How many action components arrived outside the bounds and were clamped.
    fn clamp_events(&self) -> u64;
}

/// Environment lookup by string id: `pendulum`, `reacher2d`, `lqr`.
pub fn make_env(id: &str) -> Result<Box<dyn Env>> {
    match id {
        "pendulum" => Ok(Box::new(PendulumEnv::new())),
        "reacher2d" => Ok(Box::new(Reacher2dEnv::new())),
        "lqr" => Ok(Box::new(LqrEnv::new())),
        other => Err(Error::Config(format!(
            "unknown environment id {other:?} (expected pendulum, reacher2d, or lqr)"
        ))),
    }
}

pub(crate) fn clamp_action(raw: &[f64], bound: f64, clamp_events: &mut u64) -> Vec<f64> {
    raw.iter()
        .map(|&u| {
            if u.abs() > bound {
                *clamp_events += 1;
                u.clamp(-bound, bound)
            } else {
                u
            }
        })
        .collect()
}
