//! Torque-limited pendulum swing-up. θ = 0 is upright; the observation is
//! `(cos θ, sin θ, θ̇)` and the reward penalizes angle, speed, and effort.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::{clamp_action, Env, EnvSpec, StepResult};

const DT: f64 = 0.05;
const GRAVITY: f64 = 10.0;
const MASS: f64 = 1.0;
const LENGTH: f64 = 1.0;
const MAX_SPEED: f64 = 8.0;
const MAX_TORQUE: f64 = 2.0;
const MAX_STEPS: u64 = 200;

pub struct PendulumEnv {
    theta: f64,
    theta_dot: f64,
    steps: u64,
    clamp_events: u64,
}

impl PendulumEnv {
    pub fn new() -> Self {
        Self { theta: 0.0, theta_dot: 0.0, steps: 0, clamp_events: 0 }
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

impl Default for PendulumEnv {
    fn default() -> Self {
        Self::new()
    }
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(theta: f64) -> f64 {
    let a = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if a == -PI {
        PI
    } else {
        a
    }
}

impl Env for PendulumEnv {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            obs_dim: 3,
            act_dim: 1,
            action_bound: MAX_TORQUE,
            max_episode_steps: MAX_STEPS,
            dt: DT,
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        self.theta = rng.random_range(-PI..PI);
        self.theta_dot = rng.random_range(-1.0..1.0);
        self.steps = 0;
        self.observe()
    }

    /// Semi-implicit Euler: velocity first, then position; the reward is
    /// computed on the updated state.
    fn step(&mut self, action: &[f64]) -> StepResult {
        debug_assert_eq!(action.len(), 1);
        let u = clamp_action(action, MAX_TORQUE, &mut self.clamp_events)[0];

        let accel = 3.0 * GRAVITY / (2.0 * LENGTH) * self.theta.sin()
            + 3.0 / (MASS * LENGTH * LENGTH) * u;
        self.theta_dot = (self.theta_dot + accel * DT).clamp(-MAX_SPEED, MAX_SPEED);
        self.theta = wrap_angle(self.theta + self.theta_dot * DT);
        self.steps += 1;

        let angle = wrap_angle(self.theta);
        let reward = -(angle * angle + 0.1 * self.theta_dot * self.theta_dot + 0.001 * u * u);

        StepResult {
            next_state: self.observe(),
            reward,
            done: false,
            truncated: self.steps >= MAX_STEPS,
        }
    }

    fn clamp_events(&self) -> u64 {
        self.clamp_events
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn upright_equilibrium_is_fixed_with_zero_reward() {
        let mut env = PendulumEnv::new();
        env.theta = 0.0;
        env.theta_dot = 0.0;
        let r = env.step(&[0.0]);
        assert_eq!(r.next_state, vec![1.0, 0.0, 0.0]);
        assert_eq!(r.reward, 0.0);
    }

    #[test]
    fn hanging_down_pays_pi_squared() {
        let mut env = PendulumEnv::new();
        env.theta = PI;
        env.theta_dot = 0.0;
        let r = env.step(&[0.0]);
        // sin π = 0 up to rounding, so the state barely moves and the angle
        // cost dominates.
        assert!((r.reward + PI * PI).abs() < 1e-9, "reward {}", r.reward);
    }

    #[test]
    fn reset_speed_is_within_documented_range() {
        let mut env = PendulumEnv::new();
        for seed in 0..200 {
            let s = env.reset(seed);
            assert!(s[2].abs() <= 1.0);
        }
    }

    // Duplicate-implementation oracle: an independently scripted integrator
    // must reproduce the environment step for step.
    #[test]
    fn trajectories_match_scripted_integrator() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let mut env = PendulumEnv::new();
        let obs0 = env.reset(5);
        let (mut th, mut thd) = (env.theta, env.theta_dot);
        assert_eq!(obs0, vec![th.cos(), th.sin(), thd]);

        for _ in 0..400 {
            let u: f64 = rng.random_range(-2.0..2.0);
            let r = env.step(&[u]);

            thd += (15.0 * th.sin() + 3.0 * u) * 0.05;
            thd = thd.clamp(-8.0, 8.0);
            th = wrap_angle(th + thd * 0.05);
            let expected_reward = -(wrap_angle(th).powi(2) + 0.1 * thd * thd + 0.001 * u * u);

            assert!((r.next_state[0] - th.cos()).abs() < 1e-12);
            assert!((r.next_state[1] - th.sin()).abs() < 1e-12);
            assert!((r.next_state[2] - thd).abs() < 1e-12);
            assert!((r.reward - expected_reward).abs() < 1e-12);
            if r.truncated {
                env.reset(6);
                th = env.theta;
                thd = env.theta_dot;
            }
        }
    }

    #[test]
    fn passive_dynamics_never_gain_energy_beyond_drift() {
        // E = θ̇²/6 + (g/2)·cos θ for m = l = 1, g = 10. The semi-implicit
        // integrator's worst measured single-step gain at dt = 0.05 is 0.379
        // (at top speed); 0.4 bounds the drift without ever tripping on it.
        let energy = |th: f64, thd: f64| thd * thd / 6.0 + 5.0 * th.cos();
        let mut env = PendulumEnv::new();
        for seed in 0..50 {
            env.reset(seed);
            let mut prev = energy(env.theta, env.theta_dot);
            for _ in 0..200 {
                env.step(&[0.0]);
                let now = energy(env.theta, env.theta_dot);
                assert!(now - prev <= 0.4, "energy jumped from {prev} to {now}");
                prev = now;
            }
        }
    }

    #[test]
    fn wrap_angle_lands_in_half_open_interval() {
        for k in -20..20 {
            let x = 0.37 * k as f64;
            let w = wrap_angle(x);
            assert!(w > -PI && w <= PI, "wrap({x}) = {w}");
            assert!(((w - x) / (2.0 * PI)).round() * 2.0 * PI + x - w < 1e-9);
        }
        assert_eq!(wrap_angle(-PI), PI);
        assert_eq!(wrap_angle(PI), PI);
    }
}
