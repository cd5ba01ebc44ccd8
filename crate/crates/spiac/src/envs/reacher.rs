//! Damped 2-D double integrator steering a point mass to a goal. The episode
//! ends in success when the mass is within 0.05 of the goal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::{clamp_action, Env, EnvSpec, StepResult};

const DT: f64 = 0.05;
const DAMPING: f64 = 0.99;
const MAX_ACCEL: f64 = 1.0;
const GOAL_RADIUS: f64 = 0.05;
const MAX_STEPS: u64 = 200;

pub struct Reacher2dEnv {
    pos: [f64; 2],
    vel: [f64; 2],
    goal: [f64; 2],
    steps: u64,
    clamp_events: u64,
}

impl Reacher2dEnv {
    pub fn new() -> Self {
        Self { pos: [0.0; 2], vel: [0.0; 2], goal: [0.0; 2], steps: 0, clamp_events: 0 }
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1], self.goal[0], self.goal[1]]
    }

    fn distance(&self) -> f64 {
        let dx = self.pos[0] - self.goal[0];
        let dy = self.pos[1] - self.goal[1];
        (dx * dx + dy * dy).sqrt()
    }
}

impl Default for Reacher2dEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for Reacher2dEnv {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            obs_dim: 6,
            act_dim: 2,
            action_bound: MAX_ACCEL,
            max_episode_steps: MAX_STEPS,
            dt: DT,
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        self.pos = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        self.vel = [0.0, 0.0];
        self.goal = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        self.steps = 0;
        self.observe()
    }

    /// `vel ← damping·vel + u·dt`, `pos ← pos + vel·dt`; reward and the goal
    /// test use the updated position.
    fn step(&mut self, action: &[f64]) -> StepResult {
        debug_assert_eq!(action.len(), 2);
        let u = clamp_action(action, MAX_ACCEL, &mut self.clamp_events);
        for i in 0..2 {
            self.vel[i] = DAMPING * self.vel[i] + u[i] * DT;
            self.pos[i] += self.vel[i] * DT;
        }
        self.steps += 1;

        let dist = self.distance();
        let effort = u[0] * u[0] + u[1] * u[1];
        StepResult {
            next_state: self.observe(),
            reward: -dist - 0.01 * effort,
            done: dist < GOAL_RADIUS,
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
    fn at_goal_terminates_immediately_with_tiny_cost() {
        let mut env = Reacher2dEnv::new();
        env.pos = [0.3, -0.2];
        env.goal = [0.3, -0.2];
        env.vel = [0.0, 0.0];
        let r = env.step(&[0.0, 0.0]);
        assert!(r.done);
        assert!(r.reward.abs() < 1e-12);
    }

    #[test]
    fn coasting_from_rest_stays_put() {
        let mut env = Reacher2dEnv::new();
        env.pos = [0.5, 0.5];
        env.goal = [-0.5, 0.0];
        env.vel = [0.0, 0.0];
        let before = env.distance();
        let r = env.step(&[0.0, 0.0]);
        assert_eq!(&r.next_state[0..2], &[0.5, 0.5]);
        assert!((r.reward + before).abs() < 1e-12);
    }

    // Duplicate-implementation oracle.
    #[test]
    fn trajectories_match_scripted_integrator() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let mut env = Reacher2dEnv::new();
        env.reset(9);
        let (mut pos, mut vel, goal) = (env.pos, env.vel, env.goal);
        for _ in 0..300 {
            let u = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let r = env.step(&u);

            for i in 0..2 {
                vel[i] = 0.99 * vel[i] + u[i] * 0.05;
                pos[i] += vel[i] * 0.05;
            }
            let dist = ((pos[0] - goal[0]).powi(2) + (pos[1] - goal[1]).powi(2)).sqrt();
            let expected_reward = -dist - 0.01 * (u[0] * u[0] + u[1] * u[1]);

            for i in 0..2 {
                assert!((r.next_state[i] - pos[i]).abs() < 1e-12);
                assert!((r.next_state[2 + i] - vel[i]).abs() < 1e-12);
            }
            assert!((r.reward - expected_reward).abs() < 1e-12);
            assert_eq!(r.done, dist < 0.05);
            if r.done || r.truncated {
                break;
            }
        }
    }

    #[test]
    fn constant_thrust_reaches_a_nearby_goal() {
        let mut env = Reacher2dEnv::new();
        env.pos = [0.0, 0.0];
        env.goal = [0.3, 0.0];
        env.vel = [0.0, 0.0];
        let mut done = false;
        for _ in 0..200 {
            let u: Vec<f64> = (0..2)
                .map(|i| (4.0 * (env.goal[i] - env.pos[i]) - 8.0 * env.vel[i]).clamp(-1.0, 1.0))
                .collect();
            let r = env.step(&u);
            if r.done {
                done = true;
                break;
            }
        }
        assert!(done, "PD controller should reach the goal");
    }
}
