//! Discrete-time Riccati solver for the 2-state / 1-input LQR environment.
//!
//! Iterates the (optionally discounted) discrete algebraic Riccati equation
//! to a fixed point and returns the cost matrix `P` and feedback gain `K`
//! of the optimal controller `u = -K·x`. This is the independent oracle the
//! learned LQR policies are judged against.

use crate::error::{Error, Result};

pub type Mat2 = [[f64; 2]; 2];
pub type Vec2 = [f64; 2];

/// Fixed point of the discounted DARE.
#[derive(Debug, Clone, Copy)]
pub struct DareSolution {
    /// Quadratic cost-to-go matrix: `V(x) = -xᵀPx` as a return.
    pub p: Mat2,
    /// Feedback gain of the optimal controller `u = -K·x`.
    pub gain: Vec2,
    pub iterations: usize,
}

fn mat_vec(m: &Mat2, v: &Vec2) -> Vec2 {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

fn transpose(m: &Mat2) -> Mat2 {
    [[m[0][0], m[1][0]], [m[0][1], m[1][1]]]
}

fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

pub fn quadratic_form(m: &Mat2, v: &Vec2) -> f64 {
    let mv = mat_vec(m, v);
    v[0] * mv[0] + v[1] * mv[1]
}

/// Solves `P = Q + γAᵀPA − γ²(AᵀPB)(BᵀPA)/(r + γBᵀPB)` by fixed-point
/// iteration from `P = Q`, stopping when the elementwise change drops below
/// `tol`. `gamma = 1` gives the undiscounted equation.
pub fn solve_dare(
    a: &Mat2,
    b: &Vec2,
    q: &Mat2,
    r: f64,
    gamma: f64,
    tol: f64,
    max_iterations: usize,
) -> Result<DareSolution> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Argument(format!("gamma must be in (0,1], got {gamma}")));
    }
    if !(r > 0.0) {
        return Err(Error::Argument(format!("control cost must be positive, got {r}")));
    }
    let a_t = transpose(a);
    let mut p = *q;
    for it in 1..=max_iterations {
        // s = r + γ·BᵀPB (scalar), m = BᵀPA (row vector).
        let pb = mat_vec(&p, b);
        let s = r + gamma * (b[0] * pb[0] + b[1] * pb[1]);
        let pa = mat_mul(&p, a);
        let m = [b[0] * pa[0][0] + b[1] * pa[1][0], b[0] * pa[0][1] + b[1] * pa[1][1]];
        let atpa = mat_mul(&a_t, &pa);
        let mut next = *q;
        let mut delta = 0.0f64;
        for i in 0..2 {
            for j in 0..2 {
                let v = q[i][j] + gamma * atpa[i][j] - gamma * gamma * m[i] * m[j] / s;
                delta = delta.max((v - p[i][j]).abs());
                next[i][j] = v;
            }
        }
        p = next;
        if delta < tol {
            let pb = mat_vec(&p, b);
            let s = r + gamma * (b[0] * pb[0] + b[1] * pb[1]);
            let pa = mat_mul(&p, a);
            let gain = [
                gamma * (b[0] * pa[0][0] + b[1] * pa[1][0]) / s,
                gamma * (b[0] * pa[0][1] + b[1] * pa[1][1]) / s,
            ];
            return Ok(DareSolution { p, gain, iterations: it });
        }
    }
    Err(Error::Value(format!("Riccati iteration did not converge within {max_iterations} steps")))
}

/// The optimal action for state `x` under a solved gain.
pub fn optimal_action(sol: &DareSolution, x: &[f64]) -> f64 {
    -(sol.gain[0] * x[0] + sol.gain[1] * x[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::lqr;
    use crate::envs::{Env, LqrEnv};

    fn solve(gamma: f64) -> DareSolution {
        solve_dare(&lqr::A, &lqr::B, &lqr::STATE_COST, lqr::CONTROL_COST, gamma, 1e-10, 100_000).unwrap()
    }

    #[test]
    fn solution_satisfies_the_dare_residual() {
        let sol = solve(1.0);
        // Recompute one iteration from the solution; it must not move.
        let again = solve_dare(&lqr::A, &lqr::B, &lqr::STATE_COST, lqr::CONTROL_COST, 1.0, 1e-12, 200_000)
            .unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((sol.p[i][j] - again.p[i][j]).abs() < 1e-6);
            }
        }
        assert!(sol.p[0][0] > 0.0 && sol.p[1][1] > 0.0, "P must be positive on the diagonal");
        assert!((sol.p[0][1] - sol.p[1][0]).abs() < 1e-9, "P must stay symmetric");
    }

    // Discounted rollout oracle: the in-env discounted return of u = -K·x
    // from a fixed start must equal -x₀ᵀPx₀.
    #[test]
    fn discounted_rollout_matches_quadratic_value() {
        let gamma = 0.99;
        let sol = solve(gamma);
        let x0 = [0.3, -0.2];

        let mut env = LqrEnv::new();
        env.set_state(x0);
        let mut discounted = 0.0;
        let mut factor = 1.0;
        let mut max_u = 0.0f64;
        for _ in 0..200 {
            let state = env.state();
            let u = optimal_action(&sol, &state);
            max_u = max_u.max(u.abs());
            let r = env.step(&[u]);
            discounted += factor * r.reward;
            factor *= gamma;
            if r.done {
                panic!("optimal controller must not trip the divergence guard");
            }
        }
        assert!(max_u < env.spec().action_bound, "oracle rollout must not saturate, max |u| = {max_u}");
        let expected = -quadratic_form(&sol.p, &x0);
        assert!(
            (discounted - expected).abs() < 1e-6,
            "rollout {discounted} vs Riccati value {expected}"
        );
    }

    // The Riccati gain's undiscounted episode return dominates every other
    // linear controller's from the same starts (up to the small clipping and
    // finite-horizon slack).
    #[test]
    fn optimal_gain_upper_bounds_perturbed_gains() {
        let sol = solve(1.0);
        let starts = [[0.4, -0.3], [0.8, 0.6], [-1.0, 0.2], [0.1, 0.9]];
        let rollout = |gain: [f64; 2], x0: [f64; 2]| -> f64 {
            let mut env = LqrEnv::new();
            env.set_state(x0);
            let mut total = 0.0;
            for _ in 0..200 {
                let s = env.state();
                let u = (-(gain[0] * s[0] + gain[1] * s[1])).clamp(-2.0, 2.0);
                let r = env.step(&[u]);
                total += r.reward;
                if r.done {
                    break;
                }
            }
            total
        };
        for x0 in starts {
            let best = rollout(sol.gain, x0);
            for delta in [[0.5, 0.0], [0.0, 0.5], [-0.4, 0.4], [1.0, -0.5], [-0.8, -0.8]] {
                let perturbed = [sol.gain[0] + delta[0], sol.gain[1] + delta[1]];
                let other = rollout(perturbed, x0);
                assert!(
                    other <= best + 1e-6,
                    "perturbed gain {perturbed:?} beat the Riccati gain from {x0:?}: {other} > {best}"
                );
            }
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(solve_dare(&lqr::A, &lqr::B, &lqr::STATE_COST, 0.0, 1.0, 1e-10, 100).is_err());
        assert!(solve_dare(&lqr::A, &lqr::B, &lqr::STATE_COST, 0.1, 0.0, 1e-10, 100).is_err());
        assert!(matches!(
            solve_dare(&lqr::A, &lqr::B, &lqr::STATE_COST, 0.1, 1.0, 1e-10, 2),
            Err(Error::Value(_))
        ));
    }
}
