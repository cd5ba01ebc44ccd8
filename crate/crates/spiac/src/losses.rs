//! Scalar objectives of the combined actor-critic loss: huberized TD errors
//! against a min-of-target-critics regression target, the averaged-target
//! policy value, their β-scaled sum, and the MSE proximal penalty that ties
//! fast parameters to their targets.

use crate::error::{Error, Result};
use crate::nn::{BackpropScratch, Mlp, ParamVector};

/// Transition point of the huber loss. "Smooth-L1" convention.
pub const HUBER_DELTA: f64 = 1.0;

/// Inputs of one TD regression target.
#[derive(Debug, Clone, Copy)]
pub struct TdTargetInputs {
    pub reward: f64,
    pub done: bool,
    pub gamma: f64,
    pub q1_target: f64,
    pub q2_target: f64,
}

/// The combined loss, split by term. `total = td1 + td2 + beta·policy`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub td1: f64,
    pub td2: f64,
    pub policy: f64,
    pub total: f64,
}

/// Pointwise TD residual loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Huber,
    /// Quadratic everywhere, `r²/2`; agrees with huber on `|r| ≤ 1`.
    Mse,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Huber => "huber",
            LossKind::Mse => "mse",
        }
    }

    /// Loss value and derivative at residual `r`.
    pub fn eval(self, residual: f64) -> Result<(f64, f64)> {
        match self {
            LossKind::Huber => huber(residual),
            LossKind::Mse => {
                if !residual.is_finite() {
                    return Err(Error::Value(format!("non-finite residual {residual}")));
                }
                Ok((0.5 * residual * residual, residual))
            }
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "huber" => Ok(LossKind::Huber),
            "mse" => Ok(LossKind::Mse),
            other => Err(Error::Config(format!("unknown loss kind {other:?} (huber or mse)"))),
        }
    }
}

/// Which target-critic estimate the policy maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyValue {
    /// Bootstrapped estimate: average of both target critics.
    AvgTargets,
    /// Ablation: first target critic alone.
    SingleTargetQ1,
}

impl PolicyValue {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyValue::AvgTargets => "avg_targets",
            PolicyValue::SingleTargetQ1 => "single_target_q1",
        }
    }
}

impl std::str::FromStr for PolicyValue {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg_targets" => Ok(PolicyValue::AvgTargets),
            "single_target_q1" => Ok(PolicyValue::SingleTargetQ1),
            other => Err(Error::Config(format!(
                "unknown policy value {other:?} (avg_targets or single_target_q1)"
            ))),
        }
    }
}

/// Knobs of [`combined_batch_loss`].
#[derive(Debug, Clone, Copy)]
pub struct LossOptions {
    pub beta: f64,
    pub loss_kind: LossKind,
    pub policy_value: PolicyValue,
}

/// One prepared transition: the stored state/action pair and its frozen
/// regression target `y`. `y` is a constant as far as gradients go.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub target_value: f64,
}

/// Gradients of the combined batch loss with respect to the fast networks.
/// Target networks are constants of the loss; they have no gradient.
#[derive(Debug, Clone)]
pub struct FastGrads {
    pub q1: ParamVector,
    pub q2: ParamVector,
    pub policy: ParamVector,
}

/// Huber loss with δ = 1: `r²/2` on `|r| ≤ δ`, `δ(|r| − δ/2)` beyond.
/// Returns `(value, derivative)`; the derivative is `clamp(r, −δ, δ)`.
pub fn huber(residual: f64) -> Result<(f64, f64)> {
    if !residual.is_finite() {
        return Err(Error::Value(format!("non-finite residual {residual}")));
    }
    let a = residual.abs();
    if a <= HUBER_DELTA {
        Ok((0.5 * residual * residual, residual))
    } else {
        Ok((HUBER_DELTA * (a - 0.5 * HUBER_DELTA), residual.clamp(-HUBER_DELTA, HUBER_DELTA)))
    }
}

/// Bellman regression target `y = r + γ·min(q1', q2')`, truncated to `r` on
/// terminal transitions.
pub fn td_target(inp: &TdTargetInputs) -> Result<f64> {
    if !(0.0..1.0).contains(&inp.gamma) {
        return Err(Error::Argument(format!("gamma must be in [0,1), got {}", inp.gamma)));
    }
    if inp.done {
        Ok(inp.reward)
    } else {
        Ok(inp.reward + inp.gamma * inp.q1_target.min(inp.q2_target))
    }
}

/// Negated average of the two target-critic values: what the policy descends.
pub fn policy_loss(q1_target_value: f64, q2_target_value: f64) -> f64 {
    -0.5 * (q1_target_value + q2_target_value)
}

/// MSE proximal penalty between paired fast/target parameter vectors.
///
/// `value = strength · Σ_nets ½·mean((fast − target)²)` and
/// `grads[i] = strength·(fast[i] − target[i]) / count_i`, so each network's
/// term is scaled by its own parameter count. `strength` is `1/λ`.
pub fn proximal_penalty(
    fast: &[ParamVector],
    target: &[ParamVector],
    strength: f64,
) -> Result<(f64, Vec<ParamVector>)> {
    if fast.len() != target.len() {
        return Err(Error::Shape(format!(
            "proximal_penalty pairs {} fast with {} target vectors",
            fast.len(),
            target.len()
        )));
    }
    if !(strength >= 0.0) {
        return Err(Error::Argument(format!("proximal strength must be >= 0, got {strength}")));
    }
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(fast.len());
    for (f, t) in fast.iter().zip(target) {
        if f.len() != t.len() {
            return Err(Error::Shape(format!(
                "proximal_penalty length mismatch: fast {} vs target {}",
                f.len(),
                t.len()
            )));
        }
        let count = f.len() as f64;
        let mut sum_sq = 0.0;
        let mut g = ParamVector::zeros(f.len());
        for ((gi, &fi), &ti) in g.as_mut_slice().iter_mut().zip(f.as_slice()).zip(t.as_slice()) {
            let d = fi - ti;
            sum_sq += d * d;
            *gi = strength * d / count;
        }
        value += strength * 0.5 * sum_sq / count;
        grads.push(g);
    }
    Ok((value, grads))
}

/// Evaluates the combined loss on a batch and its exact gradients with
/// respect to the fast networks.
///
/// - `td1`, `td2`: batch means of `loss_kind(Q_i(s,a) − y)` with `y` from the
///   batch items, treated as a constant.
/// - `policy`: batch mean of the policy term evaluated at `(s, π(s))` through
///   the *target* critics; its gradient flows into the policy parameters only
///   (through the action input of the target critics), never into the target
///   critics or the fast critics.
/// - `total = td1 + td2 + beta·policy`.
pub fn combined_batch_loss(
    batch: &[BatchItem],
    policy: &Mlp,
    q1: &Mlp,
    q2: &Mlp,
    q1_target: &Mlp,
    q2_target: &Mlp,
    opts: &LossOptions,
) -> Result<(LossBreakdown, FastGrads)> {
    if batch.is_empty() {
        return Err(Error::Argument("combined_batch_loss needs a nonempty batch".into()));
    }
    if !(opts.beta >= 0.0) {
        return Err(Error::Argument(format!("beta must be >= 0, got {}", opts.beta)));
    }
    let obs_dim = policy.in_dim();
    let act_dim = policy.out_dim();
    if q1.in_dim() != obs_dim + act_dim || q2.in_dim() != obs_dim + act_dim {
        return Err(Error::Shape(format!(
            "critics expect obs+act = {} inputs, got q1 {} / q2 {}",
            obs_dim + act_dim,
            q1.in_dim(),
            q2.in_dim()
        )));
    }
    if q1_target.in_dim() != q1.in_dim() || q2_target.in_dim() != q2.in_dim() {
        return Err(Error::Shape("target critic input dims differ from fast critics".into()));
    }

    let inv_n = 1.0 / batch.len() as f64;
    let mut td1 = 0.0;
    let mut td2 = 0.0;
    let mut policy_term = 0.0;

    let mut grads = FastGrads {
        q1: ParamVector::zeros(q1.params().len()),
        q2: ParamVector::zeros(q2.params().len()),
        policy: ParamVector::zeros(policy.params().len()),
    };

    let mut tr_q1 = q1.make_trace();
    let mut tr_q2 = q2.make_trace();
    let mut tr_pi = policy.make_trace();
    let mut tr_q1t = q1_target.make_trace();
    let mut tr_q2t = q2_target.make_trace();
    let mut scratch = BackpropScratch::default();

    let mut sa = vec![0.0; obs_dim + act_dim];
    let mut da1 = vec![0.0; obs_dim + act_dim];
    let mut da2 = vec![0.0; obs_dim + act_dim];
    let mut pi_upstream = vec![0.0; act_dim];

    for item in batch {
        if item.state.len() != obs_dim || item.action.len() != act_dim {
            return Err(Error::Shape(format!(
                "batch item dims ({}, {}) but networks expect ({}, {})",
                item.state.len(),
                item.action.len(),
                obs_dim,
                act_dim
            )));
        }
        sa[..obs_dim].copy_from_slice(&item.state);
        sa[obs_dim..].copy_from_slice(&item.action);

        // TD terms on the stored action.
        q1.forward_traced(&sa, &mut tr_q1)?;
        let (v1, d1) = opts.loss_kind.eval(tr_q1.output()[0] - item.target_value)?;
        td1 += v1 * inv_n;
        q1.backward_traced(&tr_q1, &[d1], inv_n, Some(&mut grads.q1), None, &mut scratch);

        q2.forward_traced(&sa, &mut tr_q2)?;
        let (v2, d2) = opts.loss_kind.eval(tr_q2.output()[0] - item.target_value)?;
        td2 += v2 * inv_n;
        q2.backward_traced(&tr_q2, &[d2], inv_n, Some(&mut grads.q2), None, &mut scratch);

        // Policy term at (s, π(s)) through the target critics.
        policy.forward_traced(&item.state, &mut tr_pi)?;
        sa[obs_dim..].copy_from_slice(tr_pi.output());

        q1_target.forward_traced(&sa, &mut tr_q1t)?;
        let v1t = tr_q1t.output()[0];
        let (value, w1, w2) = match opts.policy_value {
            PolicyValue::AvgTargets => {
                q2_target.forward_traced(&sa, &mut tr_q2t)?;
                (policy_loss(v1t, tr_q2t.output()[0]), -0.5, -0.5)
            }
            PolicyValue::SingleTargetQ1 => (-v1t, -1.0, 0.0),
        };
        policy_term += value * inv_n;

        if opts.beta > 0.0 {
            // Only the action-input gradient of the target critics is needed;
            // their parameters stay constants.
            let coeff = opts.beta * inv_n;
            q1_target.backward_traced(&tr_q1t, &[1.0], coeff * w1, None, Some(&mut da1), &mut scratch);
            for j in 0..act_dim {
                pi_upstream[j] = da1[obs_dim + j];
            }
            if w2 != 0.0 {
                q2_target.backward_traced(&tr_q2t, &[1.0], coeff * w2, None, Some(&mut da2), &mut scratch);
                for j in 0..act_dim {
                    pi_upstream[j] += da2[obs_dim + j];
                }
            }
            policy.backward_traced(&tr_pi, &pi_upstream, 1.0, Some(&mut grads.policy), None, &mut scratch);
        }
    }

    let breakdown = LossBreakdown {
        td1,
        td2,
        policy: policy_term,
        total: td1 + td2 + opts.beta * policy_term,
    };
    Ok((breakdown, grads))
}
