//! Proximal machinery: analytic proximal operators for convex test
//! functions, the damped proximal iteration, the smoothed-objective gradient
//! `(x − prox(x))/t`, and the batch-level stochastic proximal step used for
//! training — an inner gradient loop on the proximal loss followed by target
//! averaging. Plain SGD and Adam steps live here too, as the baselines the
//! degenerate and ablation comparisons are made against.

use crate::error::{Error, Result};
use crate::losses::proximal_penalty;
use crate::nn::{param_axpy, polyak_update, ParamVector};

/// Hyperparameters of the stochastic proximal step.
///
/// `prox_strength` is `1/λ`: the weight of the MSE penalty tying fast
/// parameters to their targets. `tau` is the damping constant of the target
/// average, `n_prox` the number of inner gradient steps per batch, and
/// `learning_rate` the inner step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpiConfig {
    pub prox_strength: f64,
    pub tau: f64,
    pub n_prox: usize,
    pub learning_rate: f64,
}

impl Default for SpiConfig {
    fn default() -> Self {
        Self { prox_strength: 1.0, tau: 0.005, n_prox: 5, learning_rate: 3e-4 }
    }
}

impl SpiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.prox_strength >= 0.0 && self.prox_strength.is_finite()) {
            return Err(Error::Argument(format!("prox_strength must be >= 0, got {}", self.prox_strength)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Argument(format!("tau must be in (0,1], got {}", self.tau)));
        }
        if self.n_prox == 0 {
            return Err(Error::Argument("n_prox must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Update rule selection for the agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerVariant {
    Spi,
    Sgd,
    Adam,
}

impl OptimizerVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerVariant::Spi => "spi",
            OptimizerVariant::Sgd => "sgd",
            OptimizerVariant::Adam => "adam",
        }
    }
}

impl std::str::FromStr for OptimizerVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spi" => Ok(OptimizerVariant::Spi),
            "sgd" => Ok(OptimizerVariant::Sgd),
            "adam" => Ok(OptimizerVariant::Adam),
            other => Err(Error::Config(format!("unknown optimizer {other:?} (spi, sgd, or adam)"))),
        }
    }
}

/// Optimizer selection plus the Adam moment constants (ignored unless the
/// variant is Adam).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerMode {
    pub variant: OptimizerVariant,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for OptimizerMode {
    fn default() -> Self {
        Self { variant: OptimizerVariant::Spi, adam_beta1: 0.9, adam_beta2: 0.999, adam_eps: 1e-8 }
    }
}

/// Proximal operator of `f(x) = ½·a·x²`:
/// `argmin_x ½a·x² + (x−y)²/(2λ) = y / (1 + λa)`.
pub fn prox_quadratic(y: f64, lambda: f64, a: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::Argument(format!("lambda must be positive, got {lambda}")));
    }
    if a < 0.0 {
        return Err(Error::Argument(format!("quadratic coefficient must be >= 0, got {a}")));
    }
    Ok(y / (1.0 + lambda * a))
}

/// Proximal operator of `f(x) = |x|`: soft threshold
/// `sign(y)·max(|y| − λ, 0)`.
pub fn prox_abs(y: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::Argument(format!("lambda must be positive, got {lambda}")));
    }
    Ok(y.signum() * (y.abs() - lambda).max(0.0))
}

/// Damped proximal iteration `x_{k+1} = τ·x_k + (1−τ)·prox(x_k)`, returning
/// every iterate including `x0`. The damping weight `τ` sits on the *old*
/// iterate here; the target-network average in [`spi_step`] puts it on the
/// new one. Both conventions are kept as-is.
pub fn damped_prox_iterate<F>(x0: f64, prox: F, tau: f64, n_steps: usize) -> Result<Vec<f64>>
where
    F: Fn(f64) -> f64,
{
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Argument(format!("tau must be in (0,1], got {tau}")));
    }
    if n_steps == 0 {
        return Err(Error::Argument("n_steps must be at least 1".into()));
    }
    let mut trajectory = Vec::with_capacity(n_steps + 1);
    trajectory.push(x0);
    let mut x = x0;
    for _ in 0..n_steps {
        x = tau * x + (1.0 - tau) * prox(x);
        trajectory.push(x);
    }
    Ok(trajectory)
}

/// Gradient of the smoothed objective `u(x,t) = min_y f(y) + ‖x−y‖²/(2t)`:
/// `∇u(x,t) = (x − prox_tf(x)) / t`.
pub fn hj_gradient<F>(x: f64, t: f64, prox_tf: F) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if !(t > 0.0) {
        return Err(Error::Argument(format!("t must be positive, got {t}")));
    }
    Ok((x - prox_tf(x)) / t)
}

/// One stochastic proximal step over a frozen batch.
///
/// Runs `n_prox` gradient descent iterations of
/// `fast ← fast − α·(∇ℓ_batch(fast) + prox_strength·(fast − target)/count)`
/// with the batch and targets held fixed, then drags each target toward its
/// fast vector: `target ← τ·fast + (1−τ)·target`.
///
/// `batch_loss_gradient` evaluates the frozen batch loss and its gradients at
/// candidate fast parameters; it is called once per inner iteration. Returns
/// the loss from the first evaluation (the pre-update loss).
pub fn spi_step<F>(
    fast: &mut [ParamVector],
    target: &mut [ParamVector],
    mut batch_loss_gradient: F,
    cfg: &SpiConfig,
) -> Result<f64>
where
    F: FnMut(&[ParamVector]) -> Result<(f64, Vec<ParamVector>)>,
{
    cfg.validate()?;
    if fast.len() != target.len() {
        return Err(Error::Shape(format!(
            "spi_step pairs {} fast with {} target vectors",
            fast.len(),
            target.len()
        )));
    }
    for (f, t) in fast.iter().zip(target.iter()) {
        if f.len() != t.len() {
            return Err(Error::Shape(format!(
                "spi_step fast/target length mismatch: {} vs {}",
                f.len(),
                t.len()
            )));
        }
    }

    let mut first_loss = None;
    for _ in 0..cfg.n_prox {
        let (loss, mut grads) = batch_loss_gradient(fast)?;
        if grads.len() != fast.len() {
            return Err(Error::Shape(format!(
                "batch_loss_gradient returned {} gradients for {} networks",
                grads.len(),
                fast.len()
            )));
        }
        if first_loss.is_none() {
            first_loss = Some(loss);
        }
        if cfg.prox_strength > 0.0 {
            let (_, prox_grads) = proximal_penalty(fast, target, cfg.prox_strength)?;
            for (g, pg) in grads.iter_mut().zip(prox_grads) {
                *g = param_axpy(g, 1.0, &pg)?;
            }
        }
        for (f, g) in fast.iter_mut().zip(&grads) {
            *f = param_axpy(f, -cfg.learning_rate, g)?;
        }
    }
    for (t, f) in target.iter_mut().zip(fast.iter()) {
        *t = polyak_update(t, f, cfg.tau)?;
    }
    Ok(first_loss.expect("n_prox >= 1 guarantees one evaluation"))
}

/// Plain gradient descent step: `params − lr·grads`.
pub fn sgd_step(params: &ParamVector, grads: &ParamVector, learning_rate: f64) -> Result<ParamVector> {
    param_axpy(params, -learning_rate, grads)
}

/// First/second-moment state of one Adam-optimized parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: ParamVector,
    v: ParamVector,
    step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl AdamState {
    pub fn new(param_len: usize, mode: &OptimizerMode) -> Self {
        Self {
            m: ParamVector::zeros(param_len),
            v: ParamVector::zeros(param_len),
            step: 0,
            beta1: mode.adam_beta1,
            beta2: mode.adam_beta2,
            eps: mode.adam_eps,
        }
    }

    /// Standard bias-corrected Adam update.
    pub fn step(&mut self, params: &ParamVector, grads: &ParamVector, learning_rate: f64) -> Result<ParamVector> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam_step length mismatch: params {}, grads {}, state {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut out = params.clone();
        let p = out.as_mut_slice();
        let m = self.m.as_mut_slice();
        let v = self.v.as_mut_slice();
        let g = grads.as_slice();
        for i in 0..p.len() {
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(out)
    }
}
