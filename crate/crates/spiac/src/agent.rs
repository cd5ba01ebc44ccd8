//! The actor-critic agent: replay buffer, exploration, twin critics and
//! policy with their target copies, clipped target-action smoothing, and a
//! `train_step` that wires the combined batch loss into the stochastic
//! proximal step (or a plain SGD/Adam baseline for comparisons).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::losses::{
    combined_batch_loss, td_target, BatchItem, LossBreakdown, LossKind, LossOptions, PolicyValue,
    TdTargetInputs,
};
use crate::nn::{param_axpy, polyak_update, Mlp, OutputActivation, ParamVector};
use crate::prox::{sgd_step, spi_step, AdamState, OptimizerMode, OptimizerVariant, SpiConfig};
use crate::seeding::derive_seed;

const NET_SEED_STREAM: u64 = 0x6e65_7473; // "nets"

/// One stored interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Failure/goal termination only; time-limit truncations are stored with
    /// `done = false` so bootstrapping continues across artificial horizons.
    pub done: bool,
}

/// Fixed-capacity ring of transitions with uniform with-replacement sampling.
#[derive(Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Argument("replay capacity must be at least 1".into()));
        }
        Ok(Self { capacity, storage: Vec::new(), cursor: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    /// O(1) insert; evicts the oldest entry once full.
    pub fn store(&mut self, transition: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(transition);
        } else {
            self.storage[self.cursor] = transition;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn get(&self, index: usize) -> &Transition {
        &self.storage[index]
    }

    /// `n` indices drawn uniformly i.i.d. with replacement.
    pub fn sample_indices<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if n == 0 {
            return Err(Error::Argument("sample size must be at least 1".into()));
        }
        if self.storage.is_empty() {
            return Err(Error::NotReady("replay buffer is empty".into()));
        }
        Ok((0..n).map(|_| rng.random_range(0..self.storage.len())).collect())
    }
}

/// Every hyperparameter of the agent, plus the ablation toggles.
///
/// Noise scales (`explore_sigma`, `action_noise_sigma`, `noise_clip`) are
/// relative to the environment's action bound.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub explore_sigma: f64,
    pub action_noise_sigma: f64,
    pub noise_clip: f64,
    pub beta: f64,
    /// Environment steps of uniform-random actions before learning starts.
    pub burn_in: u64,
    pub policy_weight_decay: f64,
    pub replay_capacity: usize,
    pub hidden_sizes: Vec<usize>,
    pub spi: SpiConfig,
    pub optimizer: OptimizerMode,
    pub loss_kind: LossKind,
    pub policy_value: PolicyValue,
    /// Apply policy gradients (and target averages, in baseline mode) only
    /// every k-th train step. Must be 1 in SPI mode, which needs no delay.
    pub delayed_policy_period: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            batch_size: 256,
            explore_sigma: 0.1,
            action_noise_sigma: 0.2,
            noise_clip: 0.5,
            beta: 0.01,
            burn_in: 1000,
            policy_weight_decay: 1e-5,
            replay_capacity: 1_000_000,
            hidden_sizes: vec![256, 256],
            spi: SpiConfig::default(),
            optimizer: OptimizerMode::default(),
            loss_kind: LossKind::Huber,
            policy_value: PolicyValue::AvgTargets,
            delayed_policy_period: 1,
        }
    }
}

impl AgentConfig {
    /// TD3-flavored baseline: Adam on the same objective, MSE TD terms,
    /// single (target) critic for the policy, delayed policy updates.
    pub fn td3_baseline() -> Self {
        Self {
            optimizer: OptimizerMode { variant: OptimizerVariant::Adam, ..OptimizerMode::default() },
            loss_kind: LossKind::Mse,
            policy_value: PolicyValue::SingleTargetQ1,
            delayed_policy_period: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Argument(format!("gamma must be in [0,1), got {}", self.gamma)));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch_size must be at least 1".into()));
        }
        for (name, v) in [
            ("explore_sigma", self.explore_sigma),
            ("action_noise_sigma", self.action_noise_sigma),
            ("beta", self.beta),
            ("policy_weight_decay", self.policy_weight_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Argument(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.noise_clip > 0.0) {
            return Err(Error::Argument(format!("noise_clip must be positive, got {}", self.noise_clip)));
        }
        if self.replay_capacity == 0 {
            return Err(Error::Argument("replay_capacity must be at least 1".into()));
        }
        if self.delayed_policy_period == 0 {
            return Err(Error::Argument("delayed_policy_period must be at least 1".into()));
        }
        if self.optimizer.variant == OptimizerVariant::Spi && self.delayed_policy_period != 1 {
            return Err(Error::Argument(
                "SPI mode needs no delayed policy updates; set delayed_policy_period = 1".into(),
            ));
        }
        self.spi.validate()
    }

    /// Applies one dotted config key (without the `agent.` prefix).
    pub fn apply_key(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "gamma" => self.gamma = parse_f64(key, value)?,
            "batch_size" => self.batch_size = parse_usize(key, value)?,
            "explore_sigma" => self.explore_sigma = parse_f64(key, value)?,
            "action_noise_sigma" => self.action_noise_sigma = parse_f64(key, value)?,
            "noise_clip" => self.noise_clip = parse_f64(key, value)?,
            "beta" => self.beta = parse_f64(key, value)?,
            "burn_in" => self.burn_in = parse_u64(key, value)?,
            "policy_weight_decay" => self.policy_weight_decay = parse_f64(key, value)?,
            "replay_capacity" => self.replay_capacity = parse_usize(key, value)?,
            "hidden_sizes" => {
                self.hidden_sizes = value
                    .split(',')
                    .map(|s| parse_usize(key, s.trim()))
                    .collect::<Result<Vec<_>>>()?;
            }
            "loss_kind" => self.loss_kind = value.parse()?,
            "policy_value" => self.policy_value = value.parse()?,
            "delayed_policy_period" => self.delayed_policy_period = parse_u64(key, value)?,
            "optimizer" => self.optimizer.variant = value.parse()?,
            "adam_beta1" => self.optimizer.adam_beta1 = parse_f64(key, value)?,
            "adam_beta2" => self.optimizer.adam_beta2 = parse_f64(key, value)?,
            "adam_eps" => self.optimizer.adam_eps = parse_f64(key, value)?,
            "spi.prox_strength" => self.spi.prox_strength = parse_f64(key, value)?,
            "spi.tau" => self.spi.tau = parse_f64(key, value)?,
            "spi.n_prox" => self.spi.n_prox = parse_usize(key, value)?,
            "spi.learning_rate" => self.spi.learning_rate = parse_f64(key, value)?,
            other => return Err(Error::Config(format!("unknown agent config key {other:?}"))),
        }
        Ok(())
    }

    /// Key-value echo of every field, with the `agent.` prefix, one per line.
    pub fn to_kv_block(&self) -> String {
        let hidden = self
            .hidden_sizes
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "agent.gamma = {}\nagent.batch_size = {}\nagent.explore_sigma = {}\n\
             agent.action_noise_sigma = {}\nagent.noise_clip = {}\nagent.beta = {}\n\
             agent.burn_in = {}\nagent.policy_weight_decay = {}\nagent.replay_capacity = {}\n\
             agent.hidden_sizes = {}\nagent.loss_kind = {}\nagent.policy_value = {}\n\
             agent.delayed_policy_period = {}\nagent.optimizer = {}\nagent.adam_beta1 = {}\n\
             agent.adam_beta2 = {}\nagent.adam_eps = {}\nagent.spi.prox_strength = {}\n\
             agent.spi.tau = {}\nagent.spi.n_prox = {}\nagent.spi.learning_rate = {}\n",
            self.gamma,
            self.batch_size,
            self.explore_sigma,
            self.action_noise_sigma,
            self.noise_clip,
            self.beta,
            self.burn_in,
            self.policy_weight_decay,
            self.replay_capacity,
            hidden,
            self.loss_kind.as_str(),
            self.policy_value.as_str(),
            self.delayed_policy_period,
            self.optimizer.variant.as_str(),
            self.optimizer.adam_beta1,
            self.optimizer.adam_beta2,
            self.optimizer.adam_eps,
            self.spi.prox_strength,
            self.spi.tau,
            self.spi.n_prox,
            self.spi.learning_rate,
        )
    }
}

pub(crate) fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("key {key:?}: expected a number, got {value:?}")))
}

pub(crate) fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value
        .parse::<u64>()
        .map_err(|_| Error::Config(format!("key {key:?}: expected a non-negative integer, got {value:?}")))
}

pub(crate) fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse::<usize>()
        .map_err(|_| Error::Config(format!("key {key:?}: expected a non-negative integer, got {value:?}")))
}

/// The six networks: policy and twin critics plus their target copies.
/// Targets start as exact copies of their fast networks.
#[derive(Debug, Clone)]
pub struct ActorCriticBundle {
    pub policy: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub policy_target: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
}

impl ActorCriticBundle {
    pub fn new(cfg: &AgentConfig, env_spec: &EnvSpec, seed: u64) -> Result<Self> {
        let mut policy_sizes = vec![env_spec.obs_dim];
        policy_sizes.extend_from_slice(&cfg.hidden_sizes);
        policy_sizes.push(env_spec.act_dim);
        let mut critic_sizes = vec![env_spec.obs_dim + env_spec.act_dim];
        critic_sizes.extend_from_slice(&cfg.hidden_sizes);
        critic_sizes.push(1);

        let policy = Mlp::init(
            &policy_sizes,
            OutputActivation::ScaledTanh(env_spec.action_bound),
            derive_seed(seed, NET_SEED_STREAM, 0),
        )?;
        let q1 = Mlp::init(&critic_sizes, OutputActivation::Identity, derive_seed(seed, NET_SEED_STREAM, 1))?;
        let q2 = Mlp::init(&critic_sizes, OutputActivation::Identity, derive_seed(seed, NET_SEED_STREAM, 2))?;
        Ok(Self {
            policy_target: policy.clone(),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            policy,
            q1,
            q2,
        })
    }
}

/// Counters surfaced for invariants and reports.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrainStats {
    pub train_steps: u64,
    /// Times a regression target exceeded an individual (non-terminal)
    /// bootstrap estimate. Must stay 0.
    pub min_target_violations: u64,
}

struct AdamTriple {
    q1: AdamState,
    q2: AdamState,
    policy: AdamState,
}

/// A single training run's agent. Owns its networks, replay buffer, and
/// optimizer state; all methods are deterministic given the rng streams.
pub struct Agent {
    cfg: AgentConfig,
    env_spec: EnvSpec,
    pub bundle: ActorCriticBundle,
    buffer: ReplayBuffer,
    adam: Option<AdamTriple>,
    env_steps: u64,
    train_calls: u64,
    stats: TrainStats,
}

impl Agent {
    pub fn new(cfg: AgentConfig, env_spec: EnvSpec, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let bundle = ActorCriticBundle::new(&cfg, &env_spec, seed)?;
        let adam = (cfg.optimizer.variant == OptimizerVariant::Adam).then(|| AdamTriple {
            q1: AdamState::new(bundle.q1.params().len(), &cfg.optimizer),
            q2: AdamState::new(bundle.q2.params().len(), &cfg.optimizer),
            policy: AdamState::new(bundle.policy.params().len(), &cfg.optimizer),
        });
        let buffer = ReplayBuffer::new(cfg.replay_capacity)?;
        Ok(Self { cfg, env_spec, bundle, buffer, adam, env_steps: 0, train_calls: 0, stats: TrainStats::default() })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn env_spec(&self) -> &EnvSpec {
        &self.env_spec
    }

    pub fn stats(&self) -> TrainStats {
        self.stats
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    /// Exploratory action: uniform random during burn-in, otherwise
    /// `π(s) + N(0, σ·bound)` clamped to the bounds.
    pub fn act_explore<R: Rng>(&self, state: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let bound = self.env_spec.action_bound;
        if self.env_steps < self.cfg.burn_in {
            return Ok((0..self.env_spec.act_dim).map(|_| rng.random_range(-bound..bound)).collect());
        }
        let mut action = self.bundle.policy.forward(state)?;
        let noise = gaussian(self.cfg.explore_sigma * bound)?;
        for a in action.iter_mut() {
            *a = (*a + noise.sample(rng)).clamp(-bound, bound);
        }
        Ok(action)
    }

    /// Greedy action of the fast policy (evaluation).
    pub fn act_greedy(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.bundle.policy.forward(state)
    }

    /// Smoothed target action `ā = π'(s') + clip(ε, −c·bound, c·bound)` with
    /// `ε ~ N(0, σ_q·bound)`, clamped to the action bounds.
    pub fn smooth_target_action<R: Rng>(&self, next_state: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let bound = self.env_spec.action_bound;
        let clip = self.cfg.noise_clip * bound;
        let noise = gaussian(self.cfg.action_noise_sigma * bound)?;
        let mut action = self.bundle.policy_target.forward(next_state)?;
        for a in action.iter_mut() {
            let eps = noise.sample(rng).clamp(-clip, clip);
            *a = (*a + eps).clamp(-bound, bound);
        }
        Ok(action)
    }

    /// Stores a collected transition and advances the environment-step count.
    pub fn observe(&mut self, transition: Transition) {
        debug_assert_eq!(transition.state.len(), self.env_spec.obs_dim);
        debug_assert_eq!(transition.action.len(), self.env_spec.act_dim);
        self.buffer.store(transition);
        self.env_steps += 1;
    }

    /// Past burn-in and holding at least one batch of transitions.
    pub fn ready_to_train(&self) -> bool {
        self.env_steps >= self.cfg.burn_in && self.buffer.len() >= self.cfg.batch_size
    }

    /// One optimization step on a freshly sampled batch: smooth the target
    /// actions, freeze the regression targets, evaluate the combined loss,
    /// and dispatch to the proximal step or the baseline optimizer. Returns
    /// the pre-update loss breakdown.
    pub fn train_step<R: Rng>(&mut self, rng: &mut R) -> Result<LossBreakdown> {
        let n = self.cfg.batch_size;
        if self.buffer.len() < n {
            return Err(Error::NotReady(format!(
                "replay buffer holds {} transitions but the batch size is {n}",
                self.buffer.len()
            )));
        }
        let indices = self.buffer.sample_indices(n, rng)?;
        let batch = self.prepare_batch(&indices, rng)?;

        let opts = LossOptions {
            beta: self.cfg.beta,
            loss_kind: self.cfg.loss_kind,
            policy_value: self.cfg.policy_value,
        };
        let weight_decay = self.cfg.policy_weight_decay;

        let mut fast = vec![
            self.bundle.q1.params().clone(),
            self.bundle.q2.params().clone(),
            self.bundle.policy.params().clone(),
        ];
        let mut targets = vec![
            self.bundle.q1_target.params().clone(),
            self.bundle.q2_target.params().clone(),
            self.bundle.policy_target.params().clone(),
        ];

        let bundle = &self.bundle;
        let mut first_breakdown: Option<LossBreakdown> = None;
        let mut evaluate = |params: &[ParamVector]| -> Result<(f64, Vec<ParamVector>)> {
            let q1 = bundle.q1.with_params(params[0].clone())?;
            let q2 = bundle.q2.with_params(params[1].clone())?;
            let policy = bundle.policy.with_params(params[2].clone())?;
            let (bd, grads) = combined_batch_loss(
                &batch,
                &policy,
                &q1,
                &q2,
                &bundle.q1_target,
                &bundle.q2_target,
                &opts,
            )?;
            if first_breakdown.is_none() {
                first_breakdown = Some(bd);
            }
            let policy_grad = if weight_decay > 0.0 {
                param_axpy(&grads.policy, weight_decay, &params[2])?
            } else {
                grads.policy
            };
            Ok((bd.total, vec![grads.q1, grads.q2, policy_grad]))
        };

        match self.cfg.optimizer.variant {
            OptimizerVariant::Spi => {
                spi_step(&mut fast, &mut targets, &mut evaluate, &self.cfg.spi)?;
            }
            OptimizerVariant::Sgd | OptimizerVariant::Adam => {
                let (_, grads) = evaluate(&fast)?;
                let lr = self.cfg.spi.learning_rate;
                let policy_turn = self.train_calls % self.cfg.delayed_policy_period == 0;
                match (self.cfg.optimizer.variant, &mut self.adam) {
                    (OptimizerVariant::Sgd, _) => {
                        fast[0] = sgd_step(&fast[0], &grads[0], lr)?;
                        fast[1] = sgd_step(&fast[1], &grads[1], lr)?;
                        if policy_turn {
                            fast[2] = sgd_step(&fast[2], &grads[2], lr)?;
                        }
                    }
                    (OptimizerVariant::Adam, Some(adam)) => {
                        fast[0] = adam.q1.step(&fast[0], &grads[0], lr)?;
                        fast[1] = adam.q2.step(&fast[1], &grads[1], lr)?;
                        if policy_turn {
                            fast[2] = adam.policy.step(&fast[2], &grads[2], lr)?;
                        }
                    }
                    _ => unreachable!("adam state exists iff the variant is Adam"),
                }
                if policy_turn {
                    for (t, f) in targets.iter_mut().zip(&fast) {
                        *t = polyak_update(t, f, self.cfg.spi.tau)?;
                    }
                }
            }
        }

        self.bundle.q1.set_params(fast.remove(0))?;
        self.bundle.q2.set_params(fast.remove(0))?;
        self.bundle.policy.set_params(fast.remove(0))?;
        self.bundle.q1_target.set_params(targets.remove(0))?;
        self.bundle.q2_target.set_params(targets.remove(0))?;
        self.bundle.policy_target.set_params(targets.remove(0))?;

        self.train_calls += 1;
        self.stats.train_steps += 1;
        Ok(first_breakdown.expect("loss is evaluated at least once"))
    }

    /// Smooths the next actions and freezes the regression targets for one
    /// sampled batch.
    fn prepare_batch<R: Rng>(&mut self, indices: &[usize], rng: &mut R) -> Result<Vec<BatchItem>> {
        let mut batch = Vec::with_capacity(indices.len());
        let mut tr_q1t = self.bundle.q1_target.make_trace();
        let mut tr_q2t = self.bundle.q2_target.make_trace();
        let mut sa = vec![0.0; self.env_spec.obs_dim + self.env_spec.act_dim];
        let mut violations = 0u64;
        for &i in indices {
            let t = self.buffer.get(i);
            let smoothed = self.smooth_target_action(&t.next_state, rng)?;
            sa[..self.env_spec.obs_dim].copy_from_slice(&t.next_state);
            sa[self.env_spec.obs_dim..].copy_from_slice(&smoothed);
            self.bundle.q1_target.forward_traced(&sa, &mut tr_q1t)?;
            self.bundle.q2_target.forward_traced(&sa, &mut tr_q2t)?;
            let q1t = tr_q1t.output()[0];
            let q2t = tr_q2t.output()[0];
            let y = td_target(&TdTargetInputs {
                reward: t.reward,
                done: t.done,
                gamma: self.cfg.gamma,
                q1_target: q1t,
                q2_target: q2t,
            })?;
            if !t.done {
                let slack = 1e-9 * (1.0 + y.abs());
                if y > t.reward + self.cfg.gamma * q1t + slack
                    || y > t.reward + self.cfg.gamma * q2t + slack
                {
                    violations += 1;
                }
            }
            batch.push(BatchItem {
                state: t.state.clone(),
                action: t.action.clone(),
                target_value: y,
            });
        }
        self.stats.min_target_violations += violations;
        Ok(batch)
    }

    /// Writes the six parameter vectors (policy, q1, q2, then their targets)
    /// followed by the configuration as a key-value text block.
    pub fn save_checkpoint<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for net in [
            &self.bundle.policy,
            &self.bundle.q1,
            &self.bundle.q2,
            &self.bundle.policy_target,
            &self.bundle.q1_target,
            &self.bundle.q2_target,
        ] {
            net.params().write_to(&mut w)?;
        }
        w.write_all(self.cfg.to_kv_block().as_bytes())?;
        write!(
            w,
            "env.obs_dim = {}\nenv.act_dim = {}\nenv.action_bound = {}\n\
             env.max_episode_steps = {}\nenv.dt = {}\n",
            self.env_spec.obs_dim,
            self.env_spec.act_dim,
            self.env_spec.action_bound,
            self.env_spec.max_episode_steps,
            self.env_spec.dt,
        )?;
        Ok(())
    }

    /// Rebuilds an agent (fresh replay buffer, step counters at zero) from a
    /// checkpoint written by [`Agent::save_checkpoint`].
    pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let params: Vec<ParamVector> =
            (0..6).map(|_| ParamVector::read_from(&mut r)).collect::<Result<_>>()?;
        let mut text = String::new();
        r.read_to_string(&mut text)
            .map_err(|_| Error::Config("checkpoint config block is not valid UTF-8".into()))?;

        let mut cfg = AgentConfig::default();
        let mut obs_dim = None;
        let mut act_dim = None;
        let mut action_bound = None;
        let mut max_episode_steps = None;
        let mut dt = None;
        for (key, value) in crate::harness::config::parse_kv_lines(&text)? {
            if let Some(rest) = key.strip_prefix("agent.") {
                cfg.apply_key(rest, &value)?;
            } else {
                match key.as_str() {
                    "env.obs_dim" => obs_dim = Some(parse_usize(&key, &value)?),
                    "env.act_dim" => act_dim = Some(parse_usize(&key, &value)?),
                    "env.action_bound" => action_bound = Some(parse_f64(&key, &value)?),
                    "env.max_episode_steps" => max_episode_steps = Some(parse_u64(&key, &value)?),
                    "env.dt" => dt = Some(parse_f64(&key, &value)?),
                    other => return Err(Error::Config(format!("unknown checkpoint key {other:?}"))),
                }
            }
        }
        let env_spec = EnvSpec {
            obs_dim: obs_dim.ok_or_else(|| Error::Config("checkpoint missing env.obs_dim".into()))?,
            act_dim: act_dim.ok_or_else(|| Error::Config("checkpoint missing env.act_dim".into()))?,
            action_bound: action_bound
                .ok_or_else(|| Error::Config("checkpoint missing env.action_bound".into()))?,
            max_episode_steps: max_episode_steps
                .ok_or_else(|| Error::Config("checkpoint missing env.max_episode_steps".into()))?,
            dt: dt.ok_or_else(|| Error::Config("checkpoint missing env.dt".into()))?,
        };

        let mut agent = Agent::new(cfg, env_spec, 0)?;
        let mut nets = [
            &mut agent.bundle.policy,
            &mut agent.bundle.q1,
            &mut agent.bundle.q2,
            &mut agent.bundle.policy_target,
            &mut agent.bundle.q1_target,
            &mut agent.bundle.q2_target,
        ];
        for (net, p) in nets.iter_mut().zip(params) {
            net.set_params(p)?;
        }
        Ok(agent)
    }
}

fn gaussian(std: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, std).map_err(|e| Error::Argument(format!("bad noise scale {std}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn small_spec() -> EnvSpec {
        EnvSpec { obs_dim: 3, act_dim: 1, action_bound: 2.0, max_episode_steps: 200, dt: 0.05 }
    }

    fn small_cfg() -> AgentConfig {
        AgentConfig {
            batch_size: 8,
            burn_in: 16,
            hidden_sizes: vec![8, 8],
            replay_capacity: 512,
            ..AgentConfig::default()
        }
    }

    fn random_transition(rng: &mut ChaCha12Rng, spec: &EnvSpec) -> Transition {
        let state = (0..spec.obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let next_state = (0..spec.obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let action = (0..spec.act_dim)
            .map(|_| rng.random_range(-spec.action_bound..spec.action_bound))
            .collect();
        Transition { state, action, reward: rng.random_range(-1.0..0.0), next_state, done: false }
    }

    fn filled_agent(cfg: AgentConfig, seed: u64) -> (Agent, ChaCha12Rng) {
        let spec = small_spec();
        let mut agent = Agent::new(cfg, spec, seed).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0xABCD);
        for _ in 0..64 {
            let t = random_transition(&mut rng, &spec);
            agent.observe(t);
        }
        (agent, ChaCha12Rng::seed_from_u64(seed))
    }

    #[test]
    fn default_config_pins_the_standard_hyperparameters() {
        let cfg = AgentConfig::default();
        assert_eq!(cfg.spi.learning_rate, 3e-4);
        assert_eq!(cfg.spi.tau, 0.005);
        assert_eq!(cfg.spi.n_prox, 5);
        assert_eq!(cfg.spi.prox_strength, 1.0);
        assert_eq!(cfg.explore_sigma, 0.1);
        assert_eq!(cfg.noise_clip, 0.5);
        assert_eq!(cfg.action_noise_sigma, 0.2);
        assert_eq!(cfg.batch_size, 256);
        assert_eq!(cfg.beta, 0.01);
        assert_eq!(cfg.burn_in, 1000);
        assert_eq!(cfg.policy_weight_decay, 1e-5);
        assert_eq!(cfg.replay_capacity, 1_000_000);
        assert_eq!(cfg.hidden_sizes, vec![256, 256]);
        assert_eq!(cfg.delayed_policy_period, 1);
        assert_eq!(cfg.loss_kind, LossKind::Huber);
        assert_eq!(cfg.policy_value, PolicyValue::AvgTargets);
        cfg.validate().unwrap();
    }

    // Hand-built two-transition batch on scalar nets, scripted end to end:
    // linear critics q(s,a) = w_s·s + w_a·a + b, tanh policy π(x) = tanh(w·x),
    // zero smoothing noise, one SGD step.
    #[test]
    fn train_step_matches_scripted_two_transition_batch() {
        let spec = EnvSpec { obs_dim: 1, act_dim: 1, action_bound: 1.0, max_episode_steps: 10, dt: 0.1 };
        let cfg = AgentConfig {
            gamma: 0.9,
            batch_size: 2,
            action_noise_sigma: 0.0,
            beta: 0.5,
            burn_in: 0,
            policy_weight_decay: 0.0,
            replay_capacity: 8,
            hidden_sizes: vec![],
            optimizer: OptimizerMode { variant: OptimizerVariant::Sgd, ..OptimizerMode::default() },
            delayed_policy_period: 1,
            ..AgentConfig::default()
        };
        let mut agent = Agent::new(cfg.clone(), spec, 0).unwrap();

        let set = |net: &mut crate::nn::Mlp, p: &[f64]| {
            net.set_params(ParamVector::from_vec(p.to_vec()).unwrap()).unwrap()
        };
        // Policy π(x) = tanh(0.5·x); critics are affine in (s, a).
        set(&mut agent.bundle.policy, &[0.5, 0.0]);
        set(&mut agent.bundle.policy_target, &[0.5, 0.0]);
        let (q1w, q2w) = ([1.0, 0.5, 0.1], [0.8, -0.3, 0.0]);
        set(&mut agent.bundle.q1, &q1w);
        set(&mut agent.bundle.q1_target, &q1w);
        set(&mut agent.bundle.q2, &q2w);
        set(&mut agent.bundle.q2_target, &q2w);

        // The same transition twice, so any with-replacement sample is the
        // same batch and the script needs no knowledge of the rng.
        let t = Transition {
            state: vec![0.4],
            action: vec![0.2],
            reward: -0.5,
            next_state: vec![0.6],
            done: false,
        };
        agent.observe(t.clone());
        agent.observe(t);

        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let bd = agent.train_step(&mut rng).unwrap();

        // Scripted forward pass.
        let pi_next = (0.5f64 * 0.6).tanh(); // smoothing noise is zero
        let q1_next = 1.0 * 0.6 + 0.5 * pi_next + 0.1;
        let q2_next = 0.8 * 0.6 - 0.3 * pi_next + 0.0;
        let y = -0.5 + 0.9 * q1_next.min(q2_next);
        let r1 = (1.0 * 0.4 + 0.5 * 0.2 + 0.1) - y;
        let r2 = (0.8 * 0.4 - 0.3 * 0.2 + 0.0) - y;
        let huber = |r: f64| if r.abs() <= 1.0 { 0.5 * r * r } else { r.abs() - 0.5 };
        let pi_s = (0.5f64 * 0.4).tanh();
        let q1_pi = 1.0 * 0.4 + 0.5 * pi_s + 0.1;
        let q2_pi = 0.8 * 0.4 - 0.3 * pi_s + 0.0;
        let policy_term = -0.5 * (q1_pi + q2_pi);

        assert!((bd.td1 - huber(r1)).abs() < 1e-14, "td1 {} vs scripted {}", bd.td1, huber(r1));
        assert!((bd.td2 - huber(r2)).abs() < 1e-14);
        assert!((bd.policy - policy_term).abs() < 1e-14);
        assert!((bd.total - (huber(r1) + huber(r2) + 0.5 * policy_term)).abs() < 1e-14);

        // And the SGD parameter updates, scripted: ∂huber(r)/∂(w,b) = r·(s,a,1)
        // within the quadratic branch.
        assert!(r1.abs() <= 1.0 && r2.abs() <= 1.0, "script assumes the quadratic branch");
        let lr = cfg.spi.learning_rate;
        let expect_q1 = [1.0 - lr * r1 * 0.4, 0.5 - lr * r1 * 0.2, 0.1 - lr * r1];
        for (got, want) in agent.bundle.q1.params().as_slice().iter().zip(expect_q1) {
            assert!((got - want).abs() < 1e-14, "q1 update {got} vs scripted {want}");
        }
        // Policy gradient: β·(−0.5)(w_a1 + w_a2)·(1 − tanh²)·x per the chain
        // rule through the target critics' action input.
        let dpi = 1.0 - pi_s * pi_s;
        let dpolicy_dw = 0.5 * (-0.5) * (0.5 + (-0.3)) * dpi * 0.4;
        let dpolicy_db = 0.5 * (-0.5) * (0.5 + (-0.3)) * dpi;
        let expect_pi = [0.5 - lr * dpolicy_dw, 0.0 - lr * dpolicy_db];
        for (got, want) in agent.bundle.policy.params().as_slice().iter().zip(expect_pi) {
            assert!((got - want).abs() < 1e-14, "policy update {got} vs scripted {want}");
        }
        // Targets moved by one polyak step toward the updated fast nets.
        let q1t = agent.bundle.q1_target.params().as_slice();
        for ((t, f), orig) in q1t.iter().zip(agent.bundle.q1.params().as_slice()).zip(q1w) {
            assert!((t - (0.005 * f + 0.995 * orig)).abs() < 1e-14);
        }
    }

    #[test]
    fn ring_buffer_evicts_oldest() {
        let mut buf = ReplayBuffer::new(2).unwrap();
        let mk = |r: f64| Transition {
            state: vec![r],
            action: vec![0.0],
            reward: r,
            next_state: vec![r],
            done: false,
        };
        buf.store(mk(1.0));
        buf.store(mk(2.0));
        buf.store(mk(3.0));
        assert_eq!(buf.len(), 2);
        let rewards: Vec<f64> = (0..2).map(|i| buf.get(i).reward).collect();
        assert!(rewards.contains(&2.0) && rewards.contains(&3.0));
    }

    #[test]
    fn sampling_is_with_replacement_and_deterministic() {
        let mut buf = ReplayBuffer::new(8).unwrap();
        buf.store(Transition {
            state: vec![0.0],
            action: vec![0.0],
            reward: 0.0,
            next_state: vec![0.0],
            done: false,
        });
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let idx = buf.sample_indices(5, &mut rng).unwrap();
        assert_eq!(idx, vec![0; 5]);

        let mut a = ChaCha12Rng::seed_from_u64(9);
        let mut b = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..3 {
            buf.store(Transition {
                state: vec![1.0],
                action: vec![0.0],
                reward: 0.0,
                next_state: vec![0.0],
                done: false,
            });
        }
        assert_eq!(buf.sample_indices(10, &mut a).unwrap(), buf.sample_indices(10, &mut b).unwrap());
    }

    #[test]
    fn empty_buffer_signals_not_ready() {
        let buf = ReplayBuffer::new(4).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert!(matches!(buf.sample_indices(1, &mut rng), Err(Error::NotReady(_))));
    }

    #[test]
    fn targets_start_as_exact_copies() {
        let bundle = ActorCriticBundle::new(&small_cfg(), &small_spec(), 3).unwrap();
        assert_eq!(bundle.policy.params(), bundle.policy_target.params());
        assert_eq!(bundle.q1.params(), bundle.q1_target.params());
        assert_eq!(bundle.q2.params(), bundle.q2_target.params());
        assert_ne!(bundle.q1.params(), bundle.q2.params());
    }

    #[test]
    fn burn_in_actions_are_uniform_then_policy_plus_noise() {
        let cfg = AgentConfig { burn_in: 4, explore_sigma: 0.0, ..small_cfg() };
        let spec = small_spec();
        let mut agent = Agent::new(cfg, spec, 1).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let state = vec![0.1, -0.2, 0.3];

        for _ in 0..4 {
            let a = agent.act_explore(&state, &mut rng).unwrap();
            assert!(a[0].abs() <= spec.action_bound);
            agent.observe(Transition {
                state: state.clone(),
                action: a,
                reward: 0.0,
                next_state: state.clone(),
                done: false,
            });
        }
        // Past burn-in with zero noise: exactly the policy output.
        let a = agent.act_explore(&state, &mut rng).unwrap();
        assert_eq!(a, agent.act_greedy(&state).unwrap());
    }

    #[test]
    fn explore_actions_respect_bounds() {
        let cfg = AgentConfig { burn_in: 0, explore_sigma: 5.0, ..small_cfg() };
        let spec = small_spec();
        let agent = Agent::new(cfg, spec, 1).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for i in 0..200 {
            let state = vec![(i as f64 * 0.01).sin(), 0.0, 0.0];
            let a = agent.act_explore(&state, &mut rng).unwrap();
            assert!(a[0].abs() <= spec.action_bound);
            let s = agent.smooth_target_action(&state, &mut rng).unwrap();
            assert!(s[0].abs() <= spec.action_bound);
        }
    }

    #[test]
    fn smoothing_noise_is_clipped() {
        // With a huge noise scale every draw should land exactly on the clip
        // boundary, relative to the bound.
        let cfg = AgentConfig { action_noise_sigma: 100.0, noise_clip: 0.5, ..small_cfg() };
        let spec = small_spec();
        let mut agent = Agent::new(cfg, spec, 5).unwrap();
        // Zero the target policy so the clipped noise is the whole action.
        let zeros = ParamVector::zeros(agent.bundle.policy_target.params().len());
        agent.bundle.policy_target.set_params(zeros).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let clip = 0.5 * spec.action_bound;
        for _ in 0..100 {
            let a = agent.smooth_target_action(&[0.0, 0.0, 0.0], &mut rng).unwrap();
            assert!((a[0].abs() - clip).abs() < 1e-12, "expected ±{clip}, got {}", a[0]);
        }
    }

    #[test]
    fn train_step_runs_and_moves_parameters() {
        let (mut agent, mut rng) = filled_agent(small_cfg(), 11);
        let before = agent.bundle.q1.params().clone();
        let before_t = agent.bundle.q1_target.params().clone();
        let bd = agent.train_step(&mut rng).unwrap();
        assert!(bd.total.is_finite());
        assert_eq!(bd.total, bd.td1 + bd.td2 + agent.cfg.beta * bd.policy);
        assert_ne!(&before, agent.bundle.q1.params());
        assert_ne!(&before_t, agent.bundle.q1_target.params());
        assert_eq!(agent.stats().train_steps, 1);
        assert_eq!(agent.stats().min_target_violations, 0);
    }

    #[test]
    fn train_step_without_data_is_not_ready() {
        let mut agent = Agent::new(small_cfg(), small_spec(), 0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert!(matches!(agent.train_step(&mut rng), Err(Error::NotReady(_))));
    }

    #[test]
    fn spi_mode_rejects_delayed_updates() {
        let cfg = AgentConfig { delayed_policy_period: 2, ..small_cfg() };
        assert!(matches!(Agent::new(cfg, small_spec(), 0), Err(Error::Argument(_))));
    }

    #[test]
    fn baseline_delays_policy_and_target_updates() {
        let cfg = AgentConfig {
            optimizer: OptimizerMode { variant: OptimizerVariant::Adam, ..OptimizerMode::default() },
            delayed_policy_period: 2,
            policy_weight_decay: 0.0,
            ..small_cfg()
        };
        let (mut agent, mut rng) = filled_agent(cfg, 21);
        let policy0 = agent.bundle.policy.params().clone();
        let target0 = agent.bundle.q1_target.params().clone();

        // First call (train_calls = 0) is a policy turn.
        agent.train_step(&mut rng).unwrap();
        let policy1 = agent.bundle.policy.params().clone();
        let target1 = agent.bundle.q1_target.params().clone();
        assert_ne!(policy0, policy1);
        assert_ne!(target0, target1);

        // Second call skips the policy and the target averages.
        agent.train_step(&mut rng).unwrap();
        assert_eq!(&policy1, agent.bundle.policy.params());
        assert_eq!(&target1, agent.bundle.q1_target.params());

        // Third call is a policy turn again.
        agent.train_step(&mut rng).unwrap();
        assert_ne!(&policy1, agent.bundle.policy.params());
    }

    #[test]
    fn ablation_toggles_are_isolated_on_a_frozen_batch() {
        // Same seed, same rng stream: switching the loss kind must not change
        // the policy term; switching the policy value must not change TD.
        // Rewards well past the huber knee make the two loss kinds disagree.
        let run = |loss_kind: LossKind, policy_value: PolicyValue| -> LossBreakdown {
            let cfg = AgentConfig { loss_kind, policy_value, ..small_cfg() };
            let spec = small_spec();
            let mut agent = Agent::new(cfg, spec, 77).unwrap();
            let mut fill = ChaCha12Rng::seed_from_u64(0xF177);
            for _ in 0..64 {
                let mut t = random_transition(&mut fill, &spec);
                t.reward -= 10.0;
                agent.observe(t);
            }
            let mut rng = ChaCha12Rng::seed_from_u64(77);
            agent.train_step(&mut rng).unwrap()
        };
        let base = run(LossKind::Huber, PolicyValue::AvgTargets);
        let mse = run(LossKind::Mse, PolicyValue::AvgTargets);
        let single = run(LossKind::Huber, PolicyValue::SingleTargetQ1);

        assert_eq!(base.policy, mse.policy);
        assert_ne!(base.td1, mse.td1);
        assert_eq!(base.td1, single.td1);
        assert_eq!(base.td2, single.td2);
        assert_ne!(base.policy, single.policy);
    }

    #[test]
    fn target_lag_shrinks_with_prox_strength_on_frozen_data() {
        // Fixed buffer contents, fixed rng streams: only the proximal
        // strength varies. Stronger coupling must not increase the final
        // fast/target distance.
        let distance_after = |strength: f64| -> f64 {
            let cfg = AgentConfig {
                spi: SpiConfig { prox_strength: strength, ..SpiConfig::default() },
                ..small_cfg()
            };
            let (mut agent, mut rng) = filled_agent(cfg, 55);
            for _ in 0..20 {
                agent.train_step(&mut rng).unwrap();
            }
            let pairs = [
                (&agent.bundle.q1, &agent.bundle.q1_target),
                (&agent.bundle.q2, &agent.bundle.q2_target),
                (&agent.bundle.policy, &agent.bundle.policy_target),
            ];
            let mut total = 0.0;
            let mut count = 0usize;
            for (fast, target) in pairs {
                for (f, t) in fast.params().as_slice().iter().zip(target.params().as_slice()) {
                    total += (f - t) * (f - t);
                }
                count += fast.params().len();
            }
            total / count as f64
        };

        let mut prev = f64::INFINITY;
        for &strength in &[0.0, 0.1, 1.0, 10.0, 100.0] {
            let d = distance_after(strength);
            assert!(d.is_finite());
            assert!(
                d <= prev + 1e-15,
                "strength {strength}: distance {d} exceeds weaker-coupling distance {prev}"
            );
            prev = d;
        }
    }

    #[test]
    fn reproducible_training_given_equal_seeds() {
        let run = || {
            let (mut agent, mut rng) = filled_agent(small_cfg(), 99);
            for _ in 0..5 {
                agent.train_step(&mut rng).unwrap();
            }
            agent.bundle.policy.params().clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_round_trip() {
        let (mut agent, mut rng) = filled_agent(small_cfg(), 31);
        agent.train_step(&mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agent.ckpt");
        agent.save_checkpoint(&path).unwrap();

        let loaded = Agent::load_checkpoint(&path).unwrap();
        assert_eq!(loaded.config(), agent.config());
        assert_eq!(loaded.env_spec(), agent.env_spec());
        assert_eq!(loaded.bundle.policy.params(), agent.bundle.policy.params());
        assert_eq!(loaded.bundle.q1.params(), agent.bundle.q1.params());
        assert_eq!(loaded.bundle.q2_target.params(), agent.bundle.q2_target.params());
    }

    #[test]
    fn config_kv_round_trip() {
        let mut cfg = AgentConfig::td3_baseline();
        cfg.hidden_sizes = vec![16, 8];
        cfg.spi.prox_strength = 0.25;
        let block = cfg.to_kv_block();
        let mut back = AgentConfig::default();
        for (key, value) in crate::harness::config::parse_kv_lines(&block).unwrap() {
            back.apply_key(key.strip_prefix("agent.").unwrap(), &value).unwrap();
        }
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        let mut cfg = AgentConfig::default();
        assert!(matches!(cfg.apply_key("momentum", "0.9"), Err(Error::Config(_))));
    }
}
