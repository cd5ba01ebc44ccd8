//! Flat key-value run configuration: one `key = value` pair per line, keys
//! are dotted paths, values are scalars or comma lists. Unknown keys are
//! errors. Blank lines and `#` comments are allowed.

use std::path::PathBuf;

use crate::agent::{parse_f64, parse_u64, parse_usize, AgentConfig};
use crate::error::{Error, Result};

/// Splits config text into `(key, value)` pairs.
pub fn parse_kv_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected `key = value`, got {raw:?}", lineno + 1)));
        };
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        out.push((key.to_string(), value.to_string()));
    }
    Ok(out)
}

/// One training invocation: environment, agent, budget, evaluation cadence,
/// seeds, and output location.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env_id: String,
    pub agent: AgentConfig,
    pub total_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    /// Exponential smoothing weight for the smoothed curve column; 1 = none.
    pub smoothing_alpha: f64,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn new(env_id: impl Into<String>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            env_id: env_id.into(),
            agent: AgentConfig::default(),
            total_steps: 10_000,
            eval_every: 1_000,
            eval_episodes: 10,
            seeds: vec![0],
            smoothing_alpha: 1.0,
            output_dir: output_dir.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.env_id.is_empty() {
            return Err(Error::Config("env_id must be set".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if self.total_steps < self.eval_every {
            return Err(Error::Config(format!(
                "total_steps ({}) must be at least eval_every ({})",
                self.total_steps, self.eval_every
            )));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if !(self.smoothing_alpha > 0.0 && self.smoothing_alpha <= 1.0) {
            return Err(Error::Config(format!(
                "smoothing_alpha must be in (0,1], got {}",
                self.smoothing_alpha
            )));
        }
        self.agent.validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies one dotted key. `agent.*` keys are routed to the agent config.
    pub fn apply_key(&mut self, key: &str, value: &str) -> Result<()> {
        if let Some(rest) = key.strip_prefix("agent.") {
            return self.agent.apply_key(rest, value);
        }
        match key {
            "env_id" => self.env_id = value.to_string(),
            "total_steps" => self.total_steps = parse_u64(key, value)?,
            "eval_every" => self.eval_every = parse_u64(key, value)?,
            "eval_episodes" => self.eval_episodes = parse_usize(key, value)?,
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .map(|s| parse_u64(key, s.trim()))
                    .collect::<Result<Vec<_>>>()?;
            }
            "smoothing_alpha" => self.smoothing_alpha = parse_f64(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses a whole config file on top of defaults.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::new("", "runs");
        for (key, value) in parse_kv_lines(text)? {
            cfg.apply_key(&key, &value)?;
        }
        Ok(cfg)
    }
}
