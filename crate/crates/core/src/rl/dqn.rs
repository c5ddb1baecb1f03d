use rand::Rng as _;

use super::{
    check_unit_interval, ChunkCounter, EpisodeTracker, NetConfig, ReplayBuffer, TrainOutcome,
};
use crate::envs::{EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::nn::{self, FlatParams, HeadGrads, Matrix, MlpSpec, OutputHeads};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::rng::{self, streams, Rng};
use crate::telemetry::MetricsRow;

#[derive(Debug, Clone, PartialEq)]
pub struct DqnConfig {
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Optimizer steps between target replacements (hard mode) or between
    /// optimizer boundary notifications (Polyak mode).
    pub target_update_interval: u64,
    /// Soft target updates after every optimizer step when set.
    pub polyak_tau: Option<f64>,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of `total_steps` over which exploration decays linearly.
    pub exploration_fraction: f64,
    /// Environment steps collected before the first update.
    pub learning_starts: u64,
    /// Environment steps per optimizer step.
    pub train_frequency: u64,
    pub net: NetConfig,
    pub optimizer: OptimizerConfig,
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.buffer_capacity == 0
            || self.batch_size == 0
            || self.target_update_interval == 0
            || self.train_frequency == 0
        {
            return Err(Error::invalid("DQN sizes and intervals must be positive"));
        }
        if self.batch_size > self.buffer_capacity {
            return Err(Error::invalid("batch size exceeds buffer capacity"));
        }
        if let Some(tau) = self.polyak_tau {
            check_unit_interval("polyak_tau", tau, true)?;
        }
        check_unit_interval("gamma", self.gamma, true)?;
        check_unit_interval("epsilon_start", self.epsilon_start, false)?;
        check_unit_interval("epsilon_end", self.epsilon_end, false)?;
        check_unit_interval("exploration_fraction", self.exploration_fraction, false)?;
        if self.epsilon_end > self.epsilon_start {
            return Err(Error::invalid("epsilon_end must not exceed epsilon_start"));
        }
        self.optimizer.validate()
    }
}

/// Random action with probability `epsilon`, otherwise the first maximizer.
pub fn epsilon_greedy(q_values: &[f64], epsilon: f64, rng: &mut Rng) -> Result<usize> {
    if q_values.is_empty() {
        return Err(Error::invalid("no actions"));
    }
    if q_values.iter().any(|q| !q.is_finite()) {
        return Err(Error::poisoned("non-finite action value"));
    }
    check_unit_interval("epsilon", epsilon, false)?;
    let u: f64 = rng.random();
    if u < epsilon {
        return Ok(rng.random_range(0..q_values.len()));
    }
    let mut best = 0;
    for (i, &q) in q_values.iter().enumerate().skip(1) {
        if q > q_values[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Linear decay from `start` to `end` over `duration` steps, then flat.
pub fn linear_epsilon(start: f64, end: f64, duration: f64, step: u64) -> f64 {
    if duration <= 0.0 {
        return end;
    }
    let slope = (end - start) / duration;
    (start + slope * step as f64).max(end)
}

/// `target <- (1 - tau) target + tau online`
pub fn polyak_update(target: &mut [f64], online: &[f64], tau: f64) {
    for (t, o) in target.iter_mut().zip(online) {
        *t = (1.0 - tau) * *t + tau * o;
    }
}

/// Squared TD error against a frozen target network, and its gradient.
fn td_loss(
    spec: &MlpSpec,
    online: &FlatParams,
    target: &FlatParams,
    batch: &super::ReplaySample,
    gamma: f64,
) -> Result<(f64, Vec<f64>)> {
    let b = batch.obs.rows();
    let next_q = nn::forward(spec, target, &batch.next_obs)?
        .logits
        .expect("categorical head");
    let trace = nn::forward_trace(spec, online, &batch.obs)?;
    let q = trace.raw_output();
    let mut upstream = Matrix::zeros(b, q.cols());
    let mut loss = 0.0;
    for i in 0..b {
        let bootstrap = if batch.dones[i] {
            0.0
        } else {
            next_q
                .row(i)
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let y = batch.rewards[i] + gamma * bootstrap;
        let err = q.get(i, batch.actions[i]) - y;
        loss += err * err / b as f64;
        upstream.set(i, batch.actions[i], 2.0 * err / b as f64);
    }
    if !loss.is_finite() {
        return Err(Error::poisoned(format!("non-finite TD loss {loss}")));
    }
    let grad = trace.backward(&HeadGrads {
        logits: Some(upstream),
        values: None,
    })?;
    Ok((loss, grad))
}

/// Trains a Q-network with a single environment for `total_steps` steps.
///
/// In hard mode the target is replaced by the online network every
/// `target_update_interval` optimizer steps and the optimizer is told about
/// the boundary at the same time. In Polyak mode the target moves a little
/// after every step and the boundary notification keeps the same cadence.
pub fn dqn_train(
    env_config: &EnvConfig,
    config: &DqnConfig,
    total_steps: u64,
    seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut env = env_config.build()?;
    let mut env_rng = rng::stream(seed, streams::ENV_BASE);
    let obs_dim = env.observation_dim();
    let n_actions = env.num_actions();
    let spec = MlpSpec::new(
        obs_dim,
        &config.net.hidden,
        config.net.activation,
        OutputHeads::Categorical(n_actions),
    )?;
    let mut online = nn::init_params(&spec, seed)?;
    let mut target = online.clone();
    let mut opt = Optimizer::new(config.optimizer, online.len())?;
    let mut buffer = ReplayBuffer::new(config.buffer_capacity, obs_dim)?;
    let mut explore_rng = rng::stream(seed, streams::EXPLORATION);
    let mut replay_rng = rng::stream(seed, streams::REPLAY_SAMPLING);

    let mut tracker = EpisodeTracker::new(1);
    let mut chunks = ChunkCounter::default();
    chunks.boundary();
    let mut rows = Vec::new();
    let explore_steps = config.exploration_fraction * total_steps as f64;
    let mut obs = env.reset(env_rng.random());

    for step in 0..total_steps {
        let eps = linear_epsilon(
            config.epsilon_start,
            config.epsilon_end,
            explore_steps,
            step,
        );
        let q = nn::forward(&spec, &online, &Matrix::from_vec(1, obs_dim, obs.clone())?)?
            .logits
            .expect("categorical head");
        let action = epsilon_greedy(q.row(0), eps, &mut explore_rng)
            .map_err(|e| e.with_context(format!("dqn seed {seed}, env step {step}")))?;
        let out = env.step(action)?;
        let env_step = step + 1;
        tracker.observe(0, out.reward, out.done, env_step);
        buffer.push(&obs, action, out.reward, &out.observation, out.done)?;
        obs = if out.done {
            env.reset(env_rng.random())
        } else {
            out.observation
        };

        if step >= config.learning_starts
            && step % config.train_frequency == 0
            && buffer.len() >= config.batch_size
        {
            let batch = buffer.sample(config.batch_size, &mut replay_rng)?;
            let opt_step = opt.state.steps_total();
            let ctx = || format!("dqn seed {seed}, env step {step}, optimizer step {opt_step}");
            let (_, grad) = td_loss(&spec, &online, &target, &batch, config.gamma)
                .map_err(|e| e.with_context(ctx()))?;
            let result = opt
                .step(&mut online.values, &grad)
                .map_err(|e| e.with_context(ctx()))?;
            rows.push(MetricsRow {
                env_step,
                episode_return: tracker.trailing_mean(),
                record: chunks.record(&result, &opt.state),
            });
            if let Some(tau) = config.polyak_tau {
                polyak_update(&mut target.values, &online.values, tau);
            }
            if opt.state.steps_total() % config.target_update_interval == 0 {
                if config.polyak_tau.is_none() {
                    target.values.copy_from_slice(&online.values);
                }
                opt.notify_boundary();
                chunks.boundary();
            }
        }
    }

    Ok(TrainOutcome {
        spec,
        params: online,
        optimizer: opt.state,
        rows,
        episodes: tracker.episodes,
    })
}
