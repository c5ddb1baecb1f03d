use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{
    check_unit_interval, compute_gae, ChunkCounter, EpisodeTracker, NetConfig, TrainOutcome,
};
use crate::envs::{EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::nn::{self, FlatParams, HeadGrads, Matrix, MlpSpec, OutputHeads};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::rng::{self, streams};
use crate::telemetry::MetricsRow;

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub num_envs: usize,
    pub rollout_steps: usize,
    pub num_epochs: usize,
    pub num_minibatches: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    /// Ratio clip range; also bounds value-prediction movement when `value_clip`.
    pub clip_eps: f64,
    pub value_clip: bool,
    pub normalize_advantages: bool,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub net: NetConfig,
    pub optimizer: OptimizerConfig,
}

impl PpoConfig {
    pub fn batch_size(&self) -> usize {
        self.num_envs * self.rollout_steps
    }

    pub fn minibatch_size(&self) -> usize {
        self.batch_size() / self.num_minibatches
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_envs == 0
            || self.rollout_steps == 0
            || self.num_epochs == 0
            || self.num_minibatches == 0
        {
            return Err(Error::invalid("PPO loop sizes must be positive"));
        }
        if self.batch_size() % self.num_minibatches != 0 {
            return Err(Error::invalid(format!(
                "batch of {} is not divisible into {} minibatches",
                self.batch_size(),
                self.num_minibatches
            )));
        }
        check_unit_interval("gamma", self.gamma, true)?;
        check_unit_interval("gae_lambda", self.gae_lambda, false)?;
        if !(self.clip_eps > 0.0) {
            return Err(Error::invalid("clip_eps must be positive"));
        }
        if !(self.entropy_coef >= 0.0 && self.value_coef >= 0.0) {
            return Err(Error::invalid("loss coefficients must be nonnegative"));
        }
        self.optimizer.validate()
    }
}

/// `min(clip(ratio, 1 - eps, 1 + eps) * adv, ratio * adv)`
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    (clipped * advantage).min(ratio * advantage)
}

/// Zero mean, unit (population) standard deviation; the deviation is floored
/// at `1e-8`.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    let std = std.max(1e-8);
    adv.iter().map(|a| (a - mean) / std).collect()
}

/// One PPO minibatch. All per-sample vectors have `obs.rows()` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    pub obs: Matrix,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<f64>,
    pub old_values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoLoss {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Joint actor-critic loss and its gradient.
///
/// `loss = -mean(surrogate) + value_coef * mean(value_err^2) - entropy_coef * mean(entropy)`
pub fn ppo_loss(
    spec: &MlpSpec,
    params: &FlatParams,
    mb: &Minibatch,
    config: &PpoConfig,
) -> Result<PpoLoss> {
    let n_actions = match spec.heads {
        OutputHeads::Dual(n) => n,
        _ => return Err(Error::invalid("PPO needs a network with a dual head")),
    };
    let b = mb.obs.rows();
    if b == 0
        || [
            mb.actions.len(),
            mb.old_log_probs.len(),
            mb.old_values.len(),
            mb.advantages.len(),
            mb.returns.len(),
        ]
        .iter()
        .any(|&l| l != b)
    {
        return Err(Error::invalid("minibatch fields have inconsistent lengths"));
    }
    let trace = nn::forward_trace(spec, params, &mb.obs)?;
    let out = trace.outputs();
    let logits = out.logits.as_ref().expect("dual head");
    let values = out.values.as_ref().expect("dual head");
    let adv = if config.normalize_advantages {
        normalize_advantages(&mb.advantages)
    } else {
        mb.advantages.clone()
    };
    let inv_b = 1.0 / b as f64;
    let eps = config.clip_eps;

    let mut d_logits = Matrix::zeros(b, n_actions);
    let mut d_values = vec![0.0; b];
    let (mut policy_obj, mut value_loss, mut entropy, mut clipped) = (0.0, 0.0, 0.0, 0usize);
    for i in 0..b {
        let a = mb.actions[i];
        if a >= n_actions {
            return Err(Error::invalid(format!("action {a} out of range")));
        }
        let lp =
            nn::log_softmax(logits.row(i)).map_err(|e| e.with_context(format!("sample {i}")))?;
        let h = nn::entropy_from_log_probs(&lp);
        let ratio = (lp[a] - mb.old_log_probs[i]).exp();
        let surrogate = clipped_surrogate(ratio, adv[i], eps);
        if (ratio - 1.0).abs() > eps {
            clipped += 1;
        }
        policy_obj += surrogate;
        entropy += h;

        // The unclipped branch is active whenever it is the minimum.
        let d_ratio = if ratio * adv[i] <= ratio.clamp(1.0 - eps, 1.0 + eps) * adv[i] {
            adv[i]
        } else {
            0.0
        };
        let d_logp = -inv_b * ratio * d_ratio;
        let row = d_logits.row_mut(i);
        for j in 0..n_actions {
            let p = lp[j].exp();
            let onehot = if j == a { 1.0 } else { 0.0 };
            row[j] += d_logp * (onehot - p);
            // d(-c * H)/dz_j = c * p_j (log p_j + H)
            row[j] += config.entropy_coef * inv_b * p * (lp[j] + h);
        }

        let v = values[i];
        let err = v - mb.returns[i];
        let (sq, d_v) = if config.value_clip {
            let delta = v - mb.old_values[i];
            let vc = mb.old_values[i] + delta.clamp(-eps, eps);
            let err_c = vc - mb.returns[i];
            if err * err >= err_c * err_c {
                (err * err, 2.0 * err)
            } else {
                let inside = if delta.abs() < eps { 1.0 } else { 0.0 };
                (err_c * err_c, 2.0 * err_c * inside)
            }
        } else {
            (err * err, 2.0 * err)
        };
        value_loss += sq;
        d_values[i] = config.value_coef * inv_b * d_v;
    }
    let policy_loss = -policy_obj * inv_b;
    let value_loss = value_loss * inv_b;
    let entropy = entropy * inv_b;
    let loss = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy;
    if !loss.is_finite() {
        return Err(Error::poisoned(format!(
            "non-finite PPO loss (policy {policy_loss}, value {value_loss}, entropy {entropy})"
        )));
    }
    let grad = trace.backward(&HeadGrads {
        logits: Some(d_logits),
        values: Some(d_values),
    })?;
    Ok(PpoLoss {
        loss,
        grad,
        policy_loss,
        value_loss,
        entropy,
        clip_fraction: clipped as f64 * inv_b,
    })
}

/// Trains an actor-critic with PPO for `total_steps / (num_envs * rollout_steps)`
/// rollouts. The optimizer is told about a boundary once per rollout, after
/// advantages are computed and before the first epoch.
pub fn ppo_train(
    env_config: &EnvConfig,
    config: &PpoConfig,
    total_steps: u64,
    seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    let n_envs = config.num_envs;
    let mut envs = (0..n_envs)
        .map(|_| env_config.build())
        .collect::<Result<Vec<_>>>()?;
    let mut env_rngs: Vec<_> = (0..n_envs as u64)
        .map(|i| rng::stream(seed, streams::ENV_BASE + i))
        .collect();
    let obs_dim = envs[0].observation_dim();
    let n_actions = envs[0].num_actions();
    let spec = MlpSpec::new(
        obs_dim,
        &config.net.hidden,
        config.net.activation,
        OutputHeads::Dual(n_actions),
    )?;
    let mut params = nn::init_params(&spec, seed)?;
    let mut opt = Optimizer::new(config.optimizer, params.len())?;
    let mut action_rng = rng::stream(seed, streams::ACTION_SAMPLING);
    let mut shuffle_rng = rng::stream(seed, streams::MINIBATCH_SHUFFLE);

    let mut obs = Matrix::zeros(n_envs, obs_dim);
    for (e, env) in envs.iter_mut().enumerate() {
        let o = env.reset(env_rngs[e].random());
        obs.row_mut(e).copy_from_slice(&o);
    }

    let batch = config.batch_size();
    let num_updates = total_steps / batch as u64;
    let mut tracker = EpisodeTracker::new(n_envs);
    let mut chunks = ChunkCounter::default();
    let mut rows =
        Vec::with_capacity((num_updates as usize) * config.num_epochs * config.num_minibatches);
    let mut env_step = 0u64;

    let mut b_obs = vec![0.0; batch * obs_dim];
    let mut b_actions = vec![0usize; batch];
    let mut b_logp = vec![0.0; batch];
    let mut b_values = vec![0.0; batch];
    let mut b_rewards = vec![0.0; batch];
    let mut b_dones = vec![false; batch];

    for update in 0..num_updates {
        for t in 0..config.rollout_steps {
            let out = nn::forward(&spec, &params, &obs)?;
            let logits = out.logits.expect("dual head");
            let values = out.values.expect("dual head");
            for e in 0..n_envs {
                let i = t * n_envs + e;
                let (a, logp, _) = nn::softmax_categorical(logits.row(e), &mut action_rng)
                    .map_err(|err| {
                        err.with_context(format!("ppo seed {seed}, rollout {update}"))
                    })?;
                b_obs[i * obs_dim..(i + 1) * obs_dim].copy_from_slice(obs.row(e));
                b_actions[i] = a;
                b_logp[i] = logp;
                b_values[i] = values[e];
                let step = envs[e].step(a)?;
                env_step += 1;
                b_rewards[i] = step.reward;
                b_dones[i] = step.done;
                tracker.observe(e, step.reward, step.done, env_step);
                let next = if step.done {
                    envs[e].reset(env_rngs[e].random())
                } else {
                    step.observation
                };
                obs.row_mut(e).copy_from_slice(&next);
            }
        }
        let next_values = nn::forward(&spec, &params, &obs)?
            .values
            .expect("dual head");
        let (advantages, returns) = compute_gae(
            &b_rewards,
            &b_values,
            &b_dones,
            &next_values,
            n_envs,
            config.gamma,
            config.gae_lambda,
        )
        .map_err(|e| e.with_context(format!("ppo seed {seed}, rollout {update}")))?;

        opt.notify_boundary();
        chunks.boundary();
        let episode_return = tracker.trailing_mean();

        let mut idx: Vec<usize> = (0..batch).collect();
        let mb_size = config.minibatch_size();
        for _ in 0..config.num_epochs {
            idx.shuffle(&mut shuffle_rng);
            for chunk in idx.chunks(mb_size) {
                let mb = Minibatch {
                    obs: Matrix::from_vec(
                        chunk.len(),
                        obs_dim,
                        chunk
                            .iter()
                            .flat_map(|&i| b_obs[i * obs_dim..(i + 1) * obs_dim].iter().copied())
                            .collect(),
                    )?,
                    actions: chunk.iter().map(|&i| b_actions[i]).collect(),
                    old_log_probs: chunk.iter().map(|&i| b_logp[i]).collect(),
                    old_values: chunk.iter().map(|&i| b_values[i]).collect(),
                    advantages: chunk.iter().map(|&i| advantages[i]).collect(),
                    returns: chunk.iter().map(|&i| returns[i]).collect(),
                };
                let opt_step = opt.state.steps_total();
                let ctx =
                    || format!("ppo seed {seed}, rollout {update}, optimizer step {opt_step}");
                let loss =
                    ppo_loss(&spec, &params, &mb, config).map_err(|e| e.with_context(ctx()))?;
                let result = opt
                    .step(&mut params.values, &loss.grad)
                    .map_err(|e| e.with_context(ctx()))?;
                rows.push(MetricsRow {
                    env_step,
                    episode_return,
                    record: chunks.record(&result, &opt.state),
                });
            }
        }
    }

    Ok(TrainOutcome {
        spec,
        params,
        optimizer: opt.state,
        rows,
        episodes: tracker.episodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::GridworldConfig;
    use crate::nn::Activation;
    use crate::optim::Variant;

    fn config(variant: Variant) -> PpoConfig {
        PpoConfig {
            num_envs: 2,
            rollout_steps: 16,
            num_epochs: 4,
            num_minibatches: 4,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            value_clip: true,
            normalize_advantages: true,
            entropy_coef: 0.01,
            value_coef: 0.5,
            net: NetConfig {
                hidden: vec![8],
                activation: Activation::Tanh,
            },
            optimizer: OptimizerConfig::rl(variant, 1e-3, Some(0.5)).unwrap(),
        }
    }

    #[test]
    fn surrogate_examples() {
        assert_eq!(clipped_surrogate(1.3, 1.0, 0.2), 1.2);
        assert_eq!(clipped_surrogate(0.5, -1.0, 0.2), -0.8);
        assert_eq!(clipped_surrogate(1.0, 0.7, 0.2), 0.7);
        assert_eq!(clipped_surrogate(1.1, -2.0, 0.2), -2.2);
    }

    #[test]
    fn normalization() {
        let n = normalize_advantages(&[1.0, 2.0, 3.0, 10.0]);
        let mean = n.iter().sum::<f64>() / 4.0;
        let var = n.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var.sqrt() - 1.0).abs() < 1e-12);
        assert_eq!(normalize_advantages(&[3.0, 3.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn config_validation() {
        let mut c = config(Variant::Adam);
        assert!(c.validate().is_ok());
        c.num_minibatches = 5;
        assert!(c.validate().is_err());
        let mut c = config(Variant::Adam);
        c.gamma = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn step_accounting_and_reset_cadence() {
        let env = EnvConfig::Gridworld(GridworldConfig::default());
        let c = config(Variant::AdamRel);
        let out = ppo_train(&env, &c, 3 * 32 + 5, 1).unwrap();
        assert_eq!(out.rows.len(), 3 * 16);
        let t: Vec<u64> = out.rows.iter().map(|r| r.record.t_local).collect();
        let expected: Vec<u64> = (0..3).flat_map(|_| 1..=16).collect();
        assert_eq!(t, expected);
        assert_eq!(out.rows.last().unwrap().record.chunk_index, 2);
        assert_eq!(out.optimizer.steps_total(), 48);
    }

    #[test]
    fn plain_adam_never_resets() {
        let env = EnvConfig::Gridworld(GridworldConfig::default());
        let out = ppo_train(&env, &config(Variant::Adam), 64, 2).unwrap();
        let t: Vec<u64> = out.rows.iter().map(|r| r.record.t_local).collect();
        assert_eq!(t, (1..=32).collect::<Vec<_>>());
    }
}
