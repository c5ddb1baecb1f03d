//! PPO and DQN training loops parameterized over the optimizer variant, plus a
//! supervised driver for the regression switch task.
//!
//! Every loop tells the optimizer when its objective changes:
//! PPO once per collected batch (before the first epoch), DQN whenever the
//! target network is replaced. Telemetry chunks follow the same boundaries.

mod dqn;
mod gae;
mod ppo;
mod replay;
mod switch;

use std::collections::VecDeque;

pub use dqn::{dqn_train, epsilon_greedy, linear_epsilon, polyak_update, DqnConfig};
pub use gae::compute_gae;
pub use ppo::{
    clipped_surrogate, normalize_advantages, ppo_loss, ppo_train, Minibatch, PpoConfig, PpoLoss,
};
pub use replay::{ReplayBuffer, ReplaySample, Transition};
pub use switch::train_regression_switch;

use crate::error::{Error, Result};
use crate::nn::{Activation, FlatParams, MlpSpec};
use crate::optim::{OptimizerState, StepResult};
use crate::telemetry::{MetricsRow, StepRecord};

/// Hidden layers of the networks the trainers build.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
        }
    }
}

/// Episodes averaged into the `episode_return` column.
pub const RETURN_WINDOW: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeEnd {
    pub env_step: u64,
    pub episode_return: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub spec: MlpSpec,
    pub params: FlatParams,
    pub optimizer: OptimizerState,
    pub rows: Vec<MetricsRow>,
    pub episodes: Vec<EpisodeEnd>,
}

impl TrainOutcome {
    /// Largest trailing mean return recorded in the metrics stream.
    pub fn best_trailing_return(&self) -> Option<f64> {
        self.rows
            .iter()
            .filter_map(|r| r.episode_return)
            .fold(None, |acc: Option<f64>, x| {
                Some(acc.map_or(x, |a| a.max(x)))
            })
    }

    pub fn final_trailing_return(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.episode_return)
    }
}

/// Running episode returns and the recent-episode window.
#[derive(Debug, Default)]
struct EpisodeTracker {
    running: Vec<f64>,
    recent: VecDeque<f64>,
    episodes: Vec<EpisodeEnd>,
}

impl EpisodeTracker {
    fn new(num_envs: usize) -> Self {
        Self {
            running: vec![0.0; num_envs],
            ..Default::default()
        }
    }

    fn observe(&mut self, env: usize, reward: f64, done: bool, env_step: u64) {
        self.running[env] += reward;
        if done {
            let r = std::mem::take(&mut self.running[env]);
            self.episodes.push(EpisodeEnd {
                env_step,
                episode_return: r,
            });
            if self.recent.len() == RETURN_WINDOW {
                self.recent.pop_front();
            }
            self.recent.push_back(r);
        }
    }

    fn trailing_mean(&self) -> Option<f64> {
        if self.recent.is_empty() {
            None
        } else {
            Some(self.recent.iter().sum::<f64>() / self.recent.len() as f64)
        }
    }
}

/// Tracks boundary-delimited chunks for [`StepRecord`]s.
#[derive(Debug, Default)]
struct ChunkCounter {
    steps: u64,
    chunk: u64,
    pos: u64,
    started: bool,
}

impl ChunkCounter {
    /// Marks an objective boundary. The first call only opens chunk 0.
    fn boundary(&mut self) {
        if self.started {
            self.chunk += 1;
        }
        self.started = true;
        self.pos = 0;
    }

    fn record(&mut self, result: &StepResult, state: &OptimizerState) -> StepRecord {
        let r = StepRecord {
            step_index: self.steps,
            chunk_index: self.chunk,
            pos_in_chunk: self.pos,
            grad_norm: result.pre_clip_grad_norm,
            update_norm: result.update_norm,
            max_abs_update: result.max_abs_update,
            t_local: state.t_local(),
        };
        self.steps += 1;
        self.pos += 1;
        self.started = true;
        r
    }
}

fn check_unit_interval(name: &str, x: f64, open_low: bool) -> Result<()> {
    let ok = if open_low {
        x > 0.0 && x <= 1.0
    } else {
        (0.0..=1.0).contains(&x)
    };
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} out of range: {x}")))
    }
}
