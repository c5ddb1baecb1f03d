use rand::Rng as _;

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::rng::Rng;

/// Fixed-capacity circular store of `(obs, action, reward, next_obs, done)`.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    obs: Vec<f64>,
    next_obs: Vec<f64>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
    /// Slot the next insert goes to.
    cursor: usize,
    len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplaySample {
    pub obs: Matrix,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_obs: Matrix,
    pub dones: Vec<bool>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize) -> Result<Self> {
        if capacity == 0 || obs_dim == 0 {
            return Err(Error::invalid(
                "replay capacity and observation size must be positive",
            ));
        }
        Ok(Self {
            capacity,
            obs_dim,
            obs: Vec::new(),
            next_obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
            cursor: 0,
            len: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(
        &mut self,
        obs: &[f64],
        action: usize,
        reward: f64,
        next_obs: &[f64],
        done: bool,
    ) -> Result<()> {
        if obs.len() != self.obs_dim || next_obs.len() != self.obs_dim {
            return Err(Error::invalid("observation size does not match the buffer"));
        }
        let d = self.obs_dim;
        if self.len < self.capacity {
            // Storage grows lazily until the buffer first fills.
            self.obs.extend_from_slice(obs);
            self.next_obs.extend_from_slice(next_obs);
            self.actions.push(action);
            self.rewards.push(reward);
            self.dones.push(done);
            self.len += 1;
        } else {
            let i = self.cursor;
            self.obs[i * d..(i + 1) * d].copy_from_slice(obs);
            self.next_obs[i * d..(i + 1) * d].copy_from_slice(next_obs);
            self.actions[i] = action;
            self.rewards[i] = reward;
            self.dones[i] = done;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// Stored transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = Transition> + '_ {
        let start = if self.len < self.capacity {
            0
        } else {
            self.cursor
        };
        (0..self.len).map(move |k| self.get((start + k) % self.capacity))
    }

    fn get(&self, i: usize) -> Transition {
        let d = self.obs_dim;
        Transition {
            obs: self.obs[i * d..(i + 1) * d].to_vec(),
            action: self.actions[i],
            reward: self.rewards[i],
            next_obs: self.next_obs[i * d..(i + 1) * d].to_vec(),
            done: self.dones[i],
        }
    }

    /// Uniform sample with replacement over the filled slots.
    pub fn sample(&self, batch_size: usize, rng: &mut Rng) -> Result<ReplaySample> {
        if self.len == 0 {
            return Err(Error::InsufficientData("replay buffer is empty".into()));
        }
        let d = self.obs_dim;
        let mut obs = Vec::with_capacity(batch_size * d);
        let mut next_obs = Vec::with_capacity(batch_size * d);
        let mut actions = Vec::with_capacity(batch_size);
        let mut rewards = Vec::with_capacity(batch_size);
        let mut dones = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let i = rng.random_range(0..self.len);
            obs.extend_from_slice(&self.obs[i * d..(i + 1) * d]);
            next_obs.extend_from_slice(&self.next_obs[i * d..(i + 1) * d]);
            actions.push(self.actions[i]);
            rewards.push(self.rewards[i]);
            dones.push(self.dones[i]);
        }
        Ok(ReplaySample {
            obs: Matrix::from_vec(batch_size, d, obs)?,
            actions,
            rewards,
            next_obs: Matrix::from_vec(batch_size, d, next_obs)?,
            dones,
        })
    }
}
