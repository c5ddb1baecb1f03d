//! Small environments: a deterministic gridworld, classic CartPole, and a
//! supervised regression task whose target scale switches between phases.

use std::collections::BTreeSet;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// Episode ended, either at a terminal state or at the step limit.
    pub done: bool,
}

pub trait Environment {
    fn observation_dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    /// Starts a new episode. Identical seeds give identical episodes.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: usize) -> Result<StepOutcome>;
}

/// `(x, y)` with `x < width`, `y < height`.
pub type Cell = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct GridworldConfig {
    pub width: usize,
    pub height: usize,
    pub start: Cell,
    pub goal: Cell,
    pub hazards: BTreeSet<Cell>,
    pub step_penalty: f64,
    pub goal_reward: f64,
    pub hazard_penalty: f64,
    /// Whether entering a hazard ends the episode. Off by default: the agent
    /// pays the penalty and keeps moving.
    pub hazards_terminal: bool,
    pub max_steps: usize,
    /// Discount the environment was designed for; trainers keep their own.
    pub gamma_hint: f64,
}

impl Default for GridworldConfig {
    fn default() -> Self {
        Self {
            width: 5,
            height: 5,
            start: (0, 0),
            goal: (4, 4),
            hazards: [(2, 2), (1, 3), (3, 1)].into_iter().collect(),
            step_penalty: -0.01,
            goal_reward: 1.0,
            hazard_penalty: -1.0,
            hazards_terminal: false,
            max_steps: 50,
            gamma_hint: 0.99,
        }
    }
}

impl GridworldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.max_steps == 0 {
            return Err(Error::invalid(
                "gridworld dimensions and max_steps must be positive",
            ));
        }
        let inside = |(x, y): Cell| x < self.width && y < self.height;
        if !inside(self.start) || !inside(self.goal) || !self.hazards.iter().all(|&c| inside(c)) {
            return Err(Error::invalid("gridworld cell outside the grid"));
        }
        if self.hazards.contains(&self.goal) {
            return Err(Error::invalid("goal cell is a hazard"));
        }
        if self.hazards.contains(&self.start) || self.start == self.goal {
            return Err(Error::invalid("start cell must be an ordinary cell"));
        }
        if !(self.gamma_hint > 0.0 && self.gamma_hint <= 1.0) {
            return Err(Error::invalid("gamma hint must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Cell reached by `action` (0 up, 1 right, 2 down, 3 left); walls block.
    fn moved(&self, (x, y): Cell, action: usize) -> Cell {
        match action {
            0 if y > 0 => (x, y - 1),
            1 if x + 1 < self.width => (x + 1, y),
            2 if y + 1 < self.height => (x, y + 1),
            3 if x > 0 => (x - 1, y),
            _ => (x, y),
        }
    }

    /// Reward and termination for entering `cell`.
    fn outcome(&self, cell: Cell) -> (f64, bool) {
        if cell == self.goal {
            (self.goal_reward, true)
        } else if self.hazards.contains(&cell) {
            (self.hazard_penalty, self.hazards_terminal)
        } else {
            (self.step_penalty, false)
        }
    }

    /// Best achievable undiscounted episode return, by backward induction over
    /// the remaining step budget.
    pub fn optimal_return(&self) -> f64 {
        let n = self.width * self.height;
        let idx = |(x, y): Cell| y * self.width + x;
        // value[s] with h steps left; zero steps left is worth nothing.
        let mut value = vec![0.0; n];
        for _ in 0..self.max_steps {
            let mut next = vec![f64::NEG_INFINITY; n];
            for y in 0..self.height {
                for x in 0..self.width {
                    let s = (x, y);
                    for a in 0..4 {
                        let s2 = self.moved(s, a);
                        let (r, terminal) = self.outcome(s2);
                        let q = if terminal { r } else { r + value[idx(s2)] };
                        next[idx(s)] = next[idx(s)].max(q);
                    }
                }
            }
            value = next;
        }
        value[idx(self.start)]
    }
}

#[derive(Debug, Clone)]
pub struct Gridworld {
    config: GridworldConfig,
    pos: Cell,
    steps: usize,
}

pub const GRID_ACTIONS: usize = 4;

impl Gridworld {
    pub fn new(config: GridworldConfig) -> Result<Self> {
        config.validate()?;
        let pos = config.start;
        Ok(Self {
            config,
            pos,
            steps: 0,
        })
    }

    pub fn config(&self) -> &GridworldConfig {
        &self.config
    }

    pub fn position(&self) -> Cell {
        self.pos
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// One-hot position followed by `steps / max_steps`.
    fn observe(&self) -> Vec<f64> {
        let mut obs = vec![0.0; self.config.width * self.config.height + 1];
        obs[self.pos.1 * self.config.width + self.pos.0] = 1.0;
        obs[self.config.width * self.config.height] =
            self.steps as f64 / self.config.max_steps as f64;
        obs
    }
}

impl Environment for Gridworld {
    fn observation_dim(&self) -> usize {
        self.config.width * self.config.height + 1
    }

    fn num_actions(&self) -> usize {
        GRID_ACTIONS
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.pos = self.config.start;
        self.steps = 0;
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if action >= GRID_ACTIONS {
            return Err(Error::invalid(format!(
                "gridworld action {action} out of range"
            )));
        }
        self.pos = self.config.moved(self.pos, action);
        self.steps += 1;
        let (reward, terminal) = self.config.outcome(self.pos);
        Ok(StepOutcome {
            observation: self.observe(),
            reward,
            done: terminal || self.steps >= self.config.max_steps,
        })
    }
}

/// Classic cart-pole balancing (Barto, Sutton & Anderson 1983) with the
/// constants used by the common Gym implementation and Euler integration.
#[derive(Debug, Clone, PartialEq)]
pub struct CartPoleConfig {
    pub gravity: f64,
    pub mass_cart: f64,
    pub mass_pole: f64,
    /// Half the pole length.
    pub half_length: f64,
    pub force_mag: f64,
    pub tau: f64,
    pub theta_threshold: f64,
    pub x_threshold: f64,
    pub max_steps: usize,
    /// Initial state components are drawn from `U(-init_range, init_range)`.
    pub init_range: f64,
}

impl Default for CartPoleConfig {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            mass_cart: 1.0,
            mass_pole: 0.1,
            half_length: 0.5,
            force_mag: 10.0,
            tau: 0.02,
            theta_threshold: 12.0 * 2.0 * std::f64::consts::PI / 360.0,
            x_threshold: 2.4,
            max_steps: 500,
            init_range: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CartPole {
    config: CartPoleConfig,
    /// `[x, x_dot, theta, theta_dot]`
    state: [f64; 4],
    steps: usize,
}

impl CartPole {
    pub fn new(config: CartPoleConfig) -> Result<Self> {
        if config.max_steps == 0 || !(config.tau > 0.0) || !(config.init_range >= 0.0) {
            return Err(Error::invalid("invalid cart-pole configuration"));
        }
        Ok(Self {
            config,
            state: [0.0; 4],
            steps: 0,
        })
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }
}

impl Environment for CartPole {
    fn observation_dim(&self) -> usize {
        4
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = crate::rng::stream(seed, 0);
        let r = self.config.init_range;
        for s in &mut self.state {
            *s = rng.random_range(-r..=r);
        }
        self.steps = 0;
        self.state.to_vec()
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if action >= 2 {
            return Err(Error::invalid(format!(
                "cart-pole action {action} out of range"
            )));
        }
        let c = &self.config;
        let [x, x_dot, theta, theta_dot] = self.state;
        let force = if action == 1 {
            c.force_mag
        } else {
            -c.force_mag
        };
        let total_mass = c.mass_cart + c.mass_pole;
        let pole_mass_length = c.mass_pole * c.half_length;
        let (sin, cos) = theta.sin_cos();
        let temp = (force + pole_mass_length * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (c.gravity * sin - cos * temp)
            / (c.half_length * (4.0 / 3.0 - c.mass_pole * cos * cos / total_mass));
        let x_acc = temp - pole_mass_length * theta_acc * cos / total_mass;
        self.state = [
            x + c.tau * x_dot,
            x_dot + c.tau * x_acc,
            theta + c.tau * theta_dot,
            theta_dot + c.tau * theta_acc,
        ];
        self.steps += 1;
        let [x, _, theta, _] = self.state;
        let failed = x.abs() > c.x_threshold || theta.abs() > c.theta_threshold;
        Ok(StepOutcome {
            observation: self.state.to_vec(),
            reward: 1.0,
            done: failed || self.steps >= c.max_steps,
        })
    }
}

/// Environment selection used by the trainers.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvConfig {
    Gridworld(GridworldConfig),
    CartPole(CartPoleConfig),
}

impl EnvConfig {
    pub fn build(&self) -> Result<Env> {
        Ok(match self {
            EnvConfig::Gridworld(c) => Env::Gridworld(Gridworld::new(c.clone())?),
            EnvConfig::CartPole(c) => Env::CartPole(CartPole::new(c.clone())?),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::Gridworld(_) => "gridworld",
            EnvConfig::CartPole(_) => "cartpole",
        }
    }
}

#[derive(Debug, Clone)]
pub enum Env {
    Gridworld(Gridworld),
    CartPole(CartPole),
}

impl Environment for Env {
    fn observation_dim(&self) -> usize {
        match self {
            Env::Gridworld(e) => e.observation_dim(),
            Env::CartPole(e) => e.observation_dim(),
        }
    }

    fn num_actions(&self) -> usize {
        match self {
            Env::Gridworld(e) => e.num_actions(),
            Env::CartPole(e) => e.num_actions(),
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        match self {
            Env::Gridworld(e) => e.reset(seed),
            Env::CartPole(e) => e.reset(seed),
        }
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        match self {
            Env::Gridworld(e) => e.step(action),
            Env::CartPole(e) => e.step(action),
        }
    }
}

/// A sequence of regression problems sharing one hidden linear target whose
/// output is multiplied by a per-phase scale. Changing the scale between
/// phases makes the gradient of a converged fit jump by roughly the ratio of
/// the scales.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSwitchConfig {
    pub input_dim: usize,
    /// Optimizer updates per phase.
    pub phase_length: usize,
    pub target_scale_schedule: Vec<f64>,
    pub noise_std: f64,
    pub batch_size: usize,
}

impl RegressionSwitchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.phase_length == 0 || self.batch_size == 0 {
            return Err(Error::invalid(
                "input_dim, phase_length and batch_size must be positive",
            ));
        }
        if self.target_scale_schedule.is_empty() {
            return Err(Error::invalid("target scale schedule is empty"));
        }
        if self
            .target_scale_schedule
            .iter()
            .any(|s| !(*s > 0.0 && s.is_finite()))
        {
            return Err(Error::invalid("target scales must be positive"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("noise_std must be nonnegative"));
        }
        Ok(())
    }

    /// `[low, high, low, high, ...]` with `phases` entries.
    pub fn alternating(low: f64, high: f64, phases: usize) -> Vec<f64> {
        (0..phases)
            .map(|i| if i % 2 == 0 { low } else { high })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct RegressionSwitchTask {
    config: RegressionSwitchConfig,
    /// Hidden target weights, unit norm.
    weights: Vec<f64>,
}

impl RegressionSwitchTask {
    /// The hidden target is drawn from `task_seed`.
    pub fn new(config: RegressionSwitchConfig, task_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = crate::rng::stream(task_seed, crate::rng::streams::TASK);
        let mut weights: Vec<f64> = (0..config.input_dim)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let norm = crate::optim::l2_norm(&weights);
        weights.iter_mut().for_each(|w| *w /= norm);
        Ok(Self { config, weights })
    }

    pub fn config(&self) -> &RegressionSwitchConfig {
        &self.config
    }

    pub fn num_phases(&self) -> usize {
        self.config.target_scale_schedule.len()
    }

    pub fn hidden_weights(&self) -> &[f64] {
        &self.weights
    }

    /// Noise-free target for one input row in the given phase.
    pub fn target(&self, phase_index: usize, x: &[f64]) -> f64 {
        let scale = self.config.target_scale_schedule[phase_index];
        scale * x.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Standard-normal inputs and their (noisy) scaled targets.
    pub fn regression_batch(
        &self,
        phase_index: usize,
        rng: &mut Rng,
    ) -> Result<(Matrix, Vec<f64>)> {
        if phase_index >= self.num_phases() {
            return Err(Error::invalid(format!(
                "phase {phase_index} beyond a schedule of {}",
                self.num_phases()
            )));
        }
        let (b, d) = (self.config.batch_size, self.config.input_dim);
        let data: Vec<f64> = (0..b * d).map(|_| rng.sample(StandardNormal)).collect();
        let inputs = Matrix::from_vec(b, d, data)?;
        let targets = (0..b)
            .map(|r| {
                let noise = if self.config.noise_std > 0.0 {
                    self.config.noise_std * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                self.target(phase_index, inputs.row(r)) + noise
            })
            .collect();
        Ok((inputs, targets))
    }
}
