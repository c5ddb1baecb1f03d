//! Element-wise Adam with timestep-reset (Adam-Rel) and full-reset (Adam-MR)
//! variants.
//!
//! The optimizer sees one flat parameter vector. Each update is
//!
//! ```text
//! t      <- t + 1
//! m      <- b1 m + (1 - b1) g
//! v      <- b2 v + (1 - b2) g^2
//! m_hat  =  m / (1 - b1^t)
//! v_hat  =  v / (1 - b2^t)
//! theta  <- theta - alpha m_hat / (sqrt(v_hat) + eps)
//! ```
//!
//! The variants only differ in what [`OptimizerState::notify_boundary`] does
//! when the training loop signals that the objective has changed (a new PPO
//! batch, a DQN target copy):
//!
//! | variant       | on boundary                     |
//! |---------------|---------------------------------|
//! | `Adam`        | nothing                         |
//! | `AdamEqBetas` | nothing (b1 == b2)              |
//! | `AdamRel`     | `t = 0`, moments kept           |
//! | `AdamMr`      | `t = 0`, `m = 0`, `v = 0`       |

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Denominator stabilizer used by most supervised-learning code.
pub const DEFAULT_EPS: f64 = 1e-8;
/// Denominator stabilizer conventionally used by RL implementations.
pub const RL_EPS: f64 = 1e-5;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Adam,
    AdamRel,
    AdamMr,
    AdamEqBetas,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Adam,
        Variant::AdamRel,
        Variant::AdamMr,
        Variant::AdamEqBetas,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Adam => "adam",
            Variant::AdamRel => "adam-rel",
            Variant::AdamMr => "adam-mr",
            Variant::AdamEqBetas => "adam-eq-betas",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown optimizer variant `{s}` (expected adam, adam-rel, adam-mr or adam-eq-betas)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    /// Learning rate.
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub variant: Variant,
    /// Global L2 norm threshold applied to the raw gradient before the moments see it.
    pub max_grad_norm: Option<f64>,
}

impl OptimizerConfig {
    /// Builds a validated config. For [`Variant::AdamEqBetas`] the second-moment
    /// decay is overwritten with `beta1`.
    pub fn new(
        variant: Variant,
        alpha: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        max_grad_norm: Option<f64>,
    ) -> Result<Self> {
        let beta2 = if variant == Variant::AdamEqBetas {
            beta1
        } else {
            beta2
        };
        let config = Self {
            alpha,
            beta1,
            beta2,
            eps,
            variant,
            max_grad_norm,
        };
        config.validate()?;
        Ok(config)
    }

    /// Default betas with `eps = 1e-8`, no clipping.
    pub fn generic(variant: Variant, alpha: f64) -> Result<Self> {
        Self::new(
            variant,
            alpha,
            DEFAULT_BETA1,
            DEFAULT_BETA2,
            DEFAULT_EPS,
            None,
        )
    }

    /// Default betas with `eps = 1e-5` and the given clip threshold.
    pub fn rl(variant: Variant, alpha: f64, max_grad_norm: Option<f64>) -> Result<Self> {
        Self::new(
            variant,
            alpha,
            DEFAULT_BETA1,
            DEFAULT_BETA2,
            RL_EPS,
            max_grad_norm,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive and finite, got {}",
                self.alpha
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!(
                    "{name} must lie in [0, 1), got {b}"
                )));
            }
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::invalid(format!(
                "eps must be nonnegative and finite, got {}",
                self.eps
            )));
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::invalid(format!(
                    "max_grad_norm must be positive and finite, got {c}"
                )));
            }
        }
        if self.variant == Variant::AdamEqBetas && self.beta1 != self.beta2 {
            return Err(Error::invalid(format!(
                "adam-eq-betas requires beta1 == beta2, got {} and {}",
                self.beta1, self.beta2
            )));
        }
        Ok(())
    }
}

/// Per-parameter moment estimates plus the two step counters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    m: Vec<f64>,
    v: Vec<f64>,
    t_local: u64,
    steps_total: u64,
}

/// What one [`OptimizerState::step`] did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    /// Delta added to the parameters, learning rate included.
    pub update: Vec<f64>,
    pub pre_clip_grad_norm: f64,
    pub update_norm: f64,
    pub max_abs_update: f64,
}

impl OptimizerState {
    pub fn new(param_count: usize) -> Result<Self> {
        if param_count == 0 {
            return Err(Error::invalid(
                "optimizer state needs at least one parameter",
            ));
        }
        Ok(Self {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t_local: 0,
            steps_total: 0,
        })
    }

    /// Rebuilds a state from raw parts, e.g. when loading a checkpoint.
    pub fn from_parts(m: Vec<f64>, v: Vec<f64>, t_local: u64, steps_total: u64) -> Result<Self> {
        if m.is_empty() || m.len() != v.len() {
            return Err(Error::invalid(format!(
                "moment vectors must be nonempty and equally long ({} vs {})",
                m.len(),
                v.len()
            )));
        }
        if v.iter().any(|x| !(*x >= 0.0)) || m.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("moments must be finite with v >= 0"));
        }
        if t_local > steps_total {
            return Err(Error::invalid(format!(
                "t_local ({t_local}) exceeds steps_total ({steps_total})"
            )));
        }
        Ok(Self {
            m,
            v,
            t_local,
            steps_total,
        })
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn m(&self) -> &[f64] {
        &self.m
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    /// Timestep used for bias correction.
    pub fn t_local(&self) -> u64 {
        self.t_local
    }

    /// Number of steps taken over the lifetime of the state. Never reset.
    pub fn steps_total(&self) -> u64 {
        self.steps_total
    }

    /// Applies one update to `params` in place.
    ///
    /// On error nothing is modified.
    pub fn step(
        &mut self,
        config: &OptimizerConfig,
        params: &mut [f64],
        grads: &[f64],
    ) -> Result<StepResult> {
        config.validate()?;
        let n = self.m.len();
        if grads.len() != n || params.len() != n {
            return Err(Error::invalid(format!(
                "length mismatch: state {n}, grads {}, params {}",
                grads.len(),
                params.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::poisoned(format!(
                "gradient element {i} is {}",
                grads[i]
            )));
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::invalid(format!(
                "parameter element {i} is {}",
                params[i]
            )));
        }

        let pre_clip_grad_norm = l2_norm(grads);
        let scale = match config.max_grad_norm {
            Some(c) if pre_clip_grad_norm > c => Some(clip_scale(grads, pre_clip_grad_norm, c)),
            _ => None,
        };

        self.t_local += 1;
        self.steps_total += 1;
        let t = self.t_local;
        let (b1, b2) = (config.beta1, config.beta2);
        let c1 = 1.0 - pow_t(b1, t);
        let c2 = 1.0 - pow_t(b2, t);

        let mut update = vec![0.0; n];
        // Element-wise pass first, reductions after, so the former vectorizes.
        for (((u, p), (m, v)), &g) in update
            .iter_mut()
            .zip(params.iter_mut())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .zip(grads)
        {
            let g = match scale {
                Some(s) => g * s,
                None => g,
            };
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * (g * g);
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *u = -config.alpha * m_hat / (v_hat.sqrt() + config.eps);
            *p += *u;
        }
        let max_abs = update.iter().fold(0.0f64, |a, u| a.max(u.abs()));

        Ok(StepResult {
            update_norm: l2_norm(&update),
            update,
            pre_clip_grad_norm,
            max_abs_update: max_abs,
        })
    }

    /// Signals that the objective changed. See the module docs for what each
    /// variant does; `steps_total` is always kept.
    pub fn notify_boundary(&mut self, config: &OptimizerConfig) {
        match config.variant {
            Variant::Adam | Variant::AdamEqBetas => {}
            Variant::AdamRel => self.t_local = 0,
            Variant::AdamMr => {
                self.t_local = 0;
                self.m.fill(0.0);
                self.v.fill(0.0);
            }
        }
    }
}

/// Config and state bundled together, for loops that own a single optimizer.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub state: OptimizerState,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, param_count: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            state: OptimizerState::new(param_count)?,
        })
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<StepResult> {
        self.state.step(&self.config, params, grads)
    }

    pub fn notify_boundary(&mut self) {
        self.state.notify_boundary(&self.config);
    }
}

/// Rescales `grads` so their L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &[f64], max_norm: f64) -> Result<Vec<f64>> {
    if !(max_norm > 0.0 && max_norm.is_finite()) {
        return Err(Error::invalid(format!(
            "max_norm must be positive and finite, got {max_norm}"
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::poisoned(format!(
            "gradient element {i} is {}",
            grads[i]
        )));
    }
    let norm = l2_norm(grads);
    if norm <= max_norm {
        return Ok(grads.to_vec());
    }
    let s = clip_scale(grads, norm, max_norm);
    Ok(grads.iter().map(|g| g * s).collect())
}

/// `max_norm / norm`, nudged down until the rescaled vector's computed norm no
/// longer exceeds `max_norm`. Without the nudge rounding can leave the result
/// an ulp above the cap, and clipping it again would rescale it again.
fn clip_scale(grads: &[f64], norm: f64, max_norm: f64) -> f64 {
    let mut s = max_norm / norm;
    for _ in 0..8 {
        let scaled = grads.iter().map(|g| (g * s) * (g * s)).sum::<f64>().sqrt();
        if scaled <= max_norm {
            break;
        }
        s = f64::from_bits(s.to_bits() - 1);
    }
    s
}

pub fn l2_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn pow_t(beta: f64, t: u64) -> f64 {
    match i32::try_from(t) {
        Ok(t) => beta.powi(t),
        Err(_) => beta.powf(t as f64),
    }
}
