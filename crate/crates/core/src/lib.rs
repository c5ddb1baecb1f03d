//! Adam with optimizer-state resets at objective boundaries.
//!
//! When the objective a network is trained on changes abruptly (a new PPO
//! batch, a replaced DQN target network, a new task) the gradient scale can
//! jump. Plain Adam then takes a large first step because its second-moment
//! estimate still reflects the old, smaller gradients. Resetting only the
//! local timestep ([`optim::Variant::AdamRel`]) keeps the moment estimates and
//! bounds the step size by the learning rate.
//!
//! - [`optim`]: the optimizer and its variants.
//! - [`theory`]: closed-form and simulated update-size curves for a step change
//!   in gradient magnitude.
//! - [`nn`]: dense MLPs with hand-written gradients.
//! - [`envs`]: gridworld, cart-pole and the regression switch task.
//! - [`rl`]: PPO, DQN and the supervised switch driver.
//! - [`telemetry`]: per-step records, chunk profiles, IQM and bootstrap CIs.
//! - [`checkpoint`]: text checkpoints.

pub mod checkpoint;
pub mod envs;
pub mod error;
pub mod nn;
pub mod optim;
pub mod rl;
pub mod rng;
pub mod telemetry;
pub mod theory;

pub use error::{Error, Result};
