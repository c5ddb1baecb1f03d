//! Named starting configurations.
//!
//! PPO presets follow the Atari PPO tables (4 epochs of 4 minibatches over
//! 8 environments × 128 steps, clip 0.1, value clipping, normalized
//! advantages). DQN presets follow the Atari-10 DQN table with the replay
//! buffer and warm-up shrunk to fit a 300k-step gridworld budget. Network
//! bodies and step budgets are ours.

use adamrel_core::envs::{CartPoleConfig, GridworldConfig};

use crate::config::Kind;

pub struct Preset {
    pub name: &'static str,
    pub kind: Kind,
    pub summary: &'static str,
    overrides: &'static [(&'static str, &'static str)],
}

impl Preset {
    /// Every key the preset's kind understands, with this preset's values.
    pub fn values(&self) -> Vec<(String, String)> {
        let mut base = base(self.kind);
        for (k, v) in self.overrides {
            let slot = base
                .iter_mut()
                .find(|(bk, _)| bk == k)
                .unwrap_or_else(|| panic!("preset {} sets unknown key {k}", self.name));
            slot.1 = v.to_string();
        }
        base
    }
}

const PPO_ADAM: &[(&str, &str)] = &[
    ("optimizer.variant", "adam"),
    // 2.5e-4 in the Atari table; on the gridworld that rate leaves most
    // seeds stuck bumping into walls.
    ("optimizer.learning_rate", "0.002"),
    ("optimizer.max_grad_norm", "0.5"),
    ("ppo.gae_lambda", "0.95"),
];

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "theory-figure",
        kind: Kind::TheoryCurve,
        summary: "update size against t for Adam and Adam-Rel over a range of k",
        overrides: &[],
    },
    Preset {
        name: "ppo-adam-gridworld",
        kind: Kind::TrainPpo,
        summary: "PPO, Adam",
        overrides: PPO_ADAM,
    },
    Preset {
        name: "ppo-adam-eq-betas-gridworld",
        kind: Kind::TrainPpo,
        summary: "PPO, Adam with beta2 = beta1",
        overrides: &[
            ("optimizer.variant", "adam-eq-betas"),
            ("optimizer.learning_rate", "0.002"),
            ("optimizer.beta2", "0.9"),
            ("optimizer.max_grad_norm", "0.5"),
            ("ppo.gae_lambda", "0.95"),
        ],
    },
    Preset {
        name: "ppo-adamrel-gridworld",
        kind: Kind::TrainPpo,
        summary: "PPO, Adam-Rel",
        overrides: &[
            ("optimizer.variant", "adam-rel"),
            ("optimizer.learning_rate", "0.002"),
            ("optimizer.max_grad_norm", "5"),
            ("ppo.gae_lambda", "0.9"),
        ],
    },
    Preset {
        name: "ppo-adammr-gridworld",
        kind: Kind::TrainPpo,
        summary: "PPO, Adam-MR",
        overrides: &[
            ("optimizer.variant", "adam-mr"),
            ("optimizer.learning_rate", "0.002"),
            ("optimizer.max_grad_norm", "5"),
            ("ppo.gae_lambda", "0.9"),
        ],
    },
    Preset {
        name: "ppo-adamrel-cartpole",
        kind: Kind::TrainPpo,
        summary: "PPO, Adam-Rel on cart-pole",
        overrides: &[
            ("env.kind", "cartpole"),
            ("optimizer.variant", "adam-rel"),
            ("optimizer.learning_rate", "0.002"),
            ("optimizer.max_grad_norm", "5"),
            ("ppo.gae_lambda", "0.9"),
        ],
    },
    Preset {
        name: "dqn-adam-gridworld",
        kind: Kind::TrainDqn,
        summary: "DQN with hard target copies, Adam",
        overrides: &[("optimizer.variant", "adam")],
    },
    Preset {
        name: "dqn-adamrel-gridworld",
        kind: Kind::TrainDqn,
        summary: "DQN with hard target copies, Adam-Rel",
        overrides: &[("optimizer.variant", "adam-rel")],
    },
    Preset {
        name: "dqn-adammr-gridworld",
        kind: Kind::TrainDqn,
        summary: "DQN with hard target copies, Adam-MR",
        overrides: &[("optimizer.variant", "adam-mr")],
    },
    Preset {
        name: "dqn-adam-polyak-gridworld",
        kind: Kind::TrainDqn,
        summary: "DQN with Polyak averaging (tau 0.02), Adam",
        overrides: &[("optimizer.variant", "adam"), ("dqn.polyak_tau", "0.02")],
    },
    Preset {
        name: "dqn-adamrel-polyak-gridworld",
        kind: Kind::TrainDqn,
        summary: "DQN with Polyak averaging (tau 0.02), Adam-Rel reset every 1000 updates",
        overrides: &[
            ("optimizer.variant", "adam-rel"),
            ("dqn.polyak_tau", "0.02"),
        ],
    },
    Preset {
        name: "analyze",
        kind: Kind::Analyze,
        summary: "chunk profile of a training run",
        overrides: &[],
    },
    Preset {
        name: "compare",
        kind: Kind::Compare,
        summary: "IQM and bootstrap interval per run",
        overrides: &[],
    },
];

pub fn lookup(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.name).collect()
}

pub fn default_for(kind: Kind) -> &'static str {
    match kind {
        Kind::TheoryCurve => "theory-figure",
        Kind::TrainPpo => "ppo-adamrel-gridworld",
        Kind::TrainDqn => "dqn-adamrel-gridworld",
        Kind::Analyze => "analyze",
        Kind::Compare => "compare",
    }
}

fn s(x: impl ToString) -> String {
    x.to_string()
}

fn env_keys() -> Vec<(String, String)> {
    let g = GridworldConfig::default();
    let c = CartPoleConfig::default();
    let hazards = g
        .hazards
        .iter()
        .map(|(x, y)| format!("{x},{y}"))
        .collect::<Vec<_>>()
        .join(";");
    vec![
        (s("env.kind"), s("gridworld")),
        (s("gridworld.width"), s(g.width)),
        (s("gridworld.height"), s(g.height)),
        (s("gridworld.start"), format!("{},{}", g.start.0, g.start.1)),
        (s("gridworld.goal"), format!("{},{}", g.goal.0, g.goal.1)),
        (s("gridworld.hazards"), hazards),
        (s("gridworld.step_penalty"), s(g.step_penalty)),
        (s("gridworld.goal_reward"), s(g.goal_reward)),
        (s("gridworld.hazard_penalty"), s(g.hazard_penalty)),
        (s("gridworld.hazards_terminal"), s(g.hazards_terminal)),
        (s("gridworld.max_steps"), s(g.max_steps)),
        (s("cartpole.gravity"), s(c.gravity)),
        (s("cartpole.mass_cart"), s(c.mass_cart)),
        (s("cartpole.mass_pole"), s(c.mass_pole)),
        (s("cartpole.half_length"), s(c.half_length)),
        (s("cartpole.force_mag"), s(c.force_mag)),
        (s("cartpole.tau"), s(c.tau)),
        (s("cartpole.theta_threshold"), s(c.theta_threshold)),
        (s("cartpole.x_threshold"), s(c.x_threshold)),
        (s("cartpole.max_steps"), s(c.max_steps)),
        (s("cartpole.init_range"), s(c.init_range)),
    ]
}

fn optimizer_keys(
    variant: &str,
    lr: &str,
    max_grad_norm: &str,
    activation: &str,
) -> Vec<(String, String)> {
    vec![
        (s("net.hidden"), s("64,64")),
        (s("net.activation"), s(activation)),
        (s("optimizer.variant"), s(variant)),
        (s("optimizer.learning_rate"), s(lr)),
        (s("optimizer.beta1"), s("0.9")),
        (s("optimizer.beta2"), s("0.999")),
        (s("optimizer.eps"), s("1e-5")),
        (s("optimizer.max_grad_norm"), s(max_grad_norm)),
    ]
}

fn base(kind: Kind) -> Vec<(String, String)> {
    let mut v = Vec::new();
    match kind {
        Kind::TheoryCurve => {
            v.push((s("theory.k_values"), s("1,2,10,100,1000,10000")));
            v.push((s("theory.t_max"), s("1000")));
            v.push((s("theory.variants"), s("adam,adam-rel")));
            v.push((s("theory.beta1"), s("0.9")));
            v.push((s("theory.beta2"), s("0.999")));
        }
        Kind::TrainPpo => {
            v.push((s("run.seeds"), s("0")));
            v.push((s("run.total_steps"), s("200000")));
            v.extend(env_keys());
            for (k, val) in [
                ("ppo.num_envs", "8"),
                ("ppo.rollout_steps", "128"),
                ("ppo.num_epochs", "4"),
                ("ppo.num_minibatches", "4"),
                ("ppo.gamma", "0.99"),
                ("ppo.gae_lambda", "0.9"),
                ("ppo.clip_eps", "0.1"),
                ("ppo.value_clip", "true"),
                ("ppo.normalize_advantages", "true"),
                ("ppo.entropy_coef", "0.01"),
                ("ppo.value_coef", "0.5"),
            ] {
                v.push((s(k), s(val)));
            }
            v.extend(optimizer_keys("adam-rel", "0.002", "5", "tanh"));
        }
        Kind::TrainDqn => {
            v.push((s("run.seeds"), s("0")));
            v.push((s("run.total_steps"), s("300000")));
            v.extend(env_keys());
            for (k, val) in [
                ("dqn.buffer_capacity", "50000"),
                ("dqn.batch_size", "32"),
                ("dqn.target_update_interval", "1000"),
                ("dqn.polyak_tau", "none"),
                ("dqn.gamma", "0.99"),
                ("dqn.epsilon_start", "1"),
                ("dqn.epsilon_end", "0.01"),
                ("dqn.exploration_fraction", "0.1"),
                ("dqn.learning_starts", "10000"),
                ("dqn.train_frequency", "4"),
            ] {
                v.push((s(k), s(val)));
            }
            v.extend(optimizer_keys("adam-rel", "0.0001", "10", "relu"));
        }
        Kind::Analyze => {
            v.push((s("analyze.input"), s("")));
            // 0 picks the most common chunk length in the run.
            v.push((s("analyze.chunk_length"), s("0")));
            v.push((s("analyze.skip_chunks"), s("1")));
            v.push((s("analyze.variant"), s("auto")));
        }
        Kind::Compare => {
            v.push((s("compare.inputs"), s("")));
            v.push((s("compare.score"), s("final")));
            v.push((s("compare.n_resamples"), s("2000")));
            v.push((s("compare.level"), s("0.95")));
            v.push((s("compare.bootstrap_seed"), s("0")));
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Invocation, Settings};

    #[test]
    fn every_preset_resolves() {
        for p in PRESETS {
            let mut inv = Invocation {
                preset: Some(p.name.into()),
                ..Default::default()
            };
            if p.kind == Kind::Analyze || p.kind == Kind::Compare {
                inv.inputs = vec!["somewhere".into()];
            }
            Settings::resolve(p.kind, &inv).unwrap_or_else(|e| panic!("{}: {e}", p.name));
        }
    }

    #[test]
    fn adamrel_ppo_preset_matches_the_table() {
        let inv = Invocation {
            preset: Some("ppo-adamrel-gridworld".into()),
            ..Default::default()
        };
        let c = Settings::resolve(Kind::TrainPpo, &inv)
            .unwrap()
            .ppo()
            .unwrap();
        assert_eq!(c.optimizer.alpha, 2e-3);
        assert_eq!(c.gae_lambda, 0.9);
        assert_eq!(c.optimizer.max_grad_norm, Some(5.0));
        assert_eq!(c.clip_eps, 0.1);
        assert_eq!(
            (c.num_envs, c.rollout_steps, c.num_epochs, c.num_minibatches),
            (8, 128, 4, 4)
        );
        assert_eq!(c.optimizer.eps, 1e-5);
    }

    #[test]
    fn eq_betas_preset_has_equal_betas() {
        let inv = Invocation {
            preset: Some("ppo-adam-eq-betas-gridworld".into()),
            ..Default::default()
        };
        let c = Settings::resolve(Kind::TrainPpo, &inv)
            .unwrap()
            .optimizer()
            .unwrap();
        assert_eq!(c.beta1, c.beta2);
    }

    #[test]
    fn defaults_exist_for_every_kind() {
        for k in Kind::ALL {
            assert_eq!(lookup(default_for(k)).unwrap().kind, k);
        }
    }
}
