//! Flat `key = value` run configuration with dotted section prefixes.
//!
//! Values are resolved in layers. The preset is applied first, then the
//! config file, then `--seed` and `--set` flags. Every key a run reads must
//! appear in its preset, so unknown keys are rejected with the file and line
//! they came from.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use adamrel_core::envs::{CartPoleConfig, Cell, EnvConfig, GridworldConfig};
use adamrel_core::nn::Activation;
use adamrel_core::optim::{OptimizerConfig, Variant};
use adamrel_core::rl::{DqnConfig, NetConfig, PpoConfig};

use crate::presets;

/// Which subcommand a configuration drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    TheoryCurve,
    TrainPpo,
    TrainDqn,
    Analyze,
    Compare,
}

impl Kind {
    pub const ALL: [Kind; 5] = [
        Kind::TheoryCurve,
        Kind::TrainPpo,
        Kind::TrainDqn,
        Kind::Analyze,
        Kind::Compare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::TheoryCurve => "theory-curve",
            Kind::TrainPpo => "train-ppo",
            Kind::TrainDqn => "train-dqn",
            Kind::Analyze => "analyze",
            Kind::Compare => "compare",
        }
    }

    pub fn is_training(self) -> bool {
        matches!(self, Kind::TrainPpo | Kind::TrainDqn)
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Kind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown run kind `{s}`"))
    }
}

/// Where a value came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Origin {
    pub source: String,
    pub line: Option<usize>,
}

impl Origin {
    fn flag() -> Self {
        Self {
            source: "command line".into(),
            line: None,
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(n) => write!(f, "{} line {n}", self.source),
            None => f.write_str(&self.source),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub origin: Origin,
    pub key: Option<String>,
    pub message: String,
}

impl ConfigError {
    fn new(origin: Origin, key: Option<&str>, message: impl Into<String>) -> Self {
        Self {
            origin,
            key: key.map(str::to_string),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: ", self.origin)?;
        if let Some(k) = &self.key {
            write!(f, "`{k}`: ")?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for ConfigError {}

/// One `key = value` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Splits config text into entries. `#` starts a comment anywhere on a line.
pub fn parse_text(text: &str, source: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let origin = || Origin {
            source: source.to_string(),
            line: Some(line),
        };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::new(
                origin(),
                None,
                format!("expected `key = value`, got `{content}`"),
            ));
        };
        let key = key.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(ConfigError::new(
                origin(),
                None,
                format!("malformed key `{key}`"),
            ));
        }
        if !seen.insert(key.to_string()) {
            return Err(ConfigError::new(origin(), Some(key), "key appears twice"));
        }
        out.push(Entry {
            key: key.to_string(),
            value: value.trim().to_string(),
            line,
        });
    }
    Ok(out)
}

/// Everything a run needs besides the subcommand itself.
#[derive(Debug, Clone, Default)]
pub struct Invocation {
    pub config: Option<PathBuf>,
    pub preset: Option<String>,
    pub seeds: Option<Vec<u64>>,
    /// `key=value` overrides, applied last.
    pub sets: Vec<String>,
    /// Run directories for `analyze` and `compare`.
    pub inputs: Vec<PathBuf>,
}

/// A fully resolved configuration.
#[derive(Debug, Clone)]
pub struct Settings {
    pub kind: Kind,
    values: BTreeMap<String, (String, Origin)>,
}

impl Settings {
    pub fn resolve(kind: Kind, inv: &Invocation) -> Result<Self, ConfigError> {
        let preset_name = inv.preset.as_deref().unwrap_or(presets::default_for(kind));
        let preset = presets::lookup(preset_name).ok_or_else(|| {
            ConfigError::new(
                Origin::flag(),
                None,
                format!(
                    "unknown preset `{preset_name}` (available: {})",
                    presets::names().join(", ")
                ),
            )
        })?;
        if preset.kind != kind {
            return Err(ConfigError::new(
                Origin::flag(),
                None,
                format!("preset `{preset_name}` is for {}, not {kind}", preset.kind),
            ));
        }
        let origin = Origin {
            source: format!("preset {preset_name}"),
            line: None,
        };
        let values = preset
            .values()
            .into_iter()
            .map(|(k, v)| (k, (v, origin.clone())))
            .collect();
        let mut settings = Self { kind, values };

        if let Some(path) = &inv.config {
            let source = path.display().to_string();
            let text = std::fs::read_to_string(path).map_err(|e| {
                ConfigError::new(
                    Origin {
                        source: source.clone(),
                        line: None,
                    },
                    None,
                    format!("cannot read: {e}"),
                )
            })?;
            for e in parse_text(&text, &source)? {
                let origin = Origin {
                    source: source.clone(),
                    line: Some(e.line),
                };
                settings.apply_file_entry(e, origin)?;
            }
        }

        if let Some(seeds) = &inv.seeds {
            let list = seeds
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(",");
            settings.set("run.seeds", list, Origin::flag())?;
        }
        if !inv.inputs.is_empty() {
            let key = match kind {
                Kind::Analyze => "analyze.input",
                Kind::Compare => "compare.inputs",
                _ => {
                    return Err(ConfigError::new(
                        Origin::flag(),
                        None,
                        format!("{kind} takes no input directories"),
                    ));
                }
            };
            let joined = inv
                .inputs
                .iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(",");
            settings.set(key, joined, Origin::flag())?;
        }
        for s in &inv.sets {
            let (k, v) = s.split_once('=').ok_or_else(|| {
                ConfigError::new(
                    Origin::flag(),
                    None,
                    format!("--set expects key=value, got `{s}`"),
                )
            })?;
            settings.set(k.trim(), v.trim().to_string(), Origin::flag())?;
        }
        settings.check()?;
        Ok(settings)
    }

    fn apply_file_entry(&mut self, e: Entry, origin: Origin) -> Result<(), ConfigError> {
        match e.key.as_str() {
            // Written into manifests; checked rather than stored.
            "run.kind" => {
                if e.value != self.kind.name() {
                    return Err(ConfigError::new(
                        origin,
                        Some("run.kind"),
                        format!("file is for {}, not {}", e.value, self.kind),
                    ));
                }
                Ok(())
            }
            "run.code_version" => {
                if e.value != crate::CODE_VERSION {
                    eprintln!(
                        "warning: {origin}: written by version {}, running {}",
                        e.value,
                        crate::CODE_VERSION
                    );
                }
                Ok(())
            }
            _ => self.set(&e.key, e.value, origin),
        }
    }

    fn set(&mut self, key: &str, value: String, origin: Origin) -> Result<(), ConfigError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = (value, origin);
                Ok(())
            }
            None => Err(ConfigError::new(
                origin,
                Some(key),
                format!("unknown key for {}", self.kind),
            )),
        }
    }

    /// Builds every typed view the run will use so that bad values surface
    /// before any work starts.
    fn check(&self) -> Result<(), ConfigError> {
        match self.kind {
            Kind::TheoryCurve => {
                self.f64_list("theory.k_values")?;
                self.u64("theory.t_max")?;
                self.curve_variants()?;
                self.f64("theory.beta1")?;
                self.f64("theory.beta2")?;
            }
            Kind::TrainPpo => {
                self.seeds()?;
                self.u64("run.total_steps")?;
                self.env()?;
                self.ppo()?;
            }
            Kind::TrainDqn => {
                self.seeds()?;
                self.u64("run.total_steps")?;
                self.env()?;
                self.dqn()?;
            }
            Kind::Analyze => {
                if self.raw("analyze.input").is_empty() {
                    return Err(self.err("analyze.input", "a run directory is required"));
                }
                self.usize("analyze.chunk_length")?;
                self.usize("analyze.skip_chunks")?;
                let v = self.raw("analyze.variant");
                if v != "auto" {
                    self.parse::<adamrel_core::theory::CurveVariant>("analyze.variant")?;
                }
            }
            Kind::Compare => {
                if self.compare_inputs().is_empty() {
                    return Err(
                        self.err("compare.inputs", "at least one run directory is required")
                    );
                }
                match self.raw("compare.score") {
                    "final" | "best" => {}
                    other => {
                        return Err(self.err(
                            "compare.score",
                            format!("expected final or best, got `{other}`"),
                        ))
                    }
                }
                self.usize("compare.n_resamples")?;
                self.f64("compare.level")?;
                self.u64("compare.bootstrap_seed")?;
            }
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        &self
            .values
            .get(key)
            .unwrap_or_else(|| panic!("preset lacks `{key}`"))
            .0
    }

    fn err(&self, key: &str, message: impl Into<String>) -> ConfigError {
        let origin = self
            .values
            .get(key)
            .map(|v| v.1.clone())
            .unwrap_or_else(Origin::flag);
        ConfigError::new(origin, Some(key), message)
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse::<T>()
            .map_err(|e| self.err(key, format!("bad value `{raw}`: {e}")))
    }

    pub fn f64(&self, key: &str) -> Result<f64, ConfigError> {
        self.parse(key)
    }

    pub fn u64(&self, key: &str) -> Result<u64, ConfigError> {
        self.parse(key)
    }

    pub fn usize(&self, key: &str) -> Result<usize, ConfigError> {
        self.parse(key)
    }

    pub fn bool(&self, key: &str) -> Result<bool, ConfigError> {
        self.parse(key)
    }

    /// `none` or a number.
    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        if self.raw(key) == "none" {
            Ok(None)
        } else {
            self.f64(key).map(Some)
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        let raw = self.raw(key);
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse::<T>()
                    .map_err(|e| self.err(key, format!("bad list item `{}`: {e}", s.trim())))
            })
            .collect()
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        let v = self.list(key)?;
        if v.is_empty() {
            return Err(self.err(key, "list must not be empty"));
        }
        Ok(v)
    }

    pub fn seeds(&self) -> Result<Vec<u64>, ConfigError> {
        let seeds: Vec<u64> = self.list("run.seeds")?;
        if seeds.is_empty() {
            return Err(self.err("run.seeds", "at least one seed is required"));
        }
        let unique: BTreeSet<_> = seeds.iter().collect();
        if unique.len() != seeds.len() {
            return Err(self.err("run.seeds", "seeds must be distinct"));
        }
        Ok(seeds)
    }

    pub fn curve_variants(&self) -> Result<Vec<adamrel_core::theory::CurveVariant>, ConfigError> {
        let v = self.list("theory.variants")?;
        if v.is_empty() {
            return Err(self.err("theory.variants", "list must not be empty"));
        }
        Ok(v)
    }

    pub fn analyze_input(&self) -> PathBuf {
        PathBuf::from(self.raw("analyze.input"))
    }

    pub fn compare_inputs(&self) -> Vec<PathBuf> {
        self.raw("compare.inputs")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(PathBuf::from)
            .collect()
    }

    fn cell(&self, key: &str) -> Result<Cell, ConfigError> {
        parse_cell(self.raw(key))
            .ok_or_else(|| self.err(key, format!("expected `x,y`, got `{}`", self.raw(key))))
    }

    fn cells(&self, key: &str) -> Result<BTreeSet<Cell>, ConfigError> {
        let raw = self.raw(key);
        raw.split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                parse_cell(s)
                    .ok_or_else(|| self.err(key, format!("expected `x,y;x,y`, got `{raw}`")))
            })
            .collect()
    }

    pub fn env(&self) -> Result<EnvConfig, ConfigError> {
        let env = match self.raw("env.kind") {
            "gridworld" => EnvConfig::Gridworld(GridworldConfig {
                width: self.usize("gridworld.width")?,
                height: self.usize("gridworld.height")?,
                start: self.cell("gridworld.start")?,
                goal: self.cell("gridworld.goal")?,
                hazards: self.cells("gridworld.hazards")?,
                step_penalty: self.f64("gridworld.step_penalty")?,
                goal_reward: self.f64("gridworld.goal_reward")?,
                hazard_penalty: self.f64("gridworld.hazard_penalty")?,
                hazards_terminal: self.bool("gridworld.hazards_terminal")?,
                max_steps: self.usize("gridworld.max_steps")?,
                gamma_hint: GridworldConfig::default().gamma_hint,
            }),
            "cartpole" => EnvConfig::CartPole(CartPoleConfig {
                gravity: self.f64("cartpole.gravity")?,
                mass_cart: self.f64("cartpole.mass_cart")?,
                mass_pole: self.f64("cartpole.mass_pole")?,
                half_length: self.f64("cartpole.half_length")?,
                force_mag: self.f64("cartpole.force_mag")?,
                tau: self.f64("cartpole.tau")?,
                theta_threshold: self.f64("cartpole.theta_threshold")?,
                x_threshold: self.f64("cartpole.x_threshold")?,
                max_steps: self.usize("cartpole.max_steps")?,
                init_range: self.f64("cartpole.init_range")?,
            }),
            other => {
                return Err(self.err(
                    "env.kind",
                    format!("expected gridworld or cartpole, got `{other}`"),
                ))
            }
        };
        env.build()
            .map_err(|e| self.err("env.kind", e.to_string()))?;
        Ok(env)
    }

    fn net(&self) -> Result<NetConfig, ConfigError> {
        Ok(NetConfig {
            hidden: self.list("net.hidden")?,
            activation: self.parse::<Activation>("net.activation")?,
        })
    }

    pub fn optimizer(&self) -> Result<OptimizerConfig, ConfigError> {
        let variant: Variant = self.parse("optimizer.variant")?;
        OptimizerConfig::new(
            variant,
            self.f64("optimizer.learning_rate")?,
            self.f64("optimizer.beta1")?,
            self.f64("optimizer.beta2")?,
            self.f64("optimizer.eps")?,
            self.opt_f64("optimizer.max_grad_norm")?,
        )
        .map_err(|e| self.err("optimizer.variant", e.to_string()))
    }

    pub fn ppo(&self) -> Result<PpoConfig, ConfigError> {
        let c = PpoConfig {
            num_envs: self.usize("ppo.num_envs")?,
            rollout_steps: self.usize("ppo.rollout_steps")?,
            num_epochs: self.usize("ppo.num_epochs")?,
            num_minibatches: self.usize("ppo.num_minibatches")?,
            gamma: self.f64("ppo.gamma")?,
            gae_lambda: self.f64("ppo.gae_lambda")?,
            clip_eps: self.f64("ppo.clip_eps")?,
            value_clip: self.bool("ppo.value_clip")?,
            normalize_advantages: self.bool("ppo.normalize_advantages")?,
            entropy_coef: self.f64("ppo.entropy_coef")?,
            value_coef: self.f64("ppo.value_coef")?,
            net: self.net()?,
            optimizer: self.optimizer()?,
        };
        c.validate()
            .map_err(|e| self.err("ppo.num_envs", e.to_string()))?;
        Ok(c)
    }

    pub fn dqn(&self) -> Result<DqnConfig, ConfigError> {
        let c = DqnConfig {
            buffer_capacity: self.usize("dqn.buffer_capacity")?,
            batch_size: self.usize("dqn.batch_size")?,
            target_update_interval: self.u64("dqn.target_update_interval")?,
            polyak_tau: self.opt_f64("dqn.polyak_tau")?,
            gamma: self.f64("dqn.gamma")?,
            epsilon_start: self.f64("dqn.epsilon_start")?,
            epsilon_end: self.f64("dqn.epsilon_end")?,
            exploration_fraction: self.f64("dqn.exploration_fraction")?,
            learning_starts: self.u64("dqn.learning_starts")?,
            train_frequency: self.u64("dqn.train_frequency")?,
            net: self.net()?,
            optimizer: self.optimizer()?,
        };
        c.validate()
            .map_err(|e| self.err("dqn.buffer_capacity", e.to_string()))?;
        Ok(c)
    }

    /// The resolved configuration in the same format it is read from.
    /// Feeding this back through `--config` reproduces the run.
    pub fn manifest(&self) -> String {
        let mut out = String::from("# resolved run configuration\n");
        out.push_str(&format!("run.kind = {}\n", self.kind));
        out.push_str(&format!("run.code_version = {}\n", crate::CODE_VERSION));
        for (k, (v, _)) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn origin(&self, key: &str) -> Option<&Origin> {
        self.values.get(key).map(|v| &v.1)
    }
}

fn parse_cell(s: &str) -> Option<Cell> {
    let (x, y) = s.split_once(',')?;
    Some((x.trim().parse().ok()?, y.trim().parse().ok()?))
}

/// Reads `run.*` and other keys back out of a manifest written by [`Settings::manifest`].
pub fn read_manifest(path: &Path) -> anyhow::Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
    Ok(parse_text(&text, &path.display().to_string())?
        .into_iter()
        .map(|e| (e.key, e.value))
        .collect())
}
