//! Plain-text checkpoints of network parameters and optimizer state.
//!
//! One `key = value` pair per line. Vectors are space separated and floats are
//! written with 17 significant digits, so a save/load round trip is exact.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::{Activation, FlatParams, MlpSpec, OutputHeads};
use crate::optim::OptimizerState;
use crate::telemetry::fmt_f64;

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: MlpSpec,
    pub params: FlatParams,
    pub optimizer: OptimizerState,
}

fn heads_str(h: OutputHeads) -> String {
    match h {
        OutputHeads::Scalar => "scalar".into(),
        OutputHeads::Categorical(n) => format!("categorical:{n}"),
        OutputHeads::Dual(n) => format!("dual:{n}"),
    }
}

fn parse_heads(s: &str) -> Result<OutputHeads> {
    if s == "scalar" {
        return Ok(OutputHeads::Scalar);
    }
    let (kind, n) = s
        .split_once(':')
        .ok_or_else(|| Error::Parse(format!("bad heads `{s}`")))?;
    let n: usize = n
        .parse()
        .map_err(|_| Error::Parse(format!("bad heads `{s}`")))?;
    match kind {
        "categorical" => Ok(OutputHeads::Categorical(n)),
        "dual" => Ok(OutputHeads::Dual(n)),
        _ => Err(Error::Parse(format!("bad heads `{s}`"))),
    }
}

fn join_f64(xs: &[f64]) -> String {
    xs.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(" ")
}

fn parse_list<T: std::str::FromStr>(key: &str, s: &str) -> Result<Vec<T>> {
    s.split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| Error::Parse(format!("bad value `{t}` in `{key}`")))
        })
        .collect()
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let sizes = self
            .spec
            .layer_sizes
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        format!(
            "format = {FORMAT_VERSION}\nlayer_sizes = {sizes}\nactivation = {}\nheads = {}\nt_local = {}\nsteps_total = {}\nparams = {}\nm = {}\nv = {}\n",
            self.spec.activation.name(),
            heads_str(self.spec.heads),
            self.optimizer.t_local(),
            self.optimizer.steps_total(),
            join_f64(&self.params.values),
            join_f64(self.optimizer.m()),
            join_f64(self.optimizer.v()),
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut fields = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("checkpoint line {}: expected `key = value`", n + 1))
            })?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            fields
                .get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Parse(format!("checkpoint is missing `{k}`")))
        };
        let version: u32 = get("format")?
            .parse()
            .map_err(|_| Error::Parse("bad format version".into()))?;
        if version != FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported checkpoint format {version}"
            )));
        }
        let activation: Activation = get("activation")?.parse()?;
        let spec = MlpSpec {
            layer_sizes: parse_list("layer_sizes", get("layer_sizes")?)?,
            activation,
            heads: parse_heads(get("heads")?)?,
        };
        spec.validate()?;
        let params = FlatParams::from_values(&spec, parse_list("params", get("params")?)?)?;
        let t_local = get("t_local")?
            .parse()
            .map_err(|_| Error::Parse("bad t_local".into()))?;
        let steps_total = get("steps_total")?
            .parse()
            .map_err(|_| Error::Parse("bad steps_total".into()))?;
        let optimizer = OptimizerState::from_parts(
            parse_list("m", get("m")?)?,
            parse_list("v", get("v")?)?,
            t_local,
            steps_total,
        )?;
        if optimizer.len() != params.len() {
            return Err(Error::Parse(
                "optimizer state and parameters differ in length".into(),
            ));
        }
        Ok(Self {
            spec,
            params,
            optimizer,
        })
    }
}
