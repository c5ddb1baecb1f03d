//! Dense matrices and a small multilayer perceptron with hand-written
//! reverse-mode gradients.
//!
//! All weights and biases live in one flat vector so the optimizer never has
//! to know about layer shapes. Layer `l` occupies
//! `[W_l (fan_out x fan_in, row-major), b_l (fan_out)]`, layers in order.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Copies the selected rows into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            _ => Err(Error::invalid(format!("unknown activation `{s}`"))),
        }
    }
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }
}

/// How the final layer's outputs are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputHeads {
    /// One value per row.
    Scalar,
    /// `n` unnormalized logits (or action values) per row.
    Categorical(usize),
    /// `n` logits followed by one value.
    Dual(usize),
}

impl OutputHeads {
    pub fn width(self) -> usize {
        match self {
            OutputHeads::Scalar => 1,
            OutputHeads::Categorical(n) => n,
            OutputHeads::Dual(n) => n + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub heads: OutputHeads,
}

impl MlpSpec {
    /// `input -> hidden.. -> heads.width()`.
    pub fn new(
        input: usize,
        hidden: &[usize],
        activation: Activation,
        heads: OutputHeads,
    ) -> Result<Self> {
        let mut layer_sizes = vec![input];
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(heads.width());
        let spec = Self {
            layer_sizes,
            activation,
            heads,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::invalid(
                "an MLP needs at least input and output sizes",
            ));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        match self.heads {
            OutputHeads::Categorical(0) | OutputHeads::Dual(0) => {
                return Err(Error::invalid("categorical head needs at least one output"))
            }
            _ => {}
        }
        let out = *self.layer_sizes.last().unwrap();
        if out != self.heads.width() {
            return Err(Error::invalid(format!(
                "output layer has {out} units but the heads need {}",
                self.heads.width()
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn layout(&self) -> Vec<LayerLayout> {
        let mut offset = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let l = LayerLayout {
                    weight_offset: offset,
                    bias_offset: offset + fan_in * fan_out,
                    fan_in,
                    fan_out,
                };
                offset += (fan_in + 1) * fan_out;
                l
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub weight_offset: usize,
    pub bias_offset: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams {
    pub values: Vec<f64>,
    pub layout: Vec<LayerLayout>,
}

impl FlatParams {
    pub fn zeros(spec: &MlpSpec) -> Self {
        Self {
            values: vec![0.0; spec.param_count()],
            layout: spec.layout(),
        }
    }

    pub fn from_values(spec: &MlpSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.param_count() {
            return Err(Error::invalid(format!(
                "spec needs {} parameters, got {}",
                spec.param_count(),
                values.len()
            )));
        }
        Ok(Self {
            values,
            layout: spec.layout(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        let l = self.layout[layer];
        &self.values[l.weight_offset..l.bias_offset]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let l = self.layout[layer];
        &self.values[l.bias_offset..l.bias_offset + l.fan_out]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        let l = self.layout[layer];
        &mut self.values[l.weight_offset..l.bias_offset]
    }

    fn check(&self, spec: &MlpSpec) -> Result<()> {
        if self.values.len() != spec.param_count() || self.layout != spec.layout() {
            return Err(Error::invalid("parameters do not match the network spec"));
        }
        Ok(())
    }
}

const HIDDEN_GAIN: f64 = std::f64::consts::SQRT_2;
const POLICY_GAIN: f64 = 0.01;
const VALUE_GAIN: f64 = 1.0;

/// Orthogonal weights (gain sqrt 2 for hidden layers; 0.01 for logit rows and
/// 1.0 for value rows of the output layer) and zero biases.
pub fn init_params(spec: &MlpSpec, seed: u64) -> Result<FlatParams> {
    spec.validate()?;
    let mut rng = crate::rng::stream(seed, crate::rng::streams::PARAM_INIT);
    let mut params = FlatParams::zeros(spec);
    let n_layers = params.layout.len();
    for layer in 0..n_layers {
        let LayerLayout {
            fan_in, fan_out, ..
        } = params.layout[layer];
        let w = orthogonal(fan_out, fan_in, &mut rng);
        let dst = params.weights_mut(layer);
        for o in 0..fan_out {
            let gain = if layer + 1 < n_layers {
                HIDDEN_GAIN
            } else {
                match spec.heads {
                    OutputHeads::Scalar => VALUE_GAIN,
                    OutputHeads::Categorical(_) => POLICY_GAIN,
                    OutputHeads::Dual(n) if o < n => POLICY_GAIN,
                    OutputHeads::Dual(_) => VALUE_GAIN,
                }
            };
            for i in 0..fan_in {
                dst[o * fan_in + i] = gain * w[o * fan_in + i];
            }
        }
    }
    Ok(params)
}

/// `rows x cols` matrix with orthonormal rows or columns, whichever is fewer.
fn orthogonal(rows: usize, cols: usize, rng: &mut Rng) -> Vec<f64> {
    let (n, p) = if rows >= cols {
        (rows, cols)
    } else {
        (cols, rows)
    };
    // Columns of an n x p matrix stored column-major.
    let mut q: Vec<Vec<f64>> = (0..p)
        .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    for j in 0..p {
        for i in 0..j {
            let (done, rest) = q.split_at_mut(j);
            let d: f64 = done[i].iter().zip(&rest[0]).map(|(a, b)| a * b).sum();
            for (x, qi) in rest[0].iter_mut().zip(&done[i]) {
                *x -= d * qi;
            }
        }
        let norm = q[j].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            q[j].iter_mut().for_each(|x| *x /= norm);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = if rows >= cols { q[c][r] } else { q[r][c] };
        }
    }
    out
}

/// Per-head view of the network output, or of gradients with the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub logits: Option<Matrix>,
    pub values: Option<Vec<f64>>,
}

pub type HeadGrads = HeadOutputs;

impl HeadOutputs {
    fn split(heads: OutputHeads, out: Matrix) -> Self {
        match heads {
            OutputHeads::Scalar => HeadOutputs {
                logits: None,
                values: Some(out.into_vec()),
            },
            OutputHeads::Categorical(_) => HeadOutputs {
                logits: Some(out),
                values: None,
            },
            OutputHeads::Dual(n) => {
                let mut logits = Matrix::zeros(out.rows, n);
                let mut values = Vec::with_capacity(out.rows);
                for r in 0..out.rows {
                    let row = out.row(r);
                    logits.row_mut(r).copy_from_slice(&row[..n]);
                    values.push(row[n]);
                }
                HeadOutputs {
                    logits: Some(logits),
                    values: Some(values),
                }
            }
        }
    }

    /// Inverse of `split`; missing heads count as zero.
    fn join(&self, heads: OutputHeads, batch: usize) -> Result<Matrix> {
        let width = heads.width();
        let mut out = Matrix::zeros(batch, width);
        let n_logits = match heads {
            OutputHeads::Scalar => 0,
            OutputHeads::Categorical(n) | OutputHeads::Dual(n) => n,
        };
        if let Some(l) = &self.logits {
            if n_logits == 0 || l.rows != batch || l.cols != n_logits {
                return Err(Error::invalid("logit gradient has the wrong shape"));
            }
            for r in 0..batch {
                out.row_mut(r)[..n_logits].copy_from_slice(l.row(r));
            }
        }
        if let Some(v) = &self.values {
            if matches!(heads, OutputHeads::Categorical(_)) || v.len() != batch {
                return Err(Error::invalid("value gradient has the wrong shape"));
            }
            for (r, x) in v.iter().enumerate() {
                out.set(r, width - 1, *x);
            }
        }
        Ok(out)
    }
}

/// Forward pass with the intermediates needed for [`Trace::backward`].
#[derive(Debug, Clone)]
pub struct Trace<'a> {
    spec: &'a MlpSpec,
    params: &'a FlatParams,
    /// `layer_inputs[l]` is the input of layer `l`; the last entry is the raw output.
    layer_inputs: Vec<Matrix>,
}

pub fn forward_trace<'a>(
    spec: &'a MlpSpec,
    params: &'a FlatParams,
    input: &Matrix,
) -> Result<Trace<'a>> {
    spec.validate()?;
    params.check(spec)?;
    if input.cols != spec.input_dim() {
        return Err(Error::invalid(format!(
            "input has width {} but the network expects {}",
            input.cols,
            spec.input_dim()
        )));
    }
    let n_layers = params.layout.len();
    let mut layer_inputs = Vec::with_capacity(n_layers + 1);
    layer_inputs.push(input.clone());
    for layer in 0..n_layers {
        let mut z = affine(layer_inputs.last().unwrap(), params, layer);
        if layer + 1 < n_layers {
            match spec.activation {
                Activation::Tanh => z.data.iter_mut().for_each(|x| *x = x.tanh()),
                Activation::Relu => z.data.iter_mut().for_each(|x| *x = x.max(0.0)),
            }
        }
        layer_inputs.push(z);
    }
    Ok(Trace {
        spec,
        params,
        layer_inputs,
    })
}

/// `h W^T + b` for one layer, accumulated as rows of `W^T` scaled by the
/// inputs so the inner loop is a contiguous multiply-add.
fn affine(h: &Matrix, params: &FlatParams, layer: usize) -> Matrix {
    let LayerLayout {
        fan_in, fan_out, ..
    } = params.layout[layer];
    let w = params.weights(layer);
    let b = params.bias(layer);
    let mut wt = vec![0.0; fan_in * fan_out];
    for o in 0..fan_out {
        for i in 0..fan_in {
            wt[i * fan_out + o] = w[o * fan_in + i];
        }
    }
    let mut z = Matrix::zeros(h.rows, fan_out);
    for r in 0..h.rows {
        let x = h.row(r);
        let out = z.row_mut(r);
        out.copy_from_slice(b);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (acc, wv) in out.iter_mut().zip(&wt[i * fan_out..(i + 1) * fan_out]) {
                *acc += xi * wv;
            }
        }
    }
    z
}

impl Trace<'_> {
    pub fn raw_output(&self) -> &Matrix {
        self.layer_inputs.last().unwrap()
    }

    pub fn outputs(&self) -> HeadOutputs {
        HeadOutputs::split(self.spec.heads, self.raw_output().clone())
    }

    /// Gradient of `sum(upstream * outputs)` with respect to every parameter.
    pub fn backward(&self, upstream: &HeadGrads) -> Result<Vec<f64>> {
        let batch = self.layer_inputs[0].rows;
        let mut delta = upstream.join(self.spec.heads, batch)?;
        let mut grad = vec![0.0; self.params.len()];
        let n_layers = self.params.layout.len();
        for layer in (0..n_layers).rev() {
            let LayerLayout {
                weight_offset,
                bias_offset,
                fan_in,
                fan_out,
            } = self.params.layout[layer];
            let h = &self.layer_inputs[layer];
            {
                let (gw, gb) =
                    grad[weight_offset..bias_offset + fan_out].split_at_mut(fan_in * fan_out);
                for r in 0..batch {
                    let d = delta.row(r);
                    let x = h.row(r);
                    for o in 0..fan_out {
                        let dz = d[o];
                        if dz == 0.0 {
                            continue;
                        }
                        gb[o] += dz;
                        for (g, xi) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(x) {
                            *g += dz * xi;
                        }
                    }
                }
            }
            if layer == 0 {
                break;
            }
            let w = self.params.weights(layer);
            let mut prev = Matrix::zeros(batch, fan_in);
            for r in 0..batch {
                let d = delta.row(r);
                let out = prev.row_mut(r);
                for o in 0..fan_out {
                    let dz = d[o];
                    if dz == 0.0 {
                        continue;
                    }
                    for (p, wi) in out.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                        *p += dz * wi;
                    }
                }
            }
            // `h` holds the activated output of the previous layer.
            match self.spec.activation {
                Activation::Tanh => {
                    for (p, a) in prev.data.iter_mut().zip(&h.data) {
                        *p *= 1.0 - a * a;
                    }
                }
                Activation::Relu => {
                    for (p, a) in prev.data.iter_mut().zip(&h.data) {
                        if *a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                }
            }
            delta = prev;
        }
        Ok(grad)
    }
}

pub fn forward(spec: &MlpSpec, params: &FlatParams, input: &Matrix) -> Result<HeadOutputs> {
    Ok(forward_trace(spec, params, input)?.outputs())
}

/// Gradient of the scalar loss whose derivative with respect to the outputs
/// is `upstream`.
pub fn backward(
    spec: &MlpSpec,
    params: &FlatParams,
    input: &Matrix,
    upstream: &HeadGrads,
) -> Result<Vec<f64>> {
    forward_trace(spec, params, input)?.backward(upstream)
}

/// Max-subtracted log-softmax.
pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::invalid("empty logits"));
    }
    if let Some(i) = logits.iter().position(|x| !x.is_finite()) {
        return Err(Error::poisoned(format!("logit {i} is {}", logits[i])));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    Ok(logits.iter().map(|x| x - lse).collect())
}

/// Entropy of the categorical distribution with the given log-probabilities.
pub fn entropy_from_log_probs(log_probs: &[f64]) -> f64 {
    -log_probs.iter().map(|lp| lp.exp() * lp).sum::<f64>()
}

/// Samples an action from `softmax(logits)`, returning
/// `(action, log_prob(action), entropy)`.
pub fn softmax_categorical(logits: &[f64], rng: &mut Rng) -> Result<(usize, f64, f64)> {
    let log_probs = log_softmax(logits)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut action = log_probs.len() - 1;
    for (i, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            action = i;
            break;
        }
    }
    Ok((
        action,
        log_probs[action],
        entropy_from_log_probs(&log_probs),
    ))
}
