use super::{ChunkCounter, NetConfig};
use crate::envs::RegressionSwitchTask;
use crate::error::{Error, Result};
use crate::nn::{self, HeadGrads, MlpSpec, OutputHeads};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::rng::{self, streams};
use crate::telemetry::StepRecord;

/// Fits a scalar-output network to each phase of `task` in turn with a
/// mean-squared-error loss, one fresh minibatch per update.
///
/// The optimizer is notified before the first update of every phase, so each
/// phase is one telemetry chunk.
pub fn train_regression_switch(
    task: &RegressionSwitchTask,
    net: &NetConfig,
    optimizer: &OptimizerConfig,
    seed: u64,
) -> Result<Vec<StepRecord>> {
    let cfg = task.config();
    let spec = MlpSpec::new(
        cfg.input_dim,
        &net.hidden,
        net.activation,
        OutputHeads::Scalar,
    )?;
    let mut params = nn::init_params(&spec, seed)?;
    let mut opt = Optimizer::new(*optimizer, params.len())?;
    let mut batch_rng = rng::stream(seed, streams::BATCHES);
    let mut chunks = ChunkCounter::default();
    let mut records = Vec::with_capacity(task.num_phases() * cfg.phase_length);

    for phase in 0..task.num_phases() {
        opt.notify_boundary();
        chunks.boundary();
        for step in 0..cfg.phase_length {
            let ctx = || format!("regression seed {seed}, phase {phase}, step {step}");
            let (x, y) = task.regression_batch(phase, &mut batch_rng)?;
            let trace = nn::forward_trace(&spec, &params, &x)?;
            let pred = trace.raw_output().as_slice();
            let b = y.len() as f64;
            let d_pred: Vec<f64> = pred
                .iter()
                .zip(&y)
                .map(|(p, t)| 2.0 * (p - t) / b)
                .collect();
            if d_pred.iter().any(|g| !g.is_finite()) {
                return Err(Error::poisoned("non-finite regression residual").with_context(ctx()));
            }
            let grad = trace.backward(&HeadGrads {
                logits: None,
                values: Some(d_pred),
            })?;
            let result = opt
                .step(&mut params.values, &grad)
                .map_err(|e| e.with_context(ctx()))?;
            records.push(chunks.record(&result, &opt.state));
        }
    }
    Ok(records)
}
