//! Per-update statistics, chunk-averaged profiles and run aggregates.
//!
//! A *chunk* is the run of optimizer steps between two consecutive objective
//! boundaries. Profiles average the per-step statistics position-wise across
//! chunks, so position 0 is always the first update on a fresh objective.

use std::fmt::Write as _;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::theory::{self, CurveVariant};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step_index: u64,
    /// Which stationary objective this update belongs to.
    pub chunk_index: u64,
    pub pos_in_chunk: u64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub update_norm: f64,
    pub max_abs_update: f64,
    pub t_local: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkProfile {
    pub chunk_length: usize,
    pub chunk_count: usize,
    pub grad_norm_mean: Vec<f64>,
    pub grad_norm_se: Vec<f64>,
    pub update_norm_mean: Vec<f64>,
    pub update_norm_se: Vec<f64>,
}

/// Groups records into chunks by `chunk_index` and averages them position-wise.
///
/// Chunks must have exactly `chunk_length` records, except for a trailing
/// partial chunk which is dropped. Standard errors use the sample standard
/// deviation over chunks.
pub fn chunk_average(records: &[StepRecord], chunk_length: usize) -> Result<ChunkProfile> {
    if chunk_length == 0 {
        return Err(Error::invalid("chunk length must be positive"));
    }
    let chunks = split_chunks(records);
    let n_chunks = chunks.len();
    let mut complete = Vec::with_capacity(n_chunks);
    for (i, chunk) in chunks.into_iter().enumerate() {
        if chunk.len() == chunk_length {
            complete.push(chunk);
        } else if i + 1 == n_chunks && chunk.len() < chunk_length {
            // trailing partial chunk
        } else {
            return Err(Error::invalid(format!(
                "chunk {} has {} records, expected {chunk_length}",
                chunk[0].chunk_index,
                chunk.len()
            )));
        }
    }
    if complete.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 complete chunks of length {chunk_length}, found {}",
            complete.len()
        )));
    }
    let mut grads = vec![Vec::with_capacity(complete.len()); chunk_length];
    let mut updates = vec![Vec::with_capacity(complete.len()); chunk_length];
    for chunk in &complete {
        for r in *chunk {
            let pos = r.pos_in_chunk as usize;
            if pos >= chunk_length {
                return Err(Error::invalid(format!(
                    "pos_in_chunk {pos} outside chunk length {chunk_length}"
                )));
            }
            if !(r.grad_norm.is_finite() && r.update_norm.is_finite()) {
                return Err(Error::invalid(format!(
                    "non-finite norm at step {}",
                    r.step_index
                )));
            }
            grads[pos].push(r.grad_norm);
            updates[pos].push(r.update_norm);
        }
    }
    if grads.iter().any(|g| g.len() != complete.len()) {
        return Err(Error::invalid(
            "chunks do not cover every position exactly once",
        ));
    }
    let (grad_norm_mean, grad_norm_se) = grads.iter().map(|g| mean_se(g)).unzip();
    let (update_norm_mean, update_norm_se) = updates.iter().map(|u| mean_se(u)).unzip();
    Ok(ChunkProfile {
        chunk_length,
        chunk_count: complete.len(),
        grad_norm_mean,
        grad_norm_se,
        update_norm_mean,
        update_norm_se,
    })
}

/// Consecutive runs of equal `chunk_index`.
fn split_chunks(records: &[StepRecord]) -> Vec<&[StepRecord]> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=records.len() {
        if i == records.len() || records[i].chunk_index != records[start].chunk_index {
            if i > start {
                out.push(&records[start..i]);
            }
            start = i;
        }
    }
    out
}

/// Most common chunk size, ignoring a trailing partial chunk.
pub fn typical_chunk_length(records: &[StepRecord]) -> Option<usize> {
    let chunks = split_chunks(records);
    let mut counts = std::collections::BTreeMap::new();
    let n = chunks.len();
    for (i, c) in chunks.iter().enumerate() {
        if i + 1 == n && n > 1 && c.len() < chunks[0].len() {
            continue;
        }
        *counts.entry(c.len()).or_insert(0usize) += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(len, _)| len)
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Ratio of the mean gradient norm at the first position of a chunk to that
/// at the last position.
pub fn estimate_k(profile: &ChunkProfile) -> Result<f64> {
    let first = profile.grad_norm_mean[0];
    let last = *profile.grad_norm_mean.last().unwrap();
    if !(first > 0.0 && last > 0.0) {
        return Err(Error::InsufficientData(
            "gradient norms must be positive to estimate k".into(),
        ));
    }
    Ok(first / last)
}

/// An empirical profile next to the limit curve for a measured `k`. The two
/// are on different scales; no fit is attempted.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryOverlay {
    pub variant: CurveVariant,
    pub k: f64,
    pub profile: ChunkProfile,
    /// Closed-form update size for `t = 0..chunk_length`.
    pub theory: Vec<f64>,
}

pub fn theory_overlay(
    profile: &ChunkProfile,
    k_estimate: f64,
    variant: CurveVariant,
    beta1: f64,
    beta2: f64,
) -> Result<TheoryOverlay> {
    if profile.chunk_length == 0 {
        return Err(Error::invalid("profile is empty"));
    }
    let curve = theory::closed_form_curve(
        variant,
        k_estimate,
        profile.chunk_length as u64 - 1,
        beta1,
        beta2,
    )?;
    Ok(TheoryOverlay {
        variant,
        k: k_estimate,
        profile: profile.clone(),
        theory: curve.points.into_iter().map(|p| p.1).collect(),
    })
}

/// Mean after discarding `floor(n / 4)` scores from each end.
pub fn iqm(scores: &[f64]) -> Result<f64> {
    if scores.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "IQM needs at least 4 scores, got {}",
            scores.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(trimmed_mean_sorted(&sorted))
}

fn trimmed_mean_sorted(sorted: &[f64]) -> f64 {
    let cut = sorted.len() / 4;
    let kept = &sorted[cut..sorted.len() - cut];
    kept.iter().sum::<f64>() / kept.len() as f64
}

/// Percentile interval of the pooled IQM, resampling seeds with replacement
/// independently inside each task.
///
/// `scores[task][seed]`. Deterministic in `seed`.
pub fn stratified_bootstrap_ci(
    scores: &[Vec<f64>],
    n_resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    let dist = bootstrap_distribution(scores, n_resamples, seed)?;
    percentile_interval(&dist, level)
}

/// Sorted IQMs of `n_resamples` stratified resamples.
pub fn bootstrap_distribution(
    scores: &[Vec<f64>],
    n_resamples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::InsufficientData("no tasks".into()));
    }
    for (i, task) in scores.iter().enumerate() {
        if task.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "task {i} has {} seeds, need at least 2",
                task.len()
            )));
        }
        if task.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("task {i} has a non-finite score")));
        }
    }
    if n_resamples < 1000 {
        return Err(Error::invalid(format!(
            "need at least 1000 resamples, got {n_resamples}"
        )));
    }
    let total: usize = scores.iter().map(Vec::len).sum();
    if total < 4 {
        return Err(Error::InsufficientData(
            "IQM needs at least 4 pooled scores".into(),
        ));
    }
    let mut rng = crate::rng::stream(seed, 0);
    let mut pooled = Vec::with_capacity(total);
    let mut dist = Vec::with_capacity(n_resamples);
    for _ in 0..n_resamples {
        pooled.clear();
        for task in scores {
            for _ in 0..task.len() {
                pooled.push(task[rng.random_range(0..task.len())]);
            }
        }
        pooled.sort_by(f64::total_cmp);
        dist.push(trimmed_mean_sorted(&pooled));
    }
    dist.sort_by(f64::total_cmp);
    Ok(dist)
}

/// Two-sided percentile interval with linear interpolation between order
/// statistics. `sorted` must be ascending.
pub fn percentile_interval(sorted: &[f64], level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!(
            "level must lie in (0, 1), got {level}"
        )));
    }
    if sorted.is_empty() {
        return Err(Error::InsufficientData("empty distribution".into()));
    }
    let alpha = (1.0 - level) / 2.0;
    Ok((quantile(sorted, alpha), quantile(sorted, 1.0 - alpha)))
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// 17 significant digits, `.` decimal separator; round-trips exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// One line of the metrics CSV: an optimizer update plus the trailing
/// episodic return at the time it happened.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    /// Environment steps taken so far.
    pub env_step: u64,
    /// Mean return of the most recent completed episodes, if any.
    pub episode_return: Option<f64>,
    pub record: StepRecord,
}

pub const METRICS_HEADER: &str =
    "step,episode_return,grad_norm,update_norm,max_abs_update,t_local,chunk_index";

pub fn write_metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 120);
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let ret = r.episode_return.map(fmt_f64).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.env_step,
            ret,
            fmt_f64(r.record.grad_norm),
            fmt_f64(r.record.update_norm),
            fmt_f64(r.record.max_abs_update),
            r.record.t_local,
            r.record.chunk_index
        );
    }
    out
}

/// Parses [`write_metrics_csv`] output. `step_index` is the row number and
/// `pos_in_chunk` is recovered by counting rows within each chunk.
pub fn read_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        other => {
            return Err(Error::Parse(format!(
                "line 1: expected header `{METRICS_HEADER}`, got `{}`",
                other.unwrap_or("")
            )))
        }
    }
    let mut rows: Vec<MetricsRow> = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(Error::Parse(format!(
                "line {lineno}: expected 7 fields, got {}",
                f.len()
            )));
        }
        let bad = |what: &str| Error::Parse(format!("line {lineno}: bad {what}"));
        let env_step: u64 = f[0].parse().map_err(|_| bad("step"))?;
        let episode_return = if f[1].is_empty() {
            None
        } else {
            Some(f[1].parse::<f64>().map_err(|_| bad("episode_return"))?)
        };
        let grad_norm: f64 = f[2].parse().map_err(|_| bad("grad_norm"))?;
        let update_norm: f64 = f[3].parse().map_err(|_| bad("update_norm"))?;
        let max_abs_update: f64 = f[4].parse().map_err(|_| bad("max_abs_update"))?;
        let t_local: u64 = f[5].parse().map_err(|_| bad("t_local"))?;
        let chunk_index: u64 = f[6].parse().map_err(|_| bad("chunk_index"))?;
        let pos_in_chunk = match rows.last() {
            Some(prev) if prev.record.chunk_index == chunk_index => prev.record.pos_in_chunk + 1,
            _ => 0,
        };
        rows.push(MetricsRow {
            env_step,
            episode_return,
            record: StepRecord {
                step_index: rows.len() as u64,
                chunk_index,
                pos_in_chunk,
                grad_norm,
                update_norm,
                max_abs_update,
                t_local,
            },
        });
    }
    Ok(rows)
}

pub const PROFILE_HEADER: &str =
    "pos_in_chunk,grad_norm_mean,grad_norm_se,update_norm_mean,update_norm_se,theory_update";

pub fn write_profile_csv(overlay: &TheoryOverlay) -> String {
    let p = &overlay.profile;
    let mut out = String::new();
    out.push_str(PROFILE_HEADER);
    out.push('\n');
    for i in 0..p.chunk_length {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            i,
            fmt_f64(p.grad_norm_mean[i]),
            fmt_f64(p.grad_norm_se[i]),
            fmt_f64(p.update_norm_mean[i]),
            fmt_f64(p.update_norm_se[i]),
            fmt_f64(overlay.theory[i])
        );
    }
    out
}
