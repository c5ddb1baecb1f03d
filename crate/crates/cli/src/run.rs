//! Executes a resolved configuration and writes its artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use adamrel_core::checkpoint::Checkpoint;
use adamrel_core::rl::{dqn_train, ppo_train, TrainOutcome};
use adamrel_core::telemetry::{
    self, chunk_average, estimate_k, fmt_f64, iqm, read_metrics_csv, stratified_bootstrap_ci,
    theory_overlay, write_metrics_csv, write_profile_csv, StepRecord,
};
use adamrel_core::theory::{emit_update_curves, CurveVariant};
use anyhow::{bail, Context, Result};

use crate::config::{read_manifest, ConfigError, Invocation, Kind, Settings};

pub const MANIFEST: &str = "manifest.txt";
pub const ERROR_RECORD: &str = "error.txt";
pub const THEORY_CSV: &str = "theory_curves.csv";
pub const PROFILE_CSV: &str = "profile.csv";
pub const COMPARE_CSV: &str = "compare.csv";

pub fn metrics_file(seed: u64) -> String {
    format!("metrics_seed{seed}.csv")
}

pub fn checkpoint_file(seed: u64) -> String {
    format!("checkpoint_seed{seed}.txt")
}

/// What a run produced.
#[derive(Debug, Default)]
pub struct Report {
    pub files: Vec<PathBuf>,
    /// Human-readable summary, one line per item.
    pub lines: Vec<String>,
}

/// Resolves and executes one run. On failure an error record is left in
/// `out` when the directory is writable.
pub fn run(kind: Kind, inv: &Invocation, out: &Path) -> Result<Report> {
    let result = Settings::resolve(kind, inv)
        .map_err(anyhow::Error::from)
        .and_then(|s| execute(&s, out));
    if let Err(e) = &result {
        let _ = write_error_record(out, e);
    }
    result
}

/// Short tag for the error record.
pub fn error_kind(e: &anyhow::Error) -> &'static str {
    if e.downcast_ref::<ConfigError>().is_some() {
        "config"
    } else if let Some(core) = e.downcast_ref::<adamrel_core::Error>() {
        core.kind()
    } else if e.downcast_ref::<std::io::Error>().is_some() {
        "io"
    } else {
        "error"
    }
}

fn write_error_record(out: &Path, e: &anyhow::Error) -> std::io::Result<()> {
    fs::create_dir_all(out)?;
    let message = format!("{e:#}").replace('\n', " ");
    fs::write(
        out.join(ERROR_RECORD),
        format!("kind = {}\nmessage = {message}\n", error_kind(e)),
    )
}

fn write(out: &Path, name: &str, contents: &str, report: &mut Report) -> Result<()> {
    let path = out.join(name);
    fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
    report.files.push(path);
    Ok(())
}

pub fn execute(settings: &Settings, out: &Path) -> Result<Report> {
    fs::create_dir_all(out)
        .with_context(|| format!("cannot create output directory {}", out.display()))?;
    let stale = out.join(ERROR_RECORD);
    if stale.exists() {
        fs::remove_file(&stale).with_context(|| format!("cannot remove {}", stale.display()))?;
    }
    let mut report = Report::default();
    write(out, MANIFEST, &settings.manifest(), &mut report)?;
    match settings.kind {
        Kind::TheoryCurve => theory_curve(settings, out, &mut report)?,
        Kind::TrainPpo | Kind::TrainDqn => train(settings, out, &mut report)?,
        Kind::Analyze => analyze(settings, out, &mut report)?,
        Kind::Compare => compare(settings, out, &mut report)?,
    }
    Ok(report)
}

fn theory_curve(settings: &Settings, out: &Path, report: &mut Report) -> Result<()> {
    let curves = emit_update_curves(
        &settings.f64_list("theory.k_values")?,
        settings.u64("theory.t_max")?,
        settings.f64("theory.beta1")?,
        settings.f64("theory.beta2")?,
        &settings.curve_variants()?,
    )?;
    let mut csv = String::from("variant,k,t,update_size\n");
    let mut rows = 0;
    for c in &curves {
        for &(t, u) in &c.points {
            let _ = writeln!(csv, "{},{},{t},{}", c.variant, fmt_f64(c.k), fmt_f64(u));
            rows += 1;
        }
        let peak = c.points.iter().map(|p| p.1).fold(f64::MIN, f64::max);
        report.lines.push(format!(
            "{} k={}: peak update size {peak:.6}",
            c.variant, c.k
        ));
    }
    write(out, THEORY_CSV, &csv, report)?;
    report.lines.push(format!("{rows} rows"));
    Ok(())
}

fn train(settings: &Settings, out: &Path, report: &mut Report) -> Result<()> {
    let seeds = settings.seeds()?;
    let env = settings.env()?;
    let total = settings.u64("run.total_steps")?;
    let kind = settings.kind;
    let ppo = if kind == Kind::TrainPpo {
        Some(settings.ppo()?)
    } else {
        None
    };
    let dqn = if kind == Kind::TrainDqn {
        Some(settings.dqn()?)
    } else {
        None
    };

    let train_one = |seed: u64| -> Result<TrainOutcome> {
        let outcome = match (&ppo, &dqn) {
            (Some(c), _) => ppo_train(&env, c, total, seed),
            (_, Some(c)) => dqn_train(&env, c, total, seed),
            _ => unreachable!(),
        }?;
        fs::write(
            out.join(metrics_file(seed)),
            write_metrics_csv(&outcome.rows),
        )?;
        let ck = Checkpoint {
            spec: outcome.spec.clone(),
            params: outcome.params.clone(),
            optimizer: outcome.optimizer.clone(),
        };
        fs::write(out.join(checkpoint_file(seed)), ck.to_text())?;
        Ok(outcome)
    };

    // Seeds are independent and write disjoint files.
    let workers = thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(seeds.len());
    let mut results: Vec<(u64, Result<TrainOutcome>)> = Vec::with_capacity(seeds.len());
    for batch in seeds.chunks(workers) {
        thread::scope(|s| {
            let handles: Vec<_> = batch
                .iter()
                .map(|&seed| (seed, s.spawn(move || train_one(seed))))
                .collect();
            for (seed, h) in handles {
                let r = h
                    .join()
                    .unwrap_or_else(|_| Err(anyhow::anyhow!("worker panicked")));
                results.push((seed, r));
            }
        });
    }

    for (seed, r) in results {
        let outcome = r.with_context(|| format!("seed {seed}"))?;
        report.files.push(out.join(metrics_file(seed)));
        report.files.push(out.join(checkpoint_file(seed)));
        let fmt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        report.lines.push(format!(
            "seed {seed}: {} updates, {} episodes, final return {}, best return {}",
            outcome.rows.len(),
            outcome.episodes.len(),
            fmt(outcome.final_trailing_return()),
            fmt(outcome.best_trailing_return()),
        ));
    }
    Ok(())
}

/// A finished training run read back from disk.
struct RunData {
    manifest: BTreeMap<String, String>,
    seeds: Vec<(u64, Vec<telemetry::MetricsRow>)>,
}

fn load_run(dir: &Path) -> Result<RunData> {
    let manifest = read_manifest(&dir.join(MANIFEST))?;
    let kind = manifest.get("run.kind").map(String::as_str).unwrap_or("");
    if kind != "train-ppo" && kind != "train-dqn" {
        bail!(
            "{} is not a training run (run.kind = `{kind}`)",
            dir.display()
        );
    }
    let seeds = manifest
        .get("run.seeds")
        .context("manifest has no run.seeds")?
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .with_context(|| format!("bad seed `{s}` in manifest"))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(seeds.len());
    for seed in seeds {
        let path = dir.join(metrics_file(seed));
        let text =
            fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
        let rows = read_metrics_csv(&text).with_context(|| path.display().to_string())?;
        out.push((seed, rows));
    }
    Ok(RunData {
        manifest,
        seeds: out,
    })
}

/// Drops the first `skip` chunks of every seed and every chunk whose length
/// differs from `len`, then renumbers what is left as one record stream.
fn pooled_chunks(run: &RunData, skip: u64, len: usize) -> Vec<StepRecord> {
    let mut pooled = Vec::new();
    let mut next_chunk = 0;
    for (_, rows) in &run.seeds {
        let records: Vec<StepRecord> = rows.iter().map(|r| r.record).collect();
        for chunk in records.chunk_by(|a, b| a.chunk_index == b.chunk_index) {
            if chunk[0].chunk_index < skip || chunk.len() != len {
                continue;
            }
            for r in chunk {
                pooled.push(StepRecord {
                    step_index: pooled.len() as u64,
                    chunk_index: next_chunk,
                    ..*r
                });
            }
            next_chunk += 1;
        }
    }
    pooled
}

/// Chunk-averaged gradient and update norms of a training run, pooled over
/// its seeds, next to the closed-form curve for the measured `k`.
fn analyze(settings: &Settings, out: &Path, report: &mut Report) -> Result<()> {
    let input = settings.analyze_input();
    let run = load_run(&input)?;
    let skip = settings.u64("analyze.skip_chunks")?;
    let mut len = settings.usize("analyze.chunk_length")?;
    if len == 0 {
        let first: Vec<StepRecord> = run.seeds[0].1.iter().map(|r| r.record).collect();
        len = telemetry::typical_chunk_length(&first).context("run has no updates")?;
    }
    let pooled = pooled_chunks(&run, skip, len);
    let profile = chunk_average(&pooled, len)?;
    let k = estimate_k(&profile)?;
    let variant = match settings.raw("analyze.variant") {
        "auto" => match run.manifest.get("optimizer.variant").map(String::as_str) {
            Some("adam-rel") => CurveVariant::AdamRel,
            _ => CurveVariant::Adam,
        },
        v => v.parse()?,
    };
    let beta = |key: &str| -> Result<f64> {
        run.manifest
            .get(key)
            .with_context(|| format!("manifest has no {key}"))?
            .parse()
            .with_context(|| format!("bad {key} in manifest"))
    };
    let overlay = theory_overlay(
        &profile,
        k,
        variant,
        beta("optimizer.beta1")?,
        beta("optimizer.beta2")?,
    )?;
    write(out, PROFILE_CSV, &write_profile_csv(&overlay), report)?;
    report.lines.push(format!(
        "{} chunks of {len} updates, k = {k:.4}, theory curve {variant}",
        profile.chunk_count
    ));
    Ok(())
}

/// Per-run IQM of the per-seed scores with a bootstrap interval, each run
/// being its own single-task stratum.
fn compare(settings: &Settings, out: &Path, report: &mut Report) -> Result<()> {
    let best = settings.raw("compare.score") == "best";
    let n = settings.usize("compare.n_resamples")?;
    let level = settings.f64("compare.level")?;
    let boot_seed = settings.u64("compare.bootstrap_seed")?;
    let mut csv = String::from("run,variant,seeds,iqm,ci_lo,ci_hi\n");
    for dir in settings.compare_inputs() {
        let run = load_run(&dir)?;
        let name = dir.display().to_string();
        if name.contains(',') {
            bail!("run directory `{name}` contains a comma");
        }
        let mut scores = Vec::with_capacity(run.seeds.len());
        for (seed, rows) in &run.seeds {
            let mut returns = rows.iter().filter_map(|r| r.episode_return);
            let score = if best {
                returns.fold(None, |acc: Option<f64>, x| {
                    Some(acc.map_or(x, |a| a.max(x)))
                })
            } else {
                returns.next_back()
            };
            scores.push(score.with_context(|| format!("{name} seed {seed} finished no episodes"))?);
        }
        let point = iqm(&scores).with_context(|| name.clone())?;
        let (lo, hi) = stratified_bootstrap_ci(&[scores.clone()], n, level, boot_seed)?;
        let variant = run
            .manifest
            .get("optimizer.variant")
            .cloned()
            .unwrap_or_default();
        let _ = writeln!(
            csv,
            "{name},{variant},{},{},{},{}",
            scores.len(),
            fmt_f64(point),
            fmt_f64(lo),
            fmt_f64(hi)
        );
        report.lines.push(format!(
            "{name} ({variant}, {} seeds): IQM {point:.4} [{lo:.4}, {hi:.4}]",
            scores.len()
        ));
    }
    write(out, COMPARE_CSV, &csv, report)?;
    Ok(())
}
