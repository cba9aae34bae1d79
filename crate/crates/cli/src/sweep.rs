//! Sweeps over one configuration axis. Every (value, seed, variant) run
//! writes to its own directory; aggregation reads results back in a fixed
//! order so the output tree does not depend on scheduling.

use std::path::{Path, PathBuf};

use dha_core::analysis::{emit_plot_data, PlotOptions, Series};
use dha_core::koopman::Variant;
use dha_core::linalg::fmt17;
use dha_core::sim::TrajectoryDataset;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::commands::{evaluate, fit_model, save_model, synthesize, write, write_evaluation, write_json, Evaluation};
use crate::config::{Axis, Config, RunSeeds};
use crate::error::{config, CliError, Result};

#[derive(Clone, Debug, Serialize)]
pub struct RunResult {
    pub value: f64,
    pub seed: u64,
    pub variant: Variant,
    pub dir: PathBuf,
    pub outcome: std::result::Result<Evaluation, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateRow {
    pub value: f64,
    pub variant: Variant,
    pub runs: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug)]
pub struct SweepOutput {
    pub axis: Axis,
    pub runs: Vec<RunResult>,
    pub table: Vec<AggregateRow>,
    pub root: PathBuf,
}

pub fn value_label(axis: Axis, v: f64) -> String {
    match axis {
        Axis::Sigma => format!("{v}"),
        _ => format!("{}", v as u64),
    }
}

pub fn point_dir(root: &Path, axis: Axis, value: f64, seed: u64) -> PathBuf {
    root.join("points")
        .join(format!("{}={}", axis.name(), value_label(axis, value)))
        .join(format!("seed={seed}"))
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let n = workers.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| config(format!("cannot start {n} workers: {e}")))
}

/// Runs the sweep described by `cfg.sweep` into `out`. Failed runs are
/// recorded and excluded from aggregation; they make the command fail
/// after all outputs are written.
pub fn cmd_sweep(cfg: &Config, out: &Path) -> Result<SweepOutput> {
    let sweep = cfg.sweep.clone().ok_or_else(|| config("no sweep section in the config"))?;
    let points: Vec<(f64, Config)> = sweep
        .values
        .iter()
        .map(|&v| cfg.at(sweep.axis, v).map(|c| (v, c)))
        .collect::<Result<_>>()?;
    write_json(&out.join("config.json"), cfg)?;

    let pool = pool(cfg.workers)?;
    let datasets: Vec<(f64, u64, Config, RunSeeds, Result<TrajectoryDataset>)> = pool.install(|| {
        points
            .iter()
            .flat_map(|(v, c)| cfg.seeds.iter().map(move |&s| (*v, s, c)))
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|(v, s, c)| {
                let seeds = RunSeeds::new(s, c.system.seed);
                let dir = point_dir(out, sweep.axis, v, s);
                let ds = synthesize(c, &seeds).and_then(|(system, ds)| {
                    write(&dir.join("system.json"), system.to_json()?)?;
                    ds.save(&dir.join("dataset"))?;
                    Ok(ds)
                });
                (v, s, c.clone(), seeds, ds)
            })
            .collect()
    });
    let mut ready = Vec::new();
    for (v, s, c, seeds, ds) in datasets {
        ready.push((v, s, c, seeds, ds?));
    }

    let jobs: Vec<_> = ready
        .iter()
        .flat_map(|job| cfg.variants.iter().map(move |&variant| (job, variant)))
        .collect();
    let runs: Vec<RunResult> = pool.install(|| {
        jobs.into_par_iter()
            .map(|((v, s, c, seeds, ds), variant)| {
                let (v, s) = (*v, *s);
                let dir = point_dir(out, sweep.axis, v, s).join(variant.name());
                let outcome = run_one(c, variant, ds, seeds.training, &dir).map_err(|e| e.to_string());
                if let Err(msg) = &outcome {
                    let _ = write_json(&dir.join("status.json"), &json!({"status": "failed", "error": msg}));
                }
                RunResult {
                    value: v,
                    seed: s,
                    variant,
                    dir,
                    outcome,
                }
            })
            .collect()
    });

    let table = aggregate(&sweep.values, &cfg.variants, &runs);
    write_outputs(out, sweep.axis, &runs, &table)?;
    let failed: Vec<&RunResult> = runs.iter().filter(|r| r.outcome.is_err()).collect();
    if let Some(first) = failed.first() {
        return Err(CliError::Runs {
            failed: failed.len(),
            total: runs.len(),
            first: format!("{}: {}", first.dir.display(), first.outcome.as_ref().unwrap_err()),
        });
    }
    Ok(SweepOutput {
        axis: sweep.axis,
        runs,
        table,
        root: out.to_path_buf(),
    })
}

fn run_one(cfg: &Config, variant: Variant, ds: &TrajectoryDataset, seed: u64, dir: &Path) -> Result<Evaluation> {
    let model = fit_model(cfg, variant, ds, seed)?;
    save_model(&model, dir)?;
    let ev = evaluate(&model, ds, cfg.eval.horizon)?;
    write_evaluation(&ev, dir)?;
    Ok(ev)
}

/// Mean, min and max test MSE per (value, variant) over successful seeds,
/// in config order.
pub fn aggregate(values: &[f64], variants: &[Variant], runs: &[RunResult]) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for &value in values {
        for &variant in variants {
            let mses: Vec<f64> = runs
                .iter()
                .filter(|r| r.value == value && r.variant == variant)
                .filter_map(|r| r.outcome.as_ref().ok().map(|e| e.test_mse))
                .collect();
            if mses.is_empty() {
                continue;
            }
            rows.push(AggregateRow {
                value,
                variant,
                runs: mses.len(),
                mean: mses.iter().sum::<f64>() / mses.len() as f64,
                min: mses.iter().cloned().fold(f64::INFINITY, f64::min),
                max: mses.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            });
        }
    }
    rows
}

fn write_outputs(out: &Path, axis: Axis, runs: &[RunResult], table: &[AggregateRow]) -> Result<()> {
    let mut csv = format!("{},variant,runs,mean_mse,min_mse,max_mse\n", axis.name());
    for r in table {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            value_label(axis, r.value),
            r.variant,
            r.runs,
            fmt17(r.mean),
            fmt17(r.min),
            fmt17(r.max)
        ));
    }
    write(&out.join("sweep.csv"), csv)?;

    let mut list = format!("{},seed,variant,status,test_mse,spectral_radius\n", axis.name());
    for r in runs {
        let (status, mse, rho) = match &r.outcome {
            Ok(e) => ("ok", fmt17(e.test_mse), fmt17(e.spectral_radius)),
            Err(_) => ("failed", String::new(), String::new()),
        };
        list.push_str(&format!(
            "{},{},{},{status},{mse},{rho}\n",
            value_label(axis, r.value),
            r.seed,
            r.variant
        ));
    }
    write(&out.join("runs.csv"), list)?;

    let mut series = Vec::new();
    let mut variants: Vec<Variant> = Vec::new();
    for r in table {
        if !variants.contains(&r.variant) {
            variants.push(r.variant);
        }
    }
    for v in variants {
        let rows: Vec<&AggregateRow> = table.iter().filter(|r| r.variant == v).collect();
        for (stat, pick) in [("mean", 0), ("min", 1), ("max", 2)] {
            series.push(Series {
                name: format!("{v} {stat}"),
                points: rows
                    .iter()
                    .map(|r| (r.value, [r.mean, r.min, r.max][pick]))
                    .collect(),
            });
        }
    }
    if !series.is_empty() {
        emit_plot_data(
            &series,
            &out.join("plot"),
            &PlotOptions {
                title: format!("Test MSE vs {}", axis.name()),
                x_label: axis.name().into(),
                y_label: "test MSE".into(),
                log_x: axis == Axis::Samples,
                log_y: true,
            },
        )?;
    }
    Ok(())
}
