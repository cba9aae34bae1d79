use std::fs;
use std::path::{Path, PathBuf};

use dha_core::analysis::{
    emit_plot_data, isotypic_energy, model_spectrum, prediction_mse, EnergyDecomposition, MseReport, PlotOptions, Series,
};
use dha_core::group::irreps_real;
use dha_core::harmonic::{isotypic_basis, IsotypicBasis};
use dha_core::koopman::{KoopmanModel, Variant};
use dha_core::linalg::fmt17;
use dha_core::sim::{generate_dataset, orbit_copies, random_symmetric_stable_system, DatasetSeeds, Split, SymmetricLinearSystem, TrajectoryDataset};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::json;

use crate::config::{Config, RunSeeds};
use crate::error::{config, io, Result};

/// Relative paths are placed under `root` when one is given.
pub fn resolve(root: Option<&Path>, path: &Path) -> PathBuf {
    match root {
        Some(r) if path.is_relative() => r.join(path),
        _ => path.to_path_buf(),
    }
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io(parent))?;
    }
    fs::write(path, contents).map_err(io(path))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(dha_core::Error::from)?;
    text.push('\n');
    write(path, text)
}

#[derive(Clone, Debug, Serialize)]
pub struct BlockInfo {
    pub irrep: String,
    pub d: usize,
    pub m: usize,
    pub offset: usize,
}

pub fn block_info(basis: &IsotypicBasis) -> Vec<BlockInfo> {
    basis
        .blocks()
        .iter()
        .map(|b| BlockInfo {
            irrep: b.label().to_string(),
            d: b.irrep_dim(),
            m: b.multiplicity,
            offset: b.offset,
        })
        .collect()
}

pub fn synthesize(cfg: &Config, seeds: &RunSeeds) -> Result<(SymmetricLinearSystem, TrajectoryDataset)> {
    let rep = cfg.state_rep()?;
    let s = &cfg.system;
    let system = random_symmetric_stable_system(&rep, s.spectral_radius, s.sigma, s.n_constraints, seeds.system)?;
    let d = &cfg.dataset;
    let ds = generate_dataset(
        &system,
        d.n_train,
        d.n_test,
        d.horizon,
        (d.init_box[0], d.init_box[1]),
        DatasetSeeds {
            init: seeds.init,
            noise: seeds.noise,
        },
    )?;
    Ok((system, ds))
}

/// System, dataset and a manifest describing the state representation.
pub fn cmd_synth(cfg: &Config, run_seed: u64, out: &Path) -> Result<String> {
    let seeds = RunSeeds::new(run_seed, cfg.system.seed);
    let (system, ds) = synthesize(cfg, &seeds)?;
    write(&out.join("system.json"), system.to_json()?)?;
    ds.save(&out.join("dataset"))?;
    let basis = isotypic_basis(&ds.rep, &irreps_real(ds.rep.group())?)?;
    let blocks = block_info(&basis);
    write_json(
        &out.join("manifest.json"),
        &json!({
            "config_hash": cfg.hash(),
            "group": cfg.group,
            "state_dim": cfg.state_dim,
            "run_seed": run_seed,
            "seeds": seeds,
            "system_fingerprint": system.fingerprint(),
            "isotypic_blocks": blocks.len(),
            "blocks": blocks,
            "train": ds.indices(Split::Train).len(),
            "val": ds.indices(Split::Val).len(),
            "test": ds.indices(Split::Test).len(),
        }),
    )?;
    write_json(&out.join("config.json"), cfg)?;
    Ok(format!(
        "synth: {} trajectories of {} steps, m={}, {} isotypic blocks -> {}",
        ds.trajectories.len(),
        ds.horizon(),
        ds.dim(),
        blocks.len(),
        out.display()
    ))
}

pub fn fit_model(cfg: &Config, variant: Variant, ds: &TrajectoryDataset, seed: u64) -> Result<KoopmanModel> {
    if variant.is_autoencoder() {
        Ok(KoopmanModel::train(variant, ds, &cfg.train_config(seed)?)?)
    } else {
        Ok(KoopmanModel::fit_linear(variant, ds, cfg.linear.observables, cfg.linear.ridge)?)
    }
}

pub fn save_model(model: &KoopmanModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    model.save(&dir.join("model.json"))?;
    if let Some(report) = model.report() {
        write(&dir.join("metrics.csv"), report.metrics_csv())?;
    }
    Ok(())
}

pub fn cmd_fit(cfg: &Config, data: &Path, variant: Variant, run_seed: u64, out: &Path) -> Result<String> {
    let ds = TrajectoryDataset::load(data)?;
    if ds.dim() != cfg.state_dim {
        return Err(config(format!(
            "dataset has dimension {} but state_dim is {}",
            ds.dim(),
            cfg.state_dim
        )));
    }
    let seeds = RunSeeds::new(run_seed, cfg.system.seed);
    let model = fit_model(cfg, variant, &ds, seeds.training)?;
    save_model(&model, out)?;
    let extra = match model.report() {
        Some(r) => format!(", {} epochs, best val loss {:.4e}", r.epochs_run, r.best_val_loss),
        None => String::new(),
    };
    Ok(format!(
        "fit: {variant} with {} parameters, spectral radius {:.4}{extra} -> {}",
        model.num_params(),
        model.spectral_radius(),
        out.display()
    ))
}

#[derive(Clone, Debug, Serialize)]
pub struct Evaluation {
    pub variant: Variant,
    pub horizon: usize,
    pub test_mse: f64,
    pub spectral_radius: f64,
    pub diverging: bool,
    /// Test split, grouped by the quotient copy of each initial state.
    pub per_copy: Vec<dha_core::analysis::CopyError>,
    /// Every test trajectory moved to each quotient copy with transported noise.
    pub transported_copies: Vec<dha_core::analysis::CopyError>,
    #[serde(skip)]
    pub report: Option<MseReport>,
}

pub fn evaluate(model: &KoopmanModel, ds: &TrajectoryDataset, horizon: usize) -> Result<Evaluation> {
    let test = ds.select(Split::Test);
    let report = prediction_mse(model, &test, &ds.rep, horizon)?;
    let copies = orbit_copies(&test, &ds.rep)?;
    let refs: Vec<&DMatrix<f64>> = copies.iter().collect();
    let transported = prediction_mse(model, &refs, &ds.rep, horizon)?;
    Ok(Evaluation {
        variant: model.variant(),
        horizon,
        test_mse: report.aggregate,
        spectral_radius: model.spectral_radius(),
        diverging: model.diverging(),
        per_copy: report.per_copy.clone(),
        transported_copies: transported.per_copy,
        report: Some(report),
    })
}

pub fn write_evaluation(ev: &Evaluation, dir: &Path) -> Result<()> {
    let report = ev.report.as_ref().expect("fresh evaluation");
    write(&dir.join("mse.csv"), report.to_csv())?;
    write(&dir.join("per_copy.csv"), report.per_copy_csv())?;
    let mut s = String::from("g_index,count,mse\n");
    for c in &ev.transported_copies {
        s.push_str(&format!("{},{},{}\n", c.g_index, c.count, fmt17(c.mse)));
    }
    write(&dir.join("transported_copies.csv"), s)?;
    write_json(&dir.join("eval.json"), ev)
}

pub fn cmd_eval(model_path: &Path, data: &Path, horizon: usize, out: &Path) -> Result<String> {
    let model = KoopmanModel::load(model_path)?;
    let ds = TrajectoryDataset::load(data)?;
    if horizon == 0 || horizon > ds.horizon() {
        return Err(config(format!("horizon must lie in 1..={}", ds.horizon())));
    }
    let ev = evaluate(&model, &ds, horizon)?;
    write_evaluation(&ev, out)?;
    let spread = copy_spread(&ev.transported_copies);
    Ok(format!(
        "eval: {} test MSE {:.6e} over {} steps, transported-copy spread {:.2}% -> {}",
        ev.variant,
        ev.test_mse,
        horizon,
        100.0 * spread,
        out.display()
    ))
}

/// `(max − min) / min` over per-copy errors.
pub fn copy_spread(copies: &[dha_core::analysis::CopyError]) -> f64 {
    let max = copies.iter().map(|c| c.mse).fold(f64::MIN, f64::max);
    let min = copies.iter().map(|c| c.mse).fold(f64::MAX, f64::min);
    if copies.is_empty() {
        0.0
    } else {
        (max - min) / min
    }
}

pub fn cmd_decompose(data: &Path, out: &Path) -> Result<String> {
    let ds = TrajectoryDataset::load(data)?;
    let basis = isotypic_basis(&ds.rep, &irreps_real(ds.rep.group())?)?;
    write(&out.join("basis.json"), basis.to_json()?)?;
    let mut mean: Option<EnergyDecomposition> = None;
    let n = ds.trajectories.len() as f64;
    for t in &ds.trajectories {
        let e = isotypic_energy(t, &basis, None, ds.dt)?;
        match mean.as_mut() {
            None => mean = Some(e),
            Some(acc) => {
                if acc.time.len() != e.time.len() {
                    return Err(config("trajectories of unequal length cannot be averaged"));
                }
                for (a, b) in acc.absolute.iter_mut().zip(&e.absolute) {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                }
                acc.total.iter_mut().zip(&e.total).for_each(|(x, y)| *x += y);
            }
        }
    }
    let mut mean = mean.ok_or_else(|| config("dataset has no trajectories"))?;
    mean.absolute.iter_mut().flatten().for_each(|x| *x /= n);
    mean.total.iter_mut().for_each(|x| *x /= n);
    mean.fraction = mean
        .absolute
        .iter()
        .map(|b| b.iter().zip(&mean.total).map(|(x, t)| if *t > 0.0 { x / t } else { 0.0 }).collect())
        .collect();
    write(&out.join("energy.csv"), mean.to_csv())?;
    let series: Vec<Series> = mean
        .labels
        .iter()
        .zip(&mean.fraction)
        .map(|(l, f)| Series {
            name: l.clone(),
            points: mean.time.iter().copied().zip(f.iter().copied()).collect(),
        })
        .collect();
    emit_plot_data(
        &series,
        &out.join("energy_fraction"),
        &PlotOptions {
            title: "Mean isotypic energy fraction".into(),
            x_label: "t".into(),
            y_label: "fraction of energy".into(),
            ..Default::default()
        },
    )?;
    let blocks = block_info(&basis);
    write_json(
        &out.join("manifest.json"),
        &json!({
            "group": ds.rep.group().name(),
            "dim": ds.dim(),
            "basis_fingerprint": basis.fingerprint(),
            "isotypic_blocks": blocks.len(),
            "blocks": blocks,
            "trajectories": ds.trajectories.len(),
        }),
    )?;
    Ok(format!(
        "decompose: {} isotypic blocks of dimension {} over {} trajectories -> {}",
        blocks.len(),
        ds.dim(),
        ds.trajectories.len(),
        out.display()
    ))
}

pub fn cmd_spectra(model_path: &Path, out: &Path) -> Result<String> {
    let model = KoopmanModel::load(model_path)?;
    let report = model_spectrum(&model)?;
    write(&out.join("spectrum.json"), report.to_json()? + "\n")?;
    let mut csv = String::from("block,re,im,modulus\n");
    for b in &report.blocks {
        for &(re, im) in &b.eigenvalues {
            csv.push_str(&format!("{},{},{},{}\n", b.label, fmt17(re), fmt17(im), fmt17(re.hypot(im))));
        }
    }
    write(&out.join("spectrum.csv"), csv)?;
    Ok(format!(
        "spectra: {} eigenvalues in {} blocks, spectral radius {:.6} -> {}",
        report.eigenvalues().len(),
        report.blocks.len(),
        report.spectral_radius,
        out.display()
    ))
}
