//! Global linear models of the dynamics: closed-form (e)EDMD fits and
//! gradient-trained dynamics autoencoders.
//!
//! Snapshot matrices hold one sample per column. Trajectories hold one state
//! per row.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::equiv::{commutant_of_basis, CommutantBasis, EquivariantLinearMap};
use crate::group::{irreps_real, regular_copies, FiniteGroup, RepSpec, Representation};
use crate::harmonic::{isotypic_basis, IsotypicBasis};
use crate::linalg::{fmt17, pseudo_inverse, spectral_radius};
use crate::neural::{
    adam_step, decode_params, encode_params, AdamConfig, AdamState, DenseNet, EquivariantNet, Net, Network,
};
use crate::sim::{explicit_spec, Split, TrajectoryDataset};
use crate::{Error, Result};

/// Spectral radius above which a model is flagged as having diverging
/// latent dynamics.
pub const DIVERGING_RADIUS: f64 = 1.05;

const CONDITION_FLOOR: f64 = 1e-14;

/// Solves `S x = r` for symmetric positive semi-definite `S` by Cholesky.
/// With `ridge == 0` a numerically singular `S` is reported instead of
/// returning a meaningless solution.
fn spd_solve(s: DMatrix<f64>, rhs: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    let n = s.nrows();
    let s = s + DMatrix::identity(n, n) * ridge;
    let chol = s.cholesky().ok_or(Error::RankDeficient)?;
    let diag = chol.l_dirty().diagonal();
    let max = diag.iter().fold(0.0f64, |a, v| a.max(v * v));
    let min = diag.iter().fold(f64::INFINITY, |a, v| a.min(v * v));
    if ridge == 0.0 && !(min > CONDITION_FLOOR * max) {
        return Err(Error::RankDeficient);
    }
    Ok(chol.solve(rhs))
}

fn check_snapshots(x: &DMatrix<f64>, y: &DMatrix<f64>, ridge: f64) -> Result<()> {
    if x.ncols() != y.ncols() {
        return Err(Error::DimensionMismatch {
            expected: x.ncols(),
            got: y.ncols(),
        });
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::Invalid(format!("ridge must be finite and ≥ 0, got {ridge}")));
    }
    Ok(())
}

/// Scale-aware default ridge `1e-9 · tr(XXᵀ) / m`.
pub fn default_ridge(x: &DMatrix<f64>) -> f64 {
    1e-9 * x.norm_squared() / x.nrows().max(1) as f64
}

/// `K = Y Xᵀ (X Xᵀ + λI)⁻¹`, the minimizer of `‖Y − KX‖² + λ‖K‖²`.
pub fn edmd_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    check_snapshots(x, y, ridge)?;
    // (XXᵀ + λI) Kᵀ = X Yᵀ
    let kt = spd_solve(x * x.transpose(), &(x * y.transpose()), ridge)?;
    Ok(kt.transpose())
}

/// Minimum-norm least-squares solution `K = Y X⁺`.
pub fn edmd_fit_pinv(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_snapshots(x, y, 0.0)?;
    Ok(y * pseudo_inverse(x))
}

/// Ridge least squares over the commutant of the isotypic basis. The result
/// acts on isotypic coordinates; [`to_original`] maps it back.
pub fn eedmd_fit(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    basis: &IsotypicBasis,
    ridge: f64,
) -> Result<EquivariantLinearMap> {
    check_snapshots(x, y, ridge)?;
    if x.nrows() != basis.dim() || y.nrows() != basis.dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            got: x.nrows(),
        });
    }
    let commutant = Arc::new(commutant_of_basis(basis)?);
    let q = basis.q();
    let xt = q * x;
    let yt = q * y;
    let m = &xt * xt.transpose();
    let c = &yt * xt.transpose();
    let gens = commutant.matrices();
    let n = gens.len();
    let bm: Vec<DMatrix<f64>> = gens.iter().map(|b| b * &m).collect();
    // S_ll' = ⟨B_l M, B_l'⟩, r_l = ⟨B_l, C⟩
    let s = DMatrix::from_fn(n, n, |i, j| bm[i].dot(&gens[j]));
    let r = DMatrix::from_fn(n, 1, |i, _| gens[i].dot(&c));
    let theta = spd_solve(s, &r, ridge)?;
    EquivariantLinearMap::new(commutant, theta.iter().copied().collect())
}

/// `Qᵀ K Q`: an operator on isotypic coordinates expressed in the original ones.
pub fn to_original(k_iso: &DMatrix<f64>, basis: &IsotypicBasis) -> DMatrix<f64> {
    basis.q().transpose() * k_iso * basis.q()
}

/// Consecutive-state pairs `(X, Y)` of the given trajectories.
pub fn snapshot_pairs<'a>(trajectories: impl IntoIterator<Item = &'a DMatrix<f64>>) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut dim = 0;
    for t in trajectories {
        dim = t.ncols();
        for r in 0..t.nrows().saturating_sub(1) {
            xs.push(t.row(r).transpose());
            ys.push(t.row(r + 1).transpose());
        }
    }
    if xs.is_empty() {
        return (DMatrix::zeros(dim, 0), DMatrix::zeros(dim, 0));
    }
    (DMatrix::from_columns(&xs), DMatrix::from_columns(&ys))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Edmd,
    Eedmd,
    Dae,
    /// DAE trained on windows replaced by random group-transformed copies.
    DaeAug,
    Edae,
}

impl Variant {
    pub fn is_autoencoder(self) -> bool {
        matches!(self, Variant::Dae | Variant::DaeAug | Variant::Edae)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Edmd => "edmd",
            Variant::Eedmd => "eedmd",
            Variant::Dae => "dae",
            Variant::DaeAug => "dae_aug",
            Variant::Edae => "edae",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edmd" => Ok(Variant::Edmd),
            "eedmd" => Ok(Variant::Eedmd),
            "dae" => Ok(Variant::Dae),
            "dae_aug" => Ok(Variant::DaeAug),
            "edae" => Ok(Variant::Edae),
            _ => Err(Error::Invalid(format!("unknown model variant {s:?}"))),
        }
    }
}

/// Observable functions for the closed-form fits. The state itself always
/// occupies the first `m` coordinates, so decoding is a slice.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observables {
    #[default]
    Identity,
    /// State followed by all monomials `x_i x_j`, `i ≤ j`.
    Poly2,
}

impl Observables {
    pub fn dim(self, m: usize) -> usize {
        match self {
            Observables::Identity => m,
            Observables::Poly2 => m + m * (m + 1) / 2,
        }
    }

    pub fn lift(self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Observables::Identity => x.clone(),
            Observables::Poly2 => {
                let m = x.nrows();
                let mut z = DMatrix::zeros(self.dim(m), x.ncols());
                z.rows_mut(0, m).copy_from(x);
                let mut r = m;
                for i in 0..m {
                    for j in i..m {
                        for c in 0..x.ncols() {
                            z[(r, c)] = x[(i, c)] * x[(j, c)];
                        }
                        r += 1;
                    }
                }
                z
            }
        }
    }
}

/// Latent linear operator of an autoencoder.
#[derive(Clone, Debug)]
pub enum LatentOperator {
    Dense(DMatrix<f64>),
    /// Block-diagonal operator on isotypic latent coordinates.
    Equivariant {
        map: EquivariantLinearMap,
        matrix: DMatrix<f64>,
    },
}

impl LatentOperator {
    pub fn matrix(&self) -> &DMatrix<f64> {
        match self {
            LatentOperator::Dense(k) => k,
            LatentOperator::Equivariant { matrix, .. } => matrix,
        }
    }

    fn num_params(&self) -> usize {
        match self {
            LatentOperator::Dense(k) => k.len(),
            LatentOperator::Equivariant { map, .. } => map.theta().len(),
        }
    }

    fn params(&self) -> Vec<f64> {
        match self {
            LatentOperator::Dense(k) => k.transpose().iter().copied().collect(),
            LatentOperator::Equivariant { map, .. } => map.theta().to_vec(),
        }
    }

    fn set_params(&mut self, p: &[f64]) {
        match self {
            LatentOperator::Dense(k) => {
                let (r, c) = k.shape();
                *k = DMatrix::from_row_slice(r, c, p);
            }
            LatentOperator::Equivariant { map, matrix } => {
                map.theta_mut().copy_from_slice(p);
                *matrix = map.assemble();
            }
        }
    }

    fn grad(&self, dk: &DMatrix<f64>) -> Vec<f64> {
        match self {
            LatentOperator::Dense(_) => dk.transpose().iter().copied().collect(),
            LatentOperator::Equivariant { map, .. } => map.basis().coordinates(dk),
        }
    }
}

/// Loss split into its two sums.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    /// `Σ_h ‖x_{t+h} − dec(K^h enc(x_t))‖²`
    pub recon: f64,
    /// `γ Σ_h ‖enc(x_{t+h}) − K^h enc(x_t)‖²`
    pub latent: f64,
}

impl LossTerms {
    fn scaled(self, s: f64) -> Self {
        LossTerms {
            total: self.total * s,
            recon: self.recon * s,
            latent: self.latent * s,
        }
    }

    fn add(&mut self, o: LossTerms) {
        self.total += o.total;
        self.recon += o.recon;
        self.latent += o.latent;
    }
}

/// Encoder, latent operator and decoder. Flat parameters are ordered
/// encoder, operator, decoder.
#[derive(Clone, Debug)]
pub struct Autoencoder {
    pub encoder: Net,
    pub operator: LatentOperator,
    pub decoder: Net,
}

fn first_nonfinite_block(m: &DMatrix<f64>, width: usize) -> Option<usize> {
    m.column_iter()
        .position(|c| c.iter().any(|v| !v.is_finite()))
        .map(|c| c / width.max(1))
}

impl Autoencoder {
    pub fn num_params(&self) -> usize {
        self.encoder.num_params() + self.operator.num_params() + self.decoder.num_params()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.encoder.params();
        p.extend(self.operator.params());
        p.extend(self.decoder.params());
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                got: p.len(),
            });
        }
        let a = self.encoder.num_params();
        let b = a + self.operator.num_params();
        self.encoder.set_params(&p[..a])?;
        self.operator.set_params(&p[a..b]);
        self.decoder.set_params(&p[b..])?;
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.operator.matrix().nrows()
    }

    /// Loss summed over a batch of windows. `batch[h]` holds `x_{t+h}` of
    /// every window as columns. Returns the flat gradient when requested.
    pub fn loss(&self, batch: &[DMatrix<f64>], gamma: f64, with_grad: bool) -> Result<(LossTerms, Option<Vec<f64>>)> {
        let hp1 = batch.len();
        if hp1 == 0 {
            return Err(Error::Invalid("empty window".into()));
        }
        let b = batch[0].ncols();
        let x_all = concat_columns(batch);
        let (e_all, enc_cache) = self.encoder.forward(&x_all)?;
        if let Some(h) = first_nonfinite_block(&e_all, b) {
            return Err(Error::NumericOverflow { horizon: h });
        }
        let k = self.operator.matrix();
        let mut zs = Vec::with_capacity(hp1);
        zs.push(e_all.columns(0, b).into_owned());
        for h in 1..hp1 {
            let z = k * &zs[h - 1];
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericOverflow { horizon: h });
            }
            zs.push(z);
        }
        let z_all = concat_columns(&zs);
        let (p_all, dec_cache) = self.decoder.forward(&z_all)?;
        if let Some(h) = first_nonfinite_block(&p_all, b) {
            return Err(Error::NumericOverflow { horizon: h });
        }
        let r = &p_all - &x_all;
        let d = &e_all - &z_all;
        let recon = r.norm_squared();
        let latent = gamma * d.norm_squared();
        let terms = LossTerms {
            total: recon + latent,
            recon,
            latent,
        };
        if !terms.total.is_finite() {
            let h = first_nonfinite_block(&r.map(|v| v * v), b).unwrap_or(hp1 - 1);
            return Err(Error::NumericOverflow { horizon: h });
        }
        if !with_grad {
            return Ok((terms, None));
        }

        let (g_dec, dz_dec) = self.decoder.backward(&dec_cache, &(&r * 2.0))?;
        let dz = dz_dec - &d * (2.0 * gamma);
        let mut de = &d * (2.0 * gamma);
        // Z_h = K Z_{h-1}: accumulate from the last horizon backwards
        let mut dk = DMatrix::zeros(k.nrows(), k.ncols());
        let mut g = dz.columns((hp1 - 1) * b, b).into_owned();
        for h in (1..hp1).rev() {
            dk += &g * zs[h - 1].transpose();
            g = k.transpose() * g + dz.columns((h - 1) * b, b);
        }
        let mut de0 = de.columns_mut(0, b);
        de0 += g;
        let (g_enc, _) = self.encoder.backward(&enc_cache, &de)?;
        let mut flat = g_enc;
        flat.extend(self.operator.grad(&dk));
        flat.extend(g_dec);
        Ok((terms, Some(flat)))
    }

    pub fn encode(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.encoder.forward(x)?.0)
    }

    pub fn decode(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.decoder.forward(z)?.0)
    }
}

fn concat_columns(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks[0].nrows();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.columns_mut(c, b.ncols()).copy_from(b);
        c += b.ncols();
    }
    out
}

/// The windowed loss of one trajectory window (rows `x_t .. x_{t+H}`).
pub fn dae_loss(model: &Autoencoder, window: &DMatrix<f64>, gamma: f64) -> Result<LossTerms> {
    let batch: Vec<DMatrix<f64>> = window.row_iter().map(|r| r.transpose().into_owned()).map(|v| {
        DMatrix::from_column_slice(v.len(), 1, v.as_slice())
    }).collect();
    Ok(model.loss(&batch, gamma, false)?.0)
}

/// Network shape shared by encoder and decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    /// For `edae`: whether the decoder is also equivariant.
    pub equivariant_decoder: bool,
}

/// Smallest multiple of `order` that is at least `n`.
pub fn round_up(n: usize, order: usize) -> usize {
    n.div_ceil(order) * order
}

impl Architecture {
    /// Four hidden layers of width `round_up(4m, |G|)`; latent `round_up(2m, |G|)`.
    pub fn default_for(m: usize, group_order: usize) -> Self {
        let w = round_up(4 * m, group_order);
        Architecture {
            latent_dim: round_up(2 * m, group_order),
            hidden: vec![w; 4],
            equivariant_decoder: true,
        }
    }
}

pub fn build_autoencoder(variant: Variant, rep: &Representation, arch: &Architecture, seed: u64) -> Result<Autoencoder> {
    let m = rep.dim();
    let l = arch.latent_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match variant {
        Variant::Dae | Variant::DaeAug => {
            let widths: Vec<usize> = std::iter::once(m).chain(arch.hidden.iter().copied()).chain([l]).collect();
            let encoder = DenseNet::new(&widths, &mut rng)?;
            let back: Vec<usize> = widths.iter().rev().copied().collect();
            let decoder = DenseNet::new(&back, &mut rng)?;
            Ok(Autoencoder {
                encoder: Net::Dense(encoder),
                operator: LatentOperator::Dense(DMatrix::identity(l, l)),
                decoder: Net::Dense(decoder),
            })
        }
        Variant::Edae => {
            let group = rep.group();
            let n = group.order();
            if l % n != 0 {
                return Err(Error::Invalid(format!("latent dimension {l} is not a multiple of |G| = {n}")));
            }
            if let Some(w) = arch.hidden.iter().find(|w| *w % n != 0) {
                return Err(Error::Invalid(format!("hidden width {w} is not a multiple of |G| = {n}")));
            }
            let copies: Vec<usize> = arch.hidden.iter().map(|w| w / n).collect();
            let latent_rep = regular_copies(group, l / n)?;
            let basis = isotypic_basis(&latent_rep, &irreps_real(group)?)?;
            let q = basis.q().clone();
            let encoder = EquivariantNet::new(rep, &copies, &latent_rep, &mut rng)?.with_output_transform(q.clone());
            let decoder = if arch.equivariant_decoder {
                let rev: Vec<usize> = copies.iter().rev().copied().collect();
                Net::Equivariant(EquivariantNet::new(&latent_rep, &rev, rep, &mut rng)?.with_input_transform(q.transpose()))
            } else {
                let widths: Vec<usize> = std::iter::once(l).chain(arch.hidden.iter().rev().copied()).chain([m]).collect();
                Net::Dense(DenseNet::new(&widths, &mut rng)?)
            };
            let commutant: Arc<CommutantBasis> = Arc::new(commutant_of_basis(&basis)?);
            let map = EquivariantLinearMap::from_matrix(commutant, &DMatrix::identity(l, l));
            let matrix = map.assemble();
            Ok(Autoencoder {
                encoder: Net::Equivariant(encoder),
                operator: LatentOperator::Equivariant { map, matrix },
                decoder,
            })
        }
        _ => Err(Error::Invalid(format!("{variant} is not an autoencoder variant"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub architecture: Option<Architecture>,
    /// Window length minus one.
    pub horizon: usize,
    /// Defaults to `sqrt(m / ℓ)`.
    pub gamma: Option<f64>,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub patience: usize,
    pub seed: u64,
    /// Caps the number of training windows (drawn with the run seed).
    pub train_windows: Option<usize>,
    /// Stops at the end of the first epoch that reaches this many
    /// optimizer steps.
    #[serde(default)]
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            architecture: None,
            horizon: 10,
            gamma: None,
            lr: 1e-3,
            epochs: 300,
            batch: 64,
            patience: 30,
            seed: 0,
            train_windows: None,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(text.as_bytes())[..8])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub recon_term: f64,
    pub latent_term: f64,
    pub spectral_radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub seed: u64,
    pub config_hash: String,
    pub gamma: f64,
    pub initial_loss: f64,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub train_windows: usize,
    pub metrics: Vec<EpochMetrics>,
}

impl TrainingReport {
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,recon_term,latent_term,spectral_radius\n");
        for m in &self.metrics {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                m.epoch,
                fmt17(m.train_loss),
                fmt17(m.val_loss),
                fmt17(m.recon_term),
                fmt17(m.latent_term),
                fmt17(m.spectral_radius)
            ));
        }
        s
    }
}

#[derive(Clone, Debug)]
enum Body {
    Linear {
        observables: Observables,
        k: DMatrix<f64>,
        /// eEDMD: the operator on isotypic coordinates and its basis.
        equivariant: Option<(EquivariantLinearMap, Arc<IsotypicBasis>)>,
    },
    Autoencoder {
        net: Autoencoder,
        arch: Architecture,
        seed: u64,
    },
}

#[derive(Clone, Debug)]
pub struct KoopmanModel {
    variant: Variant,
    rep: Representation,
    body: Body,
    report: Option<TrainingReport>,
}

/// A window is `(trajectory index, start row)`.
type Window = (usize, usize);

fn windows_of(ds: &TrajectoryDataset, split: Split, horizon: usize) -> Vec<Window> {
    let mut out = Vec::new();
    for i in ds.indices(split) {
        let rows = ds.trajectories[i].nrows();
        for s in 0..(rows.saturating_sub(horizon)) {
            out.push((i, s));
        }
    }
    out
}

fn gather(ds: &TrajectoryDataset, windows: &[Window], horizon: usize, act: Option<&[DMatrix<f64>]>) -> Vec<DMatrix<f64>> {
    let m = ds.dim();
    (0..=horizon)
        .map(|h| {
            let mut x = DMatrix::zeros(m, windows.len());
            for (j, &(i, s)) in windows.iter().enumerate() {
                let v = ds.trajectories[i].row(s + h).transpose();
                match act {
                    Some(mats) => x.set_column(j, &(&mats[j] * v)),
                    None => x.set_column(j, &v),
                }
            }
            x
        })
        .collect()
}

fn mean_loss(net: &Autoencoder, ds: &TrajectoryDataset, windows: &[Window], horizon: usize, gamma: f64) -> Result<LossTerms> {
    let mut acc = LossTerms::default();
    for chunk in windows.chunks(256) {
        let batch = gather(ds, chunk, horizon, None);
        acc.add(net.loss(&batch, gamma, false)?.0);
    }
    Ok(acc.scaled(1.0 / windows.len().max(1) as f64))
}

impl KoopmanModel {
    /// Closed-form fit on all consecutive pairs of the training and
    /// validation trajectories.
    pub fn fit_linear(
        variant: Variant,
        ds: &TrajectoryDataset,
        observables: Observables,
        ridge: Option<f64>,
    ) -> Result<Self> {
        let trajs = ds.select(Split::Train).into_iter().chain(ds.select(Split::Val));
        let (x, y) = snapshot_pairs(trajs);
        if x.ncols() == 0 {
            return Err(Error::Invalid("dataset has no training pairs".into()));
        }
        let body = match variant {
            Variant::Edmd => {
                let zx = observables.lift(&x);
                let zy = observables.lift(&y);
                let lambda = ridge.unwrap_or_else(|| default_ridge(&zx));
                Body::Linear {
                    observables,
                    k: edmd_fit(&zx, &zy, lambda)?,
                    equivariant: None,
                }
            }
            Variant::Eedmd => {
                if observables != Observables::Identity {
                    return Err(Error::Invalid("eedmd supports identity observables only".into()));
                }
                let basis = Arc::new(isotypic_basis(&ds.rep, &irreps_real(ds.rep.group())?)?);
                let lambda = ridge.unwrap_or_else(|| default_ridge(&x));
                let map = eedmd_fit(&x, &y, &basis, lambda)?;
                Body::Linear {
                    observables,
                    k: to_original(&map.assemble(), &basis),
                    equivariant: Some((map, basis)),
                }
            }
            _ => return Err(Error::Invalid(format!("{variant} is trained, not fitted"))),
        };
        Ok(KoopmanModel {
            variant,
            rep: ds.rep.clone(),
            body,
            report: None,
        })
    }

    pub fn initialize(variant: Variant, rep: &Representation, arch: &Architecture, seed: u64) -> Result<Self> {
        Ok(KoopmanModel {
            variant,
            rep: rep.clone(),
            body: Body::Autoencoder {
                net: build_autoencoder(variant, rep, arch, seed)?,
                arch: arch.clone(),
                seed,
            },
            report: None,
        })
    }

    /// Minibatch Adam over stride-1 windows of the training split with early
    /// stopping on the validation split. Returns the best-validation model.
    pub fn train(variant: Variant, ds: &TrajectoryDataset, config: &TrainConfig) -> Result<Self> {
        let m = ds.dim();
        let order = ds.rep.group().order();
        let arch = config
            .architecture
            .clone()
            .unwrap_or_else(|| Architecture::default_for(m, order));
        let mut model = Self::initialize(variant, &ds.rep, &arch, config.seed)?;
        let gamma = config.gamma.unwrap_or((m as f64 / arch.latent_dim as f64).sqrt());
        let h = config.horizon;
        if h == 0 || config.batch == 0 {
            return Err(Error::Invalid("horizon and batch size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_7a1e);
        let mut train = windows_of(ds, Split::Train, h);
        if let Some(cap) = config.train_windows {
            train.shuffle(&mut rng);
            train.truncate(cap);
            train.sort_unstable();
        }
        if train.is_empty() {
            return Err(Error::Invalid(format!("no training windows of length {}", h + 1)));
        }
        let val = windows_of(ds, Split::Val, h);
        let select = if val.is_empty() { &train } else { &val };
        let Body::Autoencoder { net, .. } = &mut model.body else { unreachable!() };

        let initial = mean_loss(net, ds, select, h, gamma)?;
        let mut best = (initial.total, net.params(), 0usize);
        let mut state = AdamState::new(net.num_params());
        let hyper = AdamConfig::with_lr(config.lr);
        let mut metrics = Vec::new();
        let mut since_best = 0;
        let mut epochs_run = 0;
        let mut order_idx: Vec<usize> = (0..train.len()).collect();
        let group = ds.rep.group().clone();
        for epoch in 1..=config.epochs {
            order_idx.shuffle(&mut rng);
            let mut acc = LossTerms::default();
            for chunk in order_idx.chunks(config.batch) {
                let wins: Vec<Window> = chunk.iter().map(|&i| train[i]).collect();
                let mats: Option<Vec<DMatrix<f64>>> = (variant == Variant::DaeAug).then(|| {
                    wins.iter()
                        .map(|_| ds.rep.matrix(rng.random_range(0..group.order())).clone())
                        .collect()
                });
                let batch = gather(ds, &wins, h, mats.as_deref());
                let before = net.params();
                let diverged = |at| Error::TrainingDivergence {
                    at,
                    last_finite: Some(before.clone()),
                };
                let (terms, grad) = match net.loss(&batch, gamma, true) {
                    Ok(v) => v,
                    Err(Error::NumericOverflow { .. }) => return Err(diverged(state.steps())),
                    Err(e) => return Err(e),
                };
                let scale = 1.0 / wins.len() as f64;
                let grad: Vec<f64> = grad.expect("requested").iter().map(|g| g * scale).collect();
                let mut p = before.clone();
                if adam_step(&mut p, &grad, &mut state, &hyper).is_err() {
                    return Err(diverged(state.steps()));
                }
                net.set_params(&p)?;
                acc.add(terms);
            }
            let train_terms = acc.scaled(1.0 / train.len() as f64);
            let val_loss = match mean_loss(net, ds, select, h, gamma) {
                Ok(t) => t.total,
                Err(Error::NumericOverflow { .. }) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            if !val_loss.is_finite() {
                return Err(Error::TrainingDivergence {
                    at: state.steps(),
                    last_finite: Some(best.1.clone()),
                });
            }
            metrics.push(EpochMetrics {
                epoch,
                train_loss: train_terms.total,
                val_loss,
                recon_term: train_terms.recon,
                latent_term: train_terms.latent,
                spectral_radius: spectral_radius(net.operator.matrix()),
            });
            epochs_run = epoch;
            if val_loss < best.0 {
                best = (val_loss, net.params(), epoch);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    break;
                }
            }
            if config.max_steps.is_some_and(|cap| state.steps() >= cap) {
                break;
            }
        }
        net.set_params(&best.1)?;
        model.report = Some(TrainingReport {
            seed: config.seed,
            config_hash: config.hash(),
            gamma,
            initial_loss: initial.total,
            best_epoch: best.2,
            best_val_loss: best.0,
            epochs_run,
            train_windows: train.len(),
            metrics,
        });
        Ok(model)
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn rep(&self) -> &Representation {
        &self.rep
    }

    pub fn report(&self) -> Option<&TrainingReport> {
        self.report.as_ref()
    }

    pub fn autoencoder(&self) -> Option<&Autoencoder> {
        match &self.body {
            Body::Autoencoder { net, .. } => Some(net),
            Body::Linear { .. } => None,
        }
    }

    pub fn autoencoder_mut(&mut self) -> Option<&mut Autoencoder> {
        match &mut self.body {
            Body::Autoencoder { net, .. } => Some(net),
            Body::Linear { .. } => None,
        }
    }

    /// The latent (or observable-space) operator.
    pub fn operator(&self) -> &DMatrix<f64> {
        match &self.body {
            Body::Linear { k, .. } => k,
            Body::Autoencoder { net, .. } => net.operator.matrix(),
        }
    }

    /// Isotypic decomposition the operator is block-diagonal in, when the
    /// model is equivariant by construction.
    pub fn latent_basis(&self) -> Result<Option<IsotypicBasis>> {
        match &self.body {
            Body::Linear { equivariant: Some((_, b)), .. } => Ok(Some((**b).clone())),
            Body::Autoencoder { arch, .. } if self.variant == Variant::Edae => {
                let g = self.rep.group();
                let rep = regular_copies(g, arch.latent_dim / g.order())?;
                Ok(Some(isotypic_basis(&rep, &irreps_real(g)?)?))
            }
            _ => Ok(None),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.operator().nrows()
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(self.operator())
    }

    pub fn diverging(&self) -> bool {
        !(self.spectral_radius() <= DIVERGING_RADIUS)
    }

    /// Trainable parameter count (operator entries for closed-form fits).
    pub fn num_params(&self) -> usize {
        match &self.body {
            Body::Linear { k, equivariant, .. } => equivariant.as_ref().map_or(k.len(), |(m, _)| m.theta().len()),
            Body::Autoencoder { net, .. } => net.num_params(),
        }
    }

    pub fn encode(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match &self.body {
            Body::Linear { observables, .. } => Ok(observables.lift(x)),
            Body::Autoencoder { net, .. } => net.encode(x),
        }
    }

    pub fn decode(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match &self.body {
            Body::Linear { .. } => Ok(z.rows(0, self.rep.dim()).into_owned()),
            Body::Autoencoder { net, .. } => net.decode(z),
        }
    }

    /// `dec(K^h enc(x0))` for `h = 1..=horizon`, one row per step.
    pub fn predict(&self, x0: &DVector<f64>, horizon: usize) -> Result<DMatrix<f64>> {
        let m = self.rep.dim();
        if x0.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: x0.len() });
        }
        self.predict_batch(&DMatrix::from_column_slice(m, 1, x0.as_slice()), horizon)
            .map(|v| v.into_iter().next().expect("one column"))
    }

    /// Predictions for every column of `x0`; one `horizon × m` matrix each.
    pub fn predict_batch(&self, x0: &DMatrix<f64>, horizon: usize) -> Result<Vec<DMatrix<f64>>> {
        let m = self.rep.dim();
        let n = x0.ncols();
        let mut out = vec![DMatrix::zeros(horizon, m); n];
        if horizon == 0 {
            return Ok(out);
        }
        let k = self.operator();
        let mut z = self.encode(x0)?;
        let mut zs = Vec::with_capacity(horizon);
        for h in 1..=horizon {
            z = k * z;
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericOverflow { horizon: h });
            }
            zs.push(z.clone());
        }
        let decoded = self.decode(&concat_columns(&zs))?;
        for h in 0..horizon {
            let block = decoded.columns(h * n, n);
            if block.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericOverflow { horizon: h + 1 });
            }
            for j in 0..n {
                out[j].set_row(h, &block.column(j).transpose());
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut file = ModelFile {
            variant: self.variant,
            group: self.rep.group().name(),
            rep: explicit_spec(&self.rep),
            architecture: None,
            observables: None,
            seed: None,
            basis_fingerprint: None,
            params: String::new(),
            report: self.report.clone(),
        };
        match &self.body {
            Body::Linear {
                observables,
                k,
                equivariant,
            } => {
                file.observables = Some(*observables);
                match equivariant {
                    Some((map, _)) => {
                        file.basis_fingerprint = Some(map.basis().fingerprint().to_string());
                        file.params = encode_params(map.theta());
                    }
                    None => {
                        file.architecture = Some(serde_json::json!({ "rows": k.nrows(), "cols": k.ncols() }));
                        file.params = encode_params(&k.transpose().iter().copied().collect::<Vec<_>>());
                    }
                }
            }
            Body::Autoencoder { net, arch, seed } => {
                file.architecture = Some(serde_json::to_value(arch)?);
                file.seed = Some(*seed);
                if let LatentOperator::Equivariant { map, .. } = &net.operator {
                    file.basis_fingerprint = Some(map.basis().fingerprint().to_string());
                }
                file.params = encode_params(&net.params());
            }
        }
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        let group = Arc::new(FiniteGroup::parse(&file.group)?);
        let rep = file.rep.build(&group)?;
        let params = decode_params(&file.params)?;
        let mut model = match file.variant {
            Variant::Edmd => {
                let obs = file.observables.unwrap_or_default();
                let n = obs.dim(rep.dim());
                if params.len() != n * n {
                    return Err(Error::DimensionMismatch { expected: n * n, got: params.len() });
                }
                KoopmanModel {
                    variant: Variant::Edmd,
                    rep,
                    body: Body::Linear {
                        observables: obs,
                        k: DMatrix::from_row_slice(n, n, &params),
                        equivariant: None,
                    },
                    report: None,
                }
            }
            Variant::Eedmd => {
                let basis = Arc::new(isotypic_basis(&rep, &irreps_real(&group)?)?);
                let commutant = Arc::new(commutant_of_basis(&basis)?);
                check_fingerprint(commutant.fingerprint(), file.basis_fingerprint.as_deref())?;
                let map = EquivariantLinearMap::new(commutant, params)?;
                KoopmanModel {
                    variant: Variant::Eedmd,
                    body: Body::Linear {
                        observables: Observables::Identity,
                        k: to_original(&map.assemble(), &basis),
                        equivariant: Some((map, basis)),
                    },
                    rep,
                    report: None,
                }
            }
            v => {
                let arch: Architecture = serde_json::from_value(
                    file.architecture
                        .clone()
                        .ok_or_else(|| Error::Invalid("model file lacks an architecture".into()))?,
                )?;
                let seed = file.seed.unwrap_or(0);
                let mut model = Self::initialize(v, &rep, &arch, seed)?;
                let net = model.autoencoder_mut().expect("autoencoder");
                if let LatentOperator::Equivariant { map, .. } = &net.operator {
                    check_fingerprint(map.basis().fingerprint(), file.basis_fingerprint.as_deref())?;
                }
                net.set_params(&params)?;
                model
            }
        };
        model.report = file.report;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn check_fingerprint(expected: &str, found: Option<&str>) -> Result<()> {
    match found {
        Some(f) if f == expected => Ok(()),
        other => Err(Error::FingerprintMismatch {
            expected: expected.to_string(),
            found: other.unwrap_or("none").to_string(),
        }),
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    variant: Variant,
    group: String,
    rep: RepSpec,
    architecture: Option<serde_json::Value>,
    observables: Option<Observables>,
    seed: Option<u64>,
    basis_fingerprint: Option<String>,
    params: String,
    report: Option<TrainingReport>,
}
