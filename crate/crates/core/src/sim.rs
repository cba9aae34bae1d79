//! Synthetic symmetric stochastic linear systems and trajectory datasets.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::equiv::{equivariance_residual, equivariant_project};
use crate::group::{FiniteGroup, RepSpec, Representation};
use crate::linalg::{fmt17, spectral_radius};
use crate::{Error, Result};

const NILPOTENT_TOL: f64 = 1e-12;
const MAX_RESAMPLES: usize = 16;
const CONSTRAINT_DEDUP_TOL: f64 = 1e-9;
const FEASIBILITY_TOL: f64 = 1e-12;
const MAX_PROJECTION_PASSES: usize = 8;
const MAX_INIT_DRAWS: usize = 10_000;

/// Half-space constraints `C x ≥ c`.
#[derive(Clone, Debug, PartialEq)]
pub struct Constraints {
    pub c: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl Constraints {
    pub fn empty(dim: usize) -> Self {
        Constraints {
            c: DMatrix::zeros(0, dim),
            offset: DVector::zeros(0),
        }
    }

    pub fn len(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.c.nrows() == 0
    }

    /// Largest violation `max_k (c_k − C_k x)`, or 0 when feasible.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        (0..self.len())
            .map(|k| self.offset[k] - self.c.row(k).dot(&x.transpose()))
            .fold(0.0, f64::max)
    }

    pub fn is_feasible(&self, x: &DVector<f64>) -> bool {
        self.max_violation(x) <= FEASIBILITY_TOL
    }

    /// Appends `C_k ρ(g⁻¹)` for every row and group element, dropping
    /// duplicates (rows and offsets within `1e-9`).
    pub fn close_under(&self, rep: &Representation) -> Constraints {
        let group = rep.group();
        let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
        for k in 0..self.len() {
            let row = self.c.row(k).transpose();
            for g in group.elements() {
                let r = rep.matrix(group.inverse(g)).transpose() * &row;
                let dup = rows.iter().any(|(q, o)| {
                    (q - &r).amax() <= CONSTRAINT_DEDUP_TOL && (o - self.offset[k]).abs() <= CONSTRAINT_DEDUP_TOL
                });
                if !dup {
                    rows.push((r, self.offset[k]));
                }
            }
        }
        let dim = self.c.ncols();
        let mut c = DMatrix::zeros(rows.len(), dim);
        for (i, (r, _)) in rows.iter().enumerate() {
            c.row_mut(i).copy_from(&r.transpose());
        }
        Constraints {
            c,
            offset: DVector::from_iterator(rows.len(), rows.iter().map(|(_, o)| *o)),
        }
    }

    /// Whether every transformed row `C_k ρ(g)` occurs with the same offset.
    pub fn closure_residual(&self, rep: &Representation) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.len() {
            let row = self.c.row(k);
            for g in rep.group().elements() {
                let r = row * rep.matrix(g);
                let best = (0..self.len())
                    .map(|j| (self.c.row(j) - &r).amax().max((self.offset[j] - self.offset[k]).abs()))
                    .fold(f64::INFINITY, f64::min);
                worst = worst.max(best);
            }
        }
        worst
    }

    /// Euclidean projection onto the feasible polyhedron. A single violated
    /// row reduces to the half-space step `x += (c_k − C_k x)/‖C_k‖² · C_kᵀ`.
    /// The projection is unique, so it commutes with any orthogonal action
    /// that permutes the rows.
    pub fn project(&self, x: &mut DVector<f64>) -> Result<()> {
        if self.is_feasible(x) {
            return Ok(());
        }
        // least-distance problem min ‖z‖ s.t. C z ≥ h, h = c − Cx
        let m = x.len();
        let n = self.len();
        let h = &self.offset - &self.c * &*x;
        let mut e = DMatrix::zeros(m + 1, n);
        e.view_mut((0, 0), (m, n)).copy_from(&self.c.transpose());
        e.row_mut(m).copy_from(&h.transpose());
        let mut f = DVector::zeros(m + 1);
        f[m] = 1.0;
        let u = nnls(&e, &f, MAX_PROJECTION_PASSES * (n + 1)).ok_or(Error::Infeasible)?;
        let r = &e * u - f;
        if r[m].abs() < 1e-14 {
            return Err(Error::Infeasible);
        }
        let z = -r.rows(0, m) / r[m];
        *x += z;
        if self.max_violation(x) > 1e-9 * (1.0 + h.amax()) {
            return Err(Error::Infeasible);
        }
        Ok(())
    }
}

/// Lawson–Hanson non-negative least squares `min ‖E u − f‖, u ≥ 0`.
fn nnls(e: &DMatrix<f64>, f: &DVector<f64>, max_iter: usize) -> Option<DVector<f64>> {
    let n = e.ncols();
    let tol = 1e-12 * (e.amax() * f.amax()).max(1.0);
    let mut u = DVector::zeros(n);
    let mut passive = vec![false; n];
    let mut iter = 0;
    loop {
        let w = e.transpose() * (f - e * &u);
        let next = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&a, &b| w[a].total_cmp(&w[b]).then(b.cmp(&a)));
        let Some(j) = next else { return Some(u) };
        passive[j] = true;
        loop {
            iter += 1;
            if iter > max_iter {
                return None;
            }
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let sub = e.select_columns(&idx);
            let zp = sub.svd(true, true).solve(f, 1e-13).ok()?;
            let mut z = DVector::zeros(n);
            for (k, &i) in idx.iter().enumerate() {
                z[i] = zp[k];
            }
            if idx.iter().all(|&i| z[i] > tol) {
                u = z;
                break;
            }
            let alpha = idx
                .iter()
                .filter(|&&i| z[i] <= tol)
                .map(|&i| u[i] / (u[i] - z[i]))
                .fold(f64::INFINITY, f64::min);
            u += (z - &u) * alpha;
            for &i in &idx {
                if u[i] <= tol {
                    u[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct SymmetricLinearSystem {
    pub a: DMatrix<f64>,
    pub rep: Representation,
    pub sigma: f64,
    pub constraints: Constraints,
    pub spectral_radius_target: f64,
}

/// Draws an equivariant `A` with the requested spectral radius and a
/// group-closed constraint set containing the origin in its interior.
pub fn random_symmetric_stable_system(
    rep: &Representation,
    spectral_radius_target: f64,
    sigma: f64,
    n_constraints: usize,
    seed: u64,
) -> Result<SymmetricLinearSystem> {
    if !(spectral_radius_target > 0.0 && spectral_radius_target < 1.0) {
        return Err(Error::Invalid(format!(
            "spectral radius must lie in (0, 1), got {spectral_radius_target}"
        )));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Invalid(format!("noise level must be finite and ≥ 0, got {sigma}")));
    }
    let m = rep.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = None;
    for _ in 0..MAX_RESAMPLES {
        let raw = DMatrix::from_fn(m, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let p = equivariant_project(&raw, rep)?;
        let r = spectral_radius(&p);
        if r >= NILPOTENT_TOL {
            a = Some(p * (spectral_radius_target / r));
            break;
        }
    }
    let a = a.ok_or(Error::Nilpotent(MAX_RESAMPLES))?;

    let mut seed_rows = Constraints::empty(m);
    if n_constraints > 0 {
        let c = DMatrix::from_fn(n_constraints, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let offset = DVector::from_fn(n_constraints, |k, _| -c.row(k).norm() * rng.random_range(0.5..1.0));
        seed_rows = Constraints { c, offset };
    }
    Ok(SymmetricLinearSystem {
        a,
        constraints: seed_rows.close_under(rep),
        rep: rep.clone(),
        sigma,
        spectral_radius_target,
    })
}

/// Standard normal noise vector for step `t`, keyed only by `(seed, t)`.
pub fn noise(seed: u64, t: usize, dim: usize) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64);
    DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal))
}

impl SymmetricLinearSystem {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn group(&self) -> &Arc<FiniteGroup> {
        self.rep.group()
    }

    pub fn equivariance_residual(&self) -> f64 {
        equivariance_residual(&self.a, &self.rep)
    }

    /// `steps + 1` states as rows, starting with `x0`.
    pub fn rollout(&self, x0: &DVector<f64>, steps: usize, noise_seed: u64) -> Result<DMatrix<f64>> {
        let m = self.dim();
        self.rollout_with_noise(x0, steps, |t| noise(noise_seed, t, m))
    }

    /// Rollout with an explicit standard-normal noise stream (scaled by σ).
    pub fn rollout_with_noise(
        &self,
        x0: &DVector<f64>,
        steps: usize,
        mut eps: impl FnMut(usize) -> DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        let m = self.dim();
        if x0.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: x0.len() });
        }
        if !self.constraints.is_feasible(x0) {
            return Err(Error::Invalid("initial state violates the constraints".into()));
        }
        let mut out = DMatrix::zeros(steps + 1, m);
        out.row_mut(0).copy_from(&x0.transpose());
        let mut x = x0.clone();
        for t in 0..steps {
            x = &self.a * &x;
            if self.sigma > 0.0 {
                x += eps(t) * self.sigma;
            }
            self.constraints.project(&mut x)?;
            out.row_mut(t + 1).copy_from(&x.transpose());
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = SystemFile {
            group: self.group().name(),
            rep: explicit_spec(&self.rep),
            a: row_major(&self.a),
            sigma: self.sigma,
            spectral_radius_target: self.spectral_radius_target,
            constraints: row_major(&self.constraints.c),
            offsets: self.constraints.offset.iter().copied().collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: SystemFile = serde_json::from_str(text)?;
        let group = Arc::new(FiniteGroup::parse(&f.group)?);
        let rep = f.rep.build(&group)?;
        let m = rep.dim();
        let a = from_row_major(&f.a, m)?;
        let c = if f.constraints.is_empty() {
            DMatrix::zeros(0, m)
        } else {
            from_row_major(&f.constraints, m)?
        };
        if c.nrows() != f.offsets.len() {
            return Err(Error::DimensionMismatch {
                expected: c.nrows(),
                got: f.offsets.len(),
            });
        }
        Ok(SymmetricLinearSystem {
            a,
            rep,
            sigma: f.sigma,
            constraints: Constraints {
                c,
                offset: DVector::from_vec(f.offsets),
            },
            spectral_radius_target: f.spectral_radius_target,
        })
    }

    /// SHA-256 over the group name and the little-endian bytes of every
    /// numeric field, truncated to 16 hex digits.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.group().name().as_bytes());
        for m in self.rep.matrices() {
            update_matrix(&mut h, m);
        }
        update_matrix(&mut h, &self.a);
        update_matrix(&mut h, &self.constraints.c);
        for v in self.constraints.offset.iter().chain([self.sigma, self.spectral_radius_target].iter()) {
            h.update(v.to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }
}

fn update_matrix(h: &mut Sha256, m: &DMatrix<f64>) {
    h.update((m.nrows() as u64).to_le_bytes());
    h.update((m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        h.update(v.to_le_bytes());
    }
}

#[derive(Serialize, Deserialize)]
struct SystemFile {
    group: String,
    rep: RepSpec,
    a: Vec<Vec<f64>>,
    sigma: f64,
    spectral_radius_target: f64,
    constraints: Vec<Vec<f64>>,
    offsets: Vec<f64>,
}

pub fn explicit_spec(rep: &Representation) -> RepSpec {
    RepSpec::Explicit {
        matrices: rep.matrices().iter().map(|m| m.transpose().iter().copied().collect()).collect(),
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_row_major(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch {
            expected: ncols,
            got: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// The lexicographically largest point of the orbit of `x` and the element
/// that produces it (smallest id among ties).
pub fn orbit_representative(x: &DVector<f64>, rep: &Representation) -> Result<(usize, DVector<f64>)> {
    if x.len() != rep.dim() {
        return Err(Error::DimensionMismatch {
            expected: rep.dim(),
            got: x.len(),
        });
    }
    let mut best_g = rep.group().identity();
    let mut best = x.clone();
    for g in rep.group().elements() {
        let y = rep.act(g, x);
        let greater = y
            .iter()
            .zip(best.iter())
            .find(|(a, b)| a != b)
            .is_some_and(|(a, b)| a > b);
        if greater {
            best_g = g;
            best = y;
        }
    }
    Ok((best_g, best))
}

/// Moves each trajectory onto the canonical copy of its initial state and
/// returns `ρ(g)·T` for every group element, grouped by trajectory.
///
/// Each output is an exact rollout of an equivariant system under the
/// transported noise `ρ(g)ξ_t`, so the copies differ only by the symmetry.
pub fn orbit_copies(trajectories: &[&DMatrix<f64>], rep: &Representation) -> Result<Vec<DMatrix<f64>>> {
    let mut out = Vec::with_capacity(trajectories.len() * rep.group().order());
    for t in trajectories {
        if t.ncols() != rep.dim() {
            return Err(Error::DimensionMismatch {
                expected: rep.dim(),
                got: t.ncols(),
            });
        }
        let (g0, _) = orbit_representative(&t.row(0).transpose(), rep)?;
        let base = *t * rep.matrix(g0).transpose();
        for g in rep.group().elements() {
            out.push(&base * rep.matrix(g).transpose());
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSeeds {
    pub init: u64,
    pub noise: u64,
}

#[derive(Clone, Debug)]
pub struct TrajectoryDataset {
    /// Each trajectory has `horizon + 1` rows and `dim` columns.
    pub trajectories: Vec<DMatrix<f64>>,
    pub splits: Vec<Split>,
    pub rep: Representation,
    pub dt: f64,
    pub system_fingerprint: String,
    pub seeds: Option<DatasetSeeds>,
}

/// Per-trajectory noise key.
pub fn trajectory_noise_seed(base: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index as u64);
    rng.random()
}

fn draw_feasible(
    rng: &mut ChaCha8Rng,
    system: &SymmetricLinearSystem,
    init_box: (f64, f64),
) -> Result<DVector<f64>> {
    for _ in 0..MAX_INIT_DRAWS {
        let x = DVector::from_fn(system.dim(), |_, _| rng.random_range(init_box.0..init_box.1));
        if system.constraints.is_feasible(&x) {
            return Ok(x);
        }
    }
    Err(Error::InfeasibleBox(MAX_INIT_DRAWS))
}

/// Training trajectories start on canonical orbit representatives; test
/// trajectories start anywhere in the box. The last 10% of training
/// trajectories (rounded) are tagged validation.
pub fn generate_dataset(
    system: &SymmetricLinearSystem,
    n_train: usize,
    n_test: usize,
    horizon: usize,
    init_box: (f64, f64),
    seeds: DatasetSeeds,
) -> Result<TrajectoryDataset> {
    if n_train == 0 || horizon == 0 {
        return Err(Error::Invalid("training count and horizon must be positive".into()));
    }
    if !(init_box.0 < init_box.1) {
        return Err(Error::Invalid(format!("empty init box {init_box:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.init);
    let mut inits = Vec::with_capacity(n_train + n_test);
    for i in 0..n_train + n_test {
        let x = draw_feasible(&mut rng, system, init_box)?;
        if i < n_train {
            inits.push(orbit_representative(&x, &system.rep)?.1);
        } else {
            inits.push(x);
        }
    }
    let trajectories = inits
        .iter()
        .enumerate()
        .map(|(i, x0)| system.rollout(x0, horizon, trajectory_noise_seed(seeds.noise, i)))
        .collect::<Result<Vec<_>>>()?;
    let n_val = (n_train as f64 * 0.1).round() as usize;
    let splits = (0..n_train + n_test)
        .map(|i| {
            if i >= n_train {
                Split::Test
            } else if i >= n_train - n_val {
                Split::Val
            } else {
                Split::Train
            }
        })
        .collect();
    Ok(TrajectoryDataset {
        trajectories,
        splits,
        rep: system.rep.clone(),
        dt: 1.0,
        system_fingerprint: system.fingerprint(),
        seeds: Some(seeds),
    })
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    system_fingerprint: String,
    group: String,
    rep: RepSpec,
    dim: usize,
    horizon: usize,
    dt: f64,
    counts: Counts,
    seeds: Option<DatasetSeeds>,
    splits: Vec<Split>,
}

#[derive(Serialize, Deserialize)]
struct Counts {
    train: usize,
    val: usize,
    test: usize,
}

fn traj_file(i: usize) -> String {
    format!("traj_{i:05}.csv")
}

impl TrajectoryDataset {
    pub fn dim(&self) -> usize {
        self.rep.dim()
    }

    /// Number of steps (one less than the number of rows).
    pub fn horizon(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.nrows() - 1)
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.splits.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn select(&self, split: Split) -> Vec<&DMatrix<f64>> {
        self.indices(split).into_iter().map(|i| &self.trajectories[i]).collect()
    }

    fn validate(&self) -> Result<()> {
        let rows = self.horizon() + 1;
        for t in &self.trajectories {
            if t.nrows() != rows || t.ncols() != self.dim() {
                return Err(Error::Invalid("trajectories must share length and width".into()));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid("non-finite sample in trajectory".into()));
            }
        }
        if self.splits.len() != self.trajectories.len() {
            return Err(Error::DimensionMismatch {
                expected: self.trajectories.len(),
                got: self.splits.len(),
            });
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir)?;
        let count = |s| self.splits.iter().filter(|&&x| x == s).count();
        let manifest = Manifest {
            system_fingerprint: self.system_fingerprint.clone(),
            group: self.rep.group().name(),
            rep: explicit_spec(&self.rep),
            dim: self.dim(),
            horizon: self.horizon(),
            dt: self.dt,
            counts: Counts {
                train: count(Split::Train),
                val: count(Split::Val),
                test: count(Split::Test),
            },
            seeds: self.seeds,
            splits: self.splits.clone(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((0..self.dim()).map(|j| format!("x{j}")))
            .collect();
        let header = header.join(",");
        for (i, t) in self.trajectories.iter().enumerate() {
            let mut text = String::with_capacity(t.len() * 24);
            text.push_str(&header);
            text.push('\n');
            for (r, row) in t.row_iter().enumerate() {
                text.push_str(&r.to_string());
                for v in row.iter() {
                    text.push(',');
                    text.push_str(&fmt17(*v));
                }
                text.push('\n');
            }
            fs::write(dir.join(traj_file(i)), text)?;
        }
        Ok(())
    }

    /// Reads a dataset directory; the representation comes from the manifest.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let group = Arc::new(FiniteGroup::parse(&manifest.group)?);
        let rep = manifest.rep.build(&group)?;
        Self::load_with(dir, manifest, rep)
    }

    /// Reads a directory in the dataset layout with a caller-supplied
    /// representation, e.g. for externally recorded trajectories.
    pub fn import(dir: &Path, rep: &Representation) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        Self::load_with(dir, manifest, rep.clone())
    }

    fn load_with(dir: &Path, manifest: Manifest, rep: Representation) -> Result<Self> {
        if rep.dim() != manifest.dim {
            return Err(Error::DimensionMismatch {
                expected: manifest.dim,
                got: rep.dim(),
            });
        }
        let trajectories = (0..manifest.splits.len())
            .map(|i| read_trajectory(&dir.join(traj_file(i)), manifest.dim))
            .collect::<Result<Vec<_>>>()?;
        let ds = TrajectoryDataset {
            trajectories,
            splits: manifest.splits,
            rep,
            dt: manifest.dt,
            system_fingerprint: manifest.system_fingerprint,
            seeds: manifest.seeds,
        };
        ds.validate()?;
        Ok(ds)
    }
}

fn read_trajectory(path: &Path, dim: usize) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Invalid(format!("{} is empty", path.display())))?;
    if header.split(',').count() != dim + 1 {
        return Err(Error::Invalid(format!("{}: header has wrong width", path.display())));
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(Error::Invalid(format!("{}: row {rows} has wrong width", path.display())));
        }
        for f in &fields[1..] {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| Error::Invalid(format!("{}: bad number {f:?}", path.display())))?;
            values.push(v);
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, dim, &values))
}
