//! Post-hoc analysis: block-tagged spectra, isotypic energy series,
//! prediction error, and plot files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::group::Representation;
use crate::harmonic::IsotypicBasis;
use crate::koopman::KoopmanModel;
use crate::linalg::{fmt17, try_eigenvalues};
use crate::sim::{orbit_representative, Split, TrajectoryDataset};
use crate::{Error, Result};

type C64 = Complex<f64>;

const EIGVEC_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSpectrum {
    pub label: String,
    /// `(re, im)` pairs; conjugate pairs are listed together.
    pub eigenvalues: Vec<(f64, f64)>,
    /// Unit eigenvectors in the operator's coordinates, `(re, im)` entries.
    pub eigenvectors: Vec<Vec<(f64, f64)>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub blocks: Vec<BlockSpectrum>,
    pub spectral_radius: f64,
    /// `max ‖Kρ(g)v − λρ(g)v‖ / ‖v‖` over eigenpairs and group elements,
    /// when a representation is known.
    pub orbit_residual: Option<f64>,
}

impl SpectrumReport {
    pub fn eigenvalues(&self) -> Vec<C64> {
        self.blocks
            .iter()
            .flat_map(|b| b.eigenvalues.iter().map(|&(re, im)| C64::new(re, im)))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let s = m.clone().singular_values();
    let max = s.max();
    let min = s.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Eigenvalues sorted by `(re, im)` descending magnitude-independent order,
/// with conjugate pairs adjacent (positive imaginary part first).
fn block_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<C64>> {
    let mut ev = try_eigenvalues(m).ok_or(Error::Eigensolver {
        condition: condition_estimate(m),
    })?;
    ev.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    Ok(ev)
}

/// Unit eigenvector for `lambda` by shifted inverse iteration.
fn eigenvector(m: &DMatrix<f64>, lambda: C64) -> Result<DVector<C64>> {
    let n = m.nrows();
    let mc: DMatrix<C64> = m.map(|v| C64::new(v, 0.0));
    let scale = 1.0 + m.amax();
    let shift = lambda + C64::new(1e-10 * scale, 1e-10 * scale);
    let a = &mc - DMatrix::<C64>::identity(n, n) * shift;
    let lu = a.lu();
    let mut v = DVector::from_fn(n, |i, _| C64::new(1.0 + 0.1 * i as f64, 0.05 * (i % 3) as f64));
    for _ in 0..4 {
        let Some(w) = lu.solve(&v) else { break };
        let norm = w.norm();
        if !norm.is_finite() || norm == 0.0 {
            break;
        }
        v = w / C64::new(norm, 0.0);
    }
    let residual = (&mc * &v - &v * lambda).norm();
    if !(residual <= EIGVEC_TOL * scale) {
        return Err(Error::Eigensolver {
            condition: condition_estimate(m),
        });
    }
    Ok(v)
}

fn pairs(v: &DVector<C64>) -> Vec<(f64, f64)> {
    v.iter().map(|c| (c.re, c.im)).collect()
}

/// Spectrum of a square operator. With an isotypic basis the operator is
/// taken to act on isotypic coordinates and each isotypic block is
/// decomposed on its own; otherwise the whole matrix forms one "global"
/// block. `rep` (in the operator's coordinates) enables the orbit check.
pub fn spectrum(k: &DMatrix<f64>, basis: Option<&IsotypicBasis>, rep: Option<&Representation>) -> Result<SpectrumReport> {
    let n = k.nrows();
    if k.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: k.ncols() });
    }
    let ranges: Vec<(String, std::ops::Range<usize>)> = match basis {
        Some(b) => {
            if b.dim() != n {
                return Err(Error::DimensionMismatch { expected: b.dim(), got: n });
            }
            b.blocks().iter().map(|blk| (blk.label().to_string(), blk.range())).collect()
        }
        None => vec![("global".to_string(), 0..n)],
    };
    let mut blocks = Vec::with_capacity(ranges.len());
    let mut orbit: Option<f64> = rep.map(|_| 0.0);
    let mut radius: f64 = 0.0;
    for (label, r) in ranges {
        let sub = k.view((r.start, r.start), (r.len(), r.len())).into_owned();
        let ev = block_eigenvalues(&sub)?;
        let mut vecs = Vec::with_capacity(ev.len());
        for &lambda in &ev {
            radius = radius.max(lambda.norm());
            let local = eigenvector(&sub, lambda)?;
            let mut full = DVector::from_element(n, C64::new(0.0, 0.0));
            full.rows_mut(r.start, r.len()).copy_from(&local);
            if let (Some(rep), Some(worst)) = (rep, orbit.as_mut()) {
                let kc = k.map(|v| C64::new(v, 0.0));
                for g in rep.group().elements() {
                    let rg = rep.matrix(g).map(|v| C64::new(v, 0.0));
                    let gv = &rg * &full;
                    let res = (&kc * &gv - &gv * lambda).norm() / full.norm();
                    *worst = worst.max(res);
                }
            }
            vecs.push(pairs(&full));
        }
        blocks.push(BlockSpectrum {
            label,
            eigenvalues: ev.iter().map(|c| (c.re, c.im)).collect(),
            eigenvectors: vecs,
        });
    }
    Ok(SpectrumReport {
        blocks,
        spectral_radius: radius,
        orbit_residual: orbit,
    })
}

/// Spectrum of a fitted model's operator, block-wise when the model carries
/// an isotypic latent basis.
pub fn model_spectrum(model: &KoopmanModel) -> Result<SpectrumReport> {
    match model.latent_basis()? {
        Some(basis) => {
            let k = model.operator();
            // eEDMD operators are stored in the original coordinates
            let k_iso = if model.variant() == crate::koopman::Variant::Eedmd {
                basis.q() * k * basis.q().transpose()
            } else {
                k.clone()
            };
            let rep = basis.aligned_rep();
            spectrum(&k_iso, Some(&basis), Some(&rep))
        }
        None => spectrum(model.operator(), None, None),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyDecomposition {
    pub time: Vec<f64>,
    pub labels: Vec<String>,
    /// `absolute[i][t]`: energy of block `i` at step `t`.
    pub absolute: Vec<Vec<f64>>,
    /// Energy fractions of the total (0 where the total vanishes).
    pub fraction: Vec<Vec<f64>>,
    pub total: Vec<f64>,
}

/// Energy of each isotypic component of every state of `trajectory` (rows).
/// With `mass` the energy is `Σ_j mass_j (x^{(i)}_j)²` in the original
/// coordinates, and the per-block series need not sum to the total unless
/// the weighting is uniform.
pub fn isotypic_energy(trajectory: &DMatrix<f64>, basis: &IsotypicBasis, mass: Option<&DVector<f64>>, dt: f64) -> Result<EnergyDecomposition> {
    let m = basis.dim();
    if trajectory.ncols() != m {
        return Err(Error::DimensionMismatch { expected: m, got: trajectory.ncols() });
    }
    if let Some(w) = mass {
        if w.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: w.len() });
        }
    }
    let q = basis.q();
    let steps = trajectory.nrows();
    let blocks = basis.blocks();
    let mut absolute = vec![vec![0.0; steps]; blocks.len()];
    let mut total = vec![0.0; steps];
    for t in 0..steps {
        let x = trajectory.row(t).transpose();
        let coords = q * &x;
        for (i, b) in blocks.iter().enumerate() {
            let c = coords.rows(b.offset, b.size());
            absolute[i][t] = match mass {
                None => c.norm_squared(),
                Some(w) => {
                    let proj = q.rows(b.offset, b.size()).transpose() * c;
                    proj.iter().zip(w.iter()).map(|(p, wj)| wj * p * p).sum()
                }
            };
        }
        total[t] = match mass {
            None => x.norm_squared(),
            Some(w) => x.iter().zip(w.iter()).map(|(p, wj)| wj * p * p).sum(),
        };
    }
    let fraction = absolute
        .iter()
        .map(|series| {
            series
                .iter()
                .zip(&total)
                .map(|(e, tot)| if *tot > 0.0 { e / tot } else { 0.0 })
                .collect()
        })
        .collect();
    Ok(EnergyDecomposition {
        time: (0..steps).map(|t| t as f64 * dt).collect(),
        labels: blocks.iter().map(|b| b.label().to_string()).collect(),
        absolute,
        fraction,
        total,
    })
}

impl EnergyDecomposition {
    /// Columns `t,total,<label>,...,<label>_fraction,...`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,total");
        for l in &self.labels {
            write!(s, ",{l}").unwrap();
        }
        for l in &self.labels {
            write!(s, ",{l}_fraction").unwrap();
        }
        s.push('\n');
        for t in 0..self.time.len() {
            write!(s, "{},{}", fmt17(self.time[t]), fmt17(self.total[t])).unwrap();
            for series in self.absolute.iter().chain(&self.fraction) {
                write!(s, ",{}", fmt17(series[t])).unwrap();
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CopyError {
    /// Group element mapping the initial state to its orbit representative.
    pub g_index: usize,
    pub count: usize,
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseReport {
    pub horizon: usize,
    pub trajectories: usize,
    /// Mean over initial states of `‖x̂_h − x_h‖²`, `h = 1..=H`.
    pub per_horizon: Vec<f64>,
    /// Mean over initial states of `Σ_h ‖x̂_h − x_h‖²`.
    pub aggregate: f64,
    /// Aggregate restricted to initial states in each quotient copy.
    pub per_copy: Vec<CopyError>,
}

impl MseReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("h,mse\n");
        for (h, v) in self.per_horizon.iter().enumerate() {
            writeln!(s, "{},{}", h + 1, fmt17(*v)).unwrap();
        }
        s
    }

    pub fn per_copy_csv(&self) -> String {
        let mut s = String::from("g_index,count,mse\n");
        for c in &self.per_copy {
            writeln!(s, "{},{},{}", c.g_index, c.count, fmt17(c.mse)).unwrap();
        }
        s
    }
}

/// Prediction error of `model` from the first state of each trajectory.
pub fn prediction_mse(model: &KoopmanModel, trajectories: &[&DMatrix<f64>], rep: &Representation, horizon: usize) -> Result<MseReport> {
    if trajectories.is_empty() {
        return Err(Error::Invalid("no trajectories to evaluate".into()));
    }
    if let Some(t) = trajectories.iter().find(|t| t.nrows() < horizon + 1) {
        return Err(Error::Invalid(format!(
            "horizon {horizon} exceeds trajectory length {}",
            t.nrows()
        )));
    }
    let m = rep.dim();
    let x0 = DMatrix::from_columns(&trajectories.iter().map(|t| t.row(0).transpose()).collect::<Vec<_>>());
    if x0.nrows() != m {
        return Err(Error::DimensionMismatch { expected: m, got: x0.nrows() });
    }
    let preds = model.predict_batch(&x0, horizon)?;
    let n = trajectories.len();
    let mut per_horizon = vec![0.0; horizon];
    let mut sums = Vec::with_capacity(n);
    for (t, p) in trajectories.iter().zip(&preds) {
        let mut s = 0.0;
        for h in 0..horizon {
            let e = (p.row(h) - t.row(h + 1)).norm_squared();
            per_horizon[h] += e;
            s += e;
        }
        sums.push(s);
    }
    per_horizon.iter_mut().for_each(|v| *v /= n as f64);
    let order = rep.group().order();
    let mut acc = vec![(0usize, 0.0); order];
    for (t, s) in trajectories.iter().zip(&sums) {
        let (g, _) = orbit_representative(&t.row(0).transpose(), rep)?;
        acc[g].0 += 1;
        acc[g].1 += s;
    }
    let per_copy = acc
        .into_iter()
        .enumerate()
        .filter(|(_, (c, _))| *c > 0)
        .map(|(g, (count, total))| CopyError {
            g_index: g,
            count,
            mse: total / count as f64,
        })
        .collect();
    Ok(MseReport {
        horizon,
        trajectories: n,
        per_horizon,
        aggregate: sums.iter().sum::<f64>() / n as f64,
        per_copy,
    })
}

/// [`prediction_mse`] over one split of a dataset.
pub fn dataset_mse(model: &KoopmanModel, ds: &TrajectoryDataset, split: Split, horizon: usize) -> Result<MseReport> {
    prediction_mse(model, &ds.select(split), &ds.rep, horizon)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlotOptions {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 170.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn axis_value(v: f64, log: bool) -> Option<f64> {
    if log {
        (v > 0.0).then(|| v.log10())
    } else {
        v.is_finite().then_some(v)
    }
}

pub fn plot_csv(series: &[Series]) -> String {
    let mut s = String::from("series,x,y\n");
    for se in series {
        for (x, y) in &se.points {
            writeln!(s, "{},{},{}", se.name, fmt17(*x), fmt17(*y)).unwrap();
        }
    }
    s
}

pub fn plot_svg(series: &[Series], opts: &PlotOptions) -> String {
    let mapped: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .filter_map(|&(x, y)| Some((axis_value(x, opts.log_x)?, axis_value(y, opts.log_y)?)))
                .collect()
        })
        .collect();
    let all = mapped.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let px = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| MARGIN_T + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="800" height="500" viewBox="0 0 800 500">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="800" height="500" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    let tick = |v: f64, log: bool| if log { format!("1e{v:.1}") } else { format!("{v:.3e}") };
    for (v, anchor_x, anchor_y) in [(x0, px(x0), HEIGHT - MARGIN_B + 18.0), (x1, px(x1), HEIGHT - MARGIN_B + 18.0)] {
        writeln!(
            s,
            r#"<text x="{anchor_x:.2}" y="{anchor_y:.2}" font-size="11" text-anchor="middle">{}</text>"#,
            tick(v, opts.log_x)
        )
        .unwrap();
    }
    for v in [y0, y1] {
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"#,
            MARGIN_L - 6.0,
            py(v) + 4.0,
            tick(v, opts.log_y)
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="400" y="24" font-size="15" text-anchor="middle">{}</text>"#,
        escape(&opts.title)
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{:.2}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
        MARGIN_L + pw / 2.0,
        HEIGHT - 12.0,
        escape(&opts.x_label)
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="16" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        MARGIN_T + ph / 2.0,
        MARGIN_T + ph / 2.0,
        escape(&opts.y_label)
    )
    .unwrap();
    for (i, (se, pts)) in series.iter().zip(&mapped).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            coords.join(" ")
        )
        .unwrap();
        let ly = MARGIN_T + 16.0 * i as f64 + 10.0;
        let lx = WIDTH - MARGIN_R + 12.0;
        writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 18.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#,
            lx + 24.0,
            ly + 4.0,
            escape(&se.name)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `<stem>.csv` and `<stem>.svg`; returns both paths.
pub fn emit_plot_data(series: &[Series], stem: &Path, opts: &PlotOptions) -> Result<(PathBuf, PathBuf)> {
    if series.is_empty() {
        return Err(Error::Invalid("no series to plot".into()));
    }
    if let Some(s) = series.iter().find(|s| s.name.contains(',') || s.name.contains('\n')) {
        return Err(Error::Invalid(format!("series name {:?} cannot be written to CSV", s.name)));
    }
    let csv = stem.with_extension("csv");
    let svg = stem.with_extension("svg");
    fs::write(&csv, plot_csv(series))?;
    fs::write(&svg, plot_svg(series, opts))?;
    Ok((csv, svg))
}

/// Reads a long-format `series,x,y` file; series keep first-seen order.
pub fn read_plot_csv(path: &Path) -> Result<Vec<Series>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("series,x,y") {
        return Err(Error::Invalid(format!("{}: expected header series,x,y", path.display())));
    }
    let mut out: Vec<Series> = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let mut parts = line.rsplitn(3, ',');
        let (Some(y), Some(x), Some(name)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Invalid(format!("{}: malformed row {line:?}", path.display())));
        };
        let parse = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::Invalid(format!("{}: bad number {v:?}", path.display())))
        };
        let p = (parse(x)?, parse(y)?);
        match out.iter_mut().find(|s| s.name == name) {
            Some(s) => s.points.push(p),
            None => out.push(Series {
                name: name.to_string(),
                points: vec![p],
            }),
        }
    }
    Ok(out)
}
