//! Feed-forward networks with exact reverse-mode gradients.
//!
//! Networks act on matrices whose columns are samples; gradients returned by
//! `backward` are summed over the columns. [`EquivariantNet`] parameterizes
//! every weight matrix in a basis of equivariant maps between permutation
//! representations, so equivariance holds for any parameter values.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use base64::Engine;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::equiv::{hom_basis, CommutantBasis};
use crate::group::{irreps_real, Representation};
use crate::harmonic::character_projector;
use crate::linalg::{count_eigenvalues_above, pivoted_orthonormal};
use crate::{Error, Result};

static SNAPSHOT: AtomicU64 = AtomicU64::new(1);

fn next_snapshot() -> u64 {
    SNAPSHOT.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, m: &mut DMatrix<f64>) {
        if self == Activation::Tanh {
            m.apply(|v| *v = v.tanh());
        }
    }
}

/// Intermediates of one forward pass, tied to the parameter snapshot.
#[derive(Clone, Debug)]
pub struct Cache {
    snapshot: u64,
    /// Input to each layer (after any input transform).
    inputs: Vec<DMatrix<f64>>,
    /// Post-activation output of each layer (before any output transform).
    outputs: Vec<DMatrix<f64>>,
}

struct Gradients {
    dw: Vec<DMatrix<f64>>,
    db: Vec<DVector<f64>>,
}

fn forward_layers<'a>(
    layers: impl Iterator<Item = (&'a DMatrix<f64>, &'a DVector<f64>, Activation)>,
    x: DMatrix<f64>,
) -> (DMatrix<f64>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    let mut h = x;
    for (w, b, act) in layers {
        let mut y = w * &h;
        for mut col in y.column_iter_mut() {
            col += b;
        }
        act.apply(&mut y);
        inputs.push(h);
        outputs.push(y.clone());
        h = y;
    }
    (h, inputs, outputs)
}

fn backward_layers(
    layers: &[(&DMatrix<f64>, Activation)],
    cache: &Cache,
    cotangent: &DMatrix<f64>,
) -> (Gradients, DMatrix<f64>) {
    let n = layers.len();
    let mut dw = vec![DMatrix::zeros(0, 0); n];
    let mut db = vec![DVector::zeros(0); n];
    let mut delta = cotangent.clone();
    for i in (0..n).rev() {
        let (w, act) = layers[i];
        if act == Activation::Tanh {
            delta.zip_apply(&cache.outputs[i], |d, y| *d *= 1.0 - y * y);
        }
        dw[i] = &delta * cache.inputs[i].transpose();
        db[i] = delta.column_sum();
        delta = w.transpose() * &delta;
    }
    (Gradients { dw, db }, delta)
}

/// Common interface of the network types.
pub trait Network {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    fn num_params(&self) -> usize;
    /// Flat parameters in declaration order.
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, params: &[f64]) -> Result<()>;
    /// Columns of `x` are samples.
    fn forward(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Cache)>;
    /// Parameter gradients (summed over samples) and the input cotangent.
    fn backward(&self, cache: &Cache, cotangent: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)>;

    fn forward_vec(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let m = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
        let (y, _) = self.forward(&m)?;
        Ok(y.column(0).into_owned())
    }
}

fn check_input(expected: usize, x: &DMatrix<f64>) -> Result<()> {
    if x.nrows() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: x.nrows(),
        });
    }
    Ok(())
}

fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-a..a))
}

#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

#[derive(Clone, Debug)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
    snapshot: u64,
}

impl DenseNet {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Invalid("network needs at least one layer".into()));
        }
        for l in &layers {
            if l.bias.len() != l.weight.nrows() {
                return Err(Error::DimensionMismatch {
                    expected: l.weight.nrows(),
                    got: l.bias.len(),
                });
            }
        }
        for pair in layers.windows(2) {
            if pair[1].weight.ncols() != pair[0].weight.nrows() {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].weight.nrows(),
                    got: pair[1].weight.ncols(),
                });
            }
        }
        Ok(DenseNet {
            layers,
            snapshot: next_snapshot(),
        })
    }

    /// Glorot-uniform weights, zero biases; tanh on all but the last layer.
    pub fn new(widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        Self::with_output_activation(widths, Activation::Identity, rng)
    }

    pub fn with_output_activation(widths: &[usize], last: Activation, rng: &mut impl Rng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Invalid("need input and output widths".into()));
        }
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| DenseLayer {
                weight: glorot(rng, widths[i + 1], widths[i]),
                bias: DVector::zeros(widths[i + 1]),
                activation: if i + 1 == n { last } else { Activation::Tanh },
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }
}

impl Network for DenseNet {
    fn in_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.nrows()
    }

    fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Per layer: weight row-major, then bias.
    fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            p.extend(l.weight.transpose().iter());
            p.extend(l.bias.iter());
        }
        p
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                got: params.len(),
            });
        }
        let mut o = 0;
        for l in &mut self.layers {
            let (r, c) = l.weight.shape();
            l.weight = DMatrix::from_row_slice(r, c, &params[o..o + r * c]);
            o += r * c;
            l.bias.copy_from_slice(&params[o..o + r]);
            o += r;
        }
        self.snapshot = next_snapshot();
        Ok(())
    }

    fn forward(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Cache)> {
        check_input(self.in_dim(), x)?;
        let (y, inputs, outputs) = forward_layers(
            self.layers.iter().map(|l| (&l.weight, &l.bias, l.activation)),
            x.clone(),
        );
        Ok((
            y,
            Cache {
                snapshot: self.snapshot,
                inputs,
                outputs,
            },
        ))
    }

    fn backward(&self, cache: &Cache, cotangent: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
        if cache.snapshot != self.snapshot {
            return Err(Error::StaleCache);
        }
        check_input(self.out_dim(), cotangent)?;
        let layers: Vec<_> = self.layers.iter().map(|l| (&l.weight, l.activation)).collect();
        let (g, dx) = backward_layers(&layers, cache, cotangent);
        let mut flat = Vec::with_capacity(self.num_params());
        for (dw, db) in g.dw.iter().zip(&g.db) {
            flat.extend(dw.transpose().iter());
            flat.extend(db.iter());
        }
        Ok((flat, dx))
    }
}

/// Layer whose weight lives in the span of a hom-space basis and whose bias
/// lives in the trivial isotypic subspace of the output representation.
#[derive(Clone, Debug)]
pub struct EquivariantLayer {
    basis: Arc<CommutantBasis>,
    theta: Vec<f64>,
    /// Orthonormal columns spanning the fixed subspace of the output rep.
    bias_basis: DMatrix<f64>,
    bias_coef: Vec<f64>,
    activation: Activation,
    weight: DMatrix<f64>,
    bias: DVector<f64>,
}

impl EquivariantLayer {
    fn new(rep_in: &Representation, rep_out: &Representation, activation: Activation, rng: &mut impl Rng) -> Result<Self> {
        let basis = Arc::new(hom_basis(rep_in, rep_out)?);
        let w0 = glorot(rng, rep_out.dim(), rep_in.dim());
        // projection onto the hom space, rescaled to the Frobenius norm of
        // the unconstrained draw so both network types start at equal scale
        let mut theta = basis.coordinates(&w0);
        let norm = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
        if norm > 0.0 {
            let s = w0.norm() / norm;
            theta.iter_mut().for_each(|t| *t *= s);
        }
        let bias_basis = fixed_subspace(rep_out)?;
        let bias_coef = vec![0.0; bias_basis.ncols()];
        let mut layer = EquivariantLayer {
            basis,
            theta,
            bias_basis,
            bias_coef,
            activation,
            weight: DMatrix::zeros(0, 0),
            bias: DVector::zeros(0),
        };
        layer.materialize();
        Ok(layer)
    }

    fn materialize(&mut self) {
        self.weight = self.basis.assemble(&self.theta).expect("theta length fixed");
        self.bias = &self.bias_basis * DVector::from_column_slice(&self.bias_coef);
    }

    fn num_params(&self) -> usize {
        self.theta.len() + self.bias_coef.len()
    }

    pub fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    pub fn basis(&self) -> &Arc<CommutantBasis> {
        &self.basis
    }
}

/// Orthonormal basis (columns) of `{v : ρ(g)v = v ∀g}`.
pub fn fixed_subspace(rep: &Representation) -> Result<DMatrix<f64>> {
    let table = irreps_real(rep.group())?;
    let p = character_projector(rep, table.get(0))?;
    let rank = count_eigenvalues_above(&p, 0.5);
    let cols: Vec<DVector<f64>> = (0..rep.dim()).map(|j| p.column(j).into_owned()).collect();
    let basis = pivoted_orthonormal(&cols, &[], rank, 1e-9);
    if basis.is_empty() {
        return Ok(DMatrix::zeros(rep.dim(), 0));
    }
    Ok(DMatrix::from_columns(&basis))
}

/// Equivariant network between `rep_in` and `rep_out` through hidden layers
/// that carry copies of the regular representation (permutation matrices, so
/// pointwise tanh commutes with the group action).
///
/// Optional fixed orthogonal transforms are applied before the first layer
/// (`input_transform`) and after the last one (`output_transform`); the
/// equivariance then holds with respect to the correspondingly conjugated
/// representations.
#[derive(Clone, Debug)]
pub struct EquivariantNet {
    layers: Vec<EquivariantLayer>,
    input_transform: Option<DMatrix<f64>>,
    output_transform: Option<DMatrix<f64>>,
    snapshot: u64,
}

impl EquivariantNet {
    pub fn new(
        rep_in: &Representation,
        hidden_copies: &[usize],
        rep_out: &Representation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if !rep_in.same_group(rep_out) {
            return Err(Error::GroupMismatch);
        }
        let mut reps = vec![rep_in.clone()];
        for &c in hidden_copies {
            reps.push(crate::group::regular_copies(rep_in.group(), c)?);
        }
        reps.push(rep_out.clone());
        let n = reps.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { Activation::Identity } else { Activation::Tanh };
                EquivariantLayer::new(&reps[i], &reps[i + 1], act, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EquivariantNet {
            layers,
            input_transform: None,
            output_transform: None,
            snapshot: next_snapshot(),
        })
    }

    pub fn with_input_transform(mut self, t: DMatrix<f64>) -> Self {
        self.input_transform = Some(t);
        self
    }

    pub fn with_output_transform(mut self, t: DMatrix<f64>) -> Self {
        self.output_transform = Some(t);
        self
    }

    pub fn layers(&self) -> &[EquivariantLayer] {
        &self.layers
    }
}

impl Network for EquivariantNet {
    fn in_dim(&self) -> usize {
        match &self.input_transform {
            Some(t) => t.ncols(),
            None => self.layers[0].weight.ncols(),
        }
    }

    fn out_dim(&self) -> usize {
        match &self.output_transform {
            Some(t) => t.nrows(),
            None => self.layers.last().expect("non-empty").weight.nrows(),
        }
    }

    fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.num_params()).sum()
    }

    /// Per layer: weight coordinates θ, then bias coordinates.
    fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            p.extend_from_slice(&l.theta);
            p.extend_from_slice(&l.bias_coef);
        }
        p
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                got: params.len(),
            });
        }
        let mut o = 0;
        for l in &mut self.layers {
            let k = l.theta.len();
            l.theta.copy_from_slice(&params[o..o + k]);
            o += k;
            let k = l.bias_coef.len();
            l.bias_coef.copy_from_slice(&params[o..o + k]);
            o += k;
            l.materialize();
        }
        self.snapshot = next_snapshot();
        Ok(())
    }

    fn forward(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Cache)> {
        check_input(self.in_dim(), x)?;
        let x = match &self.input_transform {
            Some(t) => t * x,
            None => x.clone(),
        };
        let (y, inputs, outputs) = forward_layers(
            self.layers.iter().map(|l| (&l.weight, &l.bias, l.activation)),
            x,
        );
        let y = match &self.output_transform {
            Some(t) => t * y,
            None => y,
        };
        Ok((
            y,
            Cache {
                snapshot: self.snapshot,
                inputs,
                outputs,
            },
        ))
    }

    fn backward(&self, cache: &Cache, cotangent: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
        if cache.snapshot != self.snapshot {
            return Err(Error::StaleCache);
        }
        check_input(self.out_dim(), cotangent)?;
        let cot = match &self.output_transform {
            Some(t) => t.transpose() * cotangent,
            None => cotangent.clone(),
        };
        let layers: Vec<_> = self.layers.iter().map(|l| (&l.weight, l.activation)).collect();
        let (g, dx) = backward_layers(&layers, cache, &cot);
        let mut flat = Vec::with_capacity(self.num_params());
        for (l, (dw, db)) in self.layers.iter().zip(g.dw.iter().zip(&g.db)) {
            flat.extend(l.basis.coordinates(dw));
            flat.extend((l.bias_basis.transpose() * db).iter());
        }
        let dx = match &self.input_transform {
            Some(t) => t.transpose() * dx,
            None => dx,
        };
        Ok((flat, dx))
    }
}

/// Either network type, for storage in models.
#[derive(Clone, Debug)]
pub enum Net {
    Dense(DenseNet),
    Equivariant(EquivariantNet),
}

impl Network for Net {
    fn in_dim(&self) -> usize {
        match self {
            Net::Dense(n) => n.in_dim(),
            Net::Equivariant(n) => n.in_dim(),
        }
    }

    fn out_dim(&self) -> usize {
        match self {
            Net::Dense(n) => n.out_dim(),
            Net::Equivariant(n) => n.out_dim(),
        }
    }

    fn num_params(&self) -> usize {
        match self {
            Net::Dense(n) => n.num_params(),
            Net::Equivariant(n) => n.num_params(),
        }
    }

    fn params(&self) -> Vec<f64> {
        match self {
            Net::Dense(n) => n.params(),
            Net::Equivariant(n) => n.params(),
        }
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        match self {
            Net::Dense(n) => n.set_params(params),
            Net::Equivariant(n) => n.set_params(params),
        }
    }

    fn forward(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Cache)> {
        match self {
            Net::Dense(n) => n.forward(x),
            Net::Equivariant(n) => n.forward(x),
        }
    }

    fn backward(&self, cache: &Cache, cotangent: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
        match self {
            Net::Dense(n) => n.backward(cache, cotangent),
            Net::Equivariant(n) => n.backward(cache, cotangent),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.t
    }
}

/// One bias-corrected Adam update:
/// `θ ← θ − lr · m̂ / (√v̂ + ε)`.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, hyper: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            got: grads.len(),
        });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::TrainingDivergence {
            at: state.t,
            last_finite: None,
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        params[i] -= hyper.lr * mhat / (vhat.sqrt() + hyper.eps);
    }
    Ok(())
}

pub fn encode_params(params: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(params.len() * 8);
    for p in params {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub fn decode_params(text: &str) -> Result<Vec<f64>> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(text)
        .map_err(|e| Error::Invalid(format!("bad parameter payload: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Invalid("parameter payload is not a multiple of 8 bytes".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Network checkpoint: descriptive header plus the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub architecture: serde_json::Value,
    pub group: String,
    pub basis_fingerprint: Option<String>,
    pub seed: u64,
    /// Base64 of little-endian `f64` parameters in declaration order.
    pub params: String,
}

impl Checkpoint {
    pub fn new(architecture: serde_json::Value, group: String, basis_fingerprint: Option<String>, seed: u64, params: &[f64]) -> Self {
        Checkpoint {
            architecture,
            group,
            basis_fingerprint,
            seed,
            params: encode_params(params),
        }
    }

    pub fn params(&self) -> Result<Vec<f64>> {
        decode_params(&self.params)
    }
}
