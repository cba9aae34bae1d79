//! Equivariant linear maps.
//!
//! By Schur's lemma an equivariant map between two representations written in
//! isotypic bases only couples copies of the same irrep. For a real-type irrep
//! of dimension `d` the coupling between copy `k` of the input and copy `j` of
//! the output is a scalar multiple of `I_d`; for a complex-type 2-D irrep it is
//! `a·I₂ + b·J` with `J = [[0,−1],[1,0]]`. The bases here enumerate exactly
//! those generators, scaled to unit Frobenius norm.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::group::{irreps_real, FieldType, Representation};
use crate::harmonic::{block_model, isotypic_basis, IsotypicBasis, IsotypicBlock};
use crate::linalg::null_space_dim_from_gram;
use crate::{Error, Result};

const ALIGNMENT_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneratorKind {
    /// `E_{jk} ⊗ I_d`
    Identity,
    /// `E_{jk} ⊗ J` (complex-type irreps only)
    Rotation,
}

/// One basis element: irrep-type block, output copy, input copy, kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Generator {
    pub block: usize,
    pub out_copy: usize,
    pub in_copy: usize,
    pub kind: GeneratorKind,
}

/// Per irrep type shared by input and output.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockLayout {
    pub label: String,
    pub irrep_dim: usize,
    pub field_type: FieldType,
    pub out_multiplicity: usize,
    pub in_multiplicity: usize,
    pub out_offset: usize,
    pub in_offset: usize,
}

/// Frobenius-orthonormal basis of the equivariant maps between two
/// representations. When input and output coincide this is the commutant.
#[derive(Clone, Debug)]
pub struct CommutantBasis {
    in_dim: usize,
    out_dim: usize,
    layout: Vec<BlockLayout>,
    generators: Vec<Generator>,
    matrices: Vec<DMatrix<f64>>,
    /// `(Q_out, Q_in)` when the matrices are `Q_outᵀ G Q_in` for block generators `G`.
    frame: Option<(DMatrix<f64>, DMatrix<f64>)>,
    fingerprint: String,
}

fn rotation_j() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])
}

/// Generators in isotypic coordinates for the given shared-block layout.
fn iso_generators(layout: &[BlockLayout], out_dim: usize, in_dim: usize) -> (Vec<Generator>, Vec<DMatrix<f64>>) {
    let mut gens = Vec::new();
    let mut mats = Vec::new();
    for (bi, b) in layout.iter().enumerate() {
        let d = b.irrep_dim;
        let scale = 1.0 / (d as f64).sqrt();
        let eye = DMatrix::<f64>::identity(d, d) * scale;
        let j = rotation_j() * scale;
        for oc in 0..b.out_multiplicity {
            for ic in 0..b.in_multiplicity {
                let kinds: &[GeneratorKind] = match b.field_type {
                    FieldType::Real => &[GeneratorKind::Identity],
                    FieldType::Complex => &[GeneratorKind::Identity, GeneratorKind::Rotation],
                };
                for &kind in kinds {
                    let mut m = DMatrix::zeros(out_dim, in_dim);
                    let unit = match kind {
                        GeneratorKind::Identity => &eye,
                        GeneratorKind::Rotation => &j,
                    };
                    m.view_mut((b.out_offset + oc * d, b.in_offset + ic * d), (d, d))
                        .copy_from(unit);
                    gens.push(Generator {
                        block: bi,
                        out_copy: oc,
                        in_copy: ic,
                        kind,
                    });
                    mats.push(m);
                }
            }
        }
    }
    (gens, mats)
}

fn fingerprint_of(in_dim: usize, out_dim: usize, layout: &[BlockLayout]) -> String {
    let mut text = format!("{out_dim}x{in_dim}");
    for b in layout {
        text.push_str(&format!(
            "|{}:{}:{:?}:{}@{}:{}@{}",
            b.label, b.irrep_dim, b.field_type, b.out_multiplicity, b.out_offset, b.in_multiplicity, b.in_offset
        ));
    }
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

fn alignment_residual(rep_iso: &Representation, blocks: &[IsotypicBlock]) -> f64 {
    let n = rep_iso.dim();
    rep_iso
        .group()
        .elements()
        .map(|g| (rep_iso.matrix(g) - block_model(blocks, g, n)).norm())
        .fold(0.0, f64::max)
}

/// Commutant of a representation already expressed in an isotypic basis with
/// block layout `blocks`. Off-block entries of every generator are exactly 0.
pub fn commutant_basis(rep_iso: &Representation, blocks: &[IsotypicBlock]) -> Result<CommutantBasis> {
    let n = rep_iso.dim();
    let total: usize = blocks.iter().map(|b| b.size()).sum();
    if total != n {
        return Err(Error::DimensionMismatch { expected: n, got: total });
    }
    let residual = alignment_residual(rep_iso, blocks);
    if residual > ALIGNMENT_TOL {
        return Err(Error::Alignment { residual });
    }
    let layout: Vec<BlockLayout> = blocks
        .iter()
        .map(|b| BlockLayout {
            label: b.label().to_string(),
            irrep_dim: b.irrep_dim(),
            field_type: b.field_type(),
            out_multiplicity: b.multiplicity,
            in_multiplicity: b.multiplicity,
            out_offset: b.offset,
            in_offset: b.offset,
        })
        .collect();
    let (generators, matrices) = iso_generators(&layout, n, n);
    Ok(CommutantBasis {
        in_dim: n,
        out_dim: n,
        fingerprint: fingerprint_of(n, n, &layout),
        layout,
        generators,
        matrices,
        frame: None,
    })
}

/// Commutant of `basis.source()` expressed in the isotypic coordinates.
pub fn commutant_of_basis(basis: &IsotypicBasis) -> Result<CommutantBasis> {
    commutant_basis(&basis.aligned_rep(), basis.blocks())
}

/// Basis of equivariant maps `rep_in → rep_out` in the original coordinates
/// of both representations (generators conjugated by the isotypic bases).
pub fn hom_basis(rep_in: &Representation, rep_out: &Representation) -> Result<CommutantBasis> {
    if !rep_in.same_group(rep_out) {
        return Err(Error::GroupMismatch);
    }
    let table = irreps_real(rep_in.group())?;
    let bin = isotypic_basis(rep_in, &table)?;
    let bout = isotypic_basis(rep_out, &table)?;
    Ok(hom_basis_from(&bin, &bout))
}

pub fn hom_basis_from(bin: &IsotypicBasis, bout: &IsotypicBasis) -> CommutantBasis {
    let mut layout = Vec::new();
    for bo in bout.blocks() {
        if let Some(bi) = bin.blocks().iter().find(|b| b.label() == bo.label()) {
            layout.push(BlockLayout {
                label: bo.label().to_string(),
                irrep_dim: bo.irrep_dim(),
                field_type: bo.field_type(),
                out_multiplicity: bo.multiplicity,
                in_multiplicity: bi.multiplicity,
                out_offset: bo.offset,
                in_offset: bi.offset,
            });
        }
    }
    let (n_in, n_out) = (bin.dim(), bout.dim());
    let (generators, iso) = iso_generators(&layout, n_out, n_in);
    let qo_t = bout.q().transpose();
    let matrices = iso.iter().map(|m| &qo_t * m * bin.q()).collect();
    let fingerprint = fingerprint_of(n_in, n_out, &layout);
    let fingerprint = hex::encode(
        &Sha256::digest(format!("{fingerprint}|{}|{}", bin.fingerprint(), bout.fingerprint()).as_bytes())[..8],
    );
    CommutantBasis {
        in_dim: n_in,
        out_dim: n_out,
        layout,
        generators,
        matrices,
        frame: Some((bout.q().clone(), bin.q().clone())),
        fingerprint,
    }
}

impl CommutantBasis {
    pub fn dimension(&self) -> usize {
        self.matrices.len()
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn layout(&self) -> &[BlockLayout] {
        &self.layout
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn assemble(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        if theta.len() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                got: theta.len(),
            });
        }
        let mut iso = DMatrix::zeros(self.out_dim, self.in_dim);
        for (t, g) in theta.iter().zip(&self.generators) {
            let (b, r, c, scale) = self.block_of(g);
            for k in 0..b.irrep_dim {
                match g.kind {
                    GeneratorKind::Identity => iso[(r + k, c + k)] += t * scale,
                    GeneratorKind::Rotation => {
                        iso[(r + 1 - k, c + k)] += if k == 0 { t * scale } else { -t * scale };
                    }
                }
            }
        }
        Ok(match &self.frame {
            Some((qo, qi)) => qo.transpose() * iso * qi,
            None => iso,
        })
    }

    /// Layout entry, top-left corner and scale of a generator's block.
    fn block_of(&self, g: &Generator) -> (&BlockLayout, usize, usize, f64) {
        let b = &self.layout[g.block];
        let d = b.irrep_dim;
        (b, b.out_offset + g.out_copy * d, b.in_offset + g.in_copy * d, 1.0 / (d as f64).sqrt())
    }

    /// Frobenius coordinates `⟨A, B_l⟩`. For `A` in the span this inverts
    /// [`CommutantBasis::assemble`]; otherwise it gives the orthogonal
    /// projection's coordinates. Also the chain rule through `assemble`.
    pub fn coordinates(&self, a: &DMatrix<f64>) -> Vec<f64> {
        let framed;
        let iso = match &self.frame {
            Some((qo, qi)) => {
                framed = qo * a * qi.transpose();
                &framed
            }
            None => a,
        };
        self.generators
            .iter()
            .map(|g| {
                let (b, r, c, scale) = self.block_of(g);
                match g.kind {
                    GeneratorKind::Identity => (0..b.irrep_dim).map(|k| iso[(r + k, c + k)]).sum::<f64>() * scale,
                    GeneratorKind::Rotation => (iso[(r + 1, c)] - iso[(r, c + 1)]) * scale,
                }
            })
            .collect()
    }
}

/// A map in the span of a [`CommutantBasis`], held by its coordinates.
#[derive(Clone, Debug)]
pub struct EquivariantLinearMap {
    basis: Arc<CommutantBasis>,
    theta: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MapFile {
    basis_fingerprint: String,
    theta: Vec<f64>,
}

impl EquivariantLinearMap {
    pub fn new(basis: Arc<CommutantBasis>, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != basis.dimension() {
            return Err(Error::DimensionMismatch {
                expected: basis.dimension(),
                got: theta.len(),
            });
        }
        Ok(EquivariantLinearMap { basis, theta })
    }

    pub fn zeros(basis: Arc<CommutantBasis>) -> Self {
        let theta = vec![0.0; basis.dimension()];
        EquivariantLinearMap { basis, theta }
    }

    /// Orthogonal projection of `a` onto the span of the basis.
    pub fn from_matrix(basis: Arc<CommutantBasis>, a: &DMatrix<f64>) -> Self {
        let theta = basis.coordinates(a);
        EquivariantLinearMap { basis, theta }
    }

    pub fn basis(&self) -> &Arc<CommutantBasis> {
        &self.basis
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn assemble(&self) -> DMatrix<f64> {
        self.basis.assemble(&self.theta).expect("length checked at construction")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&MapFile {
            basis_fingerprint: self.basis.fingerprint.clone(),
            theta: self.theta.clone(),
        })?)
    }

    pub fn from_json(text: &str, basis: Arc<CommutantBasis>) -> Result<Self> {
        let file: MapFile = serde_json::from_str(text)?;
        if file.basis_fingerprint != basis.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: basis.fingerprint.clone(),
                found: file.basis_fingerprint,
            });
        }
        Self::new(basis, file.theta)
    }
}

pub fn assemble(map: &EquivariantLinearMap) -> DMatrix<f64> {
    map.assemble()
}

fn check_square(a: &DMatrix<f64>, rep: &Representation) -> Result<()> {
    if a.nrows() != rep.dim() || a.ncols() != rep.dim() {
        return Err(Error::DimensionMismatch {
            expected: rep.dim(),
            got: if a.nrows() != rep.dim() { a.nrows() } else { a.ncols() },
        });
    }
    Ok(())
}

/// Group average `(1/|G|) Σ_g ρ(g) A ρ(g)ᵀ`: the Frobenius-orthogonal
/// projection onto the commutant.
pub fn equivariant_project(a: &DMatrix<f64>, rep: &Representation) -> Result<DMatrix<f64>> {
    check_square(a, rep)?;
    hom_project(a, rep, rep)
}

/// `(1/|G|) Σ_g ρ_out(g) A ρ_in(g)ᵀ`.
pub fn hom_project(a: &DMatrix<f64>, rep_in: &Representation, rep_out: &Representation) -> Result<DMatrix<f64>> {
    if !rep_in.same_group(rep_out) {
        return Err(Error::GroupMismatch);
    }
    if a.nrows() != rep_out.dim() || a.ncols() != rep_in.dim() {
        return Err(Error::DimensionMismatch {
            expected: rep_out.dim() * rep_in.dim(),
            got: a.nrows() * a.ncols(),
        });
    }
    let mut sum = DMatrix::zeros(a.nrows(), a.ncols());
    for g in rep_in.group().elements() {
        sum += rep_out.matrix(g) * a * rep_in.matrix(g).transpose();
    }
    Ok(sum / rep_in.group().order() as f64)
}

/// `max_g ‖ρ(g)A − Aρ(g)‖_F`.
pub fn equivariance_residual(a: &DMatrix<f64>, rep: &Representation) -> f64 {
    hom_residual(a, rep, rep)
}

/// `max_g ‖ρ_out(g)A − Aρ_in(g)‖_F`.
pub fn hom_residual(a: &DMatrix<f64>, rep_in: &Representation, rep_out: &Representation) -> f64 {
    rep_in
        .group()
        .elements()
        .map(|g| (rep_out.matrix(g) * a - a * rep_in.matrix(g)).norm())
        .fold(0.0, f64::max)
}

/// Dimension of `{T : ρ_b(g)T = Tρ_a(g) ∀g}` from the null space of the
/// vectorized commutation system `Σ_g (I⊗ρ_b(g) − ρ_a(g)ᵀ⊗I)`.
pub fn hom_space_dimension(rep_a: &Representation, rep_b: &Representation) -> Result<usize> {
    if !rep_a.same_group(rep_b) {
        return Err(Error::GroupMismatch);
    }
    let (na, nb) = (rep_a.dim(), rep_b.dim());
    let ia = DMatrix::<f64>::identity(na, na);
    let ib = DMatrix::<f64>::identity(nb, nb);
    let n = na * nb;
    let mut gram = DMatrix::zeros(n, n);
    for g in rep_a.group().elements() {
        let m = ia.kronecker(rep_b.matrix(g)) - rep_a.matrix(g).transpose().kronecker(&ib);
        gram += m.transpose() * &m;
    }
    Ok(null_space_dim_from_gram(&gram))
}

/// `Σ_i m_i(a)·m_i(b)·e_i` from projector-rank multiplicities.
pub fn hom_space_dimension_by_multiplicities(rep_a: &Representation, rep_b: &Representation) -> Result<usize> {
    if !rep_a.same_group(rep_b) {
        return Err(Error::GroupMismatch);
    }
    let table = irreps_real(rep_a.group())?;
    let mut total = 0;
    for irrep in table.irreps() {
        let ma = crate::harmonic::multiplicity(rep_a, irrep)?;
        let mb = crate::harmonic::multiplicity(rep_b, irrep)?;
        total += ma * mb * irrep.field_type().endomorphism_dim();
    }
    Ok(total)
}
