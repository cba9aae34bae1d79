//! Isotypic decomposition of representations.
//!
//! A representation `ρ` on `ℝⁿ` splits into mutually orthogonal isotypic
//! components, one per irrep type, each a direct sum of copies of that irrep.
//! [`isotypic_basis`] constructs an orthogonal `Q` whose rows span the
//! components block by block, aligned so that `Q ρ(g) Qᵀ` equals the direct
//! sum of the stored irrep matrices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::group::{same_group, FieldType, Irrep, IrrepTable, Representation};
use crate::linalg::{argmax_abs, count_eigenvalues_above, fix_sign, orthogonalize_against, pivoted_orthonormal};
use crate::{Error, Result};

/// Seeds whose residual norm falls below this are treated as exhausted.
const SEED_TOL: f64 = 1e-9;
/// Conjugation residual above which the decomposition is rejected.
const FAILURE_RESIDUAL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct IsotypicBlock {
    pub irrep: Irrep,
    pub multiplicity: usize,
    pub offset: usize,
}

impl IsotypicBlock {
    pub fn label(&self) -> &str {
        self.irrep.label()
    }

    pub fn irrep_dim(&self) -> usize {
        self.irrep.dim()
    }

    pub fn field_type(&self) -> FieldType {
        self.irrep.field_type()
    }

    pub fn size(&self) -> usize {
        self.irrep_dim() * self.multiplicity
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.size()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceReport {
    pub orthogonality: f64,
    pub conjugation: f64,
}

#[derive(Clone, Debug)]
pub struct IsotypicBasis {
    q: DMatrix<f64>,
    blocks: Vec<IsotypicBlock>,
    source: Representation,
    report: ToleranceReport,
}

/// `(d_i / (e_i |G|)) Σ_g χ_i(g) ρ(g)`: the orthogonal projector onto the
/// isotypic component of `irrep`, with `e_i = 2` for complex-type irreps whose
/// real character already covers the conjugate pair.
pub fn character_projector(rep: &Representation, irrep: &Irrep) -> Result<DMatrix<f64>> {
    if !rep.same_group(irrep.rep()) {
        return Err(Error::GroupMismatch);
    }
    let chi = irrep.character();
    let scale = irrep.dim() as f64
        / (irrep.field_type().endomorphism_dim() as f64 * rep.group().order() as f64);
    let p = group_sum(rep, |g| chi[g] * scale);
    Ok((&p + p.transpose()) * 0.5)
}

/// Matrix-unit operator `(d/|G|) Σ_g [ρ̄(g)]_{kl} ρ(g)`.
fn matrix_unit(rep: &Representation, irrep: &Irrep, k: usize, l: usize) -> DMatrix<f64> {
    let scale = irrep.dim() as f64 / rep.group().order() as f64;
    group_sum(rep, |g| irrep.matrix(g)[(k, l)] * scale)
}

fn group_sum(rep: &Representation, weight: impl Fn(usize) -> f64) -> DMatrix<f64> {
    let n = rep.dim();
    let mut p = DMatrix::zeros(n, n);
    for g in rep.group().elements() {
        let w = weight(g);
        if w != 0.0 {
            p += rep.matrix(g) * w;
        }
    }
    p
}

/// Multiplicity of `irrep` in `rep`, from the projector rank.
pub fn multiplicity(rep: &Representation, irrep: &Irrep) -> Result<usize> {
    let p = character_projector(rep, irrep)?;
    Ok(count_eigenvalues_above(&p, 0.5) / irrep.dim())
}

pub fn isotypic_basis(rep: &Representation, table: &IrrepTable) -> Result<IsotypicBasis> {
    if !same_group(rep.group(), table.group()) {
        return Err(Error::GroupMismatch);
    }
    let n = rep.dim();
    let mut rows: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut blocks = Vec::new();

    for irrep in table.irreps() {
        let d = irrep.dim();
        let proj = character_projector(rep, irrep)?;
        let rank = count_eigenvalues_above(&proj, 0.5);
        if rank % d != 0 {
            return Err(Error::DecompositionFailure {
                residual: (rank % d) as f64,
            });
        }
        let m = rank / d;
        if m == 0 {
            continue;
        }
        // Real type: seeds live in the range of the (0,0) matrix unit.
        // Complex type: that matrix unit is the full projector, so seeds are
        // drawn from the component and paired off one copy at a time.
        let seed_source = match irrep.field_type() {
            FieldType::Real => matrix_unit(rep, irrep, 0, 0),
            FieldType::Complex => proj.clone(),
        };
        let candidates: Vec<DVector<f64>> = (0..n).map(|j| seed_source.column(j).into_owned()).collect();
        let generators: Vec<DMatrix<f64>> = (1..d).map(|k| matrix_unit(rep, irrep, k, 0)).collect();

        let mut component: Vec<DVector<f64>> = Vec::with_capacity(m * d);
        let mut copies: Vec<Vec<DVector<f64>>> = Vec::with_capacity(m);
        for _ in 0..m {
            let mut seed = pivoted_orthonormal(&candidates, &component, 1, SEED_TOL)
                .pop()
                .ok_or(Error::DecompositionFailure { residual: 1.0 })?;
            fix_sign(&mut seed);
            let mut copy = vec![seed.clone()];
            for gen in &generators {
                let mut v = gen * &seed;
                orthogonalize_against(&mut v, &component);
                orthogonalize_against(&mut v, &copy);
                let norm = v.norm();
                if norm < SEED_TOL {
                    return Err(Error::DecompositionFailure { residual: 1.0 - norm });
                }
                copy.push(v / norm);
            }
            component.extend(copy.iter().cloned());
            copies.push(copy);
        }
        copies.sort_by_key(|c| argmax_abs(&c[0], 1e-12));
        blocks.push(IsotypicBlock {
            irrep: irrep.clone(),
            multiplicity: m,
            offset: rows.len(),
        });
        for copy in copies {
            rows.extend(copy);
        }
    }

    if rows.len() != n {
        return Err(Error::DecompositionFailure {
            residual: (n as f64 - rows.len() as f64).abs(),
        });
    }
    let mut q = DMatrix::zeros(n, n);
    for (i, r) in rows.iter().enumerate() {
        q.set_row(i, &r.transpose());
    }
    let report = tolerance_report(&q, &blocks, rep);
    if report.conjugation > FAILURE_RESIDUAL || report.orthogonality > FAILURE_RESIDUAL {
        return Err(Error::DecompositionFailure {
            residual: report.conjugation.max(report.orthogonality),
        });
    }
    Ok(IsotypicBasis {
        q,
        blocks,
        source: rep.clone(),
        report,
    })
}

/// `⊕_i ⊕_{j ≤ m_i} ρ̄_i(g)` for a block layout.
pub fn block_model(blocks: &[IsotypicBlock], g: usize, dim: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(dim, dim);
    for b in blocks {
        let d = b.irrep_dim();
        for j in 0..b.multiplicity {
            let o = b.offset + j * d;
            out.view_mut((o, o), (d, d)).copy_from(b.irrep.matrix(g));
        }
    }
    out
}

fn tolerance_report(q: &DMatrix<f64>, blocks: &[IsotypicBlock], rep: &Representation) -> ToleranceReport {
    let n = rep.dim();
    let orthogonality = crate::linalg::orthogonality_residual(q);
    let qt = q.transpose();
    let conjugation = rep
        .group()
        .elements()
        .map(|g| (q * rep.matrix(g) * &qt - block_model(blocks, g, n)).norm())
        .fold(0.0, f64::max);
    ToleranceReport {
        orthogonality,
        conjugation,
    }
}

impl IsotypicBasis {
    /// Rows are the new basis vectors expressed in the original coordinates.
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn blocks(&self) -> &[IsotypicBlock] {
        &self.blocks
    }

    pub fn source(&self) -> &Representation {
        &self.source
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn report(&self) -> ToleranceReport {
        self.report
    }

    /// Coordinates of `x` in the isotypic basis (`Q x`).
    pub fn coordinates(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q * x
    }

    /// The source representation expressed in the isotypic basis, with the
    /// exact irrep blocks substituted for the numerically conjugated ones.
    pub fn aligned_rep(&self) -> Representation {
        let n = self.dim();
        let matrices = self
            .source
            .group()
            .elements()
            .map(|g| block_model(&self.blocks, g, n))
            .collect();
        Representation::new_unchecked(self.source.group().clone(), matrices, format!("{}@iso", self.source.label()))
    }

    /// Stable identifier for the block layout.
    pub fn fingerprint(&self) -> String {
        layout_fingerprint(&self.source.group().name(), self.dim(), &self.blocks)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = BasisFile {
            group: self.source.group().name(),
            dim: self.dim(),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockEntry {
                    irrep: b.label().to_string(),
                    d: b.irrep_dim(),
                    m: b.multiplicity,
                    offset: b.offset,
                })
                .collect(),
            q: self.q.transpose().iter().copied().collect(),
            tolerance_report: self.report,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Reads a basis written by [`IsotypicBasis::to_json`] for `rep`, rejecting
    /// it if the recomputed residuals exceed ten times the recorded ones.
    pub fn from_json(text: &str, rep: &Representation) -> Result<Self> {
        let file: BasisFile = serde_json::from_str(text)?;
        if file.group != rep.group().name() {
            return Err(Error::GroupMismatch);
        }
        if file.dim != rep.dim() || file.q.len() != file.dim * file.dim {
            return Err(Error::DimensionMismatch {
                expected: rep.dim(),
                got: file.dim,
            });
        }
        let table = crate::group::irreps_real(rep.group())?;
        let mut blocks = Vec::new();
        let mut expected_offset = 0;
        for e in &file.blocks {
            let idx = table
                .index_of(&e.irrep)
                .ok_or_else(|| Error::InvariantViolation(format!("unknown irrep {}", e.irrep)))?;
            let irrep = table.get(idx).clone();
            if irrep.dim() != e.d || e.offset != expected_offset {
                return Err(Error::InvariantViolation(format!("inconsistent block {}", e.irrep)));
            }
            expected_offset += e.d * e.m;
            blocks.push(IsotypicBlock {
                irrep,
                multiplicity: e.m,
                offset: e.offset,
            });
        }
        if expected_offset != file.dim {
            return Err(Error::InvariantViolation("block sizes do not sum to dim".into()));
        }
        let q = DMatrix::from_row_slice(file.dim, file.dim, &file.q);
        let report = tolerance_report(&q, &blocks, rep);
        let recorded = file.tolerance_report;
        // Floor keeps exact (zero) recordings from rejecting rounding noise.
        let limit = |r: f64| 10.0 * r.max(1e-14);
        if report.orthogonality > limit(recorded.orthogonality) || report.conjugation > limit(recorded.conjugation) {
            return Err(Error::InvariantViolation(format!(
                "recomputed residuals {:e}/{:e} exceed recorded {:e}/{:e}",
                report.orthogonality, report.conjugation, recorded.orthogonality, recorded.conjugation
            )));
        }
        Ok(IsotypicBasis {
            q,
            blocks,
            source: rep.clone(),
            report,
        })
    }
}

pub fn layout_fingerprint(group: &str, dim: usize, blocks: &[IsotypicBlock]) -> String {
    let mut text = format!("{group}|{dim}");
    for b in blocks {
        text.push_str(&format!(
            "|{}:{}:{}:{}:{:?}",
            b.label(),
            b.irrep_dim(),
            b.multiplicity,
            b.offset,
            b.field_type()
        ));
    }
    let digest = Sha256::digest(text.as_bytes());
    hex::encode(&digest[..8])
}

#[derive(Serialize, Deserialize)]
struct BasisFile {
    group: String,
    dim: usize,
    blocks: Vec<BlockEntry>,
    q: Vec<f64>,
    tolerance_report: ToleranceReport,
}

#[derive(Serialize, Deserialize)]
struct BlockEntry {
    irrep: String,
    d: usize,
    m: usize,
    offset: usize,
}

/// Component of `x` in isotypic block `block_index`, in the original basis.
pub fn isotypic_project(x: &DVector<f64>, basis: &IsotypicBasis, block_index: usize) -> Result<DVector<f64>> {
    if x.len() != basis.dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            got: x.len(),
        });
    }
    let block = basis.blocks.get(block_index).ok_or(Error::BlockIndex {
        index: block_index,
        count: basis.blocks.len(),
    })?;
    let mut out = DVector::zeros(x.len());
    for r in block.range() {
        let row = basis.q.row(r);
        let c = row.dot(&x.transpose());
        out += row.transpose() * c;
    }
    Ok(out)
}

/// Whether `span(V)` is invariant under every `ρ(g)` up to `tol`, measured as
/// the largest Frobenius residual of `ρ(g)U` after projecting onto `span(V)`
/// (`U` an orthonormal basis of the span).
pub fn is_g_stable(subspace: &DMatrix<f64>, rep: &Representation, tol: f64) -> Result<bool> {
    if subspace.nrows() != rep.dim() {
        return Err(Error::DimensionMismatch {
            expected: rep.dim(),
            got: subspace.nrows(),
        });
    }
    let k = subspace.ncols();
    if k == 0 {
        return Err(Error::DegenerateSubspace);
    }
    let cols: Vec<DVector<f64>> = (0..k).map(|j| subspace.column(j).into_owned()).collect();
    let scale = cols.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let basis = pivoted_orthonormal(&cols, &[], k, 1e-10 * scale.max(f64::MIN_POSITIVE));
    if basis.len() < k {
        return Err(Error::DegenerateSubspace);
    }
    let u = DMatrix::from_columns(&basis);
    let proj = &u * u.transpose();
    let eye = DMatrix::<f64>::identity(rep.dim(), rep.dim());
    let residual = rep
        .group()
        .elements()
        .map(|g| ((&eye - &proj) * rep.matrix(g) * &u).norm())
        .fold(0.0, f64::max);
    Ok(residual <= tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{irreps_real, regular_representation, FiniteGroup};
    use std::sync::Arc;

    fn group(s: &str) -> Arc<FiniteGroup> {
        Arc::new(FiniteGroup::parse(s).unwrap())
    }

    #[test]
    fn c2_trivial_projector_is_averaging() {
        let g = group("C2");
        let rep = regular_representation(&g);
        let t = irreps_real(&g).unwrap();
        let p = character_projector(&rep, t.get(0)).unwrap();
        assert!((p - DMatrix::from_element(2, 2, 0.5)).norm() < 1e-15);
    }

    #[test]
    fn projectors_resolve_identity() {
        for name in ["C2", "C3", "C4", "C5", "C2xC2", "C2xC3", "C3xC3"] {
            let g = group(name);
            let rep = regular_representation(&g);
            let t = irreps_real(&g).unwrap();
            let mut sum = DMatrix::zeros(rep.dim(), rep.dim());
            for irrep in t.irreps() {
                sum += character_projector(&rep, irrep).unwrap();
            }
            assert!((sum - DMatrix::identity(rep.dim(), rep.dim())).norm() < 1e-12, "{name}");
        }
    }

    #[test]
    fn c3_rotation_projector_has_rank_two() {
        let g = group("C3");
        let rep = regular_representation(&g);
        let t = irreps_real(&g).unwrap();
        let p = character_projector(&rep, t.get(1)).unwrap();
        assert_eq!(count_eigenvalues_above(&p, 0.5), 2);
        assert!((&p * &p - &p).norm() < 1e-12);
    }

    #[test]
    fn c2_regular_basis_is_fourier() {
        let g = group("C2");
        let rep = regular_representation(&g);
        let basis = isotypic_basis(&rep, &irreps_real(&g).unwrap()).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let expected = DMatrix::from_row_slice(2, 2, &[s, s, s, -s]);
        assert!((basis.q() - expected).norm() < 1e-15);
        let layout: Vec<_> = basis.blocks().iter().map(|b| (b.label(), b.irrep_dim(), b.multiplicity)).collect();
        assert_eq!(layout, vec![("triv", 1, 1), ("sign", 1, 1)]);
    }

    #[test]
    fn c3_regular_conjugates_to_rotation() {
        let g = group("C3");
        let rep = regular_representation(&g);
        let basis = isotypic_basis(&rep, &irreps_real(&g).unwrap()).unwrap();
        let conj = basis.q() * rep.matrix(1) * basis.q().transpose();
        let (c, s) = ((2.0 * std::f64::consts::PI / 3.0).cos(), (2.0 * std::f64::consts::PI / 3.0).sin());
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c]);
        assert!((conj - expected).norm() < 1e-12);
    }

    #[test]
    fn decomposed_input_keeps_multiplicities() {
        let g = group("C4");
        let t = irreps_real(&g).unwrap();
        let rep = t.direct_sum(&[2, 0, 1]).unwrap();
        let basis = isotypic_basis(&rep, &t).unwrap();
        let m: Vec<_> = basis.blocks().iter().map(|b| (b.label().to_string(), b.multiplicity)).collect();
        assert_eq!(m, vec![("triv".to_string(), 2), ("rot1".to_string(), 1)]);
        assert!(basis.report().conjugation <= 1e-10);
    }

    #[test]
    fn project_c2_example() {
        let g = group("C2");
        let rep = regular_representation(&g);
        let basis = isotypic_basis(&rep, &irreps_real(&g).unwrap()).unwrap();
        let x = DVector::from_vec(vec![3.0, 1.0]);
        let a = isotypic_project(&x, &basis, 0).unwrap();
        let b = isotypic_project(&x, &basis, 1).unwrap();
        assert!((a - DVector::from_vec(vec![2.0, 2.0])).norm() < 1e-14);
        assert!((b - DVector::from_vec(vec![1.0, -1.0])).norm() < 1e-14);
        assert!(matches!(isotypic_project(&x, &basis, 2), Err(Error::BlockIndex { .. })));
    }

    #[test]
    fn g_stability() {
        let g = group("C3");
        let rep = regular_representation(&g);
        let basis = isotypic_basis(&rep, &irreps_real(&g).unwrap()).unwrap();
        assert!(is_g_stable(&DMatrix::identity(3, 3), &rep, 1e-10).unwrap());
        for b in basis.blocks() {
            let v = basis.q().rows(b.offset, b.size()).transpose();
            assert!(is_g_stable(&v, &rep, 1e-10).unwrap());
        }
        let v = DMatrix::from_column_slice(3, 1, &[0.3, -1.2, 0.5]);
        assert!(!is_g_stable(&v, &rep, 1e-6).unwrap());
        let ones = DMatrix::from_column_slice(3, 1, &[2.0, 2.0, 2.0]);
        assert!(is_g_stable(&ones, &rep, 1e-10).unwrap());
        let degenerate = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        assert!(matches!(is_g_stable(&degenerate, &rep, 1e-6), Err(Error::DegenerateSubspace)));
    }

    #[test]
    fn json_round_trip_and_tamper() {
        let g = group("C5");
        let rep = crate::group::regular_copies(&g, 2).unwrap();
        let basis = isotypic_basis(&rep, &irreps_real(&g).unwrap()).unwrap();
        let text = basis.to_json().unwrap();
        let back = IsotypicBasis::from_json(&text, &rep).unwrap();
        assert_eq!(back.q(), basis.q());
        assert_eq!(back.fingerprint(), basis.fingerprint());

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let q0 = v["q"][0].as_f64().unwrap();
        v["q"][0] = serde_json::json!(q0 + 1e-3);
        let tampered = serde_json::to_string(&v).unwrap();
        assert!(matches!(
            IsotypicBasis::from_json(&tampered, &rep),
            Err(Error::InvariantViolation(_))
        ));
    }
}
