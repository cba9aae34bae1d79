//! Finite symmetry groups and their orthogonal representations.
//!
//! Groups are abelian and assembled from cyclic factors by direct products.
//! Elements are dense ids `0..order` with `0` the identity; a product element
//! `(a, b)` has id `a·|B| + b`, so ids of an iterated product are mixed-radix
//! numbers with the first factor most significant.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_MAX_ORDER: usize = 64;

/// Tolerance for orthogonality and homomorphism residuals of representations.
pub const REP_TOL: f64 = 1e-10;

/// Structure of a group as a tree of cyclic factors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GroupDescriptor {
    Cyclic(usize),
    Product(Box<GroupDescriptor>, Box<GroupDescriptor>),
}

impl GroupDescriptor {
    pub fn order(&self) -> usize {
        match self {
            GroupDescriptor::Cyclic(n) => *n,
            GroupDescriptor::Product(a, b) => a.order() * b.order(),
        }
    }

    /// Cyclic factor orders, most significant first.
    pub fn factors(&self) -> Vec<usize> {
        match self {
            GroupDescriptor::Cyclic(n) => vec![*n],
            GroupDescriptor::Product(a, b) => {
                let mut f = a.factors();
                f.extend(b.factors());
                f
            }
        }
    }
}

impl fmt::Display for GroupDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.factors().iter().map(|n| format!("C{n}")).collect();
        f.write_str(&names.join("x"))
    }
}

impl FromStr for GroupDescriptor {
    type Err = Error;

    /// Grammar: `factor := "C" digits`, `product := factor ("x" factor)*`.
    /// Parentheses are accepted anywhere and ignored.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::BadDescriptor(s.to_string());
        let mut depth = 0i32;
        for c in s.chars() {
            match c {
                '(' => depth += 1,
                ')' => {
                    depth -= 1;
                    if depth < 0 {
                        return Err(bad());
                    }
                }
                _ => {}
            }
        }
        if depth != 0 {
            return Err(bad());
        }
        let flat: String = s
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '(' && *c != ')')
            .collect();
        let mut desc: Option<GroupDescriptor> = None;
        for part in flat.split('x') {
            let digits = part.strip_prefix('C').ok_or_else(bad)?;
            if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
                return Err(bad());
            }
            let n: usize = digits.parse().map_err(|_| bad())?;
            let factor = GroupDescriptor::Cyclic(n);
            desc = Some(match desc {
                None => factor,
                Some(d) => GroupDescriptor::Product(Box::new(d), Box::new(factor)),
            });
        }
        desc.ok_or_else(bad)
    }
}

#[derive(Clone, Debug)]
pub struct FiniteGroup {
    order: usize,
    compose: Vec<usize>,
    inverse: Vec<usize>,
    descriptor: Option<GroupDescriptor>,
}

impl PartialEq for FiniteGroup {
    fn eq(&self, other: &Self) -> bool {
        self.order == other.order && self.compose == other.compose
    }
}

impl FiniteGroup {
    pub fn cyclic(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidOrder(0));
        }
        let compose = (0..n * n).map(|k| (k / n + k % n) % n).collect();
        let inverse = (0..n).map(|g| (n - g) % n).collect();
        Ok(FiniteGroup {
            order: n,
            compose,
            inverse,
            descriptor: Some(GroupDescriptor::Cyclic(n)),
        })
    }

    pub fn direct_product(a: &FiniteGroup, b: &FiniteGroup) -> Result<Self> {
        Self::direct_product_with_limit(a, b, DEFAULT_MAX_ORDER)
    }

    pub fn direct_product_with_limit(a: &FiniteGroup, b: &FiniteGroup, max: usize) -> Result<Self> {
        let (na, nb) = (a.order, b.order);
        let order = na * nb;
        if order > max {
            return Err(Error::GroupTooLarge { order, max });
        }
        let mut compose = vec![0; order * order];
        for g in 0..order {
            for h in 0..order {
                let ga = a.compose(g / nb, h / nb);
                let gb = b.compose(g % nb, h % nb);
                compose[g * order + h] = ga * nb + gb;
            }
        }
        let inverse = (0..order)
            .map(|g| a.inverse(g / nb) * nb + b.inverse(g % nb))
            .collect();
        let descriptor = match (&a.descriptor, &b.descriptor) {
            (Some(da), Some(db)) => Some(GroupDescriptor::Product(
                Box::new(da.clone()),
                Box::new(db.clone()),
            )),
            _ => None,
        };
        Ok(FiniteGroup {
            order,
            compose,
            inverse,
            descriptor,
        })
    }

    pub fn from_descriptor(d: &GroupDescriptor) -> Result<Self> {
        Self::from_descriptor_with_limit(d, DEFAULT_MAX_ORDER)
    }

    pub fn from_descriptor_with_limit(d: &GroupDescriptor, max: usize) -> Result<Self> {
        match d {
            GroupDescriptor::Cyclic(n) => {
                if *n > max {
                    return Err(Error::GroupTooLarge { order: *n, max });
                }
                Self::cyclic(*n)
            }
            GroupDescriptor::Product(a, b) => {
                let a = Self::from_descriptor_with_limit(a, max)?;
                let b = Self::from_descriptor_with_limit(b, max)?;
                Self::direct_product_with_limit(&a, &b, max)
            }
        }
    }

    /// Parse a descriptor such as `"C5"`, `"C2xC2"` or `"(C2xC2)xC2"`.
    pub fn parse(s: &str) -> Result<Self> {
        Self::from_descriptor(&s.parse()?)
    }

    /// Group from an explicit composition table (row-major `order × order`).
    /// Such groups carry no cyclic structure and have no irrep table.
    pub fn from_table(order: usize, compose: Vec<usize>) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidOrder(0));
        }
        if compose.len() != order * order || compose.iter().any(|&g| g >= order) {
            return Err(Error::Invalid("malformed composition table".into()));
        }
        let mut inverse = vec![usize::MAX; order];
        for g in 0..order {
            for h in 0..order {
                if compose[g * order + h] == 0 {
                    inverse[g] = h;
                }
            }
        }
        let group = FiniteGroup {
            order,
            compose,
            inverse,
            descriptor: None,
        };
        group.check_axioms()?;
        Ok(group)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn identity(&self) -> usize {
        0
    }

    #[inline]
    pub fn compose(&self, g: usize, h: usize) -> usize {
        self.compose[g * self.order + h]
    }

    #[inline]
    pub fn inverse(&self, g: usize) -> usize {
        self.inverse[g]
    }

    pub fn descriptor(&self) -> Option<&GroupDescriptor> {
        self.descriptor.as_ref()
    }

    /// Descriptor string, or `"table<order>"` for groups built from a table.
    pub fn name(&self) -> String {
        match &self.descriptor {
            Some(d) => d.to_string(),
            None => format!("table{}", self.order),
        }
    }

    pub fn elements(&self) -> std::ops::Range<usize> {
        0..self.order
    }

    pub fn element_order(&self, g: usize) -> usize {
        let mut k = 1;
        let mut x = g;
        while x != 0 {
            x = self.compose(x, g);
            k += 1;
        }
        k
    }

    pub fn is_abelian(&self) -> bool {
        (0..self.order).all(|g| (0..g).all(|h| self.compose(g, h) == self.compose(h, g)))
    }

    /// Latin-square, identity, inverse and (exhaustive) associativity checks.
    pub fn check_axioms(&self) -> Result<()> {
        let n = self.order;
        let fail = |m: &str| Err(Error::Invalid(format!("group axiom violated: {m}")));
        for g in 0..n {
            let mut row = vec![false; n];
            let mut col = vec![false; n];
            for h in 0..n {
                row[self.compose(g, h)] = true;
                col[self.compose(h, g)] = true;
            }
            if !row.iter().all(|&b| b) || !col.iter().all(|&b| b) {
                return fail("not a latin square");
            }
            if self.compose(0, g) != g || self.compose(g, 0) != g {
                return fail("identity");
            }
            if self.inverse[g] >= n || self.compose(g, self.inverse[g]) != 0 {
                return fail("inverse");
            }
        }
        for a in 0..n {
            for b in 0..n {
                let ab = self.compose(a, b);
                for c in 0..n {
                    if self.compose(ab, c) != self.compose(a, self.compose(b, c)) {
                        return fail("associativity");
                    }
                }
            }
        }
        Ok(())
    }

    /// Mixed-radix coordinates of `g` along the cyclic factors.
    pub fn factor_coordinates(&self, g: usize) -> Option<Vec<usize>> {
        let factors = self.descriptor.as_ref()?.factors();
        let mut coords = vec![0; factors.len()];
        let mut rest = g;
        for (i, n) in factors.iter().enumerate().rev() {
            coords[i] = rest % n;
            rest /= n;
        }
        Some(coords)
    }
}

/// An orthogonal matrix representation of a finite group.
#[derive(Clone, Debug)]
pub struct Representation {
    group: Arc<FiniteGroup>,
    matrices: Vec<DMatrix<f64>>,
    label: String,
}

impl Representation {
    /// Validates orthogonality and the homomorphism property (tolerance
    /// [`REP_TOL`]); the identity element's matrix is stored as an exact `I`.
    pub fn new(group: Arc<FiniteGroup>, mut matrices: Vec<DMatrix<f64>>, label: impl Into<String>) -> Result<Self> {
        let n = group.order();
        if matrices.len() != n {
            return Err(Error::InvalidRepresentation(format!(
                "expected {n} matrices, got {}",
                matrices.len()
            )));
        }
        let dim = matrices[0].nrows();
        if dim == 0 || matrices.iter().any(|m| m.nrows() != dim || m.ncols() != dim) {
            return Err(Error::InvalidRepresentation("matrices must be square and of equal size".into()));
        }
        let eye = DMatrix::<f64>::identity(dim, dim);
        if (&matrices[0] - &eye).norm() > REP_TOL {
            return Err(Error::InvalidRepresentation("identity element is not mapped to I".into()));
        }
        matrices[0] = eye;
        let rep = Representation {
            group,
            matrices,
            label: label.into(),
        };
        let (orth, hom) = rep.residuals();
        if orth > REP_TOL {
            return Err(Error::InvalidRepresentation(format!("orthogonality residual {orth:e}")));
        }
        if hom > REP_TOL {
            return Err(Error::InvalidRepresentation(format!("homomorphism residual {hom:e}")));
        }
        Ok(rep)
    }

    /// Constructor for matrices already known to be valid.
    pub(crate) fn new_unchecked(group: Arc<FiniteGroup>, matrices: Vec<DMatrix<f64>>, label: impl Into<String>) -> Self {
        Representation {
            group,
            matrices,
            label: label.into(),
        }
    }

    /// Largest orthogonality and homomorphism residuals (Frobenius norm).
    pub fn residuals(&self) -> (f64, f64) {
        let dim = self.dim();
        let eye = DMatrix::<f64>::identity(dim, dim);
        let orth = self
            .matrices
            .iter()
            .map(|m| (m * m.transpose() - &eye).norm())
            .fold(0.0, f64::max);
        let mut hom = 0.0f64;
        for a in self.group.elements() {
            for b in self.group.elements() {
                let ab = self.group.compose(a, b);
                hom = hom.max((&self.matrices[ab] - &self.matrices[a] * &self.matrices[b]).norm());
            }
        }
        (orth, hom)
    }

    pub fn group(&self) -> &Arc<FiniteGroup> {
        &self.group
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn matrix(&self, g: usize) -> &DMatrix<f64> {
        &self.matrices[g]
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn character(&self) -> Vec<f64> {
        self.matrices.iter().map(|m| m.trace()).collect()
    }

    pub fn act(&self, g: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.matrices[g] * x
    }

    pub fn same_group(&self, other: &Representation) -> bool {
        same_group(&self.group, &other.group)
    }

    /// The representation `g ↦ Q ρ(g) Qᵀ` for an orthogonal `Q`.
    pub fn conjugated(&self, q: &DMatrix<f64>, label: impl Into<String>) -> Representation {
        let qt = q.transpose();
        let mut matrices: Vec<DMatrix<f64>> = self.matrices.iter().map(|m| q * m * &qt).collect();
        matrices[0] = DMatrix::identity(self.dim(), self.dim());
        Representation::new_unchecked(self.group.clone(), matrices, label)
    }
}

pub fn same_group(a: &Arc<FiniteGroup>, b: &Arc<FiniteGroup>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

/// Left-regular representation: `ρ(g)` maps basis vector `e_h` to `e_{g∘h}`.
pub fn regular_representation(group: &Arc<FiniteGroup>) -> Representation {
    let n = group.order();
    let matrices = group
        .elements()
        .map(|g| {
            let mut m = DMatrix::zeros(n, n);
            for h in 0..n {
                m[(group.compose(g, h), h)] = 1.0;
            }
            m
        })
        .collect();
    Representation::new_unchecked(group.clone(), matrices, "regular")
}

/// Direct sum of `copies` regular representations.
pub fn regular_copies(group: &Arc<FiniteGroup>, copies: usize) -> Result<Representation> {
    if copies == 0 {
        return Err(Error::Invalid("at least one copy required".into()));
    }
    let reg = regular_representation(group);
    let reps = vec![reg; copies];
    Ok(rep_direct_sum(&reps)?.with_label(format!("regular^{copies}")))
}

pub fn rep_direct_sum(reps: &[Representation]) -> Result<Representation> {
    let first = reps.first().ok_or_else(|| Error::Invalid("empty direct sum".into()))?;
    if reps.iter().any(|r| !r.same_group(first)) {
        return Err(Error::GroupMismatch);
    }
    let group = first.group.clone();
    let matrices = group
        .elements()
        .map(|g| {
            let blocks: Vec<&DMatrix<f64>> = reps.iter().map(|r| r.matrix(g)).collect();
            crate::linalg::block_diag(&blocks)
        })
        .collect();
    let label = reps.iter().map(|r| r.label.as_str()).collect::<Vec<_>>().join("+");
    Ok(Representation::new_unchecked(group, matrices, label))
}

/// The orbit `{ρ(g)x}` in element-id order, duplicates retained.
pub fn orbit(x: &DVector<f64>, rep: &Representation) -> Result<Vec<DVector<f64>>> {
    if x.len() != rep.dim() {
        return Err(Error::DimensionMismatch {
            expected: rep.dim(),
            got: x.len(),
        });
    }
    Ok(rep.matrices.iter().map(|m| m * x).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldType {
    /// Absolutely irreducible; the commutant is the scalars.
    Real,
    /// Realification of a non-real complex character; commutant ≅ ℂ.
    Complex,
}

impl FieldType {
    /// Dimension of the endomorphism algebra of the irrep.
    pub fn endomorphism_dim(self) -> usize {
        match self {
            FieldType::Real => 1,
            FieldType::Complex => 2,
        }
    }
}

/// A real irreducible representation.
#[derive(Clone, Debug)]
pub struct Irrep {
    rep: Representation,
    field_type: FieldType,
    label: String,
    /// Frequency vector of the underlying complex character.
    frequency: Vec<usize>,
}

impl Irrep {
    pub fn rep(&self) -> &Representation {
        &self.rep
    }

    pub fn dim(&self) -> usize {
        self.rep.dim()
    }

    pub fn field_type(&self) -> FieldType {
        self.field_type
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn frequency(&self) -> &[usize] {
        &self.frequency
    }

    pub fn matrix(&self, g: usize) -> &DMatrix<f64> {
        self.rep.matrix(g)
    }

    pub fn character(&self) -> Vec<f64> {
        self.rep.character()
    }

    /// `Σ_g tr(ρ(g))²` must be `|G|` (real) or `2|G|` (complex), and the
    /// Frobenius–Schur sum `Σ_g χ(g²)` must be non-negative.
    pub fn certify(&self) -> Result<()> {
        let group = self.rep.group();
        let chi = self.character();
        let n = group.order() as f64;
        let norm: f64 = chi.iter().map(|c| c * c).sum();
        let expected = n * self.field_type.endomorphism_dim() as f64;
        if (norm - expected).abs() > 1e-9 * n {
            return Err(Error::InvalidRepresentation(format!(
                "irrep {} fails the irreducibility certificate ({norm} != {expected})",
                self.label
            )));
        }
        let fs: f64 = group.elements().map(|g| chi[group.compose(g, g)]).sum();
        if fs < -1e-9 * n {
            return Err(Error::InvalidRepresentation(format!("irrep {} is quaternionic", self.label)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct IrrepTable {
    group: Arc<FiniteGroup>,
    irreps: Vec<Irrep>,
}

impl IrrepTable {
    pub fn group(&self) -> &Arc<FiniteGroup> {
        &self.group
    }

    pub fn irreps(&self) -> &[Irrep] {
        &self.irreps
    }

    pub fn len(&self) -> usize {
        self.irreps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.irreps.is_empty()
    }

    pub fn get(&self, i: usize) -> &Irrep {
        &self.irreps[i]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.irreps.iter().position(|i| i.label == label)
    }

    pub fn characters(&self) -> Vec<Vec<f64>> {
        self.irreps.iter().map(|i| i.character()).collect()
    }

    /// Direct sum `⊕_i irrep_i^{⊕ m_i}` in table order.
    pub fn direct_sum(&self, multiplicities: &[usize]) -> Result<Representation> {
        if multiplicities.len() != self.irreps.len() {
            return Err(Error::DimensionMismatch {
                expected: self.irreps.len(),
                got: multiplicities.len(),
            });
        }
        let mut parts = Vec::new();
        for (irrep, &m) in self.irreps.iter().zip(multiplicities) {
            for _ in 0..m {
                parts.push(irrep.rep.clone());
            }
        }
        rep_direct_sum(&parts)
    }
}

/// Phase of the character with frequency `a` at `g`, as a numerator over `l`
/// (the character value is `exp(2πi·num/l)`).
fn phase_numerator(coords: &[usize], freq: &[usize], factors: &[usize], l: usize) -> usize {
    coords
        .iter()
        .zip(freq)
        .zip(factors)
        .map(|((&g, &a), &n)| (g * a % n) * (l / n))
        .sum::<usize>()
        % l
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `(cos, sin)` of `2π·num/l`, exact at quarter turns.
fn cos_sin(num: usize, l: usize) -> (f64, f64) {
    if (4 * num) % l == 0 {
        match 4 * num / l {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        }
    } else {
        let t = 2.0 * std::f64::consts::PI * num as f64 / l as f64;
        (t.cos(), t.sin())
    }
}

/// Real irreducible representations of an abelian group built from cyclic
/// factors, in canonical order: trivial; other one-dimensional irreps by
/// ascending character vector; two-dimensional rotation irreps by ascending
/// phase vector (for `C_n`, increasing rotation angle `2πj/n`).
///
/// Each irrep comes from a complex character `χ_a(g) = exp(2πi Σ_j a_j g_j/n_j)`.
/// Real characters give a 1-D irrep; a conjugate pair `{χ_a, χ_{−a}}` gives one
/// 2-D irrep whose matrices are rotations by the phase of `χ_a`. The pair
/// representative is chosen so the first element with non-real `χ_a` has a
/// phase in `(0, π)`.
pub fn irreps_real(group: &Arc<FiniteGroup>) -> Result<IrrepTable> {
    let Some(desc) = group.descriptor() else {
        return Err(Error::UnsupportedGroup(format!(
            "{} has no cyclic-factor structure",
            group.name()
        )));
    };
    let factors = desc.factors();
    let l = factors.iter().fold(1, |acc, &n| acc / gcd(acc, n) * n);
    let order = group.order();
    let coords: Vec<Vec<usize>> = group
        .elements()
        .map(|g| group.factor_coordinates(g).expect("descriptor present"))
        .collect();

    let mut seen = std::collections::HashSet::new();
    let mut one_dim: Vec<(Vec<f64>, Irrep)> = Vec::new();
    let mut two_dim: Vec<(Vec<usize>, Irrep)> = Vec::new();
    let mut trivial = None;
    let multi = factors.len() > 1;

    for a_id in 0..order {
        let a = coords[a_id].clone();
        if seen.contains(&a) {
            continue;
        }
        let neg: Vec<usize> = a.iter().zip(&factors).map(|(&x, &n)| (n - x) % n).collect();
        seen.insert(a.clone());
        seen.insert(neg.clone());
        let phases: Vec<usize> = coords.iter().map(|c| phase_numerator(c, &a, &factors, l)).collect();

        if a == neg {
            let chi: Vec<f64> = phases.iter().map(|&p| cos_sin(p, l).0).collect();
            let matrices = chi.iter().map(|&c| DMatrix::from_element(1, 1, c)).collect();
            let is_trivial = a.iter().all(|&x| x == 0);
            let label = if is_trivial {
                "triv".to_string()
            } else if multi {
                format!("sign{a:?}").replace(' ', "")
            } else {
                "sign".to_string()
            };
            let irrep = Irrep {
                rep: Representation::new_unchecked(group.clone(), matrices, label.clone()),
                field_type: FieldType::Real,
                label,
                frequency: a,
            };
            if is_trivial {
                trivial = Some(irrep);
            } else {
                one_dim.push((chi, irrep));
            }
        } else {
            // Representative: first non-real phase lies in (0, π).
            let first = phases
                .iter()
                .find(|&&p| 2 * p != l && p != 0)
                .copied()
                .expect("non-real character has a non-real value");
            let (freq, phases) = if 2 * first < l {
                (a, phases)
            } else {
                let flipped = phases.iter().map(|&p| (l - p) % l).collect();
                (neg, flipped)
            };
            let matrices = phases
                .iter()
                .map(|&p| {
                    let (c, s) = cos_sin(p, l);
                    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
                })
                .collect();
            let label = if multi {
                format!("rot{freq:?}").replace(' ', "")
            } else {
                format!("rot{}", freq[0])
            };
            let irrep = Irrep {
                rep: Representation::new_unchecked(group.clone(), matrices, label.clone()),
                field_type: FieldType::Complex,
                label,
                frequency: freq,
            };
            two_dim.push((phases, irrep));
        }
    }

    one_dim.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite characters"));
    two_dim.sort_by(|x, y| x.0.cmp(&y.0));
    let mut irreps = vec![trivial.expect("trivial character always present")];
    irreps.extend(one_dim.into_iter().map(|(_, i)| i));
    irreps.extend(two_dim.into_iter().map(|(_, i)| i));
    for irrep in &irreps {
        irrep.certify()?;
    }
    Ok(IrrepTable {
        group: group.clone(),
        irreps,
    })
}

/// Serializable description of a representation of a known group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RepSpec {
    /// `copies` copies of the left-regular representation.
    Regular { copies: usize },
    /// Direct sum of irreps named by their canonical labels.
    Irreps { labels: Vec<String> },
    /// One row-major square matrix per group element.
    Explicit { matrices: Vec<Vec<f64>> },
}

impl RepSpec {
    pub fn build(&self, group: &Arc<FiniteGroup>) -> Result<Representation> {
        match self {
            RepSpec::Regular { copies } => regular_copies(group, *copies),
            RepSpec::Irreps { labels } => {
                let table = irreps_real(group)?;
                let parts = labels
                    .iter()
                    .map(|l| {
                        table
                            .index_of(l)
                            .map(|i| table.get(i).rep().clone())
                            .ok_or_else(|| Error::Invalid(format!("unknown irrep label {l:?}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                rep_direct_sum(&parts)
            }
            RepSpec::Explicit { matrices } => {
                let first = matrices.first().ok_or_else(|| Error::Invalid("no matrices".into()))?;
                let dim = (first.len() as f64).sqrt().round() as usize;
                let mats = matrices
                    .iter()
                    .map(|m| {
                        if m.len() != dim * dim {
                            return Err(Error::Invalid("explicit matrices must be square".into()));
                        }
                        Ok(DMatrix::from_row_slice(dim, dim, m))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Representation::new(group.clone(), mats, "explicit")
            }
        }
    }
}
