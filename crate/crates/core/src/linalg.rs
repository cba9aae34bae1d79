//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{Complex, DMatrix, DVector};

pub fn frobenius_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Maximum of `‖Q Qᵀ − I‖_F` style residuals for a square matrix.
pub fn orthogonality_residual(q: &DMatrix<f64>) -> f64 {
    let n = q.nrows();
    (q * q.transpose() - DMatrix::<f64>::identity(n, n)).norm()
}

/// Index of the entry with largest magnitude. An entry only displaces the
/// current best if it is larger by more than `tol`, so near-ties resolve to
/// the lowest index.
pub fn argmax_abs(v: &DVector<f64>, tol: f64) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() + tol {
            best = i;
        }
    }
    best
}

/// Flip `v` so that its largest-magnitude entry is positive.
pub fn fix_sign(v: &mut DVector<f64>) {
    let i = argmax_abs(v, 1e-12);
    if v[i] < 0.0 {
        v.neg_mut();
    }
}

/// Remove components along the (orthonormal) `basis`, twice for stability.
pub fn orthogonalize_against(v: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let c = b.dot(v);
            v.axpy(-c, b, 1.0);
        }
    }
}

/// Greedy column-pivoted Gram–Schmidt: repeatedly picks the candidate with
/// the largest residual norm after removing `existing` and already chosen
/// vectors, until `count` vectors are chosen or every residual is `≤ tol`.
pub fn pivoted_orthonormal(
    candidates: &[DVector<f64>],
    existing: &[DVector<f64>],
    count: usize,
    tol: f64,
) -> Vec<DVector<f64>> {
    let mut chosen: Vec<DVector<f64>> = Vec::new();
    let mut residuals: Vec<DVector<f64>> = candidates
        .iter()
        .map(|c| {
            let mut r = c.clone();
            orthogonalize_against(&mut r, existing);
            r
        })
        .collect();
    while chosen.len() < count {
        let mut best = None;
        let mut best_norm = tol;
        for (i, r) in residuals.iter().enumerate() {
            let n = r.norm();
            if n > best_norm + 1e-14 {
                best_norm = n;
                best = Some(i);
            }
        }
        let Some(i) = best else { break };
        let mut v = residuals[i].clone() / best_norm;
        orthogonalize_against(&mut v, existing);
        orthogonalize_against(&mut v, &chosen);
        v /= v.norm();
        for r in residuals.iter_mut() {
            let c = v.dot(r);
            r.axpy(-c, &v, 1.0);
        }
        chosen.push(v);
    }
    chosen
}

/// Number of eigenvalues of a symmetric matrix above `threshold`.
pub fn count_eigenvalues_above(sym: &DMatrix<f64>, threshold: f64) -> usize {
    let s = (sym + sym.transpose()) * 0.5;
    s.symmetric_eigen()
        .eigenvalues
        .iter()
        .filter(|&&e| e > threshold)
        .count()
}

/// Dimension of the null space of `M`, given its Gram matrix `MᵀM`.
pub fn null_space_dim_from_gram(gram: &DMatrix<f64>) -> usize {
    let s = (gram + gram.transpose()) * 0.5;
    let eig = s.symmetric_eigen().eigenvalues;
    let max = eig.iter().fold(0.0f64, |m, &e| m.max(e.abs()));
    let tol = 1e-9 * max.max(1.0);
    eig.iter().filter(|&&e| e.abs() <= tol).count()
}

/// Moore–Penrose pseudo-inverse with a relative singular value cutoff.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
    let eps = 1e-12 * smax.max(f64::MIN_POSITIVE) * (m.nrows().max(m.ncols()) as f64);
    svd.pseudo_inverse(eps).expect("both singular vector sets were computed")
}

/// Eigenvalues of a real square matrix, or `None` if the matrix is not
/// finite or the solver does not converge. nalgebra's Schur iteration
/// stalls on near-identity operators with a repeated eigenvalue, which
/// briefly trained latent operators often are, so faer's solver is used.
pub fn try_eigenvalues(m: &DMatrix<f64>) -> Option<Vec<Complex<f64>>> {
    let n = m.nrows();
    if n == 0 {
        return Some(Vec::new());
    }
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let f = faer::Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)]);
    let ev = f.eigenvalues().ok()?;
    Some(ev.iter().map(|z| Complex::new(z.re, z.im)).collect())
}

/// As [`try_eigenvalues`], with NaNs in place of a failure.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    try_eigenvalues(m).unwrap_or_else(|| vec![Complex::new(f64::NAN, f64::NAN); m.nrows()])
}

/// Largest eigenvalue modulus; NaN if the spectrum cannot be computed.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    match try_eigenvalues(m) {
        Some(ev) => ev.iter().map(|z| z.norm()).fold(0.0, f64::max),
        None => f64::NAN,
    }
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Block-diagonal matrix from square blocks.
pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut o = 0;
    for b in blocks {
        let k = b.nrows();
        out.view_mut((o, o), (k, k)).copy_from(b);
        o += k;
    }
    out
}

/// Hausdorff distance between two finite sets of complex numbers.
pub fn hausdorff(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    let directed = |x: &[Complex<f64>], y: &[Complex<f64>]| {
        x.iter()
            .map(|p| y.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    directed(a, b).max(directed(b, a))
}

/// Decimal with 17 significant digits; round-trips every finite `f64`.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}
