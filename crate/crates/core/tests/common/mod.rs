#![allow(dead_code)]

use std::sync::Arc;

use dha_core::group::{irreps_real, FiniteGroup, Representation};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Descriptors of every group with nondecreasing cyclic factors of order ≤ `max`.
pub fn descriptors(max: usize) -> Vec<String> {
    fn rec(start: usize, prod: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<String>) {
        if !cur.is_empty() {
            out.push(cur.iter().map(|f| format!("C{f}")).collect::<Vec<_>>().join("x"));
        }
        for f in start..=max {
            if prod * f > max {
                break;
            }
            cur.push(f);
            rec(f, prod * f, max, cur, out);
            cur.pop();
        }
    }
    let mut out = vec!["C1".to_string()];
    rec(2, 1, max, &mut Vec::new(), &mut out);
    out
}

pub fn group(desc: &str) -> Arc<FiniteGroup> {
    Arc::new(FiniteGroup::parse(desc).unwrap())
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let qr = gaussian_matrix(rng, n, n).qr();
    let (q, r) = (qr.q(), qr.r());
    let signs = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| r[(i, i)].signum()));
    q * signs
}

/// `V (⊕ irreps^{m_i}) Vᵀ` for random multiplicities in `0..=max_mult`
/// (at least one nonzero) and a random orthogonal `V`.
pub fn scrambled_rep(rng: &mut ChaCha8Rng, g: &Arc<FiniteGroup>, max_mult: usize) -> (Representation, Vec<usize>) {
    let table = irreps_real(g).unwrap();
    let mut mults: Vec<usize> = (0..table.len()).map(|_| rng.random_range(0..=max_mult)).collect();
    if mults.iter().all(|&m| m == 0) {
        let i = rng.random_range(0..mults.len());
        mults[i] = 1;
    }
    let rep = table.direct_sum(&mults).unwrap();
    let v = random_orthogonal(rng, rep.dim());
    (rep.conjugated(&v, "scrambled"), mults)
}
