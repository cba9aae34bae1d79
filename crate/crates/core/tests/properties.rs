mod common;

use common::{descriptors, gaussian_matrix, gaussian_vector, group, scrambled_rep};
use dha_core::analysis::{isotypic_energy, spectrum};
use dha_core::equiv::{commutant_of_basis, equivariant_project, equivariance_residual};
use dha_core::group::{irreps_real, regular_copies};
use dha_core::harmonic::{character_projector, isotypic_basis, isotypic_project};
use dha_core::linalg::{eigenvalues, hausdorff};
use dha_core::sim::{orbit_representative, random_symmetric_stable_system};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_groups() -> Vec<String> {
    descriptors(12)
}

fn pick(i: usize) -> String {
    let all = small_groups();
    all[i % all.len()].clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn scrambled_reps_are_orthogonal_homomorphisms(gi in 0usize..64, seed in any::<u64>()) {
        let g = group(&pick(gi));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rep, _) = scrambled_rep(&mut rng, &g, 2);
        let (hom, orth) = rep.residuals();
        prop_assert!(hom <= 1e-10 && orth <= 1e-10);
        let x = gaussian_vector(&mut rng, rep.dim());
        for e in g.elements() {
            prop_assert!((rep.act(e, &x).norm() - x.norm()).abs() <= 1e-12 * x.norm().max(1.0));
        }
    }

    #[test]
    fn projectors_form_a_resolution_of_identity(gi in 0usize..64, seed in any::<u64>()) {
        let g = group(&pick(gi));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rep, _) = scrambled_rep(&mut rng, &g, 2);
        let table = irreps_real(&g).unwrap();
        let ps: Vec<DMatrix<f64>> = table.irreps().iter().map(|i| character_projector(&rep, i).unwrap()).collect();
        let n = rep.dim();
        let mut sum = DMatrix::zeros(n, n);
        for (i, p) in ps.iter().enumerate() {
            prop_assert!((p * p - p).norm() <= 1e-10);
            for q in &ps[i + 1..] {
                prop_assert!((p * q).norm() <= 1e-10);
            }
            sum += p;
        }
        prop_assert!((sum - DMatrix::identity(n, n)).norm() <= 1e-10);
    }

    #[test]
    fn isotypic_components_satisfy_parseval_and_equivariance(gi in 0usize..64, seed in any::<u64>()) {
        let g = group(&pick(gi));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rep, mults) = scrambled_rep(&mut rng, &g, 2);
        let table = irreps_real(&g).unwrap();
        let basis = isotypic_basis(&rep, &table).unwrap();
        for b in basis.blocks() {
            let i = table.index_of(b.label()).unwrap();
            prop_assert_eq!(b.multiplicity, mults[i]);
        }
        let x = gaussian_vector(&mut rng, rep.dim());
        let mut energy = 0.0;
        for i in 0..basis.blocks().len() {
            let xi = isotypic_project(&x, &basis, i).unwrap();
            energy += xi.norm_squared();
            for e in g.elements() {
                let lhs = isotypic_project(&rep.act(e, &x), &basis, i).unwrap();
                prop_assert!((lhs - rep.act(e, &xi)).norm() <= 1e-10);
            }
        }
        prop_assert!((energy - x.norm_squared()).abs() <= 1e-12 * x.norm_squared().max(1.0));
    }

    #[test]
    fn equivariant_projection_is_an_idempotent_contraction(gi in 0usize..64, seed in any::<u64>()) {
        let g = group(&pick(gi));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rep, _) = scrambled_rep(&mut rng, &g, 2);
        let a = gaussian_matrix(&mut rng, rep.dim(), rep.dim());
        let p = equivariant_project(&a, &rep).unwrap();
        prop_assert!(equivariance_residual(&p, &rep) <= 1e-10);
        prop_assert!((equivariant_project(&p, &rep).unwrap() - &p).norm() <= 1e-10);
        prop_assert!(p.norm() <= a.norm() + 1e-12);
    }

    #[test]
    fn commutant_coordinates_invert_assembly(gi in 0usize..64, seed in any::<u64>()) {
        let g = group(&pick(gi));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rep, _) = scrambled_rep(&mut rng, &g, 2);
        let basis = isotypic_basis(&rep, &irreps_real(&g).unwrap()).unwrap();
        let cb = commutant_of_basis(&basis).unwrap();
        let theta: Vec<f64> = gaussian_vector(&mut rng, cb.dimension()).iter().copied().collect();
        let back = cb.coordinates(&cb.assemble(&theta).unwrap());
        for (a, b) in theta.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn spectra_are_similarity_invariant_and_orbit_closed(gi in 0usize..64, seed in any::<u64>()) {
        let g = group(&pick(gi));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rep, _) = scrambled_rep(&mut rng, &g, 2);
        let basis = isotypic_basis(&rep, &irreps_real(&g).unwrap()).unwrap();
        let k = equivariant_project(&gaussian_matrix(&mut rng, rep.dim(), rep.dim()), &rep).unwrap();
        let base = eigenvalues(&k);
        for e in g.elements() {
            let r = rep.matrix(e);
            let moved = eigenvalues(&(r * &k * r.transpose()));
            prop_assert!(hausdorff(&base, &moved) <= 1e-10 * k.norm().max(1.0));
        }
        let q = basis.q();
        let k_iso = q * &k * q.transpose();
        let report = spectrum(&k_iso, Some(&basis), Some(&basis.aligned_rep())).unwrap();
        prop_assert!(hausdorff(&report.eigenvalues(), &base) <= 1e-8 * k.norm().max(1.0));
        prop_assert!(report.orbit_residual.unwrap() <= 1e-8 * k.norm().max(1.0));
    }

    #[test]
    fn orbit_representative_is_constant_on_orbits(gi in 0usize..64, seed in any::<u64>()) {
        let g = group(&pick(gi));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rep, _) = scrambled_rep(&mut rng, &g, 2);
        let x = gaussian_vector(&mut rng, rep.dim());
        let (h, canon) = orbit_representative(&x, &rep).unwrap();
        prop_assert_eq!(rep.act(h, &x), canon.clone());
        // dense matrices compose only up to rounding
        for e in g.elements() {
            let other = orbit_representative(&rep.act(e, &x), &rep).unwrap().1;
            prop_assert!((other - &canon).norm() <= 1e-12 * x.norm().max(1.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn constraint_projection_commutes_with_the_group(gi in 0usize..4, seed in any::<u64>()) {
        let desc = ["C2", "C3", "C4", "C2xC2"][gi];
        let g = group(desc);
        let rep = regular_copies(&g, 2).unwrap();
        let sys = random_symmetric_stable_system(&rep, 0.9, 0.0, 3, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian_vector(&mut rng, rep.dim()) * 3.0;
        let mut px = x.clone();
        sys.constraints.project(&mut px).unwrap();
        prop_assert!(sys.constraints.max_violation(&px) <= 1e-10);
        for e in g.elements() {
            let mut pgx = rep.act(e, &x);
            sys.constraints.project(&mut pgx).unwrap();
            prop_assert!((pgx - rep.act(e, &px)).norm() <= 1e-10 * x.norm().max(1.0));
        }
    }

    #[test]
    fn block_energies_sum_to_the_state_energy(seed in any::<u64>()) {
        let g = group("C3");
        let rep = regular_copies(&g, 2).unwrap();
        let basis = isotypic_basis(&rep, &irreps_real(&g).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let traj = gaussian_matrix(&mut rng, 7, rep.dim());
        let e = isotypic_energy(&traj, &basis, None, 1.0).unwrap();
        for t in 0..traj.nrows() {
            let s: f64 = e.absolute.iter().map(|b| b[t]).sum();
            prop_assert!((s - traj.row(t).norm_squared()).abs() <= 1e-12 * s.max(1.0));
            prop_assert!((e.total[t] - s).abs() <= 1e-12 * s.max(1.0));
        }
    }
}
