mod common;

use common::{gaussian_matrix, group};
use dha_core::equiv::hom_residual;
use dha_core::group::{irreps_real, regular_copies};
use dha_core::harmonic::isotypic_basis;
use dha_core::neural::{adam_step, AdamConfig, AdamState, DenseNet, EquivariantNet, Network};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Worst relative error between backprop and central differences of
/// `0.5‖W ⊙ f(x)‖²` with a fixed random weighting `W`.
fn worst_gradient_error<N: Network>(net: &mut N, x: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> f64 {
    let (y, cache) = net.forward(x).unwrap();
    let w = gaussian_matrix(rng, y.nrows(), y.ncols());
    let loss = |n: &N| {
        let (y, _) = n.forward(x).unwrap();
        0.5 * y.component_mul(&w).norm_squared()
    };
    let cot = y.component_mul(&w).component_mul(&w);
    let (grad, dx) = net.backward(&cache, &cot).unwrap();
    let p0 = net.params();
    let h = 1e-6;
    let rel = |fd: f64, an: f64| (fd - an).abs() / fd.abs().max(an.abs()).max(1e-4);
    let mut worst: f64 = 0.0;
    for i in 0..p0.len() {
        let mut p = p0.clone();
        p[i] += h;
        net.set_params(&p).unwrap();
        let up = loss(net);
        p[i] -= 2.0 * h;
        net.set_params(&p).unwrap();
        let down = loss(net);
        worst = worst.max(rel((up - down) / (2.0 * h), grad[i]));
    }
    net.set_params(&p0).unwrap();
    let mut xs = x.clone();
    for (k, dxk) in dx.iter().enumerate() {
        let orig = xs[k];
        xs[k] = orig + h;
        let (yu, _) = net.forward(&xs).unwrap();
        xs[k] = orig - h;
        let (yd, _) = net.forward(&xs).unwrap();
        xs[k] = orig;
        let fd = (0.5 * yu.component_mul(&w).norm_squared() - 0.5 * yd.component_mul(&w).norm_squared()) / (2.0 * h);
        worst = worst.max(rel(fd, *dxk));
    }
    worst
}

#[test]
fn dense_net_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for widths in [vec![3, 5, 2], vec![4, 6, 6, 4], vec![2, 1]] {
        let mut net = DenseNet::new(&widths, &mut rng).unwrap();
        let x = gaussian_matrix(&mut rng, widths[0], 3);
        let err = worst_gradient_error(&mut net, &x, &mut rng);
        assert!(err <= 1e-4, "{widths:?}: {err:e}");
    }
}

#[test]
fn equivariant_net_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (desc, copies_in, hidden, copies_out) in [("C2", 2, vec![3], 4), ("C3", 1, vec![2, 2], 2), ("C2xC2", 1, vec![2], 2)] {
        let g = group(desc);
        let rin = regular_copies(&g, copies_in).unwrap();
        let rout = regular_copies(&g, copies_out).unwrap();
        let mut net = EquivariantNet::new(&rin, &hidden, &rout, &mut rng).unwrap();
        let x = gaussian_matrix(&mut rng, rin.dim(), 2);
        let err = worst_gradient_error(&mut net, &x, &mut rng);
        assert!(err <= 1e-4, "{desc}: {err:e}");
    }
}

#[test]
fn change_of_basis_transforms_are_differentiated() {
    let g = group("C3");
    let rin = regular_copies(&g, 2).unwrap();
    let rout = regular_copies(&g, 2).unwrap();
    let q = isotypic_basis(&rout, &irreps_real(&g).unwrap()).unwrap().q().clone();
    let qi = isotypic_basis(&rin, &irreps_real(&g).unwrap()).unwrap().q().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut net = EquivariantNet::new(&rin, &[2], &rout, &mut rng)
        .unwrap()
        .with_input_transform(qi.transpose())
        .with_output_transform(q);
    let x = gaussian_matrix(&mut rng, rin.dim(), 3);
    assert!(worst_gradient_error(&mut net, &x, &mut rng) <= 1e-4);
}

#[test]
fn equivariance_survives_adam_training() {
    let g = group("C4");
    let rin = regular_copies(&g, 1).unwrap();
    let rout = regular_copies(&g, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut net = EquivariantNet::new(&rin, &[2, 2], &rout, &mut rng).unwrap();
    let mut state = AdamState::new(net.num_params());
    let hyper = AdamConfig::with_lr(1e-2);
    let target = gaussian_matrix(&mut rng, rout.dim(), 8);
    let x = gaussian_matrix(&mut rng, rin.dim(), 8);
    for _ in 0..50 {
        let (y, cache) = net.forward(&x).unwrap();
        let (grad, _) = net.backward(&cache, &(y - &target)).unwrap();
        let mut p = net.params();
        adam_step(&mut p, &grad, &mut state, &hyper).unwrap();
        net.set_params(&p).unwrap();
    }
    let probe = gaussian_matrix(&mut rng, rin.dim(), 5);
    let (y, _) = net.forward(&probe).unwrap();
    for e in g.elements() {
        let (gy, _) = net.forward(&(rin.matrix(e) * &probe)).unwrap();
        assert!((gy - rout.matrix(e) * &y).norm() <= 1e-9 * y.norm().max(1.0));
    }
    for layer in net.layers() {
        let w = layer.weight();
        let (ri, ro) = (
            regular_copies(&g, w.ncols() / 4).unwrap(),
            regular_copies(&g, w.nrows() / 4).unwrap(),
        );
        assert!(hom_residual(w, &ri, &ro) <= 1e-9);
    }
}

#[test]
fn identical_seeds_give_identical_training() {
    let run = || {
        let g = group("C2");
        let rep = regular_copies(&g, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = EquivariantNet::new(&rep, &[3], &rep, &mut rng).unwrap();
        let mut state = AdamState::new(net.num_params());
        let x = gaussian_matrix(&mut rng, 4, 6);
        for _ in 0..20 {
            let (y, cache) = net.forward(&x).unwrap();
            let (grad, _) = net.backward(&cache, &(y - &x)).unwrap();
            let mut p = net.params();
            adam_step(&mut p, &grad, &mut state, &AdamConfig::default()).unwrap();
            net.set_params(&p).unwrap();
        }
        net.params()
    };
    let (a, b) = (run(), run());
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}
