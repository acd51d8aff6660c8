mod common;

use std::sync::Arc;

use fracheat::malliavin::{malliavin_h_norm, malliavin_matrix_at, nondegeneracy_check};
use fracheat::quadrature::GaussRule;
use fracheat::{
    malliavin_matrix, representation_integral, DriverPath, HeatModel, KernelOperator, NemytskiiFamily, Regularizer,
    SpectralField,
};
use proptest::prelude::*;

use common::{fbm, nemytskii, smooth_direction, smooth_phi};

const XI: f64 = 0.5;

fn gaussian_model(n: usize, d: usize) -> HeatModel {
    let k = KernelOperator::gaussian(n, 0.1).unwrap();
    HeatModel::new(n, NemytskiiFamily::shifted_bumps(d, 0.5, 1.0), Regularizer::Kernel(Arc::new(k))).unwrap()
}

fn averaging_model(n: usize, d: usize) -> HeatModel {
    let k = KernelOperator::averaging(n);
    HeatModel::new(n, NemytskiiFamily::shifted_bumps(d, 0.5, 1.0), Regularizer::Kernel(Arc::new(k))).unwrap()
}

fn terminal_value(model: &HeatModel, phi: &SpectralField, x: &DriverPath) -> f64 {
    model.solve(phi, x).unwrap().last().evaluate(XI).unwrap()
}

#[test]
fn directional_derivative_matches_central_differences() {
    let (n, m) = (16, 512);
    for model in [nemytskii(n, 2), gaussian_model(n, 2)] {
        let phi = smooth_phi(n);
        let x = fbm(m, 2, 5);
        let h = smooth_direction(m, 2, &[[0.3, -0.2, 0.5], [-0.4, 0.6, 0.1]]);
        let y = model.solve(&phi, &x).unwrap();
        let lin = model.linearize(&y).unwrap();
        let dz = model.directional(&lin, &x, &h).unwrap().last().evaluate(XI).unwrap();
        let eps = 1e-4;
        let fd = (terminal_value(&model, &phi, &x.perturbed(eps, &h).unwrap())
            - terminal_value(&model, &phi, &x.perturbed(-eps, &h).unwrap()))
            / (2.0 * eps);
        assert!((dz - fd).abs() <= 1e-2 * fd.abs(), "{dz} vs {fd}");
    }
}

#[test]
fn representation_with_flat_driver_matches_quadrature() {
    let (n, m) = (16, 2048);
    let model = gaussian_model(n, 2);
    let phi = smooth_phi(n).scaled(4.0);
    let x = DriverPath::zero(m, 1.0, 2);
    let y = model.solve(&phi, &x).unwrap();
    let lin = model.linearize(&y).unwrap();
    let mat = malliavin_matrix_at(&model, &lin, &x, XI, m, 1).unwrap();
    let rule = GaussRule::new(64);
    for i in 0..2 {
        let h = DriverPath::from_fn(m, 1.0, 2, |c, t| if c == i { t } else { 0.0 }).unwrap();
        let rep = representation_integral(&mat, &h).unwrap();
        let quad = rule.integrate(0.0, 1.0, |u| {
            let g = model.drift_field(&phi.semigroup_apply(u).unwrap(), i).unwrap();
            g.semigroup_apply(1.0 - u).unwrap().evaluate(XI).unwrap()
        });
        assert!((rep - quad).abs() < 1e-3, "component {i}: {rep} vs {quad}");
    }
}

#[test]
fn second_derivative_is_symmetric_and_matches_differences() {
    let (n, m) = (16, 512);
    let model = gaussian_model(n, 2);
    let phi = smooth_phi(n);
    let x = fbm(m, 2, 9);
    let h = smooth_direction(m, 2, &[[0.5, 0.2, -0.3], [0.1, -0.5, 0.4]]);
    let k = smooth_direction(m, 2, &[[-0.2, 0.4, 0.3], [0.6, 0.1, -0.2]]);
    let y = model.solve(&phi, &x).unwrap();
    let lin = model.linearize(&y).unwrap();
    let zh = model.directional(&lin, &x, &h).unwrap();
    let zk = model.directional(&lin, &x, &k).unwrap();
    let hk = model.second_directional(&lin, &x, &h, &k, &zh, &zk).unwrap();
    let kh = model.second_directional(&lin, &x, &k, &h, &zk, &zh).unwrap();
    assert_eq!(hk.fields(), kh.fields());

    let eps = 1e-3;
    let xh = x.perturbed(eps, &h).unwrap();
    let fd = (terminal_value(&model, &phi, &xh.perturbed(eps, &k).unwrap())
        - terminal_value(&model, &phi, &xh)
        - terminal_value(&model, &phi, &x.perturbed(eps, &k).unwrap())
        + terminal_value(&model, &phi, &x))
        / (eps * eps);
    let exact = hk.last().evaluate(XI).unwrap();
    assert!((exact - fd).abs() <= 5e-2 * fd.abs(), "{exact} vs {fd}");
}

#[test]
fn neighbor_jumps_vanish_under_refinement() {
    let n = 16;
    let model = gaussian_model(n, 2);
    let phi = smooth_phi(n);
    let finest = fbm(1024, 2, 13);
    let jumps: Vec<f64> = [128usize, 256, 512, 1024]
        .iter()
        .map(|&m| {
            let x = finest.coarsened(1024 / m).unwrap();
            let y = model.solve(&phi, &x).unwrap();
            let mat = malliavin_matrix(&y, &x, model.family(), model.regularizer(), XI, 1).unwrap();
            assert!(mat.holder_constant(0.7).is_finite());
            mat.max_neighbor_jump()
        })
        .collect();
    println!("neighbor jumps {jumps:?}");
    assert!(jumps.windows(2).all(|w| w[1] < w[0]));
    assert!(jumps[3] < 0.5 * jumps[0]);
}

#[test]
fn averaging_kernel_terminal_entries_are_grid_means() {
    // odd N puts ξ = 1/2 on the collocation grid
    let (n, m) = (31, 256);
    let model = averaging_model(n, 2);
    let phi = smooth_phi(n).scaled(3.0);
    let x = fbm(m, 2, 21);
    let y = model.solve(&phi, &x).unwrap();
    let lin = model.linearize(&y).unwrap();
    let mat = malliavin_matrix_at(&model, &lin, &x, XI, m, 4).unwrap();
    let y1 = y.last();
    for i in 0..2 {
        let f = model.family().member(i);
        let mean = (1..=n)
            .map(|k| f.value(y1.evaluate(k as f64 / (n + 1) as f64).unwrap()))
            .sum::<f64>()
            / (n + 1) as f64;
        let entry = mat.terminal_entries()[i];
        assert!((entry - mean).abs() < 1e-12, "component {i}: {entry} vs {mean}");
    }
    let c_u = n as f64 / (n + 1) as f64;
    let rep = nondegeneracy_check(&mat, c_u, 0.5);
    assert!(rep.passes && rep.min_terminal_entry >= c_u * 0.5 - 1e-8);
    assert!(malliavin_h_norm(&mat).unwrap() > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn directional_derivative_is_linear(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let (n, m) = (8, 64);
        let model = gaussian_model(n, 2);
        let x = fbm(m, 2, seed);
        let y = model.solve(&smooth_phi(n), &x).unwrap();
        let lin = model.linearize(&y).unwrap();
        let h = smooth_direction(m, 2, &[[a, b, 0.1], [b, 0.2, a]]);
        let k = smooth_direction(m, 2, &[[0.3, -a, b], [-0.1, b, 0.4]]);
        let sum = DriverPath::new(1.0, h.components().iter().zip(k.components())
            .map(|(p, q)| p.iter().zip(q).map(|(u, v)| u + v).collect()).collect(), None).unwrap();
        let zh = model.directional(&lin, &x, &h).unwrap();
        let zk = model.directional(&lin, &x, &k).unwrap();
        let zs = model.directional(&lin, &x, &sum).unwrap();
        let z0 = model.directional(&lin, &x, &DriverPath::zero(m, 1.0, 2)).unwrap();
        prop_assert!(z0.fields().iter().all(|f| f.l2_norm() == 0.0));
        let z2 = model.directional(&lin, &x, &h.scaled(2.0)).unwrap();
        let zh2 = zh.scaled(2.0);
        prop_assert_eq!(z2.fields(), zh2.fields());
        for ((p, q), s) in zh.fields().iter().zip(zk.fields()).zip(zs.fields()) {
            let mut pq = p.clone();
            pq.axpy(1.0, q);
            prop_assert!(pq.difference(s).l2_norm() <= 1e-12 * s.l2_norm().max(1.0));
        }
    }
}
