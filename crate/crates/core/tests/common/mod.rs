#![allow(dead_code)]

use fracheat::seed::path_seed;
use fracheat::{DriverPath, FbmSampler, FieldPath, HeatModel, NemytskiiFamily, Regularizer, SamplingMethod, SpectralField};

pub fn fbm(steps: usize, d: usize, seed: u64) -> DriverPath {
    FbmSampler::new(steps, 0.75, 1.0, SamplingMethod::Factorization)
        .unwrap()
        .sample(d, path_seed(seed, 0))
}

pub fn nemytskii(n_modes: usize, d: usize) -> HeatModel {
    HeatModel::new(n_modes, NemytskiiFamily::shifted_bumps(d, 0.5, 1.0), Regularizer::Identity).unwrap()
}

pub fn smooth_phi(n_modes: usize) -> SpectralField {
    let c = (0..n_modes).map(|k| 0.5 / (1.0 + k as f64).powi(3)).collect();
    SpectralField::new(c).unwrap()
}

/// `z_i = G_i(y)` along a solution path, one integrand per driver component.
pub fn drift_integrands(model: &HeatModel, y: &FieldPath) -> Vec<FieldPath> {
    (0..model.family().len())
        .map(|i| {
            let fields = y.fields().iter().map(|f| model.drift_field(f, i).unwrap()).collect();
            FieldPath::new(y.dt(), y.offset(), fields).unwrap()
        })
        .collect()
}

/// `Σ a_k sin(kπt/2)`-type smooth direction with `h_0 = 0`.
pub fn smooth_direction(steps: usize, d: usize, coeffs: &[[f64; 3]]) -> DriverPath {
    DriverPath::from_fn(steps, 1.0, d, |i, t| {
        let a = coeffs[i % coeffs.len()];
        a[0] * t + a[1] * (std::f64::consts::PI * t).sin() + a[2] * t * t
    })
    .unwrap()
}
