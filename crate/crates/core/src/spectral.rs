//! Truncated sine-series representation of functions on (0,1) with Dirichlet
//! boundary conditions.
//!
//! A [`SpectralField`] stores the coefficients `y^n` of `y = Σ y^n e_n` with
//! `e_n(ξ) = √2 sin(πnξ)`. The Dirichlet Laplacian is diagonal in this basis
//! with eigenvalues `λ_n = π²n²`, which makes the fractional Sobolev norms and
//! the heat semigroup exact coefficient-wise operations.
//!
//! Nonlinear (pointwise) maps go through a [`CollocationGrid`]: the grid
//! `ξ_j = j/(P+1)` together with the sine matrix forms an exact discrete
//! transform pair (DST-I).

use std::collections::HashMap;
use std::f64::consts::{PI, SQRT_2};
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{invalid, Error, Result};

/// `λ_n = π² n²` for the 1-based mode index `n`.
#[inline]
pub fn eigenvalue(n: usize) -> f64 {
    let k = n as f64;
    PI * PI * k * k
}

/// `λ_n^{2α}` for `n = 1..=n_modes`.
pub fn sobolev_weights(n_modes: usize, alpha: f64) -> Vec<f64> {
    (1..=n_modes).map(|n| eigenvalue(n).powf(2.0 * alpha)).collect()
}

/// `e^{-λ_n t}` for `n = 1..=n_modes`.
pub fn semigroup_factors(n_modes: usize, t: f64) -> Vec<f64> {
    (1..=n_modes).map(|n| (-eigenvalue(n) * t).exp()).collect()
}

/// Values of the basis functions at `xi`, i.e. the point-evaluation functional.
pub fn basis_values(n_modes: usize, xi: f64) -> Vec<f64> {
    (1..=n_modes)
        .map(|n| SQRT_2 * (PI * n as f64 * xi).sin())
        .collect()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn weighted_sq(coeffs: &[f64], weights: &[f64]) -> f64 {
    coeffs.iter().zip(weights).map(|(c, w)| w * c * c).sum()
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(invalid(format!("Sobolev order must be finite and >= 0, got {alpha}")));
    }
    Ok(())
}

/// A function on (0,1) given by its first `N` sine coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(invalid("a field needs at least one mode"));
        }
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::Numeric(format!("coefficient {} is not finite", i + 1)));
        }
        Ok(Self { coeffs })
    }

    pub(crate) fn from_vec(coeffs: Vec<f64>) -> Self {
        debug_assert!(!coeffs.is_empty());
        Self { coeffs }
    }

    pub fn zeros(n_modes: usize) -> Self {
        Self::from_vec(vec![0.0; n_modes.max(1)])
    }

    /// The basis function `e_k` (1-based) truncated to `n_modes` modes.
    pub fn basis(n_modes: usize, k: usize) -> Result<Self> {
        if k == 0 || k > n_modes {
            return Err(invalid(format!("mode {k} not in 1..={n_modes}")));
        }
        let mut c = vec![0.0; n_modes];
        c[k - 1] = 1.0;
        Ok(Self::from_vec(c))
    }

    pub fn n_modes(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub(crate) fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    /// `‖y‖_{B_α} = (Σ λ_n^{2α} (y^n)²)^{1/2}`.
    pub fn sobolev_norm(&self, alpha: f64) -> Result<f64> {
        check_alpha(alpha)?;
        if alpha == 0.0 {
            return Ok(self.l2_norm());
        }
        let s: f64 = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| eigenvalue(i + 1).powf(2.0 * alpha) * c * c)
            .sum();
        Ok(s.sqrt())
    }

    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Heat semigroup `S_t`: multiplies mode `n` by `e^{-λ_n t}`.
    pub fn semigroup_apply(&self, t: f64) -> Result<Self> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(invalid(format!("semigroup time must be finite and >= 0, got {t}")));
        }
        if t == 0.0 {
            return Ok(self.clone());
        }
        let mut out = self.clone();
        out.apply_factors(&semigroup_factors(self.n_modes(), t));
        Ok(out)
    }

    pub(crate) fn apply_factors(&mut self, factors: &[f64]) {
        for (c, f) in self.coeffs.iter_mut().zip(factors) {
            *c *= f;
        }
    }

    /// `y(ξ) = Σ y^n √2 sin(πnξ)` for `ξ ∈ (0,1)`.
    pub fn evaluate(&self, xi: f64) -> Result<f64> {
        if !(xi > 0.0 && xi < 1.0) {
            return Err(Error::OutOfDomain {
                name: "xi",
                value: xi,
                domain: "(0,1)",
            });
        }
        Ok(dot(&basis_values(self.n_modes(), xi), &self.coeffs))
    }

    /// Proxy for the sup norm: max of `|y|` over a `4N`-point collocation grid.
    pub fn sup_norm(&self) -> f64 {
        let grid = CollocationGrid::shared(4 * self.n_modes());
        let mut vals = vec![0.0; grid.len()];
        grid.synthesize(&self.coeffs, &mut vals);
        vals.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Zero-padded or truncated copy with `n_modes` modes.
    pub fn resized(&self, n_modes: usize) -> Self {
        let mut c = vec![0.0; n_modes.max(1)];
        let k = c.len().min(self.coeffs.len());
        c[..k].copy_from_slice(&self.coeffs[..k]);
        Self::from_vec(c)
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &SpectralField) {
        debug_assert_eq!(self.n_modes(), other.n_modes());
        for (c, o) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *c += a * o;
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self::from_vec(self.coeffs.iter().map(|c| a * c).collect())
    }

    pub fn difference(&self, other: &SpectralField) -> Self {
        Self::from_vec(
            self.coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }
}

/// Interior collocation points `ξ_j = j/(P+1)`, `j = 1..=P`, with the sine
/// matrix `sin(π n j/(P+1))` that maps up to `P` modes to grid values.
#[derive(Debug)]
pub struct CollocationGrid {
    len: usize,
    // row-major [j][n]
    sines: Vec<f64>,
}

/// Direction of [`collocation_transform`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransformDirection {
    ToGrid,
    ToCoeffs,
}

impl CollocationGrid {
    pub fn new(len: usize) -> Self {
        let len = len.max(1);
        let period = 2 * (len + 1);
        let mut sines = vec![0.0; len * len];
        for j in 1..=len {
            for n in 1..=len {
                // reduce the argument exactly before calling sin
                let k = (n * j) % period;
                sines[(j - 1) * len + (n - 1)] = (PI * k as f64 / (len + 1) as f64).sin();
            }
        }
        Self { len, sines }
    }

    /// Process-wide cached grid of the given size.
    pub fn shared(len: usize) -> Arc<Self> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<CollocationGrid>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
        guard
            .entry(len.max(1))
            .or_insert_with(|| Arc::new(CollocationGrid::new(len)))
            .clone()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Quadrature weight attached to each point.
    pub fn weight(&self) -> f64 {
        1.0 / (self.len + 1) as f64
    }

    pub fn point(&self, j: usize) -> f64 {
        (j + 1) as f64 / (self.len + 1) as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len).map(|j| self.point(j)).collect()
    }

    /// Grid values of a series with `coeffs.len() <= len` modes (missing modes are zero).
    pub(crate) fn synthesize(&self, coeffs: &[f64], out: &mut [f64]) {
        let k = coeffs.len().min(self.len);
        for (j, o) in out.iter_mut().enumerate().take(self.len) {
            let row = &self.sines[j * self.len..j * self.len + k];
            *o = SQRT_2 * dot(row, &coeffs[..k]);
        }
    }

    /// First `out.len()` sine coefficients of the grid values.
    pub(crate) fn analyze(&self, values: &[f64], out: &mut [f64]) {
        let k = out.len().min(self.len);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, v) in values.iter().enumerate().take(self.len) {
            if *v == 0.0 {
                continue;
            }
            let row = &self.sines[j * self.len..j * self.len + k];
            for (o, s) in out[..k].iter_mut().zip(row) {
                *o += v * s;
            }
        }
        let scale = SQRT_2 / (self.len + 1) as f64;
        out.iter_mut().for_each(|o| *o *= scale);
    }

    pub fn to_grid(&self, field: &SpectralField) -> Result<Vec<f64>> {
        if field.n_modes() != self.len {
            return Err(Error::Shape {
                context: "collocation to-grid",
                expected: self.len,
                got: field.n_modes(),
            });
        }
        let mut out = vec![0.0; self.len];
        self.synthesize(field.coeffs(), &mut out);
        Ok(out)
    }

    pub fn to_coeffs(&self, values: &[f64]) -> Result<SpectralField> {
        if values.len() != self.len {
            return Err(Error::Shape {
                context: "collocation to-coeffs",
                expected: self.len,
                got: values.len(),
            });
        }
        let mut out = vec![0.0; self.len];
        self.analyze(values, &mut out);
        Ok(SpectralField::from_vec(out))
    }
}

/// Exact discrete sine transform between `N` coefficients and `N` grid values.
pub fn collocation_transform(data: &[f64], direction: TransformDirection) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Shape {
            context: "collocation transform",
            expected: 1,
            got: 0,
        });
    }
    let grid = CollocationGrid::shared(data.len());
    let mut out = vec![0.0; data.len()];
    match direction {
        TransformDirection::ToGrid => grid.synthesize(data, &mut out),
        TransformDirection::ToCoeffs => grid.analyze(data, &mut out),
    }
    Ok(out)
}

/// Evaluates `N`-mode fields on an oversampled grid of `2N+1` points, applies
/// a pointwise function there and projects back onto the first `N` modes.
#[derive(Clone, Debug)]
pub struct PointwiseMapper {
    n_modes: usize,
    grid: Arc<CollocationGrid>,
}

impl PointwiseMapper {
    pub fn new(n_modes: usize) -> Self {
        Self {
            n_modes,
            grid: CollocationGrid::shared(2 * n_modes + 1),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn grid(&self) -> &CollocationGrid {
        &self.grid
    }

    pub fn grid_len(&self) -> usize {
        self.grid.len()
    }

    pub fn to_grid(&self, field: &SpectralField) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        self.grid.synthesize(field.coeffs(), &mut out);
        out
    }

    pub fn from_grid(&self, values: &[f64]) -> SpectralField {
        let mut out = vec![0.0; self.n_modes];
        self.grid.analyze(values, &mut out);
        SpectralField::from_vec(out)
    }

    pub fn map1(&self, field: &SpectralField, g: impl Fn(f64) -> f64) -> SpectralField {
        let mut vals = self.to_grid(field);
        vals.iter_mut().for_each(|v| *v = g(*v));
        self.from_grid(&vals)
    }

    /// Pointwise `g(φ_1(ξ), …, φ_m(ξ))`.
    pub fn map(&self, fields: &[&SpectralField], g: impl Fn(&[f64]) -> f64) -> Result<SpectralField> {
        if fields.is_empty() {
            return Err(invalid("pointwise map needs at least one field"));
        }
        for f in fields {
            if f.n_modes() != self.n_modes {
                return Err(Error::Shape {
                    context: "pointwise map",
                    expected: self.n_modes,
                    got: f.n_modes(),
                });
            }
        }
        let grids: Vec<Vec<f64>> = fields.iter().map(|f| self.to_grid(f)).collect();
        let mut args = vec![0.0; fields.len()];
        let vals: Vec<f64> = (0..self.grid.len())
            .map(|j| {
                for (a, g) in args.iter_mut().zip(&grids) {
                    *a = g[j];
                }
                g(&args)
            })
            .collect();
        let out = self.from_grid(&vals);
        if !out.is_finite() {
            return Err(Error::Numeric("pointwise map produced a non-finite value".into()));
        }
        Ok(out)
    }
}

/// Nemytskii composition and products of fields through the oversampled grid.
pub fn pointwise_map(fields: &[&SpectralField], g: impl Fn(&[f64]) -> f64) -> Result<SpectralField> {
    let n = fields.first().map(|f| f.n_modes()).unwrap_or(0);
    PointwiseMapper::new(n).map(fields, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(rng: &mut ChaCha8Rng, n: usize) -> SpectralField {
        // decaying spectrum keeps high Sobolev norms moderate
        SpectralField::new((1..=n).map(|k| rng.random_range(-1.0..1.0) / (k * k) as f64).collect()).unwrap()
    }

    #[test]
    fn sobolev_norm_examples() {
        let e1 = SpectralField::basis(8, 1).unwrap();
        assert_relative_eq!(e1.sobolev_norm(0.0).unwrap(), 1.0);
        assert_relative_eq!(e1.sobolev_norm(1.0).unwrap(), PI * PI, max_relative = 1e-14);
        let mut c = vec![0.0; 8];
        c[0] = 1.0;
        c[1] = 1.0;
        let f = SpectralField::new(c).unwrap();
        assert_relative_eq!(f.sobolev_norm(0.5).unwrap(), 7.024814731040727, max_relative = 1e-13);
        assert_eq!(SpectralField::zeros(8).sobolev_norm(2.7).unwrap(), 0.0);
        assert!(matches!(f.sobolev_norm(-0.1), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn semigroup_examples() {
        let e1 = SpectralField::basis(4, 1).unwrap();
        assert_eq!(e1.semigroup_apply(0.0).unwrap(), e1);
        let s = e1.semigroup_apply(0.1).unwrap();
        assert_relative_eq!(s.coeffs()[0], 0.3727078388534379, max_relative = 1e-14);
        assert!(e1.semigroup_apply(-1e-3).is_err());
    }

    #[test]
    fn evaluate_examples() {
        let e1 = SpectralField::basis(4, 1).unwrap();
        let e2 = SpectralField::basis(4, 2).unwrap();
        assert_relative_eq!(e1.evaluate(0.5).unwrap(), SQRT_2, max_relative = 1e-15);
        assert!(e2.evaluate(0.5).unwrap().abs() < 1e-15);
        assert_eq!(SpectralField::zeros(4).evaluate(0.3).unwrap(), 0.0);
        assert!(matches!(e1.evaluate(1.0), Err(Error::OutOfDomain { .. })));
        assert!(e1.evaluate(0.0).is_err());
    }

    #[test]
    fn discrete_sine_orthogonality() {
        let n = 17;
        let grid = CollocationGrid::new(n);
        for a in 0..n {
            for b in 0..n {
                let s: f64 = (0..n).map(|j| grid.sines[j * n + a] * grid.sines[j * n + b]).sum();
                let expect = if a == b { (n + 1) as f64 / 2.0 } else { 0.0 };
                assert!((s - expect).abs() < 1e-12, "({a},{b}) {s}");
            }
        }
    }

    #[test]
    fn collocation_examples() {
        let n = 16;
        let grid = CollocationGrid::new(n);
        let e1 = SpectralField::basis(n, 1).unwrap();
        let vals = grid.to_grid(&e1).unwrap();
        for (j, v) in vals.iter().enumerate() {
            let expect = SQRT_2 * (PI * (j + 1) as f64 / (n + 1) as f64).sin();
            assert_relative_eq!(*v, expect, epsilon = 1e-15);
        }
        assert!(grid.to_grid(&SpectralField::zeros(n)).unwrap().iter().all(|v| *v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_field(&mut rng, n);
        let back = grid.to_coeffs(&grid.to_grid(&f).unwrap()).unwrap();
        let err = back.difference(&f).l2_norm() / f.l2_norm();
        assert!(err < 1e-12, "{err}");

        assert!(matches!(grid.to_coeffs(&[0.0; 3]), Err(Error::Shape { .. })));
        let via_fn = collocation_transform(f.coeffs(), TransformDirection::ToGrid).unwrap();
        assert_eq!(via_fn, grid.to_grid(&f).unwrap());
    }

    #[test]
    fn pointwise_identity_and_constant() {
        let n = 64;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = random_field(&mut rng, n);
        let id = pointwise_map(&[&f], |u| u[0]).unwrap();
        assert!(id.difference(&f).l2_norm() < 1e-13);

        let one = pointwise_map(&[&f], |_| 1.0).unwrap();
        for k in 1..=9 {
            let exact = if k % 2 == 1 { 2.0 * SQRT_2 / (PI * k as f64) } else { 0.0 };
            assert!((one.coeffs()[k - 1] - exact).abs() < 1e-3, "mode {k}");
        }
    }

    #[test]
    fn pointwise_square_of_first_mode() {
        // oracle: fine composite Simpson quadrature of ∫ (e_1)² e_n
        let n = 32;
        let e1 = SpectralField::basis(n, 1).unwrap();
        let sq = pointwise_map(&[&e1], |u| u[0] * u[0]).unwrap();
        let m = 20_000;
        for k in 1..=9 {
            let g = |x: f64| 2.0 * (PI * x).sin().powi(2) * SQRT_2 * (PI * k as f64 * x).sin();
            let h = 1.0 / m as f64;
            let mut s = g(0.0) + g(1.0);
            for i in 1..m {
                s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i as f64 * h);
            }
            let oracle = s * h / 3.0;
            assert!((sq.coeffs()[k - 1] - oracle).abs() < 1e-4, "mode {k}: {} vs {oracle}", sq.coeffs()[k - 1]);
        }
        // frozen closed form of the first mode: 8√2/(3π)
        assert!((sq.coeffs()[0] - 1.2004217548761414).abs() < 1e-4);
    }

    #[test]
    fn sup_norm_of_first_mode() {
        let e1 = SpectralField::basis(8, 1).unwrap();
        assert!((e1.sup_norm() - SQRT_2).abs() < 1e-2);
    }
}
