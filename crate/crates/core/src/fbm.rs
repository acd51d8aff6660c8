//! Fractional Brownian motion with Hurst index `H > 1/2`: covariance,
//! sampling, the Volterra kernel, Hölder norms and the Cameron–Martin
//! machinery on step functions.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature::GaussRule;
use crate::report::{numbered, CsvTable};
use crate::seed::rng_from_seed;

fn check_hurst_open(hurst: f64) -> Result<()> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(invalid(format!("Hurst index must lie in (0,1), got {hurst}")));
    }
    Ok(())
}

fn check_hurst_young(hurst: f64) -> Result<()> {
    if !(hurst > 0.5 && hurst < 1.0) {
        return Err(invalid(format!("Hurst index must lie in (1/2,1), got {hurst}")));
    }
    Ok(())
}

#[inline]
pub(crate) fn cov_unchecked(s: f64, t: f64, hurst: f64) -> f64 {
    let h2 = 2.0 * hurst;
    0.5 * (t.powf(h2) + s.powf(h2) - (t - s).abs().powf(h2))
}

/// `R_H(s,t) = ½(t^{2H} + s^{2H} − |t−s|^{2H})`.
pub fn covariance(s: f64, t: f64, hurst: f64) -> Result<f64> {
    check_hurst_open(hurst)?;
    if !(s >= 0.0 && t >= 0.0) {
        return Err(invalid(format!("covariance needs s,t >= 0, got ({s},{t})")));
    }
    Ok(cov_unchecked(s, t, hurst))
}

/// A `d`-component path on the uniform grid `t_k = k T/M`, `k = 0..=M`.
#[derive(Clone, Debug, PartialEq)]
pub struct DriverPath {
    horizon: f64,
    components: Vec<Vec<f64>>,
    hurst: Option<f64>,
}

impl DriverPath {
    pub fn new(horizon: f64, components: Vec<Vec<f64>>, hurst: Option<f64>) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        let first = components.first().ok_or_else(|| invalid("a path needs at least one component"))?;
        if first.len() < 2 {
            return Err(invalid("a path needs at least two grid points"));
        }
        for c in &components {
            if c.len() != first.len() {
                return Err(Error::Shape {
                    context: "driver components",
                    expected: first.len(),
                    got: c.len(),
                });
            }
            if c[0] != 0.0 {
                return Err(invalid("driver paths must start at 0"));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("driver path has a non-finite value".into()));
            }
        }
        Ok(Self {
            horizon,
            components,
            hurst,
        })
    }

    /// The path identically zero.
    pub fn zero(steps: usize, horizon: f64, d: usize) -> Self {
        Self {
            horizon,
            components: vec![vec![0.0; steps.max(1) + 1]; d.max(1)],
            hurst: None,
        }
    }

    /// Deterministic path `t ↦ f(i, t) − f(i, 0)` on the grid.
    pub fn from_fn(steps: usize, horizon: f64, d: usize, f: impl Fn(usize, f64) -> f64) -> Result<Self> {
        let steps = steps.max(1);
        let dt = horizon / steps as f64;
        let comps = (0..d.max(1))
            .map(|i| {
                let f0 = f(i, 0.0);
                (0..=steps)
                    .map(|k| if k == 0 { 0.0 } else { f(i, k as f64 * dt) - f0 })
                    .collect()
            })
            .collect();
        Self::new(horizon, comps, None)
    }

    pub fn steps(&self) -> usize {
        self.components[0].len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps() as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps() {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps()).map(|k| self.time(k)).collect()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn hurst(&self) -> Option<f64> {
        self.hurst
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.components[i]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    #[inline]
    pub fn increment(&self, i: usize, k: usize) -> f64 {
        self.components[i][k + 1] - self.components[i][k]
    }

    /// All component increments over `[t_k, t_{k+1}]`.
    pub fn increments_at(&self, k: usize) -> Vec<f64> {
        (0..self.n_components()).map(|i| self.increment(i, k)).collect()
    }

    pub fn is_constant(&self) -> bool {
        self.components.iter().all(|c| c.iter().all(|v| *v == 0.0))
    }

    pub fn same_grid(&self, other: &DriverPath) -> bool {
        self.steps() == other.steps() && self.horizon == other.horizon && self.n_components() == other.n_components()
    }

    /// `self + eps * h`.
    pub fn perturbed(&self, eps: f64, h: &DriverPath) -> Result<Self> {
        if !self.same_grid(h) {
            return Err(Error::Shape {
                context: "driver perturbation",
                expected: self.steps(),
                got: h.steps(),
            });
        }
        let comps = self
            .components
            .iter()
            .zip(&h.components)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + eps * y).collect())
            .collect();
        Ok(Self {
            horizon: self.horizon,
            components: comps,
            hurst: self.hurst,
        })
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            horizon: self.horizon,
            components: self.components.iter().map(|c| c.iter().map(|v| a * v).collect()).collect(),
            hurst: self.hurst,
        }
    }

    /// Every `stride`-th grid point (the step count must be divisible by `stride`).
    pub fn coarsened(&self, stride: usize) -> Result<Self> {
        if stride == 0 || self.steps() % stride != 0 {
            return Err(invalid(format!("stride {stride} does not divide {} steps", self.steps())));
        }
        Ok(Self {
            horizon: self.horizon,
            components: self
                .components
                .iter()
                .map(|c| c.iter().step_by(stride).copied().collect())
                .collect(),
            hurst: self.hurst,
        })
    }

    pub fn to_table(&self) -> CsvTable {
        let mut t = CsvTable::new(std::iter::once("time".to_string()).chain(numbered("comp", self.n_components())));
        for k in 0..=self.steps() {
            let mut row = vec![self.time(k)];
            row.extend(self.components.iter().map(|c| c[k]));
            t.push(row);
        }
        t
    }
}

/// Discrete proxy of `‖x‖_γ`: max over all grid pairs of `|x_t − x_s| / (t−s)^γ`.
pub fn holder_norm(path: &DriverPath, gamma: f64) -> f64 {
    let m = path.steps();
    let dt = path.dt();
    let inv: Vec<f64> = (0..=m).map(|j| if j == 0 { 0.0 } else { (j as f64 * dt).powf(-gamma) }).collect();
    let d = path.n_components();
    let mut best = 0.0f64;
    if d == 1 {
        let x = path.component(0);
        for s in 0..m {
            for t in s + 1..=m {
                best = best.max((x[t] - x[s]).abs() * inv[t - s]);
            }
        }
    } else {
        for s in 0..m {
            for t in s + 1..=m {
                let sq: f64 = path.components.iter().map(|c| (c[t] - c[s]).powi(2)).sum();
                best = best.max(sq.sqrt() * inv[t - s]);
            }
        }
    }
    best
}

/// All-pairs Hölder constant of a scalar sequence sampled with spacing `dt`.
pub fn holder_constant(values: &[f64], dt: f64, gamma: f64) -> f64 {
    let m = values.len();
    let inv: Vec<f64> = (0..m).map(|j| if j == 0 { 0.0 } else { (j as f64 * dt).powf(-gamma) }).collect();
    let mut best = 0.0f64;
    for s in 0..m {
        for t in s + 1..m {
            best = best.max((values[t] - values[s]).abs() * inv[t - s]);
        }
    }
    best
}

/// How [`FbmSampler`] turns standard normals into grid values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMethod {
    /// Exact: lower-triangular factor of the grid covariance matrix.
    Factorization,
    /// Discretized Volterra representation `B_t = ∫_0^t K(t,r) dW_r`.
    Volterra,
}

impl std::str::FromStr for SamplingMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "factorization" => Ok(Self::Factorization),
            "volterra" => Ok(Self::Volterra),
            other => Err(invalid(format!("unknown sampling method '{other}'"))),
        }
    }
}

/// Packed lower-triangular matrix.
#[derive(Debug)]
struct LowerTriangular {
    n: usize,
    data: Vec<f64>,
}

impl LowerTriangular {
    #[inline]
    fn row(&self, k: usize) -> &[f64] {
        let start = k * (k + 1) / 2;
        &self.data[start..start + k + 1]
    }

    fn apply(&self, z: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate().take(self.n) {
            *o = self.row(k).iter().zip(z).map(|(a, b)| a * b).sum();
        }
    }
}

type FactorKey = (usize, u64, u64, SamplingMethod);

fn factor_cache() -> &'static Mutex<HashMap<FactorKey, Arc<LowerTriangular>>> {
    static CACHE: OnceLock<Mutex<HashMap<FactorKey, Arc<LowerTriangular>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn cholesky_factor(steps: usize, hurst: f64, horizon: f64) -> Result<LowerTriangular> {
    let dt = horizon / steps as f64;
    let cov = DMatrix::from_fn(steps, steps, |a, b| cov_unchecked((a + 1) as f64 * dt, (b + 1) as f64 * dt, hurst));
    let chol = nalgebra::Cholesky::new(cov).ok_or_else(|| {
        Error::Factorization(format!("covariance matrix not positive definite (M = {steps}, H = {hurst})"))
    })?;
    let l = chol.l();
    let mut data = Vec::with_capacity(steps * (steps + 1) / 2);
    for k in 0..steps {
        for m in 0..=k {
            data.push(l[(k, m)]);
        }
    }
    Ok(LowerTriangular { n: steps, data })
}

fn volterra_factor(steps: usize, hurst: f64, horizon: f64) -> Result<LowerTriangular> {
    let kernel = VolterraKernel::new(hurst)?;
    let dt = horizon / steps as f64;
    let fine = GaussRule::shared(16);
    let coarse = GaussRule::shared(8);
    let a = kernel.a;
    let mut data = Vec::with_capacity(steps * (steps + 1) / 2);
    for k in 1..=steps {
        let t = k as f64 * dt;
        for m in 1..=k {
            let lo = (m - 1) as f64 * dt;
            let hi = m as f64 * dt;
            let sq = |r: f64| {
                let v = kernel.eval_unchecked(t, r);
                v * v
            };
            let mass = if m == 1 || m == k {
                let left = if m == 1 { -2.0 * a } else { 0.0 };
                let right = if m == k { 2.0 * a } else { 0.0 };
                fine.integrate_singular(lo, hi, left, right, sq)
            } else if k - m <= 2 {
                fine.integrate(lo, hi, sq)
            } else {
                coarse.integrate(lo, hi, sq)
            };
            if !mass.is_finite() || mass < 0.0 {
                return Err(Error::Numeric(format!("Volterra cell mass {mass} at ({k},{m})")));
            }
            data.push(mass.sqrt());
        }
    }
    Ok(LowerTriangular { n: steps, data })
}

/// Draws fBm paths on a fixed grid; the factor matrix is built once and shared.
#[derive(Clone, Debug)]
pub struct FbmSampler {
    steps: usize,
    hurst: f64,
    horizon: f64,
    method: SamplingMethod,
    factor: Arc<LowerTriangular>,
}

impl FbmSampler {
    pub fn new(steps: usize, hurst: f64, horizon: f64, method: SamplingMethod) -> Result<Self> {
        if steps == 0 {
            return Err(invalid("at least one time step is required"));
        }
        check_hurst_young(hurst)?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        let key = (steps, hurst.to_bits(), horizon.to_bits(), method);
        if let Some(f) = factor_cache().lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return Ok(Self {
                steps,
                hurst,
                horizon,
                method,
                factor: f.clone(),
            });
        }
        let factor = Arc::new(match method {
            SamplingMethod::Factorization => cholesky_factor(steps, hurst, horizon)?,
            SamplingMethod::Volterra => volterra_factor(steps, hurst, horizon)?,
        });
        factor_cache()
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key, factor.clone());
        Ok(Self {
            steps,
            hurst,
            horizon,
            method,
            factor,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn method(&self) -> SamplingMethod {
        self.method
    }

    /// A `d`-component path from the stream seeded by `seed`. Normals are drawn
    /// component by component, so both methods see the same innovations.
    pub fn sample(&self, d: usize, seed: u64) -> DriverPath {
        let mut rng = rng_from_seed(seed);
        let mut z = vec![0.0; self.steps];
        let comps = (0..d.max(1))
            .map(|_| {
                for v in z.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                let mut c = vec![0.0; self.steps + 1];
                self.factor.apply(&z, &mut c[1..]);
                c
            })
            .collect();
        DriverPath {
            horizon: self.horizon,
            components: comps,
            hurst: Some(self.hurst),
        }
    }
}

/// One fBm path on `[0,1]` with `steps` steps.
pub fn sample_path(steps: usize, hurst: f64, d: usize, seed: u64, method: SamplingMethod) -> Result<DriverPath> {
    Ok(FbmSampler::new(steps, hurst, 1.0, method)?.sample(d, seed))
}

/// `K(t,s) = c_H s^{1/2−H} ∫_s^t (u−s)^{H−3/2} u^{H−1/2} du` for `0 < s < t`.
///
/// With `a = H − 1/2` and `w = (u−s)^a` the inner integral becomes
/// `(1/a) ∫_0^{(t−s)^a} (s + w^{1/a})^a dw`, which has a bounded integrand.
#[derive(Clone, Debug)]
pub struct VolterraKernel {
    hurst: f64,
    a: f64,
    c_h: f64,
    rule: Arc<GaussRule>,
}

impl VolterraKernel {
    /// Kernel with `c_H` calibrated so that `∫_0^1 K(1,r)² dr = 1`.
    pub fn new(hurst: f64) -> Result<Self> {
        let mut k = Self::with_constant(hurst, 1.0)?;
        let mass = k.second_moment(1.0);
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::Numeric(format!("kernel calibration integral is {mass}")));
        }
        k.c_h = mass.powf(-0.5);
        Ok(k)
    }

    pub fn with_constant(hurst: f64, c_h: f64) -> Result<Self> {
        check_hurst_young(hurst)?;
        Ok(Self {
            hurst,
            a: hurst - 0.5,
            c_h,
            rule: GaussRule::shared(64),
        })
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn constant(&self) -> f64 {
        self.c_h
    }

    fn inner(&self, t: f64, s: f64) -> f64 {
        let a = self.a;
        let inv_a = 1.0 / a;
        let upper = (t - s).powf(a);
        let g = |w: f64| (s + w.powf(inv_a)).powf(a);
        // natural scale of the integrand is w ~ s^a
        let knee = s.powf(a);
        let v = if knee < upper {
            self.rule.integrate(0.0, knee, g) + self.rule.integrate(knee, upper, g)
        } else {
            self.rule.integrate(0.0, upper, g)
        };
        v * inv_a
    }

    pub(crate) fn eval_unchecked(&self, t: f64, s: f64) -> f64 {
        self.c_h * s.powf(-self.a) * self.inner(t, s)
    }

    pub fn eval(&self, t: f64, s: f64) -> Result<f64> {
        if !(s > 0.0) {
            return Err(Error::OutOfDomain {
                name: "s",
                value: s,
                domain: "(0,t)",
            });
        }
        if !(s < t) {
            return Err(Error::OutOfDomain {
                name: "t",
                value: t,
                domain: "(s,∞)",
            });
        }
        Ok(self.eval_unchecked(t, s))
    }

    /// `∂_r K(r,t) = c_H t^{1/2−H} (r−t)^{H−3/2} r^{H−1/2}` for `r > t > 0`.
    pub fn d_first(&self, r: f64, t: f64) -> Result<f64> {
        if !(t > 0.0 && r > t) {
            return Err(Error::OutOfDomain {
                name: "r",
                value: r,
                domain: "(t,∞)",
            });
        }
        Ok(self.c_h * t.powf(-self.a) * (r - t).powf(self.a - 1.0) * r.powf(self.a))
    }

    /// `∫_0^t K(t,r)² dr`.
    pub fn second_moment(&self, t: f64) -> f64 {
        let a = self.a;
        self.rule.integrate_singular(0.0, t, -2.0 * a, 2.0 * a, |r| {
            let v = self.eval_unchecked(t, r);
            v * v
        })
    }

    /// `∫_0^{s∧t} K(t,r) K(s,r) dr`, which reproduces `R_H(s,t)`.
    pub fn covariance_by_quadrature(&self, s: f64, t: f64) -> f64 {
        let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
        if lo <= 0.0 {
            return 0.0;
        }
        if lo == hi {
            return self.second_moment(lo);
        }
        let a = self.a;
        self.rule
            .integrate_singular(0.0, lo, -2.0 * a, a, |r| self.eval_unchecked(hi, r) * self.eval_unchecked(lo, r))
    }
}

/// Piecewise-constant `ℝ^d`-valued function on the uniform grid: component
/// `i` equals `values[i][k]` on `(t_k, t_{k+1}]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepFunction {
    horizon: f64,
    values: Vec<Vec<f64>>,
}

impl StepFunction {
    pub fn new(horizon: f64, values: Vec<Vec<f64>>) -> Result<Self> {
        let first = values.first().ok_or_else(|| invalid("a step function needs at least one component"))?;
        if first.is_empty() {
            return Err(invalid("a step function needs at least one piece"));
        }
        if values.iter().any(|v| v.len() != first.len()) {
            return Err(Error::Shape {
                context: "step function components",
                expected: first.len(),
                got: values.iter().map(Vec::len).find(|l| *l != first.len()).unwrap_or(0),
            });
        }
        if !(horizon > 0.0) {
            return Err(invalid("horizon must be positive"));
        }
        Ok(Self { horizon, values })
    }

    pub fn zeros(steps: usize, horizon: f64, d: usize) -> Self {
        Self {
            horizon,
            values: vec![vec![0.0; steps.max(1)]; d.max(1)],
        }
    }

    /// `1_{[0, t_end]} e_comp` with `t_end` the grid time of index `end`.
    pub fn indicator(steps: usize, horizon: f64, d: usize, comp: usize, end: usize) -> Result<Self> {
        if comp >= d || end > steps {
            return Err(invalid(format!("indicator (component {comp}, end {end}) outside grid")));
        }
        let mut s = Self::zeros(steps, horizon, d);
        s.values[comp][..end].iter_mut().for_each(|v| *v = 1.0);
        Ok(s)
    }

    /// Samples `f(i, t)` at the left end of every piece.
    pub fn from_fn(steps: usize, horizon: f64, d: usize, f: impl Fn(usize, f64) -> f64) -> Self {
        let dt = horizon / steps.max(1) as f64;
        Self {
            horizon,
            values: (0..d.max(1))
                .map(|i| (0..steps.max(1)).map(|k| f(i, k as f64 * dt)).collect())
                .collect(),
        }
    }

    pub fn steps(&self) -> usize {
        self.values[0].len()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps() as f64
    }

    pub fn n_components(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }
}

/// Toeplitz Gram matrix `E[(B_{t_{k+1}}−B_{t_k})(B_{t_{l+1}}−B_{t_l})]` on a uniform grid.
#[derive(Clone, Debug)]
pub struct IncrementGram {
    lags: Vec<f64>,
}

impl IncrementGram {
    pub fn new(steps: usize, dt: f64, hurst: f64) -> Self {
        let h2 = 2.0 * hurst;
        let scale = 0.5 * dt.powf(h2);
        let p = |j: f64| j.abs().powf(h2);
        let lags = (0..steps.max(1))
            .map(|j| {
                let j = j as f64;
                scale * (p(j + 1.0) + p(j - 1.0) - 2.0 * p(j))
            })
            .collect();
        Self { lags }
    }

    pub fn lag(&self, j: usize) -> f64 {
        self.lags[j]
    }

    /// `Σ_{k,l} a_k b_l g(|k−l|)`.
    pub fn bilinear(&self, a: &[f64], b: &[f64]) -> f64 {
        let n = a.len().min(b.len()).min(self.lags.len());
        let mut s = 0.0;
        for k in 0..n {
            if a[k] == 0.0 {
                continue;
            }
            let mut row = b[k] * self.lags[0];
            for l in 0..k {
                row += b[l] * self.lags[k - l];
            }
            for l in k + 1..n {
                row += b[l] * self.lags[l - k];
            }
            s += a[k] * row;
        }
        s
    }
}

/// `⟨h1, h2⟩_𝓗`, extended bilinearly from `⟨1_{[0,t]}e_i, 1_{[0,s]}e_j⟩ = R_H(s,t) 1_{i=j}`.
pub fn h_inner_product(h1: &StepFunction, h2: &StepFunction, hurst: f64) -> Result<f64> {
    check_hurst_open(hurst)?;
    if h1.steps() != h2.steps() || h1.n_components() != h2.n_components() || h1.horizon != h2.horizon {
        return Err(Error::Shape {
            context: "H inner product grids",
            expected: h1.steps(),
            got: h2.steps(),
        });
    }
    let gram = IncrementGram::new(h1.steps(), h1.dt(), hurst);
    Ok(h1
        .values
        .iter()
        .zip(&h2.values)
        .map(|(a, b)| gram.bilinear(a, b))
        .sum())
}

/// `𝓡_H h` on the grid, from `𝓡_H(1_{[0,t]}e_i)(u) = ∫_0^{u∧t} K(u,s)K(t,s) ds · e_i`
/// with the kernel integrals done by quadrature.
pub fn cameron_martin_lift(h: &StepFunction, hurst: f64) -> Result<DriverPath> {
    let kernel = VolterraKernel::new(hurst)?;
    let m = h.steps();
    let dt = h.dt();
    let mut rho = vec![0.0; (m + 1) * (m + 1)];
    for u in 1..=m {
        for t in u..=m {
            let v = kernel.covariance_by_quadrature(u as f64 * dt, t as f64 * dt);
            if !v.is_finite() {
                return Err(Error::Numeric(format!("lift quadrature failed at ({u},{t})")));
            }
            rho[u * (m + 1) + t] = v;
            rho[t * (m + 1) + u] = v;
        }
    }
    let comps = h
        .values
        .iter()
        .map(|a| {
            (0..=m)
                .map(|u| {
                    let row = &rho[u * (m + 1)..(u + 1) * (m + 1)];
                    a.iter().enumerate().map(|(k, ak)| ak * (row[k + 1] - row[k])).sum()
                })
                .collect()
        })
        .collect();
    DriverPath::new(h.horizon, comps, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn closed_form_c_h(h: f64) -> f64 {
        (h * (2.0 * h - 1.0) / statrs::function::beta::beta(2.0 - 2.0 * h, h - 0.5)).sqrt()
    }

    #[test]
    fn covariance_examples() {
        assert_relative_eq!(covariance(1.0, 1.0, 0.3).unwrap(), 1.0);
        assert_relative_eq!(covariance(0.5, 1.0, 0.75).unwrap(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(covariance(0.3, 0.7, 0.5).unwrap(), 0.3, epsilon = 1e-15);
        assert!(covariance(0.3, 0.7, 1.0).is_err());
    }

    #[test]
    fn calibrated_constant_matches_closed_form() {
        for &h in &[0.55, 0.6, 0.75, 0.9] {
            let k = VolterraKernel::new(h).unwrap();
            let exact = closed_form_c_h(h);
            assert!((k.constant() / exact - 1.0).abs() < 1e-5, "H={h}: {} vs {exact}", k.constant());
        }
        let k = VolterraKernel::new(0.75).unwrap();
        assert!((k.constant() - 0.267411158757998).abs() < 1e-6);
    }

    #[test]
    fn kernel_reproduces_covariance() {
        let k = VolterraKernel::new(0.75).unwrap();
        assert!((k.second_moment(1.0) - 1.0).abs() < 1e-3);
        assert!((k.covariance_by_quadrature(0.5, 1.0) - 0.5).abs() < 1e-3);
        assert!((k.covariance_by_quadrature(0.2, 0.9) - cov_unchecked(0.2, 0.9, 0.75)).abs() < 1e-3);
        assert!(k.eval(0.5, 0.5).is_err());
        assert!(k.eval(0.5, 0.0).is_err());
        for &(t, s) in &[(1.0, 0.999), (1.0, 1e-6), (0.3, 0.1)] {
            assert!(k.eval(t, s).unwrap() > 0.0);
        }
    }

    #[test]
    fn kernel_derivative_matches_difference_quotient() {
        let k = VolterraKernel::new(0.75).unwrap();
        let (r, t) = (0.8, 0.3);
        let e = 1e-5;
        let fd = (k.eval(r + e, t).unwrap() - k.eval(r - e, t).unwrap()) / (2.0 * e);
        let d = k.d_first(r, t).unwrap();
        assert!((fd - d).abs() < 1e-6 * d.abs().max(1.0), "{fd} vs {d}");
    }

    #[test]
    fn holder_norm_examples() {
        let x = DriverPath::from_fn(64, 1.0, 1, |_, t| t).unwrap();
        assert_relative_eq!(holder_norm(&x, 0.55), 1.0, epsilon = 1e-14);
        assert_eq!(holder_norm(&DriverPath::zero(16, 1.0, 2), 0.5), 0.0);
    }

    #[test]
    fn h_inner_product_examples() {
        let a = StepFunction::indicator(64, 1.0, 2, 0, 64).unwrap();
        let b = StepFunction::indicator(64, 1.0, 2, 0, 32).unwrap();
        assert!((h_inner_product(&a, &b, 0.75).unwrap() - 0.5).abs() < 1e-12);
        let c = StepFunction::indicator(64, 1.0, 2, 1, 32).unwrap();
        assert_eq!(h_inner_product(&a, &c, 0.75).unwrap(), 0.0);
        let short = StepFunction::zeros(32, 1.0, 2);
        assert!(matches!(h_inner_product(&a, &short, 0.75), Err(Error::Shape { .. })));
    }

    #[test]
    fn lift_of_indicator_is_covariance() {
        let h = StepFunction::indicator(8, 1.0, 1, 0, 8).unwrap();
        let lifted = cameron_martin_lift(&h, 0.75).unwrap();
        assert!((lifted.component(0)[4] - 0.5).abs() < 1e-2);
        let zero = cameron_martin_lift(&StepFunction::zeros(8, 1.0, 1), 0.75).unwrap();
        assert!(zero.is_constant());
    }

    #[test]
    fn samplers_are_deterministic() {
        let s = FbmSampler::new(32, 0.75, 1.0, SamplingMethod::Factorization).unwrap();
        assert_eq!(s.sample(2, 5), s.sample(2, 5));
        assert_ne!(s.sample(2, 5), s.sample(2, 6));
        let p = s.sample(2, 5);
        assert_eq!(p.component(1)[0], 0.0);
        assert!(FbmSampler::new(32, 0.5, 1.0, SamplingMethod::Factorization).is_err());
    }
}
