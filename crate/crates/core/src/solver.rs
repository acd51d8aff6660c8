//! Mild solutions of `y_t = S_t φ + ∫_0^t S_{t−u} G_i(y_u) dx^i_u` with
//! `G_i = f_i` (Nemytskii) or `G_i = L∘f_i` (regularized), their
//! linearizations, and a Picard fixed-point oracle.
//!
//! Time stepping is the left-point exponential Euler scheme
//! `y_{k+1} = S_δ[y_k + Σ_i G_i(y_k) Δx^i_k]`. All derivative routines
//! differentiate this discrete map exactly.

use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fbm::DriverPath;
use crate::spectral::{semigroup_factors, CollocationGrid, SpectralField};
use crate::young::FieldPath;

/// A scalar coefficient with three bounded derivatives.
pub trait Coefficient: Send + Sync + Debug {
    fn value(&self, u: f64) -> f64;
    fn d1(&self, u: f64) -> f64;
    fn d2(&self, u: f64) -> f64;
    fn d3(&self, u: f64) -> f64;
    /// `[sup|f|, sup|f'|, sup|f''|, sup|f'''|]`.
    fn bounds(&self) -> [f64; 4];
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Constant(pub f64);

impl Coefficient for Constant {
    fn value(&self, _: f64) -> f64 {
        self.0
    }
    fn d1(&self, _: f64) -> f64 {
        0.0
    }
    fn d2(&self, _: f64) -> f64 {
        0.0
    }
    fn d3(&self, _: f64) -> f64 {
        0.0
    }
    fn bounds(&self) -> [f64; 4] {
        [self.0.abs(), 0.0, 0.0, 0.0]
    }
}

/// `f(u) = floor + amplitude (1 + (u − center)²)^{−1/2}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShiftedBump {
    pub floor: f64,
    pub amplitude: f64,
    pub center: f64,
}

// sup over v of |(9v − 6v³)(1+v²)^{-7/2}| by a fine scan (the function is odd)
fn bump_third_sup() -> f64 {
    (0..=40_000)
        .map(|i| {
            let v = i as f64 * 1e-4;
            ((9.0 * v - 6.0 * v.powi(3)) * (1.0 + v * v).powf(-3.5)).abs()
        })
        .fold(0.0, f64::max)
}

impl Coefficient for ShiftedBump {
    fn value(&self, u: f64) -> f64 {
        let v = u - self.center;
        self.floor + self.amplitude / (1.0 + v * v).sqrt()
    }
    fn d1(&self, u: f64) -> f64 {
        let v = u - self.center;
        -self.amplitude * v * (1.0 + v * v).powf(-1.5)
    }
    fn d2(&self, u: f64) -> f64 {
        let v = u - self.center;
        self.amplitude * (2.0 * v * v - 1.0) * (1.0 + v * v).powf(-2.5)
    }
    fn d3(&self, u: f64) -> f64 {
        let v = u - self.center;
        self.amplitude * (9.0 * v - 6.0 * v.powi(3)) * (1.0 + v * v).powf(-3.5)
    }
    fn bounds(&self) -> [f64; 4] {
        let a = self.amplitude.abs();
        [
            self.floor.abs().max((self.floor + self.amplitude).abs()),
            a * 2.0 / (3.0 * 3f64.sqrt()),
            a,
            a * bump_third_sup(),
        ]
    }
}

/// `f(u) = offset + amplitude sin(frequency u + phase)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SineCoefficient {
    pub offset: f64,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

impl Coefficient for SineCoefficient {
    fn value(&self, u: f64) -> f64 {
        self.offset + self.amplitude * (self.frequency * u + self.phase).sin()
    }
    fn d1(&self, u: f64) -> f64 {
        self.amplitude * self.frequency * (self.frequency * u + self.phase).cos()
    }
    fn d2(&self, u: f64) -> f64 {
        -self.amplitude * self.frequency.powi(2) * (self.frequency * u + self.phase).sin()
    }
    fn d3(&self, u: f64) -> f64 {
        -self.amplitude * self.frequency.powi(3) * (self.frequency * u + self.phase).cos()
    }
    fn bounds(&self) -> [f64; 4] {
        let a = self.amplitude.abs();
        let w = self.frequency.abs();
        [self.offset.abs() + a, a * w, a * w * w, a * w * w * w]
    }
}

/// The `d` coefficient functions `f_1, …, f_d`.
#[derive(Clone, Debug)]
pub struct NemytskiiFamily {
    members: Vec<Arc<dyn Coefficient>>,
}

impl NemytskiiFamily {
    pub fn new(members: Vec<Arc<dyn Coefficient>>) -> Result<Self> {
        if members.is_empty() {
            return Err(invalid("a coefficient family needs at least one member"));
        }
        for (i, m) in members.iter().enumerate() {
            if m.bounds().iter().any(|b| !b.is_finite()) {
                return Err(invalid(format!("coefficient {} has an unbounded derivative", i + 1)));
            }
        }
        Ok(Self { members })
    }

    /// `f_i(u) = floor + amplitude (1 + (u − i/2)²)^{−1/2}`, `i = 0..d`.
    pub fn shifted_bumps(d: usize, floor: f64, amplitude: f64) -> Self {
        Self {
            members: (0..d.max(1))
                .map(|i| {
                    Arc::new(ShiftedBump {
                        floor,
                        amplitude,
                        center: 0.5 * i as f64,
                    }) as Arc<dyn Coefficient>
                })
                .collect(),
        }
    }

    pub fn constants(d: usize, value: f64) -> Self {
        Self {
            members: (0..d.max(1)).map(|_| Arc::new(Constant(value)) as Arc<dyn Coefficient>).collect(),
        }
    }

    /// `f_i(u) = amplitude sin(u + i)`.
    pub fn sines(d: usize, amplitude: f64) -> Self {
        Self {
            members: (0..d.max(1))
                .map(|i| {
                    Arc::new(SineCoefficient {
                        offset: 0.0,
                        amplitude,
                        frequency: 1.0,
                        phase: i as f64,
                    }) as Arc<dyn Coefficient>
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn member(&self, i: usize) -> &dyn Coefficient {
        self.members[i].as_ref()
    }

    pub fn bounds(&self) -> Vec<[f64; 4]> {
        self.members.iter().map(|m| m.bounds()).collect()
    }
}

/// The regularizing operator `L` as a matrix of `U(ξ_j, ξ_k)/(P+1)` on a
/// collocation grid of `P` points, together with `c_U = min_j Σ_k U(ξ_j,ξ_k)/(P+1)`.
#[derive(Clone, Debug)]
pub struct KernelOperator {
    name: String,
    len: usize,
    // row-major weighted matrix; None means U ≡ 1
    matrix: Option<Vec<f64>>,
    c_u: f64,
}

impl KernelOperator {
    /// `U ≡ 1`.
    pub fn averaging(len: usize) -> Self {
        let len = len.max(1);
        Self {
            name: "averaging".into(),
            len,
            matrix: None,
            c_u: len as f64 / (len + 1) as f64,
        }
    }

    /// `U(ξ,η) = exp(−(ξ−η)²/(2σ²))`.
    pub fn gaussian(len: usize, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(invalid(format!("kernel width must be positive, got {sigma}")));
        }
        Self::from_kernel("gaussian", len, |a, b| (-(a - b).powi(2) / (2.0 * sigma * sigma)).exp())
    }

    pub fn from_kernel(name: &str, len: usize, u: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let len = len.max(1);
        let grid = CollocationGrid::shared(len);
        let w = grid.weight();
        let mut matrix = Vec::with_capacity(len * len);
        for j in 0..len {
            for k in 0..len {
                let v = u(grid.point(j), grid.point(k));
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(invalid(format!("kernel value {v} at ({j},{k}) is not a finite nonnegative number")));
                }
                matrix.push(v * w);
            }
        }
        let c_u = matrix
            .chunks(len)
            .map(|r| r.iter().sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        if !(c_u > 0.0) {
            return Err(invalid(format!("kernel mass lower bound c_U = {c_u} must be positive")));
        }
        Ok(Self {
            name: name.into(),
            len,
            matrix: Some(matrix),
            c_u,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn grid_len(&self) -> usize {
        self.len
    }

    pub fn c_u(&self) -> f64 {
        self.c_u
    }

    /// Weighted entry `U(ξ_j,ξ_k)/(P+1)`.
    pub fn entry(&self, j: usize, k: usize) -> f64 {
        match &self.matrix {
            Some(m) => m[j * self.len + k],
            None => 1.0 / (self.len + 1) as f64,
        }
    }

    /// `(Lv)_j = Σ_k U(ξ_j,ξ_k) v_k /(P+1)`.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        match &self.matrix {
            None => {
                let m = v.iter().sum::<f64>() / (self.len + 1) as f64;
                out.iter_mut().for_each(|o| *o = m);
            }
            Some(a) => {
                for (row, o) in a.chunks(self.len).zip(out.iter_mut()) {
                    *o = row.iter().zip(v).map(|(p, q)| p * q).sum();
                }
            }
        }
    }

    pub fn apply_transpose(&self, v: &[f64], out: &mut [f64]) {
        match &self.matrix {
            None => self.apply(v, out),
            Some(a) => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for (row, vj) in a.chunks(self.len).zip(v) {
                    for (o, p) in out.iter_mut().zip(row) {
                        *o += p * vj;
                    }
                }
            }
        }
    }

    /// `L` acting on an `N`-mode field through the `N`-point grid.
    pub fn apply_field(&self, y: &SpectralField) -> Result<SpectralField> {
        if y.n_modes() != self.len {
            return Err(Error::Shape {
                context: "kernel operator",
                expected: self.len,
                got: y.n_modes(),
            });
        }
        let grid = CollocationGrid::shared(self.len);
        let mut vals = vec![0.0; self.len];
        let mut out = vec![0.0; self.len];
        grid.synthesize(y.coeffs(), &mut vals);
        self.apply(&vals, &mut out);
        grid.analyze(&out, &mut vals);
        Ok(SpectralField::from_vec(vals))
    }
}

/// Selects the Nemytskii equation (`Identity`) or the regularized one.
#[derive(Clone, Debug)]
pub enum Regularizer {
    Identity,
    Kernel(Arc<KernelOperator>),
}

impl Regularizer {
    pub fn kernel(&self) -> Option<&KernelOperator> {
        match self {
            Regularizer::Identity => None,
            Regularizer::Kernel(k) => Some(k),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    ExponentialEuler,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub n_modes: usize,
    pub time_steps: usize,
    pub horizon: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub scheme: Scheme,
    pub tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n_modes: 64,
            time_steps: 1024,
            horizon: 1.0,
            kappa: 0.45,
            gamma: 0.70,
            scheme: Scheme::ExponentialEuler,
            tolerance: 1e-10,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_modes == 0 {
            return Err(Error::Validation("n_modes must be >= 1".into()));
        }
        if self.time_steps == 0 {
            return Err(Error::Validation("time_steps must be >= 1".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Validation(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.gamma > 0.5 && self.gamma < 1.0) {
            return Err(Error::Validation(format!("gamma must lie in (1/2,1), got {}", self.gamma)));
        }
        let lo = (1.0 - self.gamma).max(0.25);
        if !(self.kappa > lo && self.kappa < 0.5) {
            return Err(Error::Validation(format!(
                "kappa must lie in (max(1-gamma,1/4),1/2) = ({lo},0.5), got {}",
                self.kappa
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Validation(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        Ok(())
    }

    /// Regularized runs are normalized to `T = 1`.
    pub fn validate_regularized(&self) -> Result<()> {
        self.validate()?;
        if self.horizon != 1.0 {
            return Err(Error::Validation(format!("regularized runs require horizon 1, got {}", self.horizon)));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.time_steps as f64
    }
}

/// Grid values of a solution path, reused by every linearized solve.
#[derive(Clone, Debug)]
pub struct Linearization {
    offset: usize,
    values: Vec<Vec<f64>>,
}

impl Linearization {
    pub(crate) fn at(&self, k: usize) -> &[f64] {
        &self.values[k - self.offset]
    }
}

/// Fixed coefficients, regularizer and truncation level; owns the collocation grid.
#[derive(Clone, Debug)]
pub struct HeatModel {
    n_modes: usize,
    family: NemytskiiFamily,
    regularizer: Regularizer,
    grid: Arc<CollocationGrid>,
}

/// Reusable buffers for one worker.
pub(crate) struct Scratch {
    pub(crate) a: Vec<f64>,
    pub(crate) b: Vec<f64>,
    pub(crate) c: Vec<f64>,
    pub(crate) coeffs: Vec<f64>,
}

impl HeatModel {
    pub fn new(n_modes: usize, family: NemytskiiFamily, regularizer: Regularizer) -> Result<Self> {
        if n_modes == 0 {
            return Err(invalid("at least one mode is required"));
        }
        let grid = match &regularizer {
            Regularizer::Identity => CollocationGrid::shared(2 * n_modes + 1),
            Regularizer::Kernel(k) => {
                if k.grid_len() != n_modes {
                    return Err(Error::Shape {
                        context: "kernel grid",
                        expected: n_modes,
                        got: k.grid_len(),
                    });
                }
                CollocationGrid::shared(n_modes)
            }
        };
        Ok(Self {
            n_modes,
            family,
            regularizer,
            grid,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn family(&self) -> &NemytskiiFamily {
        &self.family
    }

    pub fn regularizer(&self) -> &Regularizer {
        &self.regularizer
    }

    pub fn grid(&self) -> &CollocationGrid {
        &self.grid
    }

    pub(crate) fn scratch(&self) -> Scratch {
        let p = self.grid.len();
        Scratch {
            a: vec![0.0; p],
            b: vec![0.0; p],
            c: vec![0.0; p],
            coeffs: vec![0.0; self.n_modes],
        }
    }

    pub(crate) fn to_grid(&self, coeffs: &[f64], out: &mut [f64]) {
        self.grid.synthesize(coeffs, out);
    }

    /// Applies `W` (identity or the kernel matrix) to grid values in `v`, using `tmp`.
    fn apply_w(&self, v: &mut [f64], tmp: &mut [f64]) {
        if let Regularizer::Kernel(k) = &self.regularizer {
            k.apply(v, tmp);
            v.copy_from_slice(tmp);
        }
    }

    fn apply_w_transpose(&self, v: &mut [f64], tmp: &mut [f64]) {
        if let Regularizer::Kernel(k) = &self.regularizer {
            k.apply_transpose(v, tmp);
            v.copy_from_slice(tmp);
        }
    }

    /// `A W v` into `out` (N coefficients); `v` is clobbered.
    pub(crate) fn project(&self, v: &mut [f64], tmp: &mut [f64], out: &mut [f64]) {
        self.apply_w(v, tmp);
        self.grid.analyze(v, out);
    }

    /// `G_i(y)`.
    pub fn drift_field(&self, y: &SpectralField, i: usize) -> Result<SpectralField> {
        self.check_field(y)?;
        if i >= self.family.len() {
            return Err(invalid(format!("component {i} out of range")));
        }
        let mut s = self.scratch();
        self.to_grid(y.coeffs(), &mut s.a);
        let f = self.family.member(i);
        for v in s.a.iter_mut() {
            *v = f.value(*v);
        }
        let mut out = vec![0.0; self.n_modes];
        self.project(&mut s.a, &mut s.b, &mut out);
        Ok(SpectralField::from_vec(out))
    }

    pub(crate) fn drift_from_values(&self, yvals: &[f64], i: usize, s: &mut Scratch, out: &mut [f64]) {
        let f = self.family.member(i);
        for (a, y) in s.a.iter_mut().zip(yvals) {
            *a = f.value(*y);
        }
        self.project(&mut s.a, &mut s.b, out);
    }

    fn check_field(&self, y: &SpectralField) -> Result<()> {
        if y.n_modes() != self.n_modes {
            return Err(Error::Shape {
                context: "field modes",
                expected: self.n_modes,
                got: y.n_modes(),
            });
        }
        Ok(())
    }

    fn check_driver(&self, x: &DriverPath) -> Result<()> {
        if x.n_components() != self.family.len() {
            return Err(Error::Shape {
                context: "driver components",
                expected: self.family.len(),
                got: x.n_components(),
            });
        }
        Ok(())
    }

    /// The scheme on the whole driver grid, started from `φ` at time 0.
    pub fn solve(&self, phi: &SpectralField, x: &DriverPath) -> Result<FieldPath> {
        self.solve_range(phi, x, 0, x.steps())
    }

    /// The scheme on grid indices `start..=end`, started from `φ` at `t_start`.
    pub fn solve_range(&self, phi: &SpectralField, x: &DriverPath, start: usize, end: usize) -> Result<FieldPath> {
        self.check_field(phi)?;
        self.check_driver(x)?;
        if start > end || end > x.steps() {
            return Err(invalid(format!("range [{start},{end}] outside the driver grid")));
        }
        if !phi.is_finite() {
            return Err(Error::BlowUp {
                step: start,
                time: x.time(start),
            });
        }
        let n = self.n_modes;
        let decay = semigroup_factors(n, x.dt());
        let d = self.family.len();
        let mut s = self.scratch();
        let mut fields = Vec::with_capacity(end - start + 1);
        let mut cur = phi.coeffs().to_vec();
        fields.push(SpectralField::from_vec(cur.clone()));
        let mut incs = vec![0.0; d];
        for k in start..end {
            for (i, v) in incs.iter_mut().enumerate() {
                *v = x.increment(i, k);
            }
            if incs.iter().any(|v| *v != 0.0) {
                self.to_grid(&cur, &mut s.c);
                for (j, a) in s.a.iter_mut().enumerate() {
                    let y = s.c[j];
                    *a = incs
                        .iter()
                        .enumerate()
                        .map(|(i, dx)| dx * self.family.member(i).value(y))
                        .sum();
                }
                self.project(&mut s.a, &mut s.b, &mut s.coeffs);
                for (c, g) in cur.iter_mut().zip(&s.coeffs) {
                    *c += g;
                }
            }
            for (c, e) in cur.iter_mut().zip(&decay) {
                *c *= e;
            }
            if cur.iter().any(|c| !c.is_finite()) {
                return Err(Error::BlowUp {
                    step: k + 1,
                    time: x.time(k + 1),
                });
            }
            fields.push(SpectralField::from_vec(cur.clone()));
        }
        Ok(FieldPath::from_parts(x.dt(), start, fields))
    }

    /// Caches the grid values of `y` for the linearized solvers.
    pub fn linearize(&self, y: &FieldPath) -> Result<Linearization> {
        if y.n_modes() != self.n_modes {
            return Err(Error::Shape {
                context: "linearization modes",
                expected: self.n_modes,
                got: y.n_modes(),
            });
        }
        let p = self.grid.len();
        let values = y
            .fields()
            .iter()
            .map(|f| {
                let mut v = vec![0.0; p];
                self.to_grid(f.coeffs(), &mut v);
                v
            })
            .collect();
        Ok(Linearization {
            offset: y.offset(),
            values,
        })
    }

    /// `A W (Σ_i Δx^i f_i'(y) ⊙ T v)` into `out`.
    pub(crate) fn linear_term(&self, yvals: &[f64], incs: &[f64], v: &[f64], s: &mut Scratch, out: &mut [f64]) {
        self.to_grid(v, &mut s.c);
        for (j, a) in s.a.iter_mut().enumerate() {
            let y = yvals[j];
            let g: f64 = incs
                .iter()
                .enumerate()
                .map(|(i, dx)| dx * self.family.member(i).d1(y))
                .sum();
            *a = g * s.c[j];
        }
        self.project(&mut s.a, &mut s.b, out);
    }

    /// Transpose of `v ↦ v + Σ_i Δx^i DG_i(y)[v]` applied to `u`, added into `out`
    /// (`out` must hold `u` on entry).
    pub(crate) fn linear_term_transpose(&self, yvals: &[f64], incs: &[f64], u: &[f64], s: &mut Scratch, out: &mut [f64]) {
        let p1 = (self.grid.len() + 1) as f64;
        self.grid.synthesize(u, &mut s.a);
        s.a.iter_mut().for_each(|v| *v /= p1);
        self.apply_w_transpose(&mut s.a, &mut s.b);
        for (j, a) in s.a.iter_mut().enumerate() {
            let y = yvals[j];
            let g: f64 = incs
                .iter()
                .enumerate()
                .map(|(i, dx)| dx * self.family.member(i).d1(y))
                .sum();
            *a *= g;
        }
        self.grid.analyze(&s.a, &mut s.coeffs);
        for (o, c) in out.iter_mut().zip(&s.coeffs) {
            *o += p1 * c;
        }
    }

    /// `v_t = w_t + ∫_{t0}^t S_{t−u} DG_i(y_u)[v_u] dx^i_u` on `[t0, end of w]`.
    pub fn solve_linear(&self, w: &FieldPath, lin: &Linearization, x: &DriverPath, t0: usize) -> Result<FieldPath> {
        self.check_driver(x)?;
        let end = w.end();
        if w.offset() > t0 || t0 > end || end > x.steps() {
            return Err(invalid(format!("start {t0} not covered by the inhomogeneity")));
        }
        if lin.offset > t0 || lin.offset + lin.values.len() <= end {
            return Err(invalid("linearization does not cover the requested interval"));
        }
        let n = self.n_modes;
        let decay = semigroup_factors(n, x.dt());
        let mut s = self.scratch();
        let mut incs = vec![0.0; self.family.len()];
        let mut cur = w.at(t0).expect("covered").coeffs().to_vec();
        let mut fields = Vec::with_capacity(end - t0 + 1);
        fields.push(SpectralField::from_vec(cur.clone()));
        let mut term = vec![0.0; n];
        for k in t0..end {
            for (i, v) in incs.iter_mut().enumerate() {
                *v = x.increment(i, k);
            }
            let wk = w.at(k).expect("covered").coeffs();
            let wk1 = w.at(k + 1).expect("covered").coeffs();
            let active = incs.iter().any(|v| *v != 0.0);
            if active {
                self.linear_term(lin.at(k), &incs, &cur, &mut s, &mut term);
            }
            for i in 0..n {
                let q = cur[i] - wk[i] + if active { term[i] } else { 0.0 };
                cur[i] = wk1[i] + decay[i] * q;
            }
            if cur.iter().any(|c| !c.is_finite()) {
                return Err(Error::BlowUp {
                    step: k + 1,
                    time: x.time(k + 1),
                });
            }
            fields.push(SpectralField::from_vec(cur.clone()));
        }
        Ok(FieldPath::from_parts(x.dt(), t0, fields))
    }

    /// `z = DΦ(x)(h)`: `z_{k+1} = S_δ[z_k + Σ_i G_i(y_k)Δh^i_k + Σ_i DG_i(y_k)[z_k]Δx^i_k]`.
    pub fn directional(&self, lin: &Linearization, x: &DriverPath, h: &DriverPath) -> Result<FieldPath> {
        self.check_driver(x)?;
        if !x.same_grid(h) {
            return Err(Error::Shape {
                context: "direction grid",
                expected: x.steps(),
                got: h.steps(),
            });
        }
        let m = x.steps();
        if lin.offset != 0 || lin.values.len() != m + 1 {
            return Err(invalid("linearization must cover the whole driver grid"));
        }
        let n = self.n_modes;
        let d = self.family.len();
        let decay = semigroup_factors(n, x.dt());
        let mut s = self.scratch();
        let mut cur = vec![0.0; n];
        let mut fields = Vec::with_capacity(m + 1);
        fields.push(SpectralField::from_vec(cur.clone()));
        for k in 0..m {
            let yv = lin.at(k);
            self.to_grid(&cur, &mut s.c);
            for (j, a) in s.a.iter_mut().enumerate() {
                let y = yv[j];
                let mut acc = 0.0;
                for i in 0..d {
                    let f = self.family.member(i);
                    let dh = h.increment(i, k);
                    let dx = x.increment(i, k);
                    if dh != 0.0 {
                        acc += dh * f.value(y);
                    }
                    if dx != 0.0 {
                        acc += dx * f.d1(y) * s.c[j];
                    }
                }
                *a = acc;
            }
            self.project(&mut s.a, &mut s.b, &mut s.coeffs);
            for ((c, g), e) in cur.iter_mut().zip(&s.coeffs).zip(&decay) {
                *c = e * (*c + g);
            }
            fields.push(SpectralField::from_vec(cur.clone()));
        }
        Ok(FieldPath::from_parts(x.dt(), 0, fields))
    }

    /// `D²Φ(x)(h,k)`, given the first derivatives `zh = DΦ(x)(h)` and `zk = DΦ(x)(k)`.
    ///
    /// The forcing combines the two cross terms `DG_i(y)[z^k]Δh^i + DG_i(y)[z^h]Δk^i`
    /// and the curvature term `D²G_i(y)[z^h,z^k]Δx^i`.
    pub fn second_directional(
        &self,
        lin: &Linearization,
        x: &DriverPath,
        h: &DriverPath,
        k_dir: &DriverPath,
        zh: &FieldPath,
        zk: &FieldPath,
    ) -> Result<FieldPath> {
        self.check_driver(x)?;
        if !x.same_grid(h) || !x.same_grid(k_dir) {
            return Err(Error::Shape {
                context: "direction grid",
                expected: x.steps(),
                got: h.steps().min(k_dir.steps()),
            });
        }
        let m = x.steps();
        let n = self.n_modes;
        let d = self.family.len();
        let p = self.grid.len();
        let decay = semigroup_factors(n, x.dt());
        let mut s = self.scratch();
        let mut gh = vec![0.0; p];
        let mut gk = vec![0.0; p];
        let mut cur = vec![0.0; n];
        let mut fields = Vec::with_capacity(m + 1);
        fields.push(SpectralField::from_vec(cur.clone()));
        for step in 0..m {
            let yv = lin.at(step);
            self.to_grid(&cur, &mut s.c);
            self.to_grid(zh.fields()[step].coeffs(), &mut gh);
            self.to_grid(zk.fields()[step].coeffs(), &mut gk);
            for (j, a) in s.a.iter_mut().enumerate() {
                let y = yv[j];
                let mut acc = 0.0;
                for i in 0..d {
                    let f = self.family.member(i);
                    let dh = h.increment(i, step);
                    let dk = k_dir.increment(i, step);
                    let dx = x.increment(i, step);
                    let f1 = f.d1(y);
                    let cross = dh * f1 * gk[j] + dk * f1 * gh[j];
                    let curv = dx * f.d2(y) * (gh[j] * gk[j]);
                    acc += cross + curv + dx * f1 * s.c[j];
                }
                *a = acc;
            }
            self.project(&mut s.a, &mut s.b, &mut s.coeffs);
            for ((c, g), e) in cur.iter_mut().zip(&s.coeffs).zip(&decay) {
                *c = e * (*c + g);
            }
            if cur.iter().any(|c| !c.is_finite()) {
                return Err(Error::BlowUp {
                    step: step + 1,
                    time: x.time(step + 1),
                });
            }
            fields.push(SpectralField::from_vec(cur.clone()));
        }
        Ok(FieldPath::from_parts(x.dt(), 0, fields))
    }

    /// Fixed-point iteration of `Γ(y)_t = S_tφ + Σ S_{t−t_{j+1}} G_i(y_{t_{j+1}}) Δx^i_j`
    /// (right-point convolutional sums on the full grid).
    pub fn picard(&self, phi: &SpectralField, x: &DriverPath, tol: f64, max_iter: usize) -> Result<PicardReport> {
        self.check_field(phi)?;
        self.check_driver(x)?;
        let m = x.steps();
        let n = self.n_modes;
        let d = self.family.len();
        let decay = semigroup_factors(n, x.dt());
        let orbit = FieldPath::semigroup_orbit(phi, x.dt(), m);
        let mut iterate = orbit.clone();
        let mut distances = Vec::new();
        let mut s = self.scratch();
        let mut g = vec![0.0; n];
        for _ in 0..max_iter.max(1) {
            let mut acc = vec![0.0; n];
            let mut next = Vec::with_capacity(m + 1);
            next.push(phi.clone());
            for k in 0..m {
                for (a, e) in acc.iter_mut().zip(&decay) {
                    *a *= e;
                }
                let incs = x.increments_at(k);
                if incs.iter().any(|v| *v != 0.0) {
                    self.to_grid(iterate.fields()[k + 1].coeffs(), &mut s.c);
                    for (j, a) in s.a.iter_mut().enumerate() {
                        let y = s.c[j];
                        *a = (0..d).map(|i| incs[i] * self.family.member(i).value(y)).sum();
                    }
                    self.project(&mut s.a, &mut s.b, &mut g);
                    for (a, v) in acc.iter_mut().zip(&g) {
                        *a += v;
                    }
                }
                let mut f = orbit.fields()[k + 1].clone();
                for (c, a) in f.coeffs_mut().iter_mut().zip(&acc) {
                    *c += a;
                }
                if !f.is_finite() {
                    return Err(Error::BlowUp {
                        step: k + 1,
                        time: x.time(k + 1),
                    });
                }
                next.push(f);
            }
            let next = FieldPath::from_parts(x.dt(), 0, next);
            let dist = next.max_distance(&iterate);
            distances.push(dist);
            iterate = next;
            if dist < tol {
                return Ok(PicardReport {
                    path: iterate,
                    iterations: distances.len(),
                    distances,
                });
            }
        }
        Err(Error::NonConvergence {
            iterations: distances.len(),
            distance: *distances.last().unwrap_or(&f64::NAN),
        })
    }
}

/// Output of the Picard oracle.
#[derive(Clone, Debug)]
pub struct PicardReport {
    pub path: FieldPath,
    pub iterations: usize,
    /// `𝓒⁰(𝓑)` distance between successive iterates.
    pub distances: Vec<f64>,
}

fn model_for(phi: &SpectralField, f: &NemytskiiFamily, l: &Regularizer, x: &DriverPath, cfg: &SolverConfig) -> Result<HeatModel> {
    cfg.validate()?;
    if phi.n_modes() != cfg.n_modes {
        return Err(Error::Shape {
            context: "initial condition modes",
            expected: cfg.n_modes,
            got: phi.n_modes(),
        });
    }
    if x.steps() != cfg.time_steps || x.horizon() != cfg.horizon {
        return Err(Error::Shape {
            context: "driver grid",
            expected: cfg.time_steps,
            got: x.steps(),
        });
    }
    HeatModel::new(cfg.n_modes, f.clone(), l.clone())
}

/// Solves the mild equation driven by `x` from `φ`.
pub fn solve(
    phi: &SpectralField,
    f: &NemytskiiFamily,
    l: &Regularizer,
    x: &DriverPath,
    cfg: &SolverConfig,
) -> Result<FieldPath> {
    model_for(phi, f, l, x, cfg)?.solve(phi, x)
}

/// Solves the linearized equation around `y` with inhomogeneity `w`, from grid index `t0`.
pub fn solve_linear(
    w: &FieldPath,
    y: &FieldPath,
    f: &NemytskiiFamily,
    l: &Regularizer,
    x: &DriverPath,
    t0: usize,
) -> Result<FieldPath> {
    let model = HeatModel::new(y.n_modes(), f.clone(), l.clone())?;
    let lin = model.linearize(y)?;
    model.solve_linear(w, &lin, x, t0)
}

/// Picard iteration cross-check for [`solve`].
pub fn picard_oracle(
    phi: &SpectralField,
    f: &NemytskiiFamily,
    l: &Regularizer,
    x: &DriverPath,
    cfg: &SolverConfig,
    max_iter: usize,
) -> Result<PicardReport> {
    model_for(phi, f, l, x, cfg)?.picard(phi, x, cfg.tolerance, max_iter)
}
