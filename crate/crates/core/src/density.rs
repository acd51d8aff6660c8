//! Monte-Carlo ensembles of the regularized equation, kernel density
//! estimates, inverse moments of the Malliavin norm and bound stress tests.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fbm::{holder_norm, DriverPath, FbmSampler, SamplingMethod};
use crate::malliavin::{flow_fields_at_sources, flow_holder_constant, malliavin_h_norm, malliavin_matrix_at, MalliavinMatrix};
use crate::report::CsvTable;
use crate::seed::{auxiliary_rng, path_seed};
use crate::solver::{Coefficient, HeatModel, KernelOperator, Linearization, NemytskiiFamily, Regularizer, SineCoefficient, SolverConfig};
use crate::spectral::SpectralField;
use crate::young::{path_norms, FieldPath};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelId {
    /// `U ≡ 1`.
    #[default]
    Averaging,
    /// Gaussian bump of width `kernel_width`.
    Gaussian,
    /// No regularization (Nemytskii equation).
    Identity,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyId {
    /// `f_i(u) = λ_0 + a (1 + (u − i/2)²)^{−1/2}`.
    #[default]
    ShiftedBumps,
    /// `f_i(u) = λ_0 + a (1 + sin(u + i))`.
    Sines,
}

/// Which a-priori estimate [`verify_bound`] stress-tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BoundId {
    /// Polynomial bound on the hat-Hölder norm of the solution.
    #[serde(rename = "poly-4.10")]
    Polynomial,
    /// Exponential bound on the sup norm of the linear equation.
    #[serde(rename = "lin-4.14")]
    LinearSup,
    /// Exponential bound on the hat-Hölder norm of the linear equation with `w_t = S_t ψ`.
    #[serde(rename = "lin-4.15")]
    LinearHolder,
    /// Exponential bound on the Hölder constant of `s ↦ Ψ_{1,s}`.
    #[serde(rename = "flow-4.20")]
    FlowHolder,
    /// Sewing bound of the convolutional Young integral.
    #[serde(rename = "sewing-2.11")]
    Sewing,
}

impl BoundId {
    pub const ALL: [BoundId; 5] = [
        BoundId::Polynomial,
        BoundId::LinearSup,
        BoundId::LinearHolder,
        BoundId::FlowHolder,
        BoundId::Sewing,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BoundId::Polynomial => "poly-4.10",
            BoundId::LinearSup => "lin-4.14",
            BoundId::LinearHolder => "lin-4.15",
            BoundId::FlowHolder => "flow-4.20",
            BoundId::Sewing => "sewing-2.11",
        }
    }

    pub fn form(&self) -> BoundForm {
        match self {
            BoundId::Polynomial | BoundId::Sewing => BoundForm::Ratio,
            _ => BoundForm::LogLinear,
        }
    }
}

impl fmt::Display for BoundId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BoundId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        BoundId::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown bound id {s:?}")))
    }
}

/// How a bound's right-hand side depends on its fitted constants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundForm {
    /// `lhs ≤ C · scale`.
    Ratio,
    /// `ln(lhs / scale) ≤ a + b · feature` with `b ≥ 0`.
    LogLinear,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthRule {
    /// `1.06 σ̂ n^{−1/5}`.
    #[default]
    RuleOfThumb,
    Fixed(f64),
}

impl BandwidthRule {
    pub fn bandwidth(&self, samples: &[f64]) -> Result<f64> {
        match *self {
            BandwidthRule::Fixed(h) => Ok(h),
            BandwidthRule::RuleOfThumb => rule_of_thumb_bandwidth(samples),
        }
    }
}

/// Everything a Monte-Carlo run needs. Missing JSON keys take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Hurst index of the driving fBm.
    pub hurst: f64,
    pub n_paths: usize,
    /// Master seed; path `k` uses `path_seed(seed, k)`.
    pub seed: u64,
    pub solver: SolverConfig,
    /// Number of driving components `d`.
    pub n_components: usize,
    /// Lower bound `λ_0` of the coefficients.
    pub lambda_0: f64,
    pub coefficients: FamilyId,
    pub coefficient_amplitude: f64,
    pub kernel: KernelId,
    pub kernel_width: f64,
    /// `φ = initial_amplitude · e_1`.
    pub initial_amplitude: f64,
    /// Evaluation point of `Y_1(ξ)`.
    pub xi: f64,
    /// Source-time spacing of the Malliavin matrix, in solver steps.
    pub source_stride: usize,
    pub sampler: SamplingMethod,
    pub bounds: Vec<BoundId>,
    pub bandwidth: BandwidthRule,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            hurst: 0.75,
            n_paths: 1000,
            seed: 42,
            solver: SolverConfig::default(),
            n_components: 2,
            lambda_0: 0.5,
            coefficients: FamilyId::ShiftedBumps,
            coefficient_amplitude: 1.0,
            kernel: KernelId::Averaging,
            kernel_width: 0.1,
            initial_amplitude: 0.0,
            xi: 0.5,
            source_stride: 4,
            sampler: SamplingMethod::Factorization,
            bounds: BoundId::ALL.to_vec(),
            bandwidth: BandwidthRule::RuleOfThumb,
        }
    }
}

impl ExperimentConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if !(self.hurst > 0.5 && self.hurst < 1.0) {
            return fail(format!("hurst must lie in (1/2,1), got {}", self.hurst));
        }
        if self.kernel == KernelId::Identity {
            self.solver.validate()?;
        } else {
            self.solver.validate_regularized()?;
        }
        if !(self.solver.gamma < self.hurst) {
            return fail(format!(
                "gamma must be below hurst so that the driver is gamma-Hölder, got gamma={} hurst={}",
                self.solver.gamma, self.hurst
            ));
        }
        if self.n_paths < 2 {
            return fail(format!("n_paths must be >= 2, got {}", self.n_paths));
        }
        if self.n_components == 0 {
            return fail("n_components must be >= 1".into());
        }
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return fail(format!("xi must lie in (0,1), got {}", self.xi));
        }
        if !(self.lambda_0 >= 0.0 && self.lambda_0.is_finite()) {
            return fail(format!("lambda_0 must be finite and >= 0, got {}", self.lambda_0));
        }
        if !(self.coefficient_amplitude >= 0.0 && self.coefficient_amplitude.is_finite()) {
            return fail(format!("coefficient_amplitude must be finite and >= 0, got {}", self.coefficient_amplitude));
        }
        if !(self.kernel_width > 0.0 && self.kernel_width.is_finite()) {
            return fail(format!("kernel_width must be positive, got {}", self.kernel_width));
        }
        if !self.initial_amplitude.is_finite() {
            return fail("initial_amplitude must be finite".into());
        }
        if self.source_stride == 0 || self.solver.time_steps % self.source_stride != 0 {
            return fail(format!(
                "source_stride must divide time_steps ({}), got {}",
                self.solver.time_steps, self.source_stride
            ));
        }
        if let BandwidthRule::Fixed(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return fail(format!("fixed bandwidth must be positive, got {h}"));
            }
        }
        Ok(())
    }

    pub fn family(&self) -> NemytskiiFamily {
        let d = self.n_components;
        match self.coefficients {
            FamilyId::ShiftedBumps => NemytskiiFamily::shifted_bumps(d, self.lambda_0, self.coefficient_amplitude),
            FamilyId::Sines => NemytskiiFamily::new(
                (0..d)
                    .map(|i| {
                        Arc::new(SineCoefficient {
                            offset: self.lambda_0 + self.coefficient_amplitude,
                            amplitude: self.coefficient_amplitude,
                            frequency: 1.0,
                            phase: i as f64,
                        }) as Arc<dyn Coefficient>
                    })
                    .collect(),
            )
            .expect("sine coefficients are bounded"),
        }
    }

    pub fn regularizer(&self) -> Result<Regularizer> {
        let n = self.solver.n_modes;
        Ok(match self.kernel {
            KernelId::Averaging => Regularizer::Kernel(Arc::new(KernelOperator::averaging(n))),
            KernelId::Gaussian => Regularizer::Kernel(Arc::new(KernelOperator::gaussian(n, self.kernel_width)?)),
            KernelId::Identity => Regularizer::Identity,
        })
    }

    pub fn model(&self) -> Result<HeatModel> {
        HeatModel::new(self.solver.n_modes, self.family(), self.regularizer()?)
    }

    pub fn initial_condition(&self) -> SpectralField {
        SpectralField::basis(self.solver.n_modes, 1)
            .expect("n_modes >= 1")
            .scaled(self.initial_amplitude)
    }

    pub fn sampler(&self) -> Result<FbmSampler> {
        FbmSampler::new(self.solver.time_steps, self.hurst, self.solver.horizon, self.sampler)
    }
}

/// One observation for a bound: `lhs` against `scale` and `feature`, see [`BoundForm`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundSample {
    pub lhs: f64,
    pub scale: f64,
    pub feature: f64,
}

#[derive(Clone, Debug)]
pub struct PathRecord {
    pub index: usize,
    pub seed: u64,
    /// `Y_1(ξ)`.
    pub value: f64,
    /// `‖x‖_γ`.
    pub driver_holder: f64,
    pub malliavin: MalliavinMatrix,
    /// `‖𝓓 Y_1(ξ)‖_𝓗`.
    pub h_norm: f64,
    pub bounds: BTreeMap<BoundId, BoundSample>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathFailure {
    pub index: usize,
    pub seed: u64,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct Ensemble {
    pub config: ExperimentConfig,
    /// Kernel mass lower bound, `None` without regularization.
    pub c_u: Option<f64>,
    /// `‖φ‖_{𝓑_{2+γ}}`.
    pub phi_norm: f64,
    pub paths: Vec<PathRecord>,
    pub failures: Vec<PathFailure>,
}

impl Ensemble {
    /// Samples of `Y_1(ξ)`, in path order.
    pub fn samples(&self) -> Vec<f64> {
        self.paths.iter().map(|p| p.value).collect()
    }

    pub fn h_norms(&self) -> Vec<f64> {
        self.paths.iter().map(|p| p.h_norm).collect()
    }

    pub fn bound_samples(&self, id: BoundId) -> Vec<BoundSample> {
        self.paths.iter().filter_map(|p| p.bounds.get(&id).copied()).collect()
    }

    /// The first `n` paths, as if the ensemble had been run with `n_paths = n`.
    pub fn truncated(&self, n: usize) -> Ensemble {
        let mut e = self.clone();
        e.config.n_paths = n.min(self.config.n_paths);
        e.paths.retain(|p| p.index < n);
        e.failures.retain(|f| f.index < n);
        e
    }

    /// Per-path summary: index, seed, `Y_1(ξ)`, `‖x‖_γ`, Malliavin sup norm, 𝓗-norm and terminal entries.
    pub fn to_table(&self) -> CsvTable {
        let d = self.config.n_components;
        let header = ["index", "seed", "value", "driver_holder", "malliavin_sup", "h_norm"]
            .into_iter()
            .map(String::from)
            .chain(crate::report::numbered("terminal", d));
        let mut t = CsvTable::new(header);
        for p in &self.paths {
            let mut row = vec![
                p.index as f64,
                p.seed as f64,
                p.value,
                p.driver_holder,
                p.malliavin.sup_norm(),
                p.h_norm,
            ];
            row.extend(p.malliavin.terminal_entries());
            t.push(row);
        }
        t
    }
}

/// Runs `cfg.n_paths` independent paths and computes the samples needed by `cfg.bounds`.
pub fn run_ensemble(cfg: &ExperimentConfig) -> Result<Ensemble> {
    run_ensemble_with(cfg, &cfg.bounds)
}

/// As [`run_ensemble`], computing bound samples only for `bounds`.
pub fn run_ensemble_with(cfg: &ExperimentConfig, bounds: &[BoundId]) -> Result<Ensemble> {
    cfg.validate()?;
    let model = cfg.model()?;
    let sampler = cfg.sampler()?;
    let phi = cfg.initial_condition();
    let alpha = 2.0 + cfg.solver.gamma;
    let phi_norm = phi.sobolev_norm(alpha)?;
    let outcomes: Vec<std::result::Result<PathRecord, PathFailure>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|index| {
            let seed = path_seed(cfg.seed, index as u64);
            let x = sampler.sample(cfg.n_components, seed);
            run_path(cfg, &model, &phi, phi_norm, &x, bounds)
                .map(|(value, driver_holder, malliavin, h_norm, samples)| PathRecord {
                    index,
                    seed,
                    value,
                    driver_holder,
                    malliavin,
                    h_norm,
                    bounds: samples,
                })
                .map_err(|e| PathFailure {
                    index,
                    seed,
                    reason: e.to_string(),
                })
        })
        .collect();
    let mut paths = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(p) => paths.push(p),
            Err(f) => failures.push(f),
        }
    }
    if failures.len() * 100 > cfg.n_paths {
        return Err(Error::EnsembleInvalid {
            failures: failures.len(),
            n_paths: cfg.n_paths,
        });
    }
    Ok(Ensemble {
        config: cfg.clone(),
        c_u: model.regularizer().kernel().map(|k| k.c_u()),
        phi_norm,
        paths,
        failures,
    })
}

type PathOutcome = (f64, f64, MalliavinMatrix, f64, BTreeMap<BoundId, BoundSample>);

fn run_path(
    cfg: &ExperimentConfig,
    model: &HeatModel,
    phi: &SpectralField,
    phi_norm: f64,
    x: &DriverPath,
    bounds: &[BoundId],
) -> Result<PathOutcome> {
    let y = model.solve(phi, x)?;
    let value = y.last().evaluate(cfg.xi)?;
    let lin = model.linearize(&y)?;
    let m = malliavin_matrix_at(model, &lin, x, cfg.xi, x.steps(), cfg.source_stride)?;
    let h_norm = malliavin_h_norm(&m)?;
    if !value.is_finite() || !h_norm.is_finite() {
        return Err(Error::Numeric(format!("non-finite path output (value {value}, h-norm {h_norm})")));
    }
    let xh = holder_norm(x, cfg.solver.gamma);
    let samples = bound_samples(cfg, model, &lin, &y, x, phi_norm, xh, bounds)?;
    Ok((value, xh, m, h_norm, samples))
}

/// `max(‖φ‖^{1/2}, ‖x‖_γ^{1/γ})`.
pub fn bound_feature(phi_norm: f64, driver_holder: f64, gamma: f64) -> f64 {
    phi_norm.sqrt().max(driver_holder.powf(1.0 / gamma))
}

/// Bound observations for one solved path `y` with driver `x`.
#[allow(clippy::too_many_arguments)]
pub fn bound_samples(
    cfg: &ExperimentConfig,
    model: &HeatModel,
    lin: &Linearization,
    y: &FieldPath,
    x: &DriverPath,
    phi_norm: f64,
    driver_holder: f64,
    bounds: &[BoundId],
) -> Result<BTreeMap<BoundId, BoundSample>> {
    let mut out = BTreeMap::new();
    if bounds.is_empty() {
        return Ok(out);
    }
    let gamma = cfg.solver.gamma;
    let kappa = cfg.solver.kappa;
    let alpha = 2.0 + gamma;
    let m = x.steps();
    let feature = bound_feature(phi_norm, driver_holder, gamma);
    let needs = |b: BoundId| bounds.contains(&b);

    let y_norms = if needs(BoundId::Polynomial) || needs(BoundId::Sewing) {
        Some(path_norms(y, 0, m, gamma, alpha)?)
    } else {
        None
    };
    if needs(BoundId::Polynomial) {
        let n = y_norms.expect("computed above");
        out.insert(
            BoundId::Polynomial,
            BoundSample {
                lhs: n.hat_holder,
                scale: (1.0 + driver_holder) * feature.powf(1.0 - gamma),
                feature,
            },
        );
    }
    if needs(BoundId::LinearSup) || needs(BoundId::LinearHolder) {
        let psi = SpectralField::basis(model.n_modes(), 1)?;
        let psi_norm = psi.sobolev_norm(alpha)?;
        let w = FieldPath::semigroup_orbit(&psi, x.dt(), m);
        let z = model.solve_linear(&w, lin, x, 0)?;
        let n = path_norms(&z, 0, m, gamma, alpha)?;
        if needs(BoundId::LinearSup) {
            out.insert(
                BoundId::LinearSup,
                BoundSample {
                    lhs: n.c0,
                    scale: psi_norm,
                    feature,
                },
            );
        }
        if needs(BoundId::LinearHolder) {
            out.insert(
                BoundId::LinearHolder,
                BoundSample {
                    lhs: n.hat_holder,
                    scale: psi_norm * feature,
                    feature,
                },
            );
        }
    }
    if needs(BoundId::FlowHolder) {
        let flows = flow_fields_at_sources(model, lin, x, m, cfg.source_stride)?;
        let c = flow_holder_constant(&flows, cfg.source_stride as f64 * x.dt(), alpha, gamma);
        out.insert(
            BoundId::FlowHolder,
            BoundSample {
                lhs: c,
                scale: 1.0,
                feature,
            },
        );
    }
    if needs(BoundId::Sewing) {
        // y_t − S_{t−s} y_s is the convolutional integral of z = L f(y), so (y, z)
        // is a solution-type pair with λ = 2+γ and α = κ.
        let mut c0 = 0.0f64;
        let mut hold = 0.0f64;
        for i in 0..model.family().len() {
            let fields = y
                .fields()
                .iter()
                .map(|f| model.drift_field(f, i))
                .collect::<Result<Vec<_>>>()?;
            for f in &fields {
                c0 = c0.max(f.sobolev_norm(alpha)?);
            }
            let z = FieldPath::new(x.dt(), 0, fields)?;
            hold = hold.max(path_norms(&z, 0, m, kappa, alpha - kappa)?.holder);
        }
        out.insert(
            BoundId::Sewing,
            BoundSample {
                lhs: y_norms.expect("computed above").hat_holder,
                scale: driver_holder * (c0 + hold),
                feature,
            },
        );
    }
    Ok(out)
}

/// Outcome of [`verify_bound`].
#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub bound: BoundId,
    pub form: BoundForm,
    /// `[C]` for ratio bounds, `[a, b]` (log-intercept, slope) for log-linear ones.
    pub constants: Vec<f64>,
    pub n_train: usize,
    pub n_validate: usize,
    pub train_coverage: f64,
    pub validate_coverage: f64,
    /// Largest held-out `lhs / rhs` with the fitted constants.
    pub max_ratio: f64,
}

impl BoundReport {
    pub fn passes(&self, target: f64) -> bool {
        self.validate_coverage >= target
    }
}

/// Fit-and-validate for `id` on the ensemble's bound samples.
pub fn verify_bound(id: BoundId, ensemble: &Ensemble) -> Result<BoundReport> {
    let samples = ensemble.bound_samples(id);
    if samples.is_empty() {
        return Err(invalid(format!("the ensemble carries no samples for bound {id}")));
    }
    let mut rng = auxiliary_rng(ensemble.config.seed, "bound-split");
    fit_bound(id, &samples, &mut rng)
}

/// Fits the constants of `id` on a random half of `samples` and validates on the rest.
pub fn fit_bound(id: BoundId, samples: &[BoundSample], rng: &mut impl rand::Rng) -> Result<BoundReport> {
    if samples.len() < 2 {
        return Err(invalid(format!("need at least 2 samples to fit a bound, got {}", samples.len())));
    }
    if samples.iter().any(|s| !(s.lhs >= 0.0) || !(s.scale >= 0.0) || !s.feature.is_finite()) {
        return Err(invalid("bound samples must have nonnegative lhs and scale"));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    let half = samples.len() / 2;
    let train: Vec<BoundSample> = order[..half].iter().map(|&i| samples[i]).collect();
    let test: Vec<BoundSample> = order[half..].iter().map(|&i| samples[i]).collect();

    let form = id.form();
    let constants = match form {
        BoundForm::Ratio => vec![train.iter().map(ratio_of).fold(0.0, f64::max)],
        BoundForm::LogLinear => {
            let pts: Vec<(f64, f64)> = train
                .iter()
                .filter(|s| s.lhs > 0.0)
                .map(|s| (s.feature, (s.lhs / s.scale).ln()))
                .collect();
            if pts.is_empty() {
                vec![f64::NEG_INFINITY, 0.0]
            } else {
                let slope = ols_slope(&pts).max(0.0);
                let a = pts.iter().map(|(u, v)| v - slope * u).fold(f64::NEG_INFINITY, f64::max);
                vec![a, slope]
            }
        }
    };
    let rhs = |s: &BoundSample| match form {
        BoundForm::Ratio => constants[0] * s.scale,
        BoundForm::LogLinear => s.scale * (constants[0] + constants[1] * s.feature).exp(),
    };
    let covered = |set: &[BoundSample]| set.iter().filter(|s| s.lhs <= rhs(s) * (1.0 + 1e-12)).count() as f64 / set.len() as f64;
    let max_ratio = test
        .iter()
        .map(|s| {
            let r = rhs(s);
            if s.lhs == 0.0 {
                0.0
            } else if r == 0.0 {
                f64::INFINITY
            } else {
                s.lhs / r
            }
        })
        .fold(0.0, f64::max);
    Ok(BoundReport {
        bound: id,
        form,
        train_coverage: covered(&train),
        validate_coverage: covered(&test),
        n_train: train.len(),
        n_validate: test.len(),
        constants,
        max_ratio,
    })
}

fn ratio_of(s: &BoundSample) -> f64 {
    if s.lhs == 0.0 {
        0.0
    } else {
        s.lhs / s.scale
    }
}

fn ols_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mu = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mu).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mu) * (p.1 - mv)).sum();
    if sxx <= 1e-14 * (1.0 + mu * mu) * n {
        0.0
    } else {
        sxy / sxx
    }
}

/// Gaussian-kernel density estimate on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityEstimate {
    pub points: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
    pub n_samples: usize,
}

impl DensityEstimate {
    /// Trapezoid integral over the grid.
    pub fn integral(&self) -> f64 {
        self.points
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(p, d)| 0.5 * (p[1] - p[0]) * (d[0] + d[1]))
            .sum()
    }

    pub fn to_table(&self) -> CsvTable {
        let mut t = CsvTable::new(["point", "density"]);
        for (p, d) in self.points.iter().zip(&self.density) {
            t.push(vec![*p, *d]);
        }
        t
    }
}

/// `1.06 σ̂ n^{−1/5}` with the unbiased sample deviation.
pub fn rule_of_thumb_bandwidth(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(invalid(format!("need at least 2 samples, got {}", samples.len())));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let h = 1.06 * var.sqrt() * n.powf(-0.2);
    if h > 0.0 && h.is_finite() {
        Ok(h)
    } else {
        Err(Error::Numeric(format!("degenerate sample spread gives bandwidth {h}")))
    }
}

/// KDE on a grid spanning `[min − 4h, max + 4h]` with spacing at most `h/8`.
pub fn kde(samples: &[f64], bandwidth: f64) -> Result<DensityEstimate> {
    check_kde(samples, bandwidth)?;
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min) - 4.0 * bandwidth;
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 4.0 * bandwidth;
    let n = (((hi - lo) / (bandwidth / 8.0)).ceil() as usize).clamp(256, 1 << 16) + 1;
    let points: Vec<f64> = (0..n).map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64).collect();
    kde_at(samples, bandwidth, &points)
}

/// KDE evaluated at the given points.
pub fn kde_at(samples: &[f64], bandwidth: f64, points: &[f64]) -> Result<DensityEstimate> {
    check_kde(samples, bandwidth)?;
    let norm = 1.0 / (samples.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let density = points
        .par_iter()
        .map(|p| {
            norm * samples
                .iter()
                .map(|s| {
                    let u = (p - s) / bandwidth;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
        })
        .collect();
    Ok(DensityEstimate {
        points: points.to_vec(),
        density,
        bandwidth,
        n_samples: samples.len(),
    })
}

fn check_kde(samples: &[f64], bandwidth: f64) -> Result<()> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(invalid(format!("bandwidth must be positive, got {bandwidth}")));
    }
    if samples.len() < 2 {
        return Err(invalid(format!("need at least 2 samples, got {}", samples.len())));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(invalid("samples must be finite"));
    }
    Ok(())
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(samples: &[f64], q: f64) -> f64 {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Outcome of [`inverse_moment_estimate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InverseMoment {
    pub p: f64,
    /// Mean of `x^{−p}` over all samples.
    pub estimate: f64,
    /// Same over the first half of the samples.
    pub half_estimate: f64,
    /// `|half − full| / full`.
    pub relative_gap: f64,
    /// `relative_gap ≤ 0.25`.
    pub stable: bool,
}

/// Sample mean of `x^{−p}` with a half-sample stability check.
pub fn inverse_moment_estimate(h_norms: &[f64], p: f64) -> Result<InverseMoment> {
    if !(p >= 0.0) || !p.is_finite() {
        return Err(invalid(format!("moment order must be finite and >= 0, got {p}")));
    }
    if h_norms.is_empty() {
        return Err(invalid("no samples"));
    }
    if let Some(v) = h_norms.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::DegenerateDerivative(format!("nonpositive Malliavin norm {v}")));
    }
    // running mean is exact when all terms are equal
    let mean = |xs: &[f64]| {
        xs.iter()
            .enumerate()
            .fold(0.0, |m, (k, v)| m + (v.powf(-p) - m) / (k + 1) as f64)
    };
    let estimate = mean(h_norms);
    let half_estimate = mean(&h_norms[..h_norms.len().div_ceil(2)]);
    let relative_gap = (half_estimate - estimate).abs() / estimate;
    Ok(InverseMoment {
        p,
        estimate,
        half_estimate,
        relative_gap,
        stable: estimate.is_finite() && relative_gap <= 0.25,
    })
}

/// One row of [`small_ball_diagnostic`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmallBallRow {
    pub epsilon: f64,
    /// `P̂[‖𝓓‖_∞ < ε^α]`.
    pub p_small_sup: f64,
    /// `P̂[‖𝓓‖_β > ε^{−α}]`.
    pub p_large_holder: f64,
}

/// Empirical frequencies of the two small-ball events over the ensemble's Malliavin matrices.
pub fn small_ball_diagnostic(matrices: &[&MalliavinMatrix], epsilons: &[f64], alpha: f64, beta: f64) -> Result<Vec<SmallBallRow>> {
    if matrices.is_empty() {
        return Err(invalid("no Malliavin data"));
    }
    if let Some(h) = matrices[0].hurst {
        if !(beta > h - 0.5) {
            return Err(invalid(format!("beta must exceed H − 1/2 = {}, got {beta}", h - 0.5)));
        }
    }
    if !(alpha > 0.0) {
        return Err(invalid(format!("alpha must be positive, got {alpha}")));
    }
    let sups: Vec<f64> = matrices.iter().map(|m| m.sup_norm()).collect();
    let holders: Vec<f64> = matrices.iter().map(|m| m.holder_constant(beta)).collect();
    let n = matrices.len() as f64;
    Ok(epsilons
        .iter()
        .map(|&eps| {
            let a = eps.powf(alpha);
            SmallBallRow {
                epsilon: eps,
                p_small_sup: sups.iter().filter(|s| **s < a).count() as f64 / n,
                p_large_holder: holders.iter().filter(|h| **h > 1.0 / a).count() as f64 / n,
            }
        })
        .collect())
}

pub fn small_ball_table(rows: &[SmallBallRow]) -> CsvTable {
    let mut t = CsvTable::new(["epsilon", "p_small_sup", "p_large_holder"]);
    for r in rows {
        t.push(vec![r.epsilon, r.p_small_sup, r.p_large_holder]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn small_cfg(n_paths: usize) -> ExperimentConfig {
        ExperimentConfig {
            n_paths,
            solver: SolverConfig {
                n_modes: 8,
                time_steps: 64,
                ..SolverConfig::default()
            },
            bounds: vec![],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn ensemble_is_deterministic() {
        let cfg = small_cfg(8);
        let a = run_ensemble(&cfg).unwrap();
        let b = run_ensemble(&cfg).unwrap();
        assert_eq!(a.samples(), b.samples());
        assert_eq!(a.h_norms(), b.h_norms());
        assert_eq!(a.paths.len() + a.failures.len(), 8);
        let c = run_ensemble(&ExperimentConfig { n_paths: 4, ..cfg }).unwrap();
        assert_eq!(c.samples(), a.samples()[..4]);
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let bad = ExperimentConfig {
            hurst: 0.4,
            ..ExperimentConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Validation(m)) if m.contains("hurst")));
        let bad = ExperimentConfig {
            xi: 1.0,
            ..ExperimentConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig {
            n_paths: 1,
            ..ExperimentConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn bound_ids_parse() {
        for b in BoundId::ALL {
            assert_eq!(b.as_str().parse::<BoundId>().unwrap(), b);
            let j = serde_json::to_string(&b).unwrap();
            assert_eq!(j, format!("\"{}\"", b.as_str()));
        }
        assert!(matches!("poly".parse::<BoundId>(), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn kde_mass_and_single_bump() {
        let d = kde(&[0.3, 0.3], 0.1).unwrap();
        assert!((d.integral() - 1.0).abs() < 1e-3);
        let (imax, _) = d
            .density
            .iter()
            .enumerate()
            .fold((0, 0.0), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc });
        assert!((d.points[imax] - 0.3).abs() <= d.points[1] - d.points[0]);
        let peak = 1.0 / (0.1 * (2.0 * std::f64::consts::PI).sqrt());
        assert!((d.density[imax] - peak).abs() < 1e-3 * peak);
        assert!(kde(&[0.0, 1.0], 0.0).is_err());
        assert!(kde(&[0.0, 1.0], -1.0).is_err());
    }

    #[test]
    fn inverse_moments_trivial_cases() {
        let r = inverse_moment_estimate(&[0.3, 2.0, 5.0], 0.0).unwrap();
        assert_eq!(r.estimate, 1.0);
        let c: f64 = 0.7;
        let r = inverse_moment_estimate(&[c; 9], 2.5).unwrap();
        assert_eq!(r.estimate, c.powf(-2.5));
        assert!(r.stable);
        assert!(matches!(
            inverse_moment_estimate(&[1.0, 0.0], 1.0),
            Err(Error::DegenerateDerivative(_))
        ));
    }

    #[test]
    fn ratio_fit_covers_training_half() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let samples: Vec<BoundSample> = (0..50)
            .map(|k| BoundSample {
                lhs: 1.0 + (k % 7) as f64,
                scale: 2.0,
                feature: k as f64,
            })
            .collect();
        let r = fit_bound(BoundId::Polynomial, &samples, &mut rng).unwrap();
        assert_eq!(r.train_coverage, 1.0);
        assert!(r.constants[0] <= 4.0);
        let zeros = vec![
            BoundSample {
                lhs: 0.0,
                scale: 1.0,
                feature: 1.0
            };
            10
        ];
        let r = fit_bound(BoundId::LinearSup, &zeros, &mut rng).unwrap();
        assert_eq!(r.validate_coverage, 1.0);
    }
}
