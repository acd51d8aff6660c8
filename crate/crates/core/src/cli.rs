//! Batch front end: config parsing, subcommand runners and CSV emission.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::density::{
    inverse_moment_estimate, kde, run_ensemble_with, small_ball_diagnostic, small_ball_table, verify_bound, BoundForm,
    Ensemble, ExperimentConfig,
};
use crate::error::{Error, Result};
use crate::fbm::SamplingMethod;
use crate::malliavin::{malliavin_h_norm, malliavin_matrix_at, nondegeneracy_check};
use crate::report::CsvTable;
use crate::seed::path_seed;
use crate::young::{refinement_study, FieldPath, SnapshotMode};

pub const VERSION: &str = concat!("fracheat ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Parser)]
#[command(name = "fracheat", version, about = "Spectral lab for the fBm-driven stochastic heat equation")]
pub struct Cli {
    /// JSON experiment configuration; missing keys take defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory for CSV reports.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long, global = true, value_name = "INT")]
    pub seed: Option<u64>,
    /// Worker threads (default: machine parallelism).
    #[arg(long, global = true, value_name = "INT", env = "FRACHEAT_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case", tag = "name")]
pub enum Command {
    /// One fBm path on the solver grid.
    SampleFbm(SampleFbmArgs),
    /// One solution path of the regularized equation.
    Solve(SolveArgs),
    /// Malliavin matrix of Y_1(ξ) along one path.
    Malliavin(MalliavinArgs),
    /// Ensemble density estimate, inverse moments and small-ball table.
    Density(DensityArgs),
    /// Fit-and-validate stress tests of the a-priori bounds.
    VerifyBounds(VerifyBoundsArgs),
    /// Dyadic refinement of the convolutional Riemann sums.
    Convergence(ConvergenceArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SampleFbm(_) => "sample-fbm",
            Command::Solve(_) => "solve",
            Command::Malliavin(_) => "malliavin",
            Command::Density(_) => "density",
            Command::VerifyBounds(_) => "verify-bounds",
            Command::Convergence(_) => "convergence",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    Factorization,
    Volterra,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SampleFbmArgs {
    /// Sampler, overriding the config.
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Ensemble index of the path.
    #[arg(long, default_value_t = 0)]
    pub path_index: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SnapshotArg {
    Coefficients,
    GridValues,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolveArgs {
    #[arg(long, value_enum, default_value_t = SnapshotArg::Coefficients)]
    pub snapshot: SnapshotArg,
    #[arg(long, default_value_t = 0)]
    pub path_index: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MalliavinArgs {
    #[arg(long, default_value_t = 0)]
    pub path_index: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DensityArgs {
    /// Exponent α of the small-ball events.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Hölder exponent β of the small-ball events (must exceed H − 1/2).
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyBoundsArgs {
    /// Bound ids to test (repeatable); defaults to the config's list.
    #[arg(long = "bound")]
    pub bounds: Vec<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ConvergenceArgs {
    /// Number of pieces of the coarsest partition.
    #[arg(long, default_value_t = 8)]
    pub coarsest: usize,
    /// Sobolev order of the norm used for successive differences.
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
}

/// Parses an experiment config from JSON text.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and validates an experiment config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    parse_config_str(&text)
}

/// Recorded in the `#` header line of every emitted file.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: Command,
    pub config: ExperimentConfig,
    pub config_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub version: String,
}

impl RunManifest {
    pub fn header(&self) -> String {
        serde_json::to_string(self).expect("manifest serializes")
    }
}

/// Named CSV tables produced by one subcommand.
#[derive(Clone, Debug, Default)]
pub struct Report {
    pub files: Vec<(String, CsvTable)>,
}

impl Report {
    fn add(&mut self, name: &str, table: CsvTable) {
        self.files.push((name.to_string(), table));
    }

    pub fn table(&self, name: &str) -> Option<&CsvTable> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

/// Writes every table of `report` into `out_dir`, each headed by the manifest line.
pub fn emit_report(report: &Report, manifest: &RunManifest, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let header = manifest.header();
    report
        .files
        .iter()
        .map(|(name, table)| {
            let path = out_dir.join(name);
            fs::write(&path, table.render(Some(&header)))?;
            Ok(path)
        })
        .collect()
}

/// Resolves the config (file, then `--seed`) and builds the manifest.
pub fn resolve(cli: &Cli) -> Result<RunManifest> {
    let mut config = match &cli.config {
        Some(p) => parse_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Command::SampleFbm(SampleFbmArgs { method: Some(m), .. }) = &cli.command {
        config.sampler = match m {
            MethodArg::Factorization => SamplingMethod::Factorization,
            MethodArg::Volterra => SamplingMethod::Volterra,
        };
    }
    if let Command::VerifyBounds(a) = &cli.command {
        if !a.bounds.is_empty() {
            config.bounds = a.bounds.iter().map(|b| b.parse()).collect::<Result<_>>()?;
        }
    }
    config.validate()?;
    Ok(RunManifest {
        subcommand: cli.command.clone(),
        seed: config.seed,
        config,
        config_path: cli.config.clone(),
        out_dir: cli.out.clone(),
        version: VERSION.to_string(),
    })
}

/// Runs the subcommand recorded in the manifest.
pub fn run(manifest: &RunManifest) -> Result<Report> {
    let cfg = &manifest.config;
    match &manifest.subcommand {
        Command::SampleFbm(a) => sample_fbm(cfg, a),
        Command::Solve(a) => solve(cfg, a),
        Command::Malliavin(a) => malliavin(cfg, a),
        Command::Density(a) => density(cfg, a),
        Command::VerifyBounds(_) => verify_bounds(cfg),
        Command::Convergence(a) => convergence(cfg, a),
    }
}

/// Full CLI entry: resolve, run, emit. Returns the written paths.
pub fn execute(cli: &Cli) -> Result<Vec<PathBuf>> {
    let manifest = resolve(cli)?;
    let report = run(&manifest)?;
    emit_report(&report, &manifest, &cli.out)
}

fn sample_fbm(cfg: &ExperimentConfig, a: &SampleFbmArgs) -> Result<Report> {
    let x = cfg.sampler()?.sample(cfg.n_components, path_seed(cfg.seed, a.path_index));
    let mut r = Report::default();
    r.add("fbm.csv", x.to_table());
    Ok(r)
}

fn solve(cfg: &ExperimentConfig, a: &SolveArgs) -> Result<Report> {
    let model = cfg.model()?;
    let x = cfg.sampler()?.sample(cfg.n_components, path_seed(cfg.seed, a.path_index));
    let y = model.solve(&cfg.initial_condition(), &x)?;
    let mode = match a.snapshot {
        SnapshotArg::Coefficients => SnapshotMode::Coefficients,
        SnapshotArg::GridValues => SnapshotMode::GridValues,
    };
    let mut r = Report::default();
    r.add("fbm.csv", x.to_table());
    r.add("solution.csv", y.to_table(mode));
    Ok(r)
}

fn malliavin(cfg: &ExperimentConfig, a: &MalliavinArgs) -> Result<Report> {
    let model = cfg.model()?;
    let x = cfg.sampler()?.sample(cfg.n_components, path_seed(cfg.seed, a.path_index));
    let y = model.solve(&cfg.initial_condition(), &x)?;
    let lin = model.linearize(&y)?;
    let m = malliavin_matrix_at(&model, &lin, &x, cfg.xi, x.steps(), cfg.source_stride)?;
    let c_u = model.regularizer().kernel().map_or(1.0, |k| k.c_u());
    let nd = nondegeneracy_check(&m, c_u, cfg.lambda_0);
    let mut summary = CsvTable::new([
        "value",
        "h_norm",
        "sup_norm",
        "min_terminal_entry",
        "max_terminal_entry",
        "threshold",
        "passes",
    ]);
    summary.push(vec![
        y.last().evaluate(cfg.xi)?,
        malliavin_h_norm(&m)?,
        m.sup_norm(),
        nd.min_terminal_entry,
        nd.max_terminal_entry,
        nd.threshold,
        if nd.passes { 1.0 } else { 0.0 },
    ]);
    let mut r = Report::default();
    r.add("malliavin_matrix.csv", m.to_table());
    r.add("malliavin_summary.csv", summary);
    Ok(r)
}

/// Default ε grid of the small-ball table: `10^{−k/4}`, `k = 0..=16`.
pub fn default_epsilons() -> Vec<f64> {
    (0..=16).map(|k| 10f64.powf(-(k as f64) / 4.0)).collect()
}

fn density(cfg: &ExperimentConfig, a: &DensityArgs) -> Result<Report> {
    let e = run_ensemble_with(cfg, &[])?;
    let samples = e.samples();
    let h = cfg.bandwidth.bandwidth(&samples)?;
    let est = kde(&samples, h)?;
    let mut moments = CsvTable::new(["p", "estimate", "half_estimate", "relative_gap", "stable"]);
    for p in [1.0, 2.0, 4.0] {
        let m = inverse_moment_estimate(&e.h_norms(), p)?;
        moments.push(vec![p, m.estimate, m.half_estimate, m.relative_gap, if m.stable { 1.0 } else { 0.0 }]);
    }
    let matrices: Vec<_> = e.paths.iter().map(|p| &p.malliavin).collect();
    let sb = small_ball_diagnostic(&matrices, &default_epsilons(), a.alpha, a.beta)?;
    let mut r = Report::default();
    r.add("density.csv", est.to_table());
    r.add("ensemble.csv", e.to_table());
    r.add("failures.csv", failures_table(&e));
    r.add("inverse_moments.csv", moments);
    r.add("small_ball.csv", small_ball_table(&sb));
    Ok(r)
}

fn failures_table(e: &Ensemble) -> CsvTable {
    let mut t = CsvTable::labeled("reason", ["index", "seed"]);
    for f in &e.failures {
        t.push_labeled(format!("\"{}\"", f.reason.replace('"', "'")), vec![f.index as f64, f.seed as f64]);
    }
    t
}

fn verify_bounds(cfg: &ExperimentConfig) -> Result<Report> {
    let e = run_ensemble_with(cfg, &cfg.bounds)?;
    let mut summary = CsvTable::labeled(
        "bound",
        [
            "log_constant",
            "slope",
            "n_train",
            "n_validate",
            "train_coverage",
            "validate_coverage",
            "max_ratio",
        ],
    );
    let mut samples = CsvTable::labeled("bound", ["index", "lhs", "scale", "feature"]);
    for &b in &cfg.bounds {
        let rep = verify_bound(b, &e)?;
        let (log_c, slope) = match rep.form {
            BoundForm::Ratio => (rep.constants[0].ln(), 0.0),
            BoundForm::LogLinear => (rep.constants[0], rep.constants[1]),
        };
        summary.push_labeled(
            b.as_str(),
            vec![
                log_c,
                slope,
                rep.n_train as f64,
                rep.n_validate as f64,
                rep.train_coverage,
                rep.validate_coverage,
                rep.max_ratio,
            ],
        );
        for p in &e.paths {
            if let Some(s) = p.bounds.get(&b) {
                samples.push_labeled(b.as_str(), vec![p.index as f64, s.lhs, s.scale, s.feature]);
            }
        }
    }
    let mut r = Report::default();
    r.add("bounds.csv", summary);
    r.add("bound_samples.csv", samples);
    r.add("failures.csv", failures_table(&e));
    Ok(r)
}

fn convergence(cfg: &ExperimentConfig, a: &ConvergenceArgs) -> Result<Report> {
    let model = cfg.model()?;
    let x = cfg.sampler()?.sample(cfg.n_components, path_seed(cfg.seed, 0));
    let y = model.solve(&cfg.initial_condition(), &x)?;
    let z = (0..cfg.n_components)
        .map(|i| {
            let fields = y
                .fields()
                .iter()
                .map(|f| model.drift_field(f, i))
                .collect::<Result<Vec<_>>>()?;
            FieldPath::new(x.dt(), 0, fields)
        })
        .collect::<Result<Vec<_>>>()?;
    let study = refinement_study(&z, &x, 0, x.steps(), a.coarsest, a.alpha)?;
    let mut order = CsvTable::new(["order", "target"]);
    order.push(vec![study.order, cfg.solver.gamma + cfg.solver.kappa - 1.0]);
    let mut r = Report::default();
    r.add("convergence.csv", study.to_table());
    r.add("convergence_order.csv", order);
    Ok(r)
}
