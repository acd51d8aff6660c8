pub mod error;
pub mod fbm;
pub mod quadrature;
pub mod report;
pub mod seed;
pub mod spectral;
pub mod solver;
pub mod young;
pub mod malliavin;
pub mod density;
pub mod cli;

pub use density::{
    inverse_moment_estimate, kde, run_ensemble, small_ball_diagnostic, verify_bound, BoundId, DensityEstimate, Ensemble,
    ExperimentConfig,
};
pub use error::{Error, Result};
pub use fbm::{covariance, sample_path, DriverPath, FbmSampler, SamplingMethod, VolterraKernel};
pub use malliavin::{
    directional_derivative, malliavin_matrix, representation_integral, second_directional_derivative, MalliavinMatrix,
};
pub use solver::{picard_oracle, solve, solve_linear, HeatModel, KernelOperator, NemytskiiFamily, Regularizer, SolverConfig};
pub use spectral::{collocation_transform, pointwise_map, SpectralField, TransformDirection};
pub use young::{conv_integral, conv_riemann_sum, path_norms, FieldPath};
