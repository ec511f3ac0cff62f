use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:e})")]
    NotPSD { min_eig: f64 },
    #[error("non-finite value encountered")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not exactly symmetric")]
    NotSymmetric,
    #[error("matrix is not exactly skew-symmetric")]
    NotSkew,
    #[error("time argument {0} is negative")]
    NegativeTime(f64),
    #[error("odd extension is undefined at zero when chi(0+) != 0")]
    UndefinedAtZero,
    #[error("evaluation at a real pole of the transform (zeta = {re} + {im}i)")]
    PoleOnAxis { re: f64, im: f64 },
    #[error("dissipation tail not resolved at the cutoff (residual {residual:e} > tol {tol:e})")]
    TailNotResolved { residual: f64, tol: f64 },
    #[error("string extent {available} too small, light cone needs {required}")]
    LightConeViolation { required: f64, available: f64 },
    #[error("midpoint solve did not converge after {iterations} iterations")]
    SolverDiverged { iterations: usize },
    #[error("singular step matrix in the Volterra march")]
    SingularStep,
    #[error("signal under-sampled: {samples_per_period:.2} samples per carrier period (need 20)")]
    UnderSampled { samples_per_period: f64 },
    #[error("averaging window too short: sigma*omega = {sigma_omega:.3}")]
    WindowTooShort { sigma_omega: f64 },
    #[error("model is lossy at the carrier (|Im chi_hat| = {im_norm:e})")]
    NotLossless { im_norm: f64 },
    #[error("grid too coarse: {points_per_wavelength:.1} points per wavelength (need 20)")]
    GridTooCoarse { points_per_wavelength: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
