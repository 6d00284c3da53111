use thiserror::Error;

/// Error type shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A scalar parameter failed validation. `name` is the offending field.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// A tail vector violated one of its structural constraints. The index
    /// is 1-based (position `k` in the sequence).
    #[error("invalid tail vector at k={index}: {reason}")]
    InvalidTail { index: usize, reason: String },

    /// Input slice longer than the weight sequence it is measured against.
    #[error("length mismatch: sequence has {actual} entries, limit is {expected}")]
    LengthMismatch { expected: usize, actual: usize },

    /// An integrator stage left the admissible band `[-eps, 1+eps]`. Either
    /// the step size is too large or the truncation level too small.
    #[error("integrator stage rejected at t={t}, k={k}: value {value} outside [-1e-9, 1+1e-9]")]
    StepRejected { t: f64, k: usize, value: f64 },

    /// A simulated arrival targeted a queue already at the truncation level.
    #[error("state buffer overflow at t={t}: jump beyond kmax={kmax}, increase kmax")]
    BufferOverflow { t: f64, kmax: usize },

    /// Times of two trajectories could not be aligned within tolerance.
    #[error("time grids incompatible near t={t} (max interpolation gap {max_gap})")]
    TimeGridMismatch { t: f64, max_gap: f64 },

    /// A fit window fell outside the trajectory or contained no points.
    #[error("invalid fit window [{t0}, {t1}]: {reason}")]
    InvalidWindow { t0: f64, t1: f64, reason: String },

    /// A noise schedule does not cover the requested horizon.
    #[error("drift/noise schedule covers [0, {covered}] but t_end={t_end}")]
    ScheduleGap { covered: f64, t_end: f64 },

    /// Internal dual-path consistency check failed.
    #[error("dual-path disagreement in {what}: max difference {diff} exceeds {tol}")]
    DualPathDisagreement { what: &'static str, diff: f64, tol: f64 },

    /// A covariance factorization found an eigenvalue below the repair floor.
    #[error("matrix not positive semidefinite: eigenvalue {eigenvalue} below floor {floor}")]
    NotPositiveSemidefinite { eigenvalue: f64, floor: f64 },

    /// The Lyapunov solve left a residual beyond tolerance (truncation or
    /// conditioning failure).
    #[error("Lyapunov residual {residual} exceeds {tol}")]
    LyapunovResidual { residual: f64, tol: f64 },

    /// JSON (de)serialization failure.
    #[error("serialization: {0}")]
    Serialization(#[from] serde_json::Error),

    /// File output failure.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
