use thiserror::Error;

/// Errors raised by the estimation, control and simulation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("rotation argument norm {norm} exceeds pi")]
    RotationRange { norm: f64 },

    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),

    #[error("invalid quaternion: {0}")]
    InvalidQuaternion(String),

    #[error("matrix is not symmetric positive definite")]
    NotSpd,

    #[error("grasp matrix is singular")]
    SingularGrasp,

    #[error("all particle weights are zero")]
    EstimatorDiverged,

    #[error("simulation fault: {0}")]
    SimFault(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
