use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("quaternion norm {0} is not within tolerance of 1")]
    NonUnitQuaternion(f64),
    #[error("invalid vehicle parameters: {0}")]
    InvalidParams(String),
    #[error("time step must be positive, got {0}")]
    InvalidTimestep(f64),
    #[error("integration diverged (non-finite state)")]
    Diverged,
    #[error("hover is infeasible with these parameters")]
    HoverInfeasible,
    #[error("batch length mismatch: {states} states, {actions} actions, {disturbances} disturbances")]
    BatchMismatch {
        states: usize,
        actions: usize,
        disturbances: usize,
    },
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("input dimension mismatch: expected {expected}, got {got}")]
    InputDim { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("cannot sample from an empty replay buffer")]
    Empty,
    #[error("replay capacity must be positive")]
    ZeroCapacity,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed config document: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite {what} loss at step {step}")]
    NonFiniteLoss { what: &'static str, step: u64 },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Error)]
pub enum TrackingError {
    #[error("series length mismatch: {actual} actual vs {reference} reference")]
    LengthMismatch { actual: usize, reference: usize },
    #[error("cycle time must be positive, got {0}")]
    InvalidCycleTime(f64),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("architecture mismatch: {0}")]
    Architecture(String),
}
