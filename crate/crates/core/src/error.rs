use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("coupling term needs two distinct qubits, got {0} twice")]
    SelfCoupling(usize),

    #[error("qubit {site} out of range for a {n_qubits}-qubit register")]
    SiteOutOfRange { site: usize, n_qubits: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("no channel has a positive rate; cannot sample a jump")]
    DarkState,

    #[error("time step too coarse: total jump probability {probability:.4} per step exceeds 0.1 at t = {time}")]
    StepTooCoarse { probability: f64, time: f64 },

    #[error("master-equation integration failed at t = {time}: {reason}")]
    IntegrationFailure { time: f64, reason: String },

    #[error("trajectory failed at phi = {phi} (trajectory {trajectory}): {source}")]
    Trajectory {
        phi: f64,
        trajectory: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("g2 undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("cannot aggregate records with different parameters: {0}")]
    MixedRecords(String),

    #[error("phi grid is not symmetric about zero: {0}")]
    AsymmetricGrid(String),

    #[error("failed to parse {what}: {reason}")]
    Parse { what: String, reason: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidLattice(_)
            | Error::InvalidConfig(_)
            | Error::SelfCoupling(_)
            | Error::SiteOutOfRange { .. }
            | Error::DimensionMismatch { .. }
            | Error::MixedRecords(_)
            | Error::AsymmetricGrid(_)
            | Error::Parse { .. } => 1,
            Error::DarkState
            | Error::StepTooCoarse { .. }
            | Error::IntegrationFailure { .. }
            | Error::UndefinedCorrelation(_) => 2,
            Error::Trajectory { source, .. } => source.exit_code(),
            Error::Io { .. } => 3,
        }
    }
}
