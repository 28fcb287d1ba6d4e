use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid aperture: {0}")]
    InvalidAperture(String),
    #[error("degenerate aperture: L·f_c/c = ({bound_x:.4}, {bound_y:.4}) leaves only the zero harmonic row")]
    DegenerateAperture { bound_x: f64, bound_y: f64 },
    #[error("ordinal {ordinal} out of range 1..={len}")]
    OrdinalOutOfRange { ordinal: usize, len: usize },
    #[error("harmonic ({m_x}, {m_y}) is not a propagating lattice member")]
    NotInLattice { m_x: i64, m_y: i64 },
    #[error("angle out of domain: theta={theta}, phi={phi}")]
    AngleDomain { theta: f64, phi: f64 },
    #[error("invalid mixture: {0}")]
    InvalidMixture(String),
    #[error("quadrature did not converge on cell ({m_x}, {m_y}): {detail}")]
    Quadrature { m_x: i64, m_y: i64, detail: String },
    #[error("memory budget exceeded: {requested} elements requested, budget {budget}")]
    MemoryBudget { requested: u128, budget: u128 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("RF chain count {n_rf} outside 1..={len}")]
    RfChainCount { n_rf: usize, len: usize },
    #[error("mean resultant length {0} is outside the Langevin range [0, 1)")]
    InfeasibleConcentration(f64),
    #[error("sample set carries no power")]
    NoSignal,
    #[error("cluster {0} received no responsibility mass")]
    StarvedCluster(usize),
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
    #[error("sparsity {k} must lie in 1..={n_rf}")]
    Sparsity { k: usize, n_rf: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }
}
