use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid dimension {0}: must be at least 1")]
    InvalidDimension(usize),

    #[error("non-finite coordinate in point")]
    NonFinite,

    #[error("invalid radius {0}: must be positive and finite")]
    InvalidRadius(f64),

    #[error("empty ball list")]
    EmptyBallList,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid radius distribution: {0}")]
    InvalidDistribution(String),

    #[error("thinning aborted after {0} consecutive rejections; the acceptance region has negligible measure")]
    RejectionGuard(u64),

    #[error(
        "explosion guard: {events} outbursts before time {time}; finite d-th radius moment makes this impossible almost surely"
    )]
    Explosion { events: usize, time: f64 },

    #[error("tie between competing candidate times at {0}")]
    CandidateTie(f64),

    #[error("coupling certificate `{check}` failed at event {event_seq} (time {time})")]
    CertificateViolation {
        check: String,
        event_seq: usize,
        time: f64,
    },

    #[error("config errors:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
