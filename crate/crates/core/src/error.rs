use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not a rotation (orthonormality error {0:.3e})")]
    InvalidRotation(f64),
    #[error("depth {0} is not positive")]
    NonPositiveDepth(f64),
    #[error("point lies at or behind the camera plane (z = {0})")]
    BehindCamera(f64),
    #[error("quaternion has zero norm")]
    ZeroQuaternion,
    #[error("weights sum to zero or contain negative/non-finite values")]
    DegenerateWeights,
    #[error("need at least {needed} correspondences, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("degenerate geometry: cross-covariance rank < 2")]
    DegenerateGeometry,
    #[error("degenerate gradient: singular value gap {gap:.3e} below threshold")]
    DegenerateGradient { gap: f64 },
    #[error("operation `{0}` is not in the tape vocabulary")]
    UnknownOp(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no RANSAC hypothesis reached consensus")]
    NoConsensus,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("could not place {frames} frame(s) with enough visible landmarks")]
    Visibility { frames: usize },
    #[error("frame {0} sees no landmark")]
    NothingVisible(usize),
    #[error("training aborted: {skipped} of {total} frames skipped in epoch {epoch}")]
    TrainingAborted {
        epoch: usize,
        skipped: usize,
        total: usize,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
