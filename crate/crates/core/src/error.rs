use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("RANSAC found no hypothesis with at least {min} inliers (best had {best})")]
    NoConsensus { min: usize, best: usize },

    #[error("intrinsics matrix is not invertible")]
    SingularIntrinsics,

    #[error("cheirality is ambiguous: {count} positive-depth points for more than one candidate")]
    CheiralityAmbiguous { count: usize },

    #[error("triangulated point is at infinity (|w| = {0:e})")]
    PointAtInfinity(f64),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("zero extent: {0}")]
    ZeroExtent(&'static str),

    #[error("degenerate shape: {0}")]
    DegenerateShape(&'static str),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("point behind camera (depth {0})")]
    BehindCamera(f64),

    #[error("gating left too few views: {0}")]
    InsufficientViews(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("non-finite loss at epoch {epoch}, step {step}: L_T = {triangulation}, L_R = {reprojection}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        triangulation: f64,
        reprojection: f64,
    },

    #[error("sequence too short: {0} frames")]
    SequenceTooShort(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
