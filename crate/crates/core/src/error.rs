use thiserror::Error;

/// Errors produced by the calibration engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("degenerate line segment: endpoints coincide or back-project to parallel rays")]
    DegenerateSegment,
    #[error("degenerate vanishing direction: |v_z| = {0:e} is too small")]
    DegenerateVd(f64),
    #[error("segments are collinear, no unique intersection")]
    CollinearPair,
    #[error("angle undefined: segment midpoint coincides with the vanishing point")]
    UndefinedAngle,
    #[error("empty input")]
    EmptyInput,
    #[error("rank-deficient system, vanishing direction is not unique")]
    RankDeficient,
    #[error("too few segments: {0} (need at least 2)")]
    TooFewSegments(usize),
    #[error("no consensus: best inlier set has {0} member(s)")]
    NoConsensus(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error("point lies at or behind the rectified horizon")]
    HorizonLine,
    #[error("tangent singularity: shifted line angle is too close to +-90 degrees")]
    TangentSingularity,
    #[error("too few lane boundaries: {0} (need at least 3)")]
    TooFewBoundaries(usize),
    #[error("too few lane pairs: {0} (need at least 2)")]
    TooFewPairs(usize),
    #[error("Gauss-Newton did not converge: {0}")]
    NonConvergence(String),
    #[error("homography is not invertible")]
    NonInvertibleHomography,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
