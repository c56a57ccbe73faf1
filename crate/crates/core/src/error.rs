use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("raster dimensions {got:?} do not match intrinsics {expected:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("degenerate trajectory: {flagged} of {total} positions flagged as outliers")]
    DegenerateTrajectory { flagged: usize, total: usize },
    #[error("insufficient trajectory: {bins} nonempty bin(s), need at least 2")]
    InsufficientTrajectory { bins: usize },
    #[error("centerline is empty")]
    EmptyCenterline,
    #[error("frame {0} is already integrated")]
    AlreadyIntegrated(u64),
    #[error("frame {0} is not integrated")]
    NotIntegrated(u64),
    #[error("unknown segment {0}")]
    UnknownSegment(u32),
    #[error("segment {0} already exists")]
    SegmentExists(u32),
    #[error("frame {0} already arrived")]
    DuplicateFrame(u64),
    #[error("unknown frame {0}")]
    UnknownFrame(u64),
    #[error("camera row {row} lies outside the scanned extent of band {segment}")]
    StaleImage { segment: u32, row: i64 },
    #[error("camera up-vector projects to near-zero length on the cross-section plane")]
    DegenerateProjection,
    #[error("label lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("value {value} out of range: {what}")]
    OutOfRange { what: &'static str, value: f64 },
    #[error("camera is outside the tube at axis position {s:.2} mm")]
    CameraOutsideTube { s: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no frames")]
    NoFrames,
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
