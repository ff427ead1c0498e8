use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("point {index} lies outside the unit cube: {position:?}")]
    PointOutOfUnitCube { index: usize, position: [f64; 3] },
    #[error("invalid max depth {0} (expected 1..=10)")]
    InvalidDepth(u32),
    #[error("node at depth {depth}, index {index} cannot be subdivided: {reason}")]
    NotSubdividable {
        depth: u8,
        index: usize,
        reason: &'static str,
    },
    #[error("octree invariant violated: {0}")]
    InvalidOctree(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("negative input value {value} at index {index}")]
    NegativeInput { index: usize, value: f64 },
    #[error("validity mask selects no pixels")]
    EmptyMask,
    #[error("octree depth mismatch: {pred} vs {gt}")]
    DepthMismatch { pred: u8, gt: u8 },
    #[error("degenerate march schedule (growth {growth:e}, range ratio {ratio:e})")]
    DegenerateSchedule { growth: f64, ratio: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("depth image contains no valid pixels")]
    NoValidPixels,
    #[error("fit requires at least one view")]
    NoViews,
    #[error("loss diverged at iteration {iteration}: {loss} (initial {initial})")]
    DivergenceDetected {
        iteration: usize,
        loss: f64,
        initial: f64,
    },
    #[error("shading point {0:?} is outside the octree bounding box")]
    OutsideBBox([f64; 3]),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported endianness (big-endian PFM)")]
    UnsupportedEndianness,
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_)
            | Error::Json(_)
            | Error::Image(_)
            | Error::BadMagic(_)
            | Error::UnsupportedVersion(_)
            | Error::UnsupportedEndianness
            | Error::Format(_) => 3,
            Error::InvalidDepth(_) | Error::InvalidConfig(_) => 2,
            _ => 4,
        }
    }
}
