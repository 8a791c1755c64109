//! Error type shared by every pipeline stage.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A numeric argument was out of its documented range or non-finite.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Signal has no usable variation (constant, or too short to process).
    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    /// Cross-correlation produced no peak above the prominence threshold.
    #[error("no correlation peak above prominence {prominence} within ±{max_lag} samples (max |corr| seen: {best:.3})")]
    NoPeak {
        prominence: f64,
        max_lag: usize,
        best: f64,
    },

    /// Too few frames produced a detectable edge line.
    #[error("edge line detected in only {detected} of {total} frames (need more than half)")]
    EdgeExtraction { detected: usize, total: usize },

    /// The winning Hough segment is vertical, so the slope form y = a·x + b
    /// is undefined.
    #[error("longest Hough segment is vertical at u = {u}; slope-intercept form undefined")]
    VerticalLine { u: f64 },

    /// The calibration system of equations does not constrain every free
    /// parameter (degenerate probe motion).
    #[error("calibration not identifiable: JᵀJ condition {condition:.3e} exceeds {limit:.1e}; weakest direction is dominated by `{parameter}` — vary the probe motion (tilts and rotations, not just translation)")]
    Identifiability {
        parameter: String,
        condition: f64,
        limit: f64,
    },

    /// Two sweeps do not share enough reconstructed voxels to compare.
    #[error("insufficient sweep overlap: {overlap} voxels shared, need at least {required}")]
    InsufficientOverlap { overlap: usize, required: usize },

    /// Voxel coordinate outside the grid.
    #[error("voxel index ({x}, {y}, {z}) out of range for dims ({dims:?})")]
    VoxelOutOfRange {
        x: i64,
        y: i64,
        z: i64,
        dims: [usize; 3],
    },

    /// A gap-fill block is thinner than the halo the cube search needs.
    #[error("block of {thickness} voxels is thinner than the {halo}-voxel halo; use fewer blocks (n_blocks ≤ {suggestion})")]
    BlockTooThin {
        thickness: usize,
        halo: usize,
        suggestion: usize,
    },

    /// Parse failure with file/line position.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Recognised file, unsupported variant (e.g. ASCII PGM, 16-bit depth,
    /// non-Intel C3D).
    #[error("{path}: unsupported format: {message}")]
    UnsupportedFormat { path: PathBuf, message: String },

    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::File {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn unsupported(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::UnsupportedFormat {
            path: path.into(),
            message: message.into(),
        }
    }
}
