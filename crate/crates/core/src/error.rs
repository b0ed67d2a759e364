use std::path::PathBuf;

use crate::geometry::Twist;

/// Errors produced by the detection, odometry and I/O layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },

    #[error("invalid depth {depth}")]
    InvalidDepth { depth: f64 },

    #[error("near-singular logarithm: rotation angle {angle} is within 1e-3 of pi")]
    NearSingularLog { angle: f64 },

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate residual system: only {pixels} contributing pixels")]
    DegenerateResiduals { pixels: usize, last: Twist },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("empty sequence")]
    EmptySequence,

    #[error("no pose coverage at t = {t}")]
    NoPoseCoverage { t: f64 },

    #[error("insufficient trajectory length: {poses} poses for delta {delta}")]
    InsufficientTrajectory { poses: usize, delta: usize },

    #[error("degenerate viewpoint: camera inside object {object} at frame {frame}")]
    DegenerateViewpoint { object: usize, frame: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("frame {frame}, {stage}: {source}")]
    Stage {
        frame: usize,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Attaches the frame index and pipeline stage to an error.
    pub fn at(self, frame: usize, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                frame,
                stage,
                source: Box::new(e),
            },
        }
    }

    /// The error with stage context removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
