use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("improper rotation (determinant {0:.6})")]
    ImproperRotation(f64),
    #[error("invalid rotation: {0}")]
    InvalidRotation(String),
    #[error("no poses to blend")]
    EmptyBlend,
    #[error("dual quaternion blend degenerated to a zero rotation")]
    DegenerateBlend,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("image of {0}x{1} is smaller than the 3x3 kernel")]
    ImageTooSmall(u32, u32),
    #[error("empty frame list")]
    NoFrames,
    #[error("empty training trajectory")]
    EmptyTrajectory,
    #[error("empty threshold grid")]
    EmptyGrid,
    #[error("threshold grid is not strictly increasing at index {0}")]
    NonMonotoneGrid(usize),
    #[error("frame {frame}: missing score `{score}` required by filter preset `{preset}`")]
    MissingScore {
        frame: String,
        score: &'static str,
        preset: String,
    },
    #[error("unknown filter preset `{0}`")]
    UnknownPreset(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("frame sets differ between methods: {0}")]
    FrameSetMismatch(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by user input (configuration, files, flags)
    /// rather than by a failed computation.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Context { source, .. } => source.is_usage(),
            Error::Parse { .. }
            | Error::File { .. }
            | Error::Io { .. }
            | Error::UnknownPreset(_)
            | Error::InvalidIntrinsics(_)
            | Error::EmptyGrid
            | Error::NonMonotoneGrid(_)
            | Error::FrameSetMismatch(_)
            | Error::InvalidArgument(_) => true,
            _ => false,
        }
    }
}
