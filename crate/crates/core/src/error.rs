use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: pixel ({x}, {y}) outside {width}x{height} sensor")]
    OutOfBounds {
        path: PathBuf,
        line: usize,
        x: i64,
        y: i64,
        width: u32,
        height: u32,
    },

    #[error("{0}: file contains no data rows")]
    EmptyFile(PathBuf),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("window ending at t={t_eval}us contains no events")]
    EmptyWindow { t_eval: i64 },

    #[error("derivative field contains non-finite values")]
    NonFiniteInput,

    #[error("solver diverged: {0}")]
    Numerical(String),

    #[error("need at least {required} IMU samples in calibration window, found {found}")]
    InsufficientSamples { found: usize, required: usize },

    #[error("t={t}us outside IMU sample span [{start}, {end}]")]
    OutOfRange { t: i64, start: i64, end: i64 },

    #[error("no events could be matched against ground truth")]
    NoOverlap,

    #[error("window t={t_eval}us: {source}")]
    Window {
        t_eval: i64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
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

    /// Wraps an error with the evaluation time of the window that produced it.
    pub fn in_window(self, t_eval: i64) -> Self {
        Error::Window {
            t_eval,
            source: Box::new(self),
        }
    }

    /// True for failures of the numerical stages rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFiniteInput | Error::Numerical(_) => true,
            Error::Window { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
