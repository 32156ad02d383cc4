use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error family, used by the command line front end to print a
/// machine-parseable category before the human-readable detail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Io,
    Format,
    Shape,
    Config,
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Category::Io => "IO",
            Category::Format => "Format",
            Category::Shape => "Shape",
            Category::Config => "Config",
        })
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("degenerate scale: every point sits at the origin")]
    DegenerateScale,
    #[error("invalid count: {0}")]
    InvalidCount(String),
    #[error("invalid resolution {0}: must be at least 1")]
    InvalidResolution(usize),
    #[error("invalid extent {0}: must be positive and finite")]
    InvalidExtent(f64),
    #[error("non-finite coordinate in {0}")]
    NonFinite(String),
    #[error("missing planar location for {0}")]
    MissingLocation(String),
    #[error("need at least {needed} distinct species, found {found}")]
    InsufficientSpecies { needed: usize, found: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("class {class} has {count} item(s); at least 2 are required to split")]
    ClassTooSmall { class: usize, count: usize },
    #[error("no class has both positive and negative examples")]
    DegenerateLabels,
    #[error("invalid score matrix: {0}")]
    InvalidScores(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::Io { .. } => Category::Io,
            Error::Format { .. } | Error::NonFinite(_) => Category::Format,
            Error::ShapeMismatch(_) | Error::LabelOutOfRange { .. } => Category::Shape,
            Error::EmptyCloud
            | Error::DegenerateScale
            | Error::InvalidCount(_)
            | Error::MissingLocation(_)
            | Error::InsufficientSpecies { .. }
            | Error::ClassTooSmall { .. }
            | Error::DegenerateLabels
            | Error::InvalidScores(_) => Category::Format,
            Error::InvalidResolution(_)
            | Error::InvalidExtent(_)
            | Error::ConfigMismatch(_)
            | Error::Config(_) => Category::Config,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::ShapeMismatch(format!($($arg)*))
    };
}
pub(crate) use shape_err;
