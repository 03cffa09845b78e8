use std::fmt;

/// Closed set of failure categories reported by the command-line tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    Io,
    Parse,
    Config,
    Shape,
    Train,
    Score,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Io => "io",
            Category::Parse => "parse",
            Category::Config => "config",
            Category::Shape => "shape",
            Category::Train => "train",
            Category::Score => "score",
        }
    }

    /// Process exit code used by the binary for this category.
    pub fn exit_code(self) -> u8 {
        match self {
            Category::Io => 2,
            Category::Parse => 3,
            Category::Config => 4,
            Category::Shape => 5,
            Category::Train => 6,
            Category::Score => 7,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("training aborted: {0}")]
    Train(String),

    #[error("scoring failed: {0}")]
    Score(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed model file: {0}")]
    Format(String),

    /// Some of several independent units of work failed.
    #[error("{message}")]
    Partial { category: Category, message: String },
}

impl Error {
    pub fn dimension(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Dimension { op, left, right }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn category(&self) -> Category {
        match self {
            Error::Dimension { .. } => Category::Shape,
            Error::Usage(_) | Error::Train(_) => Category::Train,
            Error::Config(_) | Error::Sampling(_) => Category::Config,
            Error::Parse { .. } | Error::Format(_) => Category::Parse,
            Error::Score(_) | Error::Eval(_) => Category::Score,
            Error::Io { .. } => Category::Io,
            Error::Partial { category, .. } => *category,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
