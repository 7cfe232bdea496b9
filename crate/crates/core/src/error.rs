use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("unsupported image format in {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },

    #[error("corrupt image header in {path}: {reason}")]
    CorruptImage { path: PathBuf, reason: String },

    #[error("cannot write {path}: {reason}")]
    Write { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("image {height}x{width} too small for pyramid depth {depth}")]
    TooSmall {
        height: usize,
        width: usize,
        depth: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("external command `{command}` exited with {status}: {stderr}")]
    ExternalFailed {
        command: String,
        status: String,
        stderr: String,
    },

    #[error("external command `{command}` produced no output file")]
    ExternalMissingOutput { command: String },

    #[error("external command `{command}` produced {got_h}x{got_w}, expected {want_h}x{want_w}")]
    ExternalWrongDims {
        command: String,
        got_h: usize,
        got_w: usize,
        want_h: usize,
        want_w: usize,
    },

    #[error("external command `{command}` timed out after {seconds} s")]
    ExternalTimeout { command: String, seconds: u64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("malformed manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
}

/// Coarse failure classes, used by the command line to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Io,
    Computation,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::MissingFile(_)
            | Error::UnsupportedFormat { .. }
            | Error::CorruptImage { .. }
            | Error::Write { .. }
            | Error::Io { .. }
            | Error::Manifest { .. } => ErrorClass::Io,
            Error::InvalidArgument(_) => ErrorClass::Usage,
            _ => ErrorClass::Computation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn ensure_same_dims(
    what: &str,
    a: (usize, usize, usize),
    b: (usize, usize, usize),
) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!(
            "{what}: {}x{}x{} vs {}x{}x{}",
            a.0, a.1, a.2, b.0, b.1, b.2
        )));
    }
    Ok(())
}
