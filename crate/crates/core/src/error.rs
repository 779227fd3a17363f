use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// No element in the drawing equals the payload being removed. During
    /// undo/redo this means the journal and the drawing have diverged.
    #[error("no element of kind {kind} with {len} data bytes in drawing")]
    NotFound { kind: u16, len: usize },

    /// Another live session owns the lock file.
    #[error("session lock {} is held by another session", .0.display())]
    Locked(PathBuf),

    /// The document carries at least one signature and may not change.
    #[error("document is signed ({0} signature(s)); remove signatures before editing")]
    Frozen(usize),

    #[error("nothing to undo")]
    NothingToUndo,

    #[error("nothing to redo")]
    NothingToRedo,

    #[error("{what}: not a valid file header")]
    BadHeader { what: &'static str },

    #[error("{what} is corrupt: {detail}")]
    Corrupt { what: &'static str, detail: String },

    #[error("version {target} out of range 1..={len}")]
    OutOfRange { target: usize, len: usize },

    #[error("{0:?} has already signed this document")]
    DuplicateSigner(String),

    #[error("password must not be empty")]
    WeakPassword,

    #[error("no signature by {0:?}")]
    NoSuchSigner(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    /// Raised by the fault-injection layer once the simulated process has died.
    #[error("simulated crash")]
    SimulatedCrash,

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn corrupt(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Corrupt {
            what,
            detail: detail.into(),
        }
    }

    pub fn is_crash(&self) -> bool {
        matches!(self, Error::SimulatedCrash)
    }
}
