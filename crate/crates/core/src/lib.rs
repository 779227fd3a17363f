//! Document-safety engine for a CAD-style editor.
//!
//! The drawing is an ordered multiset of opaque elements ([`model`]). Around it
//! sit independent protection mechanisms:
//!
//! - [`journal`]: step-grouped undo/redo over an append-only work file of
//!   added/deleted element records, with crash recovery to the last complete step.
//! - [`pp`]: whole-blob version history for parametric representations.
//! - [`autosave`]: timed copies of drawing + PP with recovery after abnormal exit.
//! - [`backup`]: dated incremental backups on user-chosen weekdays.
//! - [`signature`]: password-protected signatures that freeze a document.
//!
//! [`session`] wires them together for one editing session, [`script`] and
//! [`harness`] drive sessions from text scripts and inject simulated crashes.

pub mod autosave;
pub mod backup;
mod codec;
pub mod disk;
pub mod document;
pub mod error;
pub mod harness;
pub mod journal;
pub mod model;
pub mod pp;
pub mod script;
pub mod session;
pub mod signature;

pub use error::{Error, Result};
pub use model::{Drawing, ElementPayload};

/// Seconds since the Unix epoch. All clocks in the engine are injected as this type.
pub type Timestamp = i64;
