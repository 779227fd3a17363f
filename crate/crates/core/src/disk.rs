//! File I/O with an optional simulated-crash interposer.
//!
//! Every mutating file operation in the engine goes through a [`Disk`] and is
//! attributed to a [`Stream`]. A [`FaultPlan`] names one stream and a byte
//! offset into the cumulative writes of that stream: the simulated process
//! gets exactly `kill_at_byte` bytes of that stream onto disk and then dies.
//! Metadata operations (create, truncate, rename, remove) each count as one
//! unit of the stream, so every one of them is a distinct crash point (for
//! example between a temp-file write and its rename, or between two renames). After death every operation fails with
//! [`Error::SimulatedCrash`] and lock files are left behind, as a real crash
//! would leave them.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{ErrorKind, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, LazyLock, Mutex, MutexGuard};

use crate::{Error, Result};

/// Which file family a write belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stream {
    /// Undo work file.
    Journal,
    /// Autosave copies and marker.
    Autosave,
    /// Parametric-representation version log.
    PpLog,
    /// The document file itself (plain drawing or signed envelope) and its audit log.
    Envelope,
}

impl Stream {
    pub const ALL: [Stream; 4] = [
        Stream::Journal,
        Stream::Autosave,
        Stream::PpLog,
        Stream::Envelope,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stream::Journal => "journal",
            Stream::Autosave => "autosave",
            Stream::PpLog => "pp-log",
            Stream::Envelope => "envelope",
        }
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stream {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stream::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown stream {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FaultPlan {
    pub kill_at_byte: u64,
    pub target: Stream,
}

#[derive(Debug, Default)]
struct State {
    target_written: u64,
    dead: bool,
    totals: HashMap<Stream, u64>,
}

#[derive(Debug)]
struct Inner {
    plan: Option<FaultPlan>,
    durable: bool,
    state: Mutex<State>,
}

enum Admit {
    Full,
    Partial(usize),
}

/// Handle to the file system. Cheap to clone; clones share fault state.
#[derive(Debug, Clone)]
pub struct Disk {
    inner: Arc<Inner>,
}

impl Default for Disk {
    fn default() -> Self {
        Self::os()
    }
}

impl Disk {
    /// Real file system with fsync on every durability point.
    pub fn os() -> Self {
        Self::build(None, true)
    }

    /// Real file system without fsync. For tests and simulations only.
    pub fn volatile() -> Self {
        Self::build(None, false)
    }

    /// Volatile disk that dies according to `plan`.
    pub fn with_fault(plan: FaultPlan) -> Self {
        Self::build(Some(plan), false)
    }

    fn build(plan: Option<FaultPlan>, durable: bool) -> Self {
        Self {
            inner: Arc::new(Inner {
                plan,
                durable,
                state: Mutex::new(State::default()),
            }),
        }
    }

    fn state(&self) -> MutexGuard<'_, State> {
        self.inner.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn is_dead(&self) -> bool {
        self.state().dead
    }

    /// Units written so far to `stream`: data bytes plus one per metadata operation.
    pub fn bytes_written(&self, stream: Stream) -> u64 {
        self.state().totals.get(&stream).copied().unwrap_or(0)
    }

    pub(crate) fn ensure_alive(&self) -> Result<()> {
        if self.is_dead() {
            Err(Error::SimulatedCrash)
        } else {
            Ok(())
        }
    }

    fn admit(&self, stream: Stream, len: usize) -> Result<Admit> {
        let mut st = self.state();
        if st.dead {
            return Err(Error::SimulatedCrash);
        }
        let len64 = len as u64;
        if let Some(plan) = self.inner.plan.filter(|p| p.target == stream) {
            let at = st.target_written;
            if at + len64.max(1) > plan.kill_at_byte {
                st.dead = true;
                let allowed = plan.kill_at_byte.saturating_sub(at).min(len64);
                st.target_written += allowed;
                *st.totals.entry(stream).or_default() += allowed;
                return Ok(Admit::Partial(allowed as usize));
            }
            st.target_written += len64;
        }
        *st.totals.entry(stream).or_default() += len64;
        Ok(Admit::Full)
    }

    /// A metadata operation occupies one unit of its stream, so consecutive
    /// renames or removes are separate crash points.
    fn metadata_op(&self, stream: Stream) -> Result<()> {
        match self.admit(stream, 1)? {
            Admit::Full => Ok(()),
            Admit::Partial(_) => Err(Error::SimulatedCrash),
        }
    }

    /// Creates (or truncates) `path` for reading and writing.
    pub fn create(&self, stream: Stream, path: &Path) -> Result<File> {
        self.metadata_op(stream)?;
        Ok(OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)?)
    }

    /// Opens an existing file for reading and writing. Not a write event.
    pub fn open_rw(&self, path: &Path) -> Result<File> {
        self.ensure_alive()?;
        Ok(OpenOptions::new().read(true).write(true).open(path)?)
    }

    /// Writes `bytes` at `offset`.
    pub fn write_at(&self, stream: Stream, file: &mut File, offset: u64, bytes: &[u8]) -> Result<()> {
        let admitted = self.admit(stream, bytes.len())?;
        file.seek(SeekFrom::Start(offset))?;
        match admitted {
            Admit::Full => {
                file.write_all(bytes)?;
                Ok(())
            }
            Admit::Partial(n) => {
                file.write_all(&bytes[..n])?;
                Err(Error::SimulatedCrash)
            }
        }
    }

    pub fn set_len(&self, stream: Stream, file: &File, len: u64) -> Result<()> {
        self.metadata_op(stream)?;
        file.set_len(len)?;
        Ok(())
    }

    pub fn sync(&self, file: &File) -> Result<()> {
        self.ensure_alive()?;
        if self.inner.durable {
            file.sync_data()?;
        }
        Ok(())
    }

    fn sync_parent(&self, path: &Path) {
        if !self.inner.durable {
            return;
        }
        let parent = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        if let Ok(dir) = File::open(parent) {
            let _ = dir.sync_all();
        }
    }

    /// Creates `path`, writes `bytes` and syncs, without renaming.
    pub fn write_file(&self, stream: Stream, path: &Path, bytes: &[u8]) -> Result<()> {
        let mut f = self.create(stream, path)?;
        self.write_at(stream, &mut f, 0, bytes)?;
        self.sync(&f)
    }

    pub fn rename(&self, stream: Stream, from: &Path, to: &Path) -> Result<()> {
        self.metadata_op(stream)?;
        fs::rename(from, to)?;
        self.sync_parent(to);
        Ok(())
    }

    /// Removes `path`. A missing file is not an error. Returns whether a file was removed.
    pub fn remove(&self, stream: Stream, path: &Path) -> Result<bool> {
        self.metadata_op(stream)?;
        match fs::remove_file(path) {
            Ok(()) => {
                self.sync_parent(path);
                Ok(true)
            }
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(false),
            Err(e) => Err(e.into()),
        }
    }

    /// Replaces `path` atomically: write `<path>.tmp`, sync, rename over `path`.
    pub fn write_atomic(&self, stream: Stream, path: &Path, bytes: &[u8]) -> Result<()> {
        let tmp = tmp_path(path);
        self.write_file(stream, &tmp, bytes)?;
        self.rename(stream, &tmp, path)
    }

    /// Appends one line to a text file, creating it if needed.
    pub fn append_line(&self, stream: Stream, path: &Path, line: &str) -> Result<()> {
        self.ensure_alive()?;
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        let mut buf = line.as_bytes().to_vec();
        buf.push(b'\n');
        match self.admit(stream, buf.len())? {
            Admit::Full => f.write_all(&buf)?,
            Admit::Partial(n) => {
                f.write_all(&buf[..n])?;
                return Err(Error::SimulatedCrash);
            }
        }
        self.sync(&f)
    }

    pub fn create_dir_all(&self, path: &Path) -> Result<()> {
        self.ensure_alive()?;
        fs::create_dir_all(path)?;
        Ok(())
    }
}

/// `<path>.tmp`
pub fn tmp_path(path: &Path) -> PathBuf {
    with_suffix(path, ".tmp")
}

/// Appends `suffix` to the final path component: `a/b.tcgd` + `.journal` = `a/b.tcgd.journal`.
pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Reads a whole file, mapping "not found" to `None`.
pub fn read_optional(path: &Path) -> Result<Option<Vec<u8>>> {
    match fs::read(path) {
        Ok(b) => Ok(Some(b)),
        Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

static HELD_LOCKS: LazyLock<Mutex<HashSet<PathBuf>>> = LazyLock::new(Default::default);

fn held() -> MutexGuard<'static, HashSet<PathBuf>> {
    HELD_LOCKS.lock().unwrap_or_else(|e| e.into_inner())
}

/// Exclusive single-writer lock backed by a `<path>.lock` file holding the owner's pid.
///
/// A lock file is stale when its owner is gone: a dead pid, or this very
/// process without a live in-process holder (a simulated crash). Stale locks
/// are broken on acquire.
#[derive(Debug)]
pub struct SessionLock {
    path: PathBuf,
    disk: Disk,
}

impl SessionLock {
    pub fn acquire(path: &Path, disk: &Disk) -> Result<Self> {
        disk.ensure_alive()?;
        let path = std::path::absolute(path)?;
        let mut registry = held();
        if registry.contains(&path) {
            return Err(Error::Locked(path));
        }
        let pid = std::process::id();
        for attempt in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    writeln!(f, "{pid}")?;
                    registry.insert(path.clone());
                    return Ok(Self {
                        path,
                        disk: disk.clone(),
                    });
                }
                Err(e) if e.kind() == ErrorKind::AlreadyExists && attempt == 0 => {
                    if lock_is_stale(&path, pid) {
                        log::warn!("breaking stale lock {}", path.display());
                        match fs::remove_file(&path) {
                            Ok(()) => continue,
                            Err(e) if e.kind() == ErrorKind::NotFound => continue,
                            Err(e) => return Err(e.into()),
                        }
                    }
                    return Err(Error::Locked(path));
                }
                Err(e) if e.kind() == ErrorKind::AlreadyExists => return Err(Error::Locked(path)),
                Err(e) => return Err(e.into()),
            }
        }
        Err(Error::Locked(path))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Drop for SessionLock {
    fn drop(&mut self) {
        held().remove(&self.path);
        if !self.disk.is_dead() {
            let _ = fs::remove_file(&self.path);
        }
    }
}

fn lock_is_stale(path: &Path, own_pid: u32) -> bool {
    let owner = match fs::read_to_string(path) {
        Ok(s) => s.trim().parse::<u32>().ok(),
        Err(e) if e.kind() == ErrorKind::NotFound => return true,
        Err(_) => return false,
    };
    match owner {
        // Torn lock file from an interrupted acquire.
        None => true,
        Some(pid) if pid == own_pid => true,
        Some(pid) => !process_alive(pid),
    }
}

fn process_alive(pid: u32) -> bool {
    if cfg!(target_os = "linux") {
        Path::new(&format!("/proc/{pid}")).exists()
    } else {
        true
    }
}
