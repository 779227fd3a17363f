//! Version history for parametric representations (PP).
//!
//! A PP has no clear per-step boundary of what changed (removing a pipe takes
//! its fittings, labels and dimension lines with it), so every change step
//! stores the whole PP blob. Undo, redo and jumps replace the current PP
//! wholesale with another stored version.
//!
//! Log file layout (little-endian):
//!
//! ```text
//! header  = "TCGP" u16:version(=1)
//! version = u32:blob_len blob u32:crc      crc = CRC-32 over blob_len and blob
//! ```
//!
//! No delta compression: a log of N versions costs the sum of all N blob sizes.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::codec::{self, HeaderState, Reader, HEADER_LEN};
use crate::disk::{with_suffix, Disk, SessionLock, Stream};
use crate::{Error, Result};

pub const PP_MAGIC: &[u8; 4] = b"TCGP";
pub const PP_VERSION: u16 = 1;
pub const VERSION_OVERHEAD: usize = 4 + 4;

/// One complete parametric representation in its compact opaque form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PpBlob {
    task_tag: String,
    data: Arc<[u8]>,
}

impl PpBlob {
    pub fn new(task_tag: impl Into<String>, data: impl Into<Arc<[u8]>>) -> Self {
        let data = data.into();
        assert!(u32::try_from(data.len()).is_ok(), "PP blob exceeds 2^32-1 bytes");
        Self {
            task_tag: task_tag.into(),
            data,
        }
    }

    /// Extension task that produced this PP.
    pub fn task_tag(&self) -> &str {
        &self.task_tag
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }
}

pub fn encode_version(data: &[u8], out: &mut Vec<u8>) {
    let start = out.len();
    codec::put_u32(out, data.len() as u32);
    out.extend_from_slice(data);
    codec::seal(out, start);
}

/// Parsed image of a PP log file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PpScan {
    pub versions: Vec<Arc<[u8]>>,
    pub ends: Vec<u64>,
    pub valid_len: u64,
    pub torn_header: bool,
}

/// Parses the longest valid prefix of complete versions.
pub fn scan_pp_log(bytes: &[u8]) -> Result<PpScan> {
    match codec::inspect_header(bytes, PP_MAGIC, PP_VERSION) {
        HeaderState::Bad => return Err(Error::BadHeader { what: "PP log" }),
        HeaderState::Torn => {
            return Ok(PpScan {
                versions: Vec::new(),
                ends: Vec::new(),
                valid_len: 0,
                torn_header: true,
            })
        }
        HeaderState::Valid => {}
    }
    let mut versions = Vec::new();
    let mut ends = Vec::new();
    let mut pos = HEADER_LEN;
    loop {
        let mut r = Reader::at(bytes, pos);
        let Some(data) = r
            .u32()
            .and_then(|len| r.bytes(len as usize))
            .and_then(|data| r.check_crc(pos).map(|()| data))
        else {
            break;
        };
        versions.push(Arc::from(data));
        pos = r.pos();
        ends.push(pos as u64);
    }
    Ok(PpScan {
        versions,
        ends,
        valid_len: pos as u64,
        torn_header: false,
    })
}

pub fn read_pp_log(path: &Path) -> Result<PpScan> {
    scan_pp_log(&std::fs::read(path)?)
}

/// Full-snapshot history of one PP with a version cursor.
///
/// Versions are numbered from 1. The cursor is 0 only while the log is empty.
#[derive(Debug)]
pub struct PpVersionLog {
    path: PathBuf,
    file: File,
    disk: Disk,
    _lock: SessionLock,
    task_tag: String,
    versions: Vec<Arc<[u8]>>,
    ends: Vec<u64>,
    cursor: usize,
}

impl PpVersionLog {
    /// Creates an empty log, replacing any file at `path`.
    pub fn create(path: &Path, task_tag: &str, disk: &Disk) -> Result<Self> {
        let lock = SessionLock::acquire(&with_suffix(path, ".lock"), disk)?;
        let mut file = disk.create(Stream::PpLog, path)?;
        disk.write_at(Stream::PpLog, &mut file, 0, &codec::header(PP_MAGIC, PP_VERSION))?;
        disk.sync(&file)?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            disk: disk.clone(),
            _lock: lock,
            task_tag: task_tag.to_owned(),
            versions: Vec::new(),
            ends: Vec::new(),
            cursor: 0,
        })
    }

    /// Opens the log at `path`, creating it when absent. Invalid trailing
    /// bytes from an interrupted write are cut off; the returned flag says
    /// whether that happened. The cursor is placed on the last version.
    pub fn open(path: &Path, task_tag: &str, disk: &Disk) -> Result<(Self, bool)> {
        let Some(bytes) = crate::disk::read_optional(path)? else {
            return Ok((Self::create(path, task_tag, disk)?, false));
        };
        let lock = SessionLock::acquire(&with_suffix(path, ".lock"), disk)?;
        let scan = scan_pp_log(&bytes)?;
        let mut file = disk.open_rw(path)?;
        let truncated = scan.torn_header || scan.valid_len < bytes.len() as u64;
        if scan.torn_header {
            disk.set_len(Stream::PpLog, &file, 0)?;
            disk.write_at(Stream::PpLog, &mut file, 0, &codec::header(PP_MAGIC, PP_VERSION))?;
            disk.sync(&file)?;
        } else if truncated {
            disk.set_len(Stream::PpLog, &file, scan.valid_len)?;
            disk.sync(&file)?;
        }
        let cursor = scan.versions.len();
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
                disk: disk.clone(),
                _lock: lock,
                task_tag: task_tag.to_owned(),
                versions: scan.versions,
                ends: scan.ends,
                cursor,
            },
            truncated,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn task_tag(&self) -> &str {
        &self.task_tag
    }

    pub fn len(&self) -> usize {
        self.versions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.versions.is_empty()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn versions(&self) -> impl ExactSizeIterator<Item = &[u8]> {
        self.versions.iter().map(|v| &v[..])
    }

    fn blob(&self, version: usize) -> PpBlob {
        PpBlob {
            task_tag: self.task_tag.clone(),
            data: Arc::clone(&self.versions[version - 1]),
        }
    }

    pub fn current(&self) -> Option<PpBlob> {
        (self.cursor > 0).then(|| self.blob(self.cursor))
    }

    /// Stores `blob` as the newest version. Versions after the cursor are
    /// dropped first. Returns the new version number.
    pub fn commit_pp(&mut self, blob: &PpBlob) -> Result<usize> {
        if blob.task_tag != self.task_tag {
            return Err(Error::invalid(format!(
                "PP of task {:?} committed to log of task {:?}",
                blob.task_tag, self.task_tag
            )));
        }
        let base = match self.cursor {
            0 => HEADER_LEN as u64,
            k => self.ends[k - 1],
        };
        let mut buf = Vec::with_capacity(blob.data.len() + VERSION_OVERHEAD);
        encode_version(&blob.data, &mut buf);
        let written = self.append(base, &buf);
        // The file no longer holds the redo tail either way.
        self.versions.truncate(self.cursor);
        self.ends.truncate(self.cursor);
        if let Err(e) = written {
            if !self.disk.is_dead() && self.disk.set_len(Stream::PpLog, &self.file, base).is_ok() {
                let _ = self.disk.sync(&self.file);
            }
            return Err(e);
        }
        self.versions.push(Arc::clone(&blob.data));
        self.ends.push(base + buf.len() as u64);
        self.cursor = self.versions.len();
        Ok(self.cursor)
    }

    fn append(&mut self, base: u64, bytes: &[u8]) -> Result<()> {
        let end = self.ends.last().copied().unwrap_or(HEADER_LEN as u64);
        if base < end {
            self.disk.set_len(Stream::PpLog, &self.file, base)?;
        }
        self.disk.write_at(Stream::PpLog, &mut self.file, base, bytes)?;
        self.disk.sync(&self.file)
    }

    pub fn undo_pp(&mut self) -> Result<PpBlob> {
        if self.cursor < 2 {
            return Err(Error::NothingToUndo);
        }
        self.cursor -= 1;
        Ok(self.blob(self.cursor))
    }

    pub fn redo_pp(&mut self) -> Result<PpBlob> {
        if self.cursor >= self.versions.len() {
            return Err(Error::NothingToRedo);
        }
        self.cursor += 1;
        Ok(self.blob(self.cursor))
    }

    /// Moves straight to `target`, skipping any number of steps.
    pub fn jump_pp(&mut self, target: usize) -> Result<PpBlob> {
        if target == 0 || target > self.versions.len() {
            return Err(Error::OutOfRange {
                target,
                len: self.versions.len(),
            });
        }
        self.cursor = target;
        Ok(self.blob(target))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(data: &[u8]) -> PpBlob {
        PpBlob::new("profile", data)
    }

    fn new_log() -> (tempfile::TempDir, PathBuf, PpVersionLog) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("doc.pplog");
        let log = PpVersionLog::create(&path, "profile", &Disk::volatile()).unwrap();
        (dir, path, log)
    }

    #[test]
    fn first_commit_is_version_one() {
        let (_d, _p, mut log) = new_log();
        assert_eq!(log.cursor(), 0);
        assert!(log.current().is_none());
        assert_eq!(log.commit_pp(&blob(b"v1")).unwrap(), 1);
        assert_eq!(log.cursor(), 1);
    }

    #[test]
    fn undo_redo_walk() {
        let (_d, _p, mut log) = new_log();
        for v in [b"v1", b"v2", b"v3"] {
            log.commit_pp(&blob(v)).unwrap();
        }
        assert_eq!(log.commit_pp(&blob(b"v4")).unwrap(), 4);
        assert_eq!(log.undo_pp().unwrap().data(), b"v3");
        assert_eq!(log.undo_pp().unwrap().data(), b"v2");
        assert_eq!(log.redo_pp().unwrap().data(), b"v3");
        assert_eq!(log.redo_pp().unwrap().data(), b"v4");
        assert!(matches!(log.redo_pp(), Err(Error::NothingToRedo)));
        log.jump_pp(1).unwrap();
        assert!(matches!(log.undo_pp(), Err(Error::NothingToUndo)));
    }

    #[test]
    fn commit_after_undo_drops_tail_from_file() {
        let (_d, path, mut log) = new_log();
        for v in [b"v1", b"v2", b"v3"] {
            log.commit_pp(&blob(v)).unwrap();
        }
        log.jump_pp(1).unwrap();
        assert_eq!(log.commit_pp(&blob(b"w2")).unwrap(), 2);
        let scan = read_pp_log(&path).unwrap();
        assert_eq!(scan.versions.len(), 2);
        assert_eq!(&scan.versions[1][..], b"w2");
        assert_eq!(scan.valid_len, std::fs::metadata(&path).unwrap().len());
    }

    #[test]
    fn jump_bounds_and_identity() {
        let (_d, _p, mut log) = new_log();
        for i in 1..=5u8 {
            log.commit_pp(&blob(&[i])).unwrap();
        }
        assert_eq!(log.jump_pp(5).unwrap().data(), &[5]);
        assert_eq!(log.cursor(), 5);
        assert_eq!(log.jump_pp(2).unwrap().data(), &[2]);
        assert!(matches!(log.jump_pp(0), Err(Error::OutOfRange { .. })));
        assert!(matches!(log.jump_pp(6), Err(Error::OutOfRange { target: 6, len: 5 })));
        assert_eq!(log.cursor(), 2);
    }

    #[test]
    fn wrong_task_is_rejected() {
        let (_d, _p, mut log) = new_log();
        assert!(log.commit_pp(&PpBlob::new("other", &b"x"[..])).is_err());
    }

    #[test]
    fn reopen_reproduces_versions_and_trims_torn_tail() {
        let (_d, path, mut log) = new_log();
        for i in 0..4u8 {
            log.commit_pp(&blob(&vec![i; 10 * i as usize])).unwrap();
        }
        let expected: Vec<Vec<u8>> = log.versions().map(<[u8]>::to_vec).collect();
        drop(log);
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 3]).unwrap();
        let (mut log, truncated) = PpVersionLog::open(&path, "profile", &Disk::volatile()).unwrap();
        assert!(truncated);
        assert_eq!(log.len(), 3);
        for (i, v) in log.versions().enumerate() {
            assert_eq!(v, expected[i].as_slice());
        }
        assert_eq!(log.jump_pp(1).unwrap().data(), expected[0].as_slice());
    }

    #[test]
    fn golden_layout() {
        let (_d, path, mut log) = new_log();
        log.commit_pp(&blob(&[0xAB, 0xCD])).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let mut expected = b"TCGP\x01\x00".to_vec();
        let rec = [2, 0, 0, 0, 0xAB, 0xCD];
        expected.extend_from_slice(&rec);
        expected.extend_from_slice(&crc32fast::hash(&rec).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn log_is_exclusive() {
        let (_d, path, _log) = new_log();
        assert!(matches!(
            PpVersionLog::open(&path, "profile", &Disk::volatile()),
            Err(Error::Locked(_))
        ));
    }
}
