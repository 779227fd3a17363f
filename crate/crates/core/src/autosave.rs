//! Timed autosave of the drawing and the current PP, with crash recovery.
//!
//! One autosave set per document lives in the autosave directory:
//!
//! ```text
//! <doc>.autosave.drawing   canonical drawing bytes
//! <doc>.autosave.pp        current PP blob (absent when no extension task is active)
//! <doc>.autosave.marker    session id, document identity, timestamps, copy checksums
//! ```
//!
//! The marker is the commit point. A new set is staged as `.tmp` files, then
//! the marker is replaced by rename, then the staged copies are renamed over
//! the old ones. Recovery trusts the marker: a copy that does not match it is
//! taken from its staged `.tmp` twin if that one matches. A crash at any point
//! therefore leaves either the previous set or the new one recoverable, and
//! never both.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::codec::{self, Reader};
use crate::disk::{read_optional, tmp_path, with_suffix, Disk, Stream};
use crate::document::drawing_name;
use crate::model::Drawing;
use crate::pp::PpBlob;
use crate::{Error, Result, Timestamp};

const MARKER_MAGIC: &[u8; 4] = b"TCGM";
const MARKER_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AutosaveConfig {
    interval: u64,
    autosave_dir: PathBuf,
}

impl AutosaveConfig {
    pub fn new(interval_secs: u64, autosave_dir: impl Into<PathBuf>) -> Result<Self> {
        if interval_secs == 0 {
            return Err(Error::invalid("autosave interval must be positive"));
        }
        Ok(Self {
            interval: interval_secs,
            autosave_dir: autosave_dir.into(),
        })
    }

    pub fn interval(&self) -> u64 {
        self.interval
    }

    pub fn autosave_dir(&self) -> &Path {
        &self.autosave_dir
    }
}

/// File names of a document's autosave set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AutosavePaths {
    pub drawing: PathBuf,
    pub pp: PathBuf,
    pub marker: PathBuf,
}

impl AutosavePaths {
    pub fn new(autosave_dir: &Path, doc: &Path) -> Self {
        let name = doc.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        let base = autosave_dir.join(name);
        Self {
            drawing: with_suffix(&base, ".autosave.drawing"),
            pp: with_suffix(&base, ".autosave.pp"),
            marker: with_suffix(&base, ".autosave.marker"),
        }
    }

    fn all(&self) -> [&Path; 3] {
        [&self.drawing, &self.pp, &self.marker]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Checksum {
    len: u64,
    crc: u32,
}

impl Checksum {
    fn of(bytes: &[u8]) -> Self {
        Self {
            len: bytes.len() as u64,
            crc: codec::crc32(bytes),
        }
    }

    fn matches(&self, bytes: &[u8]) -> bool {
        *self == Checksum::of(bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Marker {
    session_id: u64,
    created_at: Timestamp,
    doc: String,
    drawing: Checksum,
    pp: Option<(String, Checksum)>,
}

impl Marker {
    fn encode(&self) -> Vec<u8> {
        let mut out = codec::header(MARKER_MAGIC, MARKER_VERSION).to_vec();
        codec::put_u64(&mut out, self.session_id);
        codec::put_i64(&mut out, self.created_at);
        put_str(&mut out, &self.doc);
        codec::put_u64(&mut out, self.drawing.len);
        codec::put_u32(&mut out, self.drawing.crc);
        match &self.pp {
            None => codec::put_u8(&mut out, 0),
            Some((tag, sum)) => {
                codec::put_u8(&mut out, 1);
                put_str(&mut out, tag);
                codec::put_u64(&mut out, sum.len);
                codec::put_u32(&mut out, sum.crc);
            }
        }
        codec::seal(&mut out, 0);
        out
    }

    fn decode(bytes: &[u8]) -> Option<Self> {
        let mut r = Reader::new(bytes);
        (r.bytes(codec::HEADER_LEN)? == codec::header(MARKER_MAGIC, MARKER_VERSION)).then_some(())?;
        let session_id = r.u64()?;
        let created_at = r.i64()?;
        let doc = get_str(&mut r)?;
        let drawing = Checksum {
            len: r.u64()?,
            crc: r.u32()?,
        };
        let pp = match r.u8()? {
            0 => None,
            1 => {
                let tag = get_str(&mut r)?;
                Some((
                    tag,
                    Checksum {
                        len: r.u64()?,
                        crc: r.u32()?,
                    },
                ))
            }
            _ => return None,
        };
        r.check_crc(0)?;
        r.is_empty().then_some(Self {
            session_id,
            created_at,
            doc,
            drawing,
            pp,
        })
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    codec::put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn get_str(r: &mut Reader<'_>) -> Option<String> {
    let n = r.u32()? as usize;
    String::from_utf8(r.bytes(n)?.to_vec()).ok()
}

/// A complete autosave set as recorded by its marker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AutosaveSet {
    pub drawing_copy: PathBuf,
    pub pp_copy: Option<PathBuf>,
    pub marker: PathBuf,
    pub created_at: Timestamp,
    pub session_id: u64,
    /// Absolute path of the document the set belongs to.
    pub doc: String,
    drawing_sum: Checksum,
    pp: Option<(String, Checksum)>,
}

impl AutosaveSet {
    fn from_marker(paths: &AutosavePaths, m: Marker) -> Self {
        Self {
            drawing_copy: paths.drawing.clone(),
            pp_copy: m.pp.as_ref().map(|_| paths.pp.clone()),
            marker: paths.marker.clone(),
            created_at: m.created_at,
            session_id: m.session_id,
            doc: m.doc,
            drawing_sum: m.drawing,
            pp: m.pp,
        }
    }

    pub fn pp_task(&self) -> Option<&str> {
        self.pp.as_ref().map(|(t, _)| t.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TickOutcome {
    Saved(AutosaveSet),
    Skipped,
}

/// Identity recorded in markers: the absolute document path.
pub fn doc_identity(doc: &Path) -> String {
    std::path::absolute(doc)
        .unwrap_or_else(|_| doc.to_path_buf())
        .to_string_lossy()
        .into_owned()
}

fn state_digest(drawing_bytes: &[u8], pp: Option<&PpBlob>) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(drawing_bytes);
    if let Some(pp) = pp {
        h.update([1]);
        h.update(pp.task_tag().as_bytes());
        h.update([0]);
        h.update(pp.data());
    }
    h.finalize().into()
}

/// Autosave state of one live editing session.
#[derive(Debug)]
pub struct Autosaver {
    config: AutosaveConfig,
    paths: AutosavePaths,
    doc_id: String,
    session_id: u64,
    last_save: Timestamp,
    saved_digest: [u8; 32],
    current: Option<AutosaveSet>,
    disk: Disk,
}

impl Autosaver {
    /// Begins autosaving `doc`. The interval is counted from `now` until the
    /// first save and from the last successful save afterwards. The state
    /// passed in is the baseline: ticks skip until something differs from it.
    pub fn start(
        config: AutosaveConfig,
        doc: &Path,
        now: Timestamp,
        drawing: &Drawing,
        pp: Option<&PpBlob>,
        disk: &Disk,
    ) -> Self {
        let doc_id = doc_identity(doc);
        let mut h = Sha256::new();
        h.update(doc_id.as_bytes());
        h.update(now.to_le_bytes());
        let session_id = u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"));
        Self {
            paths: AutosavePaths::new(config.autosave_dir(), doc),
            config,
            doc_id,
            session_id,
            last_save: now,
            saved_digest: state_digest(&drawing.canonical_bytes(), pp),
            current: None,
            disk: disk.clone(),
        }
    }

    pub fn config(&self) -> &AutosaveConfig {
        &self.config
    }

    pub fn paths(&self) -> &AutosavePaths {
        &self.paths
    }

    pub fn session_id(&self) -> u64 {
        self.session_id
    }

    pub fn last_save(&self) -> Timestamp {
        self.last_save
    }

    pub fn current(&self) -> Option<&AutosaveSet> {
        self.current.as_ref()
    }

    /// Writes a new set when at least `interval` seconds passed since the last
    /// save and the state differs from what was last saved.
    pub fn tick(&mut self, now: Timestamp, drawing: &Drawing, pp: Option<&PpBlob>) -> Result<TickOutcome> {
        if now.saturating_sub(self.last_save) < self.config.interval as i64 {
            return Ok(TickOutcome::Skipped);
        }
        let bytes = drawing.canonical_bytes();
        let digest = state_digest(&bytes, pp);
        if digest == self.saved_digest {
            return Ok(TickOutcome::Skipped);
        }
        let set = self.write_set(now, &bytes, pp)?;
        self.last_save = now;
        self.saved_digest = digest;
        self.current = Some(set.clone());
        Ok(TickOutcome::Saved(set))
    }

    fn write_set(&mut self, now: Timestamp, bytes: &[u8], pp: Option<&PpBlob>) -> Result<AutosaveSet> {
        let marker = Marker {
            session_id: self.session_id,
            created_at: now,
            doc: self.doc_id.clone(),
            drawing: Checksum::of(bytes),
            pp: pp.map(|p| (p.task_tag().to_owned(), Checksum::of(p.data()))),
        };
        let disk = &self.disk;
        let p = &self.paths;
        let staged = (|| {
            disk.create_dir_all(self.config.autosave_dir())?;
            disk.write_file(Stream::Autosave, &tmp_path(&p.drawing), bytes)?;
            if let Some(pp) = pp {
                disk.write_file(Stream::Autosave, &tmp_path(&p.pp), pp.data())?;
            }
            disk.write_file(Stream::Autosave, &tmp_path(&p.marker), &marker.encode())
        })();
        if let Err(e) = staged {
            if !disk.is_dead() {
                for f in p.all() {
                    let _ = disk.remove(Stream::Autosave, &tmp_path(f));
                }
            }
            return Err(e);
        }
        disk.rename(Stream::Autosave, &tmp_path(&p.marker), &p.marker)?;
        disk.rename(Stream::Autosave, &tmp_path(&p.drawing), &p.drawing)?;
        if pp.is_some() {
            disk.rename(Stream::Autosave, &tmp_path(&p.pp), &p.pp)?;
        } else {
            disk.remove(Stream::Autosave, &p.pp)?;
        }
        Ok(AutosaveSet::from_marker(p, marker))
    }

    /// Removes the set on normal termination.
    pub fn clean_shutdown(&mut self) -> Result<()> {
        remove_set(&self.paths, &self.disk)?;
        self.current = None;
        Ok(())
    }
}

/// Marker first, so a half-removed set is never mistaken for a valid one.
fn remove_set(paths: &AutosavePaths, disk: &Disk) -> Result<()> {
    if let Err(e) = disk.remove(Stream::Autosave, &paths.marker) {
        if e.is_crash() {
            return Err(e);
        }
        log::warn!("removing {} failed ({e}); retrying", paths.marker.display());
        disk.remove(Stream::Autosave, &paths.marker)?;
    }
    for f in paths.all() {
        disk.remove(Stream::Autosave, f)?;
        disk.remove(Stream::Autosave, &tmp_path(f))?;
    }
    Ok(())
}

/// Deletes any autosave set of `doc`, for example after the user declined recovery.
pub fn discard(autosave_dir: &Path, doc: &Path, disk: &Disk) -> Result<()> {
    remove_set(&AutosavePaths::new(autosave_dir, doc), disk)
}

/// What a recovery probe found.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProbeReport {
    pub found: Option<AutosaveSet>,
    pub warnings: Vec<String>,
}

/// Looks for a complete autosave set of `doc` left by an abnormal exit.
///
/// Staged copies of a set whose marker already committed are moved into
/// place. Leftovers that belong to no valid set are deleted. A set that
/// fails its checksums, or whose marker names another document, is reported
/// as a warning and left alone.
pub fn probe_recovery(autosave_dir: &Path, doc: &Path, disk: &Disk) -> ProbeReport {
    let mut report = ProbeReport::default();
    match probe_inner(autosave_dir, doc, disk, &mut report.warnings) {
        Ok(found) => report.found = found,
        Err(e) => report.warnings.push(format!("autosave probe failed: {e}")),
    }
    for w in &report.warnings {
        log::warn!("{w}");
    }
    report
}

fn probe_inner(autosave_dir: &Path, doc: &Path, disk: &Disk, warnings: &mut Vec<String>) -> Result<Option<AutosaveSet>> {
    let paths = AutosavePaths::new(autosave_dir, doc);
    let gc_tmps = |disk: &Disk| -> Result<()> {
        for f in paths.all() {
            disk.remove(Stream::Autosave, &tmp_path(f))?;
        }
        Ok(())
    };
    let Some(marker_bytes) = read_optional(&paths.marker)? else {
        gc_tmps(disk)?;
        disk.remove(Stream::Autosave, &paths.drawing)?;
        disk.remove(Stream::Autosave, &paths.pp)?;
        return Ok(None);
    };
    let Some(marker) = Marker::decode(&marker_bytes) else {
        warnings.push(format!("autosave marker {} is corrupt", paths.marker.display()));
        return Ok(None);
    };
    if marker.doc != doc_identity(doc) {
        warnings.push(format!(
            "autosave marker {} belongs to {}, not this document",
            paths.marker.display(),
            marker.doc
        ));
        return Ok(None);
    }
    if !settle_copy(&paths.drawing, &marker.drawing, disk)? {
        warnings.push(format!("autosave copy {} fails its checksum", paths.drawing.display()));
        return Ok(None);
    }
    match &marker.pp {
        Some((_, sum)) => {
            if !settle_copy(&paths.pp, sum, disk)? {
                warnings.push(format!("autosave copy {} fails its checksum", paths.pp.display()));
                return Ok(None);
            }
        }
        None => {
            disk.remove(Stream::Autosave, &paths.pp)?;
        }
    }
    gc_tmps(disk)?;
    Ok(Some(AutosaveSet::from_marker(&paths, marker)))
}

/// Makes `main` match `sum`, rolling its staged twin forward if needed.
fn settle_copy(main: &Path, sum: &Checksum, disk: &Disk) -> Result<bool> {
    if read_optional(main)?.is_some_and(|b| sum.matches(&b)) {
        return Ok(true);
    }
    let staged = tmp_path(main);
    if read_optional(&staged)?.is_some_and(|b| sum.matches(&b)) {
        disk.rename(Stream::Autosave, &staged, main)?;
        return Ok(true);
    }
    Ok(false)
}

/// Reads a set back. Non-destructive: the set stays on disk.
pub fn restore(set: &AutosaveSet) -> Result<(Drawing, Option<PpBlob>)> {
    const WHAT: &str = "autosave set";
    let bytes = std::fs::read(&set.drawing_copy)?;
    if !set.drawing_sum.matches(&bytes) {
        return Err(Error::corrupt(WHAT, "drawing copy checksum mismatch"));
    }
    let drawing = Drawing::from_canonical_bytes(drawing_name(Path::new(&set.doc)), &bytes)?;
    let pp = match (&set.pp, &set.pp_copy) {
        (Some((tag, sum)), Some(path)) => {
            let data = std::fs::read(path)?;
            if !sum.matches(&data) {
                return Err(Error::corrupt(WHAT, "PP copy checksum mismatch"));
            }
            Some(PpBlob::new(tag.clone(), data))
        }
        _ => None,
    };
    Ok((drawing, pp))
}
