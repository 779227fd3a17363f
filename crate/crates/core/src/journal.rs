//! Step-grouped undo/redo over an append-only work file.
//!
//! Every user-visible change step is a run of atomic records, each an element
//! tagged as added or deleted, closed by a commit record carrying the same step
//! number. Undo replays the records of the current step in strictly reverse
//! order (added elements are found by content and removed, deleted elements are
//! put back); redo replays them forward. History is linear: committing after an
//! undo drops the redo tail from memory and from the file.
//!
//! Work file layout (little-endian):
//!
//! ```text
//! header  = "TCGJ" u16:version(=1)
//! record  = u32:step_no u8:flag u16:kind u32:payload_len payload u32:crc
//! flag    = 0x00 Deleted | 0x01 Added | 0x02 Commit (kind = len = 0)
//! crc     = CRC-32 over every preceding byte of the record
//! ```

use std::fs::File;
use std::path::{Path, PathBuf};

use crate::codec::{self, HeaderState, Reader, HEADER_LEN};
use crate::disk::{with_suffix, Disk, SessionLock, Stream};
use crate::model::{Drawing, ElementPayload};
use crate::{Error, Result};

pub const JOURNAL_MAGIC: &[u8; 4] = b"TCGJ";
pub const JOURNAL_VERSION: u16 = 1;
/// Bytes per record on top of the payload.
pub const RECORD_OVERHEAD: usize = 4 + 1 + 2 + 4 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChangeFlag {
    Deleted,
    Added,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RecordFlag {
    Deleted = 0x00,
    Added = 0x01,
    Commit = 0x02,
}

impl RecordFlag {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0x00 => Some(RecordFlag::Deleted),
            0x01 => Some(RecordFlag::Added),
            0x02 => Some(RecordFlag::Commit),
            _ => None,
        }
    }
}

impl From<ChangeFlag> for RecordFlag {
    fn from(f: ChangeFlag) -> Self {
        match f {
            ChangeFlag::Deleted => RecordFlag::Deleted,
            ChangeFlag::Added => RecordFlag::Added,
        }
    }
}

/// One atomic change: an element added to or deleted from the drawing.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Change {
    pub flag: ChangeFlag,
    pub payload: ElementPayload,
}

impl Change {
    pub fn added(payload: ElementPayload) -> Self {
        Self {
            flag: ChangeFlag::Added,
            payload,
        }
    }

    pub fn deleted(payload: ElementPayload) -> Self {
        Self {
            flag: ChangeFlag::Deleted,
            payload,
        }
    }
}

/// An attribute change (layer, colour, line type...) is a delete of the old
/// element followed by an add of the new one.
pub fn make_modify(old: ElementPayload, new: ElementPayload) -> Vec<Change> {
    vec![Change::deleted(old), Change::added(new)]
}

/// One record of the work file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JournalRecord {
    pub step_no: u32,
    pub flag: RecordFlag,
    /// `None` exactly for commit records.
    pub payload: Option<ElementPayload>,
}

impl JournalRecord {
    pub fn change(step_no: u32, change: &Change) -> Self {
        Self {
            step_no,
            flag: change.flag.into(),
            payload: Some(change.payload.clone()),
        }
    }

    pub fn commit(step_no: u32) -> Self {
        Self {
            step_no,
            flag: RecordFlag::Commit,
            payload: None,
        }
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        let start = out.len();
        codec::put_u32(out, self.step_no);
        codec::put_u8(out, self.flag as u8);
        match &self.payload {
            Some(p) => {
                codec::put_u16(out, p.kind());
                codec::put_u32(out, p.data().len() as u32);
                out.extend_from_slice(p.data());
            }
            None => {
                codec::put_u16(out, 0);
                codec::put_u32(out, 0);
            }
        }
        codec::seal(out, start);
    }

    /// Decodes one record at `pos`. `None` if the bytes are short, fail the
    /// CRC, or are not a well-formed record.
    pub fn decode(buf: &[u8], pos: usize) -> Option<(Self, usize)> {
        let mut r = Reader::at(buf, pos);
        let step_no = r.u32()?;
        let flag = RecordFlag::from_byte(r.u8()?)?;
        let kind = r.u16()?;
        let len = r.u32()? as usize;
        let data = r.bytes(len)?;
        r.check_crc(pos)?;
        let payload = match flag {
            RecordFlag::Commit if kind != 0 || len != 0 => return None,
            RecordFlag::Commit => None,
            _ => Some(ElementPayload::new(kind, data)),
        };
        Some((
            Self {
                step_no,
                flag,
                payload,
            },
            r.pos(),
        ))
    }
}

/// All atomic changes made to one selection of elements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangeStep {
    pub step_no: u32,
    pub changes: Vec<Change>,
}

impl ChangeStep {
    pub fn encode(&self, out: &mut Vec<u8>) {
        for c in &self.changes {
            JournalRecord::change(self.step_no, c).encode(out);
        }
        JournalRecord::commit(self.step_no).encode(out);
    }

    pub fn encoded_len(&self) -> usize {
        self.changes
            .iter()
            .map(|c| RECORD_OVERHEAD + c.payload.data().len())
            .sum::<usize>()
            + RECORD_OVERHEAD
    }

    pub fn count(&self, flag: ChangeFlag) -> usize {
        self.changes.iter().filter(|c| c.flag == flag).count()
    }
}

/// Result of parsing a work file image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JournalScan {
    pub steps: Vec<ChangeStep>,
    /// File offset just past each step's commit record.
    pub step_ends: Vec<u64>,
    /// Length of the longest valid prefix (header included).
    pub valid_len: u64,
    /// The header itself was missing or torn.
    pub torn_header: bool,
}

/// Parses the longest prefix of complete, checksum-valid steps with step
/// numbers running 1, 2, 3... Anything after it is reported as invalid via
/// `valid_len`.
pub fn scan_journal(bytes: &[u8]) -> Result<JournalScan> {
    match codec::inspect_header(bytes, JOURNAL_MAGIC, JOURNAL_VERSION) {
        HeaderState::Bad => return Err(Error::BadHeader { what: "journal" }),
        HeaderState::Torn => {
            return Ok(JournalScan {
                steps: Vec::new(),
                step_ends: Vec::new(),
                valid_len: 0,
                torn_header: true,
            })
        }
        HeaderState::Valid => {}
    }
    let mut steps = Vec::new();
    let mut step_ends = Vec::new();
    let mut valid_len = HEADER_LEN;
    let mut pos = HEADER_LEN;
    let mut pending = Vec::new();
    let mut expected: u32 = 1;
    while let Some((rec, next)) = JournalRecord::decode(bytes, pos) {
        if rec.step_no != expected {
            break;
        }
        pos = next;
        match (rec.flag, rec.payload) {
            (RecordFlag::Commit, _) => {
                if pending.is_empty() {
                    break;
                }
                steps.push(ChangeStep {
                    step_no: expected,
                    changes: std::mem::take(&mut pending),
                });
                step_ends.push(pos as u64);
                valid_len = pos;
                match expected.checked_add(1) {
                    Some(n) => expected = n,
                    None => break,
                }
            }
            (RecordFlag::Added, Some(p)) => pending.push(Change::added(p)),
            (RecordFlag::Deleted, Some(p)) => pending.push(Change::deleted(p)),
            _ => break,
        }
    }
    Ok(JournalScan {
        steps,
        step_ends,
        valid_len: valid_len as u64,
        torn_header: false,
    })
}

/// Reads and parses a work file without locking or repairing it.
pub fn read_journal(path: &Path) -> Result<JournalScan> {
    scan_journal(&std::fs::read(path)?)
}

/// Where an element operation touched the drawing.
type Positions = Vec<usize>;

enum ElementOp<'a> {
    Add(&'a ElementPayload, Option<usize>),
    Remove(&'a ElementPayload, Option<usize>),
}

impl ElementOp<'_> {
    fn apply(&self, drawing: &mut Drawing) -> Result<usize> {
        match *self {
            ElementOp::Add(p, Some(i)) => Ok(drawing.insert_at(i, p.clone())),
            ElementOp::Add(p, None) => {
                drawing.add_element(p.clone());
                Ok(drawing.len() - 1)
            }
            ElementOp::Remove(p, Some(i)) if drawing.elements().get(i) == Some(p) => {
                drawing.remove_at(i);
                Ok(i)
            }
            ElementOp::Remove(p, _) => drawing.remove_matching(p),
        }
    }

    fn inverse_at(&self, idx: usize) -> ElementOp<'_> {
        match *self {
            ElementOp::Add(p, _) => ElementOp::Remove(p, Some(idx)),
            ElementOp::Remove(p, _) => ElementOp::Add(p, Some(idx)),
        }
    }
}

/// Applies `ops` in order. On failure every applied op is inverted in reverse
/// order, leaving the drawing exactly as it was.
fn apply_all(drawing: &mut Drawing, ops: &[ElementOp<'_>]) -> Result<Positions> {
    let was_dirty = drawing.is_dirty();
    let mut done = Vec::with_capacity(ops.len());
    for op in ops {
        match op.apply(drawing) {
            Ok(idx) => done.push(idx),
            Err(e) => {
                rollback(drawing, &ops[..done.len()], &done);
                if !was_dirty {
                    drawing.mark_clean();
                }
                return Err(e);
            }
        }
    }
    Ok(done)
}

fn rollback(drawing: &mut Drawing, ops: &[ElementOp<'_>], positions: &[usize]) {
    for (op, &idx) in ops.iter().zip(positions).rev() {
        op.inverse_at(idx)
            .apply(drawing)
            .expect("inverse of an applied op always applies");
    }
}

fn forward_ops(step: &ChangeStep) -> Vec<ElementOp<'_>> {
    step.changes
        .iter()
        .map(|c| match c.flag {
            ChangeFlag::Added => ElementOp::Add(&c.payload, None),
            ChangeFlag::Deleted => ElementOp::Remove(&c.payload, None),
        })
        .collect()
}

/// Undo ops in strictly reverse record order. `hints` are the positions the
/// forward replay touched; without them elements are matched by content alone.
fn reverse_ops<'a>(step: &'a ChangeStep, hints: Option<&Positions>) -> Vec<ElementOp<'a>> {
    step.changes
        .iter()
        .enumerate()
        .rev()
        .map(|(i, c)| {
            let hint = hints.map(|h| h[i]);
            match c.flag {
                ChangeFlag::Added => ElementOp::Remove(&c.payload, hint),
                ChangeFlag::Deleted => ElementOp::Add(&c.payload, hint),
            }
        })
        .collect()
}

/// The undo machine of one editing session.
///
/// The cursor counts applied steps and lives only in memory. Alongside each
/// applied step the journal remembers where its elements sat in the drawing,
/// so an undo puts deleted elements back at their old positions and the
/// drawing returns to its exact earlier byte form. Steps read back from a file
/// after a restart have no positions yet and are undone by content matching
/// (multiset-exact) until they are replayed once.
#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
    disk: Disk,
    _lock: SessionLock,
    steps: Vec<ChangeStep>,
    hints: Vec<Option<Positions>>,
    step_ends: Vec<u64>,
    cursor: usize,
}

/// Lock file guarding a work file.
pub fn lock_path(journal_path: &Path) -> PathBuf {
    with_suffix(journal_path, ".lock")
}

impl Journal {
    /// Starts a session: takes the lock and creates (or truncates) the work
    /// file. Records of any earlier session are discarded.
    pub fn begin_session(path: &Path, disk: &Disk) -> Result<Self> {
        let lock = SessionLock::acquire(&lock_path(path), disk)?;
        let mut file = disk.create(Stream::Journal, path)?;
        disk.write_at(
            Stream::Journal,
            &mut file,
            0,
            &codec::header(JOURNAL_MAGIC, JOURNAL_VERSION),
        )?;
        disk.sync(&file)?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            disk: disk.clone(),
            _lock: lock,
            steps: Vec::new(),
            hints: Vec::new(),
            step_ends: Vec::new(),
            cursor: 0,
        })
    }

    /// Reopens an existing work file after a crash or restart. Keeps the
    /// longest prefix of complete steps, physically truncates the rest, and
    /// returns whether anything was dropped. The cursor is placed after the
    /// last step.
    pub fn recover_journal(path: &Path, disk: &Disk) -> Result<(Self, bool)> {
        let lock = SessionLock::acquire(&lock_path(path), disk)?;
        let bytes = std::fs::read(path)?;
        let scan = scan_journal(&bytes)?;
        let mut file = disk.open_rw(path)?;
        let truncated = scan.valid_len < bytes.len() as u64 || scan.torn_header;
        if scan.torn_header {
            disk.set_len(Stream::Journal, &file, 0)?;
            disk.write_at(
                Stream::Journal,
                &mut file,
                0,
                &codec::header(JOURNAL_MAGIC, JOURNAL_VERSION),
            )?;
            disk.sync(&file)?;
        } else if truncated {
            disk.set_len(Stream::Journal, &file, scan.valid_len)?;
            disk.sync(&file)?;
        }
        let n = scan.steps.len();
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
                disk: disk.clone(),
                _lock: lock,
                steps: scan.steps,
                hints: vec![None; n],
                step_ends: scan.step_ends,
                cursor: n,
            },
            truncated,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn steps(&self) -> &[ChangeStep] {
        &self.steps
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn can_undo(&self) -> bool {
        self.cursor > 0
    }

    pub fn can_redo(&self) -> bool {
        self.cursor < self.steps.len()
    }

    /// Offset where the next step's records go.
    fn applied_end(&self) -> u64 {
        match self.cursor {
            0 => HEADER_LEN as u64,
            k => self.step_ends[k - 1],
        }
    }

    /// Current size of the work file as written by this session.
    pub fn file_len(&self) -> u64 {
        self.step_ends.last().copied().unwrap_or(HEADER_LEN as u64)
    }

    /// Moves the cursor without touching the drawing. For resuming a session
    /// whose drawing is known to sit at step `cursor` (for example a saved
    /// document plus a recorded cursor).
    pub fn assume_cursor(&mut self, cursor: usize) -> Result<()> {
        if cursor > self.steps.len() {
            return Err(Error::OutOfRange {
                target: cursor,
                len: self.steps.len(),
            });
        }
        self.cursor = cursor;
        Ok(())
    }

    /// Applies `changes` to the drawing in order and appends them as one step
    /// followed by its commit record. A redo tail beyond the cursor is dropped
    /// first. On any failure the drawing is left unchanged; on an I/O failure
    /// the file is cut back to the last complete step.
    pub fn commit_step(&mut self, drawing: &mut Drawing, changes: Vec<Change>) -> Result<u32> {
        if changes.is_empty() {
            return Err(Error::invalid("a change step must contain at least one change"));
        }
        let step_no = u32::try_from(self.cursor + 1)
            .map_err(|_| Error::invalid("step number overflow"))?;
        let step = ChangeStep { step_no, changes };
        let was_dirty = drawing.is_dirty();
        let positions = {
            let ops = forward_ops(&step);
            apply_all(drawing, &ops)?
        };

        let base = self.applied_end();
        let mut buf = Vec::with_capacity(step.encoded_len());
        step.encode(&mut buf);
        if let Err(e) = self.append_step(base, &buf) {
            let ops = forward_ops(&step);
            rollback(drawing, &ops, &positions);
            if !was_dirty {
                drawing.mark_clean();
            }
            if !self.disk.is_dead() && self.disk.set_len(Stream::Journal, &self.file, base).is_ok() {
                let _ = self.disk.sync(&self.file);
            }
            self.drop_redo_tail();
            return Err(e);
        }
        self.drop_redo_tail();
        self.steps.push(step);
        self.hints.push(Some(positions));
        self.step_ends.push(base + buf.len() as u64);
        self.cursor = self.steps.len();
        Ok(step_no)
    }

    fn append_step(&mut self, base: u64, bytes: &[u8]) -> Result<()> {
        if base < self.file_len() {
            self.disk.set_len(Stream::Journal, &self.file, base)?;
        }
        self.disk.write_at(Stream::Journal, &mut self.file, base, bytes)?;
        self.disk.sync(&self.file)
    }

    fn drop_redo_tail(&mut self) {
        self.steps.truncate(self.cursor);
        self.hints.truncate(self.cursor);
        self.step_ends.truncate(self.cursor);
    }

    /// Reverts the step at the cursor. The work file is not touched.
    pub fn undo_step(&mut self, drawing: &mut Drawing) -> Result<()> {
        if self.cursor == 0 {
            return Err(Error::NothingToUndo);
        }
        let idx = self.cursor - 1;
        let ops = reverse_ops(&self.steps[idx], self.hints[idx].as_ref());
        apply_all(drawing, &ops)?;
        self.cursor = idx;
        Ok(())
    }

    /// Re-applies the step after the cursor.
    pub fn redo_step(&mut self, drawing: &mut Drawing) -> Result<()> {
        if self.cursor == self.steps.len() {
            return Err(Error::NothingToRedo);
        }
        let idx = self.cursor;
        let ops = forward_ops(&self.steps[idx]);
        let positions = apply_all(drawing, &ops)?;
        self.hints[idx] = Some(positions);
        self.cursor = idx + 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn el(kind: u16, data: &[u8]) -> ElementPayload {
        ElementPayload::new(kind, data)
    }

    struct Fixture {
        _dir: tempfile::TempDir,
        path: PathBuf,
        disk: Disk,
    }

    fn fixture() -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("doc.journal");
        Fixture {
            _dir: dir,
            path,
            disk: Disk::volatile(),
        }
    }

    #[test]
    fn new_session_is_empty_with_header_only() {
        let fx = fixture();
        let j = Journal::begin_session(&fx.path, &fx.disk).unwrap();
        assert_eq!(j.steps().len(), 0);
        assert_eq!(j.cursor(), 0);
        assert_eq!(std::fs::read(&fx.path).unwrap(), b"TCGJ\x01\x00");
    }

    #[test]
    fn second_session_on_same_path_is_locked() {
        let fx = fixture();
        let _j = Journal::begin_session(&fx.path, &fx.disk).unwrap();
        assert!(matches!(
            Journal::begin_session(&fx.path, &fx.disk),
            Err(Error::Locked(_))
        ));
    }

    #[test]
    fn begin_session_discards_prior_records() {
        let fx = fixture();
        let mut d = Drawing::new("d");
        {
            let mut j = Journal::begin_session(&fx.path, &fx.disk).unwrap();
            j.commit_step(&mut d, vec![Change::added(el(1, b"a"))]).unwrap();
        }
        let j = Journal::begin_session(&fx.path, &fx.disk).unwrap();
        assert!(j.steps().is_empty());
        assert_eq!(read_journal(&fx.path).unwrap().steps.len(), 0);
    }

    #[test]
    fn make_modify_is_delete_then_add() {
        let (a, b) = (el(1, b"old"), el(1, b"new"));
        assert_eq!(
            make_modify(a.clone(), b.clone()),
            vec![Change::deleted(a.clone()), Change::added(b.clone())]
        );
        assert_eq!(
            make_modify(a.clone(), a.clone()),
            vec![Change::deleted(a.clone()), Change::added(a.clone())]
        );
    }

    #[test]
    fn modify_pair_applies_as_one_step() {
        let fx = fixture();
        let (a, b) = (el(1, b"old"), el(1, b"new"));
        let mut d = Drawing::new("d");
        let mut j = Journal::begin_session(&fx.path, &fx.disk).unwrap();
        j.commit_step(&mut d, vec![Change::added(a.clone())]).unwrap();
        let no = j.commit_step(&mut d, make_modify(a.clone(), b.clone())).unwrap();
        assert_eq!(no, 2);
        assert_eq!(d.elements(), std::slice::from_ref(&b));
        assert_eq!(j.steps()[1].changes.len(), 2);
        j.undo_step(&mut d).unwrap();
        assert_eq!(d.elements(), &[a]);
    }

    #[test]
    fn first_step_and_undo() {
        let fx = fixture();
        let e1 = el(1, b"x");
        let mut d = Drawing::new("d");
        let mut j = Journal::begin_session(&fx.path, &fx.disk).unwrap();
        assert_eq!(j.commit_step(&mut d, vec![Change::added(e1.clone())]).unwrap(), 1);
        assert_eq!(d.elements(), std::slice::from_ref(&e1));
        j.undo_step(&mut d).unwrap();
        assert!(d.is_empty());
        assert!(matches!(j.undo_step(&mut d), Err(Error::NothingToUndo)));
        j.redo_step(&mut d).unwrap();
        assert_eq!(d.elements(), &[e1]);
        assert!(matches!(j.redo_step(&mut d), Err(Error::NothingToRedo)));
    }

    #[test]
    fn undo_of_delete_restores_element_in_place() {
        let fx = fixture();
        let (e1, e2, e3) = (el(1, b"1"), el(1, b"2"), el(1, b"3"));
        let mut d = Drawing::new("d");
        for e in [&e1, &e2, &e3] {
            d.add_element(e.clone());
        }
        let before = d.canonical_bytes();
        let mut j = Journal::begin_session(&fx.path, &fx.disk).unwrap();
        j.commit_step(&mut d, vec![Change::deleted(e2.clone())]).unwrap();
        assert_eq!(d.elements(), &[e1.clone(), e3.clone()]);
        j.undo_step(&mut d).unwrap();
        assert_eq!(d.canonical_bytes(), before);
    }

    #[test]
    fn self_modify_undo_is_bit_exact() {
        let fx = fixture();
        let (e1, e2) = (el(1, b"a"), el(2, b"b"));
        let mut d = Drawing::new("d");
        d.add_element(e1.clone());
        d.add_element(e2.clone());
        let before = d.canonical_bytes();
        let mut j = Journal::begin_session(&fx.path, &fx.disk).unwrap();
        j.commit_step(&mut d, make_modify(e1.clone(), e1.clone())).unwrap();
        assert_eq!(d.elements(), &[e2.clone(), e1.clone()]);
        j.undo_step(&mut d).unwrap();
        assert_eq!(d.canonical_bytes(), before);
    }

    #[test]
    fn missing_delete_aborts_step_without_change() {
        let fx = fixture();
        let (e1, e2) = (el(1, b"a"), el(2, b"b"));
        let mut d = Drawing::new("d");
        d.add_element(e1.clone());
        d.mark_clean();
        let before = d.canonical_bytes();
        let mut j = Journal::begin_session(&fx.path, &fx.disk).unwrap();
        let err = j
            .commit_step(
                &mut d,
                vec![Change::deleted(e1.clone()), Change::added(e2.clone()), Change::deleted(e1.clone())],
            )
            .unwrap_err();
        assert!(matches!(err, Error::NotFound { .. }));
        assert_eq!(d.canonical_bytes(), before);
        assert!(!d.is_dirty());
        assert!(j.steps().is_empty());
        assert_eq!(std::fs::metadata(&fx.path).unwrap().len(), HEADER_LEN as u64);
    }

    #[test]
    fn empty_step_is_rejected() {
        let fx = fixture();
        let mut j = Journal::begin_session(&fx.path, &fx.disk).unwrap();
        assert!(matches!(
            j.commit_step(&mut Drawing::new("d"), vec![]),
            Err(Error::Invalid(_))
        ));
    }

    #[test]
    fn commit_after_undo_truncates_redo_tail() {
        let fx = fixture();
        let mut d = Drawing::new("d");
        let mut j = Journal::begin_session(&fx.path, &fx.disk).unwrap();
        for i in 0..3u8 {
            j.commit_step(&mut d, vec![Change::added(el(1, &[i]))]).unwrap();
        }
        j.undo_step(&mut d).unwrap();
        j.undo_step(&mut d).unwrap();
        let no = j.commit_step(&mut d, vec![Change::added(el(9, b"n"))]).unwrap();
        assert_eq!(no, 2);
        assert_eq!(j.steps().len(), 2);
        assert!(!j.can_redo());

        let scan = read_journal(&fx.path).unwrap();
        assert_eq!(scan.steps, j.steps());
        assert_eq!(scan.valid_len, std::fs::metadata(&fx.path).unwrap().len());
        assert_eq!(d.elements(), &[el(1, &[0]), el(9, b"n")]);
    }

    #[test]
    fn divergence_is_reported_and_drawing_kept() {
        let fx = fixture();
        let e1 = el(1, b"a");
        let mut d = Drawing::new("d");
        let mut j = Journal::begin_session(&fx.path, &fx.disk).unwrap();
        j.commit_step(&mut d, vec![Change::added(el(2, b"z")), Change::added(e1.clone())])
            .unwrap();
        // Someone removed the element behind the journal's back.
        let mut tampered = Drawing::new("d");
        tampered.add_element(el(2, b"z"));
        let before = tampered.canonical_bytes();
        assert!(matches!(
            j.undo_step(&mut tampered),
            Err(Error::NotFound { .. })
        ));
        assert_eq!(tampered.canonical_bytes(), before);
        assert_eq!(j.cursor(), 1);
    }

    #[test]
    fn golden_record_layout() {
        let mut out = Vec::new();
        JournalRecord::change(1, &Change::added(el(0x0203, b"\xAA\xBB"))).encode(&mut out);
        let body: &[u8] = &[1, 0, 0, 0, 0x01, 0x03, 0x02, 2, 0, 0, 0, 0xAA, 0xBB];
        assert_eq!(&out[..body.len()], body);
        assert_eq!(&out[body.len()..], &crc32fast::hash(body).to_le_bytes());

        let mut commit = Vec::new();
        JournalRecord::commit(7).encode(&mut commit);
        assert_eq!(commit.len(), RECORD_OVERHEAD);
        assert_eq!(&commit[..11], &[7, 0, 0, 0, 0x02, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn record_decode_rejects_bad_crc_and_flags() {
        let mut out = Vec::new();
        JournalRecord::change(1, &Change::deleted(el(5, b"q"))).encode(&mut out);
        assert!(JournalRecord::decode(&out, 0).is_some());
        let mut bad = out.clone();
        bad[11] ^= 1;
        assert!(JournalRecord::decode(&bad, 0).is_none());
        let mut bad_flag = out.clone();
        bad_flag[4] = 3;
        let crc_at = bad_flag.len() - 4;
        let crc = crc32fast::hash(&bad_flag[..crc_at]);
        bad_flag[crc_at..].copy_from_slice(&crc.to_le_bytes());
        assert!(JournalRecord::decode(&bad_flag, 0).is_none());
    }

    #[test]
    fn scan_stops_at_gap_in_step_numbers() {
        let mut bytes = codec::header(JOURNAL_MAGIC, JOURNAL_VERSION).to_vec();
        ChangeStep { step_no: 1, changes: vec![Change::added(el(1, b"a"))] }.encode(&mut bytes);
        let good = bytes.len();
        ChangeStep { step_no: 3, changes: vec![Change::added(el(1, b"b"))] }.encode(&mut bytes);
        let scan = scan_journal(&bytes).unwrap();
        assert_eq!(scan.steps.len(), 1);
        assert_eq!(scan.valid_len, good as u64);
    }

    #[test]
    fn scan_rejects_empty_commit() {
        let mut bytes = codec::header(JOURNAL_MAGIC, JOURNAL_VERSION).to_vec();
        JournalRecord::commit(1).encode(&mut bytes);
        let scan = scan_journal(&bytes).unwrap();
        assert!(scan.steps.is_empty());
        assert_eq!(scan.valid_len, HEADER_LEN as u64);
    }

    #[test]
    fn recover_intact_file() {
        let fx = fixture();
        let mut d = Drawing::new("d");
        {
            let mut j = Journal::begin_session(&fx.path, &fx.disk).unwrap();
            for i in 0..5u8 {
                j.commit_step(&mut d, vec![Change::added(el(1, &[i]))]).unwrap();
            }
        }
        let (j, truncated) = Journal::recover_journal(&fx.path, &fx.disk).unwrap();
        assert!(!truncated);
        assert_eq!(j.steps().len(), 5);
        assert_eq!(j.cursor(), 5);
    }

    #[test]
    fn recover_cut_inside_step_and_before_commit() {
        let fx = fixture();
        let mut d = Drawing::new("d");
        let ends;
        {
            let mut j = Journal::begin_session(&fx.path, &fx.disk).unwrap();
            for i in 0..4u8 {
                j.commit_step(&mut d, vec![Change::added(el(1, &[i])), Change::added(el(2, &[i]))])
                    .unwrap();
            }
            ends = j.step_ends.clone();
        }
        let full = std::fs::read(&fx.path).unwrap();
        // Mid-record of step 4, and just before step 4's commit record.
        for cut in [ends[2] as usize + 5, ends[3] as usize - RECORD_OVERHEAD] {
            std::fs::write(&fx.path, &full[..cut]).unwrap();
            let (j, truncated) = Journal::recover_journal(&fx.path, &fx.disk).unwrap();
            assert!(truncated);
            assert_eq!(j.steps().len(), 3);
            assert_eq!(std::fs::metadata(&fx.path).unwrap().len(), ends[2]);
        }
    }

    #[test]
    fn recover_rejects_foreign_file() {
        let fx = fixture();
        std::fs::write(&fx.path, b"TCGP\x01\x00").unwrap();
        assert!(matches!(
            Journal::recover_journal(&fx.path, &fx.disk),
            Err(Error::BadHeader { .. })
        ));
    }

    #[test]
    fn recover_repairs_torn_header() {
        let fx = fixture();
        std::fs::write(&fx.path, b"TC").unwrap();
        let (mut j, truncated) = Journal::recover_journal(&fx.path, &fx.disk).unwrap();
        assert!(truncated);
        assert!(j.steps().is_empty());
        let mut d = Drawing::new("d");
        j.commit_step(&mut d, vec![Change::added(el(1, b"a"))]).unwrap();
        assert_eq!(read_journal(&fx.path).unwrap().steps.len(), 1);
    }

    #[test]
    fn recovered_steps_undo_by_content() {
        let fx = fixture();
        let (e1, e2) = (el(1, b"1"), el(1, b"2"));
        let mut d = Drawing::new("d");
        {
            let mut j = Journal::begin_session(&fx.path, &fx.disk).unwrap();
            j.commit_step(&mut d, vec![Change::added(e1.clone()), Change::added(e2.clone())]).unwrap();
            j.commit_step(&mut d, vec![Change::deleted(e1.clone())]).unwrap();
        }
        let (mut j, _) = Journal::recover_journal(&fx.path, &fx.disk).unwrap();
        j.undo_step(&mut d).unwrap();
        // Without positions the element comes back by content, at the end.
        assert_eq!(d.elements(), &[e2.clone(), e1.clone()]);
        j.undo_step(&mut d).unwrap();
        assert!(d.is_empty());
        j.redo_step(&mut d).unwrap();
        j.redo_step(&mut d).unwrap();
        assert_eq!(d.elements(), &[e2]);
    }

    #[test]
    fn assume_cursor_bounds() {
        let fx = fixture();
        let mut d = Drawing::new("d");
        {
            let mut j = Journal::begin_session(&fx.path, &fx.disk).unwrap();
            j.commit_step(&mut d, vec![Change::added(el(1, b"a"))]).unwrap();
        }
        let (mut j, _) = Journal::recover_journal(&fx.path, &fx.disk).unwrap();
        assert!(j.assume_cursor(2).is_err());
        j.assume_cursor(0).unwrap();
        assert!(!j.can_undo());
    }

    #[test]
    fn file_size_is_linear_in_payload() {
        let fx = fixture();
        let mut d = Drawing::new("d");
        let mut j = Journal::begin_session(&fx.path, &fx.disk).unwrap();
        let mut expected = HEADER_LEN;
        for i in 0..50usize {
            let payload = el(1, &vec![i as u8; i]);
            j.commit_step(&mut d, vec![Change::added(payload)]).unwrap();
            expected += 2 * RECORD_OVERHEAD + i;
            assert_eq!(std::fs::metadata(&fx.path).unwrap().len(), expected as u64);
        }
    }
}
