//! A live editing session over one document.
//!
//! The session owns the drawing, its journal, the PP log of the active task
//! and the autosaver. Every drawing mutation checks the signature guard first.

use std::path::Path;

use crate::autosave::{self, AutosaveConfig, AutosaveSet, Autosaver, TickOutcome};
use crate::disk::{Disk, SessionLock};
use crate::document::{drawing_name, DocPaths, StoredDocument};
use crate::journal::{lock_path, Change, Journal};
use crate::model::Drawing;
use crate::pp::{PpBlob, PpVersionLog};
use crate::script::{Action, EditScript};
use crate::signature::EditGuard;
use crate::{Error, Result, Timestamp};

#[derive(Debug, Clone, Default)]
pub struct SessionOptions {
    pub autosave: Option<AutosaveConfig>,
    /// Extension task whose PP log is opened. Without one, PP commands fail.
    pub pp_task: Option<String>,
    /// Keep the journal on disk and continue at this cursor instead of starting fresh.
    pub resume_at: Option<usize>,
}

#[derive(Debug)]
pub struct EditSession {
    paths: DocPaths,
    doc: StoredDocument,
    drawing: Drawing,
    journal: Journal,
    pp: Option<PpVersionLog>,
    autosaver: Option<Autosaver>,
    disk: Disk,
    now: Timestamp,
}

impl EditSession {
    pub fn open(doc_path: &Path, opts: SessionOptions, now: Timestamp, disk: &Disk) -> Result<Self> {
        let paths = DocPaths::new(doc_path);
        let doc = StoredDocument::load_or_new(doc_path)?;
        let mut drawing = doc.drawing(&drawing_name(doc_path))?;
        drawing.mark_clean();
        let journal = match opts.resume_at {
            None => Journal::begin_session(&paths.journal, disk)?,
            Some(cursor) => {
                let (mut j, truncated) = Journal::recover_journal(&paths.journal, disk)?;
                if truncated {
                    log::warn!("journal {} had a torn tail; it was cut back", paths.journal.display());
                }
                j.assume_cursor(cursor)?;
                j
            }
        };
        let pp = match &opts.pp_task {
            Some(task) => {
                let (log, truncated) = PpVersionLog::open(&paths.pp_log, task, disk)?;
                if truncated {
                    log::warn!("PP log {} had a torn tail; it was cut back", paths.pp_log.display());
                }
                Some(log)
            }
            None => None,
        };
        let autosaver = opts.autosave.map(|cfg| {
            let current = pp.as_ref().and_then(|p| p.current());
            Autosaver::start(cfg, doc_path, now, &drawing, current.as_ref(), disk)
        });
        Ok(Self {
            paths,
            doc,
            drawing,
            journal,
            pp,
            autosaver,
            disk: disk.clone(),
            now,
        })
    }

    pub fn paths(&self) -> &DocPaths {
        &self.paths
    }

    pub fn document(&self) -> &StoredDocument {
        &self.doc
    }

    pub fn drawing(&self) -> &Drawing {
        &self.drawing
    }

    pub fn journal(&self) -> &Journal {
        &self.journal
    }

    pub fn pp_log(&self) -> Option<&PpVersionLog> {
        self.pp.as_ref()
    }

    pub fn autosaver(&self) -> Option<&Autosaver> {
        self.autosaver.as_ref()
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn guard(&self) -> Result<()> {
        match self.doc.envelope.guard_edit() {
            EditGuard::Allowed => Ok(()),
            EditGuard::Locked => Err(Error::Frozen(self.doc.envelope.signatures().len())),
        }
    }

    pub fn commit_step(&mut self, changes: Vec<Change>) -> Result<u32> {
        self.guard()?;
        self.journal.commit_step(&mut self.drawing, changes)
    }

    pub fn undo(&mut self) -> Result<()> {
        self.guard()?;
        self.journal.undo_step(&mut self.drawing)
    }

    pub fn redo(&mut self) -> Result<()> {
        self.guard()?;
        self.journal.redo_step(&mut self.drawing)
    }

    fn pp_mut(&mut self) -> Result<&mut PpVersionLog> {
        self.pp
            .as_mut()
            .ok_or_else(|| Error::invalid("no extension task is active"))
    }

    pub fn pp_commit(&mut self, data: Vec<u8>) -> Result<usize> {
        let log = self.pp_mut()?;
        let blob = PpBlob::new(log.task_tag().to_owned(), data);
        log.commit_pp(&blob)
    }

    pub fn pp_undo(&mut self) -> Result<PpBlob> {
        self.pp_mut()?.undo_pp()
    }

    pub fn pp_redo(&mut self) -> Result<PpBlob> {
        self.pp_mut()?.redo_pp()
    }

    pub fn pp_jump(&mut self, version: usize) -> Result<PpBlob> {
        self.pp_mut()?.jump_pp(version)
    }

    /// Advances the clock and lets the autosaver run.
    pub fn tick(&mut self, now: Timestamp) -> Result<Option<TickOutcome>> {
        self.now = self.now.max(now);
        let current = self.pp.as_ref().and_then(|p| p.current());
        match &mut self.autosaver {
            Some(a) => a.tick(self.now, &self.drawing, current.as_ref()).map(Some),
            None => Ok(None),
        }
    }

    /// Writes the drawing into the document file.
    pub fn save(&mut self) -> Result<()> {
        if self.drawing.is_dirty() || !self.paths.doc.exists() {
            let next = self.doc.with_drawing(&self.drawing)?;
            next.save(&self.paths.doc, &self.disk)?;
            self.doc = next;
        }
        self.drawing.mark_clean();
        Ok(())
    }

    /// Normal termination: removes the autosave set. Does not save.
    pub fn shutdown(mut self) -> Result<()> {
        match &mut self.autosaver {
            Some(a) => a.clean_shutdown(),
            None => Ok(()),
        }
    }

    /// Performs one script action without moving the clock. Undo or redo
    /// with nothing to move over is a no-op.
    pub fn apply(&mut self, action: &Action) -> Result<()> {
        match action {
            Action::Commit(changes) => self.commit_step(changes.clone()).map(drop),
            Action::Undo => ignore_empty(self.undo()),
            Action::Redo => ignore_empty(self.redo()),
            Action::PpCommit(data) => self.pp_commit(data.clone()).map(drop),
            Action::PpJump(v) => self.pp_jump(*v).map(drop),
            Action::Wait(_) => Ok(()),
            Action::Save => self.save(),
        }
    }

    /// Runs one script action, then advances the clock by [`clock_advance`]
    /// and lets the autosaver tick.
    pub fn run_action(&mut self, action: &Action) -> Result<()> {
        self.apply(action)?;
        self.tick(self.now.saturating_add(clock_advance(action)))?;
        Ok(())
    }

    pub fn run_script(&mut self, script: &EditScript) -> Result<()> {
        script.actions().iter().try_for_each(|a| self.run_action(a))
    }
}

/// Seconds a script action takes on the session clock.
pub fn clock_advance(action: &Action) -> Timestamp {
    match action {
        Action::Wait(secs) => (*secs).try_into().unwrap_or(Timestamp::MAX),
        _ => 1,
    }
}

fn ignore_empty(r: Result<()>) -> Result<()> {
    match r {
        Err(Error::NothingToUndo | Error::NothingToRedo) => Ok(()),
        other => other,
    }
}

/// Outcome of applying an autosave set to its document.
#[derive(Debug, Clone)]
pub struct Recovered {
    pub drawing: Drawing,
    pub pp: Option<PpBlob>,
    /// PP log version the recovered PP was committed as, if it differed from the log's current one.
    pub pp_version: Option<usize>,
}

/// Writes a found autosave set back into the document (and PP log), then
/// removes the set. Refused while the document is signed or in use.
pub fn apply_recovery(doc_path: &Path, autosave_dir: &Path, set: &AutosaveSet, disk: &Disk) -> Result<Recovered> {
    let paths = DocPaths::new(doc_path);
    let _lock = SessionLock::acquire(&lock_path(&paths.journal), disk)?;
    let doc = StoredDocument::load_or_new(doc_path)?;
    if doc.envelope.is_signed() {
        return Err(Error::Frozen(doc.envelope.signatures().len()));
    }
    let (drawing, pp) = autosave::restore(set)?;
    doc.with_drawing(&drawing)?.save(doc_path, disk)?;
    let mut pp_version = None;
    if let Some(blob) = &pp {
        let (mut log, _) = PpVersionLog::open(&paths.pp_log, blob.task_tag(), disk)?;
        if log.current().as_ref() != Some(blob) {
            pp_version = Some(log.commit_pp(blob)?);
        }
    }
    autosave::discard(autosave_dir, doc_path, disk)?;
    Ok(Recovered {
        drawing,
        pp,
        pp_version,
    })
}
