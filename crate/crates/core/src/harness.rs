//! Deterministic crash injection for end-to-end recovery checks.
//!
//! [`crash_sim`] runs an edit script in a scratch directory on a [`Disk`]
//! that dies after a chosen number of bytes of one write stream. It then
//! recovers the journal, the PP log, the autosave set and the document the
//! way a restarted editor would, and compares each against an independent
//! model of what could legitimately be on disk at the moment of the crash.

use std::fs;
use std::path::{Path, PathBuf};

use crate::autosave::{probe_recovery, restore, AutosaveConfig, AutosavePaths};
use crate::disk::{read_optional, Disk, FaultPlan, Stream};
use crate::document::{DocPaths, StoredDocument};
use crate::journal::{Change, ChangeFlag, Journal};
use crate::model::Drawing;
use crate::pp::PpVersionLog;
use crate::script::{Action, EditScript};
use crate::session::{clock_advance, EditSession, SessionOptions};
use crate::{Error, Result, Timestamp};

pub const DOC_NAME: &str = "doc.tcgd";
pub const AUTOSAVE_SUBDIR: &str = "autosave";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HarnessOptions {
    pub interval: u64,
    pub pp_task: String,
    pub start: Timestamp,
}

impl Default for HarnessOptions {
    fn default() -> Self {
        Self {
            interval: 5,
            pp_task: "pp".into(),
            start: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrashReport {
    pub plan: FaultPlan,
    pub crashed: bool,
    /// Where the crash hit, e.g. `action 4 (Commit)` or `tick after action 4`.
    pub crashed_in: Option<String>,
    pub steps_recovered: usize,
    pub journal_truncated: bool,
    pub autosave_found: bool,
    pub pp_versions_recovered: usize,
    /// Bytes of the target stream that reached the disk.
    pub target_bytes: u64,
    pub violations: Vec<String>,
}

type Snapshot = (Vec<u8>, Option<Vec<u8>>);

/// What the disk must hold if no crash happened from here on.
#[derive(Debug, Clone, Default)]
struct Model {
    journal: Vec<Vec<Change>>,
    jcursor: usize,
    pp: Vec<Vec<u8>>,
    pcursor: usize,
    autosave: Option<Snapshot>,
    doc: Option<Vec<u8>>,
}

/// Acceptable on-disk states while one phase is in flight.
#[derive(Debug, Default)]
struct Allowed {
    journal: Vec<Vec<Vec<Change>>>,
    pp: Vec<Vec<Vec<u8>>>,
    autosave: Vec<Option<Snapshot>>,
    doc: Vec<Option<Vec<u8>>>,
}

impl Allowed {
    fn settled(m: &Model) -> Self {
        Self {
            journal: vec![m.journal.clone()],
            pp: vec![m.pp.clone()],
            autosave: vec![m.autosave.clone()],
            doc: vec![m.doc.clone()],
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Phase<'a> {
    Open,
    Act(usize, &'a Action),
    Tick(usize),
    FinalSave,
    Shutdown,
}

impl Phase<'_> {
    fn describe(&self) -> String {
        match self {
            Phase::Open => "session open".into(),
            Phase::Act(i, a) => format!("action {} ({})", i + 1, action_name(a)),
            Phase::Tick(i) => format!("autosave tick after action {}", i + 1),
            Phase::FinalSave => "final save".into(),
            Phase::Shutdown => "clean shutdown".into(),
        }
    }
}

fn action_name(a: &Action) -> &'static str {
    match a {
        Action::Commit(_) => "STEP",
        Action::Undo => "UNDO",
        Action::Redo => "REDO",
        Action::PpCommit(_) => "PPCOMMIT",
        Action::PpJump(_) => "PPJUMP",
        Action::Wait(_) => "WAIT",
        Action::Save => "SAVE",
    }
}

fn snapshot(session: &EditSession, model: &Model) -> Snapshot {
    let pp = (model.pcursor > 0).then(|| model.pp[model.pcursor - 1].clone());
    (session.drawing().canonical_bytes(), pp)
}

/// Runs `script` in `workdir` (which should be empty) with the given fault.
///
/// Returns `Err` only when the script itself is invalid for the session,
/// for example a DEL of an element that is not there.
pub fn crash_sim(script: &EditScript, plan: FaultPlan, workdir: &Path, opts: &HarnessOptions) -> Result<CrashReport> {
    fs::create_dir_all(workdir)?;
    let doc = workdir.join(DOC_NAME);
    let autosave_dir = workdir.join(AUTOSAVE_SUBDIR);
    let disk = Disk::with_fault(plan);
    let session_opts = SessionOptions {
        autosave: Some(AutosaveConfig::new(opts.interval, &autosave_dir)?),
        pp_task: Some(opts.pp_task.clone()),
        resume_at: None,
    };

    let mut model = Model::default();
    let mut violations = Vec::new();
    let mut session: Option<EditSession> = None;
    let mut crash: Option<(String, Allowed)> = None;

    let actions = script.actions();
    let mut phases = vec![Phase::Open];
    for (i, a) in actions.iter().enumerate() {
        phases.push(Phase::Act(i, a));
        phases.push(Phase::Tick(i));
    }
    phases.push(Phase::FinalSave);
    phases.push(Phase::Shutdown);

    for phase in phases {
        let mut allowed = Allowed::settled(&model);
        let mut next = model.clone();
        let outcome = match phase {
            Phase::Open => EditSession::open(&doc, session_opts.clone(), opts.start, &disk).map(|s| {
                session = Some(s);
            }),
            Phase::Act(_, action) => {
                let s = session.as_mut().expect("session open");
                match action {
                    Action::Commit(changes) => {
                        next.journal.truncate(next.jcursor);
                        allowed.journal.push(next.journal.clone());
                        next.journal.push(changes.clone());
                        next.jcursor += 1;
                        allowed.journal.push(next.journal.clone());
                    }
                    Action::Undo => next.jcursor = next.jcursor.saturating_sub(1),
                    Action::Redo => next.jcursor = (next.jcursor + 1).min(next.journal.len()),
                    Action::PpCommit(data) => {
                        next.pp.truncate(next.pcursor);
                        allowed.pp.push(next.pp.clone());
                        next.pp.push(data.clone());
                        next.pcursor += 1;
                        allowed.pp.push(next.pp.clone());
                    }
                    Action::PpJump(v) => next.pcursor = *v,
                    Action::Wait(_) => {}
                    Action::Save => {}
                }
                let r = s.apply(action);
                if matches!(action, Action::Save) {
                    // The drawing is unchanged by SAVE, so its bytes are the candidate.
                    let bytes = s.document().encode();
                    let candidate = Some(s.drawing().canonical_bytes());
                    allowed.doc.push(candidate);
                    if r.is_ok() {
                        next.doc = Some(bytes);
                    }
                }
                r
            }
            Phase::Tick(i) => {
                let s = session.as_mut().expect("session open");
                let candidate = snapshot(s, &model);
                allowed.autosave.push(Some(candidate.clone()));
                let now = s.now().saturating_add(clock_advance(&actions[i]));
                s.tick(now).map(|out| {
                    if let Some(crate::autosave::TickOutcome::Saved(_)) = out {
                        next.autosave = Some(candidate);
                    }
                })
            }
            Phase::FinalSave => {
                let s = session.as_mut().expect("session open");
                allowed.doc.push(Some(s.drawing().canonical_bytes()));
                let r = s.save();
                if r.is_ok() {
                    next.doc = Some(s.document().encode());
                }
                r
            }
            Phase::Shutdown => {
                allowed.autosave.push(None);
                next.autosave = None;
                session.take().expect("session open").shutdown()
            }
        };
        match outcome {
            Ok(()) => {
                model = next;
                if let Some(s) = &session {
                    check_live(s, &model, &phase, &mut violations);
                }
            }
            Err(Error::SimulatedCrash) => {
                crash = Some((phase.describe(), allowed));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    // Process image gone: drop everything before recovering.
    drop(session);

    let crashed = crash.is_some();
    let (crashed_in, allowed) = match crash {
        Some((at, allowed)) => (Some(at), allowed),
        None => (None, Allowed::settled(&model)),
    };
    let mut report = CrashReport {
        plan,
        crashed,
        crashed_in,
        steps_recovered: 0,
        journal_truncated: false,
        autosave_found: false,
        pp_versions_recovered: 0,
        target_bytes: disk.bytes_written(plan.target),
        violations,
    };
    recover_and_check(&doc, &autosave_dir, opts, &allowed, &model, crashed, &mut report);
    Ok(report)
}

fn check_live(s: &EditSession, model: &Model, phase: &Phase<'_>, violations: &mut Vec<String>) {
    let steps: Vec<&Vec<Change>> = s.journal().steps().iter().map(|st| &st.changes).collect();
    if s.journal().cursor() != model.jcursor || steps != model.journal.iter().collect::<Vec<_>>() {
        violations.push(format!("{}: live journal disagrees with the model", phase.describe()));
    }
    if let Some(log) = s.pp_log() {
        if log.cursor() != model.pcursor || !log.versions().eq(model.pp.iter().map(|v| &v[..])) {
            violations.push(format!("{}: live PP log disagrees with the model", phase.describe()));
        }
    }
}

/// Forward replay from an empty drawing, by content.
fn replay(steps: &[Vec<Change>]) -> Result<Drawing> {
    let mut d = Drawing::new("replay");
    for changes in steps {
        for c in changes {
            match c.flag {
                ChangeFlag::Added => d.add_element(c.payload.clone()),
                ChangeFlag::Deleted => {
                    d.remove_matching(&c.payload)?;
                }
            }
        }
    }
    Ok(d)
}

fn recover_and_check(
    doc: &Path,
    autosave_dir: &Path,
    opts: &HarnessOptions,
    allowed: &Allowed,
    model: &Model,
    crashed: bool,
    report: &mut CrashReport,
) {
    let disk = Disk::volatile();
    let v = &mut report.violations;
    let paths = DocPaths::new(doc);

    // Journal.
    let journal_steps: Option<Vec<Vec<Change>>> = if paths.journal.exists() {
        match Journal::recover_journal(&paths.journal, &disk) {
            Ok((j, truncated)) => {
                report.journal_truncated = truncated;
                let numbered = j.steps().iter().enumerate().all(|(i, s)| s.step_no as usize == i + 1);
                if !numbered {
                    v.push("recovered journal steps are not numbered 1..n".into());
                }
                Some(j.steps().iter().map(|s| s.changes.clone()).collect())
            }
            Err(e) => {
                v.push(format!("journal recovery failed: {e}"));
                None
            }
        }
    } else {
        Some(Vec::new())
    };
    if let Some(steps) = journal_steps {
        report.steps_recovered = steps.len();
        if !allowed.journal.contains(&steps) {
            v.push(format!(
                "journal recovered {} steps, not an acceptable state (candidates: {:?} steps)",
                steps.len(),
                allowed.journal.iter().map(Vec::len).collect::<Vec<_>>()
            ));
        }
        match replay(&steps) {
            Err(e) => v.push(format!("recovered journal does not replay: {e}")),
            Ok(_) if crashed => {}
            Ok(_) => {
                let expected = replay(&steps[..model.jcursor.min(steps.len())]);
                let saved = model.doc.as_deref().map(|b| Drawing::from_canonical_bytes("doc", b));
                if let (Ok(exp), Some(Ok(saved))) = (expected, saved) {
                    if !exp.multiset_eq(&saved) {
                        v.push("replaying the journal to its cursor does not give the saved drawing".into());
                    }
                }
            }
        }
    }

    // PP log.
    match PpVersionLog::open(&paths.pp_log, &opts.pp_task, &disk) {
        Ok((log, _)) => {
            let versions: Vec<Vec<u8>> = log.versions().map(<[u8]>::to_vec).collect();
            report.pp_versions_recovered = versions.len();
            if !allowed.pp.contains(&versions) {
                v.push(format!("PP log recovered {} versions, not an acceptable state", versions.len()));
            }
        }
        Err(e) => v.push(format!("PP log recovery failed: {e}")),
    }

    // Autosave.
    let probe = probe_recovery(autosave_dir, doc, &disk);
    for w in &probe.warnings {
        v.push(format!("autosave probe warning: {w}"));
    }
    let found = match &probe.found {
        Some(set) => match restore(set) {
            Ok((d, pp)) => {
                if pp.as_ref().is_some_and(|p| p.task_tag() != opts.pp_task) {
                    v.push("autosave PP copy carries the wrong task".into());
                }
                Some((d.canonical_bytes(), pp.map(|p| p.data().to_vec())))
            }
            Err(e) => {
                v.push(format!("autosave set found but not restorable: {e}"));
                None
            }
        },
        None => None,
    };
    report.autosave_found = found.is_some();
    if !allowed.autosave.contains(&found) {
        v.push(match &found {
            Some(_) => "autosave set recovered is neither the previous nor the new one".into(),
            None => "no autosave set recoverable although one was committed".into(),
        });
    }
    let set_files = AutosavePaths::new(autosave_dir, doc);
    if let Ok(entries) = fs::read_dir(autosave_dir) {
        let keep = [&set_files.drawing, &set_files.pp, &set_files.marker];
        for entry in entries.flatten() {
            let p: PathBuf = entry.path();
            if !keep.contains(&&p) {
                v.push(format!("stray file {} left in autosave dir after probe", p.display()));
            }
        }
    }

    // Document.
    match read_optional(doc) {
        Ok(bytes) => {
            if let Some(b) = &bytes {
                if let Err(e) = StoredDocument::decode(b) {
                    v.push(format!("document file is unreadable: {e}"));
                }
            }
            if !allowed.doc.contains(&bytes) {
                v.push("document file is neither the previous nor the new version".into());
            }
        }
        Err(e) => v.push(format!("document unreadable: {e}")),
    }
}

/// Bytes `script` writes to `target` when nothing fails, run in `workdir`.
/// Autosave markers embed the document path, so the count depends on it.
pub fn stream_length(script: &EditScript, target: Stream, workdir: &Path, opts: &HarnessOptions) -> Result<u64> {
    let plan = FaultPlan {
        kill_at_byte: u64::MAX,
        target,
    };
    let _ = fs::remove_dir_all(workdir);
    let report = crash_sim(script, plan, workdir, opts)?;
    fs::remove_dir_all(workdir)?;
    Ok(report.target_bytes)
}

/// Crashes at every offset of `target`'s write stream, from 0 through one past
/// its total so trailing metadata operations are covered. `scratch` is reused
/// for each run.
pub fn sweep(script: &EditScript, target: Stream, scratch: &Path, opts: &HarnessOptions) -> Result<Vec<CrashReport>> {
    let dir = scratch.join("run");
    let total = stream_length(script, target, &dir, opts)?;
    let mut reports = Vec::with_capacity(total as usize + 2);
    for kill_at_byte in 0..=total + 1 {
        let _ = fs::remove_dir_all(&dir);
        reports.push(crash_sim(script, FaultPlan { kill_at_byte, target }, &dir, opts)?);
    }
    let _ = fs::remove_dir_all(&dir);
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCRIPT: &str = "\
ADD 1 0a0b
ADD 2 0c
STEP
PPCOMMIT 01
WAIT 5
MOD 1 0a0b -> 1 0a0c
STEP
ADD 3 ff
STEP
UNDO
PPCOMMIT 02
WAIT 5
SAVE
ADD 4 1234
STEP
DEL 2 0c
STEP
WAIT 5
";

    fn script() -> EditScript {
        EditScript::parse(SCRIPT).unwrap()
    }

    #[test]
    fn no_fault_runs_to_completion() {
        let tmp = tempfile::tempdir().unwrap();
        let plan = FaultPlan {
            kill_at_byte: u64::MAX,
            target: Stream::Journal,
        };
        let r = crash_sim(&script(), plan, tmp.path(), &HarnessOptions::default()).unwrap();
        assert!(!r.crashed);
        assert_eq!(r.violations, Vec::<String>::new());
        // Five commits, one of which replaced the undone step.
        assert_eq!(r.steps_recovered, 4);
        assert!(!r.autosave_found);
        assert_eq!(r.pp_versions_recovered, 2);
    }

    #[test]
    fn kill_inside_fourth_step() {
        let tmp = tempfile::tempdir().unwrap();
        let s = script();
        let opts = HarnessOptions::default();
        // Journal stream: create, header, steps 1..3, the truncate that drops
        // the undone step 3, its replacement, then step 4.
        let step = |payload_lens: &[usize]| payload_lens.iter().map(|n| 15 + *n as u64).sum::<u64>() + 15;
        let before_step4 = 1 + 6 + step(&[2, 1]) + step(&[2, 2]) + step(&[1]) + 1 + step(&[2]);
        let kill = before_step4 + 3;
        let r = crash_sim(&s, FaultPlan { kill_at_byte: kill, target: Stream::Journal }, tmp.path(), &opts).unwrap();
        assert!(r.crashed);
        assert_eq!(r.violations, Vec::<String>::new());
        assert_eq!(r.steps_recovered, 3);
        assert!(r.journal_truncated);
    }

    #[test]
    fn full_sweeps_are_clean() {
        let tmp = tempfile::tempdir().unwrap();
        for target in Stream::ALL {
            let reports = sweep(&script(), target, tmp.path(), &HarnessOptions::default()).unwrap();
            assert!(reports.len() > 1, "{target}");
            for r in &reports {
                assert_eq!(r.violations, Vec::<String>::new(), "{target} at {}", r.plan.kill_at_byte);
            }
            assert!(!reports.last().unwrap().crashed, "{target}");
            let total = (reports.len() - 2) as u64;
            assert!(reports.iter().filter(|r| r.plan.kill_at_byte < total).all(|r| r.crashed), "{target}");
            assert!(reports.iter().any(|r| r.crashed && r.autosave_found) || target != Stream::Autosave);
        }
    }
}
