//! The `draftvault` command-line frontend.
//!
//! [`run`] parses arguments, dispatches to the engine and returns the process
//! exit code: 0 success, 1 usage or script error, 2 I/O failure or busy
//! document, 3 verification failure (changed content, bad password, frozen
//! document, corrupt file).

mod state;

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use clap::{Parser, Subcommand};
use draftvault_core::autosave::{self, probe_recovery, AutosaveConfig, TickOutcome};
use draftvault_core::backup::{self, BackupConfig};
use draftvault_core::disk::{Disk, FaultPlan, SessionLock, Stream};
use draftvault_core::document::{DocPaths, DocumentFormat, StoredDocument};
use draftvault_core::harness::{self, HarnessOptions};
use draftvault_core::journal::{lock_path, read_journal, ChangeFlag};
use draftvault_core::pp::{PpBlob, PpVersionLog};
use draftvault_core::script::EditScript;
use draftvault_core::session::{self, clock_advance, EditSession, SessionOptions};
use draftvault_core::signature::{self, Authentication, Integrity, SALT_LEN};
use draftvault_core::{Error, Timestamp};
use sha2::{Digest, Sha256};

use crate::state::{drawing_digest, SessionState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

pub const ENV_AUTOSAVE_DIR: &str = "DRAFTVAULT_AUTOSAVE_DIR";
pub const ENV_PASSWORD: &str = "DRAFTVAULT_PASSWORD";
/// Makes signature salts a function of (seed, signer, time) for reproducible output.
pub const ENV_SALT_SEED: &str = "DRAFTVAULT_SALT_SEED";

#[derive(Parser)]
#[command(name = "draftvault", version, about = "Undo journal, PP versions, autosave, backups and signatures for drawings")]
struct Cli {
    /// Current time: ISO 8601 (2026-10-15T09:30:00Z), a date, or Unix seconds.
    #[arg(long, global = true, value_parser = parse_now)]
    now: Option<Timestamp>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply an edit script to a document as undoable steps.
    Edit {
        doc: PathBuf,
        #[arg(long)]
        script: PathBuf,
        /// Discard the undo history of the previous invocation.
        #[arg(long)]
        new_session: bool,
        /// Extension task whose PP log PP commands use.
        #[arg(long, default_value = "pp")]
        task: String,
        #[arg(long)]
        autosave_dir: Option<PathBuf>,
    },
    /// Undo the last step(s).
    Undo {
        doc: PathBuf,
        #[arg(short = 'n', long = "steps", default_value_t = 1)]
        steps: usize,
    },
    /// Redo undone step(s).
    Redo {
        doc: PathBuf,
        #[arg(short = 'n', long = "steps", default_value_t = 1)]
        steps: usize,
    },
    /// List journaled steps with their change counts.
    History { doc: PathBuf },
    /// Parametric-representation version history.
    Pp {
        #[command(subcommand)]
        cmd: PpCommand,
    },
    /// Run an edit script with timed autosave.
    AutosaveRun {
        doc: PathBuf,
        /// Minimum seconds between autosaves.
        #[arg(long)]
        interval: u64,
        #[arg(long)]
        script: PathBuf,
        /// Stop without saving or shutting down, as if the editor died.
        #[arg(long)]
        abandon: bool,
        #[arg(long)]
        autosave_dir: Option<PathBuf>,
        #[arg(long, default_value = "pp")]
        task: String,
        #[arg(long)]
        new_session: bool,
    },
    /// Look for an autosave set left by an interrupted session.
    Recover {
        doc: PathBuf,
        /// Write the autosaved drawing and PP back, then remove the set.
        #[arg(long, conflicts_with = "discard")]
        apply: bool,
        /// Remove the set without restoring it.
        #[arg(long)]
        discard: bool,
        #[arg(long)]
        autosave_dir: Option<PathBuf>,
    },
    /// Run the dated incremental backup if one is due.
    Backup {
        #[arg(long)]
        config: PathBuf,
        /// Calendar day to back up as (YYYY-MM-DD).
        #[arg(long, value_parser = parse_date)]
        today: Option<NaiveDate>,
    },
    /// Sign a document, freezing it. Password from DRAFTVAULT_PASSWORD or stdin.
    Sign {
        doc: PathBuf,
        #[arg(long)]
        signer: String,
    },
    /// Remove a signature. No password needed; the removal is logged.
    Unsign {
        doc: PathBuf,
        #[arg(long)]
        signer: String,
    },
    /// Check every signature against the document content.
    Verify {
        doc: PathBuf,
        /// Also check this signer's password.
        #[arg(long)]
        signer: Option<String>,
    },
    /// Run a script with a simulated crash and check what recovery finds.
    CrashSim {
        #[arg(long)]
        script: PathBuf,
        /// journal | autosave | pp-log | envelope
        #[arg(long)]
        target: Stream,
        #[arg(long, required_unless_present = "sweep", conflicts_with = "sweep")]
        kill_at: Option<u64>,
        /// Crash at every offset of the target stream.
        #[arg(long)]
        sweep: bool,
        /// Scratch directory (default: a temporary one, removed afterwards).
        #[arg(long)]
        workdir: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        interval: u64,
    },
}

#[derive(Subcommand)]
enum PpCommand {
    /// Store a new PP version.
    Commit {
        doc: PathBuf,
        #[arg(long, default_value = "pp")]
        task: String,
        #[arg(long, required_unless_present = "file", conflicts_with = "file")]
        hex: Option<String>,
        #[arg(long)]
        file: Option<PathBuf>,
    },
    Undo {
        doc: PathBuf,
        #[arg(long, default_value = "pp")]
        task: String,
    },
    Redo {
        doc: PathBuf,
        #[arg(long, default_value = "pp")]
        task: String,
    },
    /// Go straight to a version (1-based).
    Jump {
        doc: PathBuf,
        version: usize,
        #[arg(long, default_value = "pp")]
        task: String,
    },
    /// List versions and print the current one.
    Show {
        doc: PathBuf,
        #[arg(long, default_value = "pp")]
        task: String,
    },
}

fn parse_now(s: &str) -> Result<Timestamp, String> {
    if let Ok(secs) = s.parse::<i64>() {
        return Ok(secs);
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.timestamp());
    }
    if let Ok(t) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S") {
        return Ok(t.and_utc().timestamp());
    }
    if let Ok(d) = parse_date(s) {
        return Ok(d.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp());
    }
    Err(format!("cannot read {s:?} as a time"))
}

fn parse_date(s: &str) -> Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| format!("cannot read {s:?} as YYYY-MM-DD"))
}

fn iso(t: Timestamp) -> String {
    DateTime::from_timestamp(t, 0)
        .map(|d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| t.to_string())
}

/// Exit code for an engine error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::Locked(_) | Error::SimulatedCrash => EXIT_IO,
        Error::Frozen(_)
        | Error::Corrupt { .. }
        | Error::BadHeader { .. }
        | Error::NotFound { .. }
        | Error::NoSuchSigner(_) => EXIT_VERIFY,
        _ => EXIT_USAGE,
    }
}

struct Failure {
    code: i32,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: exit_code(&e),
            msg: e.to_string(),
        }
    }
}

fn fail(code: i32, msg: impl Into<String>) -> Failure {
    Failure { code, msg: msg.into() }
}

type Outcome = Result<i32, Failure>;

struct Ctx<'a> {
    now: Timestamp,
    explicit_now: bool,
    disk: Disk,
    input: &'a mut dyn BufRead,
    out: &'a mut dyn Write,
}

macro_rules! say {
    ($ctx:expr, $($arg:tt)*) => {
        writeln!($ctx.out, $($arg)*).map_err(|e| Failure::from(Error::from(e)))?
    };
}

/// Runs one CLI invocation. Arguments include the program name.
pub fn run<I, T>(args: I, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{e}");
                    EXIT_USAGE
                }
            };
        }
    };
    let mut ctx = Ctx {
        now: cli.now.unwrap_or_else(|| Utc::now().timestamp()),
        explicit_now: cli.now.is_some(),
        disk: Disk::os(),
        input,
        out,
    };
    match dispatch(&mut ctx, cli.cmd) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "draftvault: {}", f.msg);
            f.code
        }
    }
}

fn dispatch(ctx: &mut Ctx<'_>, cmd: Command) -> Outcome {
    match cmd {
        Command::Edit {
            doc,
            script,
            new_session,
            task,
            autosave_dir,
        } => cmd_edit(ctx, &doc, &script, new_session, &task, autosave_dir),
        Command::Undo { doc, steps } => cmd_move(ctx, &doc, steps, true),
        Command::Redo { doc, steps } => cmd_move(ctx, &doc, steps, false),
        Command::History { doc } => cmd_history(ctx, &doc),
        Command::Pp { cmd } => cmd_pp(ctx, cmd),
        Command::AutosaveRun {
            doc,
            interval,
            script,
            abandon,
            autosave_dir,
            task,
            new_session,
        } => cmd_autosave_run(ctx, &doc, interval, &script, abandon, autosave_dir, &task, new_session),
        Command::Recover {
            doc,
            apply,
            discard,
            autosave_dir,
        } => cmd_recover(ctx, &doc, apply, discard, autosave_dir),
        Command::Backup { config, today } => cmd_backup(ctx, &config, today),
        Command::Sign { doc, signer } => cmd_sign(ctx, &doc, &signer),
        Command::Unsign { doc, signer } => cmd_unsign(ctx, &doc, &signer),
        Command::Verify { doc, signer } => cmd_verify(ctx, &doc, signer.as_deref()),
        Command::CrashSim {
            script,
            target,
            kill_at,
            sweep,
            workdir,
            interval,
        } => cmd_crash_sim(ctx, &script, target, kill_at, sweep, workdir, interval),
    }
}

fn read_script(path: &Path) -> Result<EditScript, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| fail(EXIT_USAGE, format!("cannot read script {}: {e}", path.display())))?;
    Ok(EditScript::parse(&text)?)
}

/// Flag, then environment, then the document's own directory.
fn autosave_dir(flag: Option<PathBuf>, doc: &Path) -> PathBuf {
    flag.or_else(|| std::env::var_os(ENV_AUTOSAVE_DIR).map(PathBuf::from))
        .unwrap_or_else(|| match doc.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        })
}

/// An interrupted session's autosave must be dealt with before new edits.
fn refuse_if_recovery_pending(ctx: &mut Ctx<'_>, doc: &Path, dir: &Path) -> Result<(), Failure> {
    let _lock = SessionLock::acquire(&lock_path(&DocPaths::new(doc).journal), &ctx.disk)?;
    let report = probe_recovery(dir, doc, &ctx.disk);
    for w in &report.warnings {
        say!(ctx, "warning: {w}");
    }
    if let Some(set) = report.found {
        return Err(fail(
            EXIT_USAGE,
            format!(
                "an autosave from an interrupted session exists (saved {}); run `draftvault recover {} --apply` or `--discard` first",
                iso(set.created_at),
                doc.display()
            ),
        ));
    }
    Ok(())
}

/// Opens an editing session, continuing the previous invocation's undo
/// history when the document is still the one it left behind.
fn open_session(
    ctx: &Ctx<'_>,
    doc: &Path,
    task: &str,
    autosave: Option<AutosaveConfig>,
    new_session: bool,
) -> Result<EditSession, Failure> {
    let stored = StoredDocument::load_or_new(doc)?;
    let state = SessionState::load(doc)?;
    let journal_exists = DocPaths::new(doc).journal.exists();
    let resume_at = state
        .as_ref()
        .filter(|s| !new_session && journal_exists && s.matches(stored.envelope.document()))
        .map(|s| s.journal_cursor);
    let opts = SessionOptions {
        autosave,
        pp_task: Some(task.to_owned()),
        resume_at,
    };
    let mut session = match EditSession::open(doc, opts.clone(), ctx.now, &ctx.disk) {
        Err(Error::OutOfRange { .. }) if resume_at.is_some() => {
            log::warn!("saved undo position no longer fits the journal; starting a new session");
            EditSession::open(doc, SessionOptions { resume_at: None, ..opts }, ctx.now, &ctx.disk)?
        }
        other => other?,
    };
    let pp_cursor = state.as_ref().and_then(|s| s.pp_cursors.get(task).copied());
    if let (Some(c), Some(log)) = (pp_cursor, session.pp_log()) {
        if c >= 1 && c <= log.len() && c != log.cursor() {
            session.pp_jump(c)?;
        }
    }
    Ok(session)
}

/// Saves the document, records the cursors and ends the session normally.
fn close_session(ctx: &Ctx<'_>, doc: &Path, mut session: EditSession) -> Result<(), Failure> {
    session.save()?;
    let mut state = SessionState::load(doc)?.unwrap_or_default();
    state.drawing_sha256 = drawing_digest(&session.drawing().canonical_bytes());
    state.journal_cursor = session.journal().cursor();
    if let Some(log) = session.pp_log() {
        state.pp_cursors.insert(log.task_tag().to_owned(), log.cursor());
    }
    state.save(doc, &ctx.disk)?;
    session.shutdown()?;
    Ok(())
}

fn describe_position(session: &EditSession) -> String {
    format!(
        "step {} of {}, {} element(s)",
        session.journal().cursor(),
        session.journal().steps().len(),
        session.drawing().len()
    )
}

fn cmd_edit(ctx: &mut Ctx<'_>, doc: &Path, script: &Path, new_session: bool, task: &str, dir: Option<PathBuf>) -> Outcome {
    let script = read_script(script)?;
    refuse_if_recovery_pending(ctx, doc, &autosave_dir(dir, doc))?;
    let mut session = open_session(ctx, doc, task, None, new_session)?;
    session.run_script(&script)?;
    let summary = describe_position(&session);
    close_session(ctx, doc, session)?;
    say!(ctx, "applied {} step(s); now at {summary}", script.commit_count());
    Ok(EXIT_OK)
}

fn cmd_move(ctx: &mut Ctx<'_>, doc: &Path, steps: usize, undo: bool) -> Outcome {
    let word = if undo { "undo" } else { "redo" };
    let resumable = match (SessionState::load(doc)?, StoredDocument::load_or_new(doc)) {
        (Some(s), Ok(stored)) => DocPaths::new(doc).journal.exists() && s.matches(stored.envelope.document()),
        _ => false,
    };
    if !resumable {
        say!(ctx, "nothing to {word}");
        return Ok(EXIT_OK);
    }
    let mut session = open_session(ctx, doc, "pp", None, false)?;
    let mut done = 0;
    while done < steps {
        let r = if undo { session.undo() } else { session.redo() };
        match r {
            Ok(()) => done += 1,
            Err(Error::NothingToUndo | Error::NothingToRedo) => break,
            Err(e) => return Err(e.into()),
        }
    }
    let summary = describe_position(&session);
    close_session(ctx, doc, session)?;
    if done == 0 {
        say!(ctx, "nothing to {word}");
    } else {
        say!(ctx, "{word}: {done} step(s); now at {summary}");
    }
    Ok(EXIT_OK)
}

fn cmd_history(ctx: &mut Ctx<'_>, doc: &Path) -> Outcome {
    let paths = DocPaths::new(doc);
    if !paths.journal.exists() {
        say!(ctx, "no steps recorded");
        return Ok(EXIT_OK);
    }
    let scan = read_journal(&paths.journal)?;
    let stored = StoredDocument::load_or_new(doc)?;
    let cursor = SessionState::load(doc)?
        .filter(|s| s.matches(stored.envelope.document()))
        .map(|s| s.journal_cursor);
    if scan.steps.is_empty() {
        say!(ctx, "no steps recorded");
        return Ok(EXIT_OK);
    }
    say!(ctx, "  step  added  deleted");
    for s in &scan.steps {
        let applied = cursor.is_none_or(|c| (s.step_no as usize) <= c);
        say!(
            ctx,
            "{} {:>4}  {:>5}  {:>7}",
            if applied { '*' } else { ' ' },
            s.step_no,
            s.count(ChangeFlag::Added),
            s.count(ChangeFlag::Deleted)
        );
    }
    match cursor {
        Some(c) => say!(ctx, "at step {c} of {}", scan.steps.len()),
        None => say!(ctx, "{} step(s); the document has changed since, so they cannot be undone", scan.steps.len()),
    }
    if scan.valid_len < std::fs::metadata(&paths.journal).map_err(Error::from)?.len() || scan.torn_header {
        say!(ctx, "warning: the journal ends in an incomplete step");
    }
    Ok(EXIT_OK)
}

fn cmd_pp(ctx: &mut Ctx<'_>, cmd: PpCommand) -> Outcome {
    let (doc, task) = match &cmd {
        PpCommand::Commit { doc, task, .. }
        | PpCommand::Undo { doc, task }
        | PpCommand::Redo { doc, task }
        | PpCommand::Jump { doc, task, .. }
        | PpCommand::Show { doc, task } => (doc.clone(), task.clone()),
    };
    let paths = DocPaths::new(&doc);
    let (mut log, truncated) = PpVersionLog::open(&paths.pp_log, &task, &ctx.disk)?;
    if truncated {
        say!(ctx, "warning: PP log had an incomplete version at its end; it was dropped");
    }
    let mut state = SessionState::load(&doc)?.unwrap_or_default();
    if let Some(&c) = state.pp_cursors.get(&task) {
        if c >= 1 && c <= log.len() && c != log.cursor() {
            log.jump_pp(c)?;
        }
    }
    let moved = match cmd {
        PpCommand::Commit { hex, file, .. } => {
            let data = match (hex, file) {
                (Some(h), _) => ::hex::decode(h.trim()).map_err(|_| fail(EXIT_USAGE, "--hex is not valid hex"))?,
                (None, Some(f)) => std::fs::read(&f).map_err(Error::from)?,
                (None, None) => unreachable!("clap requires one of --hex/--file"),
            };
            let v = log.commit_pp(&PpBlob::new(task.clone(), data))?;
            say!(ctx, "committed PP version {v} of task {task}");
            true
        }
        PpCommand::Undo { .. } | PpCommand::Redo { .. } => {
            let undo = matches!(cmd, PpCommand::Undo { .. });
            let r = if undo { log.undo_pp() } else { log.redo_pp() };
            match r {
                Ok(_) => {
                    say!(ctx, "PP of task {task} now at version {} of {}", log.cursor(), log.len());
                    true
                }
                Err(Error::NothingToUndo) => {
                    say!(ctx, "nothing to undo");
                    false
                }
                Err(Error::NothingToRedo) => {
                    say!(ctx, "nothing to redo");
                    false
                }
                Err(e) => return Err(e.into()),
            }
        }
        PpCommand::Jump { version, .. } => {
            log.jump_pp(version)?;
            say!(ctx, "PP of task {task} now at version {} of {}", log.cursor(), log.len());
            true
        }
        PpCommand::Show { .. } => {
            if log.is_empty() {
                say!(ctx, "no PP versions for task {task}");
            }
            for (i, v) in log.versions().enumerate() {
                let mark = if i + 1 == log.cursor() { '*' } else { ' ' };
                say!(ctx, "{mark} {:>4}  {:>8} bytes  sha256 {}", i + 1, v.len(), &::hex::encode(Sha256::digest(v))[..16]);
            }
            if let Some(cur) = log.current() {
                say!(ctx, "current: {}", ::hex::encode(cur.data()));
            }
            false
        }
    };
    if moved {
        if state.drawing_sha256.is_empty() {
            // A state file created here carries no drawing, so it never resumes an undo history.
            state.drawing_sha256 = "-".into();
        }
        state.pp_cursors.insert(task, log.cursor());
        state.save(&doc, &ctx.disk)?;
    }
    Ok(EXIT_OK)
}

#[allow(clippy::too_many_arguments)]
fn cmd_autosave_run(
    ctx: &mut Ctx<'_>,
    doc: &Path,
    interval: u64,
    script: &Path,
    abandon: bool,
    dir: Option<PathBuf>,
    task: &str,
    new_session: bool,
) -> Outcome {
    let script = read_script(script)?;
    let dir = autosave_dir(dir, doc);
    let cfg = AutosaveConfig::new(interval, &dir)?;
    refuse_if_recovery_pending(ctx, doc, &dir)?;
    let mut session = open_session(ctx, doc, task, Some(cfg), new_session)?;
    say!(ctx, "{} session start, autosave every {interval}s into {}", iso(session.now()), dir.display());
    for action in script.actions() {
        session.apply(action)?;
        let t = session.now().saturating_add(clock_advance(action));
        if let Some(TickOutcome::Saved(set)) = session.tick(t)? {
            let pp = set.pp_task().map(|t| format!(" + PP of {t}")).unwrap_or_default();
            say!(ctx, "{} autosaved {} element(s){pp}", iso(set.created_at), session.drawing().len());
        }
    }
    if abandon {
        say!(ctx, "{} session abandoned; autosave set left for recovery", iso(session.now()));
        return Ok(EXIT_OK);
    }
    let end = session.now();
    close_session(ctx, doc, session)?;
    say!(ctx, "{} clean shutdown; autosave set removed", iso(end));
    Ok(EXIT_OK)
}

fn cmd_recover(ctx: &mut Ctx<'_>, doc: &Path, apply: bool, discard: bool, dir: Option<PathBuf>) -> Outcome {
    let dir = autosave_dir(dir, doc);
    let report = {
        let _lock = SessionLock::acquire(&lock_path(&DocPaths::new(doc).journal), &ctx.disk)?;
        probe_recovery(&dir, doc, &ctx.disk)
    };
    for w in &report.warnings {
        say!(ctx, "warning: {w}");
    }
    let Some(set) = report.found else {
        say!(ctx, "no autosave set found");
        if discard {
            autosave::discard(&dir, doc, &ctx.disk)?;
        }
        return Ok(EXIT_OK);
    };
    let pp = set.pp_task().map(|t| format!(" with PP of task {t}")).unwrap_or_default();
    say!(ctx, "autosave set found: saved {}{pp}", iso(set.created_at));
    if apply {
        let rec = session::apply_recovery(doc, &dir, &set, &ctx.disk)?;
        say!(ctx, "restored {} element(s) into {}", rec.drawing.len(), doc.display());
        if let Some(v) = rec.pp_version {
            say!(ctx, "restored PP committed as version {v}");
        }
    } else if discard {
        autosave::discard(&dir, doc, &ctx.disk)?;
        say!(ctx, "autosave set discarded");
    } else {
        say!(ctx, "run with --apply to restore it or --discard to drop it");
    }
    Ok(EXIT_OK)
}

fn cmd_backup(ctx: &mut Ctx<'_>, config: &Path, today: Option<NaiveDate>) -> Outcome {
    let cfg = BackupConfig::load(config)?;
    let today = today.unwrap_or_else(|| {
        if ctx.explicit_now {
            DateTime::from_timestamp(ctx.now, 0).expect("valid time").date_naive()
        } else {
            chrono::Local::now().date_naive()
        }
    });
    let mut locks = Vec::new();
    for journal in backup::journals_under_roots(&cfg)? {
        match SessionLock::acquire(&lock_path(&journal), &ctx.disk) {
            Ok(l) => locks.push(l),
            Err(Error::Locked(_)) => {
                return Err(fail(
                    EXIT_IO,
                    format!("{} is open in an editing session; backup postponed", journal.display()),
                ))
            }
            Err(e) => return Err(e.into()),
        }
    }
    match backup::backup_if_due(&cfg, today) {
        Ok(None) => say!(ctx, "backup not due on {today}"),
        Ok(Some(set)) if set.copied.is_empty() => say!(ctx, "backup {today}: no files changed"),
        Ok(Some(set)) => {
            say!(ctx, "backup {today}: {} file(s) copied into {}", set.copied.len(), set.dir.display());
            for (_, rel) in &set.copied {
                say!(ctx, "  {}", rel.display());
            }
        }
        Err(e @ Error::Io(_)) => {
            return Err(fail(EXIT_IO, format!("backup aborted, manifest left unchanged: {e}")));
        }
        Err(e) => return Err(e.into()),
    }
    Ok(EXIT_OK)
}

fn read_password(ctx: &mut Ctx<'_>) -> Result<String, Failure> {
    if let Ok(p) = std::env::var(ENV_PASSWORD) {
        return Ok(p);
    }
    let mut line = String::new();
    ctx.input.read_line(&mut line).map_err(Error::from)?;
    Ok(line.trim_end_matches(['\n', '\r']).to_owned())
}

fn seeded_salt(signer: &str, at: Timestamp) -> Option<[u8; SALT_LEN]> {
    let seed = std::env::var(ENV_SALT_SEED).ok()?;
    let mut h = Sha256::new();
    h.update(seed.as_bytes());
    h.update([0]);
    h.update(signer.as_bytes());
    h.update(at.to_le_bytes());
    Some(h.finalize()[..SALT_LEN].try_into().expect("salt length"))
}

fn cmd_sign(ctx: &mut Ctx<'_>, doc: &Path, signer: &str) -> Outcome {
    let _lock = SessionLock::acquire(&lock_path(&DocPaths::new(doc).journal), &ctx.disk)?;
    let stored = StoredDocument::load(doc)?;
    let password = read_password(ctx)?;
    let envelope = match seeded_salt(signer, ctx.now) {
        Some(salt) => stored.envelope.sign_with_salt(signer, &password, ctx.now, salt)?,
        None => stored.envelope.sign(signer, &password, ctx.now)?,
    };
    let n = envelope.signatures().len();
    StoredDocument {
        format: DocumentFormat::Envelope,
        envelope,
    }
    .save(doc, &ctx.disk)?;
    signature::append_audit(&ctx.disk, doc, ctx.now, "sign", signer, n)?;
    say!(ctx, "signed by {signer}; {n} signature(s); the document is frozen");
    Ok(EXIT_OK)
}

fn cmd_unsign(ctx: &mut Ctx<'_>, doc: &Path, signer: &str) -> Outcome {
    let _lock = SessionLock::acquire(&lock_path(&DocPaths::new(doc).journal), &ctx.disk)?;
    let stored = StoredDocument::load(doc)?;
    let envelope = stored.envelope.remove_signature(signer)?;
    let n = envelope.signatures().len();
    StoredDocument { envelope, ..stored }.save(doc, &ctx.disk)?;
    signature::append_audit(&ctx.disk, doc, ctx.now, "unsign", signer, n)?;
    if n == 0 {
        say!(ctx, "signature of {signer} removed; the document is now UNSIGNED and editable");
    } else {
        say!(ctx, "signature of {signer} removed; {n} signature(s) remain, the document stays frozen");
    }
    Ok(EXIT_OK)
}

fn cmd_verify(ctx: &mut Ctx<'_>, doc: &Path, signer: Option<&str>) -> Outcome {
    let stored = StoredDocument::load(doc)?;
    let env = &stored.envelope;
    let mut code = EXIT_OK;
    if !env.is_signed() {
        say!(ctx, "the document is not signed");
    }
    for (rec, (id, integrity)) in env.signatures().iter().zip(env.verify_integrity()) {
        let verdict = match integrity {
            Integrity::Intact => "intact",
            Integrity::ContentChanged => {
                code = EXIT_VERIFY;
                "CONTENT CHANGED since signing"
            }
        };
        say!(ctx, "{id}\tsigned {}\t{verdict}", iso(rec.signed_at));
    }
    if let Some(signer) = signer {
        let password = read_password(ctx)?;
        match env.authenticate_signature(signer, &password) {
            Authentication::Authentic => say!(ctx, "{signer}: password matches"),
            Authentication::BadPassword => {
                say!(ctx, "{signer}: BAD PASSWORD");
                code = EXIT_VERIFY;
            }
            Authentication::NoSuchSigner => {
                say!(ctx, "{signer}: no such signature");
                code = EXIT_VERIFY;
            }
        }
    }
    Ok(code)
}

fn cmd_crash_sim(
    ctx: &mut Ctx<'_>,
    script: &Path,
    target: Stream,
    kill_at: Option<u64>,
    sweep: bool,
    workdir: Option<PathBuf>,
    interval: u64,
) -> Outcome {
    let script = read_script(script)?;
    let opts = HarnessOptions {
        interval,
        start: ctx.now,
        ..Default::default()
    };
    let (scratch, temporary) = match workdir {
        Some(d) => (d, false),
        None => (std::env::temp_dir().join(format!("draftvault-crash-sim-{}", std::process::id())), true),
    };
    // Each simulated crash leaves a stale lock behind.
    let level = log::max_level();
    log::set_max_level(log::LevelFilter::Error);
    let result = (|| -> Result<Vec<harness::CrashReport>, Error> {
        if sweep {
            harness::sweep(&script, target, &scratch, &opts)
        } else {
            let run = scratch.join("run");
            let _ = std::fs::remove_dir_all(&run);
            let plan = FaultPlan {
                kill_at_byte: kill_at.expect("clap requires --kill-at without --sweep"),
                target,
            };
            Ok(vec![harness::crash_sim(&script, plan, &run, &opts)?])
        }
    })();
    log::set_max_level(level);
    if temporary {
        let _ = std::fs::remove_dir_all(&scratch);
    }
    let reports = result?;
    let mut violations = 0;
    for r in &reports {
        violations += r.violations.len();
        if sweep && r.violations.is_empty() {
            continue;
        }
        say!(
            ctx,
            "kill_at={} target={} crashed={} steps_recovered={} journal_truncated={} autosave_found={} pp_versions={} violations={}",
            r.plan.kill_at_byte,
            target,
            r.crashed_in.as_deref().unwrap_or("no"),
            r.steps_recovered,
            r.journal_truncated,
            r.autosave_found,
            r.pp_versions_recovered,
            r.violations.len()
        );
        for v in &r.violations {
            say!(ctx, "  violation: {v}");
        }
    }
    if sweep {
        say!(
            ctx,
            "swept {} crash points on the {target} stream: {violations} violation(s)",
            reports.len()
        );
    }
    Ok(if violations == 0 { EXIT_OK } else { EXIT_VERIFY })
}
