//! Plain-text edit scripts used by the CLI and the crash harness.
//!
//! One command per line, `#` starts a comment:
//!
//! ```text
//! ADD <kind> <hex>
//! DEL <kind> <hex>
//! MOD <kind> <hex> -> <kind> <hex>
//! STEP                  close the current step
//! UNDO | REDO
//! PPCOMMIT <hex>
//! PPJUMP <version>      1-based
//! WAIT <seconds>        advance the clock
//! SAVE                  write the document
//! ```
//!
//! `<hex>` may be `-` for an empty payload. Pending changes are closed into a
//! step by STEP, by any non-change command, and at end of input.

use crate::journal::{make_modify, Change};
use crate::model::ElementPayload;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Commit(Vec<Change>),
    Undo,
    Redo,
    PpCommit(Vec<u8>),
    PpJump(usize),
    Wait(u64),
    Save,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EditScript {
    actions: Vec<Action>,
}

impl EditScript {
    pub fn parse(text: &str) -> Result<Self> {
        let mut actions = Vec::new();
        let mut pending: Vec<Change> = Vec::new();
        let flush = |pending: &mut Vec<Change>, actions: &mut Vec<Action>| {
            if !pending.is_empty() {
                actions.push(Action::Commit(std::mem::take(pending)));
            }
        };
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| Error::invalid(format!("script line {}: {msg}: {raw:?}", n + 1));
            let words: Vec<&str> = line.split_whitespace().collect();
            let cmd = words[0].to_ascii_uppercase();
            let args = &words[1..];
            let arity = |k: usize| if args.len() == k { Ok(()) } else { Err(err("wrong number of arguments")) };
            match cmd.as_str() {
                "ADD" | "DEL" => {
                    arity(2)?;
                    let e = element(args[0], args[1]).map_err(&err)?;
                    pending.push(if cmd == "ADD" { Change::added(e) } else { Change::deleted(e) });
                }
                "MOD" => {
                    arity(5)?;
                    if args[2] != "->" {
                        return Err(err("expected '->'"));
                    }
                    let old = element(args[0], args[1]).map_err(&err)?;
                    let new = element(args[3], args[4]).map_err(&err)?;
                    pending.extend(make_modify(old, new));
                }
                "STEP" => {
                    arity(0)?;
                    flush(&mut pending, &mut actions);
                }
                _ => {
                    flush(&mut pending, &mut actions);
                    let action = match cmd.as_str() {
                        "UNDO" => arity(0).map(|_| Action::Undo),
                        "REDO" => arity(0).map(|_| Action::Redo),
                        "SAVE" => arity(0).map(|_| Action::Save),
                        "PPCOMMIT" => {
                            arity(1)?;
                            hex_arg(args[0]).map(Action::PpCommit).map_err(&err)
                        }
                        "PPJUMP" => {
                            arity(1)?;
                            args[0].parse().map(Action::PpJump).map_err(|_| err("bad version number"))
                        }
                        "WAIT" => {
                            arity(1)?;
                            args[0].parse().map(Action::Wait).map_err(|_| err("bad number of seconds"))
                        }
                        _ => Err(err("unknown command")),
                    }?;
                    actions.push(action);
                }
            }
        }
        flush(&mut pending, &mut actions);
        Ok(Self { actions })
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn commit_count(&self) -> usize {
        self.actions.iter().filter(|a| matches!(a, Action::Commit(_))).count()
    }
}

fn hex_arg(s: &str) -> Result<Vec<u8>, &'static str> {
    if s == "-" {
        return Ok(Vec::new());
    }
    hex::decode(s).map_err(|_| "bad hex payload")
}

fn element(kind: &str, data: &str) -> Result<ElementPayload, &'static str> {
    let kind: u16 = kind.parse().map_err(|_| "bad element kind")?;
    Ok(ElementPayload::new(kind, hex_arg(data)?))
}
