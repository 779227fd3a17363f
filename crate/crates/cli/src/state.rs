//! `<doc>.session`: undo and PP cursors carried between CLI invocations.
//!
//! Cursors only mean something for the drawing they were taken on, so the
//! file also records a digest of the drawing. A mismatch (the document was
//! replaced, restored from autosave, or edited elsewhere) starts a new
//! session.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use draftvault_core::disk::{read_optional, with_suffix, Disk, Stream};
use draftvault_core::Result;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SessionState {
    pub drawing_sha256: String,
    pub journal_cursor: usize,
    pub pp_cursors: BTreeMap<String, usize>,
}

pub fn state_path(doc: &Path) -> PathBuf {
    with_suffix(doc, ".session")
}

pub fn drawing_digest(canonical: &[u8]) -> String {
    hex::encode(Sha256::digest(canonical))
}

impl SessionState {
    pub fn load(doc: &Path) -> Result<Option<Self>> {
        let Some(bytes) = read_optional(&state_path(doc))? else {
            return Ok(None);
        };
        Ok(Self::parse(&String::from_utf8_lossy(&bytes)))
    }

    /// Unparseable files are treated as absent.
    fn parse(text: &str) -> Option<Self> {
        let mut s = Self::default();
        let mut have_digest = false;
        for line in text.lines() {
            let (k, v) = line.split_once('=')?;
            match k {
                "drawing_sha256" => {
                    s.drawing_sha256 = v.to_owned();
                    have_digest = true;
                }
                "journal_cursor" => s.journal_cursor = v.parse().ok()?,
                _ => {
                    let task = k.strip_prefix("pp_cursor.")?;
                    s.pp_cursors.insert(task.to_owned(), v.parse().ok()?);
                }
            }
        }
        have_digest.then_some(s)
    }

    fn to_text(&self) -> String {
        let mut out = format!("drawing_sha256={}\njournal_cursor={}\n", self.drawing_sha256, self.journal_cursor);
        for (task, c) in &self.pp_cursors {
            out.push_str(&format!("pp_cursor.{task}={c}\n"));
        }
        out
    }

    pub fn save(&self, doc: &Path, disk: &Disk) -> Result<()> {
        disk.write_atomic(Stream::Journal, &state_path(doc), self.to_text().as_bytes())
    }

    pub fn matches(&self, canonical: &[u8]) -> bool {
        self.drawing_sha256 == drawing_digest(canonical)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut s = SessionState {
            drawing_sha256: drawing_digest(b"x"),
            journal_cursor: 3,
            ..Default::default()
        };
        s.pp_cursors.insert("profile".into(), 2);
        assert_eq!(SessionState::parse(&s.to_text()), Some(s.clone()));
        assert!(s.matches(b"x"));
        assert!(!s.matches(b"y"));
        assert_eq!(SessionState::parse("journal_cursor=1\n"), None);
        assert_eq!(SessionState::parse("garbage"), None);
    }
}
