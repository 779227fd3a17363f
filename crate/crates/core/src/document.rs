//! Document files on disk: either a bare drawing (`TCGD`) or a signed envelope (`TCGE`).

use std::path::{Path, PathBuf};

use crate::disk::{with_suffix, Disk, Stream};
use crate::model::{Drawing, DRAWING_MAGIC};
use crate::signature::{SignedEnvelope, ENVELOPE_MAGIC};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocumentFormat {
    Plain,
    Envelope,
}

/// A loaded document. Plain files are held as unsigned envelopes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredDocument {
    pub format: DocumentFormat,
    pub envelope: SignedEnvelope,
}

impl StoredDocument {
    pub fn new_plain(drawing: &Drawing) -> Self {
        Self {
            format: DocumentFormat::Plain,
            envelope: SignedEnvelope::new(drawing.canonical_bytes()),
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.starts_with(ENVELOPE_MAGIC) {
            Ok(Self {
                format: DocumentFormat::Envelope,
                envelope: SignedEnvelope::decode(bytes)?,
            })
        } else if bytes.starts_with(DRAWING_MAGIC) {
            // Validate now so a broken file is reported at load time.
            Drawing::from_canonical_bytes("", bytes)?;
            Ok(Self {
                format: DocumentFormat::Plain,
                envelope: SignedEnvelope::new(bytes.to_vec()),
            })
        } else {
            Err(Error::BadHeader { what: "document" })
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self.format {
            DocumentFormat::Plain => self.envelope.document().to_vec(),
            DocumentFormat::Envelope => self.envelope.encode(),
        }
    }

    pub fn drawing(&self, name: &str) -> Result<Drawing> {
        Drawing::from_canonical_bytes(name, self.envelope.document())
    }

    /// Replaces the drawing content. Refused while signed.
    pub fn with_drawing(&self, drawing: &Drawing) -> Result<Self> {
        let bytes = drawing.canonical_bytes();
        if bytes == self.envelope.document() {
            return Ok(self.clone());
        }
        Ok(Self {
            format: self.format,
            envelope: self.envelope.with_document(bytes)?,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }

    /// Loads `path`, or an empty plain drawing if it does not exist.
    pub fn load_or_new(path: &Path) -> Result<Self> {
        match crate::disk::read_optional(path)? {
            Some(bytes) => Self::decode(&bytes),
            None => Ok(Self::new_plain(&Drawing::new(drawing_name(path)))),
        }
    }

    pub fn save(&self, path: &Path, disk: &Disk) -> Result<()> {
        disk.write_atomic(Stream::Envelope, path, &self.encode())
    }
}

/// Drawing name derived from the document file name.
pub fn drawing_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Side files that belong to one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocPaths {
    pub doc: PathBuf,
    pub journal: PathBuf,
    pub pp_log: PathBuf,
    pub audit_log: PathBuf,
}

impl DocPaths {
    pub fn new(doc: &Path) -> Self {
        Self {
            doc: doc.to_path_buf(),
            journal: with_suffix(doc, ".journal"),
            pp_log: with_suffix(doc, ".pplog"),
            audit_log: crate::signature::audit_log_path(doc),
        }
    }
}
