//! The drawing model: an insertion-ordered multiset of opaque elements.
//!
//! Elements have no handle or id. Two elements are the same element when their
//! kind tags are equal and their data is byte-identical; undo finds the element
//! to remove by that coincidence.

use std::fmt;
use std::sync::Arc;

use crate::codec::{self, Reader};
use crate::{Error, Result};

pub const DRAWING_MAGIC: &[u8; 4] = b"TCGD";
pub const DRAWING_VERSION: u16 = 1;
/// Magic + version + element count.
pub const DRAWING_HEADER_LEN: usize = 10;

/// One geometric element, opaque to the engine.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ElementPayload {
    kind: u16,
    data: Arc<[u8]>,
}

impl ElementPayload {
    /// # Panics
    ///
    /// If `data` is longer than `u32::MAX` bytes.
    pub fn new(kind: u16, data: impl Into<Arc<[u8]>>) -> Self {
        let data = data.into();
        assert!(
            u32::try_from(data.len()).is_ok(),
            "element data exceeds 2^32-1 bytes"
        );
        Self { kind, data }
    }

    pub fn kind(&self) -> u16 {
        self.kind
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Size of this element in the canonical drawing encoding.
    pub fn encoded_len(&self) -> usize {
        2 + 4 + self.data.len()
    }

    pub(crate) fn not_found(&self) -> Error {
        Error::NotFound {
            kind: self.kind,
            len: self.data.len(),
        }
    }
}

impl fmt::Debug for ElementPayload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 16;
        let shown = &self.data[..self.data.len().min(SHOWN)];
        write!(f, "Element({}:{}", self.kind, hex::encode(shown))?;
        if self.data.len() > SHOWN {
            write!(f, "..+{}", self.data.len() - SHOWN)?;
        }
        f.write_str(")")
    }
}

/// The protected document.
#[derive(Debug, Clone)]
pub struct Drawing {
    name: String,
    elements: Vec<ElementPayload>,
    dirty: bool,
}

impl Drawing {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            elements: Vec::new(),
            dirty: false,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn elements(&self) -> &[ElementPayload] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// True when the drawing changed since it was loaded or last marked clean.
    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    pub fn mark_clean(&mut self) {
        self.dirty = false;
    }

    pub fn add_element(&mut self, e: ElementPayload) {
        self.elements.push(e);
        self.dirty = true;
    }

    /// Removes one element equal to `e`: the most recently inserted match.
    /// Returns the index it occupied.
    pub fn remove_matching(&mut self, e: &ElementPayload) -> Result<usize> {
        let idx = self
            .elements
            .iter()
            .rposition(|x| x == e)
            .ok_or_else(|| e.not_found())?;
        self.elements.remove(idx);
        self.dirty = true;
        Ok(idx)
    }

    pub fn count_of(&self, e: &ElementPayload) -> usize {
        self.elements.iter().filter(|x| *x == e).count()
    }

    /// Multiset equality, ignoring insertion order.
    pub fn multiset_eq(&self, other: &Drawing) -> bool {
        if self.len() != other.len() {
            return false;
        }
        let mut a: Vec<_> = self.elements.iter().collect();
        let mut b: Vec<_> = other.elements.iter().collect();
        a.sort_unstable();
        b.sort_unstable();
        a == b
    }

    pub(crate) fn insert_at(&mut self, idx: usize, e: ElementPayload) -> usize {
        let idx = idx.min(self.elements.len());
        self.elements.insert(idx, e);
        self.dirty = true;
        idx
    }

    pub(crate) fn remove_at(&mut self, idx: usize) -> ElementPayload {
        self.dirty = true;
        self.elements.remove(idx)
    }

    /// Deterministic byte form: `TCGD`, u16 version, u32 count, then per
    /// element u16 kind, u32 length and the data, all little-endian.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let body: usize = self.elements.iter().map(ElementPayload::encoded_len).sum();
        let mut out = Vec::with_capacity(DRAWING_HEADER_LEN + body);
        out.extend_from_slice(&codec::header(DRAWING_MAGIC, DRAWING_VERSION));
        codec::put_u32(
            &mut out,
            u32::try_from(self.elements.len()).expect("element count fits in u32"),
        );
        for e in &self.elements {
            codec::put_u16(&mut out, e.kind);
            codec::put_u32(&mut out, e.data.len() as u32);
            out.extend_from_slice(&e.data);
        }
        out
    }

    /// Inverse of [`Drawing::canonical_bytes`]. The name is not part of the
    /// encoding and is supplied by the caller.
    pub fn from_canonical_bytes(name: impl Into<String>, bytes: &[u8]) -> Result<Self> {
        const WHAT: &str = "drawing";
        let mut r = Reader::new(bytes);
        let head = r.bytes(codec::HEADER_LEN).ok_or(Error::BadHeader { what: WHAT })?;
        if head != codec::header(DRAWING_MAGIC, DRAWING_VERSION) {
            return Err(Error::BadHeader { what: WHAT });
        }
        let count = r
            .u32()
            .ok_or_else(|| Error::corrupt(WHAT, "missing element count"))? as usize;
        // Every element needs at least 6 bytes, so a huge count cannot force a huge allocation.
        let mut elements = Vec::with_capacity(count.min(r.remaining() / 6));
        for i in 0..count {
            let short = || Error::corrupt(WHAT, format!("element {i} truncated"));
            let kind = r.u16().ok_or_else(short)?;
            let len = r.u32().ok_or_else(short)? as usize;
            let data = r.bytes(len).ok_or_else(short)?;
            elements.push(ElementPayload::new(kind, data));
        }
        if !r.is_empty() {
            return Err(Error::corrupt(
                WHAT,
                format!("{} trailing bytes", r.remaining()),
            ));
        }
        Ok(Self {
            name: name.into(),
            elements,
            dirty: false,
        })
    }
}
