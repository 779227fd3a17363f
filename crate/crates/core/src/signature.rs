//! Electronic signatures that freeze a document.
//!
//! While an envelope carries at least one signature, nothing may change its
//! document bytes. Each signature is protected by its signer's password:
//! the authentication tag is an HMAC-SHA-256 keyed by PBKDF2-HMAC-SHA-256 of
//! the password. Anybody can remove a signature without a password; removal
//! is recorded in a plaintext audit log so the document is visibly unsigned.
//!
//! Envelope file layout (little-endian):
//!
//! ```text
//! header    = "TCGE" u16:version(=1)
//! section   = u8:type u32:len value u32:crc     crc = CRC-32 over type, len and value
//! type 0x01 = document bytes (exactly one, first)
//! type 0x02 = signature: u16:signer_len signer_id i64:signed_at salt[16] digest[32] tag[32]
//! ```

use std::path::Path;

use hmac::{Hmac, KeyInit, Mac};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::codec::{self, Reader, HEADER_LEN};
use crate::disk::{Disk, Stream};
use crate::{Error, Result, Timestamp};

pub const ENVELOPE_MAGIC: &[u8; 4] = b"TCGE";
pub const ENVELOPE_VERSION: u16 = 1;
pub const PBKDF2_ITERATIONS: u32 = 100_000;
pub const SALT_LEN: usize = 16;

const SECTION_DOCUMENT: u8 = 0x01;
const SECTION_SIGNATURE: u8 = 0x02;

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureRecord {
    pub signer_id: String,
    pub signed_at: Timestamp,
    pub salt: [u8; SALT_LEN],
    /// SHA-256 of the document bytes at signing time.
    pub doc_digest: [u8; 32],
    pub auth_tag: [u8; 32],
}

impl SignatureRecord {
    fn encode_value(&self, out: &mut Vec<u8>) {
        codec::put_u16(out, self.signer_id.len() as u16);
        out.extend_from_slice(self.signer_id.as_bytes());
        codec::put_i64(out, self.signed_at);
        out.extend_from_slice(&self.salt);
        out.extend_from_slice(&self.doc_digest);
        out.extend_from_slice(&self.auth_tag);
    }

    fn decode_value(value: &[u8]) -> Option<Self> {
        let mut r = Reader::new(value);
        let n = r.u16()? as usize;
        let signer_id = std::str::from_utf8(r.bytes(n)?).ok()?.to_owned();
        let rec = Self {
            signer_id,
            signed_at: r.i64()?,
            salt: r.array()?,
            doc_digest: r.array()?,
            auth_tag: r.array()?,
        };
        r.is_empty().then_some(rec)
    }
}

pub fn document_digest(document: &[u8]) -> [u8; 32] {
    Sha256::digest(document).into()
}

/// PBKDF2-HMAC-SHA-256 with [`PBKDF2_ITERATIONS`] rounds.
pub fn derive_key(password: &str, salt: &[u8; SALT_LEN]) -> [u8; 32] {
    let mut key = [0u8; 32];
    pbkdf2::pbkdf2_hmac::<Sha256>(password.as_bytes(), salt, PBKDF2_ITERATIONS, &mut key);
    key
}

fn tag_mac(key: &[u8; 32], digest: &[u8; 32], signer_id: &str, signed_at: Timestamp) -> HmacSha256 {
    let mut mac = <HmacSha256 as KeyInit>::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(digest);
    mac.update(signer_id.as_bytes());
    mac.update(&signed_at.to_le_bytes());
    mac
}

/// HMAC-SHA-256 over `digest ‖ signer_id ‖ signed_at (i64 LE)`.
pub fn auth_tag(key: &[u8; 32], digest: &[u8; 32], signer_id: &str, signed_at: Timestamp) -> [u8; 32] {
    tag_mac(key, digest, signer_id, signed_at).finalize().into_bytes().into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditGuard {
    Allowed,
    Locked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrity {
    Intact,
    ContentChanged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Authentication {
    Authentic,
    BadPassword,
    NoSuchSigner,
}

/// Document bytes plus the signatures over them. Value-like: every operation
/// returns a new envelope and none exposes the document mutably.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedEnvelope {
    document: Vec<u8>,
    signatures: Vec<SignatureRecord>,
}

impl SignedEnvelope {
    pub fn new(document: Vec<u8>) -> Self {
        Self {
            document,
            signatures: Vec::new(),
        }
    }

    pub fn document(&self) -> &[u8] {
        &self.document
    }

    pub fn signatures(&self) -> &[SignatureRecord] {
        &self.signatures
    }

    pub fn is_signed(&self) -> bool {
        !self.signatures.is_empty()
    }

    pub fn guard_edit(&self) -> EditGuard {
        if self.is_signed() {
            EditGuard::Locked
        } else {
            EditGuard::Allowed
        }
    }

    /// The one path that changes document bytes. Refused while signed.
    pub fn with_document(&self, document: Vec<u8>) -> Result<Self> {
        match self.guard_edit() {
            EditGuard::Locked => Err(Error::Frozen(self.signatures.len())),
            EditGuard::Allowed => Ok(Self {
                document,
                signatures: Vec::new(),
            }),
        }
    }

    /// Adds a signature with an explicit salt.
    pub fn sign_with_salt(
        &self,
        signer_id: &str,
        password: &str,
        signed_at: Timestamp,
        salt: [u8; SALT_LEN],
    ) -> Result<Self> {
        if password.is_empty() {
            return Err(Error::WeakPassword);
        }
        if signer_id.is_empty() || signer_id.len() > usize::from(u16::MAX) {
            return Err(Error::invalid("signer id must be 1..=65535 bytes"));
        }
        if self.signatures.iter().any(|s| s.signer_id == signer_id) {
            return Err(Error::DuplicateSigner(signer_id.to_owned()));
        }
        if self.signatures.iter().any(|s| s.salt == salt) {
            return Err(Error::invalid("salt already used by another signature"));
        }
        let doc_digest = document_digest(&self.document);
        let key = derive_key(password, &salt);
        let record = SignatureRecord {
            signer_id: signer_id.to_owned(),
            signed_at,
            salt,
            doc_digest,
            auth_tag: auth_tag(&key, &doc_digest, signer_id, signed_at),
        };
        let mut next = self.clone();
        next.signatures.push(record);
        Ok(next)
    }

    /// Adds a signature with a fresh random salt.
    pub fn sign(&self, signer_id: &str, password: &str, signed_at: Timestamp) -> Result<Self> {
        loop {
            let mut salt = [0u8; SALT_LEN];
            rand::rng().fill_bytes(&mut salt);
            if self.signatures.iter().all(|s| s.salt != salt) {
                return self.sign_with_salt(signer_id, password, signed_at, salt);
            }
        }
    }

    /// Checks every signature's digest against the current document bytes.
    /// Needs no password.
    pub fn verify_integrity(&self) -> Vec<(String, Integrity)> {
        let digest = document_digest(&self.document);
        self.signatures
            .iter()
            .map(|s| {
                let state = if s.doc_digest == digest {
                    Integrity::Intact
                } else {
                    Integrity::ContentChanged
                };
                (s.signer_id.clone(), state)
            })
            .collect()
    }

    pub fn authenticate_signature(&self, signer_id: &str, password: &str) -> Authentication {
        let Some(rec) = self.signatures.iter().find(|s| s.signer_id == signer_id) else {
            return Authentication::NoSuchSigner;
        };
        let key = derive_key(password, &rec.salt);
        match tag_mac(&key, &rec.doc_digest, &rec.signer_id, rec.signed_at).verify_slice(&rec.auth_tag) {
            Ok(()) => Authentication::Authentic,
            Err(_) => Authentication::BadPassword,
        }
    }

    /// Removes `signer_id`'s signature. No password is needed.
    pub fn remove_signature(&self, signer_id: &str) -> Result<Self> {
        let idx = self
            .signatures
            .iter()
            .position(|s| s.signer_id == signer_id)
            .ok_or_else(|| Error::NoSuchSigner(signer_id.to_owned()))?;
        let mut next = self.clone();
        next.signatures.remove(idx);
        Ok(next)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = codec::header(ENVELOPE_MAGIC, ENVELOPE_VERSION).to_vec();
        put_section(&mut out, SECTION_DOCUMENT, &self.document);
        let mut value = Vec::new();
        for s in &self.signatures {
            value.clear();
            s.encode_value(&mut value);
            put_section(&mut out, SECTION_SIGNATURE, &value);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        const WHAT: &str = "envelope";
        if bytes.len() < HEADER_LEN || bytes[..HEADER_LEN] != codec::header(ENVELOPE_MAGIC, ENVELOPE_VERSION) {
            return Err(Error::BadHeader { what: WHAT });
        }
        let mut r = Reader::at(bytes, HEADER_LEN);
        let mut document = None;
        let mut signatures = Vec::new();
        while !r.is_empty() {
            let start = r.pos();
            let (ty, value) = read_section(&mut r)
                .ok_or_else(|| Error::corrupt(WHAT, format!("bad section at offset {start}")))?;
            match (ty, document.is_some()) {
                (SECTION_DOCUMENT, false) => document = Some(value.to_vec()),
                (SECTION_SIGNATURE, true) => signatures.push(
                    SignatureRecord::decode_value(value)
                        .ok_or_else(|| Error::corrupt(WHAT, format!("bad signature at offset {start}")))?,
                ),
                _ => {
                    return Err(Error::corrupt(
                        WHAT,
                        format!("unexpected section type {ty:#04x} at offset {start}"),
                    ))
                }
            }
        }
        let document = document.ok_or_else(|| Error::corrupt(WHAT, "no document section"))?;
        Ok(Self {
            document,
            signatures,
        })
    }
}

fn put_section(out: &mut Vec<u8>, ty: u8, value: &[u8]) {
    let start = out.len();
    codec::put_u8(out, ty);
    codec::put_u32(out, u32::try_from(value.len()).expect("section fits in u32"));
    out.extend_from_slice(value);
    codec::seal(out, start);
}

fn read_section<'a>(r: &mut Reader<'a>) -> Option<(u8, &'a [u8])> {
    let start = r.pos();
    let ty = r.u8()?;
    let len = r.u32()? as usize;
    let value = r.bytes(len)?;
    r.check_crc(start)?;
    Some((ty, value))
}

/// `<doc>.siglog`
pub fn audit_log_path(doc: &Path) -> std::path::PathBuf {
    crate::disk::with_suffix(doc, ".siglog")
}

/// Appends one line to the signature audit log of `doc`.
pub fn append_audit(disk: &Disk, doc: &Path, at: Timestamp, action: &str, signer_id: &str, remaining: usize) -> Result<()> {
    let when = chrono::DateTime::from_timestamp(at, 0)
        .map(|t| t.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| at.to_string());
    let line = format!("{when}\t{action}\tsigner={}\tremaining={remaining}", signer_id.escape_debug());
    disk.append_line(Stream::Envelope, &audit_log_path(doc), &line)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> SignedEnvelope {
        SignedEnvelope::new(b"TCGD\x01\x00\x00\x00\x00\x00".to_vec())
    }

    #[test]
    fn unsigned_allows_edits() {
        let e = env();
        assert_eq!(e.guard_edit(), EditGuard::Allowed);
        assert!(e.verify_integrity().is_empty());
        assert_eq!(e.with_document(b"x".to_vec()).unwrap().document(), b"x");
    }

    #[test]
    fn signing_freezes_and_keeps_bytes() {
        let e = env();
        let s = e.sign_with_salt("ivanov", "pw", 10, [1; 16]).unwrap();
        assert_eq!(s.document(), e.document());
        assert_eq!(s.guard_edit(), EditGuard::Locked);
        assert!(matches!(s.with_document(vec![]), Err(Error::Frozen(1))));
    }

    #[test]
    fn second_signer_and_duplicates() {
        let s = env().sign_with_salt("ivanov", "pw", 10, [1; 16]).unwrap();
        let s2 = s.sign_with_salt("petrov", "pw2", 11, [2; 16]).unwrap();
        assert_eq!(s2.signatures().len(), 2);
        assert!(matches!(
            s2.sign_with_salt("ivanov", "pw", 12, [3; 16]),
            Err(Error::DuplicateSigner(_))
        ));
        assert!(s2.sign_with_salt("sidorov", "pw", 12, [2; 16]).is_err());
        assert!(matches!(env().sign_with_salt("a", "", 0, [0; 16]), Err(Error::WeakPassword)));
        assert!(env().sign_with_salt("", "pw", 0, [0; 16]).is_err());
    }

    #[test]
    fn random_salts_differ() {
        let s = env().sign("a", "pw", 0).unwrap().sign("b", "pw", 0).unwrap();
        assert_ne!(s.signatures()[0].salt, s.signatures()[1].salt);
    }

    #[test]
    fn removal_unfreezes_only_when_last() {
        let s = env()
            .sign_with_salt("a", "1", 0, [1; 16])
            .unwrap()
            .sign_with_salt("b", "2", 0, [2; 16])
            .unwrap();
        let one = s.remove_signature("a").unwrap();
        assert_eq!(one.guard_edit(), EditGuard::Locked);
        let none = one.remove_signature("b").unwrap();
        assert_eq!(none.guard_edit(), EditGuard::Allowed);
        assert_eq!(none.document(), s.document());
        assert!(matches!(none.remove_signature("b"), Err(Error::NoSuchSigner(_))));
    }

    #[test]
    fn authentication_outcomes() {
        let s = env().sign_with_salt("ivanov", "secret", 5, [9; 16]).unwrap();
        assert_eq!(s.authenticate_signature("ivanov", "secret"), Authentication::Authentic);
        assert_eq!(s.authenticate_signature("ivanov", "Secret"), Authentication::BadPassword);
        assert_eq!(s.authenticate_signature("petrov", "secret"), Authentication::NoSuchSigner);
    }

    #[test]
    fn pbkdf2_known_answer() {
        // PBKDF2-HMAC-SHA256, P="passwd", S="salt", c=1 (first 32 bytes of the published 64-byte output).
        let mut key = [0u8; 32];
        pbkdf2::pbkdf2_hmac::<Sha256>(b"passwd", b"salt", 1, &mut key);
        assert_eq!(
            hex::encode(key),
            "55ac046e56e3089fec1691c22544b605f94185216dde0465e68b9d57c20dacbc"
        );
    }

    #[test]
    fn envelope_round_trip_and_layout() {
        let s = env().sign_with_salt("ab", "pw", 0x0102, [7; 16]).unwrap();
        let bytes = s.encode();
        assert_eq!(&bytes[..6], b"TCGE\x01\x00");
        assert_eq!(bytes[6], SECTION_DOCUMENT);
        assert_eq!(&bytes[7..11], &10u32.to_le_bytes());
        let sig_at = 6 + 1 + 4 + 10 + 4;
        assert_eq!(bytes[sig_at], SECTION_SIGNATURE);
        let sig_len = 2 + 2 + 8 + 16 + 32 + 32;
        assert_eq!(&bytes[sig_at + 1..sig_at + 5], &(sig_len as u32).to_le_bytes());
        assert_eq!(&bytes[sig_at + 5..sig_at + 9], &[2, 0, b'a', b'b']);
        assert_eq!(bytes.len(), sig_at + 5 + sig_len + 4);
        assert_eq!(SignedEnvelope::decode(&bytes).unwrap(), s);
    }

    #[test]
    fn decode_rejects_damage() {
        let bytes = env().sign_with_salt("a", "pw", 0, [7; 16]).unwrap().encode();
        for i in HEADER_LEN..bytes.len() {
            let mut b = bytes.clone();
            b[i] ^= 0x40;
            assert!(SignedEnvelope::decode(&b).is_err(), "flip at {i} accepted");
        }
        assert!(matches!(SignedEnvelope::decode(b"TCGD\x01\x00"), Err(Error::BadHeader { .. })));
        assert!(SignedEnvelope::decode(&bytes[..bytes.len() - 1]).is_err());
        // Signature before document.
        let mut swapped = codec::header(ENVELOPE_MAGIC, ENVELOPE_VERSION).to_vec();
        put_section(&mut swapped, SECTION_SIGNATURE, &[0; 4]);
        assert!(SignedEnvelope::decode(&swapped).is_err());
    }
}
