//! Dated incremental backups of watched directory trees.
//!
//! On the first launch of a configured weekday every file whose content hash
//! differs from the manifest is copied to `<vault_root>/YYYY-MM-DD/`. The
//! manifest at `<vault_root>/manifest.txt` records what the last completed
//! backup saw. Old dated directories are never touched.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Component, Path, PathBuf};

use chrono::{Datelike, NaiveDate, Weekday};
use serde::Deserialize;
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use crate::disk::tmp_path;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackupConfig {
    /// Empty disables backups.
    pub weekdays: Vec<Weekday>,
    pub watch_roots: Vec<PathBuf>,
    pub vault_root: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    weekdays: Vec<String>,
    watch_roots: Vec<PathBuf>,
    vault_root: PathBuf,
}

impl BackupConfig {
    /// Parses TOML. Relative paths are resolved against `base`.
    ///
    /// ```toml
    /// weekdays = ["Mon", "Thu"]
    /// watch_roots = ["projects"]
    /// vault_root = "vault"
    /// ```
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::invalid(format!("backup config: {e}")))?;
        let mut weekdays = Vec::new();
        for w in &raw.weekdays {
            let day: Weekday = w
                .parse()
                .map_err(|_| Error::invalid(format!("backup config: unknown weekday {w:?}")))?;
            if !weekdays.contains(&day) {
                weekdays.push(day);
            }
        }
        let cfg = Self {
            weekdays,
            watch_roots: raw.watch_roots.iter().map(|p| base.join(p)).collect(),
            vault_root: base.join(raw.vault_root),
        };
        cfg.root_names()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.vault_root.join(MANIFEST_FILE)
    }

    /// Manifest keys start with the last component of each root, so those must be distinct.
    fn root_names(&self) -> Result<Vec<String>> {
        let mut names: Vec<String> = Vec::new();
        for root in &self.watch_roots {
            let abs = std::path::absolute(root)?;
            let name = abs
                .components()
                .rev()
                .find_map(|c| match c {
                    Component::Normal(n) => Some(n),
                    _ => None,
                })
                .and_then(|n| n.to_str())
                .ok_or_else(|| Error::invalid(format!("watch root {} has no usable name", root.display())))?
                .to_owned();
            if names.contains(&name) {
                return Err(Error::invalid(format!("two watch roots are both named {name:?}")));
            }
            names.push(name);
        }
        Ok(names)
    }
}

pub type ContentHash = [u8; 32];

pub fn content_hash(bytes: &[u8]) -> ContentHash {
    Sha256::digest(bytes).into()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BackupManifest {
    /// Key is `<root name>/<relative path>` with `/` separators.
    pub entries: BTreeMap<String, ContentHash>,
    pub last_backup_date: Option<NaiveDate>,
}

impl BackupManifest {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(d) = self.last_backup_date {
            let _ = writeln!(out, "last_backup={}", d.format("%Y-%m-%d"));
        }
        for (path, hash) in &self.entries {
            let _ = writeln!(out, "{}\t{}", hex::encode(hash), path);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |n: usize, why: &str| Error::corrupt("backup manifest", format!("line {}: {why}", n + 1));
        let mut m = Self::default();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            if let Some(date) = line.strip_prefix("last_backup=") {
                let d = NaiveDate::parse_from_str(date, "%Y-%m-%d").map_err(|_| bad(n, "bad date"))?;
                m.last_backup_date = Some(d);
                continue;
            }
            let (h, path) = line.split_once('\t').ok_or_else(|| bad(n, "missing tab"))?;
            let mut hash = [0u8; 32];
            hex::decode_to_slice(h, &mut hash).map_err(|_| bad(n, "bad hash"))?;
            m.entries.insert(path.to_owned(), hash);
        }
        Ok(m)
    }

    /// A missing manifest means no backup ever ran.
    pub fn load(path: &Path) -> Result<Self> {
        match crate::disk::read_optional(path)? {
            Some(bytes) => {
                let text = String::from_utf8(bytes).map_err(|_| Error::corrupt("backup manifest", "not UTF-8"))?;
                Self::parse(&text)
            }
            None => Ok(Self::default()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        write_replace(path, self.to_text().as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackupSet {
    /// `<vault_root>/YYYY-MM-DD`. Only created when something was copied.
    pub dir: PathBuf,
    /// (source path, destination path relative to `dir`)
    pub copied: Vec<(PathBuf, PathBuf)>,
}

pub fn backup_due(config: &BackupConfig, manifest: &BackupManifest, today: NaiveDate) -> bool {
    config.weekdays.contains(&today.weekday()) && manifest.last_backup_date != Some(today)
}

pub fn date_dir_name(date: NaiveDate) -> String {
    date.format("%Y-%m-%d").to_string()
}

struct Found {
    key: String,
    source: PathBuf,
    rel: PathBuf,
    hash: ContentHash,
    bytes: Vec<u8>,
}

/// Copies every new or changed file and returns the updated manifest.
/// Any I/O failure aborts; the caller must then keep the old manifest.
pub fn run_backup(
    config: &BackupConfig,
    manifest: &BackupManifest,
    today: NaiveDate,
) -> Result<(BackupSet, BackupManifest)> {
    let names = config.root_names()?;
    let vault_abs = std::path::absolute(&config.vault_root)?;
    let mut entries = BTreeMap::new();
    let mut changed = Vec::new();

    for (root, name) in config.watch_roots.iter().zip(&names) {
        let walker = WalkDir::new(root)
            .follow_links(false)
            .sort_by_file_name()
            .into_iter()
            .filter_entry(|e| std::path::absolute(e.path()).map_or(true, |p| p != vault_abs));
        for entry in walker {
            let entry = entry.map_err(|e| Error::Io(e.into()))?;
            if !entry.file_type().is_file() || is_transient(entry.path()) {
                continue;
            }
            let rel_in_root = entry.path().strip_prefix(root).expect("walkdir yields paths under root");
            let key = manifest_key(name, rel_in_root)?;
            let bytes = fs::read(entry.path())?;
            let hash = content_hash(&bytes);
            entries.insert(key.clone(), hash);
            if manifest.entries.get(&key) != Some(&hash) {
                changed.push(Found {
                    rel: Path::new(name).join(rel_in_root),
                    source: entry.into_path(),
                    key,
                    hash,
                    bytes,
                });
            }
        }
    }

    let dir = config.vault_root.join(date_dir_name(today));
    let mut copied = Vec::with_capacity(changed.len());
    for f in changed {
        let dest = dir.join(&f.rel);
        fs::create_dir_all(dest.parent().expect("dest has a parent"))?;
        write_replace(&dest, &f.bytes)?;
        log::debug!("backed up {} ({})", f.key, hex::encode(&f.hash[..4]));
        copied.push((f.source, f.rel));
    }

    let next = BackupManifest {
        entries,
        last_backup_date: Some(today),
    };
    Ok((BackupSet { dir, copied }, next))
}

/// Runs a backup if one is due, persisting the manifest only on success.
pub fn backup_if_due(config: &BackupConfig, today: NaiveDate) -> Result<Option<BackupSet>> {
    let path = config.manifest_path();
    let manifest = BackupManifest::load(&path)?;
    if !backup_due(config, &manifest, today) {
        return Ok(None);
    }
    let (set, next) = run_backup(config, &manifest, today)?;
    next.save(&path)?;
    Ok(Some(set))
}

/// Undo work files under the watched roots. Their documents may be in an
/// editing session, so a caller takes their locks before backing up.
pub fn journals_under_roots(config: &BackupConfig) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for root in &config.watch_roots {
        for entry in WalkDir::new(root).follow_links(false).sort_by_file_name() {
            let entry = entry.map_err(|e| Error::Io(e.into()))?;
            if entry.file_type().is_file() && entry.file_name().to_string_lossy().ends_with(".journal") {
                out.push(entry.into_path());
            }
        }
    }
    Ok(out)
}

/// Session lock files come and go with every run and are not user data.
fn is_transient(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "lock")
}

fn manifest_key(root_name: &str, rel: &Path) -> Result<String> {
    let mut key = root_name.to_owned();
    for c in rel.components() {
        let Component::Normal(part) = c else {
            return Err(Error::invalid(format!("unexpected path component in {}", rel.display())));
        };
        let part = part
            .to_str()
            .filter(|s| !s.contains(['\t', '\n', '\r']))
            .ok_or_else(|| Error::invalid(format!("file name {:?} cannot be recorded in the manifest", part)))?;
        key.push('/');
        key.push_str(part);
    }
    Ok(key)
}

fn write_replace(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
