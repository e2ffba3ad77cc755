//! Small shared helpers: seed derivation, canonical JSON lines, atomic writes.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Derive a child seed from a base seed and a context label.
///
/// Every seeded component derives its own stream under a distinct label, so
/// adding or removing one stage never shifts the random draws of another and
/// a single top-level seed still reproduces the whole pipeline.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("SHA-256 digest is 32 bytes"))
}

/// Serialize `value` as one canonical JSON line (sorted object keys, trailing
/// newline). Canonical form makes repeated saves byte-identical, so artifact
/// diffs stay meaningful.
pub(crate) fn canonical_json_line<T: Serialize>(value: &T) -> serde_json::Result<String> {
    // Round-tripping through `Value` sorts map keys: serde_json's default
    // object representation is ordered by key.
    let v = serde_json::to_value(value)?;
    let mut s = serde_json::to_string(&v)?;
    s.push('\n');
    Ok(s)
}

/// Serialize `value` as canonical pretty-printed JSON (sorted keys), for
/// single-object artifacts like reports and manifests.
pub(crate) fn canonical_json_pretty<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let v = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

/// Write `bytes` to `path` via a sibling temp file plus rename, so readers
/// never observe a partially written artifact.
pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = tmp_sibling(path);
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    drop(f);
    fs::rename(&tmp, path)
}

fn tmp_sibling(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}
