//! Text canonicalization and content-derived identifiers.
//!
//! Every text entering the pipeline is reduced to one canonical form before
//! hashing or matching: Unicode NFC, leading/trailing whitespace trimmed,
//! internal whitespace runs collapsed to single spaces. Case is preserved
//! here — operations that need case-insensitive matching (dedup keys, answer
//! containment) apply [`casefold`] themselves, so that case-distinct but
//! semantically distinct pairs are never merged by accident.

use icu_normalizer::ComposingNormalizerBorrowed;
use sha2::{Digest, Sha256};

/// Canonicalize raw text: Unicode NFC, trim, collapse internal whitespace.
///
/// Idempotent: `normalize_text(normalize_text(x)) == normalize_text(x)`.
pub fn normalize_text(raw: &str) -> String {
    let nfc = ComposingNormalizerBorrowed::new_nfc().normalize(raw);
    let mut out = String::with_capacity(nfc.len());
    let mut pending_space = false;
    for ch in nfc.chars() {
        if ch.is_whitespace() {
            // Defer the separator until the next non-whitespace character so
            // leading and trailing runs vanish entirely.
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(ch);
        }
    }
    out
}

/// Lowercase for matching operations (dedup keys, answer containment).
pub fn casefold(text: &str) -> String {
    text.to_lowercase()
}

/// Stable 128-bit content identifier: the first 16 bytes of SHA-256 over the
/// UTF-8 text, rendered as lowercase hex. Equal texts always produce equal
/// ids; callers are expected to pass already-normalized text.
pub fn content_id(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    hex::encode(&digest[..16])
}
