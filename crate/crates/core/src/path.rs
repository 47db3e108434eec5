//! Workspace path and storage key rules.

use alloc::string::String;
use alloc::vec::Vec;

/// Lexically normalizes a slash-separated path: duplicate separators, `.`
/// segments and trailing slashes are dropped and `..` pops the previous
/// segment (never above the root). Absolute inputs stay absolute.
pub fn normalize_path(path: &str) -> String {
    let absolute = path.starts_with('/');
    let mut segments: Vec<&str> = Vec::new();
    for seg in path.split('/') {
        match seg {
            "" | "." => {}
            ".." => {
                if segments.pop().is_none() && !absolute {
                    segments.push("..");
                }
            }
            s => segments.push(s),
        }
    }
    let mut out = String::with_capacity(path.len());
    if absolute {
        out.push('/');
    }
    for (i, seg) in segments.iter().enumerate() {
        if i > 0 {
            out.push('/');
        }
        out.push_str(seg);
    }
    out
}

/// A path is normalized when normalizing it is a no-op.
pub fn is_normalized(path: &str) -> bool {
    normalize_path(path) == path
}

pub fn is_absolute(path: &str) -> bool {
    path.starts_with('/')
}

/// True when `path` equals `base` or lies beneath it. Both must be normalized.
pub fn is_within(path: &str, base: &str) -> bool {
    if base == "/" {
        return path.starts_with('/');
    }
    match path.strip_prefix(base) {
        Some("") => true,
        Some(rest) => rest.starts_with('/'),
        None => false,
    }
}

pub const MAX_KEY_LEN: usize = 1024;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum KeyError {
    #[error("key is empty")]
    Empty,
    #[error("key exceeds {MAX_KEY_LEN} bytes")]
    TooLong,
    #[error("key has an empty segment")]
    EmptySegment,
    #[error("key has a '.' or '..' segment")]
    DotSegment,
    #[error("key contains a control character or backslash")]
    IllegalCharacter,
}

/// Checks the storage key rules. Keys are never rewritten: a key is either
/// accepted as-is or refused.
///
/// A valid key is non-empty, at most [`MAX_KEY_LEN`] bytes, contains no
/// control characters or backslashes, and splits on `/` into segments that are
/// all non-empty and none equal to `.` or `..`. This rules out leading,
/// trailing and doubled slashes.
pub fn validate_key(key: &str) -> Result<(), KeyError> {
    if key.is_empty() {
        return Err(KeyError::Empty);
    }
    if key.len() > MAX_KEY_LEN {
        return Err(KeyError::TooLong);
    }
    if key.chars().any(|c| c.is_control() || c == '\\') {
        return Err(KeyError::IllegalCharacter);
    }
    for seg in key.split('/') {
        match seg {
            "" => return Err(KeyError::EmptySegment),
            "." | ".." => return Err(KeyError::DotSegment),
            _ => {}
        }
    }
    Ok(())
}
