//! Canonical verb/object label strings.

use alloc::string::String;
use core::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("label is empty after normalization")]
pub struct EmptyLabel;

/// A normalized label: lowercase, `_` mapped to space, whitespace runs
/// collapsed to one space, trimmed, never empty.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EntityLabel(String);

impl EntityLabel {
    pub fn new(raw: &str) -> Result<Self, EmptyLabel> {
        normalize_label(raw)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

pub fn normalize_label(raw: &str) -> Result<EntityLabel, EmptyLabel> {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for ch in raw.chars() {
        let ch = if ch == '_' { ' ' } else { ch };
        if ch.is_whitespace() {
            pending_space = !out.is_empty();
            continue;
        }
        if pending_space {
            out.push(' ');
            pending_space = false;
        }
        out.extend(ch.to_lowercase());
    }
    if out.is_empty() {
        Err(EmptyLabel)
    } else {
        Ok(EntityLabel(out))
    }
}

impl TryFrom<String> for EntityLabel {
    type Error = EmptyLabel;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        normalize_label(&s)
    }
}

impl From<EntityLabel> for String {
    fn from(l: EntityLabel) -> Self {
        l.0
    }
}

impl fmt::Display for EntityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}
