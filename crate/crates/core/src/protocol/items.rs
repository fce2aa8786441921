//! Shared lexical pieces of the answer grammar.

use alloc::vec::Vec;

use crate::geometry::BBox;
use crate::label::{normalize_label, EntityLabel};

/// Splits on commas outside square brackets. Items are trimmed. An empty
/// input yields no items; a trailing comma yields a trailing empty item.
pub(crate) fn split_items(text: &str) -> Vec<&str> {
    if text.trim().is_empty() {
        return Vec::new();
    }
    let mut items = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    for (i, ch) in text.char_indices() {
        match ch {
            '[' => depth += 1,
            ']' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                items.push(text[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    items.push(text[start..].trim());
    items
}

pub(crate) fn looks_like_box(item: &str) -> bool {
    item.starts_with('[')
}

/// `[a, b, c, d]` with four finite numbers forming a valid box.
pub(crate) fn parse_box(item: &str) -> Option<BBox> {
    let inner = item.strip_prefix('[')?.strip_suffix(']')?;
    let mut coords = [0.0f64; 4];
    let mut n = 0usize;
    for part in inner.split(',') {
        if n == 4 {
            return None;
        }
        let part = part.trim();
        // Reject spellings such as `inf` or `nan` that f64 parsing accepts.
        if !part.bytes().all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'e' | b'E' | b'+' | b'-')) {
            return None;
        }
        let v: f64 = part.parse().ok()?;
        coords[n] = v;
        n += 1;
    }
    if n != 4 {
        return None;
    }
    BBox::new(coords[0], coords[1], coords[2], coords[3]).ok()
}

/// Characters a label may not contain without breaking the grammar.
const RESERVED: &[char] = &['[', ']', ',', ':', ';', '<', '>'];

pub(crate) fn is_grammar_safe(label: &EntityLabel) -> bool {
    !label.as_str().contains(RESERVED)
}

pub(crate) fn parse_label(item: &str) -> Option<EntityLabel> {
    let l = normalize_label(item).ok()?;
    is_grammar_safe(&l).then_some(l)
}

/// Splits a leading `idx:` off a record item. Returns the raw index digits
/// and the remainder.
pub(crate) fn split_index(item: &str) -> Option<(&str, &str)> {
    let s = item.trim_start();
    let digits_end = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    if digits_end == 0 {
        return None;
    }
    let rest = s[digits_end..].trim_start().strip_prefix(':')?;
    Some((&s[..digits_end], rest))
}
