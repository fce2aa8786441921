use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use super::{ProtocolError, Tag};

/// Inner text of the single think and answer blocks, verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub think: String,
    pub answer: String,
}

fn positions(raw: &str, needle: &str) -> Vec<usize> {
    raw.match_indices(needle).map(|(i, _)| i).collect()
}

/// Locates one block. `outer` spans the tags, `inner` the content.
struct Block {
    outer: Range<usize>,
    inner: Range<usize>,
}

fn locate(raw: &str, tag: Tag) -> Result<Block, ProtocolError> {
    let opens = positions(raw, tag.open());
    let closes = positions(raw, tag.close());
    if opens.len() > 1 || closes.len() > 1 {
        return Err(ProtocolError::DuplicateBlock(tag));
    }
    match (opens.first(), closes.first()) {
        (None, _) => Err(ProtocolError::MissingBlock(tag)),
        (Some(_), None) => Err(ProtocolError::UnclosedBlock(tag)),
        (Some(&o), Some(&c)) if c < o => Err(ProtocolError::UnclosedBlock(tag)),
        (Some(&o), Some(&c)) => Ok(Block {
            outer: o..c + tag.close().len(),
            inner: o + tag.open().len()..c,
        }),
    }
}

/// Extracts the think and answer blocks. Exactly one of each is required,
/// they may not overlap, and nothing but whitespace may appear outside them.
pub fn extract_envelope(raw: &str) -> Result<Envelope, ProtocolError> {
    // Duplicates are reported before absence so that a doubled answer is not
    // masked by a missing think.
    for tag in [Tag::Think, Tag::Answer] {
        if raw.matches(tag.open()).count() > 1 || raw.matches(tag.close()).count() > 1 {
            return Err(ProtocolError::DuplicateBlock(tag));
        }
    }
    let think = locate(raw, Tag::Think)?;
    let answer = locate(raw, Tag::Answer)?;

    let (first, second) = if think.outer.start < answer.outer.start {
        (&think.outer, &answer.outer)
    } else {
        (&answer.outer, &think.outer)
    };
    if second.start < first.end {
        return Err(ProtocolError::NestedBlocks);
    }
    let outside = [&raw[..first.start], &raw[first.end..second.start], &raw[second.end..]];
    if outside.iter().any(|s| !s.trim().is_empty()) {
        return Err(ProtocolError::UnexpectedText);
    }

    Ok(Envelope {
        think: String::from(&raw[think.inner]),
        answer: String::from(&raw[answer.inner]),
    })
}

/// Inner text of the answer block alone, ignoring the think block and any
/// surrounding text. Used where predictions are scored independently of
/// format compliance.
pub fn extract_answer(raw: &str) -> Result<String, ProtocolError> {
    let block = locate(raw, Tag::Answer)?;
    Ok(String::from(&raw[block.inner]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal() {
        let env = extract_envelope("<think>x</think><answer>y</answer>").unwrap();
        assert_eq!(env.think, "x");
        assert_eq!(env.answer, "y");
    }

    #[test]
    fn answer_first_and_whitespace_allowed() {
        let env = extract_envelope("\n <answer> a </answer>\n<think>t</think>\n").unwrap();
        assert_eq!(env.answer, " a ");
    }

    #[test]
    fn missing_answer() {
        assert_eq!(
            extract_envelope("<think>x</think>"),
            Err(ProtocolError::MissingBlock(Tag::Answer))
        );
    }

    #[test]
    fn duplicate_answer() {
        assert_eq!(
            extract_envelope("<answer>a</answer><answer>b</answer><think>t</think>"),
            Err(ProtocolError::DuplicateBlock(Tag::Answer))
        );
    }

    #[test]
    fn unclosed() {
        assert_eq!(
            extract_envelope("<think>x</think><answer>y"),
            Err(ProtocolError::UnclosedBlock(Tag::Answer))
        );
        assert_eq!(
            extract_envelope("</think>x<think><answer>y</answer>"),
            Err(ProtocolError::UnclosedBlock(Tag::Think))
        );
    }

    #[test]
    fn nested_and_stray_text() {
        assert_eq!(
            extract_envelope("<think>x<answer>y</answer></think>"),
            Err(ProtocolError::NestedBlocks)
        );
        assert_eq!(
            extract_envelope("hi<think>x</think><answer>y</answer>"),
            Err(ProtocolError::UnexpectedText)
        );
    }

    #[test]
    fn extract_answer_ignores_think() {
        assert_eq!(extract_answer("<think>unclosed <answer>a</answer>").unwrap(), "a");
        assert_eq!(extract_answer("nothing"), Err(ProtocolError::MissingBlock(Tag::Answer)));
    }
}
