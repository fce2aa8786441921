//! The two-turn agent output grammar.
//!
//! Both turns wrap their output as `<think>...</think><answer>...</answer>`.
//! The Turn-1 answer lists detections and tool picks:
//!
//! ```text
//! person, [0,0,50,100], bicycle, [30,40,90,100] ; image_crop, outpaint
//! ```
//!
//! The Turn-2 answer lists interaction records:
//!
//! ```text
//! 1: ride, bicycle, [0,0,50,100], [30,40,90,100], 2: hold, cup, [1,1,2,2], [3,3,4,4]
//! ```
//!
//! Whitespace around separators is insignificant and box coordinates accept
//! integers or decimals. Rendering uses the shortest round-trip float form.

mod envelope;
mod items;
mod turn1;
mod turn2;

use alloc::string::String;
use core::fmt;

use serde::{Deserialize, Serialize};

pub use envelope::{extract_answer, extract_envelope, Envelope};
pub use turn1::{parse_turn1, render_turn1, Detection, Turn1Decision};
pub use turn2::{parse_turn2, parse_turn2_salvage, render_turn2, Salvaged, Turn2Answer, Turn2Record};

/// Grammar version carried in trajectory files.
pub const GRAMMAR_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tag {
    Think,
    Answer,
}

impl Tag {
    pub(crate) fn open(self) -> &'static str {
        match self {
            Tag::Think => "<think>",
            Tag::Answer => "<answer>",
        }
    }

    pub(crate) fn close(self) -> &'static str {
        match self {
            Tag::Think => "</think>",
            Tag::Answer => "</answer>",
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tag::Think => "think",
            Tag::Answer => "answer",
        })
    }
}

/// Why a Turn-2 record failed to parse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecordFault {
    /// The record does not start with `idx:`.
    MissingIndex,
    /// The index is zero or does not fit in 32 bits.
    BadIndex,
    /// A record needs exactly four comma-separated fields.
    FieldCount(usize),
    BadLabel,
    BadBox,
}

impl fmt::Display for RecordFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordFault::MissingIndex => f.write_str("missing `idx:` prefix"),
            RecordFault::BadIndex => f.write_str("index must be a positive integer"),
            RecordFault::FieldCount(n) => write!(f, "expected 4 fields, found {n}"),
            RecordFault::BadLabel => f.write_str("invalid verb or object label"),
            RecordFault::BadBox => f.write_str("box is not 4 valid coordinates in brackets"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("missing <{0}> block")]
    MissingBlock(Tag),
    #[error("more than one <{0}> block")]
    DuplicateBlock(Tag),
    #[error("<{0}> block is not closed")]
    UnclosedBlock(Tag),
    #[error("<think> and <answer> blocks overlap")]
    NestedBlocks,
    #[error("text outside the <think>/<answer> blocks")]
    UnexpectedText,
    #[error("malformed box `{0}`")]
    MalformedBox(String),
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("label `{0}` has no following box")]
    DanglingLabel(String),
    #[error("box `{0}` has no preceding label")]
    MissingLabel(String),
    #[error("invalid label `{0}`")]
    InvalidLabel(String),
    #[error("more than one `;` separator")]
    MultipleSeparators,
    #[error("missing `;` separator between detections and tools")]
    MissingSeparator,
    #[error("record {ordinal} is malformed: {fault}")]
    MalformedRecord { ordinal: usize, fault: RecordFault },
    #[error("record index {0} appears more than once")]
    DuplicateIndex(u32),
    #[error("answer is empty")]
    EmptyAnswer,
}

/// The tool library.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    ImageCrop,
    Outpaint,
    ViewpointTransform,
    ActionDescription,
    #[serde(alias = "image_description")]
    SceneExplanation,
}

impl ToolKind {
    pub const ALL: [ToolKind; 5] = [
        ToolKind::ImageCrop,
        ToolKind::Outpaint,
        ToolKind::ViewpointTransform,
        ToolKind::ActionDescription,
        ToolKind::SceneExplanation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ToolKind::ImageCrop => "image_crop",
            ToolKind::Outpaint => "outpaint",
            ToolKind::ViewpointTransform => "viewpoint_transform",
            ToolKind::ActionDescription => "action_description",
            ToolKind::SceneExplanation => "scene_explanation",
        }
    }

    /// Case-insensitive; `image_description` is accepted for scene explanation.
    pub fn parse(name: &str) -> Result<Self, ProtocolError> {
        let trimmed = name.trim();
        let lowered = trimmed.to_ascii_lowercase();
        match lowered.as_str() {
            "image_crop" => Ok(ToolKind::ImageCrop),
            "outpaint" => Ok(ToolKind::Outpaint),
            "viewpoint_transform" => Ok(ToolKind::ViewpointTransform),
            "action_description" => Ok(ToolKind::ActionDescription),
            "scene_explanation" | "image_description" => Ok(ToolKind::SceneExplanation),
            _ => Err(ProtocolError::UnknownTool(String::from(trimmed))),
        }
    }

    /// Generative tools produce images that may not supply coordinates.
    pub fn is_generative(self) -> bool {
        matches!(self, ToolKind::Outpaint | ToolKind::ViewpointTransform)
    }
}

impl fmt::Display for ToolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// True iff both raw turns carry a valid envelope, the Turn-1 answer parses
/// and the Turn-2 answer parses (an empty Turn-2 answer counts as valid).
pub fn check_format(turn1_raw: &str, turn2_raw: &str) -> bool {
    let first = match extract_envelope(turn1_raw) {
        Ok(env) => env,
        Err(_) => return false,
    };
    let second = match extract_envelope(turn2_raw) {
        Ok(env) => env,
        Err(_) => return false,
    };
    if parse_turn1(&first.answer).is_err() {
        return false;
    }
    matches!(parse_turn2(&second.answer), Ok(_) | Err(ProtocolError::EmptyAnswer))
}
