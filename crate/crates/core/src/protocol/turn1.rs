use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use super::items::{is_grammar_safe, looks_like_box, parse_box, parse_label, split_items};
use super::{ProtocolError, ToolKind};
use crate::geometry::BBox;
use crate::label::EntityLabel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: EntityLabel,
    pub bbox: BBox,
}

/// Perception and tool selection emitted by the first turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn1Decision {
    detections: Vec<Detection>,
    tools: Vec<ToolKind>,
}

impl Turn1Decision {
    /// Duplicate tools are dropped, keeping first occurrence order.
    pub fn new(detections: Vec<Detection>, tools: Vec<ToolKind>) -> Result<Self, ProtocolError> {
        if let Some(d) = detections.iter().find(|d| !is_grammar_safe(&d.label)) {
            return Err(ProtocolError::InvalidLabel(String::from(d.label.as_str())));
        }
        let mut unique = Vec::with_capacity(tools.len());
        for t in tools {
            if !unique.contains(&t) {
                unique.push(t);
            }
        }
        Ok(Self {
            detections,
            tools: unique,
        })
    }

    pub fn empty() -> Self {
        Self {
            detections: Vec::new(),
            tools: Vec::new(),
        }
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn tools(&self) -> &[ToolKind] {
        &self.tools
    }
}

/// Parses `label, [box], label, [box], ... ; tool, tool, ...`.
pub fn parse_turn1(answer: &str) -> Result<Turn1Decision, ProtocolError> {
    let mut segments = answer.split(';');
    let detection_part = segments.next().unwrap_or_default();
    let tool_part = segments.next().ok_or(ProtocolError::MissingSeparator)?;
    if segments.next().is_some() {
        return Err(ProtocolError::MultipleSeparators);
    }

    let mut detections = Vec::new();
    let mut items = split_items(detection_part).into_iter();
    while let Some(item) = items.next() {
        if looks_like_box(item) {
            return Err(ProtocolError::MissingLabel(String::from(item)));
        }
        let label = parse_label(item).ok_or_else(|| ProtocolError::InvalidLabel(String::from(item)))?;
        let bbox_item = match items.next() {
            Some(b) if looks_like_box(b) => b,
            _ => return Err(ProtocolError::DanglingLabel(String::from(label.as_str()))),
        };
        let bbox = parse_box(bbox_item).ok_or_else(|| ProtocolError::MalformedBox(String::from(bbox_item)))?;
        detections.push(Detection { label, bbox });
    }

    let mut tools = Vec::new();
    for name in tool_part.split(',') {
        if name.trim().is_empty() {
            continue;
        }
        tools.push(ToolKind::parse(name)?);
    }

    Turn1Decision::new(detections, tools)
}

/// Inverse of [`parse_turn1`]. An empty tool list renders as a trailing `; `.
pub fn render_turn1(decision: &Turn1Decision) -> String {
    let mut out = String::new();
    for (i, d) in decision.detections.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "{}, {}", d.label, d.bbox);
    }
    out.push_str(" ; ");
    for (i, t) in decision.tools.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(t.as_str());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn appendix_example() {
        let d = parse_turn1("person, [0,0,50,100], bicycle, [30,40,90,100] ; image_crop, outpaint").unwrap();
        assert_eq!(d.detections().len(), 2);
        assert_eq!(d.detections()[1].label.as_str(), "bicycle");
        assert_eq!(d.tools(), [ToolKind::ImageCrop, ToolKind::Outpaint]);
    }

    #[test]
    fn empty_tool_segment() {
        let d = parse_turn1("person, [0,0,50,100] ; ").unwrap();
        assert_eq!(d.detections().len(), 1);
        assert!(d.tools().is_empty());
    }

    #[test]
    fn duplicate_tools_collapse() {
        let d = parse_turn1(" ; outpaint, image_crop, outpaint, image_description").unwrap();
        assert_eq!(
            d.tools(),
            [ToolKind::Outpaint, ToolKind::ImageCrop, ToolKind::SceneExplanation]
        );
    }

    #[test]
    fn errors() {
        assert!(matches!(
            parse_turn1("person, [0,0,50] ; image_crop"),
            Err(ProtocolError::MalformedBox(_))
        ));
        assert_eq!(
            parse_turn1("person, [0,0,5,5] ; zoom"),
            Err(ProtocolError::UnknownTool("zoom".into()))
        );
        assert_eq!(
            parse_turn1("person ; image_crop"),
            Err(ProtocolError::DanglingLabel("person".into()))
        );
        assert_eq!(
            parse_turn1("person, bicycle, [0,0,5,5] ; "),
            Err(ProtocolError::DanglingLabel("person".into()))
        );
        assert_eq!(parse_turn1("a, [0,0,1,1] ; x ; y"), Err(ProtocolError::MultipleSeparators));
        assert_eq!(parse_turn1("a, [0,0,1,1]"), Err(ProtocolError::MissingSeparator));
        assert!(matches!(parse_turn1("[0,0,1,1] ; "), Err(ProtocolError::MissingLabel(_))));
    }

    #[test]
    fn render_without_tools_reparses() {
        let d = Turn1Decision::new(
            vec![Detection {
                label: EntityLabel::new("person").unwrap(),
                bbox: BBox::new(0.0, 0.0, 50.0, 100.0).unwrap(),
            }],
            vec![],
        )
        .unwrap();
        let s = render_turn1(&d);
        assert_eq!(s, "person, [0.0,0.0,50.0,100.0] ; ");
        assert_eq!(parse_turn1(&s).unwrap(), d);
        assert_eq!(parse_turn1(&render_turn1(&Turn1Decision::empty())).unwrap(), Turn1Decision::empty());
    }
}
