//! Turn-1 and Turn-2 request construction.

use hoi_core::protocol::{Detection, ToolKind};
use hoi_core::{BBox, Vocabulary};

use crate::backend::{Message, Part, PartKind};

const TURN1_TEMPLATE: &str = include_str!("../assets/turn1_prompt.txt");
const TURN2_TEMPLATE: &str = include_str!("../assets/turn2_prompt.txt");
const TURN2_INSTRUCTIONS: &str = include_str!("../assets/turn2_instructions.txt");
const GENERATED_IMAGE_NOTICE: &str = include_str!("../assets/generated_image_notice.txt");

pub const DEFAULT_QUERY: &str = "Identify all human-object interactions in this image.";

fn tool_blurb(tool: ToolKind) -> &'static str {
    match tool {
        ToolKind::ImageCrop => "zoom into the region around a person and an object",
        ToolKind::Outpaint => "extend the scene past the image borders",
        ToolKind::ViewpointTransform => "render the scene from a different viewpoint",
        ToolKind::ActionDescription => "retrieve text describing the candidate actions",
        ToolKind::SceneExplanation => "retrieve a text explanation of the scene",
    }
}

fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut s = template.trim_end().to_owned();
    for (key, value) in vars {
        s = s.replace(&format!("{{{key}}}"), value);
    }
    s
}

fn dims(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as u64)
    } else {
        v.to_string()
    }
}

pub fn turn1_message(vocab: &Vocabulary, image: &str, width: f64, height: f64) -> Message {
    let objects: Vec<&str> = vocab.objects().iter().map(|o| o.as_str()).collect();
    let tools: Vec<String> = ToolKind::ALL
        .iter()
        .map(|t| format!("- {}: {}", t.as_str(), tool_blurb(*t)))
        .collect();
    let text = fill(
        TURN1_TEMPLATE,
        &[
            ("width", &dims(width)),
            ("height", &dims(height)),
            ("objects", &objects.join(", ")),
            ("tools", &tools.join("\n")),
        ],
    );
    Message::new("user", vec![Part::image(image), Part::text(text)])
}

/// Tool output gathered between the turns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evidence {
    pub crops: Vec<(BBox, String)>,
    pub generated: Vec<(ToolKind, String)>,
    pub notes: Vec<(ToolKind, String)>,
}

fn detected_block(detections: &[Detection]) -> String {
    if detections.is_empty() {
        return String::from("(none)");
    }
    detections
        .iter()
        .enumerate()
        .map(|(i, d)| format!("{}. {} {}", i + 1, d.label, d.bbox))
        .collect::<Vec<_>>()
        .join("\n")
}

fn actions_block(vocab: &Vocabulary, detections: &[Detection]) -> String {
    let mut seen = Vec::new();
    for d in detections {
        if !seen.contains(&&d.label) {
            seen.push(&d.label);
        }
    }
    if seen.is_empty() {
        return String::from("(none)");
    }
    seen.iter()
        .map(|label| {
            let verbs: Vec<&str> = vocab.valid_verbs(label).map(|v| v.as_str()).collect();
            if verbs.is_empty() {
                format!("{label}: (none)")
            } else {
                format!("{label}: {}", verbs.join(", "))
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Original image, crops, generated views (each behind the notice), notes,
/// then the answer instructions.
pub fn turn2_message(
    vocab: &Vocabulary,
    image: &str,
    query: &str,
    detections: &[Detection],
    evidence: &Evidence,
) -> Message {
    let header = fill(
        TURN2_TEMPLATE,
        &[
            ("query", query),
            ("detected_objects", &detected_block(detections)),
            ("valid_actions", &actions_block(vocab, detections)),
        ],
    );
    let mut parts = vec![Part::text(header), Part::image(image)];
    for (region, crop) in &evidence.crops {
        parts.push(Part::text(format!("Crop of region {region}:")));
        parts.push(Part::image(crop.clone()));
    }
    for (tool, generated) in &evidence.generated {
        parts.push(Part::text(format!(
            "[{}] {}",
            tool.as_str(),
            GENERATED_IMAGE_NOTICE.trim_end()
        )));
        parts.push(Part::image(generated.clone()));
    }
    for (tool, note) in &evidence.notes {
        parts.push(Part::text(format!("[{}] {note}", tool.as_str())));
    }
    parts.push(Part::text(TURN2_INSTRUCTIONS.trim_end()));
    Message::new("user", parts)
}

/// Flattens a message to the stored prompt string; images become `<image>`.
pub fn render_prompt(message: &Message) -> String {
    message
        .parts
        .iter()
        .map(|p| match p.kind {
            PartKind::Text => p.value.as_str(),
            PartKind::Image => "<image>",
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use hoi_core::{load_vocabulary, EntityLabel, VocabularyDocument};

    fn vocab() -> Vocabulary {
        let doc: VocabularyDocument = serde_json::from_str(
            r#"{"objects":["person","bicycle"],"verbs":["ride","hold"],
                "object_to_verbs":{"bicycle":["ride","hold"]}}"#,
        )
        .unwrap();
        load_vocabulary(&doc).unwrap()
    }

    fn det(label: &str, b: [f64; 4]) -> Detection {
        Detection {
            label: EntityLabel::new(label).unwrap(),
            bbox: BBox::new(b[0], b[1], b[2], b[3]).unwrap(),
        }
    }

    #[test]
    fn turn2_sections_and_order() {
        let dets = [det("person", [0.0, 0.0, 5.0, 5.0]), det("bicycle", [1.0, 1.0, 9.0, 9.0])];
        let ev = Evidence {
            crops: vec![(BBox::new(0.0, 0.0, 9.0, 9.0).unwrap(), "artifact:c.png".into())],
            generated: vec![(ToolKind::Outpaint, "artifact:g.png".into())],
            notes: vec![(ToolKind::SceneExplanation, "a street".into())],
        };
        let m = turn2_message(&vocab(), "img.png", DEFAULT_QUERY, &dets, &ev);
        let text = render_prompt(&m);
        assert!(text.contains("DETECTED OBJECTS:\n1. person [0.0,0.0,5.0,5.0]"));
        assert!(text.contains("VALID ACTIONS:\nperson: (none)\nbicycle: hold, ride"));
        assert!(text.contains("coordinates must be taken from the original image"));
        let images: Vec<&str> = m
            .parts
            .iter()
            .filter(|p| p.kind == PartKind::Image)
            .map(|p| p.value.as_str())
            .collect();
        assert_eq!(images, ["img.png", "artifact:c.png", "artifact:g.png"]);
        let notice = m.parts.iter().position(|p| p.value.contains("synthesized")).unwrap();
        assert_eq!(m.parts[notice + 1].value, "artifact:g.png");
        assert!(text.find("a street").unwrap() > text.find("synthesized").unwrap());
    }

    #[test]
    fn turn1_lists_vocabulary_and_tools() {
        let text = render_prompt(&turn1_message(&vocab(), "img.png", 640.0, 480.0));
        assert!(text.starts_with("<image>\n"));
        assert!(text.contains("640x480"));
        assert!(text.contains("bicycle, person"));
        for t in ToolKind::ALL {
            assert!(text.contains(t.as_str()));
        }
    }
}
