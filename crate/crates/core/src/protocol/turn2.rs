use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use super::items::{is_grammar_safe, parse_box, parse_label, split_index, split_items};
use super::{ProtocolError, RecordFault};
use crate::geometry::BBox;
use crate::label::EntityLabel;
use crate::triplet::HoiTriplet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn2Record {
    pub index: u32,
    pub verb: EntityLabel,
    pub object: EntityLabel,
    pub human_box: BBox,
    pub object_box: BBox,
}

impl Turn2Record {
    pub fn to_triplet(&self) -> HoiTriplet {
        HoiTriplet::new(self.verb.clone(), self.object.clone(), self.human_box, self.object_box)
    }
}

/// Interaction records emitted by the second turn, in textual order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Turn2Answer {
    records: Vec<Turn2Record>,
}

impl Turn2Answer {
    pub fn new(records: Vec<Turn2Record>) -> Result<Self, ProtocolError> {
        for (i, r) in records.iter().enumerate() {
            if r.index == 0 {
                return Err(ProtocolError::MalformedRecord {
                    ordinal: i + 1,
                    fault: RecordFault::BadIndex,
                });
            }
            if !is_grammar_safe(&r.verb) || !is_grammar_safe(&r.object) {
                return Err(ProtocolError::MalformedRecord {
                    ordinal: i + 1,
                    fault: RecordFault::BadLabel,
                });
            }
            if records[..i].iter().any(|p| p.index == r.index) {
                return Err(ProtocolError::DuplicateIndex(r.index));
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[Turn2Record] {
        &self.records
    }

    pub fn triplets(&self) -> Vec<HoiTriplet> {
        self.records.iter().map(Turn2Record::to_triplet).collect()
    }
}

/// Groups items into records, each starting at an `idx:` item. Items before
/// the first index form a group of their own.
fn group_records<'a>(items: &[&'a str]) -> Vec<Vec<&'a str>> {
    let mut groups: Vec<Vec<&str>> = Vec::new();
    for &item in items {
        if split_index(item).is_some() || groups.is_empty() {
            groups.push(Vec::new());
        }
        if let Some(g) = groups.last_mut() {
            g.push(item);
        }
    }
    groups
}

fn parse_record(fields: &[&str]) -> Result<Turn2Record, RecordFault> {
    let (digits, verb_raw) = split_index(fields[0]).ok_or(RecordFault::MissingIndex)?;
    if fields.len() != 4 {
        return Err(RecordFault::FieldCount(fields.len()));
    }
    let index: u32 = digits.parse().map_err(|_| RecordFault::BadIndex)?;
    if index == 0 {
        return Err(RecordFault::BadIndex);
    }
    let verb = parse_label(verb_raw).ok_or(RecordFault::BadLabel)?;
    let object = parse_label(fields[1]).ok_or(RecordFault::BadLabel)?;
    let human_box = parse_box(fields[2]).ok_or(RecordFault::BadBox)?;
    let object_box = parse_box(fields[3]).ok_or(RecordFault::BadBox)?;
    Ok(Turn2Record {
        index,
        verb,
        object,
        human_box,
        object_box,
    })
}

/// Strict parse: every record must be well formed. Blank input is
/// [`ProtocolError::EmptyAnswer`], a distinct "no interactions" signal.
pub fn parse_turn2(answer: &str) -> Result<Turn2Answer, ProtocolError> {
    let items = split_items(answer);
    if items.is_empty() {
        return Err(ProtocolError::EmptyAnswer);
    }
    let mut records = Vec::new();
    for (i, group) in group_records(&items).iter().enumerate() {
        let record = parse_record(group).map_err(|fault| ProtocolError::MalformedRecord {
            ordinal: i + 1,
            fault,
        })?;
        if records.iter().any(|r: &Turn2Record| r.index == record.index) {
            return Err(ProtocolError::DuplicateIndex(record.index));
        }
        records.push(record);
    }
    Ok(Turn2Answer { records })
}

/// Result of a best-effort parse.
#[derive(Debug, Clone, PartialEq)]
pub struct Salvaged {
    pub answer: Turn2Answer,
    /// Errors for every record that was skipped.
    pub skipped: Vec<ProtocolError>,
}

/// Best-effort parse: keeps every well-formed record, skips malformed ones
/// and later duplicates of an index.
pub fn parse_turn2_salvage(answer: &str) -> Salvaged {
    let items = split_items(answer);
    let mut records: Vec<Turn2Record> = Vec::new();
    let mut skipped = Vec::new();
    for (i, group) in group_records(&items).iter().enumerate() {
        match parse_record(group) {
            Ok(r) if records.iter().any(|p| p.index == r.index) => {
                skipped.push(ProtocolError::DuplicateIndex(r.index));
            }
            Ok(r) => records.push(r),
            Err(fault) => skipped.push(ProtocolError::MalformedRecord { ordinal: i + 1, fault }),
        }
    }
    Salvaged {
        answer: Turn2Answer { records },
        skipped,
    }
}

pub fn render_turn2(answer: &Turn2Answer) -> String {
    let mut out = String::new();
    for (i, r) in answer.records.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(
            out,
            "{}: {}, {}, {}, {}",
            r.index, r.verb, r.object, r.human_box, r.object_box
        );
    }
    out
}
