//! Closed object/verb vocabularies, valid-verb constraints and split tags.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::label::{normalize_label, EntityLabel};
use crate::triplet::Category;

/// Evaluation split a category belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Seen,
    Unseen,
    Rare,
    NonRare,
}

impl SplitTag {
    pub const ALL: [SplitTag; 4] = [SplitTag::Seen, SplitTag::Unseen, SplitTag::Rare, SplitTag::NonRare];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Seen => "seen",
            SplitTag::Unseen => "unseen",
            SplitTag::Rare => "rare",
            SplitTag::NonRare => "non_rare",
        }
    }
}

/// On-disk form. Key names are part of the file contract.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VocabularyDocument {
    pub objects: Vec<String>,
    pub verbs: Vec<String>,
    pub object_to_verbs: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub category_split: BTreeMap<String, SplitTag>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VocabError {
    #[error("vocabulary has no objects")]
    NoObjects,
    #[error("vocabulary has no verbs")]
    NoVerbs,
    #[error("empty label in {0}")]
    EmptyLabel(&'static str),
    #[error("duplicate {kind} entry `{label}`")]
    Duplicate { kind: &'static str, label: String },
    #[error("object_to_verbs key `{0}` is not a listed object")]
    UnknownObject(String),
    #[error("object_to_verbs[`{object}`] lists `{verb}`, which is not a listed verb")]
    UnknownVerb { object: String, verb: String },
    #[error("category_split key `{0}` is not of the form verb|object")]
    MalformedCategoryKey(String),
    #[error("category `{0}` references an absent object")]
    CategoryUnknownObject(String),
    #[error("category `{0}` pairs a verb the object does not allow")]
    CategoryInvalidVerb(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    objects: BTreeSet<EntityLabel>,
    verbs: BTreeSet<EntityLabel>,
    object_to_verbs: BTreeMap<EntityLabel, BTreeSet<EntityLabel>>,
    category_split: BTreeMap<Category, SplitTag>,
}

fn label(raw: &str, ctx: &'static str) -> Result<EntityLabel, VocabError> {
    normalize_label(raw).map_err(|_| VocabError::EmptyLabel(ctx))
}

fn unique_set(items: &[String], kind: &'static str) -> Result<BTreeSet<EntityLabel>, VocabError> {
    let mut set = BTreeSet::new();
    for raw in items {
        let l = label(raw, kind)?;
        if !set.insert(l.clone()) {
            return Err(VocabError::Duplicate {
                kind,
                label: l.to_string(),
            });
        }
    }
    Ok(set)
}

/// Validates a document into a [`Vocabulary`], reporting the first offending entry.
pub fn load_vocabulary(doc: &VocabularyDocument) -> Result<Vocabulary, VocabError> {
    let objects = unique_set(&doc.objects, "objects")?;
    if objects.is_empty() {
        return Err(VocabError::NoObjects);
    }
    let verbs = unique_set(&doc.verbs, "verbs")?;
    if verbs.is_empty() {
        return Err(VocabError::NoVerbs);
    }

    let mut object_to_verbs: BTreeMap<EntityLabel, BTreeSet<EntityLabel>> = BTreeMap::new();
    for (raw_object, raw_verbs) in &doc.object_to_verbs {
        let object = label(raw_object, "object_to_verbs")?;
        if !objects.contains(&object) {
            return Err(VocabError::UnknownObject(object.to_string()));
        }
        let allowed = object_to_verbs.entry(object.clone()).or_default();
        for raw_verb in raw_verbs {
            let verb = label(raw_verb, "object_to_verbs")?;
            if !verbs.contains(&verb) {
                return Err(VocabError::UnknownVerb {
                    object: object.to_string(),
                    verb: verb.to_string(),
                });
            }
            if !allowed.insert(verb.clone()) {
                return Err(VocabError::Duplicate {
                    kind: "object_to_verbs",
                    label: Category::new(verb, object.clone()).key(),
                });
            }
        }
    }

    let mut category_split = BTreeMap::new();
    for (key, tag) in &doc.category_split {
        let (raw_verb, raw_object) = key
            .split_once('|')
            .ok_or_else(|| VocabError::MalformedCategoryKey(key.clone()))?;
        let verb = label(raw_verb, "category_split")?;
        let object = label(raw_object, "category_split")?;
        let category = Category::new(verb, object);
        if !objects.contains(&category.object) {
            return Err(VocabError::CategoryUnknownObject(category.key()));
        }
        let valid = object_to_verbs
            .get(&category.object)
            .is_some_and(|vs| vs.contains(&category.verb));
        if !valid {
            return Err(VocabError::CategoryInvalidVerb(category.key()));
        }
        if category_split.insert(category.clone(), *tag).is_some() {
            return Err(VocabError::Duplicate {
                kind: "category_split",
                label: category.key(),
            });
        }
    }

    Ok(Vocabulary {
        objects,
        verbs,
        object_to_verbs,
        category_split,
    })
}

impl Vocabulary {
    pub fn objects(&self) -> &BTreeSet<EntityLabel> {
        &self.objects
    }

    pub fn verbs(&self) -> &BTreeSet<EntityLabel> {
        &self.verbs
    }

    pub fn contains_object(&self, object: &EntityLabel) -> bool {
        self.objects.contains(object)
    }

    /// Verbs allowed for `object`; empty when the object has no entry.
    pub fn valid_verbs(&self, object: &EntityLabel) -> impl Iterator<Item = &EntityLabel> {
        self.object_to_verbs.get(object).into_iter().flatten()
    }

    pub fn is_valid_pair(&self, verb: &EntityLabel, object: &EntityLabel) -> bool {
        self.object_to_verbs
            .get(object)
            .is_some_and(|vs| vs.contains(verb))
    }

    /// Every `(verb, object)` pair permitted by `object_to_verbs`.
    pub fn categories(&self) -> impl Iterator<Item = Category> + '_ {
        self.object_to_verbs
            .iter()
            .flat_map(|(o, vs)| vs.iter().map(move |v| Category::new(v.clone(), o.clone())))
    }

    pub fn category_count(&self) -> usize {
        self.object_to_verbs.values().map(BTreeSet::len).sum()
    }

    pub fn split_of(&self, category: &Category) -> Option<SplitTag> {
        self.category_split.get(category).copied()
    }

    pub fn category_split(&self) -> &BTreeMap<Category, SplitTag> {
        &self.category_split
    }

    pub fn to_document(&self) -> VocabularyDocument {
        VocabularyDocument {
            objects: self.objects.iter().map(ToString::to_string).collect(),
            verbs: self.verbs.iter().map(ToString::to_string).collect(),
            object_to_verbs: self
                .object_to_verbs
                .iter()
                .map(|(o, vs)| (o.to_string(), vs.iter().map(ToString::to_string).collect()))
                .collect(),
            category_split: self.category_split.iter().map(|(c, t)| (c.key(), *t)).collect(),
        }
    }
}
