use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::label::EntityLabel;

/// An interaction category, `(verb, object)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Category {
    pub verb: EntityLabel,
    pub object: EntityLabel,
}

impl Category {
    pub fn new(verb: EntityLabel, object: EntityLabel) -> Self {
        Self { verb, object }
    }

    /// `verb|object`, the key form used in vocabulary documents and reports.
    pub fn key(&self) -> String {
        let mut s = String::with_capacity(self.verb.as_str().len() + self.object.as_str().len() + 1);
        s.push_str(self.verb.as_str());
        s.push('|');
        s.push_str(self.object.as_str());
        s
    }
}

/// One `<human, object, verb>` record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoiTriplet {
    pub verb: EntityLabel,
    pub object: EntityLabel,
    pub human_box: BBox,
    pub object_box: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("triplet score {0} is outside [0, 1]")]
pub struct ScoreOutOfRange(pub f64);

impl HoiTriplet {
    pub fn new(verb: EntityLabel, object: EntityLabel, human_box: BBox, object_box: BBox) -> Self {
        Self {
            verb,
            object,
            human_box,
            object_box,
            score: None,
        }
    }

    pub fn with_score(mut self, score: f64) -> Result<Self, ScoreOutOfRange> {
        if !(0.0..=1.0).contains(&score) {
            return Err(ScoreOutOfRange(score));
        }
        self.score = Some(score);
        Ok(self)
    }

    pub fn score(&self) -> Option<f64> {
        self.score
    }

    pub fn category(&self) -> Category {
        Category::new(self.verb.clone(), self.object.clone())
    }

    pub(crate) fn score_is_valid(&self) -> bool {
        self.score.is_none_or(|s| (0.0..=1.0).contains(&s))
    }
}

/// Ground truth and predictions for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub ground_truth: Vec<HoiTriplet>,
    #[serde(default)]
    pub predictions: Vec<HoiTriplet>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RecordError {
    #[error("image {0}: width and height must be positive")]
    BadDimensions(String),
    #[error("image {image_id}: box {index} of {set} lies outside the frame")]
    OutOfFrame {
        image_id: String,
        set: &'static str,
        index: usize,
    },
    #[error("image {image_id}: score of prediction {index} is outside [0, 1]")]
    BadScore { image_id: String, index: usize },
}

impl ImageRecord {
    /// Checks positive dimensions, in-frame boxes and score ranges.
    pub fn validate(&self) -> Result<(), RecordError> {
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(RecordError::BadDimensions(self.image_id.clone()));
        }
        for (set, triplets) in [("ground_truth", &self.ground_truth), ("predictions", &self.predictions)] {
            for (index, t) in triplets.iter().enumerate() {
                let inside = t.human_box.fits_within(self.width, self.height)
                    && t.object_box.fits_within(self.width, self.height);
                if !inside {
                    return Err(RecordError::OutOfFrame {
                        image_id: self.image_id.clone(),
                        set,
                        index,
                    });
                }
                if !t.score_is_valid() {
                    return Err(RecordError::BadScore {
                        image_id: self.image_id.clone(),
                        index,
                    });
                }
            }
        }
        Ok(())
    }
}
