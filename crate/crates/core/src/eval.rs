//! HOI mAP with the dual-IoU criterion.
//!
//! A prediction is a true positive when its `(verb, object)` equals the
//! ground truth's and both the human and object IoU exceed `eta`. Within an
//! image and category, predictions are ranked by score and greedily claim
//! the unclaimed ground truth with the highest `min(IoU_h, IoU_o)`. Per
//! category AP is the all-point interpolated area under the precision
//! envelope; split means are unweighted over categories with ground truth.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::iou;
use crate::triplet::{Category, HoiTriplet, ImageRecord, RecordError};
use crate::vocab::{SplitTag, Vocabulary};

/// Score assumed for predictions that carry none.
pub const DEFAULT_SCORE: f64 = 1.0;

pub const RANKING_RULE: &str =
    "descending score (absent scores count as 1.0); ties broken by image order, then emission order";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("image {image_id}: ground-truth category `{category}` is not in the vocabulary")]
    UnknownCategory { image_id: String, category: String },
}

#[derive(Debug, Clone)]
pub struct EvalDataset {
    images: Vec<ImageRecord>,
    vocabulary: Vocabulary,
}

impl EvalDataset {
    pub fn new(images: Vec<ImageRecord>, vocabulary: Vocabulary) -> Result<Self, EvalError> {
        for img in &images {
            img.validate()?;
            for t in &img.ground_truth {
                if !vocabulary.is_valid_pair(&t.verb, &t.object) {
                    return Err(EvalError::UnknownCategory {
                        image_id: img.image_id.clone(),
                        category: t.category().key(),
                    });
                }
            }
        }
        Ok(Self { images, vocabulary })
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }
}

/// One ranked prediction after matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredFlag {
    pub score: f64,
    pub tp: bool,
}

/// Per-image matching result for one category.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CategoryMatches {
    /// In rank order within the image.
    pub flags: Vec<ScoredFlag>,
    pub gt_count: usize,
}

fn score_of(t: &HoiTriplet) -> f64 {
    t.score().unwrap_or(DEFAULT_SCORE)
}

/// Stable descending sort by score.
fn rank<T>(items: &mut [T], score: impl Fn(&T) -> f64) {
    items.sort_by(|a, b| score(b).total_cmp(&score(a)));
}

/// Greedy per-category matching inside one image. Every category present in
/// either the predictions or the ground truth gets an entry.
pub fn match_predictions(image: &ImageRecord, eta: f64) -> BTreeMap<Category, CategoryMatches> {
    let mut gt_by_cat: BTreeMap<Category, Vec<&HoiTriplet>> = BTreeMap::new();
    for g in &image.ground_truth {
        gt_by_cat.entry(g.category()).or_default().push(g);
    }
    let mut pred_by_cat: BTreeMap<Category, Vec<&HoiTriplet>> = BTreeMap::new();
    for p in &image.predictions {
        pred_by_cat.entry(p.category()).or_default().push(p);
    }

    let mut out: BTreeMap<Category, CategoryMatches> = BTreeMap::new();
    for (cat, gts) in &gt_by_cat {
        out.entry(cat.clone()).or_default().gt_count = gts.len();
    }
    for (cat, mut preds) in pred_by_cat {
        rank(&mut preds, |p| score_of(p));
        let gts = gt_by_cat.get(&cat).map(Vec::as_slice).unwrap_or_default();
        let mut claimed = alloc::vec![false; gts.len()];
        let entry = out.entry(cat).or_default();
        for p in preds {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                if claimed[j] {
                    continue;
                }
                let ih = iou(&p.human_box, &g.human_box);
                let io = iou(&p.object_box, &g.object_box);
                if ih > eta && io > eta {
                    let overlap = ih.min(io);
                    if best.is_none_or(|(_, b)| overlap > b) {
                        best = Some((j, overlap));
                    }
                }
            }
            if let Some((j, _)) = best {
                claimed[j] = true;
            }
            entry.flags.push(ScoredFlag {
                score: score_of(p),
                tp: best.is_some(),
            });
        }
    }
    out
}

/// All-point interpolated AP. `flags` are ranked by descending score with a
/// stable sort, so ties keep their input order. `None` when `total_gt == 0`.
pub fn average_precision(flags: &[ScoredFlag], total_gt: usize) -> Option<f64> {
    if total_gt == 0 {
        return None;
    }
    let mut ranked = flags.to_vec();
    rank(&mut ranked, |f| f.score);

    let mut recall = Vec::with_capacity(ranked.len() + 2);
    let mut precision = Vec::with_capacity(ranked.len() + 2);
    recall.push(0.0);
    precision.push(0.0);
    let (mut tp, mut fp) = (0usize, 0usize);
    for f in &ranked {
        if f.tp {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / total_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    recall.push(1.0);
    precision.push(0.0);

    for i in (1..precision.len()).rev() {
        precision[i - 1] = precision[i - 1].max(precision[i]);
    }
    let mut ap = 0.0;
    for i in 1..recall.len() {
        if recall[i] != recall[i - 1] {
            ap += (recall[i] - recall[i - 1]) * precision[i];
        }
    }
    Some(ap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAp {
    pub ap: f64,
    pub gt_count: usize,
    pub predictions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitTag>,
}

/// Split means; `None` for a split with no evaluated categories.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitMeans {
    pub seen: Option<f64>,
    pub unseen: Option<f64>,
    pub rare: Option<f64>,
    pub non_rare: Option<f64>,
    pub full: Option<f64>,
}

impl SplitMeans {
    pub fn get(&self, tag: SplitTag) -> Option<f64> {
        match tag {
            SplitTag::Seen => self.seen,
            SplitTag::Unseen => self.unseen,
            SplitTag::Rare => self.rare,
            SplitTag::NonRare => self.non_rare,
        }
    }

    fn set(&mut self, tag: SplitTag, v: Option<f64>) {
        match tag {
            SplitTag::Seen => self.seen = v,
            SplitTag::Unseen => self.unseen = v,
            SplitTag::Rare => self.rare = v,
            SplitTag::NonRare => self.non_rare = v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Keyed by `verb|object`.
    pub per_category: BTreeMap<String, CategoryAp>,
    pub splits: SplitMeans,
    pub evaluated_categories: usize,
    /// Categories that only had predictions.
    pub skipped_categories: usize,
    pub eta: f64,
    pub ranking_rule: String,
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

pub fn evaluate(dataset: &EvalDataset, eta: f64) -> EvalReport {
    let mut pooled: BTreeMap<Category, CategoryMatches> = BTreeMap::new();
    for image in &dataset.images {
        for (cat, m) in match_predictions(image, eta) {
            let acc = pooled.entry(cat).or_default();
            acc.gt_count += m.gt_count;
            acc.flags.extend(m.flags);
        }
    }

    let mut per_category = BTreeMap::new();
    let mut skipped = 0usize;
    let mut by_split: BTreeMap<SplitTag, Vec<f64>> = BTreeMap::new();
    let mut all = Vec::new();
    for (cat, m) in &pooled {
        let Some(ap) = average_precision(&m.flags, m.gt_count) else {
            skipped += 1;
            continue;
        };
        let split = dataset.vocabulary.split_of(cat);
        if let Some(tag) = split {
            by_split.entry(tag).or_default().push(ap);
        }
        all.push(ap);
        per_category.insert(
            cat.key(),
            CategoryAp {
                ap,
                gt_count: m.gt_count,
                predictions: m.flags.len(),
                split,
            },
        );
    }

    let mut splits = SplitMeans {
        full: mean(&all),
        ..Default::default()
    };
    for tag in SplitTag::ALL {
        splits.set(tag, by_split.get(&tag).and_then(|v| mean(v)));
    }

    EvalReport {
        evaluated_categories: all.len(),
        skipped_categories: skipped,
        per_category,
        splits,
        eta,
        ranking_rule: String::from(RANKING_RULE),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use crate::label::EntityLabel;
    use alloc::vec;

    fn f(score: f64, tp: bool) -> ScoredFlag {
        ScoredFlag { score, tp }
    }

    fn t(verb: &str, h: [f64; 4], o: [f64; 4]) -> HoiTriplet {
        HoiTriplet::new(
            EntityLabel::new(verb).unwrap(),
            EntityLabel::new("bicycle").unwrap(),
            BBox::try_from(h).unwrap(),
            BBox::try_from(o).unwrap(),
        )
    }

    const H: [f64; 4] = [0.0, 0.0, 10.0, 10.0];
    const O: [f64; 4] = [20.0, 20.0, 30.0, 30.0];

    fn image(gt: Vec<HoiTriplet>, pred: Vec<HoiTriplet>) -> ImageRecord {
        ImageRecord {
            image_id: "i".into(),
            width: 100.0,
            height: 100.0,
            ground_truth: gt,
            predictions: pred,
        }
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[f(1.0, true)], 1), Some(1.0));
        assert_eq!(average_precision(&[f(0.9, false), f(0.5, true)], 1), Some(0.5));
        let ap = average_precision(&[f(0.9, true), f(0.8, false), f(0.7, true)], 2).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(average_precision(&[f(1.0, true)], 0), None);
        assert_eq!(average_precision(&[], 3), Some(0.0));
    }

    #[test]
    fn ties_keep_input_order() {
        assert_eq!(average_precision(&[f(1.0, false), f(1.0, true)], 1), Some(0.5));
        assert_eq!(average_precision(&[f(1.0, true), f(1.0, false)], 1), Some(1.0));
    }

    #[test]
    fn identical_prediction_is_tp() {
        let m = match_predictions(&image(vec![t("ride", H, O)], vec![t("ride", H, O)]), 0.5);
        let cm = m.values().next().unwrap();
        assert_eq!(cm.flags, [f(1.0, true)]);
    }

    #[test]
    fn duplicate_predictions() {
        let m = match_predictions(
            &image(vec![t("ride", H, O)], vec![t("ride", H, O), t("ride", H, O)]),
            0.5,
        );
        let cm = m.values().next().unwrap();
        assert_eq!(cm.flags, [f(1.0, true), f(1.0, false)]);
    }

    #[test]
    fn one_good_box_is_not_enough() {
        // human IoU 0.6, object IoU 0.4
        let pred = t("ride", [0.0, 0.0, 10.0, 6.0], [20.0, 20.0, 30.0, 24.0]);
        assert!((iou(&pred.human_box, &BBox::try_from(H).unwrap()) - 0.6).abs() < 1e-12);
        assert!((iou(&pred.object_box, &BBox::try_from(O).unwrap()) - 0.4).abs() < 1e-12);
        let m = match_predictions(&image(vec![t("ride", H, O)], vec![pred]), 0.5);
        assert_eq!(m.values().next().unwrap().flags, [f(1.0, false)]);
    }

    #[test]
    fn wrong_verb_lands_in_other_category() {
        let m = match_predictions(&image(vec![t("ride", H, O)], vec![t("hold", H, O)]), 0.5);
        assert_eq!(m.len(), 2);
        let hold = &m[&Category::new(EntityLabel::new("hold").unwrap(), EntityLabel::new("bicycle").unwrap())];
        assert_eq!((hold.gt_count, hold.flags.as_slice()), (0, &[f(1.0, false)][..]));
    }

    #[test]
    fn greedy_claims_best_overlap() {
        let gt_far = t("ride", [0.0, 0.0, 10.0, 8.0], O);
        let gt_near = t("ride", H, O);
        let m = match_predictions(
            &image(vec![gt_far, gt_near], vec![t("ride", H, O).with_score(0.9).unwrap(), t("ride", [0.0, 0.0, 10.0, 8.0], O).with_score(0.8).unwrap()]),
            0.5,
        );
        // the first prediction takes the exact GT, leaving the 0.8-IoU one for the second
        assert_eq!(m.values().next().unwrap().flags, [f(0.9, true), f(0.8, true)]);
    }
}
