use hoi_core::eval::{evaluate, EvalDataset};
use hoi_core::geometry::iou;
use hoi_core::protocol::{check_format, render_turn2, Turn2Answer, Turn2Record};
use hoi_core::reward::{hoi_reward, ExactMatch, RewardConfig};
use hoi_core::{load_vocabulary, BBox, EntityLabel, HoiTriplet, ImageRecord, VocabularyDocument};
use proptest::prelude::*;

fn arb_box() -> impl Strategy<Value = BBox> {
    (0.0..500.0f64, 0.0..500.0f64, 0.0..200.0f64, 0.0..200.0f64)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
}

fn arb_triplet() -> impl Strategy<Value = HoiTriplet> {
    (
        prop::sample::select(vec!["ride", "hold", "sit on"]),
        prop::sample::select(vec!["bicycle", "cup"]),
        arb_box(),
        arb_box(),
    )
        .prop_map(|(v, o, h, b)| HoiTriplet::new(EntityLabel::new(v).unwrap(), EntityLabel::new(o).unwrap(), h, b))
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        let x = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(x, iou(&b, &a));
    }

    #[test]
    fn reward_ignores_prediction_order(
        preds in prop::collection::vec(arb_triplet(), 0..5),
        gt in prop::collection::vec(arb_triplet(), 0..5),
        rot in 0usize..5,
    ) {
        let cfg = RewardConfig::default();
        let a = hoi_reward(&preds, &gt, &cfg, &ExactMatch).unwrap();
        let mut rotated = preds.clone();
        if !rotated.is_empty() {
            let k = rot % rotated.len();
            rotated.rotate_left(k);
        }
        let b = hoi_reward(&rotated, &gt, &cfg, &ExactMatch).unwrap();
        prop_assert_eq!(a.matching.tp, b.matching.tp);
        prop_assert!((0.0..1.0).contains(&a.r_hoi));
    }

    #[test]
    fn self_match_is_perfect_f1(gt in prop::collection::vec(arb_triplet(), 1..5)) {
        // Boxes with positive area match themselves; degenerate ones cannot.
        let gt: Vec<HoiTriplet> = gt.into_iter().filter(|t| t.human_box.area() > 0.0 && t.object_box.area() > 0.0).collect();
        prop_assume!(!gt.is_empty());
        let r = hoi_reward(&gt, &gt, &RewardConfig::default(), &ExactMatch).unwrap();
        prop_assert_eq!(r.matching.tp, gt.len());
        prop_assert!((r.r_hoi - 2.0 / (2.0 + 1e-6)).abs() < 1e-12);
    }

    #[test]
    fn rendered_answers_are_well_formed(preds in prop::collection::vec(arb_triplet(), 1..5)) {
        let records = preds.iter().enumerate().map(|(i, t)| Turn2Record {
            index: i as u32 + 1,
            verb: t.verb.clone(),
            object: t.object.clone(),
            human_box: t.human_box,
            object_box: t.object_box,
        }).collect();
        let body = render_turn2(&Turn2Answer::new(records).unwrap());
        let turn1 = "<think>x</think><answer> ; image_crop</answer>";
        let good = format!("<think>x</think><answer>{body}</answer>");
        let bare = format!("<answer>{body}</answer>");
        prop_assert!(check_format(turn1, &good));
        prop_assert!(!check_format(turn1, &bare));
    }
}

fn read_records(name: &str) -> Vec<ImageRecord> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/map/");
    std::fs::read_to_string(format!("{path}{name}"))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn map_fixture_matches_hand_computation() {
    let doc: VocabularyDocument =
        serde_json::from_str(include_str!("../../../fixtures/map/vocab.json")).unwrap();
    let vocab = load_vocabulary(&doc).unwrap();
    let mut images = read_records("dataset.jsonl");
    for p in read_records("pred.jsonl") {
        images.iter_mut().find(|i| i.image_id == p.image_id).unwrap().predictions = p.predictions;
    }
    let report = evaluate(&EvalDataset::new(images, vocab).unwrap(), 0.5);
    let ap = |k: &str| report.per_category[k].ap;
    assert!((ap("ride|bicycle") - 2.0 / 3.0).abs() < 1e-12);
    assert!((ap("hold|cup") - 0.25).abs() < 1e-12);
    assert!((ap("hold|bicycle") - 1.0).abs() < 1e-12);
    assert!((report.splits.full.unwrap() - 23.0 / 36.0).abs() < 1e-12);
    assert_eq!(report.splits.seen, None);
}
