//! Property tests over the geometric and format invariants.

use proptest::prelude::*;

use wsloc::eval::{match_frame, LabeledFrame};
use wsloc::filter::{filter_frame, FilterConfig};
use wsloc::geometry::{intersection_over_min, iou, Box2D};
use wsloc::io::{read_pseudo_dataset, write_pseudo_dataset};
use wsloc::model::{
    ClassId, ClassRegistry, FrameDetections, LabelStage, PartDetection, PartKind, Provenance,
    PseudoLabelRecord, ToolDetection,
};

fn arb_box() -> impl Strategy<Value = Box2D> {
    (
        0.0f64..1000.0,
        0.0f64..1000.0,
        1.0f64..300.0,
        1.0f64..300.0,
        0.0f64..=1.0,
    )
        .prop_map(|(x0, y0, w, h, conf)| Box2D::new(x0, y0, x0 + w, y0 + h, conf).unwrap())
}

proptest! {
    #[test]
    fn iou_is_symmetric_bounded_and_reflexive(a in arb_box(), b in arb_box()) {
        let ab = iou(&a, &b);
        let ba = iou(&b, &a);
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn iou_never_exceeds_intersection_over_min(a in arb_box(), b in arb_box()) {
        prop_assert!(iou(&a, &b) <= intersection_over_min(&a, &b) + 1e-12);
    }

    #[test]
    fn iou_is_translation_invariant(
        a in arb_box(),
        b in arb_box(),
        dx in -500.0f64..500.0,
        dy in -500.0f64..500.0,
    ) {
        let shift = |v: &Box2D| {
            Box2D::new(
                v.x_min() + dx,
                v.y_min() + dy,
                v.x_max() + dx,
                v.y_max() + dy,
                v.confidence(),
            )
            .unwrap()
        };
        let before = iou(&a, &b);
        let after = iou(&shift(&a), &shift(&b));
        prop_assert!((before - after).abs() < 1e-9, "{} vs {}", before, after);
    }
}

/// Boxes on the millipixel-normalized grid of a 1000x1000 image survive
/// the six-decimal annotation format exactly.
fn grid_box() -> impl Strategy<Value = Box2D> {
    (0u32..900, 0u32..900, 1u32..100, 1u32..100).prop_map(|(x0, y0, w, h)| {
        Box2D::new(
            f64::from(x0),
            f64::from(y0),
            f64::from(x0 + w),
            f64::from(y0 + h),
            1.0,
        )
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn pseudo_dataset_round_trips_grid_aligned_records(
        boxes in prop::collection::vec((grid_box(), 0u32..3), 1..6),
        frame_index in 0u64..1_000_000,
    ) {
        let registry = ClassRegistry::build(&["a", "b", "c"]).unwrap();
        let provenance = Provenance { round: 0, stage: LabelStage::Bootstrap };
        let record = PseudoLabelRecord::new(
            "clip",
            frame_index,
            boxes.into_iter().map(|(b, c)| (b, ClassId(c))).collect(),
            provenance,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_pseudo_dataset([&record], (1000, 1000), dir.path(), &registry).unwrap();
        let back = read_pseudo_dataset(dir.path(), (1000, 1000), provenance).unwrap();
        prop_assert_eq!(back.len(), 1);
        prop_assert_eq!(&back[0].clip_id, "clip");
        prop_assert_eq!(back[0].frame_index, frame_index);
        for (orig, read) in record.entries.iter().zip(&back[0].entries) {
            prop_assert_eq!(orig.1, read.1);
            for (a, b) in orig.0.corners().iter().zip(read.0.corners()) {
                prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn filter_acceptance_ignores_list_order(
        seed in 0u64..10_000,
        tool_perm in prop::sample::select(vec![0usize, 1, 2, 3]),
        part_rotation in 0usize..6,
    ) {
        use rand::{Rng, SeedableRng};
        let registry = ClassRegistry::build(&["a", "stapler", "c"]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut parts = Vec::new();
        let mut tools = Vec::new();
        for i in 0..3 {
            let x0 = 200.0 * i as f64 + rng.gen_range(0.0..20.0);
            let w = rng.gen_range(50.0..80.0);
            let tool_box = Box2D::new(x0, 50.0, x0 + w, 50.0 + w, 0.9).unwrap();
            tools.push(ToolDetection { bbox: tool_box, class: ClassId(rng.gen_range(0..3)) });
            // A part that may or may not clear the threshold.
            let shift = rng.gen_range(0.0..(w * 0.3));
            let kind = PartKind::ALL[rng.gen_range(0..3)];
            parts.push(PartDetection {
                bbox: Box2D::new(x0 + shift, 50.0, x0 + w + shift, 50.0 + w, 0.8).unwrap(),
                kind,
            });
        }
        let frame = |parts: Vec<PartDetection>, tools: Vec<ToolDetection>| FrameDetections {
            clip_id: "p".into(),
            frame_index: 0,
            parts,
            tools,
        };
        let cfg = FilterConfig::default();
        let baseline = filter_frame(&frame(parts.clone(), tools.clone()), 1, &cfg, &registry)
            .unwrap()
            .is_ok();

        let mut tools_shuffled = tools.clone();
        if tool_perm < 3 {
            tools_shuffled.swap(tool_perm, (tool_perm + 1) % 3);
        }
        let mut parts_rotated = parts.clone();
        parts_rotated.rotate_left(part_rotation % 3);
        let permuted = filter_frame(&frame(parts_rotated, tools_shuffled), 1, &cfg, &registry)
            .unwrap()
            .is_ok();
        prop_assert_eq!(baseline, permuted);
    }
}

/// Exhaustive optimal assignment (predictions to distinct ground
/// truths with IOU above the threshold) for small instances.
fn optimal_tp_count(preds: &[Box2D], gts: &[Box2D], thresh: f64) -> usize {
    fn recurse(preds: &[Box2D], gts: &[Box2D], thresh: f64, used: &mut Vec<bool>, i: usize) -> usize {
        if i == preds.len() {
            return 0;
        }
        // Skip this prediction.
        let mut best = recurse(preds, gts, thresh, used, i + 1);
        for (j, gt) in gts.iter().enumerate() {
            if !used[j] && iou(&preds[i], gt) > thresh {
                used[j] = true;
                best = best.max(1 + recurse(preds, gts, thresh, used, i + 1));
                used[j] = false;
            }
        }
        best
    }
    recurse(preds, gts, thresh, &mut vec![false; gts.len()], 0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]
    #[test]
    fn greedy_matching_is_bounded_by_optimal(
        preds in prop::collection::vec(arb_box(), 0..5),
        gts in prop::collection::vec(arb_box(), 0..5),
    ) {
        let labeled_preds: Vec<(Box2D, ClassId)> =
            preds.iter().map(|b| (*b, ClassId(0))).collect();
        let labeled_gts: Vec<(Box2D, ClassId)> = gts.iter().map(|b| (*b, ClassId(0))).collect();
        let result = match_frame(&labeled_preds, &labeled_gts, 0.3);
        // One-to-one: no ground truth appears twice.
        let mut seen = std::collections::BTreeSet::new();
        for (_, gt_idx, _) in &result.pairs {
            prop_assert!(seen.insert(*gt_idx), "ground truth matched twice");
        }
        let optimal = optimal_tp_count(&preds, &gts, 0.3);
        prop_assert!(result.pairs.len() <= optimal);
        // Greedy on well-separated instances reaches the optimum; at
        // minimum it must find a match whenever one exists.
        if optimal > 0 {
            prop_assert!(!result.pairs.is_empty());
        }
    }
}

#[test]
fn labeled_frame_key_matches_components() {
    let frame = LabeledFrame {
        clip_id: "clip".into(),
        frame_index: 9,
        boxes: vec![],
    };
    assert_eq!(frame.key(), ("clip".to_string(), 9));
}
