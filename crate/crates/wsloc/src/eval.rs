//! Quality measurement: pseudo-label precision/recall against ground
//! truth, and detection mAP over the 0.50–0.95 IOU threshold range.
//!
//! Two comparison conventions deliberately differ from the filter gate:
//! evaluation matching uses `>=` at each threshold (the standard
//! detection-evaluation convention) while the filter's consistency gate
//! uses strict `>`. AP uses 101-point interpolation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, Box2D};
use crate::model::{ClassId, ClassRegistry, FrameKey, PseudoLabelRecord};
use crate::sim::GroundTruthFrame;

/// A frame's labeled boxes, detached from any detector or simulator
/// type, so both pseudo-datasets and raw detections evaluate through the
/// same path.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrame {
    pub clip_id: String,
    pub frame_index: u64,
    pub boxes: Vec<(Box2D, ClassId)>,
}

impl LabeledFrame {
    pub fn key(&self) -> FrameKey {
        (self.clip_id.clone(), self.frame_index)
    }

    pub fn from_record(record: &PseudoLabelRecord) -> Self {
        LabeledFrame {
            clip_id: record.clip_id.clone(),
            frame_index: record.frame_index,
            boxes: record.entries.clone(),
        }
    }

    /// Ground-truth tool boxes with their true classes.
    pub fn from_ground_truth(gt: &GroundTruthFrame) -> Self {
        LabeledFrame {
            clip_id: gt.clip_id.clone(),
            frame_index: gt.frame_index,
            boxes: gt
                .instruments
                .iter()
                .map(|inst| (inst.tool_box, inst.class))
                .collect(),
        }
    }
}

/// One frame's prediction/ground-truth association: greedy matching by
/// descending confidence (ties keep input order), each ground truth
/// consumed at most once.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchResult {
    /// (prediction index, ground-truth index, IOU) triples.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_predictions: Vec<usize>,
    pub unmatched_ground_truth: Vec<usize>,
}

/// Greedy geometric matching within one frame. Labels are not consulted;
/// callers compare classes on the returned pairs.
pub fn match_frame(
    predictions: &[(Box2D, ClassId)],
    ground_truth: &[(Box2D, ClassId)],
    iou_thresh: f64,
) -> MatchResult {
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&i, &j| {
        predictions[j]
            .0
            .confidence()
            .total_cmp(&predictions[i].0.confidence())
    });
    let mut used = vec![false; ground_truth.len()];
    let mut result = MatchResult::default();
    for pred_idx in order {
        let mut best: Option<(usize, f64)> = None;
        for (gt_idx, (gt_box, _)) in ground_truth.iter().enumerate() {
            if used[gt_idx] {
                continue;
            }
            let overlap = iou(&predictions[pred_idx].0, gt_box);
            if overlap > iou_thresh && best.map_or(true, |(_, b)| overlap > b) {
                best = Some((gt_idx, overlap));
            }
        }
        match best {
            Some((gt_idx, overlap)) => {
                used[gt_idx] = true;
                result.pairs.push((pred_idx, gt_idx, overlap));
            }
            None => result.unmatched_predictions.push(pred_idx),
        }
    }
    result.unmatched_ground_truth = used
        .iter()
        .enumerate()
        .filter(|(_, &u)| !u)
        .map(|(i, _)| i)
        .collect();
    result
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ClassQuality {
    pub ground_truth: u64,
    pub emitted: u64,
    pub correct: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

/// Pseudo-label quality against ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QualityReport {
    /// None when the dataset emitted nothing (0/0).
    pub precision: Option<f64>,
    pub recall: f64,
    pub per_class: BTreeMap<String, ClassQuality>,
    pub covered_frames: u64,
    /// Records whose frame has no ground truth — a coverage warning,
    /// not an error.
    pub frames_without_ground_truth: u64,
}

/// Scores a pseudo-dataset: an entry is correct iff it matches a
/// ground-truth instrument geometrically (IOU > `iou_thresh`) and its
/// class equals the true class. Recall counts ground-truth instruments
/// only over the frames the dataset covers.
pub fn label_quality(
    records: &[PseudoLabelRecord],
    ground_truth: &[LabeledFrame],
    iou_thresh: f64,
    registry: &ClassRegistry,
) -> Result<QualityReport> {
    let gt_by_key: BTreeMap<FrameKey, &LabeledFrame> =
        ground_truth.iter().map(|f| (f.key(), f)).collect();

    let mut per_class: BTreeMap<String, ClassQuality> = BTreeMap::new();
    let mut emitted = 0u64;
    let mut correct = 0u64;
    let mut gt_total = 0u64;
    let mut covered = 0u64;
    let mut misaligned = 0u64;

    for record in records {
        let Some(gt) = gt_by_key.get(&record.key()) else {
            misaligned += 1;
            emitted += record.entries.len() as u64;
            for (_, class) in &record.entries {
                per_class
                    .entry(registry.name(*class)?.to_string())
                    .or_default()
                    .emitted += 1;
            }
            continue;
        };
        covered += 1;
        gt_total += gt.boxes.len() as u64;
        for (_, class) in &gt.boxes {
            per_class
                .entry(registry.name(*class)?.to_string())
                .or_default()
                .ground_truth += 1;
        }
        emitted += record.entries.len() as u64;
        let matches = match_frame(&record.entries, &gt.boxes, iou_thresh);
        let mut matched_ok = vec![false; record.entries.len()];
        for (pred_idx, gt_idx, _) in &matches.pairs {
            matched_ok[*pred_idx] = record.entries[*pred_idx].1 == gt.boxes[*gt_idx].1;
        }
        for ((_, class), ok) in record.entries.iter().zip(&matched_ok) {
            let entry = per_class
                .entry(registry.name(*class)?.to_string())
                .or_default();
            entry.emitted += 1;
            if *ok {
                entry.correct += 1;
                correct += 1;
            }
        }
    }

    for q in per_class.values_mut() {
        q.precision = (q.emitted > 0).then(|| q.correct as f64 / q.emitted as f64);
        q.recall = (q.ground_truth > 0).then(|| q.correct as f64 / q.ground_truth as f64);
    }

    Ok(QualityReport {
        precision: (emitted > 0).then(|| correct as f64 / emitted as f64),
        recall: if gt_total > 0 {
            correct as f64 / gt_total as f64
        } else {
            0.0
        },
        per_class,
        covered_frames: covered,
        frames_without_ground_truth: misaligned,
    })
}

// ---------------------------------------------------------------------------
// Average precision

/// The ten thresholds named by the 0.50:0.05:0.95 range, built from
/// integer arithmetic so 0.60 compares equal to an IOU of exactly 0.6.
pub fn standard_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

struct ClassInstances {
    /// (confidence, frame order, per-frame prediction index).
    predictions: Vec<(f64, usize, usize)>,
    /// Ground-truth box count per frame, by frame order.
    gt_count: u64,
}

fn collect_class(
    predictions: &[LabeledFrame],
    ground_truth: &[LabeledFrame],
    class: ClassId,
) -> ClassInstances {
    let mut preds = Vec::new();
    for (frame_idx, frame) in predictions.iter().enumerate() {
        for (box_idx, (b, c)) in frame.boxes.iter().enumerate() {
            if *c == class {
                preds.push((b.confidence(), frame_idx, box_idx));
            }
        }
    }
    let gt_count = ground_truth
        .iter()
        .flat_map(|f| &f.boxes)
        .filter(|(_, c)| *c == class)
        .count() as u64;
    ClassInstances {
        predictions: preds,
        gt_count,
    }
}

/// Average precision for one class at one IOU threshold, with greedy
/// one-to-one matching (`>=` at the threshold) and 101-point
/// interpolation. `None` when the class has no ground truth.
pub fn average_precision(
    predictions: &[LabeledFrame],
    ground_truth: &[LabeledFrame],
    class: ClassId,
    iou_thresh: f64,
) -> Option<f64> {
    let gt_by_key: BTreeMap<FrameKey, &LabeledFrame> =
        ground_truth.iter().map(|f| (f.key(), f)).collect();
    let instances = collect_class(predictions, ground_truth, class);
    if instances.gt_count == 0 {
        return None;
    }
    if instances.predictions.is_empty() {
        return Some(0.0);
    }

    // Sort by descending confidence; ties keep (frame, box) input order.
    let mut order = instances.predictions.clone();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    // Per-frame used flags over ground-truth boxes of this class.
    let mut used: BTreeMap<FrameKey, Vec<bool>> = BTreeMap::new();
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(order.len());
    let (mut tp, mut fp) = (0u64, 0u64);
    for (_, frame_idx, box_idx) in order {
        let frame = &predictions[frame_idx];
        let pred_box = &frame.boxes[box_idx].0;
        let mut is_tp = false;
        if let Some(gt) = gt_by_key.get(&frame.key()) {
            let gt_class_boxes: Vec<(usize, &Box2D)> = gt
                .boxes
                .iter()
                .enumerate()
                .filter(|(_, (_, c))| *c == class)
                .map(|(i, (b, _))| (i, b))
                .collect();
            let flags = used
                .entry(frame.key())
                .or_insert_with(|| vec![false; gt.boxes.len()]);
            let mut best: Option<(usize, f64)> = None;
            for (gt_idx, gt_box) in gt_class_boxes {
                if flags[gt_idx] {
                    continue;
                }
                let overlap = iou(pred_box, gt_box);
                if overlap >= iou_thresh && best.map_or(true, |(_, b)| overlap > b) {
                    best = Some((gt_idx, overlap));
                }
            }
            if let Some((gt_idx, _)) = best {
                flags[gt_idx] = true;
                is_tp = true;
            }
        }
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        curve.push((
            tp as f64 / instances.gt_count as f64,
            tp as f64 / (tp + fp) as f64,
        ));
    }

    Some(interpolated_ap(&curve))
}

/// 101-point interpolated area under a (recall, precision) curve whose
/// recall is non-decreasing.
fn interpolated_ap(curve: &[(f64, f64)]) -> f64 {
    // Precision envelope: running maximum from the high-recall end.
    let mut envelope: Vec<(f64, f64)> = curve.to_vec();
    let mut running = 0.0f64;
    for point in envelope.iter_mut().rev() {
        running = running.max(point.1);
        point.1 = running;
    }
    let mut total = 0.0;
    let mut cursor = 0usize;
    for step in 0..=100u32 {
        let recall = f64::from(step) / 100.0;
        while cursor < envelope.len() && envelope[cursor].0 < recall {
            cursor += 1;
        }
        if cursor < envelope.len() {
            total += envelope[cursor].1;
        }
    }
    total / 101.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapReport {
    pub map: f64,
    /// Mean AP over thresholds, per class name.
    pub per_class: BTreeMap<String, f64>,
    /// Mean AP over classes, per threshold (two-decimal key).
    pub per_threshold: BTreeMap<String, f64>,
}

/// Mean average precision over classes and IOU thresholds. Classes with
/// no ground truth anywhere are excluded from every mean; an entirely
/// empty ground truth is an error.
pub fn map_range(
    predictions: &[LabeledFrame],
    ground_truth: &[LabeledFrame],
    thresholds: &[f64],
    registry: &ClassRegistry,
) -> Result<MapReport> {
    if thresholds.is_empty() {
        return Err(Error::Eval("threshold list is empty".into()));
    }
    let scored: Vec<ClassId> = registry
        .iter()
        .map(|c| c.id)
        .filter(|&class| {
            ground_truth
                .iter()
                .flat_map(|f| &f.boxes)
                .any(|(_, c)| *c == class)
        })
        .collect();
    if scored.is_empty() {
        return Err(Error::Eval(
            "ground truth contains no instances of any registered class".into(),
        ));
    }

    let cells: Vec<((ClassId, usize), f64)> = scored
        .par_iter()
        .flat_map(|&class| {
            thresholds
                .par_iter()
                .enumerate()
                .map(move |(t_idx, &t)| {
                    let ap = average_precision(predictions, ground_truth, class, t)
                        .expect("scored classes have ground truth");
                    ((class, t_idx), ap)
                })
        })
        .collect();

    let mut per_class: BTreeMap<String, f64> = BTreeMap::new();
    let mut per_threshold: BTreeMap<String, f64> = BTreeMap::new();
    for (&class, name) in scored.iter().zip(
        scored
            .iter()
            .map(|&c| registry.name(c).map(str::to_string))
            .collect::<Result<Vec<_>>>()?
            .iter(),
    ) {
        let mean = cells
            .iter()
            .filter(|((c, _), _)| *c == class)
            .map(|(_, ap)| ap)
            .sum::<f64>()
            / thresholds.len() as f64;
        per_class.insert(name.clone(), mean);
    }
    for (t_idx, &t) in thresholds.iter().enumerate() {
        let mean = cells
            .iter()
            .filter(|((_, i), _)| *i == t_idx)
            .map(|(_, ap)| ap)
            .sum::<f64>()
            / scored.len() as f64;
        per_threshold.insert(format!("{t:.2}"), mean);
    }
    let map = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(MapReport {
        map,
        per_class,
        per_threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LabelStage, Provenance};

    fn registry() -> ClassRegistry {
        ClassRegistry::build(&["alpha", "beta", "gamma"]).unwrap()
    }

    fn bb(x0: f64, y0: f64, x1: f64, y1: f64, conf: f64) -> Box2D {
        Box2D::new(x0, y0, x1, y1, conf).unwrap()
    }

    fn lf(clip: &str, frame: u64, boxes: Vec<(Box2D, u32)>) -> LabeledFrame {
        LabeledFrame {
            clip_id: clip.into(),
            frame_index: frame,
            boxes: boxes.into_iter().map(|(b, c)| (b, ClassId(c))).collect(),
        }
    }

    fn record(clip: &str, frame: u64, boxes: Vec<(Box2D, u32)>) -> PseudoLabelRecord {
        PseudoLabelRecord::new(
            clip,
            frame,
            boxes.into_iter().map(|(b, c)| (b, ClassId(c))).collect(),
            Provenance {
                round: 0,
                stage: LabelStage::Bootstrap,
            },
        )
        .unwrap()
    }

    #[test]
    fn perfect_dataset_scores_one() {
        let gt = vec![lf(
            "c",
            0,
            vec![(bb(0.0, 0.0, 50.0, 50.0, 1.0), 0), (bb(100.0, 0.0, 150.0, 50.0, 1.0), 1)],
        )];
        let records = vec![record(
            "c",
            0,
            vec![(bb(0.0, 0.0, 50.0, 50.0, 1.0), 0), (bb(100.0, 0.0, 150.0, 50.0, 1.0), 1)],
        )];
        let report = label_quality(&records, &gt, 0.5, &registry()).unwrap();
        assert_eq!(report.precision, Some(1.0));
        assert_eq!(report.recall, 1.0);
    }

    #[test]
    fn empty_dataset_reports_null_precision() {
        let gt = vec![lf("c", 0, vec![(bb(0.0, 0.0, 50.0, 50.0, 1.0), 0)])];
        let report = label_quality(&[], &gt, 0.5, &registry()).unwrap();
        assert_eq!(report.precision, None);
        assert_eq!(report.recall, 0.0);
        assert_eq!(report.covered_frames, 0);
    }

    #[test]
    fn wrong_class_is_incorrect_even_with_perfect_box() {
        let gt = vec![lf("c", 0, vec![(bb(0.0, 0.0, 50.0, 50.0, 1.0), 0)])];
        let records = vec![record("c", 0, vec![(bb(0.0, 0.0, 50.0, 50.0, 1.0), 1)])];
        let report = label_quality(&records, &gt, 0.5, &registry()).unwrap();
        assert_eq!(report.precision, Some(0.0));
    }

    #[test]
    fn misaligned_frames_warn_instead_of_failing() {
        let gt = vec![lf("c", 0, vec![(bb(0.0, 0.0, 50.0, 50.0, 1.0), 0)])];
        let records = vec![record("other", 9, vec![(bb(0.0, 0.0, 50.0, 50.0, 1.0), 0)])];
        let report = label_quality(&records, &gt, 0.5, &registry()).unwrap();
        assert_eq!(report.frames_without_ground_truth, 1);
        assert_eq!(report.precision, Some(0.0));
    }

    #[test]
    fn greedy_matching_never_reuses_ground_truth() {
        let gt_box = bb(0.0, 0.0, 50.0, 50.0, 1.0);
        let preds = vec![
            (bb(0.0, 0.0, 50.0, 50.0, 0.9), ClassId(0)),
            (bb(1.0, 0.0, 51.0, 50.0, 0.8), ClassId(0)),
        ];
        let result = match_frame(&preds, &[(gt_box, ClassId(0))], 0.5);
        assert_eq!(result.pairs.len(), 1);
        assert_eq!(result.pairs[0].0, 0, "higher confidence wins the match");
        assert_eq!(result.unmatched_predictions, vec![1]);
    }

    #[test]
    fn single_true_positive_has_ap_one() {
        let gt = vec![lf("c", 0, vec![(bb(0.0, 0.0, 50.0, 50.0, 1.0), 0)])];
        let preds = vec![lf("c", 0, vec![(bb(0.0, 0.0, 50.0, 50.0, 0.9), 0)])];
        let ap = average_precision(&preds, &gt, ClassId(0), 0.5).unwrap();
        assert_eq!(ap, 1.0);
    }

    #[test]
    fn no_predictions_has_ap_zero() {
        let gt = vec![lf("c", 0, vec![(bb(0.0, 0.0, 50.0, 50.0, 1.0), 0)])];
        let ap = average_precision(&[], &gt, ClassId(0), 0.5).unwrap();
        assert_eq!(ap, 0.0);
    }

    #[test]
    fn absent_class_is_undefined() {
        let gt = vec![lf("c", 0, vec![(bb(0.0, 0.0, 50.0, 50.0, 1.0), 0)])];
        assert!(average_precision(&[], &gt, ClassId(2), 0.5).is_none());
    }

    #[test]
    fn hand_computed_two_prediction_case() {
        // Two ground truths; one true positive at conf 0.9, one false
        // positive at conf 0.8. Precision 1.0 up to recall 0.5, then
        // 0.5; 51 of the 101 interpolation points see precision 1.
        let gt = vec![lf(
            "c",
            0,
            vec![(bb(0.0, 0.0, 50.0, 50.0, 1.0), 0), (bb(100.0, 0.0, 150.0, 50.0, 1.0), 0)],
        )];
        let preds = vec![lf(
            "c",
            0,
            vec![
                (bb(0.0, 0.0, 50.0, 50.0, 0.9), 0),
                (bb(300.0, 300.0, 350.0, 350.0, 0.8), 0),
            ],
        )];
        let ap = average_precision(&preds, &gt, ClassId(0), 0.5).unwrap();
        assert!((ap - 51.0 / 101.0).abs() < 1e-12, "ap {ap}");
    }

    #[test]
    fn map_counts_thresholds_passed_by_iou_point_six() {
        // IOU exactly 0.6 with the correct class, sole class: passes
        // thresholds 0.50, 0.55 and 0.60 with AP 1, fails the rest.
        let reg = ClassRegistry::build(&["alpha"]).unwrap();
        let gt = vec![lf("c", 0, vec![(bb(0.0, 0.0, 10.0, 10.0, 1.0), 0)])];
        let preds = vec![lf("c", 0, vec![(bb(0.0, 0.0, 10.0, 6.0, 0.9), 0)])];
        assert_eq!(iou(&preds[0].boxes[0].0, &gt[0].boxes[0].0), 0.6);
        let report = map_range(&preds, &gt, &standard_thresholds(), &reg).unwrap();
        assert!((report.map - 0.3).abs() < 1e-9, "map {}", report.map);
    }

    #[test]
    fn perfect_and_empty_detectors() {
        let reg = registry();
        let gt = vec![
            lf("c", 0, vec![(bb(0.0, 0.0, 50.0, 50.0, 1.0), 0)]),
            lf("c", 1, vec![(bb(0.0, 0.0, 50.0, 50.0, 1.0), 1)]),
        ];
        let report = map_range(&gt, &gt, &standard_thresholds(), &reg).unwrap();
        assert_eq!(report.map, 1.0);
        let report = map_range(&[], &gt, &standard_thresholds(), &reg).unwrap();
        assert_eq!(report.map, 0.0);
    }

    #[test]
    fn empty_ground_truth_is_an_error() {
        let reg = registry();
        let preds = vec![lf("c", 0, vec![(bb(0.0, 0.0, 50.0, 50.0, 0.9), 0)])];
        assert!(map_range(&preds, &[], &standard_thresholds(), &reg).is_err());
    }

    #[test]
    fn map_equals_mean_of_single_threshold_aps() {
        let reg = registry();
        let gt = vec![
            lf("c", 0, vec![(bb(0.0, 0.0, 50.0, 50.0, 1.0), 0), (bb(90.0, 0.0, 140.0, 50.0, 2.0_f64.recip()), 1)]),
            lf("c", 1, vec![(bb(0.0, 0.0, 60.0, 60.0, 1.0), 1)]),
        ];
        let preds = vec![
            lf("c", 0, vec![(bb(2.0, 0.0, 52.0, 50.0, 0.8), 0), (bb(95.0, 0.0, 139.0, 50.0, 0.7), 1)]),
            lf("c", 1, vec![(bb(10.0, 0.0, 60.0, 55.0, 0.6), 1), (bb(200.0, 200.0, 250.0, 250.0, 0.5), 0)]),
        ];
        let thresholds = standard_thresholds();
        let report = map_range(&preds, &gt, &thresholds, &reg).unwrap();
        let mut total = 0.0;
        let mut classes = 0usize;
        for class in [ClassId(0), ClassId(1)] {
            let mut class_sum = 0.0;
            for &t in &thresholds {
                class_sum += average_precision(&preds, &gt, class, t).unwrap();
            }
            total += class_sum / thresholds.len() as f64;
            classes += 1;
        }
        let expected = total / classes as f64;
        assert!((report.map - expected).abs() < 1e-12);
    }

    #[test]
    fn ap_is_monotone_in_threshold() {
        let gt = vec![lf(
            "c",
            0,
            vec![(bb(0.0, 0.0, 50.0, 50.0, 1.0), 0), (bb(100.0, 0.0, 160.0, 60.0, 1.0), 0)],
        )];
        let preds = vec![lf(
            "c",
            0,
            vec![
                (bb(3.0, 2.0, 52.0, 50.0, 0.9), 0),
                (bb(104.0, 0.0, 158.0, 52.0, 0.7), 0),
            ],
        )];
        let mut last = f64::INFINITY;
        for &t in &standard_thresholds() {
            let ap = average_precision(&preds, &gt, ClassId(0), t).unwrap();
            assert!(ap <= last + 1e-12, "AP rose from {last} to {ap} at {t}");
            last = ap;
        }
    }

    #[test]
    fn ap_depends_only_on_confidence_ranking() {
        let gt = vec![lf(
            "c",
            0,
            vec![(bb(0.0, 0.0, 50.0, 50.0, 1.0), 0), (bb(100.0, 0.0, 160.0, 60.0, 1.0), 0)],
        )];
        let build = |confs: [f64; 3]| {
            vec![lf(
                "c",
                0,
                vec![
                    (bb(3.0, 2.0, 52.0, 50.0, confs[0]), 0),
                    (bb(104.0, 0.0, 158.0, 52.0, confs[1]), 0),
                    (bb(300.0, 300.0, 360.0, 360.0, confs[2]), 0),
                ],
            )]
        };
        // Same ranking, different magnitudes.
        let a = build([0.9, 0.6, 0.3]);
        let b = build([0.81, 0.36, 0.09]);
        for &t in &standard_thresholds() {
            let ap_a = average_precision(&a, &gt, ClassId(0), t).unwrap();
            let ap_b = average_precision(&b, &gt, ClassId(0), t).unwrap();
            assert_eq!(ap_a, ap_b);
        }
    }
}
