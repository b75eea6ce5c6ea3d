//! Synthetic endoscopic-scene generator, noisy detector emulators, and a
//! trainable surrogate tools-detector.
//!
//! The simulator closes the loop that real deployments close with a
//! neural detector: scenes come with exact ground truth, the part
//! detector is emulated by jittering that ground truth, and the tools
//! detector is a surrogate whose accuracy is an explicit function of the
//! label purity of its training set. That last property is what makes
//! the multi-round improvement claim a deterministic, testable property
//! instead of a GPU experiment.
//!
//! Every random draw derives from (seed, stream salt, clip id, frame
//! index), so frames can be generated concurrently with results
//! identical to sequential generation, and re-running a round consumes
//! exactly the same noise as the first attempt.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Box2D;
use crate::model::{
    ClassId, ClassRegistry, ClipCaption, FrameKey, PartDetection, PartKind, PseudoLabelRecord,
    ToolDetection, SPECIAL_CLASSES,
};

// ---------------------------------------------------------------------------
// Deterministic stream derivation

const SALT_CLIP: u64 = 0x01;
const SALT_FRAME: u64 = 0x02;
const SALT_PARTS: u64 = 0x03;
const SALT_TOOLS: u64 = 0x04;
const SALT_SURROGATE: u64 = 0x05;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fold(state: u64, value: u64) -> u64 {
    splitmix(state ^ value)
}

fn fold_str(mut state: u64, s: &str) -> u64 {
    for chunk in s.as_bytes().chunks(8) {
        let mut word = [0u8; 8];
        word[..chunk.len()].copy_from_slice(chunk);
        state = fold(state, u64::from_le_bytes(word));
    }
    fold(state, s.len() as u64)
}

/// Counter-based stream for one frame of one clip.
fn frame_stream(seed: u64, salt: u64, clip_id: &str, frame_index: u64) -> ChaCha8Rng {
    let state = fold(fold_str(fold(splitmix(seed), salt), clip_id), frame_index);
    ChaCha8Rng::seed_from_u64(state)
}

fn clip_stream(seed: u64, clip_index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(fold(fold(splitmix(seed), SALT_CLIP), clip_index))
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    // Box-Muller; always consumes two uniforms so streams stay aligned.
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen::<f64>();
    sigma * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> u32 {
    if lambda <= 0.0 {
        return 0;
    }
    let threshold = (-lambda).exp();
    let mut product: f64 = rng.gen();
    let mut count = 0u32;
    while product > threshold {
        product *= rng.gen::<f64>();
        count += 1;
    }
    count
}

// ---------------------------------------------------------------------------
// Scene specification and ground truth

/// Distribution over instruments-per-clip counts {1, 2, 3}, as weights.
pub type ToolCountWeights = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub image_size: (u32, u32),
    /// Weights over clips carrying 1, 2 or 3 instruments.
    pub tools_per_frame: ToolCountWeights,
    /// Per-frame probability that the spatial order differs from the
    /// caption order. Three-way crossings occur with the square of this,
    /// always well below the pairwise rate.
    pub crossing_prob: f64,
    /// Probability that a caption slot is drawn from the special-class
    /// pool instead of the regular pool.
    pub special_fraction: f64,
    pub frames_per_clip: u32,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            image_size: (1280, 720),
            tools_per_frame: [0.0, 0.0, 1.0],
            crossing_prob: 0.2,
            special_fraction: 0.0,
            frames_per_clip: 25,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.image_size;
        if w < 64 || h < 64 {
            return Err(Error::InvalidConfig(format!(
                "image size {w}x{h} is too small to place instruments"
            )));
        }
        if self.tools_per_frame.iter().any(|&w| w < 0.0)
            || self.tools_per_frame.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::InvalidConfig(
                "tools_per_frame weights must be non-negative and sum to a positive value".into(),
            ));
        }
        for (name, p) in [
            ("crossing_prob", self.crossing_prob),
            ("special_fraction", self.special_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} {p} outside [0, 1]")));
            }
        }
        if self.frames_per_clip == 0 {
            return Err(Error::InvalidConfig("frames_per_clip must be positive".into()));
        }
        Ok(())
    }
}

/// One simulated instrument: its true class, true tool box and true part
/// boxes. The tip and clevis sit at the distal end, the shaft extends
/// proximally; the tool box coincides with the anchor part (tip for
/// special classes, clevis otherwise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtInstrument {
    pub class: ClassId,
    /// Index of this instrument in the clip caption.
    pub caption_pos: usize,
    pub tool_box: Box2D,
    pub shaft: Box2D,
    pub clevis: Box2D,
    pub tip: Option<Box2D>,
}

/// Ground truth for one frame; instruments are stored in spatial
/// left-to-right order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFrame {
    pub clip_id: String,
    pub frame_index: u64,
    /// True when the spatial order differs from the caption order.
    pub crossed: bool,
    pub instruments: Vec<GtInstrument>,
}

impl GroundTruthFrame {
    pub fn key(&self) -> FrameKey {
        (self.clip_id.clone(), self.frame_index)
    }
}

/// Class names used when no external class list is supplied. The five
/// special classes are included so the tip dispatch path is reachable.
pub fn default_class_names() -> Vec<&'static str> {
    let mut names = vec![
        "needle driver",
        "cadiere forceps",
        "bipolar forceps",
        "prograsp forceps",
        "vessel sealer",
        "clip applier",
        "cautery hook",
    ];
    names.extend(SPECIAL_CLASSES);
    names
}

pub fn default_registry() -> ClassRegistry {
    ClassRegistry::build(&default_class_names()).expect("default class list is valid")
}

fn clamp_box(x0: f64, y0: f64, x1: f64, y1: f64, w: f64, h: f64, conf: f64) -> Result<Box2D> {
    let (mut x0, mut x1) = (x0.min(x1), x0.max(x1));
    let (mut y0, mut y1) = (y0.min(y1), y0.max(y1));
    x0 = x0.max(0.0);
    y0 = y0.max(0.0);
    x1 = x1.min(w);
    y1 = y1.min(h);
    if x1 - x0 < 2.0 {
        let c = ((x0 + x1) / 2.0).clamp(1.0, w - 1.0);
        x0 = c - 1.0;
        x1 = c + 1.0;
    }
    if y1 - y0 < 2.0 {
        let c = ((y0 + y1) / 2.0).clamp(1.0, h - 1.0);
        y0 = c - 1.0;
        y1 = c + 1.0;
    }
    Box2D::new(x0, y0, x1, y1, conf)
}

fn sample_weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (idx, &w) in weights.iter().enumerate() {
        u -= w;
        if u < 0.0 {
            return idx;
        }
    }
    weights.len() - 1
}

/// Spatial permutation for one frame: identity when uncrossed; a swap of
/// an adjacent pair when crossed; for three instruments, a rotation
/// displacing all three with conditional probability `crossing_prob`
/// (so three-way crossings occur at the square of the pairwise rate).
fn crossing_permutation(rng: &mut ChaCha8Rng, n: usize, crossing_prob: f64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    if n < 2 {
        return perm;
    }
    let crossed = rng.gen::<f64>() < crossing_prob;
    if !crossed {
        return perm;
    }
    if n == 2 {
        perm.swap(0, 1);
        return perm;
    }
    let three_way = rng.gen::<f64>() < crossing_prob;
    if three_way {
        if rng.gen::<bool>() {
            perm = vec![1, 2, 0];
        } else {
            perm = vec![2, 0, 1];
        }
    } else {
        let pair = usize::from(rng.gen::<bool>());
        perm.swap(pair, pair + 1);
    }
    perm
}

/// Generates a deterministic corpus: ground-truth frames (grouped into
/// clips of `frames_per_clip`) plus the per-clip captions. Caption order
/// equals spatial left-to-right order exactly in uncrossed frames.
pub fn generate_corpus(
    spec: &SceneSpec,
    n_frames: u64,
    registry: &ClassRegistry,
) -> Result<(Vec<GroundTruthFrame>, BTreeMap<String, ClipCaption>)> {
    spec.validate()?;
    if n_frames == 0 {
        return Err(Error::InvalidConfig("n_frames must be at least 1".into()));
    }
    let special_pool: Vec<ClassId> = registry.special_ids();
    let regular_pool: Vec<ClassId> = registry
        .iter()
        .filter(|c| !c.is_special)
        .map(|c| c.id)
        .collect();

    let frames_per_clip = u64::from(spec.frames_per_clip);
    let n_clips = n_frames.div_ceil(frames_per_clip);

    // Clip-level draws: instrument count and caption classes.
    let mut captions = BTreeMap::new();
    let mut clip_meta: Vec<(String, Vec<ClassId>)> = Vec::with_capacity(n_clips as usize);
    for clip_idx in 0..n_clips {
        let mut rng = clip_stream(spec.seed, clip_idx);
        let count = (sample_weighted(&mut rng, &spec.tools_per_frame) + 1).min(registry.len());
        let mut chosen: Vec<ClassId> = Vec::with_capacity(count);
        for _ in 0..count {
            let want_special = !special_pool.is_empty()
                && (regular_pool.is_empty() || rng.gen::<f64>() < spec.special_fraction);
            let preferred = if want_special { &special_pool } else { &regular_pool };
            let mut available: Vec<ClassId> = preferred
                .iter()
                .copied()
                .filter(|c| !chosen.contains(c))
                .collect();
            if available.is_empty() {
                available = registry
                    .iter()
                    .map(|c| c.id)
                    .filter(|c| !chosen.contains(c))
                    .collect();
            }
            chosen.push(available[rng.gen_range(0..available.len())]);
        }
        let clip_id = format!("clip{clip_idx:04}");
        captions.insert(
            clip_id.clone(),
            ClipCaption::new(clip_id.clone(), chosen.clone())?,
        );
        clip_meta.push((clip_id, chosen));
    }

    let (w, h) = (f64::from(spec.image_size.0), f64::from(spec.image_size.1));
    let frames: Vec<GroundTruthFrame> = (0..n_frames)
        .into_par_iter()
        .map(|global| {
            let clip_idx = (global / frames_per_clip) as usize;
            let frame_index = global % frames_per_clip;
            let (clip_id, classes) = &clip_meta[clip_idx];
            let mut rng = frame_stream(spec.seed, SALT_FRAME, clip_id, frame_index);
            let n = classes.len();
            let perm = crossing_permutation(&mut rng, n, spec.crossing_prob);
            let crossed = perm.iter().enumerate().any(|(j, &p)| j != p);

            let mut instruments = Vec::with_capacity(n);
            for (slot, &caption_pos) in perm.iter().enumerate() {
                let class = classes[caption_pos];
                let slot_center = w * (slot as f64 + 1.0) / (n as f64 + 1.0);
                let xc = slot_center + rng.gen_range(-20.0..20.0);
                let yc = h * rng.gen_range(0.40..0.70);
                let size = rng.gen_range(56.0..88.0);
                let half = size / 2.0;

                let clevis = clamp_box(xc - half, yc - half, xc + half, yc + half, w, h, 1.0)?;
                // Tip sits distal of (below) the clevis, overlapping it
                // but well under the consistency threshold.
                let tip_shift = 0.35 * size;
                let tip = clamp_box(
                    xc - half,
                    yc - half + tip_shift,
                    xc + half,
                    yc + half + tip_shift,
                    w,
                    h,
                    1.0,
                )?;
                let shaft_w = rng.gen_range(22.0..38.0);
                let shaft_len = rng.gen_range(120.0..220.0);
                let lean = rng.gen_range(-10.0..10.0);
                let shaft = clamp_box(
                    xc + lean - shaft_w / 2.0,
                    yc - half - shaft_len,
                    xc + lean + shaft_w / 2.0,
                    yc,
                    w,
                    h,
                    1.0,
                )?;
                let is_special = registry.is_special(class)?;
                let tool_box = if is_special { tip } else { clevis };
                instruments.push(GtInstrument {
                    class,
                    caption_pos,
                    tool_box,
                    shaft,
                    clevis,
                    tip: Some(tip),
                });
            }
            Ok(GroundTruthFrame {
                clip_id: clip_id.clone(),
                frame_index,
                crossed,
                instruments,
            })
        })
        .collect::<Result<_>>()?;

    Ok((frames, captions))
}

// ---------------------------------------------------------------------------
// Detector emulation

/// Noise model for an emulated detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorNoise {
    /// Standard deviation, in pixels, of the independent Gaussian shift
    /// applied to each box edge.
    pub box_jitter_sigma: f64,
    pub miss_rate: f64,
    /// Expected number of spurious detections per frame.
    pub false_positive_rate: f64,
    /// Optional row-stochastic label confusion over tool classes;
    /// identity when absent. Only meaningful for tools emulation.
    pub label_confusion: Option<Vec<Vec<f64>>>,
}

impl Default for DetectorNoise {
    fn default() -> Self {
        DetectorNoise {
            box_jitter_sigma: 2.0,
            miss_rate: 0.05,
            false_positive_rate: 0.5,
            label_confusion: None,
        }
    }
}

impl DetectorNoise {
    pub fn noiseless() -> Self {
        DetectorNoise {
            box_jitter_sigma: 0.0,
            miss_rate: 0.0,
            false_positive_rate: 0.0,
            label_confusion: None,
        }
    }

    pub fn validate(&self, n_classes: usize) -> Result<()> {
        if self.box_jitter_sigma < 0.0 {
            return Err(Error::InvalidConfig("box_jitter_sigma must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.miss_rate) {
            return Err(Error::InvalidConfig(format!(
                "miss_rate {} outside [0, 1]",
                self.miss_rate
            )));
        }
        if self.false_positive_rate < 0.0 {
            return Err(Error::InvalidConfig(
                "false_positive_rate must be >= 0".into(),
            ));
        }
        if let Some(rows) = &self.label_confusion {
            validate_confusion(rows, n_classes)?;
        }
        Ok(())
    }
}

fn validate_confusion(rows: &[Vec<f64>], n_classes: usize) -> Result<()> {
    if rows.len() != n_classes {
        return Err(Error::InvalidConfig(format!(
            "confusion matrix has {} rows for {} classes",
            rows.len(),
            n_classes
        )));
    }
    for (idx, row) in rows.iter().enumerate() {
        if row.len() != n_classes {
            return Err(Error::InvalidConfig(format!(
                "confusion row {idx} has {} entries for {} classes",
                row.len(),
                n_classes
            )));
        }
        if row.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "confusion row {idx} has a negative entry"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "confusion row {idx} sums to {sum}, expected 1 within 1e-9"
            )));
        }
    }
    Ok(())
}

/// Jitters a box and reports the mean absolute edge displacement.
fn jitter_box(b: &Box2D, sigma: f64, w: f64, h: f64, rng: &mut ChaCha8Rng) -> Result<(Box2D, f64)> {
    let d: [f64; 4] = [
        gaussian(rng, sigma),
        gaussian(rng, sigma),
        gaussian(rng, sigma),
        gaussian(rng, sigma),
    ];
    let magnitude = d.iter().map(|v| v.abs()).sum::<f64>() / 4.0;
    let jittered = clamp_box(
        b.x_min() + d[0],
        b.y_min() + d[1],
        b.x_max() + d[2],
        b.y_max() + d[3],
        w,
        h,
        1.0,
    )?;
    Ok((jittered, magnitude))
}

/// Confidence as a decreasing function of jitter magnitude; exactly 1.0
/// for an unperturbed box.
fn jitter_confidence(magnitude: f64, sigma: f64) -> f64 {
    (1.0 - magnitude / (4.0 * sigma + 4.0)).clamp(0.05, 1.0)
}

/// Draws a label from a confusion row with the true class's own mass
/// first in the inverse CDF, then the remaining classes in ascending id
/// order. Under common random numbers a draw that is correct stays
/// correct whenever the row's diagonal grows.
fn sample_label(rng: &mut ChaCha8Rng, row: &[f64], true_class: usize) -> usize {
    let u: f64 = rng.gen();
    if u < row[true_class] {
        return true_class;
    }
    let mut acc = row[true_class];
    for (j, &mass) in row.iter().enumerate() {
        if j == true_class {
            continue;
        }
        acc += mass;
        if u < acc {
            return j;
        }
    }
    true_class
}

/// Emulates the category-free parts detector on one ground-truth frame:
/// jitters true part boxes, drops them at `miss_rate`, and injects
/// uniform false positives.
pub fn emulate_parts_detector(
    gt: &GroundTruthFrame,
    noise: &DetectorNoise,
    seed: u64,
) -> Result<Vec<PartDetection>> {
    let mut rng = frame_stream(seed, SALT_PARTS, &gt.clip_id, gt.frame_index);
    let (w, h) = frame_extent(gt);
    let mut parts = Vec::new();
    for inst in &gt.instruments {
        let true_parts = [
            (PartKind::Shaft, Some(inst.shaft)),
            (PartKind::Clevis, Some(inst.clevis)),
            (PartKind::Tip, inst.tip),
        ];
        for (kind, bbox) in true_parts {
            let Some(bbox) = bbox else { continue };
            let missed = rng.gen::<f64>() < noise.miss_rate;
            let (jittered, magnitude) = jitter_box(&bbox, noise.box_jitter_sigma, w, h, &mut rng)?;
            if missed {
                continue;
            }
            let conf = jitter_confidence(magnitude, noise.box_jitter_sigma);
            parts.push(PartDetection {
                bbox: jittered.with_confidence(conf)?,
                kind,
            });
        }
    }
    for _ in 0..poisson(&mut rng, noise.false_positive_rate) {
        let kind = PartKind::ALL[rng.gen_range(0..3)];
        parts.push(PartDetection {
            bbox: random_box(&mut rng, w, h)?,
            kind,
        });
    }
    Ok(parts)
}

/// Emulates a class-labeled tools detector directly from ground truth —
/// the stand-in used to exercise the filter and the file-backed round
/// interface without a surrogate training step.
pub fn emulate_tools_detector(
    gt: &GroundTruthFrame,
    noise: &DetectorNoise,
    registry: &ClassRegistry,
    seed: u64,
) -> Result<Vec<ToolDetection>> {
    noise.validate(registry.len())?;
    let mut rng = frame_stream(seed, SALT_TOOLS, &gt.clip_id, gt.frame_index);
    let (w, h) = frame_extent(gt);
    let mut tools = Vec::new();
    for inst in &gt.instruments {
        let missed = rng.gen::<f64>() < noise.miss_rate;
        let (jittered, magnitude) =
            jitter_box(&inst.tool_box, noise.box_jitter_sigma, w, h, &mut rng)?;
        let label = match &noise.label_confusion {
            Some(rows) => ClassId(
                sample_label(&mut rng, &rows[inst.class.index()], inst.class.index()) as u32,
            ),
            None => inst.class,
        };
        if missed {
            continue;
        }
        let conf = jitter_confidence(magnitude, noise.box_jitter_sigma);
        tools.push(ToolDetection {
            bbox: jittered.with_confidence(conf)?,
            class: label,
        });
    }
    for _ in 0..poisson(&mut rng, noise.false_positive_rate) {
        tools.push(ToolDetection {
            bbox: random_box(&mut rng, w, h)?,
            class: ClassId(rng.gen_range(0..registry.len()) as u32),
        });
    }
    Ok(tools)
}

fn frame_extent(gt: &GroundTruthFrame) -> (f64, f64) {
    // Frames carry no explicit size; bound by the default scene extent
    // or the furthest ground-truth corner, whichever is larger.
    let mut w: f64 = 1280.0;
    let mut h: f64 = 720.0;
    for inst in &gt.instruments {
        for b in [Some(inst.tool_box), Some(inst.shaft), Some(inst.clevis), inst.tip]
            .into_iter()
            .flatten()
        {
            w = w.max(b.x_max());
            h = h.max(b.y_max());
        }
    }
    (w, h)
}

fn random_box(rng: &mut ChaCha8Rng, w: f64, h: f64) -> Result<Box2D> {
    let bw = rng.gen_range(30.0..90.0);
    let bh = rng.gen_range(30.0..90.0);
    let x0 = rng.gen_range(0.0..(w - bw));
    let y0 = rng.gen_range(0.0..(h - bh));
    let conf = rng.gen_range(0.05..0.75);
    Box2D::new(x0, y0, x0 + bw, y0 + bh, conf)
}

// ---------------------------------------------------------------------------
// Surrogate tools detector

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    /// Fixed localization jitter of emitted boxes, in pixels.
    pub loc_jitter_sigma: f64,
    /// Exponent applied to the fitted per-class label distribution
    /// before sampling. 1.0 reproduces the training-set label mix
    /// verbatim; values above 1.0 model the label-noise absorption of a
    /// trained detector, which concentrates predictions on each class's
    /// majority label.
    pub label_sharpen: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            loc_jitter_sigma: 1.5,
            label_sharpen: 2.0,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.loc_jitter_sigma < 0.0 {
            return Err(Error::InvalidConfig("loc_jitter_sigma must be >= 0".into()));
        }
        if self.label_sharpen < 1.0 {
            return Err(Error::InvalidConfig(
                "label_sharpen must be at least 1.0".into(),
            ));
        }
        Ok(())
    }
}

/// Confusion-model tools detector. `empirical` holds the fitted
/// per-true-class label distributions; `sampling` holds the sharpened
/// rows actually drawn from at inference.
#[derive(Debug, Clone)]
pub struct SurrogateDetector {
    empirical: Vec<Vec<f64>>,
    sampling: Vec<Vec<f64>>,
    cfg: SurrogateConfig,
    seed: u64,
}

fn sharpen_row(row: &[f64], exponent: f64) -> Vec<f64> {
    let powered: Vec<f64> = row.iter().map(|&p| p.powf(exponent)).collect();
    let total: f64 = powered.iter().sum();
    if total <= 0.0 {
        return row.to_vec();
    }
    powered.iter().map(|&p| p / total).collect()
}

impl SurrogateDetector {
    /// Builds a surrogate directly from confusion rows (row-stochastic,
    /// one row per class).
    pub fn with_confusion(rows: Vec<Vec<f64>>, cfg: SurrogateConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        validate_confusion(&rows, rows.len())?;
        let sampling = rows.iter().map(|r| sharpen_row(r, cfg.label_sharpen)).collect();
        Ok(SurrogateDetector {
            empirical: rows,
            sampling,
            cfg,
            seed,
        })
    }

    /// Fitted label distribution for a true class.
    pub fn empirical_row(&self, class: ClassId) -> &[f64] {
        &self.empirical[class.index()]
    }

    /// Emits one labeled, jittered box per true instrument. Draws are
    /// keyed by (seed, clip, frame, instrument) only, so successive
    /// rounds consume identical noise for the same frame.
    pub fn infer(&self, gt: &GroundTruthFrame) -> Result<Vec<ToolDetection>> {
        let (w, h) = frame_extent(gt);
        let mut tools = Vec::with_capacity(gt.instruments.len());
        let mut rng = frame_stream(self.seed, SALT_SURROGATE, &gt.clip_id, gt.frame_index);
        for inst in &gt.instruments {
            let (bbox, magnitude) =
                jitter_box(&inst.tool_box, self.cfg.loc_jitter_sigma, w, h, &mut rng)?;
            let label =
                sample_label(&mut rng, &self.sampling[inst.class.index()], inst.class.index());
            let conf = jitter_confidence(magnitude, self.cfg.loc_jitter_sigma);
            tools.push(ToolDetection {
                bbox: bbox.with_confidence(conf)?,
                class: ClassId(label as u32),
            });
        }
        Ok(tools)
    }
}

/// Index from frame key to ground truth, for confusion fitting and
/// evaluation.
pub struct GtIndex<'a> {
    by_key: HashMap<FrameKey, &'a GroundTruthFrame>,
}

impl<'a> GtIndex<'a> {
    pub fn build(frames: &'a [GroundTruthFrame]) -> Self {
        GtIndex {
            by_key: frames.iter().map(|f| (f.key(), f)).collect(),
        }
    }

    pub fn get(&self, key: &FrameKey) -> Option<&'a GroundTruthFrame> {
        self.by_key.get(key).copied()
    }
}

/// Fits the surrogate's per-class label distribution from a
/// pseudo-dataset: each pseudo box is matched to the ground-truth
/// instrument of its frame with the highest tool-box overlap above IOU
/// 0.5, and the matched (true class, assigned label) pairs are counted.
/// Classes with no matched instances fall back to a uniform row — the
/// surrogate has learned nothing about them and guesses.
pub fn surrogate_train(
    dataset: &[PseudoLabelRecord],
    gt: &GtIndex<'_>,
    registry: &ClassRegistry,
    cfg: SurrogateConfig,
    seed: u64,
) -> Result<SurrogateDetector> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Training("training dataset is empty".into()));
    }
    let n = registry.len();
    let mut counts = vec![vec![0u64; n]; n];
    let mut matched_total = 0u64;
    for record in dataset {
        let Some(frame) = gt.get(&record.key()) else {
            continue;
        };
        for (bbox, label) in &record.entries {
            if !registry.contains(*label) {
                return Err(Error::UnknownClass(format!("id {label}")));
            }
            let best = frame
                .instruments
                .iter()
                .map(|inst| (crate::geometry::iou(bbox, &inst.tool_box), inst.class))
                .max_by(|a, b| a.0.total_cmp(&b.0));
            if let Some((overlap, true_class)) = best {
                if overlap > 0.5 {
                    counts[true_class.index()][label.index()] += 1;
                    matched_total += 1;
                }
            }
        }
    }
    if matched_total == 0 {
        return Err(Error::Training(
            "no pseudo-label box matched a ground-truth instrument (IOU > 0.5)".into(),
        ));
    }
    let empirical: Vec<Vec<f64>> = counts
        .iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                vec![1.0 / n as f64; n]
            } else {
                row.iter().map(|&c| c as f64 / total as f64).collect()
            }
        })
        .collect();
    let sampling = empirical
        .iter()
        .map(|r| sharpen_row(r, cfg.label_sharpen))
        .collect();
    Ok(SurrogateDetector {
        empirical,
        sampling,
        cfg,
        seed,
    })
}

// ---------------------------------------------------------------------------
// Ground-truth file format (JSONL, one frame per line)

#[derive(Serialize, Deserialize)]
struct JsonGtInstrument {
    class: String,
    caption_pos: usize,
    tool_box: [f64; 4],
    shaft: [f64; 4],
    clevis: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tip: Option<[f64; 4]>,
}

#[derive(Serialize, Deserialize)]
struct JsonGtFrame {
    clip_id: String,
    frame: u64,
    crossed: bool,
    instruments: Vec<JsonGtInstrument>,
}

pub fn write_ground_truth(
    path: impl AsRef<Path>,
    frames: &[GroundTruthFrame],
    registry: &ClassRegistry,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for frame in frames {
        let mut instruments = Vec::with_capacity(frame.instruments.len());
        for inst in &frame.instruments {
            instruments.push(JsonGtInstrument {
                class: registry.name(inst.class)?.to_string(),
                caption_pos: inst.caption_pos,
                tool_box: inst.tool_box.corners(),
                shaft: inst.shaft.corners(),
                clevis: inst.clevis.corners(),
                tip: inst.tip.map(|b| b.corners()),
            });
        }
        let line = JsonGtFrame {
            clip_id: frame.clip_id.clone(),
            frame: frame.frame_index,
            crossed: frame.crossed,
            instruments,
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_ground_truth(
    path: impl AsRef<Path>,
    registry: &ClassRegistry,
) -> Result<Vec<GroundTruthFrame>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut frames = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let parsed: JsonGtFrame =
            serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let mut instruments = Vec::with_capacity(parsed.instruments.len());
        for inst in parsed.instruments {
            let unbox = |c: [f64; 4]| Box2D::new(c[0], c[1], c[2], c[3], 1.0);
            instruments.push(GtInstrument {
                class: registry
                    .resolve(&inst.class)
                    .map_err(|e| parse_err(e.to_string()))?,
                caption_pos: inst.caption_pos,
                tool_box: unbox(inst.tool_box).map_err(|e| parse_err(e.to_string()))?,
                shaft: unbox(inst.shaft).map_err(|e| parse_err(e.to_string()))?,
                clevis: unbox(inst.clevis).map_err(|e| parse_err(e.to_string()))?,
                tip: match inst.tip {
                    Some(c) => Some(unbox(c).map_err(|e| parse_err(e.to_string()))?),
                    None => None,
                },
            });
        }
        frames.push(GroundTruthFrame {
            clip_id: parsed.clip_id,
            frame_index: parsed.frame,
            crossed: parsed.crossed,
            instruments,
        });
    }
    Ok(frames)
}
