//! Localization initialization: select frames whose anchor-part count
//! matches the caption length and assign caption classes to the anchors
//! left-to-right, producing the round-0 pseudo-dataset.
//!
//! An "anchor" is the part box that receives an instrument class label:
//! the clevis, or the tip for special classes. The anchor doubles as the
//! emitted tool box, which keeps the downstream location-consistency
//! gate geometrically attainable. A 3-instrument frame typically carries
//! up to 9 part boxes, so the frame-selection count applies to anchors,
//! not to arbitrary parts.
//!
//! Caption order is only trustworthy when the instruments are not
//! crossed, so the labels produced here are intentionally noisy; the
//! multi-round filter is the recovery mechanism, not this module.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{left_to_right_order, Box2D};
use crate::model::{
    ClassRegistry, ClipCaption, FrameDetections, LabelStage, PartKind, Provenance,
    PseudoLabelRecord, sort_records,
};

/// Which part kinds may anchor an instrument label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorRule {
    /// Clevis anchors, except instruments whose caption class is special
    /// anchor at the tip (mirroring the filter's dispatch).
    ClevisOrSpecialTip,
    /// Clevis anchors for every instrument.
    ClevisOnly,
}

impl Default for AnchorRule {
    fn default() -> Self {
        AnchorRule::ClevisOrSpecialTip
    }
}

impl std::str::FromStr for AnchorRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "clevis_or_special_tip" => Ok(AnchorRule::ClevisOrSpecialTip),
            "clevis_only" => Ok(AnchorRule::ClevisOnly),
            other => Err(Error::InvalidConfig(format!(
                "unknown anchor rule {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    /// Part detections below this confidence never anchor.
    pub min_part_confidence: f64,
    pub anchor_rule: AnchorRule,
    /// A frame is used only when its anchor count (and the clip's
    /// caption length) equal this.
    pub required_tool_count: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            min_part_confidence: 0.25,
            anchor_rule: AnchorRule::ClevisOrSpecialTip,
            required_tool_count: 3,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.min_part_confidence) {
            return Err(Error::InvalidConfig(format!(
                "min_part_confidence {} outside [0, 1]",
                self.min_part_confidence
            )));
        }
        if self.required_tool_count < 1 {
            return Err(Error::InvalidConfig(
                "required_tool_count must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn params(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            (
                "min_part_confidence".into(),
                format!("{}", self.min_part_confidence),
            ),
            ("anchor_rule".into(), format!("{:?}", self.anchor_rule)),
            (
                "required_tool_count".into(),
                format!("{}", self.required_tool_count),
            ),
        ])
    }
}

/// Why a frame produced no record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SkipReason {
    WrongAnchorCount,
    CaptionLengthMismatch,
    LowConfidenceOnly,
}

impl SkipReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            SkipReason::WrongAnchorCount => "wrong_anchor_count",
            SkipReason::CaptionLengthMismatch => "caption_length_mismatch",
            SkipReason::LowConfidenceOnly => "low_confidence_only",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BootstrapStats {
    pub frames_seen: u64,
    pub frames_accepted: u64,
    pub skips: BTreeMap<&'static str, u64>,
}

impl BootstrapStats {
    fn skip(&mut self, reason: SkipReason) {
        *self.skips.entry(reason.as_str()).or_insert(0) += 1;
    }

    /// Associative merge so corpus bootstrap can fan out per frame.
    pub fn merge(&mut self, other: &BootstrapStats) {
        self.frames_seen += other.frames_seen;
        self.frames_accepted += other.frames_accepted;
        for (reason, count) in &other.skips {
            *self.skips.entry(reason).or_insert(0) += count;
        }
    }

    pub fn rejections(&self) -> BTreeMap<String, u64> {
        self.skips
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect()
    }
}

/// Part kinds eligible to anchor under this caption: clevis always, tip
/// when the caption contains at least one special class (other kinds,
/// shafts in particular, never anchor).
fn eligible_kinds(
    caption: &ClipCaption,
    cfg: &BootstrapConfig,
    registry: &ClassRegistry,
) -> Result<Vec<PartKind>> {
    let mut kinds = vec![PartKind::Clevis];
    if cfg.anchor_rule == AnchorRule::ClevisOrSpecialTip {
        for &class in &caption.classes {
            if registry.is_special(class)? {
                kinds.push(PartKind::Tip);
                break;
            }
        }
    }
    Ok(kinds)
}

/// Candidate anchor boxes for this frame: parts of the caption's
/// eligible kinds at or above the confidence floor.
pub fn anchor_boxes(
    frame: &FrameDetections,
    caption: &ClipCaption,
    cfg: &BootstrapConfig,
    registry: &ClassRegistry,
) -> Result<Vec<Box2D>> {
    let kinds = eligible_kinds(caption, cfg, registry)?;
    Ok(frame
        .parts
        .iter()
        .filter(|p| kinds.contains(&p.kind) && p.bbox.confidence() >= cfg.min_part_confidence)
        .map(|p| p.bbox)
        .collect())
}

/// Attempts to turn one frame into a pseudo-label record. Returns the
/// skip reason instead when the frame is ineligible.
pub fn bootstrap_frame(
    frame: &FrameDetections,
    caption: &ClipCaption,
    cfg: &BootstrapConfig,
    registry: &ClassRegistry,
) -> Result<std::result::Result<PseudoLabelRecord, SkipReason>> {
    if caption.len() != cfg.required_tool_count {
        return Ok(Err(SkipReason::CaptionLengthMismatch));
    }
    let anchors = anchor_boxes(frame, caption, cfg, registry)?;
    if anchors.len() != cfg.required_tool_count {
        let kinds = eligible_kinds(caption, cfg, registry)?;
        let had_low_conf_candidates = frame.parts.iter().any(|p| kinds.contains(&p.kind));
        let reason = if anchors.is_empty() && had_low_conf_candidates {
            SkipReason::LowConfidenceOnly
        } else {
            SkipReason::WrongAnchorCount
        };
        return Ok(Err(reason));
    }
    // Left-to-right anchors zip with caption order; the stable sort makes
    // the pairing independent of detector output order.
    let order = left_to_right_order(&anchors);
    let entries = order
        .into_iter()
        .zip(&caption.classes)
        .map(|(idx, &class)| (anchors[idx], class))
        .collect();
    let record = PseudoLabelRecord::new(
        frame.clip_id.clone(),
        frame.frame_index,
        entries,
        Provenance {
            round: 0,
            stage: LabelStage::Bootstrap,
        },
    )?;
    Ok(Ok(record))
}

/// Bootstraps a whole corpus. Records come back in canonical
/// (clip_id, frame_index) order regardless of scheduling; statistics
/// merge associatively.
pub fn bootstrap_corpus(
    frames: &[FrameDetections],
    captions: &BTreeMap<String, ClipCaption>,
    cfg: &BootstrapConfig,
    registry: &ClassRegistry,
) -> Result<(Vec<PseudoLabelRecord>, BootstrapStats)> {
    cfg.validate()?;
    let per_frame: Vec<(Option<PseudoLabelRecord>, BootstrapStats)> = frames
        .par_iter()
        .map(|frame| {
            let caption = captions
                .get(&frame.clip_id)
                .ok_or_else(|| Error::MissingCaption(frame.clip_id.clone()))?;
            let mut stats = BootstrapStats {
                frames_seen: 1,
                ..BootstrapStats::default()
            };
            let record = match bootstrap_frame(frame, caption, cfg, registry)? {
                Ok(record) => {
                    stats.frames_accepted = 1;
                    Some(record)
                }
                Err(reason) => {
                    stats.skip(reason);
                    None
                }
            };
            Ok((record, stats))
        })
        .collect::<Result<_>>()?;

    let mut stats = BootstrapStats::default();
    let mut records = Vec::new();
    for (record, frame_stats) in per_frame {
        stats.merge(&frame_stats);
        records.extend(record);
    }
    sort_records(&mut records);
    Ok((records, stats))
}
