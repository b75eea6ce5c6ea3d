//! Per-frame label filtering by part/tool location consistency.
//!
//! Every labeled tool box must be corroborated by a part box of the
//! matching kind: tip for special classes, clevis otherwise. A part
//! corroborates a tool when their overlap strictly exceeds the threshold
//! `tau`. A frame survives only when the total match count equals the
//! number of tool boxes, i.e. every tool is corroborated and no tool is
//! contradicted.
//!
//! Two counting semantics are provided. `literal` counts every
//! corroborating part, so a tool overlapping two same-kind parts above
//! `tau` inflates the count and rejects an otherwise consistent frame.
//! `capped` counts at most one match per tool, which preserves the
//! "every tool corroborated" reading. `capped` is the default; both are
//! kept so the divergence can be measured.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::OverlapMetric;
use crate::model::{
    ClassRegistry, FrameDetections, LabelStage, PartDetection, PartKind, Provenance,
    PseudoLabelRecord, ToolDetection, sort_records,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    Capped,
    Literal,
}

impl Default for MatchMode {
    fn default() -> Self {
        MatchMode::Capped
    }
}

impl std::str::FromStr for MatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "capped" => Ok(MatchMode::Capped),
            "literal" => Ok(MatchMode::Literal),
            other => Err(Error::InvalidConfig(format!("unknown match mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Location-consistency threshold; overlap must strictly exceed it.
    pub tau: f64,
    pub overlap_metric: OverlapMetric,
    pub match_mode: MatchMode,
    /// Tool detections below this confidence are dropped before the
    /// consistency check.
    pub min_tool_confidence: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            tau: 0.8,
            overlap_metric: OverlapMetric::Iou,
            match_mode: MatchMode::Capped,
            min_tool_confidence: 0.25,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "tau {} outside (0, 1)",
                self.tau
            )));
        }
        if !(0.0..=1.0).contains(&self.min_tool_confidence) {
            return Err(Error::InvalidConfig(format!(
                "min_tool_confidence {} outside [0, 1]",
                self.min_tool_confidence
            )));
        }
        Ok(())
    }

    pub fn params(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("tau".into(), format!("{}", self.tau)),
            ("overlap_metric".into(), self.overlap_metric.to_string()),
            (
                "match_mode".into(),
                format!("{:?}", self.match_mode).to_lowercase(),
            ),
            (
                "min_tool_confidence".into(),
                format!("{}", self.min_tool_confidence),
            ),
        ])
    }
}

/// The part kind that must corroborate a tool of this class.
pub fn dispatch_kind(tool: &ToolDetection, registry: &ClassRegistry) -> Result<PartKind> {
    Ok(if registry.is_special(tool.class)? {
        PartKind::Tip
    } else {
        PartKind::Clevis
    })
}

/// Number of parts of the dispatch kind whose overlap with the tool box
/// strictly exceeds `tau`. `capped` mode clamps the result to 1.
pub fn match_count(
    tool: &ToolDetection,
    parts: &[PartDetection],
    cfg: &FilterConfig,
    registry: &ClassRegistry,
) -> Result<usize> {
    let kind = dispatch_kind(tool, registry)?;
    let count = parts
        .iter()
        .filter(|p| p.kind == kind)
        .filter(|p| cfg.overlap_metric.measure(&p.bbox, &tool.bbox) > cfg.tau)
        .count();
    Ok(match cfg.match_mode {
        MatchMode::Capped => count.min(1),
        MatchMode::Literal => count,
    })
}

/// Why a frame was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RejectReason {
    /// Match count differs from the number of (confident) tools.
    CountMismatch,
    /// The frame carried no tool predictions at all.
    NoTools,
    /// Tools existed but none reached the confidence floor.
    LowConfidenceEmpty,
}

impl RejectReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::CountMismatch => "count_mismatch",
            RejectReason::NoTools => "no_tools",
            RejectReason::LowConfidenceEmpty => "low_confidence_empty",
        }
    }
}

/// Applies the consistency check to one frame. The frame is accepted iff
/// the summed match count equals the number of confident tools and that
/// number is at least one; an accepted frame keeps all confident tool
/// boxes with their predicted labels.
pub fn filter_frame(
    frame: &FrameDetections,
    round: u32,
    cfg: &FilterConfig,
    registry: &ClassRegistry,
) -> Result<std::result::Result<PseudoLabelRecord, RejectReason>> {
    if frame.tools.is_empty() {
        return Ok(Err(RejectReason::NoTools));
    }
    let tools: Vec<&ToolDetection> = frame
        .tools
        .iter()
        .filter(|t| t.bbox.confidence() >= cfg.min_tool_confidence)
        .collect();
    if tools.is_empty() {
        return Ok(Err(RejectReason::LowConfidenceEmpty));
    }
    let mut select_cnt = 0usize;
    for tool in &tools {
        if !registry.contains(tool.class) {
            return Err(Error::UnknownClass(format!("id {}", tool.class)));
        }
        select_cnt += match_count(tool, &frame.parts, cfg, registry)?;
    }
    if select_cnt != tools.len() {
        return Ok(Err(RejectReason::CountMismatch));
    }
    let record = PseudoLabelRecord::new(
        frame.clip_id.clone(),
        frame.frame_index,
        tools.iter().map(|t| (t.bbox, t.class)).collect(),
        Provenance {
            round,
            stage: LabelStage::Filtered,
        },
    )?;
    Ok(Ok(record))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterStats {
    pub frames_seen: u64,
    pub frames_accepted: u64,
    pub rejections: BTreeMap<&'static str, u64>,
    /// Accepted box counts keyed by class name.
    pub per_class: BTreeMap<String, u64>,
}

impl FilterStats {
    fn reject(&mut self, reason: RejectReason) {
        *self.rejections.entry(reason.as_str()).or_insert(0) += 1;
    }

    pub fn merge(&mut self, other: &FilterStats) {
        self.frames_seen += other.frames_seen;
        self.frames_accepted += other.frames_accepted;
        for (reason, count) in &other.rejections {
            *self.rejections.entry(reason).or_insert(0) += count;
        }
        for (class, count) in &other.per_class {
            *self.per_class.entry(class.clone()).or_insert(0) += count;
        }
    }

    pub fn rejection_counts(&self) -> BTreeMap<String, u64> {
        self.rejections
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect()
    }
}

/// Filters a whole corpus. Output records are in canonical
/// (clip_id, frame_index) order regardless of scheduling.
pub fn filter_corpus(
    frames: &[FrameDetections],
    round: u32,
    cfg: &FilterConfig,
    registry: &ClassRegistry,
) -> Result<(Vec<PseudoLabelRecord>, FilterStats)> {
    cfg.validate()?;
    let per_frame: Vec<(Option<PseudoLabelRecord>, FilterStats)> = frames
        .par_iter()
        .map(|frame| {
            let mut stats = FilterStats {
                frames_seen: 1,
                ..FilterStats::default()
            };
            let record = match filter_frame(frame, round, cfg, registry)? {
                Ok(record) => {
                    stats.frames_accepted = 1;
                    for (_, class) in &record.entries {
                        *stats
                            .per_class
                            .entry(registry.name(*class)?.to_string())
                            .or_insert(0) += 1;
                    }
                    Some(record)
                }
                Err(reason) => {
                    stats.reject(reason);
                    None
                }
            };
            Ok((record, stats))
        })
        .collect::<Result<_>>()?;

    let mut stats = FilterStats::default();
    let mut records = Vec::new();
    for (record, frame_stats) in per_frame {
        stats.merge(&frame_stats);
        records.extend(record);
    }
    sort_records(&mut records);
    Ok((records, stats))
}
