//! Shared domain vocabulary: tool classes, part kinds, frames, captions.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Box2D;

/// The three category-free instrument parts a parts detector reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartKind {
    Shaft,
    Clevis,
    Tip,
}

impl PartKind {
    pub const ALL: [PartKind; 3] = [PartKind::Shaft, PartKind::Clevis, PartKind::Tip];

    pub fn as_str(&self) -> &'static str {
        match self {
            PartKind::Shaft => "shaft",
            PartKind::Clevis => "clevis",
            PartKind::Tip => "tip",
        }
    }
}

impl fmt::Display for PartKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PartKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "shaft" => Ok(PartKind::Shaft),
            "clevis" => Ok(PartKind::Clevis),
            "tip" => Ok(PartKind::Tip),
            other => Err(Error::InvalidConfig(format!(
                "unknown part kind {other:?} (expected shaft, clevis or tip)"
            ))),
        }
    }
}

/// Tool classes whose location consistency is checked against the tip box
/// instead of the clevis box.
pub const SPECIAL_CLASSES: [&str; 5] = [
    "monopolar curved scissors",
    "tip-up fenestrated grasper",
    "suction irrigator",
    "stapler",
    "grasping retractor",
];

/// Index into a [`ClassRegistry`]. Ids are contiguous from 0 and double
/// as line numbers in the exported class-list file.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl ClassId {
    pub fn index(&self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolClass {
    pub name: String,
    pub id: ClassId,
    pub is_special: bool,
}

/// Case- and whitespace-insensitive canonical form used for all name
/// comparisons: captions from real systems vary in casing and padding.
fn normalize_name(name: &str) -> String {
    name.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn is_special_name(name: &str) -> bool {
    let norm = normalize_name(name);
    SPECIAL_CLASSES.iter().any(|s| *s == norm)
}

/// Immutable registry of tool classes. Ids follow input order so a
/// registry built from the same class list is always identical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassRegistry {
    classes: Vec<ToolClass>,
    #[serde(skip)]
    by_name: HashMap<String, ClassId>,
}

impl ClassRegistry {
    pub fn build<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Registry("class list is empty".into()));
        }
        let mut classes = Vec::with_capacity(names.len());
        let mut by_name = HashMap::with_capacity(names.len());
        for (idx, name) in names.iter().enumerate() {
            let name = name.as_ref().trim();
            if name.is_empty() {
                return Err(Error::Registry(format!("class name at index {idx} is empty")));
            }
            let norm = normalize_name(name);
            let id = ClassId(idx as u32);
            if by_name.insert(norm, id).is_some() {
                return Err(Error::Registry(format!(
                    "duplicate class name {name:?} (names are case-insensitive)"
                )));
            }
            classes.push(ToolClass {
                name: name.to_string(),
                id,
                is_special: is_special_name(name),
            });
        }
        Ok(ClassRegistry { classes, by_name })
    }

    /// Rebuilds the name index after deserialization.
    pub fn reindex(mut self) -> Self {
        self.by_name = self
            .classes
            .iter()
            .map(|c| (normalize_name(&c.name), c.id))
            .collect();
        self
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ToolClass> {
        self.classes.iter()
    }

    pub fn get(&self, id: ClassId) -> Result<&ToolClass> {
        self.classes
            .get(id.index())
            .ok_or_else(|| Error::UnknownClass(format!("id {id}")))
    }

    pub fn resolve(&self, name: &str) -> Result<ClassId> {
        self.by_name
            .get(&normalize_name(name))
            .copied()
            .ok_or_else(|| Error::UnknownClass(name.to_string()))
    }

    pub fn contains(&self, id: ClassId) -> bool {
        id.index() < self.classes.len()
    }

    pub fn is_special(&self, id: ClassId) -> Result<bool> {
        Ok(self.get(id)?.is_special)
    }

    pub fn name(&self, id: ClassId) -> Result<&str> {
        Ok(self.get(id)?.name.as_str())
    }

    /// Ids of all special classes present in the registry.
    pub fn special_ids(&self) -> Vec<ClassId> {
        self.classes
            .iter()
            .filter(|c| c.is_special)
            .map(|c| c.id)
            .collect()
    }
}

/// Ordered list of instrument class names present in a clip — the weak
/// supervision signal. The order is the mounting order, which matches
/// the spatial left-to-right order whenever the instruments are not
/// crossed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipCaption {
    pub clip_id: String,
    pub classes: Vec<ClassId>,
}

impl ClipCaption {
    pub fn new(clip_id: impl Into<String>, classes: Vec<ClassId>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "caption for clip {:?} lists no instruments",
                clip_id.into()
            )));
        }
        Ok(ClipCaption {
            clip_id: clip_id.into(),
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// A category-free part detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartDetection {
    pub bbox: Box2D,
    pub kind: PartKind,
}

/// A class-labeled tool detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolDetection {
    pub bbox: Box2D,
    pub class: ClassId,
}

/// Identifies one frame within the corpus.
pub type FrameKey = (String, u64);

/// One frame's two detection sets. `tools` is empty before the first
/// tools detector exists (round 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDetections {
    pub clip_id: String,
    pub frame_index: u64,
    pub parts: Vec<PartDetection>,
    #[serde(default)]
    pub tools: Vec<ToolDetection>,
}

impl FrameDetections {
    pub fn key(&self) -> FrameKey {
        (self.clip_id.clone(), self.frame_index)
    }
}

/// Which stage emitted a pseudo-label record. The full parameter set of
/// the stage is recorded once per round in the manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelStage {
    Bootstrap,
    Filtered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub round: u32,
    pub stage: LabelStage,
}

/// An accepted frame with its labeled tool boxes — the unit of the
/// emitted pseudo-dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelRecord {
    pub clip_id: String,
    pub frame_index: u64,
    pub entries: Vec<(Box2D, ClassId)>,
    pub provenance: Provenance,
}

impl PseudoLabelRecord {
    pub fn new(
        clip_id: impl Into<String>,
        frame_index: u64,
        entries: Vec<(Box2D, ClassId)>,
        provenance: Provenance,
    ) -> Result<Self> {
        let clip_id = clip_id.into();
        if entries.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "pseudo-label record for {clip_id}:{frame_index} has no entries"
            )));
        }
        Ok(PseudoLabelRecord {
            clip_id,
            frame_index,
            entries,
            provenance,
        })
    }

    pub fn key(&self) -> FrameKey {
        (self.clip_id.clone(), self.frame_index)
    }
}

/// Canonical (clip_id, frame_index) order used for every corpus-level
/// output so concurrent scheduling never changes results.
pub fn sort_records(records: &mut [PseudoLabelRecord]) {
    records.sort_by(|a, b| {
        a.clip_id
            .cmp(&b.clip_id)
            .then(a.frame_index.cmp(&b.frame_index))
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_assigns_ids_in_input_order() {
        let reg = ClassRegistry::build(&["needle driver", "monopolar curved scissors"]).unwrap();
        assert_eq!(reg.resolve("needle driver").unwrap(), ClassId(0));
        assert_eq!(reg.resolve("monopolar curved scissors").unwrap(), ClassId(1));
        assert!(!reg.get(ClassId(0)).unwrap().is_special);
        assert!(reg.get(ClassId(1)).unwrap().is_special);
    }

    #[test]
    fn empty_registry_rejected() {
        assert!(ClassRegistry::build::<&str>(&[]).is_err());
    }

    #[test]
    fn case_normalized_duplicate_rejected() {
        let err = ClassRegistry::build(&["stapler", "Stapler"]).unwrap_err();
        assert!(err.to_string().contains("Stapler"), "{err}");
    }

    #[test]
    fn special_membership_table() {
        // All five special classes, in odd casing/spacing, plus three
        // non-members.
        let cases = [
            ("Monopolar Curved Scissors", true),
            ("tip-up fenestrated grasper", true),
            ("  suction   irrigator ", true),
            ("STAPLER", true),
            ("grasping retractor", true),
            ("needle driver", false),
            ("cadiere forceps", false),
            ("force bipolar", false),
        ];
        let reg = ClassRegistry::build(&cases.map(|(n, _)| n)).unwrap();
        for (name, expected) in cases {
            let id = reg.resolve(name).unwrap();
            assert_eq!(reg.is_special(id).unwrap(), expected, "{name}");
        }
    }

    #[test]
    fn whitespace_insensitive_resolution() {
        let reg = ClassRegistry::build(&["needle driver"]).unwrap();
        assert_eq!(reg.resolve(" Needle  Driver ").unwrap(), ClassId(0));
        assert!(reg.resolve("laser lance").is_err());
    }

    #[test]
    fn registry_serde_round_trip() {
        let reg = ClassRegistry::build(&["needle driver", "stapler", "cadiere forceps"]).unwrap();
        let json = serde_json::to_string(&reg).unwrap();
        let back: ClassRegistry = serde_json::from_str(&json).unwrap();
        let back = back.reindex();
        assert_eq!(reg, back);
        assert_eq!(back.resolve("stapler").unwrap(), ClassId(1));
        assert!(back.is_special(ClassId(1)).unwrap());
    }

    #[test]
    fn caption_must_be_non_empty() {
        assert!(ClipCaption::new("clip1", vec![]).is_err());
        assert!(ClipCaption::new("clip1", vec![ClassId(0)]).is_ok());
    }

    #[test]
    fn record_must_be_non_empty() {
        let prov = Provenance {
            round: 0,
            stage: LabelStage::Bootstrap,
        };
        assert!(PseudoLabelRecord::new("c", 0, vec![], prov).is_err());
    }

    #[test]
    fn canonical_record_order() {
        let prov = Provenance {
            round: 0,
            stage: LabelStage::Bootstrap,
        };
        let b = Box2D::new(0.0, 0.0, 1.0, 1.0, 1.0).unwrap();
        let mk = |clip: &str, f: u64| {
            PseudoLabelRecord::new(clip, f, vec![(b, ClassId(0))], prov).unwrap()
        };
        let mut recs = vec![mk("b", 2), mk("a", 9), mk("b", 1), mk("a", 3)];
        sort_records(&mut recs);
        let keys: Vec<_> = recs.iter().map(|r| (r.clip_id.clone(), r.frame_index)).collect();
        assert_eq!(
            keys,
            vec![
                ("a".into(), 3),
                ("a".into(), 9),
                ("b".into(), 1),
                ("b".into(), 2)
            ]
        );
    }
}
