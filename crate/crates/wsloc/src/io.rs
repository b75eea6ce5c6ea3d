//! File formats: detection streams in, pseudo-label datasets and round
//! manifests out.
//!
//! - Detections travel as line-delimited JSON, one frame per line, so
//!   large clip inventories stream without loading everything in memory.
//! - Captions are a CSV of `clip_id, tool_1, tool_2, ...` with empty
//!   trailing cells allowed.
//! - Pseudo-datasets use the normalized center-size annotation text
//!   convention (`class cx cy w h`, one object per line, six decimals)
//!   plus a `classes.txt` whose line number is the class id.
//! - Manifests are pretty-printed JSON carrying a digest of their own
//!   canonical serialization so hand edits are detected on read.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{Box2D, OverlapMetric};
use crate::model::{
    ClassId, ClassRegistry, ClipCaption, FrameDetections, LabelStage, PartDetection, PartKind,
    Provenance, PseudoLabelRecord, ToolDetection,
};

// ---------------------------------------------------------------------------
// Detections JSONL

#[derive(Serialize, Deserialize)]
struct JsonBoxEntry {
    #[serde(skip_serializing_if = "Option::is_none")]
    kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    class: Option<String>,
    #[serde(rename = "box")]
    corners: [f64; 4],
    conf: f64,
}

#[derive(Serialize, Deserialize)]
struct JsonFrame {
    clip_id: String,
    frame: u64,
    parts: Vec<JsonBoxEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tools: Option<Vec<JsonBoxEntry>>,
}

fn parse_box(corners: [f64; 4], conf: f64) -> Result<Box2D> {
    Box2D::new(corners[0], corners[1], corners[2], corners[3], conf)
}

fn frame_from_json(frame: JsonFrame, registry: &ClassRegistry) -> Result<FrameDetections> {
    let mut parts = Vec::with_capacity(frame.parts.len());
    for entry in frame.parts {
        let kind: PartKind = entry
            .kind
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig("part entry is missing \"kind\"".into()))?
            .parse()?;
        parts.push(PartDetection {
            bbox: parse_box(entry.corners, entry.conf)?,
            kind,
        });
    }
    let mut tools = Vec::new();
    if let Some(tool_entries) = frame.tools {
        tools.reserve(tool_entries.len());
        for entry in tool_entries {
            let name = entry
                .class
                .as_deref()
                .ok_or_else(|| Error::InvalidConfig("tool entry is missing \"class\"".into()))?;
            tools.push(ToolDetection {
                bbox: parse_box(entry.corners, entry.conf)?,
                class: registry.resolve(name)?,
            });
        }
    }
    Ok(FrameDetections {
        clip_id: frame.clip_id,
        frame_index: frame.frame,
        parts,
        tools,
    })
}

fn frame_to_json(frame: &FrameDetections, registry: &ClassRegistry) -> Result<JsonFrame> {
    let parts = frame
        .parts
        .iter()
        .map(|p| JsonBoxEntry {
            kind: Some(p.kind.as_str().to_string()),
            class: None,
            corners: p.bbox.corners(),
            conf: p.bbox.confidence(),
        })
        .collect();
    let tools = if frame.tools.is_empty() {
        None
    } else {
        let mut entries = Vec::with_capacity(frame.tools.len());
        for t in &frame.tools {
            entries.push(JsonBoxEntry {
                kind: None,
                class: Some(registry.name(t.class)?.to_string()),
                corners: t.bbox.corners(),
                conf: t.bbox.confidence(),
            });
        }
        Some(entries)
    };
    Ok(JsonFrame {
        clip_id: frame.clip_id.clone(),
        frame: frame.frame_index,
        parts,
        tools,
    })
}

/// Streaming reader over a detections JSONL file. Yields frames in file
/// order; malformed lines surface as errors carrying the line number.
pub struct DetectionReader<'a> {
    path: PathBuf,
    lines: std::io::Lines<BufReader<fs::File>>,
    registry: &'a ClassRegistry,
    line_no: usize,
}

impl<'a> DetectionReader<'a> {
    pub fn open(path: impl AsRef<Path>, registry: &'a ClassRegistry) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(DetectionReader {
            path,
            lines: BufReader::new(file).lines(),
            registry,
            line_no: 0,
        })
    }
}

impl Iterator for DetectionReader<'_> {
    type Item = Result<FrameDetections>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.line_no += 1;
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            };
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<JsonFrame>(&line)
                .map_err(Error::from)
                .and_then(|f| frame_from_json(f, self.registry));
            return Some(parsed.map_err(|e| Error::Parse {
                path: self.path.clone(),
                line: self.line_no,
                message: e.to_string(),
            }));
        }
    }
}

/// Reads a whole detections file into memory.
pub fn read_detections(path: impl AsRef<Path>, registry: &ClassRegistry) -> Result<Vec<FrameDetections>> {
    DetectionReader::open(path, registry)?.collect()
}

pub fn write_detections(
    path: impl AsRef<Path>,
    frames: &[FrameDetections],
    registry: &ClassRegistry,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for frame in frames {
        let json = frame_to_json(frame, registry)?;
        out.push_str(&serde_json::to_string(&json)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Captions CSV

/// Reads a captions CSV (`clip_id, tool_1..tool_k`). Column order is the
/// caption order; empty tail cells are ignored.
pub fn read_captions(
    path: impl AsRef<Path>,
    registry: &ClassRegistry,
) -> Result<BTreeMap<String, ClipCaption>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;

    let mut captions = BTreeMap::new();
    for (idx, row) in reader.records().enumerate() {
        let line = idx + 1;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let row = row.map_err(|e| parse_err(e.to_string()))?;
        let mut fields = row.iter();
        let clip_id = match fields.next() {
            Some(id) if !id.is_empty() => id.to_string(),
            _ => return Err(parse_err("missing clip_id".into())),
        };
        let mut classes = Vec::new();
        for name in fields {
            if name.is_empty() {
                continue;
            }
            classes.push(
                registry
                    .resolve(name)
                    .map_err(|e| parse_err(e.to_string()))?,
            );
        }
        let caption = ClipCaption::new(clip_id.clone(), classes)
            .map_err(|e| parse_err(e.to_string()))?;
        if captions.insert(clip_id.clone(), caption).is_some() {
            return Err(parse_err(format!("duplicate clip_id {clip_id:?}")));
        }
    }
    Ok(captions)
}

pub fn write_captions(
    path: impl AsRef<Path>,
    captions: &BTreeMap<String, ClipCaption>,
    registry: &ClassRegistry,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for caption in captions.values() {
        out.push_str(&caption.clip_id);
        for &class in &caption.classes {
            out.push(',');
            out.push_str(registry.name(class)?);
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Class list file

/// One name per line; the line number is the class id.
pub fn write_class_list(path: impl AsRef<Path>, registry: &ClassRegistry) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for class in registry.iter() {
        out.push_str(&class.name);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_class_list(path: impl AsRef<Path>) -> Result<ClassRegistry> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let names: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    ClassRegistry::build(&names)
}

// ---------------------------------------------------------------------------
// Pseudo-dataset (annotation text files)

/// Summary counts returned by [`write_pseudo_dataset`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub files: u64,
    pub boxes: u64,
    pub per_class: BTreeMap<String, u64>,
}

pub fn annotation_file_name(clip_id: &str, frame_index: u64) -> String {
    format!("{clip_id}_{frame_index:06}.txt")
}

fn check_bounds(b: &Box2D, width: u32, height: u32) -> Result<()> {
    let (w, h) = (f64::from(width), f64::from(height));
    if b.x_min() < 0.0 || b.y_min() < 0.0 || b.x_max() > w || b.y_max() > h {
        let [x_min, y_min, x_max, y_max] = b.corners();
        return Err(Error::OutOfBounds {
            x_min,
            y_min,
            x_max,
            y_max,
            width,
            height,
        });
    }
    Ok(())
}

/// Formats one annotation line: class id then normalized center-size
/// coordinates, six-decimal fixed point, single-space separated.
pub fn annotation_line(entry: &(Box2D, ClassId), width: u32, height: u32) -> String {
    let (b, class) = entry;
    let (cx, cy) = b.center();
    format!(
        "{} {:.6} {:.6} {:.6} {:.6}\n",
        class,
        cx / f64::from(width),
        cy / f64::from(height),
        b.width() / f64::from(width),
        b.height() / f64::from(height),
    )
}

/// Writes one annotation file per frame under `dir/labels/`, plus
/// `dir/classes.txt`. Boxes outside the image bounds are an error — no
/// silent clamping. Output is deterministic given identical input order.
pub fn write_pseudo_dataset<'a>(
    records: impl IntoIterator<Item = &'a PseudoLabelRecord>,
    image_size: (u32, u32),
    dir: impl AsRef<Path>,
    registry: &ClassRegistry,
) -> Result<DatasetSummary> {
    let (width, height) = image_size;
    if width == 0 || height == 0 {
        return Err(Error::InvalidConfig(format!(
            "image size {width}x{height} must be positive"
        )));
    }
    let dir = dir.as_ref();
    let labels_dir = dir.join("labels");
    fs::create_dir_all(&labels_dir).map_err(|e| Error::io(&labels_dir, e))?;

    let mut summary = DatasetSummary::default();
    for record in records {
        let mut body = String::new();
        for entry in &record.entries {
            check_bounds(&entry.0, width, height)?;
            if !registry.contains(entry.1) {
                return Err(Error::UnknownClass(format!("id {}", entry.1)));
            }
            body.push_str(&annotation_line(entry, width, height));
            *summary
                .per_class
                .entry(registry.name(entry.1)?.to_string())
                .or_insert(0) += 1;
            summary.boxes += 1;
        }
        let file = labels_dir.join(annotation_file_name(&record.clip_id, record.frame_index));
        let mut f = fs::File::create(&file).map_err(|e| Error::io(&file, e))?;
        f.write_all(body.as_bytes()).map_err(|e| Error::io(&file, e))?;
        summary.files += 1;
    }
    write_class_list(dir.join("classes.txt"), registry)?;
    Ok(summary)
}

/// Reads a pseudo-dataset written by [`write_pseudo_dataset`] back into
/// records. Confidence is not representable in the annotation format, so
/// boxes come back with confidence 1.0; provenance is reconstructed from
/// the supplied round number and stage.
pub fn read_pseudo_dataset(
    dir: impl AsRef<Path>,
    image_size: (u32, u32),
    provenance: Provenance,
) -> Result<Vec<PseudoLabelRecord>> {
    let dir = dir.as_ref();
    let labels_dir = dir.join("labels");
    let (width, height) = (f64::from(image_size.0), f64::from(image_size.1));

    let mut names: Vec<PathBuf> = Vec::new();
    let entries = fs::read_dir(&labels_dir).map_err(|e| Error::io(&labels_dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&labels_dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|s| s.to_str()) == Some("txt") {
            names.push(path);
        }
    }
    names.sort();

    let mut records = Vec::with_capacity(names.len());
    for path in names {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Pipeline(format!("unreadable file name {path:?}")))?;
        // clip ids may contain underscores; the frame index is the final
        // six-digit component.
        let (clip_id, frame_str) = stem.rsplit_once('_').ok_or_else(|| Error::Parse {
            path: path.clone(),
            line: 0,
            message: "annotation file name is not <clip_id>_<frame:06d>.txt".into(),
        })?;
        let frame_index: u64 = frame_str.parse().map_err(|_| Error::Parse {
            path: path.clone(),
            line: 0,
            message: format!("invalid frame index {frame_str:?}"),
        })?;

        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.clone(),
                line: idx + 1,
                message,
            };
            let fields: Vec<&str> = line.split(' ').collect();
            if fields.len() != 5 {
                return Err(parse_err(format!(
                    "expected 5 space-separated fields, found {}",
                    fields.len()
                )));
            }
            let class: u32 = fields[0].parse().map_err(|_| {
                parse_err(format!("invalid class id {:?}", fields[0]))
            })?;
            let mut vals = [0.0f64; 4];
            for (slot, field) in vals.iter_mut().zip(&fields[1..]) {
                *slot = field
                    .parse()
                    .map_err(|_| parse_err(format!("invalid number {field:?}")))?;
            }
            let [cx, cy, w, h] = vals;
            let bbox = Box2D::new(
                (cx - w / 2.0) * width,
                (cy - h / 2.0) * height,
                (cx + w / 2.0) * width,
                (cy + h / 2.0) * height,
                1.0,
            )
            .map_err(|e| parse_err(e.to_string()))?;
            entries.push((bbox, ClassId(class)));
        }
        records.push(PseudoLabelRecord::new(
            clip_id,
            frame_index,
            entries,
            provenance,
        )?);
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Round manifests

/// Provenance of one training round. Serialized as pretty JSON with a
/// tamper-evidence digest over the canonical serialization of the other
/// fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundManifest {
    pub round: u32,
    pub tau: f64,
    pub overlap_metric: OverlapMetric,
    pub stage: LabelStage,
    pub frames_seen: u64,
    pub frames_accepted: u64,
    pub per_class_counts: BTreeMap<String, u64>,
    pub rejections: BTreeMap<String, u64>,
    pub params: BTreeMap<String, String>,
    pub input_digest: String,
    pub output_path: String,
    pub output_digest: String,
}

impl RoundManifest {
    fn validate(&self) -> Result<()> {
        if self.frames_accepted > self.frames_seen {
            return Err(Error::InvalidConfig(format!(
                "manifest round {}: frames_accepted {} > frames_seen {}",
                self.round, self.frames_accepted, self.frames_seen
            )));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "manifest round {}: tau {} outside (0, 1)",
                self.round, self.tau
            )));
        }
        Ok(())
    }

    /// Digest over the canonical (compact) JSON of the manifest body.
    pub fn digest(&self) -> Result<String> {
        let canonical = serde_json::to_vec(self)?;
        Ok(sha256_hex(&canonical))
    }
}

#[derive(Serialize, Deserialize)]
struct SealedManifest {
    #[serde(flatten)]
    manifest: RoundManifest,
    manifest_digest: String,
}

pub fn write_manifest(manifest: &RoundManifest, path: impl AsRef<Path>) -> Result<()> {
    manifest.validate()?;
    let path = path.as_ref();
    let sealed = SealedManifest {
        manifest_digest: manifest.digest()?,
        manifest: manifest.clone(),
    };
    let mut text = serde_json::to_string_pretty(&sealed)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<RoundManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let sealed: SealedManifest = serde_json::from_str(&text)?;
    let actual = sealed.manifest.digest()?;
    if actual != sealed.manifest_digest {
        return Err(Error::DigestMismatch {
            context: format!("manifest {}", path.display()),
            expected: sealed.manifest_digest,
            actual,
        });
    }
    sealed.manifest.validate()?;
    Ok(sealed.manifest)
}

// ---------------------------------------------------------------------------
// Content digests

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

/// Digest of a written pseudo-dataset: every file under `labels/` plus
/// `classes.txt`, hashed as sorted (name, content) pairs.
pub fn dataset_digest(dir: impl AsRef<Path>) -> Result<String> {
    let dir = dir.as_ref();
    let labels_dir = dir.join("labels");
    let mut names: Vec<String> = Vec::new();
    if labels_dir.is_dir() {
        let entries = fs::read_dir(&labels_dir).map_err(|e| Error::io(&labels_dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&labels_dir, e))?;
            if let Some(name) = entry.file_name().to_str() {
                if name.ends_with(".txt") {
                    names.push(format!("labels/{name}"));
                }
            }
        }
    }
    names.sort();
    names.push("classes.txt".to_string());

    let mut hasher = Sha256::new();
    for name in &names {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}
