//! Multi-round orchestration: bootstrap, then train → infer → filter →
//! retrain cycles against a pluggable detector source, with one
//! content-addressed manifest per round.
//!
//! Rounds are strictly sequential (each trains on the previous round's
//! dataset); frames inside a round fan out freely. All randomness flows
//! from the plan seed through per-frame counter streams, so identical
//! (plan, seed) runs produce byte-identical datasets and manifests, and
//! a resumed run cannot diverge from an uninterrupted one. To keep the
//! two paths identical, every round trains from the dataset as written
//! to disk (six-decimal quantized), never from in-memory records.
//!
//! Workdir layout: `round_<k>/labels/*.txt`, `round_<k>/classes.txt`,
//! `round_<k>/manifest.json`. A file-backed detector drops
//! `round_<k>/detections.jsonl` plus `round_<k>/detections.digest`
//! declaring the training-set digest those detections came from.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bootstrap::{bootstrap_corpus, BootstrapConfig};
use crate::error::{Error, Result};
use crate::filter::{filter_corpus, FilterConfig};
use crate::io::{
    dataset_digest, read_manifest, read_pseudo_dataset, write_manifest, write_pseudo_dataset,
    DetectionReader, RoundManifest,
};
use crate::model::{
    ClassRegistry, ClipCaption, FrameDetections, FrameKey, LabelStage, Provenance,
    PseudoLabelRecord, ToolDetection,
};
use crate::sim::{surrogate_train, GroundTruthFrame, GtIndex, SurrogateConfig};

/// Where tool detections come from each round.
pub trait DetectorSource {
    fn name(&self) -> &'static str;

    /// Called once per round with the previous round's dataset (as read
    /// back from disk) and its content digest.
    fn train(&mut self, round: u32, dataset: &[PseudoLabelRecord], dataset_digest: &str)
        -> Result<()>;

    /// Tool detections for every frame the detector covers.
    fn tool_detections(&self, round: u32) -> Result<BTreeMap<FrameKey, Vec<ToolDetection>>>;
}

/// Surrogate-backed source: trains the confusion model on each round's
/// dataset and runs inference over the simulated ground truth.
pub struct SurrogateSource<'a> {
    ground_truth: &'a [GroundTruthFrame],
    registry: ClassRegistry,
    cfg: SurrogateConfig,
    seed: u64,
    detector: Option<crate::sim::SurrogateDetector>,
}

impl<'a> SurrogateSource<'a> {
    pub fn new(
        ground_truth: &'a [GroundTruthFrame],
        registry: ClassRegistry,
        cfg: SurrogateConfig,
        seed: u64,
    ) -> Self {
        SurrogateSource {
            ground_truth,
            registry,
            cfg,
            seed,
            detector: None,
        }
    }
}

impl DetectorSource for SurrogateSource<'_> {
    fn name(&self) -> &'static str {
        "surrogate"
    }

    fn train(&mut self, _round: u32, dataset: &[PseudoLabelRecord], _digest: &str) -> Result<()> {
        let index = GtIndex::build(self.ground_truth);
        self.detector = Some(surrogate_train(
            dataset,
            &index,
            &self.registry,
            self.cfg,
            self.seed,
        )?);
        Ok(())
    }

    fn tool_detections(&self, _round: u32) -> Result<BTreeMap<FrameKey, Vec<ToolDetection>>> {
        let detector = self
            .detector
            .as_ref()
            .ok_or_else(|| Error::Pipeline("surrogate detector has not been trained".into()))?;
        let entries: Vec<(FrameKey, Vec<ToolDetection>)> = self
            .ground_truth
            .par_iter()
            .map(|gt| Ok((gt.key(), detector.infer(gt)?)))
            .collect::<Result<_>>()?;
        Ok(entries.into_iter().collect())
    }
}

/// File-backed source: an external trainer drops
/// `round_<k>/detections.jsonl` into the workdir together with
/// `round_<k>/detections.digest` naming the dataset digest it trained
/// on; a mismatch against the actual previous-round digest means the
/// detections are stale.
pub struct FileBackedSource {
    workdir: PathBuf,
    registry: ClassRegistry,
}

impl FileBackedSource {
    pub fn new(workdir: impl Into<PathBuf>, registry: ClassRegistry) -> Self {
        FileBackedSource {
            workdir: workdir.into(),
            registry,
        }
    }

    fn round_dir(&self, round: u32) -> PathBuf {
        self.workdir.join(format!("round_{round}"))
    }
}

impl DetectorSource for FileBackedSource {
    fn name(&self) -> &'static str {
        "file"
    }

    fn train(&mut self, round: u32, _dataset: &[PseudoLabelRecord], digest: &str) -> Result<()> {
        let path = self.round_dir(round).join("detections.digest");
        let declared = fs::read_to_string(&path)
            .map_err(|e| Error::io(&path, e))?
            .trim()
            .to_string();
        if declared != digest {
            return Err(Error::StaleDetections {
                round,
                declared,
                expected: digest.to_string(),
            });
        }
        Ok(())
    }

    fn tool_detections(&self, round: u32) -> Result<BTreeMap<FrameKey, Vec<ToolDetection>>> {
        let path = self.round_dir(round).join("detections.jsonl");
        let mut map = BTreeMap::new();
        for frame in DetectionReader::open(&path, &self.registry)? {
            let frame = frame?;
            map.insert(frame.key(), frame.tools);
        }
        Ok(map)
    }
}

/// Detector selection inside a serializable plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DetectorKind {
    Surrogate { surrogate: SurrogateConfig },
    File,
}

/// Everything a multi-round run needs beyond its input corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundPlan {
    pub rounds: u32,
    pub filter: FilterConfig,
    pub bootstrap: BootstrapConfig,
    pub detector: DetectorKind,
    pub seed: u64,
    pub workdir: PathBuf,
    pub image_size: (u32, u32),
}

impl RoundPlan {
    pub fn validate(&self) -> Result<()> {
        if self.rounds < 1 {
            return Err(Error::InvalidConfig("rounds must be at least 1".into()));
        }
        self.filter.validate()?;
        self.bootstrap.validate()?;
        if let DetectorKind::Surrogate { surrogate } = &self.detector {
            surrogate.validate()?;
        }
        Ok(())
    }
}

/// The input corpus: fixed part detections per frame (the parts detector
/// is trained once, outside the loop), captions, and — for surrogate
/// runs — the simulator ground truth.
pub struct RoundInputs {
    pub registry: ClassRegistry,
    pub captions: BTreeMap<String, ClipCaption>,
    /// Frame inventory; `tools` on these frames is ignored.
    pub frames: Vec<FrameDetections>,
    pub ground_truth: Option<Vec<GroundTruthFrame>>,
}

/// One round's manifest plus whether it was reused from the workdir.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub manifest: RoundManifest,
    pub reused: bool,
}

/// Digest of the input corpus (captions + part detections), the
/// input_digest of round 0.
pub fn corpus_digest(inputs: &RoundInputs) -> Result<String> {
    let mut hasher = Sha256::new();
    for caption in inputs.captions.values() {
        hasher.update(caption.clip_id.as_bytes());
        hasher.update([0u8]);
        for class in &caption.classes {
            hasher.update(class.0.to_le_bytes());
        }
        hasher.update([1u8]);
    }
    for frame in &inputs.frames {
        hasher.update(frame.clip_id.as_bytes());
        hasher.update([0u8]);
        hasher.update(frame.frame_index.to_le_bytes());
        for part in &frame.parts {
            hasher.update([part.kind.as_str().as_bytes()[0]]);
            for v in part.bbox.corners() {
                hasher.update(v.to_le_bytes());
            }
            hasher.update(part.bbox.confidence().to_le_bytes());
        }
        hasher.update([1u8]);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn round_dir(workdir: &Path, round: u32) -> PathBuf {
    workdir.join(format!("round_{round}"))
}

fn stage_for(round: u32) -> LabelStage {
    if round == 0 {
        LabelStage::Bootstrap
    } else {
        LabelStage::Filtered
    }
}

fn params_for(plan: &RoundPlan, round: u32) -> BTreeMap<String, String> {
    let mut params = if round == 0 {
        plan.bootstrap.params()
    } else {
        plan.filter.params()
    };
    params.insert("detector".into(), {
        match plan.detector {
            DetectorKind::Surrogate { .. } => "surrogate".into(),
            DetectorKind::File => "file".into(),
        }
    });
    params.insert("seed".into(), plan.seed.to_string());
    params
}

/// Writes one round's dataset and sealed manifest; the manifest is
/// written last so its presence marks the round complete.
fn persist_round(
    records: &[PseudoLabelRecord],
    round: u32,
    frames_seen: u64,
    frames_accepted: u64,
    per_class: BTreeMap<String, u64>,
    rejections: BTreeMap<String, u64>,
    input_digest: &str,
    plan: &RoundPlan,
    registry: &ClassRegistry,
) -> Result<RoundManifest> {
    let dir = round_dir(&plan.workdir, round);
    if dir.exists() {
        // Leftovers from an interrupted write would pollute the digest.
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_pseudo_dataset(records, plan.image_size, &dir, registry)?;
    let manifest = RoundManifest {
        round,
        tau: plan.filter.tau,
        overlap_metric: plan.filter.overlap_metric,
        stage: stage_for(round),
        frames_seen,
        frames_accepted,
        per_class_counts: per_class,
        rejections,
        params: params_for(plan, round),
        input_digest: input_digest.to_string(),
        output_path: format!("round_{round}"),
        output_digest: dataset_digest(&dir)?,
    };
    write_manifest(&manifest, dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Checks whether a completed round can be reused: the manifest must
/// parse with a valid seal, belong to this round and input digest,
/// match the plan parameters, and describe the dataset actually on
/// disk. A missing manifest means "compute"; an invalid one is an
/// error, never silently recomputed.
fn try_reuse(
    plan: &RoundPlan,
    round: u32,
    expected_input_digest: &str,
) -> Result<Option<RoundManifest>> {
    let dir = round_dir(&plan.workdir, round);
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Ok(None);
    }
    let manifest = read_manifest(&manifest_path)?;
    if manifest.round != round {
        return Err(Error::Pipeline(format!(
            "{} belongs to round {}, expected round {round}",
            manifest_path.display(),
            manifest.round
        )));
    }
    if manifest.input_digest != expected_input_digest {
        return Err(Error::DigestMismatch {
            context: format!("round {round} input"),
            expected: expected_input_digest.to_string(),
            actual: manifest.input_digest,
        });
    }
    if manifest.params != params_for(plan, round) {
        return Err(Error::Pipeline(format!(
            "round {round} outputs were produced with different parameters; \
             remove {} to recompute",
            dir.display()
        )));
    }
    let actual = dataset_digest(&dir)?;
    if actual != manifest.output_digest {
        return Err(Error::DigestMismatch {
            context: format!("round {round} dataset"),
            expected: manifest.output_digest,
            actual,
        });
    }
    Ok(Some(manifest))
}

/// Runs one training round: train the detector on the previous round's
/// dataset, infer tools over the frame inventory, filter for location
/// consistency, and persist the surviving records.
pub fn run_round(
    round: u32,
    prior_records: &[PseudoLabelRecord],
    prior_digest: &str,
    detector: &mut dyn DetectorSource,
    inputs: &RoundInputs,
    plan: &RoundPlan,
) -> Result<RoundManifest> {
    detector.train(round, prior_records, prior_digest)?;
    let tools = detector.tool_detections(round)?;
    let frames: Vec<FrameDetections> = inputs
        .frames
        .iter()
        .map(|f| FrameDetections {
            clip_id: f.clip_id.clone(),
            frame_index: f.frame_index,
            parts: f.parts.clone(),
            tools: tools.get(&f.key()).cloned().unwrap_or_default(),
        })
        .collect();
    let (records, stats) = filter_corpus(&frames, round, &plan.filter, &inputs.registry)?;
    persist_round(
        &records,
        round,
        stats.frames_seen,
        stats.frames_accepted,
        stats.per_class.clone(),
        stats.rejection_counts(),
        prior_digest,
        plan,
        &inputs.registry,
    )
}

/// Executes bootstrap (round 0) then rounds 1..=`plan.rounds`. Completed
/// rounds already in the workdir are verified and reused; the run picks
/// up at the first missing round.
pub fn run_plan(plan: &RoundPlan, inputs: &RoundInputs) -> Result<Vec<RoundOutcome>> {
    plan.validate()?;
    if matches!(plan.detector, DetectorKind::Surrogate { .. }) && inputs.ground_truth.is_none() {
        return Err(Error::InvalidConfig(
            "surrogate detector requires simulator ground truth".into(),
        ));
    }
    fs::create_dir_all(&plan.workdir).map_err(|e| Error::io(&plan.workdir, e))?;

    let mut detector: Box<dyn DetectorSource + '_> = match &plan.detector {
        DetectorKind::Surrogate { surrogate } => Box::new(SurrogateSource::new(
            inputs.ground_truth.as_deref().expect("checked above"),
            inputs.registry.clone(),
            *surrogate,
            plan.seed,
        )),
        DetectorKind::File => Box::new(FileBackedSource::new(
            plan.workdir.clone(),
            inputs.registry.clone(),
        )),
    };

    let mut outcomes = Vec::with_capacity(plan.rounds as usize + 1);

    // Round 0: bootstrap from captions and part detections.
    let input_digest = corpus_digest(inputs)?;
    let manifest = match try_reuse(plan, 0, &input_digest)? {
        Some(manifest) => {
            log::info!("round 0: reused existing outputs");
            outcomes.push(RoundOutcome {
                manifest: manifest.clone(),
                reused: true,
            });
            manifest
        }
        None => {
            let (records, stats) =
                bootstrap_corpus(&inputs.frames, &inputs.captions, &plan.bootstrap, &inputs.registry)?;
            let manifest = persist_round(
                &records,
                0,
                stats.frames_seen,
                stats.frames_accepted,
                per_class_of(&records, &inputs.registry)?,
                stats.rejections(),
                &input_digest,
                plan,
                &inputs.registry,
            )?;
            log::info!(
                "round 0: bootstrapped {} of {} frames",
                stats.frames_accepted,
                stats.frames_seen
            );
            outcomes.push(RoundOutcome {
                manifest: manifest.clone(),
                reused: false,
            });
            manifest
        }
    };
    let mut prior_manifest = manifest;

    for round in 1..=plan.rounds {
        let prior_dir = plan.workdir.join(&prior_manifest.output_path);
        let prior_digest = prior_manifest.output_digest.clone();
        let manifest = match try_reuse(plan, round, &prior_digest)? {
            Some(manifest) => {
                log::info!("round {round}: reused existing outputs");
                outcomes.push(RoundOutcome {
                    manifest: manifest.clone(),
                    reused: true,
                });
                manifest
            }
            None => {
                let provenance = Provenance {
                    round: round - 1,
                    stage: stage_for(round - 1),
                };
                let prior_records =
                    read_pseudo_dataset(&prior_dir, plan.image_size, provenance)?;
                let manifest = run_round(
                    round,
                    &prior_records,
                    &prior_digest,
                    detector.as_mut(),
                    inputs,
                    plan,
                )?;
                log::info!(
                    "round {round}: accepted {} of {} frames",
                    manifest.frames_accepted,
                    manifest.frames_seen
                );
                outcomes.push(RoundOutcome {
                    manifest: manifest.clone(),
                    reused: false,
                });
                manifest
            }
        };
        prior_manifest = manifest;
    }
    Ok(outcomes)
}

fn per_class_of(
    records: &[PseudoLabelRecord],
    registry: &ClassRegistry,
) -> Result<BTreeMap<String, u64>> {
    let mut counts = BTreeMap::new();
    for record in records {
        for (_, class) in &record.entries {
            *counts
                .entry(registry.name(*class)?.to_string())
                .or_insert(0) += 1;
        }
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{
        emulate_parts_detector, generate_corpus, DetectorNoise, SceneSpec,
    };
    use tempfile::tempdir;

    fn sim_inputs(seed: u64, n_frames: u64) -> (RoundInputs, SceneSpec) {
        let registry = crate::sim::default_registry();
        let spec = SceneSpec {
            seed,
            ..SceneSpec::default()
        };
        let (gt, captions) = generate_corpus(&spec, n_frames, &registry).unwrap();
        let noise = DetectorNoise::default();
        let frames: Vec<FrameDetections> = gt
            .iter()
            .map(|f| {
                Ok(FrameDetections {
                    clip_id: f.clip_id.clone(),
                    frame_index: f.frame_index,
                    parts: emulate_parts_detector(f, &noise, seed)?,
                    tools: vec![],
                })
            })
            .collect::<Result<_>>()
            .unwrap();
        (
            RoundInputs {
                registry,
                captions,
                frames,
                ground_truth: Some(gt),
            },
            spec,
        )
    }

    fn surrogate_plan(seed: u64, workdir: PathBuf, rounds: u32) -> RoundPlan {
        RoundPlan {
            rounds,
            filter: FilterConfig::default(),
            bootstrap: BootstrapConfig::default(),
            detector: DetectorKind::Surrogate {
                surrogate: SurrogateConfig::default(),
            },
            seed,
            workdir,
            image_size: (1280, 720),
        }
    }

    #[test]
    fn plan_produces_one_manifest_per_round() {
        let dir = tempdir().unwrap();
        let (inputs, _) = sim_inputs(3, 300);
        let plan = surrogate_plan(3, dir.path().to_path_buf(), 2);
        let outcomes = run_plan(&plan, &inputs).unwrap();
        assert_eq!(outcomes.len(), 3);
        for (k, outcome) in outcomes.iter().enumerate() {
            assert_eq!(outcome.manifest.round as usize, k);
            assert!(!outcome.reused);
            assert!(dir
                .path()
                .join(format!("round_{k}"))
                .join("manifest.json")
                .is_file());
        }
        // Digests chain: round k's input is round k-1's output.
        for pair in outcomes.windows(2) {
            assert_eq!(pair[1].manifest.input_digest, pair[0].manifest.output_digest);
        }
    }

    #[test]
    fn rerun_reuses_everything_with_identical_manifests() {
        let dir = tempdir().unwrap();
        let (inputs, _) = sim_inputs(5, 300);
        let plan = surrogate_plan(5, dir.path().to_path_buf(), 2);
        let first = run_plan(&plan, &inputs).unwrap();
        let second = run_plan(&plan, &inputs).unwrap();
        assert!(second.iter().all(|o| o.reused));
        let a: Vec<&RoundManifest> = first.iter().map(|o| &o.manifest).collect();
        let b: Vec<&RoundManifest> = second.iter().map(|o| &o.manifest).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn changed_parameters_refuse_reuse() {
        let dir = tempdir().unwrap();
        let (inputs, _) = sim_inputs(7, 200);
        let plan = surrogate_plan(7, dir.path().to_path_buf(), 1);
        run_plan(&plan, &inputs).unwrap();
        let mut changed = plan;
        changed.filter.tau = 0.7;
        let err = run_plan(&changed, &inputs).unwrap_err();
        assert!(err.is_pipeline_state(), "{err}");
    }

    #[test]
    fn file_backed_round_checks_training_digest() {
        let dir = tempdir().unwrap();
        let (inputs, spec) = sim_inputs(11, 200);
        let mut plan = surrogate_plan(11, dir.path().to_path_buf(), 1);
        plan.detector = DetectorKind::File;

        // Bootstrap only (the file detector fails before round 1 without
        // its drop-in files).
        let err = run_plan(&plan, &inputs).unwrap_err();
        assert!(err.is_validation() || err.is_pipeline_state());
        let round0_digest = read_manifest(dir.path().join("round_0/manifest.json"))
            .unwrap()
            .output_digest;

        // External trainer drops detections declaring the wrong digest.
        let round1 = dir.path().join("round_1");
        fs::create_dir_all(&round1).unwrap();
        let gt = inputs.ground_truth.as_ref().unwrap();
        let noise = DetectorNoise {
            label_confusion: None,
            ..DetectorNoise::default()
        };
        let frames: Vec<FrameDetections> = gt
            .iter()
            .map(|f| {
                Ok(FrameDetections {
                    clip_id: f.clip_id.clone(),
                    frame_index: f.frame_index,
                    parts: vec![],
                    tools: crate::sim::emulate_tools_detector(f, &noise, &inputs.registry, spec.seed)?,
                })
            })
            .collect::<Result<_>>()
            .unwrap();
        crate::io::write_detections(round1.join("detections.jsonl"), &frames, &inputs.registry)
            .unwrap();
        fs::write(round1.join("detections.digest"), "deadbeef\n").unwrap();
        let err = run_plan(&plan, &inputs).unwrap_err();
        assert!(matches!(err, Error::StaleDetections { .. }), "{err}");

        // Correct digest: the round completes.
        fs::write(round1.join("detections.digest"), format!("{round0_digest}\n")).unwrap();
        let outcomes = run_plan(&plan, &inputs).unwrap();
        assert_eq!(outcomes.len(), 2);
        assert!(outcomes[0].reused);
        assert!(!outcomes[1].reused);
    }

    #[test]
    fn corrupted_manifest_is_a_pipeline_error() {
        let dir = tempdir().unwrap();
        let (inputs, _) = sim_inputs(13, 200);
        let plan = surrogate_plan(13, dir.path().to_path_buf(), 1);
        run_plan(&plan, &inputs).unwrap();
        let path = dir.path().join("round_1/manifest.json");
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replace("\"frames_accepted\"", "\"frames_accepted_\"")).unwrap();
        let err = run_plan(&plan, &inputs).unwrap_err();
        assert!(!err.is_validation() || matches!(err, Error::Json(_)), "{err}");
    }
}
