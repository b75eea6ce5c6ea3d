//! Command-line frontend: `simulate`, `bootstrap`, `filter`, `round`
//! and `eval` subcommands over the library pipeline.
//!
//! Human-readable progress goes to the error stream; machine-readable
//! output (metrics, manifests with `--json`) goes to standard output so
//! stages compose in shell pipelines. Every run writes an
//! effective-config JSON capturing all resolved values — next to the
//! outputs for producing subcommands, embedded in the stdout report for
//! `eval`.
//!
//! Exit codes: 0 success, 2 input/validation error, 3 pipeline-state
//! error (stale or corrupted round data), 4 internal error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bootstrap::{bootstrap_corpus, AnchorRule, BootstrapConfig};
use crate::error::{Error, Result};
use crate::eval::{label_quality, map_range, standard_thresholds, LabeledFrame};
use crate::filter::{filter_corpus, FilterConfig, MatchMode};
use crate::geometry::OverlapMetric;
use crate::io;
use crate::model::{ClassRegistry, FrameDetections, PseudoLabelRecord};
use crate::rounds::{run_plan, DetectorKind, RoundInputs, RoundPlan};
use crate::sim::{
    self, emulate_parts_detector, generate_corpus, DetectorNoise, SceneSpec, SurrogateConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_PIPELINE: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "wsloc",
    version,
    about = "Weak-supervision pseudo-labels for instrument localization",
    propagate_version = true
)]
pub struct Cli {
    /// Seed for all randomness in this run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Working directory for multi-round state.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,

    /// Worker threads for corpus-level stages (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,

    /// off | error | warn | info | debug | trace
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus: detections, captions, ground truth.
    Simulate(SimulateArgs),
    /// Build the round-0 pseudo-dataset from captions and parts.
    Bootstrap(BootstrapArgs),
    /// Single location-consistency filter pass over a detections file.
    Filter(FilterArgs),
    /// Run the multi-round bootstrap/train/filter pipeline.
    Round(RoundArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub frames: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Image size as WIDTHxHEIGHT.
    #[arg(long, default_value = "1280x720")]
    pub image_size: String,
    /// Weights over 1, 2 and 3 instruments per clip.
    #[arg(long, default_value = "0,0,1", value_delimiter = ',')]
    pub tools_per_frame: Vec<f64>,
    #[arg(long, default_value_t = 0.2)]
    pub crossing_prob: f64,
    #[arg(long, default_value_t = 0.0)]
    pub special_fraction: f64,
    #[arg(long, default_value_t = 25)]
    pub frames_per_clip: u32,
    #[arg(long, default_value_t = 2.0)]
    pub jitter_sigma: f64,
    #[arg(long, default_value_t = 0.05)]
    pub miss_rate: f64,
    #[arg(long, default_value_t = 0.5)]
    pub fp_rate: f64,
    /// Optional class-list file; defaults to the built-in class set.
    #[arg(long)]
    pub classes: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub captions: PathBuf,
    #[arg(long)]
    pub classes: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "1280x720")]
    pub image_size: String,
    #[arg(long, default_value_t = 0.25)]
    pub min_part_confidence: f64,
    /// clevis_or_special_tip | clevis_only
    #[arg(long, default_value = "clevis_or_special_tip")]
    pub anchor_rule: String,
    #[arg(long, default_value_t = 3)]
    pub required_tool_count: usize,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub classes: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "1280x720")]
    pub image_size: String,
    #[arg(long, default_value_t = 0.8)]
    pub tau: f64,
    /// iou | iomin
    #[arg(long, default_value = "iou")]
    pub overlap_metric: String,
    /// capped | literal
    #[arg(long, default_value = "capped")]
    pub match_mode: String,
    #[arg(long, default_value_t = 0.25)]
    pub min_tool_confidence: f64,
    /// Round number recorded in provenance and the manifest.
    #[arg(long, default_value_t = 1)]
    pub round: u32,
}

#[derive(Debug, Args)]
pub struct RoundArgs {
    /// Plan file (JSON). Flags below override nothing when present.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub rounds: u32,
    /// surrogate | file
    #[arg(long, default_value = "surrogate")]
    pub detector: String,
    /// Frames to simulate when no external corpus is given.
    #[arg(long, default_value_t = 2000)]
    pub frames: u64,
    #[arg(long, default_value_t = 0.2)]
    pub crossing_prob: f64,
    #[arg(long, default_value_t = 0.8)]
    pub tau: f64,
    /// External corpus: detections + captions + classes files.
    #[arg(long, requires_all = ["captions", "classes"])]
    pub detections: Option<PathBuf>,
    #[arg(long)]
    pub captions: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<PathBuf>,
    /// Ground-truth JSONL (enables the surrogate detector on an
    /// external corpus).
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    #[arg(long, default_value = "1280x720")]
    pub image_size: String,
    /// Emit all manifests as JSON on standard output.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions JSONL (tool detections).
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth JSONL.
    #[arg(long)]
    pub gt: PathBuf,
    /// Optional class-list file; derived from the ground truth when
    /// absent.
    #[arg(long)]
    pub classes: Option<PathBuf>,
    /// IOU threshold for the label precision/recall report.
    #[arg(long, default_value_t = 0.5)]
    pub iou_thresh: f64,
}

/// Serializable snapshot of every resolved value for one run.
#[derive(Serialize)]
struct EffectiveConfig<'a, T: Serialize> {
    command: &'a str,
    seed: u64,
    workdir: &'a Path,
    jobs: usize,
    #[serde(flatten)]
    options: T,
}

fn write_effective_config<T: Serialize>(dir: &Path, config: &EffectiveConfig<'_, T>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("effective-config.json");
    let mut text = serde_json::to_string_pretty(config)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn parse_image_size(s: &str) -> Result<(u32, u32)> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::InvalidConfig(format!("image size {s:?} is not WIDTHxHEIGHT")))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<u32>()
            .map_err(|_| Error::InvalidConfig(format!("invalid image dimension {v:?}")))
    };
    Ok((parse(w)?, parse(h)?))
}

fn load_registry(path: &Path) -> Result<ClassRegistry> {
    io::read_class_list(path)
}

/// Entry point used by the binary; maps errors onto exit codes.
pub fn run() -> i32 {
    let cli = Cli::parse();
    init_logging(&cli.log_level);
    if cli.jobs > 0 {
        // Ignore failure: the global pool may already exist in tests.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global();
    }
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(err) => {
            log::error!("{err}");
            eprintln!("error: {err}");
            if err.is_validation() {
                EXIT_VALIDATION
            } else if err.is_pipeline_state() {
                EXIT_PIPELINE
            } else {
                EXIT_INTERNAL
            }
        }
    }
}

fn init_logging(level: &str) {
    let mut builder = env_logger::Builder::from_default_env();
    if let Ok(filter) = level.parse() {
        builder.filter_level(filter);
    }
    builder.target(env_logger::Target::Stderr);
    let _ = builder.try_init();
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(args) => cmd_simulate(cli, args),
        Command::Bootstrap(args) => cmd_bootstrap(cli, args),
        Command::Filter(args) => cmd_filter(cli, args),
        Command::Round(args) => cmd_round(cli, args),
        Command::Eval(args) => cmd_eval(cli, args),
    }
}

#[derive(Serialize)]
struct SimulateConfig {
    frames: u64,
    out: PathBuf,
    scene: SceneSpec,
    noise: DetectorNoise,
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> Result<()> {
    if args.tools_per_frame.len() != 3 {
        return Err(Error::InvalidConfig(
            "--tools-per-frame needs exactly three weights".into(),
        ));
    }
    let scene = SceneSpec {
        image_size: parse_image_size(&args.image_size)?,
        tools_per_frame: [
            args.tools_per_frame[0],
            args.tools_per_frame[1],
            args.tools_per_frame[2],
        ],
        crossing_prob: args.crossing_prob,
        special_fraction: args.special_fraction,
        frames_per_clip: args.frames_per_clip,
        seed: cli.seed,
    };
    let noise = DetectorNoise {
        box_jitter_sigma: args.jitter_sigma,
        miss_rate: args.miss_rate,
        false_positive_rate: args.fp_rate,
        label_confusion: None,
    };
    let registry = match &args.classes {
        Some(path) => load_registry(path)?,
        None => sim::default_registry(),
    };
    noise.validate(registry.len())?;

    write_effective_config(
        &args.out,
        &EffectiveConfig {
            command: "simulate",
            seed: cli.seed,
            workdir: &cli.workdir,
            jobs: cli.jobs,
            options: SimulateConfig {
                frames: args.frames,
                out: args.out.clone(),
                scene,
                noise: noise.clone(),
            },
        },
    )?;

    let (gt, captions) = generate_corpus(&scene, args.frames, &registry)?;
    log::info!("generated {} frames across {} clips", gt.len(), captions.len());
    let frames: Vec<FrameDetections> = gt
        .iter()
        .map(|f| {
            Ok(FrameDetections {
                clip_id: f.clip_id.clone(),
                frame_index: f.frame_index,
                parts: emulate_parts_detector(f, &noise, cli.seed)?,
                tools: vec![],
            })
        })
        .collect::<Result<_>>()?;

    io::write_detections(args.out.join("detections.jsonl"), &frames, &registry)?;
    io::write_captions(args.out.join("captions.csv"), &captions, &registry)?;
    sim::write_ground_truth(args.out.join("ground_truth.jsonl"), &gt, &registry)?;
    io::write_class_list(args.out.join("classes.txt"), &registry)?;
    log::info!("corpus written to {}", args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct BootstrapCliConfig {
    detections: PathBuf,
    captions: PathBuf,
    classes: PathBuf,
    out: PathBuf,
    image_size: (u32, u32),
    bootstrap: BootstrapConfig,
}

fn cmd_bootstrap(cli: &Cli, args: &BootstrapArgs) -> Result<()> {
    let cfg = BootstrapConfig {
        min_part_confidence: args.min_part_confidence,
        anchor_rule: args.anchor_rule.parse::<AnchorRule>()?,
        required_tool_count: args.required_tool_count,
    };
    cfg.validate()?;
    let image_size = parse_image_size(&args.image_size)?;
    let registry = load_registry(&args.classes)?;
    let captions = io::read_captions(&args.captions, &registry)?;
    let frames = io::read_detections(&args.detections, &registry)?;

    write_effective_config(
        &args.out,
        &EffectiveConfig {
            command: "bootstrap",
            seed: cli.seed,
            workdir: &cli.workdir,
            jobs: cli.jobs,
            options: BootstrapCliConfig {
                detections: args.detections.clone(),
                captions: args.captions.clone(),
                classes: args.classes.clone(),
                out: args.out.clone(),
                image_size,
                bootstrap: cfg,
            },
        },
    )?;

    let (records, stats) = bootstrap_corpus(&frames, &captions, &cfg, &registry)?;
    let summary = io::write_pseudo_dataset(&records, image_size, &args.out, &registry)?;
    eprintln!(
        "bootstrap: {} of {} frames accepted ({} boxes)",
        stats.frames_accepted, stats.frames_seen, summary.boxes
    );
    for (reason, count) in &stats.skips {
        eprintln!("  skipped {count}: {reason}");
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

#[derive(Serialize)]
struct FilterCliConfig {
    detections: PathBuf,
    classes: PathBuf,
    out: PathBuf,
    image_size: (u32, u32),
    round: u32,
    filter: FilterConfig,
}

fn cmd_filter(cli: &Cli, args: &FilterArgs) -> Result<()> {
    let cfg = FilterConfig {
        tau: args.tau,
        overlap_metric: args.overlap_metric.parse::<OverlapMetric>()?,
        match_mode: args.match_mode.parse::<MatchMode>()?,
        min_tool_confidence: args.min_tool_confidence,
    };
    cfg.validate()?;
    let image_size = parse_image_size(&args.image_size)?;
    let registry = load_registry(&args.classes)?;
    let frames = io::read_detections(&args.detections, &registry)?;

    write_effective_config(
        &args.out,
        &EffectiveConfig {
            command: "filter",
            seed: cli.seed,
            workdir: &cli.workdir,
            jobs: cli.jobs,
            options: FilterCliConfig {
                detections: args.detections.clone(),
                classes: args.classes.clone(),
                out: args.out.clone(),
                image_size,
                round: args.round,
                filter: cfg,
            },
        },
    )?;

    let (records, stats) = filter_corpus(&frames, args.round, &cfg, &registry)?;
    let summary = io::write_pseudo_dataset(&records, image_size, &args.out, &registry)?;
    eprintln!(
        "filter: {} of {} frames accepted ({} boxes)",
        stats.frames_accepted, stats.frames_seen, summary.boxes
    );
    for (reason, count) in &stats.rejections {
        eprintln!("  rejected {count}: {reason}");
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

#[derive(Serialize)]
struct RoundCliConfig {
    plan: RoundPlan,
    corpus: String,
}

fn cmd_round(cli: &Cli, args: &RoundArgs) -> Result<()> {
    let plan = match &args.plan {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<RoundPlan>(&text)?
        }
        None => RoundPlan {
            rounds: args.rounds,
            filter: FilterConfig {
                tau: args.tau,
                ..FilterConfig::default()
            },
            bootstrap: BootstrapConfig::default(),
            detector: match args.detector.as_str() {
                "surrogate" => DetectorKind::Surrogate {
                    surrogate: SurrogateConfig::default(),
                },
                "file" => DetectorKind::File,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown detector {other:?} (expected \"surrogate\" or \"file\")"
                    )))
                }
            },
            seed: cli.seed,
            workdir: cli.workdir.clone(),
            image_size: parse_image_size(&args.image_size)?,
        },
    };
    plan.validate()?;

    let (inputs, corpus_kind) = match (&args.detections, &args.captions, &args.classes) {
        (Some(detections), Some(captions), Some(classes)) => {
            let registry = load_registry(classes)?;
            let captions = io::read_captions(captions, &registry)?;
            let frames = io::read_detections(detections, &registry)?;
            let ground_truth = match &args.ground_truth {
                Some(path) => Some(sim::read_ground_truth(path, &registry)?),
                None => None,
            };
            (
                RoundInputs {
                    registry,
                    captions,
                    frames,
                    ground_truth,
                },
                "files".to_string(),
            )
        }
        _ => {
            // No external corpus: simulate one from the plan seed.
            let registry = sim::default_registry();
            let scene = SceneSpec {
                image_size: plan.image_size,
                crossing_prob: args.crossing_prob,
                seed: plan.seed,
                ..SceneSpec::default()
            };
            let noise = DetectorNoise::default();
            let (gt, captions) = generate_corpus(&scene, args.frames, &registry)?;
            let frames: Vec<FrameDetections> = gt
                .iter()
                .map(|f| {
                    Ok(FrameDetections {
                        clip_id: f.clip_id.clone(),
                        frame_index: f.frame_index,
                        parts: emulate_parts_detector(f, &noise, plan.seed)?,
                        tools: vec![],
                    })
                })
                .collect::<Result<_>>()?;
            (
                RoundInputs {
                    registry,
                    captions,
                    frames,
                    ground_truth: Some(gt),
                },
                format!("simulated:{}", args.frames),
            )
        }
    };

    write_effective_config(
        &plan.workdir.clone(),
        &EffectiveConfig {
            command: "round",
            seed: plan.seed,
            workdir: &cli.workdir,
            jobs: cli.jobs,
            options: RoundCliConfig {
                plan: plan.clone(),
                corpus: corpus_kind,
            },
        },
    )?;

    let outcomes = run_plan(&plan, &inputs)?;
    for outcome in &outcomes {
        eprintln!(
            "round {}: {} of {} frames accepted{}",
            outcome.manifest.round,
            outcome.manifest.frames_accepted,
            outcome.manifest.frames_seen,
            if outcome.reused { " (reused)" } else { "" }
        );
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&outcomes)?);
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalConfig {
    pred: PathBuf,
    gt: PathBuf,
    iou_thresh: f64,
    thresholds: Vec<f64>,
}

#[derive(Serialize)]
struct EvalOutput<C: Serialize> {
    map: f64,
    per_class: BTreeMap<String, f64>,
    per_threshold: BTreeMap<String, f64>,
    precision: Option<f64>,
    recall: f64,
    convention: BTreeMap<String, String>,
    config: C,
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let registry = match &args.classes {
        Some(path) => load_registry(path)?,
        None => registry_from_gt(&args.gt)?,
    };
    let gt_frames = sim::read_ground_truth(&args.gt, &registry)?;
    let gt: Vec<LabeledFrame> = gt_frames.iter().map(LabeledFrame::from_ground_truth).collect();
    let pred_frames = io::read_detections(&args.pred, &registry)?;
    let preds: Vec<LabeledFrame> = pred_frames
        .iter()
        .map(|f| LabeledFrame {
            clip_id: f.clip_id.clone(),
            frame_index: f.frame_index,
            boxes: f.tools.iter().map(|t| (t.bbox, t.class)).collect(),
        })
        .collect();

    let report = map_range(&preds, &gt, &standard_thresholds(), &registry)?;

    // Score predictions as if they were a pseudo-dataset for the
    // precision/recall section.
    let records: Vec<PseudoLabelRecord> = preds
        .iter()
        .filter(|f| !f.boxes.is_empty())
        .map(|f| {
            PseudoLabelRecord::new(
                f.clip_id.clone(),
                f.frame_index,
                f.boxes.clone(),
                crate::model::Provenance {
                    round: 0,
                    stage: crate::model::LabelStage::Filtered,
                },
            )
        })
        .collect::<Result<_>>()?;
    let quality = label_quality(&records, &gt, args.iou_thresh, &registry)?;

    let output = EvalOutput {
        map: report.map,
        per_class: report.per_class,
        per_threshold: report.per_threshold,
        precision: quality.precision,
        recall: quality.recall,
        convention: BTreeMap::from([
            ("interpolation".into(), "101-point".into()),
            ("matching".into(), "greedy by descending confidence".into()),
            ("threshold_comparison".into(), ">= at evaluation, > in the filter".into()),
        ]),
        config: EffectiveConfig {
            command: "eval",
            seed: cli.seed,
            workdir: &cli.workdir,
            jobs: cli.jobs,
            options: EvalConfig {
                pred: args.pred.clone(),
                gt: args.gt.clone(),
                iou_thresh: args.iou_thresh,
                thresholds: standard_thresholds(),
            },
        },
    };
    println!("{}", serde_json::to_string_pretty(&output)?);
    Ok(())
}

/// Derives a registry from the class names appearing in a ground-truth
/// file, in order of first appearance.
fn registry_from_gt(path: &Path) -> Result<ClassRegistry> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut names: Vec<String> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)?;
        if let Some(instruments) = value.get("instruments").and_then(|v| v.as_array()) {
            for inst in instruments {
                if let Some(name) = inst.get("class").and_then(|v| v.as_str()) {
                    if !names.iter().any(|n| n.eq_ignore_ascii_case(name)) {
                        names.push(name.to_string());
                    }
                }
            }
        }
    }
    ClassRegistry::build(&names)
}
