//! wsloc: weakly-supervised surgical-instrument localization pseudo-labels.
//!
//! Takes per-clip instrument captions plus category-free part detections
//! (shaft/clevis/tip) and turns them into filtered, iteratively refined
//! localization pseudo-labels:
//!
//! 1. [`bootstrap`] assigns caption classes to anchor part boxes
//!    left-to-right in frames with the expected anchor count.
//! 2. [`filter`] keeps only frames where every labeled tool box is
//!    corroborated by a part box of the matching kind (overlap > tau).
//! 3. [`rounds`] drives train → infer → filter → retrain cycles against
//!    a pluggable detector, one content-addressed manifest per round.
//! 4. [`sim`] is the closed-loop testbed: a synthetic scene generator,
//!    noisy detector emulators, and a trainable surrogate detector whose
//!    accuracy is an explicit function of training-label purity.
//! 5. [`eval`] measures pseudo-label precision/recall and detection
//!    mAP@[.5:.05:.95] against ground truth.
//!
//! The crate never touches pixels: detectors are modeled as detection
//! sources (file-backed streams or the simulator), so a real training
//! pipeline can plug in behind the same interfaces.
//!
//! See the `examples/` directory for one runnable example per stage, or
//! the `wsloc` binary for the scriptable pipeline frontend.

pub mod bootstrap;
pub mod cli;
pub mod error;
pub mod eval;
pub mod filter;
pub mod geometry;
pub mod io;
pub mod model;
pub mod rounds;
pub mod sim;

pub use error::{Error, Result};
pub use geometry::{intersection_over_min, iou, ordering_key, Box2D, OverlapMetric};
pub use model::{
    ClassId, ClassRegistry, ClipCaption, FrameDetections, PartDetection, PartKind,
    PseudoLabelRecord, ToolClass, ToolDetection,
};
