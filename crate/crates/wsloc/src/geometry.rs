//! Axis-aligned box arithmetic and overlap metrics.
//!
//! Geometry is continuous (real-valued): the area of a box is
//! `(x_max - x_min) * (y_max - y_min)`, with no pixel-inclusive `+1`
//! convention. Degenerate (zero-area) boxes are rejected at construction
//! so overlap metrics never have to special-case them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle with a detection confidence.
///
/// Invariants enforced at construction: `x_min < x_max`, `y_min < y_max`,
/// all coordinates finite, and `confidence` in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct Box2D {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
    confidence: f64,
}

/// Serde-facing representation; validation happens in `TryFrom`.
#[derive(Serialize, Deserialize)]
struct RawBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
    confidence: f64,
}

impl TryFrom<RawBox> for Box2D {
    type Error = Error;

    fn try_from(raw: RawBox) -> Result<Self> {
        Box2D::new(raw.x_min, raw.y_min, raw.x_max, raw.y_max, raw.confidence)
    }
}

impl From<Box2D> for RawBox {
    fn from(b: Box2D) -> Self {
        RawBox {
            x_min: b.x_min,
            y_min: b.y_min,
            x_max: b.x_max,
            y_max: b.y_max,
            confidence: b.confidence,
        }
    }
}

impl Box2D {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64, confidence: f64) -> Result<Self> {
        let invalid = |reason: &'static str| Error::InvalidBox {
            x_min,
            y_min,
            x_max,
            y_max,
            confidence,
            reason,
        };
        if ![x_min, y_min, x_max, y_max, confidence]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(invalid("non-finite value"));
        }
        if x_min >= x_max {
            return Err(invalid("x_min must be strictly less than x_max"));
        }
        if y_min >= y_max {
            return Err(invalid("y_min must be strictly less than y_max"));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(invalid("confidence outside [0, 1]"));
        }
        Ok(Box2D {
            x_min,
            y_min,
            x_max,
            y_max,
            confidence,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    /// Same box with a different confidence.
    pub fn with_confidence(&self, confidence: f64) -> Result<Self> {
        Box2D::new(self.x_min, self.y_min, self.x_max, self.y_max, confidence)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    fn intersection_area(&self, other: &Box2D) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }
}

/// Intersection over union of two boxes. Symmetric, in `[0, 1]`, and 0
/// for disjoint boxes.
pub fn iou(a: &Box2D, b: &Box2D) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Intersection over the smaller of the two areas. Equals 1.0 when one
/// box contains the other, which makes it the forgiving alternative to
/// [`iou`] when gating a small part box against a larger tool box.
pub fn intersection_over_min(a: &Box2D, b: &Box2D) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    inter / a.area().min(b.area())
}

/// Which overlap metric gates the location-consistency check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapMetric {
    Iou,
    IoMin,
}

impl OverlapMetric {
    pub fn measure(&self, a: &Box2D, b: &Box2D) -> f64 {
        match self {
            OverlapMetric::Iou => iou(a, b),
            OverlapMetric::IoMin => intersection_over_min(a, b),
        }
    }
}

impl std::fmt::Display for OverlapMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OverlapMetric::Iou => write!(f, "iou"),
            OverlapMetric::IoMin => write!(f, "iomin"),
        }
    }
}

impl std::str::FromStr for OverlapMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "iou" => Ok(OverlapMetric::Iou),
            "iomin" => Ok(OverlapMetric::IoMin),
            other => Err(Error::InvalidConfig(format!(
                "unknown overlap metric {other:?} (expected \"iou\" or \"iomin\")"
            ))),
        }
    }
}

/// Spatial sort key: box center, x before y. "Left to right" means
/// ascending x-center; equal x-centers fall back to ascending y-center,
/// and remaining ties keep input order (callers rely on stable sorts).
pub fn ordering_key(b: &Box2D) -> (f64, f64) {
    b.center()
}

/// Sorts boxes left-to-right by [`ordering_key`], preserving input order
/// for exact ties. Returns the permutation of input indices.
pub fn left_to_right_order(boxes: &[Box2D]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| {
        let (xi, yi) = ordering_key(&boxes[i]);
        let (xj, yj) = ordering_key(&boxes[j]);
        xi.total_cmp(&xj).then(yi.total_cmp(&yj))
    });
    order
}
