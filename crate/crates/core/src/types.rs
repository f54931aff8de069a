//! Domain types shared by every module: heatmaps, flaw boxes, score vectors
//! and per-sample evaluation records.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `width x height` grid of intensities in `[0, 1]`, stored row-major.
///
/// Values are kept as `f32`, the precision of the on-disk formats; every
/// computation over them widens to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl Heatmap {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidHeatmap(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width
            .checked_mul(height)
            .ok_or_else(|| Error::InvalidHeatmap("dimension overflow".into()))?;
        if values.len() != expected {
            return Err(Error::InvalidHeatmap(format!(
                "expected {expected} values for {width}x{height}, got {}",
                values.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidHeatmap(format!(
                "value {v} at index {i} is outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0.0; width.saturating_mul(height)])
    }

    /// Builds a map from `f(x, y)`; `x` is the column, `y` the row.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut values = Vec::with_capacity(width.saturating_mul(height));
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_shape(&self, other: &Heatmap) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_same_shape(&self, other: &Heatmap) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            })
        }
    }

    /// Sum of all intensities.
    pub fn total_mass(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v)).sum()
    }

    /// A map is blank when its total mass does not exceed `threshold`.
    /// The default threshold used across the crate is exactly zero.
    pub fn is_blank(&self, threshold: f64) -> bool {
        self.total_mass() <= threshold
    }
}

/// Axis-aligned box in continuous pixel coordinates, origin top-left.
/// Always has strictly positive area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let reason = if ![x1, y1, x2, y2].iter().all(|c| c.is_finite()) {
            Some("coordinates must be finite")
        } else if x2 <= x1 {
            Some("x2 must exceed x1")
        } else if y2 <= y1 {
            Some("y2 must exceed y1")
        } else {
            None
        };
        match reason {
            Some(reason) => Err(Error::InvalidBox {
                x1,
                y1,
                x2,
                y2,
                reason,
            }),
            None => Ok(Self { x1, y1, x2, y2 }),
        }
    }

    /// Clamps to `[0, width] x [0, height]`; fails when nothing is left.
    pub fn clamp_to(&self, width: usize, height: usize) -> Result<Self> {
        let (w, h) = (width as f64, height as f64);
        let clamped = Self::new(
            self.x1.clamp(0.0, w),
            self.y1.clamp(0.0, h),
            self.x2.clamp(0.0, w),
            self.y2.clamp(0.0, h),
        );
        clamped.map_err(|_| Error::InvalidBox {
            x1: self.x1,
            y1: self.y1,
            x2: self.x2,
            y2: self.y2,
            reason: "box degenerates after clamping to image bounds",
        })
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        Self::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

/// The four evaluation scores, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScores")]
pub struct ScoreVector {
    pub alignment: f64,
    pub aesthetics: f64,
    pub plausibility: f64,
    pub overall: f64,
}

#[derive(Deserialize)]
struct RawScores {
    alignment: f64,
    aesthetics: f64,
    plausibility: f64,
    overall: f64,
}

impl TryFrom<RawScores> for ScoreVector {
    type Error = Error;

    fn try_from(r: RawScores) -> Result<Self> {
        Self::new(r.alignment, r.aesthetics, r.plausibility, r.overall)
    }
}

impl ScoreVector {
    pub const NAMES: [&'static str; 4] = ["alignment", "aesthetics", "plausibility", "overall"];

    pub fn new(alignment: f64, aesthetics: f64, plausibility: f64, overall: f64) -> Result<Self> {
        let s = Self {
            alignment,
            aesthetics,
            plausibility,
            overall,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn uniform(v: f64) -> Result<Self> {
        Self::new(v, v, v, v)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in Self::NAMES.iter().zip(self.as_array()) {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::ScoreOutOfRange { name, value });
            }
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.alignment, self.aesthetics, self.plausibility, self.overall]
    }
}

/// One sample's scores, optional heatmaps and proposed flaw boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRecord {
    pub id: String,
    pub scores: ScoreVector,
    pub artifact_heatmap: Option<Heatmap>,
    pub misalignment_heatmap: Option<Heatmap>,
    pub artifact_boxes: Vec<BoundingBox>,
    pub misalignment_boxes: Vec<BoundingBox>,
}

impl EvaluationRecord {
    /// Clamps each box list to its own heatmap's bounds when that heatmap is present.
    pub fn clamp_boxes(mut self) -> Result<Self> {
        fn clamp(boxes: &mut [BoundingBox], map: Option<&Heatmap>) -> Result<()> {
            if let Some(map) = map {
                for b in boxes.iter_mut() {
                    *b = b.clamp_to(map.width(), map.height())?;
                }
            }
            Ok(())
        }
        clamp(&mut self.artifact_boxes, self.artifact_heatmap.as_ref())?;
        clamp(&mut self.misalignment_boxes, self.misalignment_heatmap.as_ref())?;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_rejects_out_of_range_and_bad_length() {
        assert!(Heatmap::new(2, 1, vec![0.5, 1.5]).is_err());
        assert!(Heatmap::new(2, 1, vec![0.5]).is_err());
        assert!(Heatmap::new(0, 1, vec![]).is_err());
        assert!(Heatmap::new(1, 1, vec![f32::NAN]).is_err());
    }

    #[test]
    fn total_mass_examples() {
        assert_eq!(Heatmap::zeros(4, 4).unwrap().total_mass(), 0.0);
        assert_eq!(Heatmap::new(4, 4, vec![1.0; 16]).unwrap().total_mass(), 16.0);
        assert_eq!(Heatmap::new(2, 2, vec![0.25; 4]).unwrap().total_mass(), 1.0);
    }

    #[test]
    fn blank_threshold() {
        let h = Heatmap::new(2, 1, vec![0.0, 1e-3]).unwrap();
        assert!(!h.is_blank(0.0));
        assert!(h.is_blank(1e-2));
        assert!(Heatmap::zeros(3, 3).unwrap().is_blank(0.0));
    }

    #[test]
    fn box_validation_and_clamp() {
        assert!(BoundingBox::new(5.0, 5.0, 4.0, 9.0).is_err());
        assert!(BoundingBox::new(0.0, 1.0, 1.0, 1.0).is_err());
        let b = BoundingBox::new(-3.0, 2.0, 40.0, 9.0).unwrap();
        assert_eq!(
            b.clamp_to(16, 8).unwrap(),
            BoundingBox::new(0.0, 2.0, 16.0, 8.0).unwrap()
        );
        let outside = BoundingBox::new(20.0, 0.0, 30.0, 4.0).unwrap();
        assert!(outside.clamp_to(16, 16).is_err());
    }

    #[test]
    fn json_shapes() {
        let boxes: Vec<BoundingBox> = serde_json::from_str("[[1,2,3,4],[0,0,1.5,2]]").unwrap();
        assert_eq!(boxes[1], BoundingBox::new(0.0, 0.0, 1.5, 2.0).unwrap());
        assert!(serde_json::from_str::<Vec<BoundingBox>>("[[3,2,1,4]]").is_err());

        let s: ScoreVector = serde_json::from_str(
            r#"{"alignment":0.8,"aesthetics":0.7,"plausibility":0.9,"overall":0.8}"#,
        )
        .unwrap();
        assert_eq!(s.as_array(), [0.8, 0.7, 0.9, 0.8]);
        assert!(serde_json::from_str::<ScoreVector>(
            r#"{"alignment":1.2,"aesthetics":0.7,"plausibility":0.9,"overall":0.8}"#
        )
        .is_err());
    }
}
