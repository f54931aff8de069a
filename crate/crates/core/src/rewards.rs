//! Grounding, score, heatmap and total rewards.
//!
//! Ranges: grounding `[0, 1]`, score `[0, 4]`, heatmap `[0, 2]`, total `[0, 7]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_iou, mass_in_box, mass_in_region, pixel_count};
use crate::types::{BoundingBox, EvaluationRecord, Heatmap, ScoreVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundingEdgeCase {
    None,
    /// Blank heatmap and no boxes: reward 1.
    BlankMatch,
    /// Boxes predicted on a blank heatmap: reward 0.
    BlankMismatch,
    /// Highlighted heatmap but no boxes: reward 0.
    MissingBoxes,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundingBreakdown {
    pub completeness: f64,
    pub compactness: f64,
    pub uniqueness: f64,
    pub combined: f64,
    pub edge_case: GroundingEdgeCase,
}

impl GroundingBreakdown {
    fn edge(edge_case: GroundingEdgeCase, value: f64) -> Self {
        Self {
            completeness: value,
            compactness: value,
            uniqueness: value,
            combined: value,
            edge_case,
        }
    }
}

/// Fraction of the heatmap's mass covered by the union of `boxes`.
pub fn completeness(h: &Heatmap, boxes: &[BoundingBox]) -> Result<f64> {
    let total = h.total_mass();
    if total <= 0.0 {
        return Err(Error::Undefined("completeness of a blank heatmap".into()));
    }
    if boxes.is_empty() {
        return Err(Error::Undefined("completeness without boxes".into()));
    }
    Ok((mass_in_region(h, boxes) / total).clamp(0.0, 1.0))
}

/// Mean over boxes of the average intensity inside each box.
/// A box that contains no pixel center contributes 0.
pub fn compactness(h: &Heatmap, boxes: &[BoundingBox]) -> Result<f64> {
    if boxes.is_empty() {
        return Err(Error::Undefined("compactness without boxes".into()));
    }
    let sum: f64 = boxes
        .iter()
        .map(|b| match pixel_count(b, h.width(), h.height()) {
            0 => 0.0,
            n => mass_in_box(h, b) / n as f64,
        })
        .sum();
    Ok((sum / boxes.len() as f64).clamp(0.0, 1.0))
}

/// One minus the mean pairwise IoU; 1 for fewer than two boxes.
pub fn uniqueness(boxes: &[BoundingBox]) -> f64 {
    if boxes.len() < 2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for (i, a) in boxes.iter().enumerate() {
        for b in &boxes[i + 1..] {
            sum += box_iou(a, b);
            pairs += 1;
        }
    }
    (1.0 - sum / pairs as f64).clamp(0.0, 1.0)
}

/// Grounding reward for one heatmap/box-list pair with the default blank threshold of 0.
pub fn grounding_reward_single(h: &Heatmap, boxes: &[BoundingBox]) -> GroundingBreakdown {
    grounding_reward_single_with(Some(h), boxes, 0.0)
}

/// Like [`grounding_reward_single`]; `None` stands for a blank map and a map is
/// blank when its mass is at most `blank_threshold`.
pub fn grounding_reward_single_with(
    h: Option<&Heatmap>,
    boxes: &[BoundingBox],
    blank_threshold: f64,
) -> GroundingBreakdown {
    let highlighted = h.filter(|h| !h.is_blank(blank_threshold));
    match (highlighted, boxes.is_empty()) {
        (None, true) => GroundingBreakdown::edge(GroundingEdgeCase::BlankMatch, 1.0),
        (None, false) => GroundingBreakdown::edge(GroundingEdgeCase::BlankMismatch, 0.0),
        (Some(_), true) => GroundingBreakdown::edge(GroundingEdgeCase::MissingBoxes, 0.0),
        (Some(h), false) => {
            // both preconditions hold here, so neither sub-reward can fail
            let completeness = completeness(h, boxes).unwrap_or(0.0);
            let compactness = compactness(h, boxes).unwrap_or(0.0);
            let uniqueness = uniqueness(boxes);
            GroundingBreakdown {
                completeness,
                compactness,
                uniqueness,
                combined: (completeness + compactness + uniqueness) / 3.0,
                edge_case: GroundingEdgeCase::None,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundingReport {
    pub artifact: GroundingBreakdown,
    pub misalignment: GroundingBreakdown,
    pub combined: f64,
}

/// Mean of the artifact and misalignment grounding rewards.
pub fn grounding_reward(
    art_h: &Heatmap,
    mis_h: &Heatmap,
    art_boxes: &[BoundingBox],
    mis_boxes: &[BoundingBox],
) -> f64 {
    grounding_report(Some(art_h), Some(mis_h), art_boxes, mis_boxes, 0.0).combined
}

pub fn grounding_report(
    art_h: Option<&Heatmap>,
    mis_h: Option<&Heatmap>,
    art_boxes: &[BoundingBox],
    mis_boxes: &[BoundingBox],
    blank_threshold: f64,
) -> GroundingReport {
    let artifact = grounding_reward_single_with(art_h, art_boxes, blank_threshold);
    let misalignment = grounding_reward_single_with(mis_h, mis_boxes, blank_threshold);
    GroundingReport {
        artifact,
        misalignment,
        combined: (artifact.combined + misalignment.combined) / 2.0,
    }
}

/// `sum_d (1 - |pred_d - gt_d|)` over the four score dimensions.
pub fn score_reward(pred: &ScoreVector, gt: &ScoreVector) -> Result<f64> {
    pred.validate()?;
    gt.validate()?;
    Ok(pred
        .as_array()
        .iter()
        .zip(gt.as_array())
        .map(|(p, g)| 1.0 - (p - g).abs())
        .sum())
}

fn mse(pred: &Heatmap, gt: &Heatmap) -> Result<f64> {
    pred.check_same_shape(gt)?;
    let sum: f64 = pred
        .values()
        .iter()
        .zip(gt.values())
        .map(|(&p, &g)| {
            let d = f64::from(p) - f64::from(g);
            d * d
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

/// `sum_d (1 - MSE(pred_d, gt_d))` over the artifact and misalignment maps,
/// with MSE the per-pixel mean squared difference.
pub fn heatmap_reward(pred_art: &Heatmap, gt_art: &Heatmap, pred_mis: &Heatmap, gt_mis: &Heatmap) -> Result<f64> {
    Ok((1.0 - mse(pred_art, gt_art)?) + (1.0 - mse(pred_mis, gt_mis)?))
}

fn heatmap_term(pred: Option<&Heatmap>, gt: Option<&Heatmap>) -> Result<f64> {
    let err = match (pred, gt) {
        (Some(p), Some(g)) => mse(p, g)?,
        // an absent map is blank: the error is the present map's mean square
        (Some(h), None) | (None, Some(h)) => {
            h.values().iter().map(|&v| f64::from(v).powi(2)).sum::<f64>() / h.len() as f64
        }
        (None, None) => 0.0,
    };
    Ok(1.0 - err)
}

pub fn total_reward(
    pred: &EvaluationRecord,
    gt: &EvaluationRecord,
) -> Result<f64> {
    Ok(reward_report(pred, gt, 0.0)?.total)
}

/// Per-record reward report, the CLI `reward` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardReport {
    pub id: String,
    pub grounding: GroundingReport,
    pub score_reward: f64,
    pub heatmap_reward: f64,
    pub total: f64,
}

/// Rewards a prediction against ground truth. Predicted boxes are grounded in
/// the ground-truth heatmaps; absent heatmaps count as blank.
pub fn reward_report(pred: &EvaluationRecord, gt: &EvaluationRecord, blank_threshold: f64) -> Result<RewardReport> {
    if pred.id != gt.id {
        return Err(Error::InvalidArgument(format!(
            "record ids differ: `{}` vs `{}`",
            pred.id, gt.id
        )));
    }
    let grounding = grounding_report(
        gt.artifact_heatmap.as_ref(),
        gt.misalignment_heatmap.as_ref(),
        &pred.artifact_boxes,
        &pred.misalignment_boxes,
        blank_threshold,
    );
    let score_reward = score_reward(&pred.scores, &gt.scores)?;
    let heatmap_reward = heatmap_term(pred.artifact_heatmap.as_ref(), gt.artifact_heatmap.as_ref())?
        + heatmap_term(pred.misalignment_heatmap.as_ref(), gt.misalignment_heatmap.as_ref())?;
    Ok(RewardReport {
        id: gt.id.clone(),
        total: grounding.combined + score_reward + heatmap_reward,
        grounding,
        score_reward,
        heatmap_reward,
    })
}
