//! Box geometry and heatmap mass over box regions.
//!
//! A pixel `(x, y)` belongs to a box iff its center `(x + 0.5, y + 0.5)` lies in
//! the half-open box `[x1, x2) x [y1, y2)`. Adjacent boxes therefore partition
//! pixels without double counting, and unions are well defined.

use std::ops::Range;

use crate::types::{BoundingBox, Heatmap};

pub fn total_mass(h: &Heatmap) -> f64 {
    h.total_mass()
}

pub fn box_area(b: &BoundingBox) -> f64 {
    b.width() * b.height()
}

pub fn box_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = box_area(a) + box_area(b) - inter;
    (inter / union).clamp(0.0, 1.0)
}

fn center_range(lo: f64, hi: f64, n: usize) -> Range<usize> {
    let n_f = n as f64;
    let start = (lo - 0.5).ceil().clamp(0.0, n_f) as usize;
    let end = (hi - 0.5).ceil().clamp(0.0, n_f) as usize;
    start..end.max(start)
}

/// Column and row index ranges of the pixels whose centers fall in `b`.
pub fn pixel_span(b: &BoundingBox, width: usize, height: usize) -> (Range<usize>, Range<usize>) {
    (
        center_range(b.x1, b.x2, width),
        center_range(b.y1, b.y2, height),
    )
}

/// Number of pixel centers inside `b` for a `width x height` grid.
pub fn pixel_count(b: &BoundingBox, width: usize, height: usize) -> usize {
    let (xs, ys) = pixel_span(b, width, height);
    xs.len() * ys.len()
}

/// Row-major membership mask of the union of `boxes`.
pub fn union_mask(boxes: &[BoundingBox], width: usize, height: usize) -> Vec<bool> {
    let mut mask = vec![false; width * height];
    for b in boxes {
        let (xs, ys) = pixel_span(b, width, height);
        for y in ys {
            mask[y * width + xs.start..y * width + xs.end].fill(true);
        }
    }
    mask
}

/// Total intensity over the union of `boxes`; overlapping pixels count once.
pub fn mass_in_region(h: &Heatmap, boxes: &[BoundingBox]) -> f64 {
    union_mask(boxes, h.width(), h.height())
        .iter()
        .zip(h.values())
        .filter(|(inside, _)| **inside)
        .map(|(_, &v)| f64::from(v))
        .sum()
}

/// Intensity summed over the pixels of a single box.
pub fn mass_in_box(h: &Heatmap, b: &BoundingBox) -> f64 {
    let (xs, ys) = pixel_span(b, h.width(), h.height());
    let mut sum = 0.0;
    for y in ys {
        let row = &h.values()[y * h.width()..(y + 1) * h.width()];
        sum += row[xs.clone()].iter().map(|&v| f64::from(v)).sum::<f64>();
    }
    sum
}
