use std::path::{Path, PathBuf};

use densereward::io::write_heatmap_file;
use densereward::{BoundingBox, Heatmap, ScoreVector};
use serde_json::json;

/// Canonical answer layout from the evaluator prompt.
pub const CANONICAL_RESPONSE: &str = "<think>
I need to focus on the bounding box area. Proposed regions (xyxy): 1.[120,56,310,240];2.[402,300,512,470]
The left hand shows six fingers and the lamp post bends into the sky. The caption asks for a red umbrella but the umbrella is blue.
</think>
<answer>
Semantic Alignment score: 0.62
Aesthetic score: 0.81
Plausibility score: 0.45
Overall Impression score: 0.58
Misalignment Locations: 1.[402,300,512,470]
Artifact Locations: 1.[120,56,310,240];2.[140,60,200,120]
</answer>
";

pub fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
    BoundingBox::new(x1, y1, x2, y2).unwrap()
}

/// `w x h` map with value `v` on the half-open pixel block `[x0, x1) x [y0, y1)`.
pub fn block(w: usize, h: usize, x0: usize, x1: usize, y0: usize, y1: usize, v: f32) -> Heatmap {
    Heatmap::from_fn(w, h, |x, y| {
        if (x0..x1).contains(&x) && (y0..y1).contains(&y) {
            v
        } else {
            0.0
        }
    })
    .unwrap()
}

pub struct RecordFiles<'a> {
    pub id: &'a str,
    pub scores: ScoreVector,
    pub artifact: Option<&'a Heatmap>,
    pub misalignment: Option<&'a Heatmap>,
    pub artifact_boxes: &'a [BoundingBox],
    pub misalignment_boxes: &'a [BoundingBox],
}

fn boxes_json(boxes: &[BoundingBox]) -> serde_json::Value {
    json!(boxes.iter().map(|b| [b.x1, b.y1, b.x2, b.y2]).collect::<Vec<_>>())
}

/// Writes each record's files under `dir/prefix_*` and a manifest
/// `dir/prefix.json` referring to them by relative path.
pub fn write_manifest(dir: &Path, prefix: &str, records: &[RecordFiles<'_>]) -> PathBuf {
    let mut entries = Vec::new();
    for r in records {
        let stem = format!("{prefix}_{}", r.id);
        let s = r.scores;
        std::fs::write(
            dir.join(format!("{stem}_scores.json")),
            json!({"alignment": s.alignment, "aesthetics": s.aesthetics,
                   "plausibility": s.plausibility, "overall": s.overall})
            .to_string(),
        )
        .unwrap();
        let mut entry = json!({"id": r.id, "score_path": format!("{stem}_scores.json")});
        if let Some(h) = r.artifact {
            write_heatmap_file(&dir.join(format!("{stem}_art.hmf")), h).unwrap();
            entry["artifact_heatmap_path"] = json!(format!("{stem}_art.hmf"));
        }
        if let Some(h) = r.misalignment {
            write_heatmap_file(&dir.join(format!("{stem}_mis.png")), h).unwrap();
            entry["misalignment_heatmap_path"] = json!(format!("{stem}_mis.png"));
        }
        std::fs::write(dir.join(format!("{stem}_abox.json")), boxes_json(r.artifact_boxes).to_string()).unwrap();
        std::fs::write(dir.join(format!("{stem}_mbox.json")), boxes_json(r.misalignment_boxes).to_string()).unwrap();
        entry["artifact_boxes_path"] = json!(format!("{stem}_abox.json"));
        entry["misalignment_boxes_path"] = json!(format!("{stem}_mbox.json"));
        entries.push(entry);
    }
    let path = dir.join(format!("{prefix}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&entries).unwrap()).unwrap();
    path
}

/// Two records with exact-cover boxes, written once as prediction and once as
/// ground truth. Misalignment maps go through PNG, so their values sit on the
/// 8-bit grid.
pub fn identical_manifests(dir: &Path) -> (PathBuf, PathBuf) {
    let art_a = block(16, 16, 6, 10, 6, 10, 1.0);
    let mis_a = block(16, 16, 2, 5, 3, 7, 1.0);
    let art_b = Heatmap::from_fn(16, 16, |x, y| ((x * 7 + y * 3) % 11) as f32 / 10.0).unwrap();
    let mis_b = Heatmap::zeros(16, 16).unwrap();
    let a_boxes = [bb(6.0, 6.0, 10.0, 10.0)];
    let a_mis = [bb(2.0, 3.0, 5.0, 7.0)];
    let b_boxes = [bb(0.0, 0.0, 16.0, 16.0)];
    let recs = |_: ()| {
        vec![
            RecordFiles {
                id: "a",
                scores: ScoreVector::new(0.8, 0.7, 0.9, 0.8).unwrap(),
                artifact: Some(&art_a),
                misalignment: Some(&mis_a),
                artifact_boxes: &a_boxes,
                misalignment_boxes: &a_mis,
            },
            RecordFiles {
                id: "b",
                scores: ScoreVector::new(0.2, 0.4, 0.1, 0.3).unwrap(),
                artifact: Some(&art_b),
                misalignment: Some(&mis_b),
                artifact_boxes: &b_boxes,
                misalignment_boxes: &[],
            },
            RecordFiles {
                id: "c",
                scores: ScoreVector::new(0.5, 0.9, 0.6, 0.7).unwrap(),
                artifact: Some(&art_a),
                misalignment: None,
                artifact_boxes: &a_boxes,
                misalignment_boxes: &[],
            },
        ]
    };
    (write_manifest(dir, "pred", &recs(())), write_manifest(dir, "gt", &recs(())))
}
