//! Score-correlation and heatmap-quality metrics, and the dataset report that
//! splits heatmap metrics into blank (`GT=0`) and highlighted (`GT>0`) ground truth.
//!
//! Standard deviations are population (divide by `n`) throughout.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{EvaluationRecord, Heatmap, ScoreVector};

/// Epsilon inside both logarithm arguments of [`heatmap_kld`].
pub const KLD_EPSILON: f64 = 1e-12;

fn check_pair(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "correlation needs at least 2 samples, got {}",
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite sample".into()));
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("correlation of a constant sequence".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson linear correlation coefficient. Errors when either input is constant.
pub fn plcc(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    pearson(xs, ys)
}

/// 1-based ranks; tied values share the average of the ranks they span.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && xs[order[j]] == xs[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn srcc(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    pearson(&average_ranks(xs), &average_ranks(ys))
}

fn widen(h: &Heatmap) -> Vec<f64> {
    h.values().iter().map(|&v| f64::from(v)).collect()
}

pub fn heatmap_mse(pred: &Heatmap, gt: &Heatmap) -> Result<f64> {
    pred.check_same_shape(gt)?;
    let sum: f64 = pred
        .values()
        .iter()
        .zip(gt.values())
        .map(|(&p, &g)| (f64::from(p) - f64::from(g)).powi(2))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Pearson correlation over flattened pixels.
pub fn heatmap_cc(pred: &Heatmap, gt: &Heatmap) -> Result<f64> {
    pred.check_same_shape(gt)?;
    pearson(&widen(pred), &widen(gt))
}

/// `sum G * ln(eps + G / (eps + P))` with both maps normalized to unit mass.
/// Floored at zero: the epsilons can leave a residue of order `n * eps` below it.
pub fn heatmap_kld(pred: &Heatmap, gt: &Heatmap) -> Result<f64> {
    pred.check_same_shape(gt)?;
    let gt_mass = gt.total_mass();
    if gt_mass <= 0.0 {
        return Err(Error::Undefined("KLD against a blank ground truth".into()));
    }
    let pred_mass = pred.total_mass() + KLD_EPSILON;
    let sum: f64 = pred
        .values()
        .iter()
        .zip(gt.values())
        .map(|(&p, &g)| {
            let p = f64::from(p) / pred_mass;
            let g = f64::from(g) / gt_mass;
            g * (KLD_EPSILON + g / (KLD_EPSILON + p)).ln()
        })
        .sum();
    Ok(sum.max(0.0))
}

/// Histogram intersection `sum min(P, G)` of the unit-mass maps, evaluated as
/// `1 - |P - G|_1 / 2` (equal for distributions, and exactly 1 for identical maps).
pub fn heatmap_sim(pred: &Heatmap, gt: &Heatmap) -> Result<f64> {
    pred.check_same_shape(gt)?;
    let (pm, gm) = (pred.total_mass(), gt.total_mass());
    if pm <= 0.0 || gm <= 0.0 {
        return Err(Error::Undefined("SIM with a blank map".into()));
    }
    let l1: f64 = pred
        .values()
        .iter()
        .zip(gt.values())
        .map(|(&p, &g)| (f64::from(p) / pm - f64::from(g) / gm).abs())
        .sum();
    Ok((1.0 - 0.5 * l1).clamp(0.0, 1.0))
}

fn fixations(gt: &Heatmap, threshold: f64) -> Vec<bool> {
    gt.values().iter().map(|&g| f64::from(g) > threshold).collect()
}

/// Mean z-scored prediction over fixation pixels (`gt > threshold`).
pub fn heatmap_nss(pred: &Heatmap, gt: &Heatmap, threshold: f64) -> Result<f64> {
    pred.check_same_shape(gt)?;
    let p = widen(pred);
    let m = mean(&p);
    let var = p.iter().map(|v| (v - m).powi(2)).sum::<f64>() / p.len() as f64;
    if var == 0.0 {
        return Err(Error::Undefined("NSS of a constant prediction".into()));
    }
    let sd = var.sqrt();
    let fix = fixations(gt, threshold);
    let (sum, n) = p
        .iter()
        .zip(&fix)
        .filter(|(_, f)| **f)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + (v - m) / sd, n + 1));
    if n == 0 {
        return Err(Error::Undefined("NSS with no fixation pixels".into()));
    }
    Ok(sum / n as f64)
}

/// ROC area with fixation pixels as positives and all other pixels as
/// negatives. Computed from average ranks, which equals trapezoidal
/// integration over distinct prediction thresholds; ties count one half.
pub fn heatmap_auc_judd(pred: &Heatmap, gt: &Heatmap, threshold: f64) -> Result<f64> {
    pred.check_same_shape(gt)?;
    let fix = fixations(gt, threshold);
    let n_pos = fix.iter().filter(|f| **f).count();
    let n_neg = fix.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Undefined(
            "AUC-Judd needs both fixation and non-fixation pixels".into(),
        ));
    }
    let ranks = average_ranks(&widen(pred));
    let pos_rank_sum: f64 = ranks.iter().zip(&fix).filter(|(_, f)| **f).map(|(r, _)| r).sum();
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Ok(((pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy)]
pub struct MetricConfig {
    /// Ground truth with mass at or below this is blank (`GT=0`).
    pub blank_threshold: f64,
    /// Fixation pixels for NSS and AUC-Judd are those with `gt > fixation_threshold`.
    pub fixation_threshold: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            blank_threshold: 0.0,
            fixation_threshold: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CorrelationPair {
    pub plcc: Option<f64>,
    pub srcc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreCorrelations {
    pub alignment: CorrelationPair,
    pub aesthetics: CorrelationPair,
    pub plausibility: CorrelationPair,
    pub overall: CorrelationPair,
    pub average: CorrelationPair,
}

impl ScoreCorrelations {
    pub fn dimensions(&self) -> [(&'static str, CorrelationPair); 5] {
        [
            ("alignment", self.alignment),
            ("aesthetics", self.aesthetics),
            ("plausibility", self.plausibility),
            ("overall", self.overall),
            ("average", self.average),
        ]
    }
}

/// Heatmap metrics for one heatmap type. `mse_all` covers every record,
/// `mse_gt0` the blank-ground-truth records, the rest only `GT>0` records.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HeatmapBlock {
    pub n_all: usize,
    pub n_gt0: usize,
    pub n_gt_pos: usize,
    pub mse_all: Option<f64>,
    pub mse_gt0: Option<f64>,
    pub cc: Option<f64>,
    pub kld: Option<f64>,
    pub sim: Option<f64>,
    pub nss: Option<f64>,
    pub auc_judd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_records: usize,
    pub scores: ScoreCorrelations,
    pub artifact: HeatmapBlock,
    pub misalignment: HeatmapBlock,
    /// Per-record metrics that were undefined and left out of an average.
    pub notes: Vec<String>,
}

#[derive(Debug, Default)]
struct SampleMetrics {
    blank_gt: bool,
    mse: f64,
    cc: Option<Result<f64>>,
    kld: Option<Result<f64>>,
    sim: Option<Result<f64>>,
    nss: Option<Result<f64>>,
    auc: Option<Result<f64>>,
}

fn sample_metrics(pred: Option<&Heatmap>, gt: Option<&Heatmap>, cfg: &MetricConfig) -> Result<Option<SampleMetrics>> {
    // one absent side of a pair is read as a blank map of the other's shape
    let blank_like = |h: &Heatmap| Heatmap::zeros(h.width(), h.height());
    let (pred, gt) = match (pred, gt) {
        (None, None) => return Ok(None),
        (Some(p), Some(g)) => (p.clone(), g.clone()),
        (Some(p), None) => (p.clone(), blank_like(p)?),
        (None, Some(g)) => (blank_like(g)?, g.clone()),
    };
    let mut m = SampleMetrics {
        blank_gt: gt.is_blank(cfg.blank_threshold),
        mse: heatmap_mse(&pred, &gt)?,
        ..Default::default()
    };
    if !m.blank_gt {
        m.cc = Some(heatmap_cc(&pred, &gt));
        m.kld = Some(heatmap_kld(&pred, &gt));
        m.sim = Some(heatmap_sim(&pred, &gt));
        m.nss = Some(heatmap_nss(&pred, &gt, cfg.fixation_threshold));
        m.auc = Some(heatmap_auc_judd(&pred, &gt, cfg.fixation_threshold));
    }
    Ok(Some(m))
}

#[derive(Default)]
struct Accumulator {
    sum: f64,
    n: usize,
}

impl Accumulator {
    fn push(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }

    fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

fn reduce_block(kind: &str, ids: &[&str], samples: &[Option<SampleMetrics>], notes: &mut Vec<String>) -> HeatmapBlock {
    let mut acc: [Accumulator; 7] = Default::default();
    let mut block = HeatmapBlock::default();
    for (id, s) in ids.iter().zip(samples) {
        let Some(s) = s else { continue };
        block.n_all += 1;
        acc[0].push(s.mse);
        if s.blank_gt {
            block.n_gt0 += 1;
            acc[1].push(s.mse);
            continue;
        }
        block.n_gt_pos += 1;
        let metrics = [("cc", &s.cc), ("kld", &s.kld), ("sim", &s.sim), ("nss", &s.nss), ("auc_judd", &s.auc)];
        for (slot, (name, value)) in acc[2..].iter_mut().zip(metrics) {
            match value {
                Some(Ok(v)) => slot.push(*v),
                Some(Err(e)) => notes.push(format!("{kind} {name} skipped for `{id}`: {e}")),
                None => {}
            }
        }
    }
    block.mse_all = acc[0].mean();
    block.mse_gt0 = acc[1].mean();
    block.cc = acc[2].mean();
    block.kld = acc[3].mean();
    block.sim = acc[4].mean();
    block.nss = acc[5].mean();
    block.auc_judd = acc[6].mean();
    block
}

fn correlation_pair(name: &str, xs: &[f64], ys: &[f64], notes: &mut Vec<String>) -> CorrelationPair {
    let mut get = |label: &str, r: Result<f64>| match r {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("{name} {label} undefined: {e}"));
            None
        }
    };
    CorrelationPair {
        plcc: get("plcc", plcc(xs, ys)),
        srcc: get("srcc", srcc(xs, ys)),
    }
}

/// Pairs predictions with ground truth by id (ground-truth order) and computes
/// the full report. Dimension mismatches in any record are collected and
/// returned together as one error.
pub fn evaluate_dataset(preds: &[EvaluationRecord], gts: &[EvaluationRecord], cfg: &MetricConfig) -> Result<MetricReport> {
    if preds.len() != gts.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} ground-truth records",
            preds.len(),
            gts.len()
        )));
    }
    let mut by_id: HashMap<&str, &EvaluationRecord> = HashMap::with_capacity(preds.len());
    for p in preds {
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate prediction id `{}`", p.id)));
        }
    }
    let pairs = gts
        .iter()
        .map(|g| {
            by_id
                .get(g.id.as_str())
                .map(|p| (*p, g))
                .ok_or_else(|| Error::InvalidArgument(format!("no prediction for id `{}`", g.id)))
        })
        .collect::<Result<Vec<_>>>()?;

    let per_record: Vec<(Result<Option<SampleMetrics>>, Result<Option<SampleMetrics>>)> = pairs
        .par_iter()
        .map(|(p, g)| {
            (
                sample_metrics(p.artifact_heatmap.as_ref(), g.artifact_heatmap.as_ref(), cfg),
                sample_metrics(p.misalignment_heatmap.as_ref(), g.misalignment_heatmap.as_ref(), cfg),
            )
        })
        .collect();

    let mut errors = Vec::new();
    let mut art = Vec::with_capacity(pairs.len());
    let mut mis = Vec::with_capacity(pairs.len());
    for ((_, g), (a, m)) in pairs.iter().zip(per_record) {
        for (kind, res, out) in [("artifact", a, &mut art), ("misalignment", m, &mut mis)] {
            match res {
                Ok(s) => out.push(s),
                Err(e) => {
                    errors.push(format!("record `{}` {kind} heatmap: {e}", g.id));
                    out.push(None);
                }
            }
        }
    }
    if !errors.is_empty() {
        return Err(Error::Aggregate(errors));
    }

    let mut notes = Vec::new();
    let column = |sel: fn(&ScoreVector) -> f64| -> (Vec<f64>, Vec<f64>) {
        pairs.iter().map(|(p, g)| (sel(&p.scores), sel(&g.scores))).unzip()
    };
    let selectors: [fn(&ScoreVector) -> f64; 4] = [|s| s.alignment, |s| s.aesthetics, |s| s.plausibility, |s| s.overall];
    let mut dims = [CorrelationPair::default(); 4];
    for ((slot, sel), name) in dims.iter_mut().zip(selectors).zip(ScoreVector::NAMES) {
        let (xs, ys) = column(sel);
        *slot = correlation_pair(name, &xs, &ys, &mut notes);
    }
    let avg = |get: fn(&CorrelationPair) -> Option<f64>| {
        let vals: Vec<f64> = dims.iter().filter_map(get).collect();
        (!vals.is_empty()).then(|| mean(&vals))
    };
    let scores = ScoreCorrelations {
        alignment: dims[0],
        aesthetics: dims[1],
        plausibility: dims[2],
        overall: dims[3],
        average: CorrelationPair {
            plcc: avg(|c| c.plcc),
            srcc: avg(|c| c.srcc),
        },
    };

    let ids: Vec<&str> = gts.iter().map(|g| g.id.as_str()).collect();
    let artifact = reduce_block("artifact", &ids, &art, &mut notes);
    let misalignment = reduce_block("misalignment", &ids, &mis, &mut notes);
    Ok(MetricReport {
        n_records: gts.len(),
        scores,
        artifact,
        misalignment,
        notes,
    })
}
