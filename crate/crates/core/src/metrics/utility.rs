//! COCO-protocol box evaluation: greedy score-ordered matching, 101-point
//! interpolated AP, averaged over IoU thresholds 0.50:0.95.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::wire::DetectionRecord;
use crate::backends::Detection;
use crate::dataset::DatasetDescriptor;
use crate::imaging::{bbox_iou, BBox};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("detection for unknown category {0}")]
    UnknownCategory(u64),
    #[error("detection for unknown image {0}")]
    UnknownImage(u64),
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error("no category has ground truth to evaluate")]
    NothingToEvaluate,
}

/// Evenly spaced values computed as `start + i * step`, the way numpy's
/// `linspace` does, so thresholds agree bit-for-bit with the reference tools.
fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![start];
    }
    let step = (stop - start) / (n - 1) as f64;
    (0..n).map(|i| start + i as f64 * step).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub max_dets: usize,
    pub recall_points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { iou_thresholds: linspace(0.5, 0.95, 10), max_dets: 100, recall_points: 101 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.iou_thresholds.is_empty() {
            return Err(EvalError::Config("no IoU thresholds".into()));
        }
        if self.iou_thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvalError::Config("IoU thresholds must be strictly increasing".into()));
        }
        if self.iou_thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(EvalError::Config("IoU thresholds must lie in (0, 1]".into()));
        }
        if self.max_dets == 0 {
            return Err(EvalError::Config("max_dets must be at least 1".into()));
        }
        if self.recall_points < 2 {
            return Err(EvalError::Config("need at least two recall points".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthBox {
    pub bbox: BBox,
    pub iscrowd: bool,
    /// Segment area as stored in the annotation; used for area ranges.
    pub area: f64,
}

impl GroundTruthBox {
    pub fn new(bbox: BBox) -> Self {
        Self { bbox, iscrowd: false, area: bbox.area() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchLabel {
    Tp,
    Fp,
    /// Matched a crowd or out-of-range region; counts as neither.
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredLabel {
    pub score: f64,
    pub label: MatchLabel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AreaRange {
    pub name: &'static str,
    pub lo: f64,
    pub hi: f64,
}

pub const AREA_ALL: AreaRange = AreaRange { name: "all", lo: 0.0, hi: 1e10 };
pub const AREA_RANGES: [AreaRange; 4] = [
    AREA_ALL,
    AreaRange { name: "small", lo: 0.0, hi: 1024.0 },
    AreaRange { name: "medium", lo: 1024.0, hi: 9216.0 },
    AreaRange { name: "large", lo: 9216.0, hi: 1e10 },
];

fn outside(area: f64, r: &AreaRange) -> bool {
    area < r.lo || area > r.hi
}

/// IoU against a crowd region uses the detection's own area as denominator.
fn crowd_iou(det: &BBox, crowd: &BBox) -> f64 {
    let ix = ((det.x + det.w).min(crowd.x + crowd.w) - det.x.max(crowd.x)).max(0.0);
    let iy = ((det.y + det.h).min(crowd.y + crowd.h) - det.y.max(crowd.y)).max(0.0);
    let a = det.area();
    if a <= 0.0 {
        0.0
    } else {
        ix * iy / a
    }
}

/// Single image, single category. Detections are visited by descending score
/// (stable) and each takes the unmatched ground truth with the highest
/// IoU >= `iou_thr`, ties going to the lowest index. Regular boxes are
/// preferred over crowd/ignored ones. Returns labels in visiting order.
pub fn match_detections(gts: &[GroundTruthBox], dets: &[Detection], iou_thr: f64) -> Vec<ScoredLabel> {
    match_in_range(gts, dets, iou_thr, &AREA_ALL)
}

fn match_in_range(gts: &[GroundTruthBox], dets: &[Detection], iou_thr: f64, range: &AreaRange) -> Vec<ScoredLabel> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|a, b| dets[*b].score.total_cmp(&dets[*a].score));
    let ignore: Vec<bool> = gts.iter().map(|g| g.iscrowd || outside(g.area, range)).collect();
    // Regular ground truth first, keeping index order within each group.
    let mut gt_order: Vec<usize> = (0..gts.len()).collect();
    gt_order.sort_by_key(|g| ignore[*g]);
    let mut taken = vec![false; gts.len()];
    let floor = iou_thr.min(1.0 - 1e-10);

    order
        .into_iter()
        .map(|d| {
            let det = &dets[d];
            let mut best = floor;
            let mut matched: Option<usize> = None;
            for &g in &gt_order {
                if taken[g] && !gts[g].iscrowd {
                    continue;
                }
                if let Some(m) = matched {
                    if !ignore[m] && ignore[g] {
                        break;
                    }
                }
                let iou = if gts[g].iscrowd { crowd_iou(&det.bbox, &gts[g].bbox) } else { bbox_iou(&det.bbox, &gts[g].bbox) };
                if iou < best || (matched.is_some() && iou == best) {
                    continue;
                }
                best = iou;
                matched = Some(g);
            }
            let label = match matched {
                Some(m) => {
                    if !gts[m].iscrowd {
                        taken[m] = true;
                    }
                    if ignore[m] {
                        MatchLabel::Ignored
                    } else {
                        MatchLabel::Tp
                    }
                }
                None if outside(det.bbox.area(), range) => MatchLabel::Ignored,
                None => MatchLabel::Fp,
            };
            ScoredLabel { score: det.score, label }
        })
        .collect()
}

/// Interpolated AP over `recall_points` evenly spaced recall levels. `labels`
/// must already be in descending score order; ignored entries are skipped.
/// Returns `None` when there is no ground truth to recall.
pub fn average_precision(labels: &[MatchLabel], num_gt: usize, recall_points: usize) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut recall = Vec::with_capacity(labels.len());
    let mut precision = Vec::with_capacity(labels.len());
    for l in labels {
        match l {
            MatchLabel::Tp => tp += 1,
            MatchLabel::Fp => fp += 1,
            MatchLabel::Ignored => continue,
        }
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let thresholds = linspace(0.0, 1.0, recall_points);
    let sum: f64 = thresholds
        .iter()
        .map(|r| {
            let idx = recall.partition_point(|rc| rc < r);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .sum();
    Some(sum / recall_points as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    /// AP@[0.50:0.95], all areas.
    pub mean_ap: f64,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap_small: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
    /// Per-category AP averaged over thresholds; categories without ground
    /// truth are absent.
    pub per_category_ap: BTreeMap<u64, f64>,
    #[serde(default)]
    pub category_names: BTreeMap<u64, String>,
    pub relative_to_baseline: Option<f64>,
}

pub fn relative_to_baseline(value: f64, baseline: f64) -> f64 {
    value / baseline
}

impl UtilityReport {
    pub fn with_baseline(mut self, baseline_ap: f64) -> Self {
        self.relative_to_baseline = Some(relative_to_baseline(self.mean_ap, baseline_ap));
        self
    }

    /// One row per category: name, AP, and share of baseline AP when a
    /// baseline report is given.
    pub fn category_table(&self, baseline: Option<&UtilityReport>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<20} {:>8} {:>10}", "Category", "AP", "vs. base");
        let mut row = |name: &str, ap: f64, base: Option<f64>| {
            let rel = base.map(|b| format_percent(relative_to_baseline(ap, b))).unwrap_or_else(|| "-".into());
            let _ = writeln!(out, "{name:<20} {ap:>8.3} {rel:>10}");
        };
        for (id, ap) in &self.per_category_ap {
            let name = self.category_names.get(id).cloned().unwrap_or_else(|| id.to_string());
            row(&name, *ap, baseline.and_then(|b| b.per_category_ap.get(id).copied()));
        }
        row("All", self.mean_ap, baseline.map(|b| b.mean_ap));
        out
    }
}

/// Ratio rendered as a percentage with two decimals, e.g. `87.50%`.
pub fn format_percent(ratio: f64) -> String {
    format!("{:.2}%", ratio * 100.0)
}

/// Groups a COCO results list by image id, preserving file order.
pub fn group_results(records: &[DetectionRecord]) -> HashMap<u64, Vec<Detection>> {
    let mut out: HashMap<u64, Vec<Detection>> = HashMap::new();
    for r in records {
        out.entry(r.image_id).or_default().push(r.detection());
    }
    out
}

/// Evaluates detections against a ground-truth dataset.
pub fn evaluate(
    gt: &DatasetDescriptor,
    dets: &HashMap<u64, Vec<Detection>>,
    cfg: &EvalConfig,
) -> Result<UtilityReport, EvalError> {
    cfg.validate()?;
    let cat_ids: Vec<u64> = {
        let mut v: Vec<u64> = gt.categories.iter().map(|c| c.id).collect();
        v.sort_unstable();
        v
    };
    let mut image_ids: Vec<u64> = gt.images.iter().map(|i| i.id).collect();
    image_ids.sort_unstable();
    for (img, ds) in dets {
        if image_ids.binary_search(img).is_err() {
            return Err(EvalError::UnknownImage(*img));
        }
        if let Some(d) = ds.iter().find(|d| cat_ids.binary_search(&d.category_id).is_err()) {
            return Err(EvalError::UnknownCategory(d.category_id));
        }
    }

    let mut gt_cells: HashMap<(u64, u64), Vec<GroundTruthBox>> = HashMap::new();
    for a in &gt.annotations {
        gt_cells.entry((a.image_id, a.category_id)).or_default().push(GroundTruthBox {
            bbox: BBox::from(a.bbox),
            iscrowd: a.is_crowd(),
            area: a.area,
        });
    }
    let mut dt_cells: HashMap<(u64, u64), Vec<Detection>> = HashMap::new();
    for img in &image_ids {
        if let Some(ds) = dets.get(img) {
            for d in ds {
                dt_cells.entry((*img, d.category_id)).or_default().push(*d);
            }
        }
    }
    // Keep the top `max_dets` per image and category.
    for ds in dt_cells.values_mut() {
        ds.sort_by(|a, b| b.score.total_cmp(&a.score));
        ds.truncate(cfg.max_dets);
    }

    // ap[area][threshold][category]
    let mut ap = vec![vec![BTreeMap::new(); cfg.iou_thresholds.len()]; AREA_RANGES.len()];
    let empty_gt: Vec<GroundTruthBox> = Vec::new();
    let empty_dt: Vec<Detection> = Vec::new();
    for (ai, range) in AREA_RANGES.iter().enumerate() {
        for &cat in &cat_ids {
            let num_gt: usize = image_ids
                .iter()
                .filter_map(|i| gt_cells.get(&(*i, cat)))
                .flatten()
                .filter(|g| !g.iscrowd && !outside(g.area, range))
                .count();
            if num_gt == 0 {
                continue;
            }
            for (ti, thr) in cfg.iou_thresholds.iter().enumerate() {
                let mut all: Vec<ScoredLabel> = Vec::new();
                for img in &image_ids {
                    let g = gt_cells.get(&(*img, cat)).unwrap_or(&empty_gt);
                    let d = dt_cells.get(&(*img, cat)).unwrap_or(&empty_dt);
                    if g.is_empty() && d.is_empty() {
                        continue;
                    }
                    all.extend(match_in_range(g, d, *thr, range));
                }
                // Stable: equal scores keep image order.
                all.sort_by(|a, b| b.score.total_cmp(&a.score));
                let labels: Vec<MatchLabel> = all.iter().map(|s| s.label).collect();
                if let Some(v) = average_precision(&labels, num_gt, cfg.recall_points) {
                    ap[ai][ti].insert(cat, v);
                }
            }
        }
    }

    let mean = |m: &BTreeMap<u64, f64>| -> Option<f64> {
        (!m.is_empty()).then(|| m.values().sum::<f64>() / m.len() as f64)
    };
    let mean_over_thresholds = |ai: usize| -> Option<f64> {
        let vals: Vec<f64> = ap[ai].iter().flat_map(|m| m.values().copied()).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let at_threshold = |t: f64| -> Option<f64> {
        cfg.iou_thresholds.iter().position(|x| (x - t).abs() < 1e-9).and_then(|ti| mean(&ap[0][ti]))
    };

    let mut per_category_ap = BTreeMap::new();
    for &cat in &cat_ids {
        let vals: Vec<f64> = ap[0].iter().filter_map(|m| m.get(&cat).copied()).collect();
        if !vals.is_empty() {
            per_category_ap.insert(cat, vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    let mean_ap = mean_over_thresholds(0).ok_or(EvalError::NothingToEvaluate)?;
    Ok(UtilityReport {
        mean_ap,
        ap50: at_threshold(0.5),
        ap75: at_threshold(0.75),
        ap_small: mean_over_thresholds(1),
        ap_medium: mean_over_thresholds(2),
        ap_large: mean_over_thresholds(3),
        per_category_ap,
        category_names: gt.categories.iter().map(|c| (c.id, c.name.clone())).collect(),
        relative_to_baseline: None,
    })
}
