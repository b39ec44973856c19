//! Detection AP/mAP, keypoint PCK and per-dataset aggregation.
//!
//! Evaluation is single-class: detection categories are carried through
//! but not used for matching.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, InstanceId, PixelBox};
use crate::keypoints::{AnnotationRecord, KeypointSubset, SchemaTag, Visibility};

/// Number of points on the recall grid (0.00, 0.01, …, 1.00).
pub const RECALL_POINTS: usize = 101;

/// IoU thresholds 0.50, 0.55, …, 0.95.
pub fn coco_iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: u64,
    pub bbox: PixelBox,
    pub score: f64,
    #[serde(default = "default_category")]
    pub category_id: u32,
}

fn default_category() -> u32 {
    1
}

impl Detection {
    pub fn new(image_id: u64, bbox: PixelBox, score: f64) -> Self {
        Detection {
            image_id,
            bbox,
            score,
            category_id: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::Evaluation(format!("score {} outside [0, 1]", self.score)));
        }
        if !(self.bbox.is_valid() && self.bbox.area() > 0.0) {
            return Err(Error::Evaluation(format!("detection box {:?} has no area", self.bbox)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox {
    pub image_id: u64,
    pub bbox: PixelBox,
}

pub fn gt_boxes(records: &[AnnotationRecord]) -> Vec<GtBox> {
    records
        .iter()
        .map(|r| GtBox {
            image_id: r.image_id,
            bbox: r.bbox,
        })
        .collect()
}

/// Per-detection true-positive flags, in the order of `order`.
fn match_detections(dets: &[Detection], gts: &[GtBox], order: &[usize], thresh: f64) -> Vec<bool> {
    let mut gt_by_image: HashMap<u64, Vec<usize>> = HashMap::new();
    for (k, g) in gts.iter().enumerate() {
        gt_by_image.entry(g.image_id).or_default().push(k);
    }
    let mut det_by_image: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (rank, &d) in order.iter().enumerate() {
        det_by_image.entry(dets[d].image_id).or_default().push(rank);
    }
    let per_image: Vec<Vec<(usize, bool)>> = det_by_image
        .into_par_iter()
        .map(|(image, ranks)| {
            let cands = gt_by_image.get(&image).map(Vec::as_slice).unwrap_or(&[]);
            let mut taken = vec![false; cands.len()];
            ranks
                .into_iter()
                .map(|rank| {
                    let d = &dets[order[rank]];
                    let mut best: Option<(usize, f64)> = None;
                    for (c, &g) in cands.iter().enumerate() {
                        if taken[c] {
                            continue;
                        }
                        let o = iou(&d.bbox, &gts[g].bbox);
                        if o >= thresh && best.is_none_or(|(_, b)| o > b) {
                            best = Some((c, o));
                        }
                    }
                    if let Some((c, _)) = best {
                        taken[c] = true;
                    }
                    (rank, best.is_some())
                })
                .collect()
        })
        .collect();
    let mut tp = vec![false; order.len()];
    for (rank, hit) in per_image.into_iter().flatten() {
        tp[rank] = hit;
    }
    tp
}

/// 101-point interpolated AP at one IoU threshold; `None` without GT.
pub fn average_precision(dets: &[Detection], gts: &[GtBox], iou_thresh: f64) -> Result<Option<f64>> {
    for d in dets {
        d.validate()?;
    }
    if gts.is_empty() {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let tp = match_detections(dets, gts, &order, iou_thresh);
    Ok(Some(interpolated_ap(&tp, gts.len())))
}

/// Area under the monotone precision envelope on the recall grid, given the
/// ranked true-positive flags. Recall levels are compared in integers.
fn interpolated_ap(tp: &[bool], n_gt: usize) -> f64 {
    let mut prefix = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (k, &t) in tp.iter().enumerate() {
        hits += t as usize;
        prefix.push((hits, hits as f64 / (k + 1) as f64));
    }
    // Envelope from the right: best precision at this rank or later.
    let mut env = vec![0.0f64; prefix.len()];
    let mut run = 0.0f64;
    for k in (0..prefix.len()).rev() {
        run = run.max(prefix[k].1);
        env[k] = run;
    }
    let mut total = 0.0;
    let mut k = 0;
    for r in 0..RECALL_POINTS {
        while k < prefix.len() && prefix[k].0 * 100 < r * n_gt {
            k += 1;
        }
        if k < prefix.len() {
            total += env[k];
        }
    }
    total / RECALL_POINTS as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanAp {
    #[serde(rename = "mAP50")]
    pub map50: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
}

/// AP at 0.50 and the mean over [`coco_iou_thresholds`]; `None` without GT.
pub fn mean_ap(dets: &[Detection], gts: &[GtBox]) -> Result<Option<MeanAp>> {
    let mut aps = Vec::with_capacity(10);
    for t in coco_iou_thresholds() {
        match average_precision(dets, gts, t)? {
            Some(ap) => aps.push(ap),
            None => return Ok(None),
        }
    }
    Ok(Some(MeanAp {
        map50: aps[0],
        map: aps.iter().sum::<f64>() / aps.len() as f64,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct PckCount {
    pub correct: usize,
    pub evaluated: usize,
}

impl PckCount {
    pub fn ratio(&self) -> Option<f64> {
        (self.evaluated > 0).then(|| self.correct as f64 / self.evaluated as f64)
    }
}

impl std::ops::Add for PckCount {
    type Output = PckCount;
    fn add(self, o: PckCount) -> PckCount {
        PckCount {
            correct: self.correct + o.correct,
            evaluated: self.evaluated + o.evaluated,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PckOptions<'a> {
    pub alpha: f64,
    pub subset: &'a KeypointSubset,
    /// Count only visibility-2 ground truth.
    pub visible_only: bool,
}

/// PCK tally for one instance. `pred` holds one `(u, v)` per schema slot.
pub fn pck(pred: &[[f64; 2]], gt: &AnnotationRecord, opts: &PckOptions) -> Result<PckCount> {
    if !(opts.alpha > 0.0 && opts.alpha.is_finite()) {
        return Err(Error::Evaluation(format!("alpha {} must be positive", opts.alpha)));
    }
    if gt.schema == SchemaTag::Boxes || opts.subset.schema != gt.schema {
        return Err(Error::Evaluation(format!(
            "cannot score {} keypoints with a {} subset",
            gt.schema.as_str(),
            opts.subset.schema.as_str()
        )));
    }
    if pred.len() != gt.keypoints.len() {
        return Err(Error::Evaluation(format!(
            "prediction has {} keypoints, ground truth {}",
            pred.len(),
            gt.keypoints.len()
        )));
    }
    let thr = opts.alpha * gt.bbox.max_dim();
    let mut c = PckCount::default();
    for (slot, (p, g)) in pred.iter().zip(&gt.keypoints).enumerate() {
        let counted = match g.visibility {
            Visibility::Unlabeled => false,
            Visibility::Occluded => !opts.visible_only,
            Visibility::Visible => true,
        };
        if !counted || !opts.subset.contains(slot) {
            continue;
        }
        c.evaluated += 1;
        if (p[0] - g.u).hypot(p[1] - g.v) <= thr {
            c.correct += 1;
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointPrediction {
    pub image_id: u64,
    pub instance_id: InstanceId,
    pub points: Vec<[f64; 2]>,
}

impl KeypointPrediction {
    pub fn from_record(r: &AnnotationRecord) -> Self {
        KeypointPrediction {
            image_id: r.image_id,
            instance_id: r.instance_id,
            points: r.keypoints.iter().map(|k| [k.u, k.v]).collect(),
        }
    }
}

/// Dataset-level tally. Predictions pair with ground truth by
/// `(image_id, instance_id)`; ground truth without a prediction counts
/// all its evaluated keypoints as wrong.
pub fn pck_dataset(preds: &[KeypointPrediction], gts: &[AnnotationRecord], opts: &PckOptions) -> Result<PckCount> {
    let mut by_key: HashMap<(u64, InstanceId), &KeypointPrediction> = HashMap::with_capacity(preds.len());
    for p in preds {
        if by_key.insert((p.image_id, p.instance_id), p).is_some() {
            return Err(Error::Evaluation(format!(
                "duplicate prediction for image {} instance {}",
                p.image_id, p.instance_id
            )));
        }
    }
    let mut order: Vec<usize> = (0..gts.len()).collect();
    order.sort_by_key(|&k| (gts[k].image_id, gts[k].instance_id));
    let counts: Vec<Result<PckCount>> = order
        .par_iter()
        .map(|&k| {
            let g = &gts[k];
            match by_key.get(&(g.image_id, g.instance_id)) {
                Some(p) => pck(&p.points, g, opts),
                None => {
                    let far = vec![[f64::INFINITY; 2]; g.keypoints.len()];
                    pck(&far, g, opts)
                }
            }
        })
        .collect();
    counts.into_iter().try_fold(PckCount::default(), |acc, c| Ok(acc + c?))
}

#[derive(Debug, Deserialize)]
struct RawKeypointResult {
    image_id: u64,
    instance_id: Option<InstanceId>,
    keypoints: Vec<f64>,
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// COCO detection results: `[{image_id, bbox, score, category_id?}]`.
pub fn load_detections(path: &Path) -> Result<Vec<Detection>> {
    let dets: Vec<Detection> = parse_json(path)?;
    for d in &dets {
        d.validate()?;
    }
    Ok(dets)
}

/// COCO keypoint results with an `instance_id` per entry. The third value
/// of each triplet (a confidence in most tools) is ignored.
pub fn load_keypoint_predictions(path: &Path) -> Result<Vec<KeypointPrediction>> {
    let raw: Vec<RawKeypointResult> = parse_json(path)?;
    raw.into_iter()
        .enumerate()
        .map(|(k, r)| {
            let instance_id = r
                .instance_id
                .ok_or_else(|| Error::Evaluation(format!("keypoint result {k} has no instance_id")))?;
            if r.keypoints.len() % 3 != 0 {
                return Err(Error::Evaluation(format!("keypoint result {k} is not a list of triplets")));
            }
            Ok(KeypointPrediction {
                image_id: r.image_id,
                instance_id,
                points: r.keypoints.chunks_exact(3).map(|c| [c[0], c[1]]).collect(),
            })
        })
        .collect()
}

pub fn keypoint_results_json(preds: &[KeypointPrediction]) -> serde_json::Value {
    serde_json::Value::Array(
        preds
            .iter()
            .map(|p| {
                let flat: Vec<f64> = p.points.iter().flat_map(|q| [q[0], q[1], 1.0]).collect();
                serde_json::json!({ "image_id": p.image_id, "instance_id": p.instance_id, "keypoints": flat, "score": 1.0 })
            })
            .collect(),
    )
}

/// Metric names in report column order.
pub const METRIC_NAMES: [&str; 4] = ["mAP50", "mAP", "P_0.05", "P_0.1"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetMetrics {
    pub name: String,
    pub image_count: usize,
    pub values: BTreeMap<String, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub metrics: Vec<String>,
    pub datasets: Vec<DatasetMetrics>,
    pub average: BTreeMap<String, Option<f64>>,
    pub weighted_average: BTreeMap<String, Option<f64>>,
}

/// Plain and image-count-weighted means over the datasets where each
/// metric is present.
pub fn aggregate(per_dataset: Vec<DatasetMetrics>) -> Result<EvalReport> {
    if per_dataset.is_empty() {
        return Err(Error::Aggregation("no datasets to aggregate".into()));
    }
    let mut metrics: Vec<String> = Vec::new();
    let mut seen = HashSet::new();
    for name in METRIC_NAMES.iter().map(|s| s.to_string()).chain(per_dataset.iter().flat_map(|d| d.values.keys().cloned())) {
        if per_dataset.iter().any(|d| d.values.contains_key(&name)) && seen.insert(name.clone()) {
            metrics.push(name);
        }
    }
    for d in &per_dataset {
        if d.image_count == 0 {
            return Err(Error::Aggregation(format!("dataset {} has no images", d.name)));
        }
        for (m, v) in &d.values {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(v) {
                    return Err(Error::Aggregation(format!("{} of {} is {v}, outside [0, 1]", m, d.name)));
                }
            }
        }
    }
    let mut average = BTreeMap::new();
    let mut weighted_average = BTreeMap::new();
    for m in &metrics {
        let present: Vec<(f64, f64)> = per_dataset
            .iter()
            .filter_map(|d| d.values.get(m).copied().flatten().map(|v| (v, d.image_count as f64)))
            .collect();
        if present.is_empty() {
            average.insert(m.clone(), None);
            weighted_average.insert(m.clone(), None);
            continue;
        }
        let mean = present.iter().map(|p| p.0).sum::<f64>() / present.len() as f64;
        let wsum: f64 = present.iter().map(|p| p.1).sum();
        let wmean = present.iter().map(|p| p.0 * p.1).sum::<f64>() / wsum;
        average.insert(m.clone(), Some(mean));
        weighted_average.insert(m.clone(), Some(wmean));
    }
    Ok(EvalReport {
        metrics,
        datasets: per_dataset,
        average,
        weighted_average,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Aligned text table: one row per dataset, then the two averages.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut header = vec!["Dataset".to_string(), "Images".to_string()];
        header.extend(self.metrics.iter().cloned());
        rows.push(header);
        for d in &self.datasets {
            let mut r = vec![d.name.clone(), d.image_count.to_string()];
            r.extend(self.metrics.iter().map(|m| fmt(d.values.get(m).copied().flatten())));
            rows.push(r);
        }
        for (label, vals) in [("Average", &self.average), ("W. Avg.", &self.weighted_average)] {
            let mut r = vec![label.to_string(), String::new()];
            r.extend(self.metrics.iter().map(|m| fmt(vals.get(m).copied().flatten())));
            rows.push(r);
        }
        let cols = rows[0].len();
        let widths: Vec<usize> = (0..cols).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for r in &rows {
            let mut line = String::new();
            for (c, cell) in r.iter().enumerate() {
                if c == 0 {
                    let _ = write!(line, "{cell:<w$}", w = widths[c]);
                } else {
                    let _ = write!(line, "  {cell:>w$}", w = widths[c]);
                }
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    }
}
