//! Segmentation metrics: per-class IoU and its mean, pixel accuracy, and
//! mask average precision (AP^r) at a given IoU threshold.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{InstanceSet, LabelMap};

/// Default AP^r threshold sweep.
pub const DEFAULT_IOU_THRESHOLDS: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

fn same_shape(pred: &LabelMap, gt: &LabelMap) -> Result<()> {
    if (pred.rows(), pred.cols()) != (gt.rows(), gt.cols()) {
        return Err(Error::shape(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.rows(),
            pred.cols(),
            gt.rows(),
            gt.cols()
        )));
    }
    Ok(())
}

/// Per-class IoU (`None` for classes absent from both maps) and the mean
/// over defined classes.
pub fn miou(pred: &LabelMap, gt: &LabelMap, num_labels: usize) -> Result<(Vec<Option<f64>>, f64)> {
    same_shape(pred, gt)?;
    let mut inter = vec![0usize; num_labels];
    let mut pred_n = vec![0usize; num_labels];
    let mut gt_n = vec![0usize; num_labels];
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        let (p, g) = (p as usize, g as usize);
        if p >= num_labels || g >= num_labels {
            return Err(Error::OutOfRange(format!("label {} >= {num_labels}", p.max(g))));
        }
        pred_n[p] += 1;
        gt_n[g] += 1;
        if p == g {
            inter[p] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = (0..num_labels)
        .map(|c| {
            let union = pred_n[c] + gt_n[c] - inter[c];
            (union > 0).then(|| inter[c] as f64 / union as f64)
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = if defined.is_empty() { 0.0 } else { defined.iter().sum::<f64>() / defined.len() as f64 };
    Ok((per_class, mean))
}

pub fn pixel_accuracy(pred: &LabelMap, gt: &LabelMap) -> Result<f64> {
    same_shape(pred, gt)?;
    let n = pred.labels().len();
    if n == 0 {
        return Err(Error::invalid("empty label map"));
    }
    let hits = pred.labels().iter().zip(gt.labels()).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / n as f64)
}

pub fn mask_iou(a: &[bool], b: &[bool]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    /// AP per class that has at least one ground-truth instance.
    pub per_class: BTreeMap<u32, f64>,
    /// Mean over `per_class`; `None` when no class has ground truth.
    pub mean: Option<f64>,
}

/// Mask average precision at one IoU threshold.
///
/// Per class, predictions are visited by descending score (ties keep input
/// order) and each is matched to the still-unmatched ground truth of that
/// class with the highest mask IoU (ties to the earlier ground truth). The
/// match is a true positive iff its IoU reaches the threshold; otherwise the
/// prediction is a false positive and the ground truth stays available. AP is
/// the area under the precision/recall curve after making precision
/// non-increasing from the right (all-point interpolation).
pub fn ap_r(pred: &InstanceSet, gt: &InstanceSet, iou_threshold: f64) -> Result<ApResult> {
    if (pred.rows(), pred.cols()) != (gt.rows(), gt.cols()) {
        return Err(Error::shape("prediction and ground-truth instances differ in image shape"));
    }
    if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
        return Err(Error::invalid(format!("IoU threshold {iou_threshold} outside (0, 1)")));
    }
    let mut per_class = BTreeMap::new();
    let classes: std::collections::BTreeSet<u32> = gt.instances().iter().map(|g| g.class).collect();
    for class in classes {
        let gts: Vec<&[bool]> = gt.instances().iter().filter(|g| g.class == class).map(|g| g.mask.as_slice()).collect();
        let mut preds: Vec<(f64, &[bool])> =
            pred.instances().iter().filter(|p| p.class == class).map(|p| (p.score, p.mask.as_slice())).collect();
        preds.sort_by(|a, b| b.0.total_cmp(&a.0));

        let mut matched = vec![false; gts.len()];
        let mut hits = Vec::with_capacity(preds.len());
        for (_, mask) in &preds {
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in gts.iter().enumerate() {
                if matched[gi] {
                    continue;
                }
                let iou = mask_iou(mask, g);
                if best.map_or(true, |(_, b)| iou > b) {
                    best = Some((gi, iou));
                }
            }
            let tp = match best {
                Some((gi, iou)) if iou >= iou_threshold => {
                    matched[gi] = true;
                    true
                }
                _ => false,
            };
            hits.push(tp);
        }
        per_class.insert(class, average_precision(&hits, gts.len()));
    }
    let mean = (!per_class.is_empty()).then(|| per_class.values().sum::<f64>() / per_class.len() as f64);
    Ok(ApResult { per_class, mean })
}

/// All-point interpolated AP from ranked hit flags and the number of
/// ground-truth objects.
pub fn average_precision(hits: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 || hits.is_empty() {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (k, &hit) in hits.iter().enumerate() {
        tp += usize::from(hit);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    // recall rises by 1/num_gt at each hit
    let area = hits.iter().zip(&precision).filter(|(&h, _)| h).fold(0.0, |acc, (_, p)| acc + p);
    area / num_gt as f64
}

/// Metrics of one labeling against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_class_iou: Vec<Option<f64>>,
    pub mean_iou: f64,
    pub pixel_accuracy: f64,
    /// AP^r keyed by threshold (formatted with two decimals), when instance
    /// sets were supplied.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ap_r: BTreeMap<String, ApResult>,
}

impl MetricReport {
    pub fn compute(pred: &LabelMap, gt: &LabelMap, num_labels: usize) -> Result<Self> {
        let (per_class_iou, mean_iou) = miou(pred, gt, num_labels)?;
        let pixel_accuracy = pixel_accuracy(pred, gt)?;
        Ok(Self { per_class_iou, mean_iou, pixel_accuracy, ap_r: BTreeMap::new() })
    }

    pub fn with_ap_r(mut self, pred: &InstanceSet, gt: &InstanceSet, thresholds: &[f64]) -> Result<Self> {
        for &t in thresholds {
            self.ap_r.insert(format!("{t:.2}"), ap_r(pred, gt, t)?);
        }
        Ok(self)
    }
}
