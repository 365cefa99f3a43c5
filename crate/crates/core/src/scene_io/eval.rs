//! Metrics comparing predicted labels against ground-truth boxes.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use serde::Serialize;

use crate::geometry::{bev_iou3d, BoxParams};

use super::labels::PseudoLabel;

/// Smallest angular distance between two yaws. With `orientation_agnostic`
/// set, a half-turn flip counts as a perfect match (boxes are symmetric under
/// it), so the result lies in `[0, PI/2]`; otherwise in `[0, PI]`.
pub fn yaw_error(pred: f64, gt: f64, orientation_agnostic: bool) -> f64 {
    let period = if orientation_agnostic { PI } else { TAU };
    let d = (pred - gt).rem_euclid(period);
    d.min(period - d)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    /// Treat a half-turn yaw flip as exact (default true).
    pub orientation_agnostic: bool,
    /// 3D-IoU thresholds at which to report recall.
    pub recall_thresholds: Vec<f64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            orientation_agnostic: true,
            recall_thresholds: vec![0.3, 0.5],
        }
    }
}

/// Aggregate metrics over every (prediction, ground-truth) pair that shares
/// an instance id. Means and medians are over matched pairs only; with no
/// matched pairs they are 0.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub n_gt: usize,
    pub n_predictions: usize,
    pub n_matched: usize,
    /// Ground-truth instances no prediction claimed.
    pub n_missed_gt: usize,
    /// Predictions whose instance id has no ground truth.
    pub n_unmatched_predictions: usize,
    pub mean_iou_3d: f64,
    pub median_iou_3d: f64,
    pub mean_iou_bev: f64,
    pub median_iou_bev: f64,
    /// Radians.
    pub mean_yaw_error: f64,
    pub median_yaw_error: f64,
    /// `(threshold, fraction of ground-truth instances with at least one
    /// prediction at or above it)`, in the order the options listed them.
    pub recall: Vec<(f64, f64)>,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| a.partial_cmp(b).expect("metrics are finite"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Score `preds` against `gt`. Pairing is by instance id: every prediction
/// with a ground-truth id contributes one (IoU, yaw-error) sample. Duplicate
/// ground-truth ids keep the last entry. Predictions are processed in
/// `(instance_id, frame_id, input order)` order, so the report is bitwise
/// identical under input reshuffling. With no ground truth at all, recall is
/// reported as 1 (nothing was there to miss).
pub fn evaluate_labels(
    preds: &[PseudoLabel],
    gt: &[(u32, BoxParams)],
    opts: &EvalOptions,
) -> EvalReport {
    let gt_map: BTreeMap<u32, BoxParams> = gt.iter().copied().collect();

    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by_key(|&i| (preds[i].instance_id, preds[i].frame_id, i));

    let mut iou3d = Vec::new();
    let mut iou_bev = Vec::new();
    let mut yaw_err = Vec::new();
    let mut best_iou: BTreeMap<u32, f64> = gt_map.keys().map(|id| (*id, 0.0)).collect();
    let mut unmatched = 0usize;

    for &i in &order {
        let p = &preds[i];
        let Some(gt_box) = gt_map.get(&p.instance_id) else {
            unmatched += 1;
            continue;
        };
        let (bev, full) = bev_iou3d(&p.box_params(), gt_box);
        iou3d.push(full);
        iou_bev.push(bev);
        yaw_err.push(yaw_error(p.yaw, gt_box.yaw, opts.orientation_agnostic));
        let best = best_iou.get_mut(&p.instance_id).expect("id present");
        if full > *best {
            *best = full;
        }
    }

    let n_gt = gt_map.len();
    let n_matched = iou3d.len();
    let n_missed_gt = gt_map
        .keys()
        .filter(|id| preds.iter().all(|p| p.instance_id != **id))
        .count();
    let recall = opts
        .recall_thresholds
        .iter()
        .map(|&tau| {
            let frac = if n_gt == 0 {
                1.0
            } else {
                best_iou.values().filter(|&&v| v >= tau).count() as f64 / n_gt as f64
            };
            (tau, frac)
        })
        .collect();

    EvalReport {
        n_gt,
        n_predictions: preds.len(),
        n_matched,
        n_missed_gt,
        n_unmatched_predictions: unmatched,
        mean_iou_3d: mean(&iou3d),
        median_iou_3d: median(iou3d),
        mean_iou_bev: mean(&iou_bev),
        median_iou_bev: median(iou_bev),
        mean_yaw_error: mean(&yaw_err),
        median_yaw_error: median(yaw_err),
        recall,
    }
}
