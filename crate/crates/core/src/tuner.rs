//! Post-training tuning: score-threshold sweep, greedy NMS, and the
//! double-detection / missed-window diagnostics.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::annotation::WindowAnnotation;
use crate::error::{Error, Result};
use crate::eval::{evaluate, match_detections, score_order, Detection, EvalMode, EvalOptions};
use crate::geometry::iou_box;

pub const DEFAULT_NMS_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Ap50,
    Recall,
    #[default]
    F1,
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "ap50" => Ok(Objective::Ap50),
            "recall" => Ok(Objective::Recall),
            "f1" => Ok(Objective::F1),
            other => Err(format!("unknown objective '{other}', expected ap50, recall or f1")),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Ap50 => "ap50",
            Objective::Recall => "recall",
            Objective::F1 => "f1",
        })
    }
}

/// Thresholds 0.05, 0.10, …, 0.95.
pub fn default_grid() -> Vec<f64> {
    (1..=19).map(|i| f64::from(i) / 20.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub ap50: f64,
    pub f1: f64,
}

impl SweepPoint {
    fn objective(&self, o: Objective) -> f64 {
        match o {
            Objective::Ap50 => self.ap50,
            Objective::Recall => self.recall,
            Objective::F1 => self.f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub objective: Objective,
    pub best_p_min: f64,
    pub curve: Vec<SweepPoint>,
}

impl Sweep {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,precision,recall,ap50\n");
        for p in &self.curve {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6}\n",
                p.threshold, p.precision, p.recall, p.ap50
            ));
        }
        s
    }
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Evaluates every threshold in `grid` and returns the objective's argmax
/// (lowest threshold on ties) with the full curve.
pub fn sweep_threshold(
    dets: &[Detection],
    gts: &[WindowAnnotation],
    grid: &[f64],
    objective: Objective,
    mode: EvalMode,
) -> Result<Sweep> {
    if grid.is_empty() {
        return Err(Error::invalid("threshold grid is empty"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) || grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::invalid(
            "threshold grid must be strictly ascending within [0, 1]",
        ));
    }
    let mut curve = Vec::with_capacity(grid.len());
    for &threshold in grid {
        let opts = EvalOptions {
            p_min: threshold,
            mode,
            ..EvalOptions::default()
        };
        let r = evaluate(dets, gts, &opts)?;
        curve.push(SweepPoint {
            threshold,
            precision: r.precision,
            recall: r.recall,
            ap50: r.ap50,
            f1: f1(r.precision, r.recall),
        });
    }
    let mut best = 0;
    for (i, p) in curve.iter().enumerate() {
        if p.objective(objective) > curve[best].objective(objective) {
            best = i;
        }
    }
    Ok(Sweep {
        objective,
        best_p_min: curve[best].threshold,
        curve,
    })
}

/// Indices kept by greedy per-image NMS, in input order.
pub fn nms_indices(dets: &[Detection], iou_threshold: f64) -> Vec<usize> {
    let mut kept_by_image: HashMap<&str, Vec<usize>> = HashMap::new();
    let mut keep = vec![false; dets.len()];
    for i in score_order(dets) {
        let kept = kept_by_image.entry(dets[i].image_id.as_str()).or_default();
        if kept
            .iter()
            .all(|&k| iou_box(&dets[k].bbox, &dets[i].bbox) < iou_threshold)
        {
            kept.push(i);
            keep[i] = true;
        }
    }
    (0..dets.len()).filter(|&i| keep[i]).collect()
}

/// Greedy non-maximum suppression by box IoU within each image.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    nms_indices(dets, iou_threshold)
        .into_iter()
        .map(|i| dets[i].clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DoubleDetection {
    pub gt_index: usize,
    pub image_id: String,
    /// Indices of every detection overlapping the window at the threshold.
    pub detections: Vec<usize>,
}

impl DoubleDetection {
    pub fn count(&self) -> usize {
        self.detections.len()
    }
}

/// Ground truths overlapped (box IoU ≥ threshold) by two or more
/// detections, most-claimed first.
pub fn find_double_detections(
    dets: &[Detection],
    gts: &[WindowAnnotation],
    iou_threshold: f64,
) -> Vec<DoubleDetection> {
    let mut out: Vec<DoubleDetection> = gts
        .iter()
        .enumerate()
        .filter_map(|(gi, g)| {
            let claims: Vec<usize> = dets
                .iter()
                .enumerate()
                .filter(|(_, d)| d.image_id == g.image_id && iou_box(&d.bbox, &g.bbox) >= iou_threshold)
                .map(|(i, _)| i)
                .collect();
            (claims.len() >= 2).then(|| DoubleDetection {
                gt_index: gi,
                image_id: g.image_id.clone(),
                detections: claims,
            })
        })
        .collect();
    out.sort_by_key(|d| std::cmp::Reverse(d.count()));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterBias {
    pub missed: Vec<usize>,
    /// Mean normalized center distance of missed windows.
    pub missed_mean: Option<f64>,
    pub detected_mean: Option<f64>,
}

/// Distance of the box center to the image center over the half-diagonal,
/// in `[0, 1]`.
pub fn normalized_center_distance(gt: &WindowAnnotation, image_side: u32) -> f64 {
    let (cx, cy) = gt.bbox.center();
    let c = f64::from(image_side) / 2.0;
    (cx - c).hypot(cy - c) / (f64::from(image_side) * std::f64::consts::SQRT_2 / 2.0)
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Splits ground truths into matched and missed (box IoU 0.5 greedy
/// matching) and compares how far each group sits from the image center.
pub fn missed_center_bias(dets: &[Detection], gts: &[WindowAnnotation], image_side: u32) -> Result<CenterBias> {
    let m = match_detections(dets, gts, crate::eval::AP_IOU_THRESHOLD, EvalMode::Box)?;
    let mut missed_d = Vec::new();
    let mut detected_d = Vec::new();
    for (gi, g) in gts.iter().enumerate() {
        let d = normalized_center_distance(g, image_side);
        if m.unmatched_gts.binary_search(&gi).is_ok() {
            missed_d.push(d);
        } else {
            detected_d.push(d);
        }
    }
    Ok(CenterBias {
        missed: m.unmatched_gts,
        missed_mean: mean(&missed_d),
        detected_mean: mean(&detected_d),
    })
}
