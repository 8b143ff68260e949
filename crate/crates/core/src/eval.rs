//! Detection scoring: greedy one-to-one IoU matching, precision/recall at an
//! operating threshold, and all-point interpolated AP50.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::annotation::{de_id, WindowAnnotation, WINDOW_LABEL};
use crate::error::{Error, Result};
use crate::geometry::{iou_box, iou_mask, BBox, BinaryMask};

pub const AP_IOU_THRESHOLD: f64 = 0.5;

fn default_label() -> String {
    WINDOW_LABEL.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(deserialize_with = "de_id")]
    pub image_id: String,
    pub bbox: BBox,
    #[serde(default, rename = "segmentation", skip_serializing_if = "Option::is_none")]
    pub mask: Option<BinaryMask>,
    pub score: f64,
    #[serde(default = "default_label", rename = "category")]
    pub class_label: String,
}

impl Detection {
    pub fn boxed(image_id: impl Into<String>, bbox: BBox, score: f64) -> Self {
        Detection {
            image_id: image_id.into(),
            bbox,
            mask: None,
            score,
            class_label: default_label(),
        }
    }
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dets: Vec<Detection> = serde_json::from_str(&text)?;
    validate_detections(&dets)?;
    Ok(dets)
}

pub fn write_detections(path: &Path, dets: &[Detection]) -> Result<()> {
    let text = serde_json::to_string(dets)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn validate_detections(dets: &[Detection]) -> Result<()> {
    for d in dets {
        if !(d.score.is_finite() && (0.0..=1.0).contains(&d.score)) {
            return Err(Error::invalid(format!(
                "detection score {} on image {} outside [0, 1]",
                d.score, d.image_id
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    #[default]
    Box,
    Mask,
}

impl FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "box" => Ok(EvalMode::Box),
            "mask" => Ok(EvalMode::Mask),
            other => Err(format!("unknown mode '{other}', expected box or mask")),
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Box => "box",
            EvalMode::Mask => "mask",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApInterpolation {
    /// Area under the monotone precision envelope.
    #[default]
    AllPoint,
    /// Mean envelope precision at recall 0.00, 0.01, …, 1.00.
    Coco101,
}

/// Indices into the detection list sorted by descending score; equal scores
/// keep input order.
pub fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

pub(crate) fn overlap(det: &Detection, gt: &WindowAnnotation, mode: EvalMode) -> Result<f64> {
    match mode {
        EvalMode::Box => Ok(iou_box(&det.bbox, &gt.bbox)),
        EvalMode::Mask => {
            let m = det.mask.as_ref().ok_or_else(|| Error::MissingMask {
                image_id: det.image_id.clone(),
            })?;
            iou_mask(m, &gt.mask)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// Detection indices in descending score order.
    pub order: Vec<usize>,
    /// Per detection (input index): the ground truth it claimed.
    pub matched: Vec<Option<usize>>,
    /// Ground truths no detection claimed, ascending.
    pub unmatched_gts: Vec<usize>,
}

impl MatchResult {
    /// True-positive flags in score order.
    pub fn tp_flags(&self) -> Vec<bool> {
        self.order.iter().map(|&i| self.matched[i].is_some()).collect()
    }

    pub fn tp(&self) -> usize {
        self.matched.iter().filter(|m| m.is_some()).count()
    }
}

/// Greedy matching: in score order each detection claims the unclaimed
/// ground truth on its image with the highest IoU ≥ `iou_threshold` (ties
/// go to the lower index).
pub fn match_detections(
    dets: &[Detection],
    gts: &[WindowAnnotation],
    iou_threshold: f64,
    mode: EvalMode,
) -> Result<MatchResult> {
    validate_detections(dets)?;
    if mode == EvalMode::Mask {
        if let Some(d) = dets.iter().find(|d| d.mask.is_none()) {
            return Err(Error::MissingMask {
                image_id: d.image_id.clone(),
            });
        }
    }
    let mut by_image: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_image.entry(g.image_id.as_str()).or_default().push(i);
    }

    let order = score_order(dets);
    let mut claimed = vec![false; gts.len()];
    let mut matched = vec![None; dets.len()];
    for &di in &order {
        let det = &dets[di];
        let Some(candidates) = by_image.get(det.image_id.as_str()) else {
            continue;
        };
        let mut best: Option<(usize, f64)> = None;
        for &gi in candidates {
            if claimed[gi] {
                continue;
            }
            let iou = overlap(det, &gts[gi], mode)?;
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        if let Some((gi, _)) = best {
            claimed[gi] = true;
            matched[di] = Some(gi);
        }
    }
    let unmatched_gts = (0..gts.len()).filter(|&g| !claimed[g]).collect();
    Ok(MatchResult {
        order,
        matched,
        unmatched_gts,
    })
}

/// Precision/recall after each detection in score order.
pub fn pr_points(tp_flags: &[bool], n_gt: usize) -> Vec<(f64, f64)> {
    let mut tp = 0usize;
    tp_flags
        .iter()
        .enumerate()
        .map(|(i, &is_tp)| {
            tp += usize::from(is_tp);
            let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
            (recall, tp as f64 / (i + 1) as f64)
        })
        .collect()
}

/// Average precision of a ranked list of TP/FP flags.
pub fn average_precision(tp_flags: &[bool], n_gt: usize, interp: ApInterpolation) -> f64 {
    if n_gt == 0 {
        return if tp_flags.is_empty() { 1.0 } else { 0.0 };
    }
    let points = pr_points(tp_flags, n_gt);
    if points.is_empty() {
        return 0.0;
    }
    let mut envelope: Vec<f64> = points.iter().map(|p| p.1).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    match interp {
        ApInterpolation::AllPoint => {
            let mut prev_recall = 0.0;
            let mut ap = 0.0;
            for (&(recall, _), &p) in points.iter().zip(&envelope) {
                ap += (recall - prev_recall) * p;
                prev_recall = recall;
            }
            ap
        }
        ApInterpolation::Coco101 => {
            let sum: f64 = (0..=100)
                .map(|t| {
                    let r = f64::from(t) / 100.0;
                    points
                        .iter()
                        .position(|p| p.0 >= r - 1e-12)
                        .map_or(0.0, |i| envelope[i])
                })
                .sum();
            sum / 101.0
        }
    }
}

/// AP at IoU 0.5 over the full detection ranking.
pub fn ap50(dets: &[Detection], gts: &[WindowAnnotation], mode: EvalMode) -> Result<f64> {
    let m = match_detections(dets, gts, AP_IOU_THRESHOLD, mode)?;
    Ok(average_precision(&m.tp_flags(), gts.len(), ApInterpolation::AllPoint))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub p_min: f64,
    pub iou_threshold: f64,
    pub mode: EvalMode,
    pub interpolation: ApInterpolation,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            p_min: crate::planner::DEFAULT_P_MIN,
            iou_threshold: AP_IOU_THRESHOLD,
            mode: EvalMode::Box,
            interpolation: ApInterpolation::AllPoint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default)]
    pub mode: EvalMode,
    pub recall: f64,
    pub precision: f64,
    pub ap50: f64,
    #[serde(default)]
    pub tp: u64,
    #[serde(default)]
    pub fp: u64,
    #[serde(default, rename = "fn")]
    pub fn_: u64,
    #[serde(default)]
    pub n_images: u64,
    #[serde(default)]
    pub p_min: f64,
}

impl EvalReport {
    /// Report carrying only headline scores (e.g. figures quoted from a
    /// results table).
    pub fn from_scores(recall: f64, precision: f64, ap50: f64, mode: EvalMode) -> Self {
        EvalReport {
            mode,
            recall,
            precision,
            ap50,
            tp: 0,
            fp: 0,
            fn_: 0,
            n_images: 0,
            p_min: 0.0,
        }
    }

    pub const CSV_HEADER: &'static str = "run,mode,recall,precision,ap50,tp,fp,fn,n_images,p_min";

    pub fn csv_row(&self, run: &str) -> String {
        format!(
            "{run},{},{:.6},{:.6},{:.6},{},{},{},{},{}",
            self.mode, self.recall, self.precision, self.ap50, self.tp, self.fp, self.fn_, self.n_images, self.p_min
        )
    }
}

fn ratio_or_one(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision/recall at the operating threshold (`score >= p_min` kept) and
/// AP50 over the unthresholded ranking.
pub fn evaluate(dets: &[Detection], gts: &[WindowAnnotation], opts: &EvalOptions) -> Result<EvalReport> {
    let m = match_detections(dets, gts, opts.iou_threshold, opts.mode)?;
    let ap = average_precision(&m.tp_flags(), gts.len(), opts.interpolation);

    // Kept detections form a prefix of the score order, so the greedy
    // assignment restricted to them is the prefix of the full assignment.
    let (mut tp, mut fp) = (0u64, 0u64);
    for (i, d) in dets.iter().enumerate() {
        if d.score >= opts.p_min {
            if m.matched[i].is_some() {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    let fn_ = gts.len() as u64 - tp;
    let images: BTreeSet<&str> = gts
        .iter()
        .map(|g| g.image_id.as_str())
        .chain(dets.iter().map(|d| d.image_id.as_str()))
        .collect();
    Ok(EvalReport {
        mode: opts.mode,
        recall: ratio_or_one(tp, tp + fn_),
        precision: ratio_or_one(tp, tp + fp),
        ap50: ap,
        tp,
        fp,
        fn_,
        n_images: images.len() as u64,
        p_min: opts.p_min,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunDelta {
    pub recall: f64,
    pub precision: f64,
    pub ap50: f64,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0 + 0.0
}

/// Componentwise `optimised - standard`, rounded to two decimals.
pub fn compare_runs(standard: &EvalReport, optimised: &EvalReport) -> Result<RunDelta> {
    if standard.mode != optimised.mode {
        return Err(Error::invalid(format!(
            "cannot compare a {} report with a {} report",
            standard.mode, optimised.mode
        )));
    }
    Ok(RunDelta {
        recall: round2(optimised.recall - standard.recall),
        precision: round2(optimised.precision - standard.precision),
        ap50: round2(optimised.ap50 - standard.ap50),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(img: &str, x: u32, y: u32, w: u32, h: u32) -> WindowAnnotation {
        WindowAnnotation::from_box(img, 64, 64, BBox::new(x, y, w, h).unwrap()).unwrap()
    }

    fn det(img: &str, x: u32, y: u32, w: u32, h: u32, score: f64) -> Detection {
        Detection::boxed(img, BBox::new(x, y, w, h).unwrap(), score)
    }

    #[test]
    fn single_match() {
        let g = [gt("a", 0, 0, 10, 10)];
        let d = [det("a", 0, 0, 10, 10, 0.9)];
        let m = match_detections(&d, &g, 0.5, EvalMode::Box).unwrap();
        assert_eq!(m.matched, vec![Some(0)]);
        assert!(m.unmatched_gts.is_empty());
    }

    #[test]
    fn double_detection_is_false_positive() {
        let g = [gt("a", 0, 0, 10, 10)];
        let d = [det("a", 1, 0, 10, 10, 0.7), det("a", 0, 0, 10, 10, 0.9)];
        let m = match_detections(&d, &g, 0.5, EvalMode::Box).unwrap();
        assert_eq!(m.order, vec![1, 0]);
        assert_eq!(m.matched, vec![None, Some(0)]);
        assert_eq!(m.tp_flags(), vec![true, false]);
    }

    #[test]
    fn other_image_never_matches() {
        let g = [gt("a", 0, 0, 10, 10)];
        let d = [det("b", 0, 0, 10, 10, 0.9)];
        let m = match_detections(&d, &g, 0.5, EvalMode::Box).unwrap();
        assert_eq!(m.matched, vec![None]);
        assert_eq!(m.unmatched_gts, vec![0]);
    }

    #[test]
    fn iou_ties_go_to_lower_gt_index() {
        // identical ground truths: equal IoU
        let g = [gt("a", 0, 0, 10, 10), gt("a", 0, 0, 10, 10)];
        let d = [det("a", 0, 0, 10, 10, 0.9)];
        let m = match_detections(&d, &g, 0.5, EvalMode::Box).unwrap();
        assert_eq!(m.matched, vec![Some(0)]);
    }

    #[test]
    fn greedy_is_not_optimal_when_ground_truths_overlap() {
        // The high-score detection prefers the second GT, stranding the
        // low-score detection whose only candidate it was.
        let g = [gt("a", 0, 0, 10, 10), gt("a", 2, 0, 10, 10)];
        let d = [det("a", 2, 0, 10, 10, 0.9), det("a", 4, 0, 10, 10, 0.8)];
        let m = match_detections(&d, &g, 0.5, EvalMode::Box).unwrap();
        assert_eq!(m.matched, vec![Some(1), None]);
        // the assignment d0->g0, d1->g1 would have matched both
        assert!(iou_box(&d[0].bbox, &g[0].bbox) >= 0.5);
        assert!(iou_box(&d[1].bbox, &g[1].bbox) >= 0.5);
    }

    #[test]
    fn ap_examples() {
        let g = [gt("a", 0, 0, 10, 10), gt("a", 30, 30, 10, 10)];
        assert_eq!(ap50(&[], &g, EvalMode::Box).unwrap(), 0.0);
        assert_eq!(
            ap50(&[det("a", 0, 0, 10, 10, 0.9)], &g[..1], EvalMode::Box).unwrap(),
            1.0
        );

        let d = [det("a", 0, 0, 10, 10, 0.9), det("a", 50, 0, 10, 10, 0.8)];
        let m = match_detections(&d, &g, 0.5, EvalMode::Box).unwrap();
        assert_eq!(pr_points(&m.tp_flags(), 2), vec![(0.5, 1.0), (0.5, 0.5)]);
        assert_eq!(ap50(&d, &g, EvalMode::Box).unwrap(), 0.5);

        assert_eq!(ap50(&[], &[], EvalMode::Box).unwrap(), 1.0);
        assert_eq!(ap50(&d, &[], EvalMode::Box).unwrap(), 0.0);
    }

    #[test]
    fn envelope_fills_dips() {
        // TP, FP, TP over 2 GTs: points (0.5,1), (0.5,0.5), (1,2/3)
        let flags = [true, false, true];
        let ap = average_precision(&flags, 2, ApInterpolation::AllPoint);
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
        let coco = average_precision(&flags, 2, ApInterpolation::Coco101);
        // r in [0, 0.5]: 51 samples at 1.0, r in (0.5, 1]: 50 samples at 2/3
        assert!((coco - (51.0 + 50.0 * 2.0 / 3.0) / 101.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_examples() {
        let g = [gt("a", 0, 0, 10, 10), gt("a", 30, 30, 10, 10)];
        let perfect = [det("a", 0, 0, 10, 10, 0.9), det("a", 30, 30, 10, 10, 0.8)];
        let opts = EvalOptions {
            p_min: 0.5,
            ..EvalOptions::default()
        };
        let r = evaluate(&perfect, &g, &opts).unwrap();
        assert_eq!((r.recall, r.precision, r.ap50), (1.0, 1.0, 1.0));
        assert_eq!((r.tp, r.fp, r.fn_, r.n_images), (2, 0, 0, 1));

        let high = EvalOptions { p_min: 0.95, ..opts };
        let r = evaluate(&perfect, &g, &high).unwrap();
        assert_eq!((r.recall, r.precision, r.ap50), (0.0, 1.0, 1.0));
    }

    #[test]
    fn mask_mode_requires_masks() {
        let g = [gt("a", 0, 0, 10, 10)];
        let d = [det("a", 0, 0, 10, 10, 0.9)];
        assert!(matches!(
            match_detections(&d, &g, 0.5, EvalMode::Mask),
            Err(Error::MissingMask { .. })
        ));
        let mut d = d;
        d[0].mask = Some(g[0].mask.clone());
        assert_eq!(ap50(&d, &g, EvalMode::Mask).unwrap(), 1.0);
    }

    #[test]
    fn rejects_out_of_range_scores() {
        let g = [gt("a", 0, 0, 10, 10)];
        assert!(match_detections(&[det("a", 0, 0, 10, 10, 1.5)], &g, 0.5, EvalMode::Box).is_err());
        assert!(match_detections(&[det("a", 0, 0, 10, 10, f64::NAN)], &g, 0.5, EvalMode::Box).is_err());
    }

    #[test]
    fn compare_examples() {
        let a = EvalReport::from_scores(0.53, 0.85, 0.85, EvalMode::Box);
        let b = EvalReport::from_scores(0.60, 0.82, 0.87, EvalMode::Box);
        let d = compare_runs(&a, &b).unwrap();
        assert_eq!((d.recall, d.precision, d.ap50), (0.07, -0.03, 0.02));
        let c = EvalReport::from_scores(0.51, 0.94, 0.91, EvalMode::Box);
        let e = EvalReport::from_scores(0.58, 0.90, 0.93, EvalMode::Box);
        let d = compare_runs(&c, &e).unwrap();
        assert_eq!((d.recall, d.precision, d.ap50), (0.07, -0.04, 0.02));
        let z = compare_runs(&a, &a).unwrap();
        assert_eq!((z.recall, z.precision, z.ap50), (0.0, 0.0, 0.0));
        assert!(z.precision.is_sign_positive());
        let m = EvalReport::from_scores(0.5, 0.5, 0.5, EvalMode::Mask);
        assert!(compare_runs(&a, &m).is_err());
    }

    #[test]
    fn detections_json_accepts_integer_ids() {
        let json = r#"[{"image_id": 3, "bbox": [1, 2, 3, 4], "score": 0.5}]"#;
        let d: Vec<Detection> = serde_json::from_str(json).unwrap();
        assert_eq!(d[0].image_id, "3");
        assert_eq!(d[0].class_label, "window");
        let out = serde_json::to_string(&d).unwrap();
        assert_eq!(
            out,
            r#"[{"image_id":"3","bbox":[1,2,3,4],"score":0.5,"category":"window"}]"#
        );
    }
}
