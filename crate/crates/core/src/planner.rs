//! Detector configuration planning from dataset statistics.
//!
//! Depth is the number of stride-2 stages that keeps the median window at
//! more than [`MIN_FEATURE_PX`] pixels wide after downsampling. Anchors and
//! ROI counts follow the window size/aspect distribution and the window
//! density. Loss weights are identified up to positive scale and stored in
//! their L1-normalized form.

use serde::{Deserialize, Serialize};

use crate::annotation::WindowAnnotation;
use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Reference detector input side.
pub const REFERENCE_SIDE: u32 = 1024;
/// Windows must stay strictly wider than this after downsampling.
pub const MIN_FEATURE_PX: f64 = 3.0;
pub const MAX_DEPTH: u32 = 5;
pub const DEFAULT_OBJECT_FRACTION: f64 = 0.1;
pub const MIN_ANCHOR_PX: u32 = 4;
pub const ROI_MULTIPLIER: f64 = 3.0;
pub const ROI_RANGE: (u32, u32) = (8, 200);
pub const DEFAULT_P_MIN: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
}

impl Quantiles {
    /// Linearly interpolated quartiles; `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let at = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Quantiles {
            q25: at(0.25),
            q50: at(0.5),
            q75: at(0.75),
        })
    }

    fn as_array(&self) -> [f64; 3] {
        [self.q25, self.q50, self.q75]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub image_side: u32,
    /// `image_side = 1024 / 2^m`.
    pub m: u32,
    /// Quartiles of `sqrt(bbox area)`.
    pub window_width_quantiles: Option<Quantiles>,
    /// Quartiles of `h / w`.
    pub aspect_quantiles: Option<Quantiles>,
    pub mean_windows_per_image: f64,
    pub object_fraction: f64,
}

/// `m` such that `side = 1024 / 2^m`, for `m ∈ {2,3,4,5}`.
pub fn side_exponent(side: u32) -> Result<u32> {
    (2..=5)
        .find(|m| REFERENCE_SIDE >> m == side)
        .ok_or_else(|| Error::invalid(format!("image side {side} is not 1024/2^m for m in 2..=5")))
}

impl DatasetStats {
    pub fn from_windows(image_side: u32, n_images: usize, windows: &[WindowAnnotation]) -> Result<Self> {
        let m = side_exponent(image_side)?;
        if n_images == 0 {
            return Err(Error::invalid("dataset has no images"));
        }
        let boxes: Vec<&BBox> = windows.iter().map(|w| &w.bbox).collect();
        let widths: Vec<f64> = boxes.iter().map(|b| (b.area() as f64).sqrt()).collect();
        let aspects: Vec<f64> = boxes.iter().map(|b| f64::from(b.h) / f64::from(b.w)).collect();
        let object_fraction = if boxes.is_empty() {
            DEFAULT_OBJECT_FRACTION
        } else {
            boxes.iter().map(|b| f64::from(b.w)).sum::<f64>() / boxes.len() as f64 / f64::from(image_side)
        };
        Ok(DatasetStats {
            image_side,
            m,
            window_width_quantiles: Quantiles::of(&widths),
            aspect_quantiles: Quantiles::of(&aspects),
            mean_windows_per_image: windows.len() as f64 / n_images as f64,
            object_fraction,
        })
    }
}

/// Non-negative weights of the RPN-class, RPN-box, head-class, head-box and
/// head-mask losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub epsilon: f64,
}

impl LossWeights {
    pub const UNIFORM: LossWeights = LossWeights::from_array([1.0; 5]);

    pub const fn from_array(k: [f64; 5]) -> Self {
        LossWeights {
            alpha: k[0],
            beta: k[1],
            gamma: k[2],
            delta: k[3],
            epsilon: k[4],
        }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.alpha, self.beta, self.gamma, self.delta, self.epsilon]
    }

    pub fn scaled(&self, n: f64) -> Self {
        Self::from_array(self.to_array().map(|k| k * n))
    }
}

/// Weighted total of the five loss terms, in the same order as the weights.
pub fn combine_losses(k: &LossWeights, losses: &[f64; 5]) -> f64 {
    k.to_array().iter().zip(losses).map(|(w, l)| w * l).sum()
}

/// Canonical representative of the weight vector's scaling class: the
/// components divided by their sum.
pub fn normalize_weights(k: &LossWeights) -> Result<LossWeights> {
    let a = k.to_array();
    if a.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::invalid(format!("loss weights must be finite and >= 0: {a:?}")));
    }
    if a.iter().all(|w| *w == 0.0) {
        return Err(Error::ZeroWeights);
    }
    if sums_to_one(&a) {
        return Ok(*k);
    }
    let mut c = l1_step(a);
    if !sums_to_one(&c) {
        // Fold the rounding residue into the largest component; with the max
        // added last, `others + (1 - others)` rounds to exactly 1.
        let top = argmax(&c);
        c[top] = 1.0 - others_sum(&c, top);
    }
    Ok(LossWeights::from_array(c))
}

fn argmax(c: &[f64; 5]) -> usize {
    (0..5).fold(0, |best, i| if c[i] > c[best] { i } else { best })
}

fn others_sum(c: &[f64; 5], skip: usize) -> f64 {
    (0..5).filter(|&i| i != skip).map(|i| c[i]).sum()
}

/// Exact unit sum, either left to right or with the largest component
/// added last.
fn sums_to_one(c: &[f64; 5]) -> bool {
    c.iter().sum::<f64>() == 1.0 || others_sum(c, argmax(c)) + c[argmax(c)] == 1.0
}

/// Divides by the max, then by the sum. Exactly proportional inputs give
/// identical ratios after the first division (it is correctly rounded).
fn l1_step(a: [f64; 5]) -> [f64; 5] {
    let max = a.iter().copied().fold(0.0, f64::max);
    let rel = a.map(|w| w / max);
    let sum: f64 = rel.iter().sum();
    rel.map(|w| w / sum)
}

pub fn estimate_object_width(image_side: u32, fraction: f64) -> f64 {
    fraction * f64::from(image_side)
}

/// Largest `k ∈ [1, 5]` with `object_width / 2^k > 3`.
pub fn plan_depth(object_width: f64) -> Result<u32> {
    if !(object_width.is_finite() && object_width > 0.0) || object_width / 2.0 <= MIN_FEATURE_PX {
        return Err(Error::ObjectsTooSmall(object_width));
    }
    let mut k = 1;
    while k < MAX_DEPTH && object_width / f64::from(1u32 << (k + 1)) > MIN_FEATURE_PX {
        k += 1;
    }
    Ok(k)
}

pub fn plan_anchors(stats: &DatasetStats) -> (Vec<u32>, Vec<f64>) {
    let mut scales: Vec<u32> = match &stats.window_width_quantiles {
        Some(q) => q
            .as_array()
            .iter()
            .map(|w| (w.round() as u32).max(MIN_ANCHOR_PX))
            .collect(),
        None => {
            let w = estimate_object_width(stats.image_side, stats.object_fraction);
            vec![(w.round() as u32).max(MIN_ANCHOR_PX)]
        }
    };
    scales.sort_unstable();
    scales.dedup();

    let mut ratios: Vec<f64> = match &stats.aspect_quantiles {
        Some(q) => q.as_array().iter().map(|r| (r * 100.0).round() / 100.0).collect(),
        None => vec![1.0],
    };
    ratios.sort_by(f64::total_cmp);
    ratios.dedup();
    (scales, ratios)
}

pub fn plan_rois(mean_windows_per_image: f64) -> u32 {
    let raw = (ROI_MULTIPLIER * mean_windows_per_image.max(0.0)).ceil();
    raw.clamp(f64::from(ROI_RANGE.0), f64::from(ROI_RANGE.1)) as u32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_side: u32,
    pub k_layer: u32,
    pub anchor_scales: Vec<u32>,
    pub anchor_ratios: Vec<f64>,
    pub rois_per_image: u32,
    pub loss_weights: LossWeights,
    pub p_min: f64,
}

impl NetworkConfig {
    /// Feature stride of the deepest stage.
    pub fn stride(&self) -> u32 {
        1 << self.k_layer
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_DEPTH).contains(&self.k_layer) {
            return Err(Error::invalid(format!("k_layer {} outside 1..=5", self.k_layer)));
        }
        if self.anchor_scales.is_empty()
            || self.anchor_scales.windows(2).any(|w| w[0] >= w[1])
            || self.anchor_scales[0] < MIN_ANCHOR_PX
        {
            return Err(Error::invalid("anchor scales must be ascending and >= 4 px"));
        }
        if self.anchor_ratios.is_empty() || self.anchor_ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::invalid("anchor ratios must be positive"));
        }
        if self.rois_per_image == 0 {
            return Err(Error::invalid("rois_per_image must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.p_min) {
            return Err(Error::invalid("p_min must be in [0, 1]"));
        }
        normalize_weights(&self.loss_weights).map(|_| ())
    }
}

/// Composes depth, anchor, ROI and loss-weight planning. The depth is
/// planned on the median window width when windows are present, otherwise
/// on the default 10% object-size estimate.
pub fn build_config(stats: &DatasetStats) -> Result<NetworkConfig> {
    let fraction = match &stats.window_width_quantiles {
        Some(q) => q.q50 / f64::from(stats.image_side),
        None => DEFAULT_OBJECT_FRACTION,
    };
    let k_layer = plan_depth(estimate_object_width(stats.image_side, fraction))?;
    let (anchor_scales, anchor_ratios) = plan_anchors(stats);
    let config = NetworkConfig {
        input_side: stats.image_side,
        k_layer,
        anchor_scales,
        anchor_ratios,
        rois_per_image: plan_rois(stats.mean_windows_per_image),
        loss_weights: normalize_weights(&LossWeights::UNIFORM)?,
        p_min: DEFAULT_P_MIN,
    };
    config.validate()?;
    Ok(config)
}

/// Anchor box in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Anchor {
    pub fn iou(&self, b: &BBox) -> f64 {
        let (ax0, ay0) = (self.cx - self.w / 2.0, self.cy - self.h / 2.0);
        let (ax1, ay1) = (ax0 + self.w, ay0 + self.h);
        let (bx0, by0) = (f64::from(b.x), f64::from(b.y));
        let (bx1, by1) = (f64::from(b.right()), f64::from(b.bottom()));
        let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
        let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
        let inter = iw * ih;
        inter / (self.w * self.h + b.area() as f64 - inter)
    }
}

/// Anchors of every scale/ratio centered on each cell of the
/// stride-`2^k_layer` feature grid. A ratio `r` gives `h / w = r` at area
/// `scale²`.
pub fn generate_anchors(config: &NetworkConfig) -> Vec<Anchor> {
    let stride = config.stride();
    let cells = config.input_side.div_ceil(stride);
    let shapes: Vec<(f64, f64)> = config
        .anchor_scales
        .iter()
        .flat_map(|&s| {
            config.anchor_ratios.iter().map(move |&r| {
                let s = f64::from(s);
                (s / r.sqrt(), s * r.sqrt())
            })
        })
        .collect();
    let mut anchors = Vec::with_capacity((cells * cells) as usize * shapes.len());
    for j in 0..cells {
        for i in 0..cells {
            let cx = (f64::from(i) + 0.5) * f64::from(stride);
            let cy = (f64::from(j) + 0.5) * f64::from(stride);
            anchors.extend(shapes.iter().map(|&(w, h)| Anchor { cx, cy, w, h }));
        }
    }
    anchors
}

/// Fraction of boxes that some anchor overlaps with IoU at least
/// `iou_threshold`. Empty input counts as fully covered.
pub fn anchor_coverage(config: &NetworkConfig, boxes: &[BBox], iou_threshold: f64) -> f64 {
    if boxes.is_empty() {
        return 1.0;
    }
    let anchors = generate_anchors(config);
    let covered = boxes
        .iter()
        .filter(|b| anchors.iter().any(|a| a.iou(b) >= iou_threshold))
        .count();
    covered as f64 / boxes.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(side: u32, q: Option<[f64; 3]>, aspects: Option<[f64; 3]>, mean: f64) -> DatasetStats {
        let mk = |a: [f64; 3]| Quantiles {
            q25: a[0],
            q50: a[1],
            q75: a[2],
        };
        DatasetStats {
            image_side: side,
            m: side_exponent(side).unwrap(),
            window_width_quantiles: q.map(mk),
            aspect_quantiles: aspects.map(mk),
            mean_windows_per_image: mean,
            object_fraction: 0.1,
        }
    }

    #[test]
    fn object_width_examples() {
        assert!((estimate_object_width(128, 0.1) - 12.8).abs() < 1e-12);
        assert!((estimate_object_width(256, 0.1) - 25.6).abs() < 1e-12);
        assert!((estimate_object_width(1024, 0.1) - 102.4).abs() < 1e-12);
    }

    #[test]
    fn depth_examples() {
        assert_eq!(plan_depth(12.8).unwrap(), 2);
        assert_eq!(plan_depth(25.6).unwrap(), 3);
        assert!(matches!(plan_depth(3.0), Err(Error::ObjectsTooSmall(_))));
        assert!(plan_depth(6.0).is_err());
        assert_eq!(plan_depth(6.01).unwrap(), 1);
        assert_eq!(plan_depth(102.4).unwrap(), 5);
        assert_eq!(plan_depth(1e6).unwrap(), 5);
        assert!(plan_depth(f64::NAN).is_err());
    }

    #[test]
    fn side_exponents() {
        assert_eq!(side_exponent(256).unwrap(), 2);
        assert_eq!(side_exponent(128).unwrap(), 3);
        assert_eq!(side_exponent(32).unwrap(), 5);
        assert!(side_exponent(1024).is_err());
        assert!(side_exponent(300).is_err());
    }

    #[test]
    fn anchor_examples() {
        let s = stats(128, Some([10.0, 12.0, 16.0]), Some([1.0, 1.0, 1.5]), 4.0);
        assert_eq!(plan_anchors(&s), (vec![10, 12, 16], vec![1.0, 1.5]));
        let s = stats(128, Some([12.0; 3]), Some([1.0; 3]), 4.0);
        assert_eq!(plan_anchors(&s), (vec![12], vec![1.0]));
        let s = stats(128, Some([2.0, 3.0, 4.0]), Some([1.0; 3]), 4.0);
        assert_eq!(plan_anchors(&s).0, vec![4]);
        let s = stats(128, Some([12.0; 3]), Some([1.234, 1.236, 1.3]), 4.0);
        assert_eq!(plan_anchors(&s).1, vec![1.23, 1.24, 1.3]);
    }

    #[test]
    fn roi_examples() {
        assert_eq!(plan_rois(10.0), 30);
        assert_eq!(plan_rois(0.0), 8);
        assert_eq!(plan_rois(100.0), 200);
        assert_eq!(plan_rois(3.1), 10);
    }

    #[test]
    fn loss_examples() {
        let u = LossWeights::UNIFORM;
        assert!((combine_losses(&u, &[0.2, 0.1, 0.3, 0.25, 0.15]) - 1.0).abs() < 1e-12);
        let mask3 = LossWeights::from_array([1.0, 1.0, 1.0, 1.0, 3.0]);
        assert!((combine_losses(&mask3, &[0.1, 0.1, 0.1, 0.1, 0.2]) - 1.0).abs() < 1e-12);
        let l = [0.3, 0.7, 0.2, 0.9, 0.4];
        assert_eq!(combine_losses(&mask3.scaled(3.0), &l), 3.0 * combine_losses(&mask3, &l));
    }

    #[test]
    fn normalize_examples() {
        let n = normalize_weights(&LossWeights::from_array([2.0; 5])).unwrap();
        assert_eq!(n.to_array(), [0.2; 5]);
        let a = normalize_weights(&LossWeights::from_array([1.0, 1.0, 3.0, 1.0, 1.0])).unwrap();
        let b = normalize_weights(&LossWeights::from_array([5.0, 5.0, 15.0, 5.0, 5.0])).unwrap();
        assert_eq!(a, b);
        let expect = [1.0 / 7.0, 1.0 / 7.0, 3.0 / 7.0, 1.0 / 7.0, 1.0 / 7.0];
        for (x, e) in a.to_array().iter().zip(expect) {
            assert!((x - e).abs() < 1e-15);
        }
        assert_eq!(normalize_weights(&a).unwrap(), a);
        assert!(matches!(
            normalize_weights(&LossWeights::from_array([0.0; 5])),
            Err(Error::ZeroWeights)
        ));
        assert!(normalize_weights(&LossWeights::from_array([1.0, -1.0, 1.0, 1.0, 1.0])).is_err());
    }

    proptest::proptest! {
        #[test]
        fn normalize_is_idempotent(k in proptest::array::uniform5(0.0f64..1e3)) {
            let k = LossWeights::from_array(k);
            proptest::prop_assume!(k.to_array().iter().any(|w| *w > 0.0));
            let n = normalize_weights(&k).unwrap();
            proptest::prop_assert_eq!(normalize_weights(&n).unwrap(), n);
            let sum: f64 = n.to_array().iter().sum();
            proptest::prop_assert!((sum - 1.0).abs() < 1e-15);
            for e in -20..=20 {
                let p = 2f64.powi(e);
                proptest::prop_assert_eq!(normalize_weights(&k.scaled(p)).unwrap(), n);
            }
        }
    }

    #[test]
    fn build_config_examples() {
        let c128 = build_config(&stats(128, Some([10.0, 12.8, 16.0]), Some([1.0; 3]), 6.0)).unwrap();
        assert_eq!(c128.k_layer, 2);
        assert_eq!(c128.rois_per_image, 18);
        assert_eq!(c128.p_min, DEFAULT_P_MIN);
        assert_eq!(c128.loss_weights.to_array(), [0.2; 5]);
        let c256 = build_config(&stats(256, Some([20.0, 25.6, 30.0]), Some([1.0; 3]), 6.0)).unwrap();
        assert_eq!(c256.k_layer, 3);
        let empty = build_config(&stats(128, None, None, 0.0)).unwrap();
        assert_eq!(empty.rois_per_image, 8);
        assert_eq!(empty.k_layer, 2);
        assert_eq!(empty.anchor_scales, vec![13]);
        empty.validate().unwrap();
        assert!(build_config(&stats(128, Some([4.0, 5.0, 6.0]), Some([1.0; 3]), 6.0)).is_err());
    }

    #[test]
    fn stats_from_windows() {
        let wins: Vec<_> = [(0, 0, 10, 10), (20, 0, 12, 12), (40, 0, 16, 24)]
            .iter()
            .map(|&(x, y, w, h)| WindowAnnotation::from_box("a", 128, 128, BBox::new(x, y, w, h).unwrap()).unwrap())
            .collect();
        let s = DatasetStats::from_windows(128, 2, &wins).unwrap();
        assert_eq!(s.m, 3);
        assert_eq!(s.window_width_quantiles.unwrap().q50, 12.0);
        assert_eq!(s.aspect_quantiles.unwrap().q75, 1.25);
        assert_eq!(s.mean_windows_per_image, 1.5);
        assert!((s.object_fraction - (38.0 / 3.0) / 128.0).abs() < 1e-12);
        assert!(DatasetStats::from_windows(300, 2, &wins).is_err());
    }

    #[test]
    fn anchor_iou_matches_box_iou_on_integer_anchors() {
        let a = Anchor {
            cx: 10.0,
            cy: 10.0,
            w: 8.0,
            h: 8.0,
        };
        let b = BBox::new(6, 6, 8, 8).unwrap();
        assert_eq!(a.iou(&b), 1.0);
        let c = BBox::new(10, 6, 8, 8).unwrap();
        assert!((a.iou(&c) - crate::geometry::iou_box(&b, &c)).abs() < 1e-15);
    }
}
