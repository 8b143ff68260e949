//! Synthetic facades with exact ground truth, and a seeded noisy detector.
//!
//! Scenes vary along exposure (gamma), shadow and perspective (integer
//! per-row shear) while the window masks stay pixel-exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::WindowAnnotation;
use crate::error::{Error, Result};
use crate::eval::Detection;
use crate::geometry::{BBox, BinaryMask};
use crate::texture::TextureImage;

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacadeSceneSpec {
    #[serde(default)]
    pub id: Option<String>,
    pub image_side: u32,
    pub rows: u32,
    pub cols: u32,
    pub window_w: u32,
    pub window_h: u32,
    pub margin: u32,
    pub spacing: u32,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default)]
    pub shadow_fraction: f64,
    /// Horizontal pixel shift per image row.
    #[serde(default)]
    pub shear: f64,
    #[serde(default)]
    pub seed: u64,
}

impl FacadeSceneSpec {
    /// Unsheared, unshadowed grid at gamma 1.
    pub fn grid(
        image_side: u32,
        rows: u32,
        cols: u32,
        window_w: u32,
        window_h: u32,
        margin: u32,
        spacing: u32,
    ) -> Self {
        FacadeSceneSpec {
            id: None,
            image_side,
            rows,
            cols,
            window_w,
            window_h,
            margin,
            spacing,
            gamma: 1.0,
            shadow_fraction: 0.0,
            shear: 0.0,
            seed: 0,
        }
    }

    pub fn image_id(&self) -> String {
        self.id.clone().unwrap_or_else(|| format!("facade-{}", self.seed))
    }

    fn row_shift(&self, y: u32) -> i64 {
        (self.shear * f64::from(y)).round() as i64
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_side == 0 || self.window_w == 0 || self.window_h == 0 {
            return Err(Error::invalid("image and window extents must be >= 1"));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::invalid(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.shadow_fraction) {
            return Err(Error::invalid("shadow_fraction must be in [0, 1]"));
        }
        if !self.shear.is_finite() {
            return Err(Error::invalid("shear must be finite"));
        }
        let extent = |n: u32, size: u32| {
            u64::from(n) * u64::from(size) + u64::from(n.saturating_sub(1)) * u64::from(self.spacing)
        };
        let need_w = 2 * u64::from(self.margin) + extent(self.cols, self.window_w);
        let need_h = 2 * u64::from(self.margin) + extent(self.rows, self.window_h);
        let side = u64::from(self.image_side);
        if need_w > side || need_h > side {
            return Err(Error::GridOverflow(format!(
                "grid needs {need_w}x{need_h} px, image side is {side}"
            )));
        }
        Ok(())
    }
}

/// Renders the facade and returns its exact window annotations, row-major.
pub fn generate_facade(spec: &FacadeSceneSpec) -> Result<(TextureImage, Vec<WindowAnnotation>)> {
    spec.validate()?;
    let side = spec.image_side;
    let id = spec.image_id();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let wall = [
        rng.random_range(150..=210u8),
        rng.random_range(130..=190u8),
        rng.random_range(110..=170u8),
    ];
    let glass = [
        rng.random_range(20..=60u8),
        rng.random_range(30..=70u8),
        rng.random_range(40..=80u8),
    ];

    let mut img = TextureImage::filled(id.clone(), side, side, wall);
    img.source = "synthetic".into();
    let mut annotations = Vec::with_capacity((spec.rows * spec.cols) as usize);
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            let x0 = spec.margin + c * (spec.window_w + spec.spacing);
            let y0 = spec.margin + r * (spec.window_h + spec.spacing);
            let mut mask = BinaryMask::empty(side, side);
            for y in y0..y0 + spec.window_h {
                let start = i64::from(x0) + spec.row_shift(y);
                let end = start + i64::from(spec.window_w);
                if start < 0 || end > i64::from(side) {
                    return Err(Error::GridOverflow(format!(
                        "window ({r}, {c}) leaves the image after shear {}",
                        spec.shear
                    )));
                }
                for x in start as u32..end as u32 {
                    mask.set(x, y, true);
                    img.set_pixel(x, y, glass);
                }
            }
            annotations.push(WindowAnnotation::from_mask(id.clone(), mask)?);
        }
    }

    if spec.gamma != 1.0 {
        let lut: Vec<u8> = (0..=255u32)
            .map(|v| (255.0 * (f64::from(v) / 255.0).powf(spec.gamma)).round() as u8)
            .collect();
        for p in &mut img.pixels {
            *p = lut[*p as usize];
        }
    }
    let shadow_cols = (spec.shadow_fraction * f64::from(side)).floor() as u32;
    for y in 0..side {
        for x in 0..shadow_cols {
            let px = img.pixel(x, y);
            img.set_pixel(x, y, px.map(|v| v / 2));
        }
    }
    Ok((img, annotations))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorNoiseSpec {
    #[serde(default)]
    pub drop_prob: f64,
    #[serde(default)]
    pub dup_prob: f64,
    #[serde(default)]
    pub jitter_px: u32,
    pub score_range: [f64; 2],
    #[serde(default)]
    pub seed: u64,
    /// Ground-truth indices that are always dropped.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub drop_indices: Vec<usize>,
}

impl DetectorNoiseSpec {
    /// Emits every window exactly, at a fixed score.
    pub fn perfect(score: f64) -> Self {
        DetectorNoiseSpec {
            drop_prob: 0.0,
            dup_prob: 0.0,
            jitter_px: 0,
            score_range: [score, score],
            seed: 0,
            drop_indices: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.score_range;
        if !(0.0..=1.0).contains(&self.drop_prob) || !(0.0..=1.0).contains(&self.dup_prob) {
            return Err(Error::invalid("drop_prob and dup_prob must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::invalid(format!("invalid score range [{lo}, {hi}]")));
        }
        Ok(())
    }
}

fn jittered(gt: &WindowAnnotation, jitter: u32, score: f64, rng: &mut ChaCha8Rng) -> Detection {
    let (w, h) = gt.mask.dims();
    let j = i64::from(jitter);
    let mut d = [0i64; 4];
    if j > 0 {
        for v in &mut d {
            *v = rng.random_range(-j..=j);
        }
    }
    let b = gt.bbox;
    let x0 = (i64::from(b.x) + d[0]).clamp(0, i64::from(w) - 1);
    let y0 = (i64::from(b.y) + d[1]).clamp(0, i64::from(h) - 1);
    let x1 = (i64::from(b.right()) + d[2]).clamp(x0 + 1, i64::from(w));
    let y1 = (i64::from(b.bottom()) + d[3]).clamp(y0 + 1, i64::from(h));
    let bbox = BBox {
        x: x0 as u32,
        y: y0 as u32,
        w: (x1 - x0) as u32,
        h: (y1 - y0) as u32,
    };

    // Ground-truth shape moved with the top-left corner, clipped to the box.
    let (dx, dy) = (x0 - i64::from(b.x), y0 - i64::from(b.y));
    let mut mask = BinaryMask::empty(w, h);
    for y in bbox.y..bbox.bottom() {
        for x in bbox.x..bbox.right() {
            let (sx, sy) = (i64::from(x) - dx, i64::from(y) - dy);
            if sx >= 0 && sy >= 0 && sx < i64::from(w) && sy < i64::from(h) && gt.mask.get(sx as u32, sy as u32) {
                mask.set(x, y, true);
            }
        }
    }
    if mask.popcount() == 0 {
        mask = BinaryMask::filled_box(w, h, &bbox);
    }
    Detection {
        image_id: gt.image_id.clone(),
        bbox,
        mask: Some(mask),
        score,
        class_label: gt.class_label.clone(),
    }
}

/// Noisy detector: drops, jitters and duplicates ground-truth windows.
/// Deterministic for a given seed.
pub fn simulate_detector(annotations: &[WindowAnnotation], noise: &DetectorNoiseSpec) -> Result<Vec<Detection>> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let [lo, hi] = noise.score_range;
    let score = |rng: &mut ChaCha8Rng| if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let mut out = Vec::with_capacity(annotations.len());
    for (i, gt) in annotations.iter().enumerate() {
        let u: f64 = rng.random();
        if u < noise.drop_prob || noise.drop_indices.contains(&i) {
            continue;
        }
        let s = score(&mut rng);
        out.push(jittered(gt, noise.jitter_px, s, &mut rng));
        let v: f64 = rng.random();
        if v < noise.dup_prob {
            let s = score(&mut rng);
            out.push(jittered(gt, noise.jitter_px, s, &mut rng));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{evaluate, EvalMode, EvalOptions};

    fn grid4() -> FacadeSceneSpec {
        FacadeSceneSpec::grid(128, 4, 4, 12, 12, 8, 16)
    }

    #[test]
    fn grid_scene() {
        let (img, anns) = generate_facade(&grid4()).unwrap();
        assert_eq!((img.width, img.height), (128, 128));
        assert_eq!(anns.len(), 16);
        assert!(anns.iter().all(|a| a.mask.popcount() == 144));
        assert_eq!(anns[5].bbox, BBox::new(8 + 28, 8 + 28, 12, 12).unwrap());
    }

    #[test]
    fn exposure_does_not_move_windows() {
        let (img1, a1) = generate_facade(&grid4()).unwrap();
        let dark = FacadeSceneSpec { gamma: 0.5, ..grid4() };
        let (img2, a2) = generate_facade(&dark).unwrap();
        assert_eq!(a1, a2);
        assert_ne!(img1.pixels, img2.pixels);
    }

    #[test]
    fn shadow_halves_left_columns() {
        let base = generate_facade(&grid4()).unwrap().0;
        let shaded = FacadeSceneSpec {
            shadow_fraction: 0.25,
            ..grid4()
        };
        let img = generate_facade(&shaded).unwrap().0;
        assert_eq!(img.pixel(31, 0), base.pixel(31, 0).map(|v| v / 2));
        assert_eq!(img.pixel(32, 0), base.pixel(32, 0));
    }

    #[test]
    fn shear_shifts_rows() {
        let spec = FacadeSceneSpec {
            shear: 0.1,
            ..FacadeSceneSpec::grid(128, 4, 4, 12, 12, 4, 8)
        };
        let (_, anns) = generate_facade(&spec).unwrap();
        assert_eq!(anns.len(), 16);
        for a in &anns {
            assert_eq!(a.mask.popcount(), 144);
            // brute-force tight box
            let (mut x0, mut x1, mut y0, mut y1) = (u32::MAX, 0, u32::MAX, 0);
            for y in 0..128 {
                for x in 0..128 {
                    if a.mask.get(x, y) {
                        x0 = x0.min(x);
                        x1 = x1.max(x + 1);
                        y0 = y0.min(y);
                        y1 = y1.max(y + 1);
                    }
                }
            }
            assert_eq!(a.bbox, BBox::new(x0, y0, x1 - x0, y1 - y0).unwrap());
            assert!(a.bbox.w > 12);
        }
        // window on the last row starts at round(0.1 * y) past its column
        let last = &anns[12];
        let y = last.bbox.y;
        assert!(last.mask.get(4 + (0.1 * f64::from(y)).round() as u32, y));
    }

    #[test]
    fn overflow_is_rejected() {
        let too_wide = FacadeSceneSpec::grid(64, 1, 5, 12, 12, 4, 4);
        assert!(matches!(generate_facade(&too_wide), Err(Error::GridOverflow(_))));
        let sheared = FacadeSceneSpec {
            shear: 2.0,
            ..FacadeSceneSpec::grid(64, 2, 2, 12, 12, 4, 4)
        };
        assert!(matches!(generate_facade(&sheared), Err(Error::GridOverflow(_))));
        let bad_gamma = FacadeSceneSpec { gamma: 0.0, ..grid4() };
        assert!(generate_facade(&bad_gamma).is_err());
    }

    #[test]
    fn identity_detector() {
        let (_, anns) = generate_facade(&grid4()).unwrap();
        let dets = simulate_detector(&anns, &DetectorNoiseSpec::perfect(0.9)).unwrap();
        for mode in [EvalMode::Box, EvalMode::Mask] {
            let r = evaluate(
                &dets,
                &anns,
                &EvalOptions {
                    p_min: 0.5,
                    mode,
                    ..Default::default()
                },
            )
            .unwrap();
            assert_eq!((r.precision, r.recall, r.ap50), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn forced_drop_and_duplicates() {
        let spec = FacadeSceneSpec::grid(128, 2, 5, 12, 12, 8, 10);
        let (_, anns) = generate_facade(&spec).unwrap();
        assert_eq!(anns.len(), 10);
        let noise = DetectorNoiseSpec {
            drop_indices: vec![3],
            ..DetectorNoiseSpec::perfect(0.9)
        };
        let dets = simulate_detector(&anns, &noise).unwrap();
        let r = evaluate(
            &dets,
            &anns,
            &EvalOptions {
                p_min: 0.5,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((r.recall - 0.9).abs() < 1e-12);

        let dup = DetectorNoiseSpec {
            dup_prob: 1.0,
            ..DetectorNoiseSpec::perfect(0.9)
        };
        let dets = simulate_detector(&anns, &dup).unwrap();
        assert_eq!(dets.len(), 20);
        let r = evaluate(
            &dets,
            &anns,
            &EvalOptions {
                p_min: 0.5,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!((r.precision, r.recall), (0.5, 1.0));
    }

    #[test]
    fn jitter_stays_inside_and_is_seeded() {
        let (_, anns) = generate_facade(&grid4()).unwrap();
        let noise = DetectorNoiseSpec {
            jitter_px: 3,
            score_range: [0.2, 0.9],
            seed: 5,
            ..DetectorNoiseSpec::perfect(0.5)
        };
        let a = simulate_detector(&anns, &noise).unwrap();
        let b = simulate_detector(&anns, &noise).unwrap();
        assert_eq!(a, b);
        for d in &a {
            assert!(d.bbox.fits(128, 128));
            assert!((0.2..=0.9).contains(&d.score));
            assert!(d.mask.as_ref().unwrap().popcount() > 0);
        }
        let bad = DetectorNoiseSpec {
            score_range: [0.9, 0.2],
            ..noise
        };
        assert!(simulate_detector(&anns, &bad).is_err());
    }
}
