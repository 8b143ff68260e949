//! Dataset preparation: adaptive square crops with bounded overlap,
//! luminance histogram equalization, lossless quarter-turn augmentation and
//! the seeded 6:2:2 split.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::WindowAnnotation;
use crate::error::{Error, Result};
use crate::texture::{luma, TextureImage};

/// Consecutive interior crops overlap by at most this fraction of the side.
pub const MAX_OVERLAP: f64 = 0.1;
pub const DEFAULT_MIN_VISIBLE: f64 = 0.5;
pub const SPLIT_RATIOS: [u32; 3] = [6, 2, 2];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropSpec {
    pub parent_id: String,
    pub origin_x: u32,
    pub origin_y: u32,
    pub side: u32,
    pub index: u32,
}

impl CropSpec {
    pub fn id(&self) -> String {
        format!("{}_c{:03}", self.parent_id, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub ratios: [u32; 3],
}

impl DatasetSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

/// `ceil(0.9 * side)`.
pub fn crop_stride(side: u32) -> u32 {
    (9 * side).div_ceil(10)
}

/// Crop origins along one axis: a uniform stride, with the last origin
/// clamped to `dim - side` so the axis is fully covered.
pub fn axis_origins(dim: u32, side: u32) -> Vec<u32> {
    let stride = crop_stride(side);
    let mut origins = Vec::new();
    let mut o = 0;
    while o + side <= dim {
        origins.push(o);
        o += stride;
    }
    let last = dim - side;
    if origins.last() != Some(&last) {
        origins.push(last);
    }
    origins
}

/// Row-major grid of square crops covering a `width × height` image.
pub fn adaptive_crops(parent_id: &str, width: u32, height: u32, side: u32) -> Result<Vec<CropSpec>> {
    if side == 0 || width < side || height < side {
        return Err(Error::ImageTooSmall { width, height, side });
    }
    let xs = axis_origins(width, side);
    let ys = axis_origins(height, side);
    let mut crops = Vec::with_capacity(xs.len() * ys.len());
    for &origin_y in &ys {
        for &origin_x in &xs {
            crops.push(CropSpec {
                parent_id: parent_id.to_string(),
                origin_x,
                origin_y,
                side,
                index: crops.len() as u32,
            });
        }
    }
    Ok(crops)
}

/// Clips the parent's windows to `crop`, keeping those with at least
/// `min_visible` of their area inside. Results are in crop coordinates.
pub fn crop_annotations(annotations: &[WindowAnnotation], crop: &CropSpec, min_visible: f64) -> Vec<WindowAnnotation> {
    let crop_id = crop.id();
    annotations
        .iter()
        .filter_map(|a| {
            let area = a.mask.popcount();
            let clipped = a.mask.crop(crop.origin_x, crop.origin_y, crop.side, crop.side);
            let visible = clipped.popcount();
            if visible == 0 || (visible as f64) < min_visible * area as f64 {
                return None;
            }
            WindowAnnotation::from_mask(crop_id.clone(), clipped).ok()
        })
        .collect()
}

/// Luma remap table from the image's cumulative histogram, or `None` when
/// the image has a single luma level.
pub fn equalization_lut(image: &TextureImage) -> Option<[u8; 256]> {
    let mut hist = [0u64; 256];
    for px in image.pixels.chunks_exact(3) {
        hist[luma([px[0], px[1], px[2]]) as usize] += 1;
    }
    if hist.iter().filter(|c| **c > 0).count() <= 1 {
        return None;
    }
    let total: u64 = hist.iter().sum();
    let mut cdf = [0u64; 256];
    let mut acc = 0;
    for (c, h) in cdf.iter_mut().zip(hist) {
        acc += h;
        *c = acc;
    }
    let cdf_min = hist.iter().copied().find(|h| *h > 0).unwrap_or(0);
    let den = total - cdf_min;
    let mut lut = [0u8; 256];
    for (v, out) in lut.iter_mut().enumerate() {
        let num = cdf[v].saturating_sub(cdf_min) * 255;
        *out = ((num + den / 2) / den) as u8;
    }
    Some(lut)
}

/// Recolors `rgb` so its rounded luma equals `target`, rescaling channels
/// proportionally and desaturating only where a channel would clip.
fn relight(rgb: [u8; 3], target: u8) -> [u8; 3] {
    const W: [f64; 3] = [0.299, 0.587, 0.114];
    let c = rgb.map(f64::from);
    let y: f64 = c.iter().zip(W).map(|(c, w)| c * w).sum();
    let t = f64::from(target);
    let mut out = if y <= 0.0 {
        [t; 3]
    } else {
        let scaled = c.map(|v| v * t / y);
        // Pull toward gray (luma-preserving) until every channel fits.
        let mut k = 1.0f64;
        for s in scaled {
            if s > 255.0 {
                k = k.min((255.0 - t) / (s - t));
            }
        }
        scaled.map(|s| t + (s - t) * k)
    }
    .map(|v| v.round().clamp(0.0, 255.0) as u8);

    // Rounding can leave the luma one level off; step the heaviest channel
    // that still has room. One step moves luma by < 1 level.
    const ORDER: [usize; 3] = [1, 0, 2];
    loop {
        let l = luma(out);
        if l == target {
            break out;
        }
        let up = l < target;
        let ch = ORDER
            .iter()
            .copied()
            .find(|&i| if up { out[i] < 255 } else { out[i] > 0 })
            .expect("target luma is reachable");
        if up {
            out[ch] += 1;
        } else {
            out[ch] -= 1;
        }
    }
}

/// Histogram-equalizes the luma channel; chroma follows by proportional
/// rescale. Single-level images are returned unchanged.
pub fn equalize_histogram(image: &TextureImage) -> TextureImage {
    let Some(lut) = equalization_lut(image) else {
        return image.clone();
    };
    let mut out = image.clone();
    for px in out.pixels.chunks_exact_mut(3) {
        let rgb = [px[0], px[1], px[2]];
        let target = lut[luma(rgb) as usize];
        if target != luma(rgb) {
            px.copy_from_slice(&relight(rgb, target));
        }
    }
    out
}

/// The four quarter-turn variants (k = 0..3 clockwise) of a square image
/// and its windows. Ids get an `_r{k}` suffix.
pub fn rotate90_augment(
    image: &TextureImage,
    annotations: &[WindowAnnotation],
) -> Result<Vec<(TextureImage, Vec<WindowAnnotation>)>> {
    if image.width != image.height {
        return Err(Error::NotSquare {
            width: image.width,
            height: image.height,
        });
    }
    let mut img = image.clone();
    let mut masks: Vec<_> = annotations.iter().map(|a| a.mask.clone()).collect();
    let mut out = Vec::with_capacity(4);
    for k in 0..4 {
        if k > 0 {
            img = img.rotate90_cw()?;
            masks = masks.iter().map(|m| m.rotate90_cw()).collect::<Result<_>>()?;
        }
        let id = format!("{}_r{}", image.id, k);
        let mut variant = img.clone();
        variant.id = id.clone();
        let anns = masks
            .iter()
            .map(|m| WindowAnnotation::from_mask(id.clone(), m.clone()))
            .collect::<Result<Vec<_>>>()?;
        out.push((variant, anns));
    }
    Ok(out)
}

fn check_unique(ids: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    Ok(())
}

fn split_bounds(n: usize) -> (usize, usize) {
    let train = n * 6 / 10;
    let val = n * 2 / 10;
    (train, train + val)
}

/// Seeded shuffle, then 60% train / 20% val / rest test (floor on the first
/// two boundaries).
pub fn split_dataset(ids: &[String], seed: u64) -> Result<DatasetSplit> {
    if ids.is_empty() {
        return Err(Error::invalid("cannot split an empty id list"));
    }
    check_unique(ids)?;
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (a, b) = split_bounds(shuffled.len());
    let test = shuffled.split_off(b);
    let val = shuffled.split_off(a);
    Ok(DatasetSplit {
        train: shuffled,
        val,
        test,
        seed,
        ratios: SPLIT_RATIOS,
    })
}

/// Split that keeps every member of a group (e.g. all crops of one texture)
/// in the same partition. Groups are shuffled and filled into train, then
/// val, then test, against the per-id 6:2:2 targets.
pub fn split_grouped(items: &[(String, String)], seed: u64) -> Result<DatasetSplit> {
    if items.is_empty() {
        return Err(Error::invalid("cannot split an empty id list"));
    }
    let ids: Vec<String> = items.iter().map(|(id, _)| id.clone()).collect();
    check_unique(&ids)?;

    let mut order: Vec<&str> = Vec::new();
    let mut members: HashMap<&str, Vec<String>> = HashMap::new();
    for (id, group) in items {
        members
            .entry(group.as_str())
            .or_insert_with(|| {
                order.push(group.as_str());
                Vec::new()
            })
            .push(id.clone());
    }
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let (a, b) = split_bounds(items.len());
    let (target_train, target_val) = (a, b - a);
    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        seed,
        ratios: SPLIT_RATIOS,
    };
    for g in order {
        let bucket = if split.train.len() < target_train {
            &mut split.train
        } else if split.val.len() < target_val {
            &mut split.val
        } else {
            &mut split.test
        };
        bucket.extend(members[g].iter().cloned());
    }
    Ok(split)
}

#[derive(Debug, Clone)]
pub struct PrepOptions {
    pub side: u32,
    pub seed: u64,
    pub min_visible: f64,
    /// Shuffle augmented crops individually instead of grouping by texture.
    pub shuffle_crops: bool,
}

impl Default for PrepOptions {
    fn default() -> Self {
        PrepOptions {
            side: 128,
            seed: 0,
            min_visible: DEFAULT_MIN_VISIBLE,
            shuffle_crops: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub images: Vec<TextureImage>,
    pub windows: Vec<WindowAnnotation>,
    pub crops: Vec<CropSpec>,
    pub split: DatasetSplit,
    /// Textures smaller than the crop side.
    pub skipped: Vec<String>,
}

/// Crop → equalize → augment every texture, then split.
pub fn prepare_dataset(
    textures: &[(TextureImage, Vec<WindowAnnotation>)],
    opts: &PrepOptions,
) -> Result<PreparedDataset> {
    let mut images = Vec::new();
    let mut windows = Vec::new();
    let mut crops = Vec::new();
    let mut skipped = Vec::new();
    let mut groups = Vec::new();

    for (texture, anns) in textures {
        let specs = match adaptive_crops(&texture.id, texture.width, texture.height, opts.side) {
            Ok(s) => s,
            Err(Error::ImageTooSmall { .. }) => {
                skipped.push(texture.id.clone());
                continue;
            }
            Err(e) => return Err(e),
        };
        for spec in specs {
            let crop_img = texture.crop(spec.id(), spec.origin_x, spec.origin_y, spec.side);
            let crop_img = equalize_histogram(&crop_img);
            let crop_anns = crop_annotations(anns, &spec, opts.min_visible);
            for (img, a) in rotate90_augment(&crop_img, &crop_anns)? {
                groups.push((img.id.clone(), texture.id.clone()));
                images.push(img);
                windows.extend(a);
            }
            crops.push(spec);
        }
    }
    if images.is_empty() {
        return Err(Error::invalid("no texture is large enough to crop"));
    }
    let split = if opts.shuffle_crops {
        let ids: Vec<String> = groups.into_iter().map(|(id, _)| id).collect();
        split_dataset(&ids, opts.seed)?
    } else {
        split_grouped(&groups, opts.seed)?
    };
    Ok(PreparedDataset {
        images,
        windows,
        crops,
        split,
        skipped,
    })
}
