//! Pixel boxes, binary masks and their IoU.
//!
//! A box covers the half-open lattice `[x, x+w) × [y, y+h)`. Masks are stored
//! densely (row-major) and serialize as uncompressed column-major RLE that
//! starts with a run of zeros.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned integer box. Serializes as `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(Error::invalid(format!("box extent must be >= 1, got {w}x{h}")));
        }
        Ok(BBox { x, y, w, h })
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    /// Center in continuous pixel coordinates.
    pub fn center(&self) -> (f64, f64) {
        (
            f64::from(self.x) + f64::from(self.w) / 2.0,
            f64::from(self.y) + f64::from(self.h) / 2.0,
        )
    }

    pub fn intersection_area(&self, other: &BBox) -> u64 {
        let ix = self.right().min(other.right()).saturating_sub(self.x.max(other.x));
        let iy = self.bottom().min(other.bottom()).saturating_sub(self.y.max(other.y));
        u64::from(ix) * u64::from(iy)
    }

    /// True if the box lies inside a `width × height` image.
    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.right() <= width && self.bottom() <= height
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = String;

    fn try_from(v: [f64; 4]) -> std::result::Result<Self, Self::Error> {
        if v.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(format!("bbox components must be finite and >= 0: {v:?}"));
        }
        let [x, y, w, h] = v.map(|c| c.round() as u32);
        BBox::new(x, y, w, h).map_err(|e| e.to_string())
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// Intersection over union of two boxes.
pub fn iou_box(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Uncompressed COCO-style RLE: `size` is `[height, width]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub size: [u32; 2],
    pub counts: Vec<u64>,
}

/// Dense binary mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Rle", into = "Rle")]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(width: u32, height: u32) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    /// Builds a mask from a row-major bitmap.
    pub fn from_bitmap(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("mask dimensions must be > 0"));
        }
        if bits.len() != width as usize * height as usize {
            return Err(Error::invalid(format!(
                "bitmap has {} entries, expected {}",
                bits.len(),
                width as usize * height as usize
            )));
        }
        Ok(BinaryMask { width, height, bits })
    }

    /// Mask of the pixels covered by `bbox`, clipped to the extent.
    pub fn filled_box(width: u32, height: u32, bbox: &BBox) -> Self {
        let mut m = BinaryMask::empty(width, height);
        for y in bbox.y..bbox.bottom().min(height) {
            for x in bbox.x..bbox.right().min(width) {
                m.set(x, y, true);
            }
        }
        m
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bitmap(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = v;
    }

    pub fn popcount(&self) -> u64 {
        self.bits.iter().filter(|b| **b).count() as u64
    }

    /// Tight bounding box of the set pixels, `None` for an empty mask.
    pub fn tight_bbox(&self) -> Option<BBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        (x0 != u32::MAX).then(|| BBox {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        })
    }

    /// Column-major runs, alternating 0/1 and starting with a (possibly
    /// empty) 0-run.
    pub fn to_runs(&self) -> Vec<u64> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u64;
        for x in 0..self.width {
            for y in 0..self.height {
                let v = self.get(x, y);
                if v != current {
                    runs.push(len);
                    current = v;
                    len = 0;
                }
                len += 1;
            }
        }
        runs.push(len);
        runs
    }

    pub fn from_runs(width: u32, height: u32, runs: &[u64]) -> Result<Self> {
        let expected = u64::from(width) * u64::from(height);
        let found: u64 = runs.iter().sum();
        if found != expected {
            return Err(Error::InvalidRle { expected, found });
        }
        let mut m = BinaryMask::empty(width, height);
        let mut pos = 0u64;
        let mut value = false;
        for &run in runs {
            if value {
                for p in pos..pos + run {
                    let x = (p / u64::from(height)) as u32;
                    let y = (p % u64::from(height)) as u32;
                    m.set(x, y, true);
                }
            }
            pos += run;
            value = !value;
        }
        Ok(m)
    }

    pub fn to_rle(&self) -> Rle {
        Rle {
            size: [self.height, self.width],
            counts: self.to_runs(),
        }
    }

    /// Clockwise quarter turn of a square mask.
    pub fn rotate90_cw(&self) -> Result<Self> {
        if self.width != self.height {
            return Err(Error::NotSquare {
                width: self.width,
                height: self.height,
            });
        }
        let n = self.width;
        let mut out = BinaryMask::empty(n, n);
        for y in 0..n {
            for x in 0..n {
                if self.get(x, y) {
                    out.set(n - 1 - y, x, true);
                }
            }
        }
        Ok(out)
    }

    /// Sub-window `[x0, x0+w) × [y0, y0+h)` as a new mask.
    pub fn crop(&self, x0: u32, y0: u32, w: u32, h: u32) -> Self {
        let mut out = BinaryMask::empty(w, h);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = (x0 + x, y0 + y);
                if sx < self.width && sy < self.height && self.get(sx, sy) {
                    out.set(x, y, true);
                }
            }
        }
        out
    }

    fn check_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(())
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> Result<u64> {
        self.check_dims(other)?;
        Ok(self.bits.iter().zip(&other.bits).filter(|(a, b)| **a && **b).count() as u64)
    }
}

impl TryFrom<Rle> for BinaryMask {
    type Error = Error;

    fn try_from(rle: Rle) -> Result<Self> {
        let [h, w] = rle.size;
        if w == 0 || h == 0 {
            return Err(Error::invalid("mask dimensions must be > 0"));
        }
        BinaryMask::from_runs(w, h, &rle.counts)
    }
}

impl From<BinaryMask> for Rle {
    fn from(m: BinaryMask) -> Self {
        m.to_rle()
    }
}

/// Intersection over union of two masks of equal extent; two empty masks
/// have IoU 1.
pub fn iou_mask(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let inter = a.intersection_count(b)?;
    let union = a.popcount() + b.popcount() - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}
