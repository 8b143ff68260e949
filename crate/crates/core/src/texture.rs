use std::path::Path;

use image::RgbImage;

use crate::error::{Error, Result};

/// An 8-bit RGB raster with identity and provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextureImage {
    pub id: String,
    pub width: u32,
    pub height: u32,
    /// Row-major RGB, `width * height * 3` bytes.
    pub pixels: Vec<u8>,
    pub source: String,
}

impl TextureImage {
    pub fn new(
        id: impl Into<String>,
        width: u32,
        height: u32,
        pixels: Vec<u8>,
        source: impl Into<String>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be >= 1"));
        }
        if pixels.len() != width as usize * height as usize * 3 {
            return Err(Error::invalid(format!(
                "pixel buffer has {} bytes, expected {}",
                pixels.len(),
                width as usize * height as usize * 3
            )));
        }
        Ok(TextureImage {
            id: id.into(),
            width,
            height,
            pixels,
            source: source.into(),
        })
    }

    pub fn filled(id: impl Into<String>, width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let pixels = rgb.repeat(width as usize * height as usize);
        TextureImage {
            id: id.into(),
            width,
            height,
            pixels,
            source: String::new(),
        }
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }

    /// Square sub-image with origin `(x0, y0)`; the caller guarantees it fits.
    pub fn crop(&self, id: impl Into<String>, x0: u32, y0: u32, side: u32) -> Self {
        let mut pixels = Vec::with_capacity(side as usize * side as usize * 3);
        for y in y0..y0 + side {
            let start = self.offset(x0, y);
            pixels.extend_from_slice(&self.pixels[start..start + side as usize * 3]);
        }
        TextureImage {
            id: id.into(),
            width: side,
            height: side,
            pixels,
            source: format!("{}@{},{}", self.id, x0, y0),
        }
    }

    /// Clockwise quarter turn.
    pub fn rotate90_cw(&self) -> Result<Self> {
        if self.width != self.height {
            return Err(Error::NotSquare {
                width: self.width,
                height: self.height,
            });
        }
        let n = self.width;
        let mut out = self.clone();
        for y in 0..n {
            for x in 0..n {
                out.set_pixel(n - 1 - y, x, self.pixel(x, y));
            }
        }
        Ok(out)
    }

    pub fn load(path: &Path, id: impl Into<String>) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (width, height) = img.dimensions();
        TextureImage::new(id, width, height, img.into_raw(), path.display().to_string())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = RgbImage::from_raw(self.width, self.height, self.pixels.clone())
            .ok_or_else(|| Error::invalid("pixel buffer does not match dimensions"))?;
        buf.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}

/// BT.601 luma rounded to the nearest integer.
#[inline]
pub fn luma(rgb: [u8; 3]) -> u8 {
    let [r, g, b] = rgb.map(u32::from);
    ((299 * r + 587 * g + 114 * b + 500) / 1000) as u8
}
