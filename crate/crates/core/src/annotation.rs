//! Window annotations and the COCO-style JSON store they are persisted in.

use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, BinaryMask};

pub const WINDOW_LABEL: &str = "window";

/// Ground-truth window: a tight box plus a mask over the whole image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowAnnotation {
    pub image_id: String,
    pub bbox: BBox,
    pub mask: BinaryMask,
    pub class_label: String,
}

impl WindowAnnotation {
    /// Builds an annotation whose box is the tight box of `mask`.
    pub fn from_mask(image_id: impl Into<String>, mask: BinaryMask) -> Result<Self> {
        let image_id = image_id.into();
        let bbox = mask
            .tight_bbox()
            .ok_or_else(|| Error::invalid(format!("empty window mask on image {image_id}")))?;
        Ok(WindowAnnotation {
            image_id,
            bbox,
            mask,
            class_label: WINDOW_LABEL.to_string(),
        })
    }

    pub fn from_box(image_id: impl Into<String>, width: u32, height: u32, bbox: BBox) -> Result<Self> {
        if !bbox.fits(width, height) {
            return Err(Error::invalid(format!("box {bbox:?} outside {width}x{height} image")));
        }
        Self::from_mask(image_id, BinaryMask::filled_box(width, height, &bbox))
    }
}

/// Accepts COCO integer ids as well as string ids.
pub(crate) fn de_id<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        Int(u64),
        Str(String),
    }
    Ok(match Id::deserialize(d)? {
        Id::Int(i) => i.to_string(),
        Id::Str(s) => s,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    #[serde(deserialize_with = "de_id")]
    pub id: String,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    #[serde(deserialize_with = "de_id")]
    pub image_id: String,
    #[serde(default = "default_category")]
    pub category_id: u64,
    pub bbox: BBox,
    /// Absent segmentation means the window fills its box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<BinaryMask>,
    #[serde(default)]
    pub area: u64,
    #[serde(default)]
    pub iscrowd: u8,
}

fn default_category() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CocoDataset {
    pub images: Vec<CocoImage>,
    #[serde(default)]
    pub annotations: Vec<CocoAnnotation>,
    #[serde(default)]
    pub categories: Vec<CocoCategory>,
}

impl CocoDataset {
    /// Assembles a dataset from images and their windows. Annotation ids are
    /// assigned sequentially from 1 in the given order.
    pub fn from_windows(images: Vec<CocoImage>, windows: &[WindowAnnotation]) -> Self {
        let annotations = windows
            .iter()
            .enumerate()
            .map(|(i, w)| CocoAnnotation {
                id: i as u64 + 1,
                image_id: w.image_id.clone(),
                category_id: 1,
                bbox: w.bbox,
                segmentation: Some(w.mask.clone()),
                area: w.mask.popcount(),
                iscrowd: 0,
            })
            .collect();
        CocoDataset {
            images,
            annotations,
            categories: vec![CocoCategory {
                id: 1,
                name: WINDOW_LABEL.to_string(),
            }],
        }
    }

    pub fn image(&self, id: &str) -> Option<&CocoImage> {
        self.images.iter().find(|i| i.id == id)
    }

    /// Converts annotations to [`WindowAnnotation`]s, validating extents.
    pub fn windows(&self) -> Result<Vec<WindowAnnotation>> {
        self.annotations
            .iter()
            .map(|a| {
                let img = self.image(&a.image_id).ok_or_else(|| {
                    Error::invalid(format!("annotation {} references unknown image {}", a.id, a.image_id))
                })?;
                let mask = match &a.segmentation {
                    Some(m) => {
                        if m.dims() != (img.width, img.height) {
                            return Err(Error::DimensionMismatch {
                                expected: (img.width, img.height),
                                found: m.dims(),
                            });
                        }
                        m.clone()
                    }
                    None => {
                        if !a.bbox.fits(img.width, img.height) {
                            return Err(Error::invalid(format!("annotation {} box outside image", a.id)));
                        }
                        BinaryMask::filled_box(img.width, img.height, &a.bbox)
                    }
                };
                WindowAnnotation::from_mask(a.image_id.clone(), mask)
            })
            .collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
