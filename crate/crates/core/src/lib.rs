//! Facade window detection tooling.
//!
//! Covers the work around a window detector: reading facade textures out of
//! CityGML, cutting and augmenting training crops, planning detector depth,
//! anchors and loss weights from the data, scoring detections (AP50,
//! precision, recall), and tuning the inference threshold. A synthetic
//! facade generator with a noisy detector provides exact ground truth for
//! every metric.

pub mod annotation;
pub mod citygml;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod planner;
pub mod synth;
pub mod texture;
pub mod tuner;

pub use annotation::{CocoDataset, WindowAnnotation};
pub use error::{Error, Result};
pub use eval::{Detection, EvalMode, EvalOptions, EvalReport};
pub use geometry::{iou_box, iou_mask, BBox, BinaryMask};
pub use planner::{LossWeights, NetworkConfig};
pub use texture::TextureImage;
