//! Data engine for open-vocabulary remote-sensing detection: dataset tiling,
//! format conversion, curation, automatic coarse labelling, vocabulary sampling,
//! training-loss kernels and a COCO-style evaluator.

pub mod autolabel;
pub mod domain;
pub mod dvc;
pub mod error;
pub mod eval;
pub mod formats;
pub mod geometry;
pub mod numerics;
pub mod pipeline;
pub mod tiler;

pub use domain::{canonicalize_category, BBox, DatasetManifest, ImageRecord, Instance};
pub use error::{Error, Result};
pub use formats::{AutoLabelRecord, RoiProposal};
pub use geometry::{giou, iou};
pub use tiler::{Tile, TileSpec};
