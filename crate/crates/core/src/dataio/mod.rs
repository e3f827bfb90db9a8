//! File formats, dataset manifests and the synthetic corpus generator.

mod manifest;
mod pgm;
mod pts;
pub mod synth;

pub use manifest::{AnnotationRecord, DatasetManifest, MANIFEST_FORMAT_VERSION};
pub use pgm::{quantize, read_pgm, write_pgm};
pub use pts::{format_coordinate, read_pts, write_pts};
pub use synth::{generate_synthetic, render_face, RenderParams, SyntheticConfig, SyntheticCorpus};

use crate::cascade::FaceBox;
use crate::geometry::Shape;
use crate::imaging::GrayImage;

/// One annotated face ready for training or evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image_id: String,
    pub image: GrayImage,
    pub face_box: FaceBox,
    pub shape: Shape,
    pub subset_tag: Option<String>,
}
