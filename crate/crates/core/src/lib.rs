//! Coarse-to-fine facial landmark localization.
//!
//! The pipeline runs in three steps:
//!
//! 1. a global regressor predicts all landmarks from the detector box crop
//!    ([`cascade::predict_coarse`]);
//! 2. the face is rotated and scaled into a canonical frame
//!    ([`cascade::canonicalize`]);
//! 3. group regressors fed with multi-scale patch pyramids refine the
//!    landmarks, pass after pass, until the update becomes negligible
//!    ([`cascade::run_refinement`]).
//!
//! Around it sit a least-squares schema remapper ([`schema`]), inter-pupil
//! normalized evaluation ([`evaluation`]) and file formats plus a synthetic
//! face corpus for desk-scale training ([`dataio`]).

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cascade;
pub mod dataio;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod imaging;
pub mod regressor;
pub mod schema;

pub use cascade::{
    align, canonicalize, predict_coarse, refine_once, run_refinement, train_cascade, CascadeConfig,
    CascadeModel, FaceBox,
};
pub use dataio::Sample;
pub use error::{Error, Result};
pub use geometry::{Point2, Shape, SimilarityTransform};
pub use imaging::GrayImage;
pub use schema::SchemaDef;
