//! Dataset manifests: one JSON document listing images, boxes and landmarks.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::RenderParams;
use super::{read_pgm, Sample};
use crate::cascade::FaceBox;
use crate::error::{Error, Result};
use crate::geometry::{Point2, Shape};
use crate::schema::SchemaDef;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    /// Relative to the manifest's directory.
    pub image_path: String,
    pub face_box: FaceBox,
    pub landmarks: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_tag: Option<String>,
    /// Generator parameters, present for synthetic faces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub render: Option<RenderParams>,
}

impl AnnotationRecord {
    pub fn shape(&self, schema_id: &str) -> Result<Shape> {
        Shape::new(
            schema_id,
            self.landmarks
                .iter()
                .map(|&[x, y]| Point2::new(x, y))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub schema_id: String,
    pub records: Vec<AnnotationRecord>,
    /// Directory that `image_path`s are resolved against.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(schema_id: impl Into<String>, records: Vec<AnnotationRecord>) -> Self {
        Self {
            format_version: MANIFEST_FORMAT_VERSION,
            schema_id: schema_id.into(),
            records,
            root: PathBuf::from("."),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::Version {
                found: self.format_version,
                expected: MANIFEST_FORMAT_VERSION,
            });
        }
        let mut ids = HashSet::new();
        let count = self.records.first().map(|r| r.landmarks.len());
        for r in &self.records {
            if !ids.insert(r.image_id.as_str()) {
                return Err(Error::Document(format!(
                    "duplicate image id `{}`",
                    r.image_id
                )));
            }
            r.face_box.validate()?;
            if Some(r.landmarks.len()) != count {
                return Err(Error::Document(format!(
                    "record `{}` has {} landmarks, expected {}",
                    r.image_id,
                    r.landmarks.len(),
                    count.unwrap_or(0)
                )));
            }
        }
        Ok(())
    }

    /// The built-in schema with this id, or a bare schema sized from the records.
    pub fn schema(&self) -> Result<SchemaDef> {
        match SchemaDef::builtin(&self.schema_id) {
            Ok(s) => {
                if let Some(r) = self
                    .records
                    .iter()
                    .find(|r| r.landmarks.len() != s.point_count)
                {
                    return Err(Error::DimensionMismatch {
                        expected: s.point_count,
                        actual: r.landmarks.len(),
                        context: "manifest landmark count",
                    });
                }
                Ok(s)
            }
            Err(_) => Ok(SchemaDef::generic(
                self.schema_id.clone(),
                self.records.first().map_or(0, |r| r.landmarks.len()),
            )),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut m = Self::from_json(&std::fs::read_to_string(path)?)?;
        m.root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn image_path(&self, record: &AnnotationRecord) -> PathBuf {
        self.root.join(&record.image_path)
    }

    /// Loads every image and builds evaluation/training samples.
    pub fn load_samples(&self) -> Result<Vec<Sample>> {
        self.records
            .iter()
            .map(|r| {
                let path = self.image_path(r);
                let bytes = std::fs::read(&path).map_err(|e| {
                    Error::Io(std::io::Error::new(
                        e.kind(),
                        format!("{}: {e}", path.display()),
                    ))
                })?;
                Ok(Sample {
                    image_id: r.image_id.clone(),
                    image: read_pgm(&bytes)?,
                    face_box: r.face_box,
                    shape: r.shape(&self.schema_id)?,
                    subset_tag: r.subset_tag.clone(),
                })
            })
            .collect()
    }
}
