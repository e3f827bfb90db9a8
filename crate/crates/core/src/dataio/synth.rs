//! Deterministic synthetic face corpus.
//!
//! Each face is a light elliptical head with two dark eyes (with pupils), a
//! nose dot and a mouth arc, drawn with one-pixel anti-aliased edges under a
//! random similarity pose, then corrupted by Gaussian pixel noise and
//! quantized to 8 bits. Landmarks follow [`SchemaDef::synthetic12`].

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{AnnotationRecord, DatasetManifest};
use super::{write_pgm, write_pts};
use crate::cascade::FaceBox;
use crate::error::{Error, Result};
use crate::geometry::{Point2, Shape, SimilarityTransform};
use crate::imaging::GrayImage;
use crate::schema::{SchemaDef, SYNTHETIC12};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub count: usize,
    pub image_size: usize,
    pub seed: u64,
    /// Roll is drawn from `[-rotation_range, rotation_range]` radians.
    pub rotation_range: f64,
    pub scale_range: [f64; 2],
    /// Face-center offset range as a fraction of the image size.
    pub translation_range: f64,
    /// Standard deviation of the additive pixel noise.
    pub noise_level: f64,
    /// Relative per-face variation of the facial layout.
    pub shape_jitter: f64,
    /// Faces with `|roll|` at or above this are tagged `challenging`.
    pub challenging_rotation: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            count: 200,
            image_size: 96,
            seed: 0,
            rotation_range: 0.3,
            scale_range: [0.8, 1.25],
            translation_range: 0.05,
            noise_level: 0.05,
            shape_jitter: 0.08,
            challenging_rotation: 0.2,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale_range;
        if self.image_size < 16 {
            return Err(Error::InvalidValue("image_size must be >= 16".into()));
        }
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::InvalidValue(
                "scale_range must satisfy 0 < min <= max".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.noise_level) {
            return Err(Error::InvalidValue("noise_level must lie in [0, 1)".into()));
        }
        if !(self.rotation_range >= 0.0
            && self.translation_range >= 0.0
            && self.shape_jitter >= 0.0)
        {
            return Err(Error::InvalidValue(
                "pose and jitter ranges must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Facial layout in face-local units (y down, face centered at the origin).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceLayout {
    pub head_half_width: f64,
    pub head_half_height: f64,
    pub eye_offset_x: f64,
    pub eye_y: f64,
    pub eye_half_width: f64,
    pub eye_half_height: f64,
    pub nose_y: f64,
    pub mouth_half_width: f64,
    pub mouth_y: f64,
    pub mouth_curve: f64,
}

impl Default for FaceLayout {
    fn default() -> Self {
        Self {
            head_half_width: 22.0,
            head_half_height: 28.0,
            eye_offset_x: 10.0,
            eye_y: -6.0,
            eye_half_width: 4.0,
            eye_half_height: 2.2,
            nose_y: 5.0,
            mouth_half_width: 8.0,
            mouth_y: 14.0,
            mouth_curve: 3.0,
        }
    }
}

impl FaceLayout {
    fn jittered(rng: &mut ChaCha8Rng, amount: f64) -> Self {
        let base = Self::default();
        let mut j = |v: f64| {
            if amount > 0.0 {
                v * (1.0 + rng.gen_range(-amount..=amount))
            } else {
                v
            }
        };
        Self {
            head_half_width: j(base.head_half_width),
            head_half_height: j(base.head_half_height),
            eye_offset_x: j(base.eye_offset_x),
            eye_y: j(base.eye_y),
            eye_half_width: j(base.eye_half_width),
            eye_half_height: j(base.eye_half_height),
            nose_y: j(base.nose_y),
            mouth_half_width: j(base.mouth_half_width),
            mouth_y: j(base.mouth_y),
            mouth_curve: j(base.mouth_curve),
        }
    }

    /// Landmarks in face-local coordinates, schema order.
    pub fn landmarks(&self) -> [Point2; 12] {
        let (a, b) = (self.head_half_width, self.head_half_height);
        let (ex, ey, ew) = (self.eye_offset_x, self.eye_y, self.eye_half_width);
        let (mw, my) = (self.mouth_half_width, self.mouth_y);
        [
            Point2::new(0.0, -b),
            Point2::new(-a, 0.0),
            Point2::new(0.0, b),
            Point2::new(a, 0.0),
            Point2::new(-ex - ew, ey),
            Point2::new(-ex + ew, ey),
            Point2::new(ex - ew, ey),
            Point2::new(ex + ew, ey),
            Point2::new(-mw, my),
            Point2::new(0.0, my + self.mouth_curve),
            Point2::new(mw, my),
            Point2::new(0.0, self.nose_y),
        ]
    }
}

/// Everything needed to re-render one synthetic image bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderParams {
    pub image_size: usize,
    pub rotation: f64,
    pub scale: f64,
    pub center: [f64; 2],
    pub layout: FaceLayout,
    pub noise_level: f64,
    pub noise_seed: u64,
}

impl RenderParams {
    fn pose(&self) -> SimilarityTransform {
        SimilarityTransform::new(
            self.scale,
            self.rotation,
            Point2::new(self.center[0], self.center[1]),
        )
        .expect("valid pose")
    }

    pub fn landmarks(&self) -> Vec<Point2> {
        let pose = self.pose();
        self.layout
            .landmarks()
            .iter()
            .map(|p| pose.apply(*p))
            .collect()
    }
}

const BACKGROUND: f64 = 0.25;
const BACKGROUND_RAMP: f64 = 0.15;
const SKIN: f64 = 0.72;
const EYE: f64 = 0.2;
const PUPIL: f64 = 0.02;
const NOSE: f64 = 0.4;
const MOUTH: f64 = 0.18;
const PUPIL_RADIUS: f64 = 1.5;
const NOSE_RADIUS: f64 = 1.8;
const MOUTH_HALF_THICKNESS: f64 = 1.0;

/// First-order signed distance to an axis-aligned ellipse (negative inside).
fn ellipse_distance(p: Point2, center: Point2, a: f64, b: f64) -> f64 {
    let (x, y) = (p.x - center.x, p.y - center.y);
    let f = (x / a).powi(2) + (y / b).powi(2) - 1.0;
    let g = 2.0 * ((x / (a * a)).powi(2) + (y / (b * b)).powi(2)).sqrt();
    if g < 1e-12 {
        -a.min(b)
    } else {
        f / g
    }
}

/// Distance to the mouth arc `y = my + c (1 - (x / w)^2)`, `|x| <= w`.
fn mouth_distance(p: Point2, l: &FaceLayout) -> f64 {
    let (w, my, c) = (l.mouth_half_width, l.mouth_y, l.mouth_curve);
    if p.x.abs() <= w {
        let f = my + c * (1.0 - (p.x / w).powi(2));
        let slope = -2.0 * c * p.x / (w * w);
        (p.y - f).abs() / (1.0 + slope * slope).sqrt()
    } else {
        let end = Point2::new(w * p.x.signum(), my);
        p.distance(&end)
    }
}

/// Coverage of a region with signed distance `d_px` (pixels).
fn coverage(d_px: f64) -> f64 {
    (0.5 - d_px).clamp(0.0, 1.0)
}

fn over(base: f64, color: f64, alpha: f64) -> f64 {
    base + alpha * (color - base)
}

pub fn render_face(params: &RenderParams) -> GrayImage {
    let size = params.image_size;
    let to_face = params.pose().inverse();
    let s = params.scale;
    let l = &params.layout;
    let left_eye = Point2::new(-l.eye_offset_x, l.eye_y);
    let right_eye = Point2::new(l.eye_offset_x, l.eye_y);
    let nose = Point2::new(0.0, l.nose_y);

    let clean = GrayImage::from_fn(size, size, |px, py| {
        let q = to_face.apply(Point2::new(px as f64, py as f64));
        let mut v = BACKGROUND + BACKGROUND_RAMP * py as f64 / size as f64;
        v = over(
            v,
            SKIN,
            coverage(
                s * ellipse_distance(q, Point2::ORIGIN, l.head_half_width, l.head_half_height),
            ),
        );
        for eye in [left_eye, right_eye] {
            v = over(
                v,
                EYE,
                coverage(s * ellipse_distance(q, eye, l.eye_half_width, l.eye_half_height)),
            );
            v = over(v, PUPIL, coverage(s * (q.distance(&eye) - PUPIL_RADIUS)));
        }
        v = over(v, NOSE, coverage(s * (q.distance(&nose) - NOSE_RADIUS)));
        over(
            v,
            MOUTH,
            coverage(s * (mouth_distance(q, l) - MOUTH_HALF_THICKNESS)),
        )
    });

    let mut rng = ChaCha8Rng::seed_from_u64(params.noise_seed);
    let noise = Normal::new(0.0, params.noise_level.max(0.0)).expect("finite sigma");
    let pixels = clean
        .pixels()
        .iter()
        .map(|&v| {
            let n = if params.noise_level > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            super::pgm::quantize(v + n) as f64 / 255.0
        })
        .collect();
    GrayImage::new(size, size, pixels).expect("quantized pixels are valid")
}

/// A generated corpus held in memory.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub manifest: DatasetManifest,
    pub images: Vec<GrayImage>,
}

fn landmark_box(points: &[Point2], margin: f64) -> FaceBox {
    let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let (w, h) = (hi.x - lo.x, hi.y - lo.y);
    FaceBox::new(
        lo.x - margin * w,
        lo.y - margin * h,
        w * (1.0 + 2.0 * margin),
        h * (1.0 + 2.0 * margin),
    )
}

fn inside(points: &[Point2], size: usize) -> bool {
    let max = (size - 1) as f64;
    points
        .iter()
        .all(|p| (0.0..=max).contains(&p.x) && (0.0..=max).contains(&p.y))
}

fn draw_params(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> RenderParams {
    let mid = (cfg.image_size as f64 - 1.0) / 2.0;
    let sym = |rng: &mut ChaCha8Rng, r: f64| if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
    let layout = FaceLayout::jittered(rng, cfg.shape_jitter);
    let mut params = RenderParams {
        image_size: cfg.image_size,
        rotation: 0.0,
        scale: 1.0,
        center: [mid, mid],
        layout,
        noise_level: cfg.noise_level,
        noise_seed: rng.gen(),
    };
    for attempt in 0..100 {
        let [lo, hi] = cfg.scale_range;
        params.rotation = sym(rng, cfg.rotation_range);
        params.scale = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let t = if attempt < 99 {
            cfg.translation_range
        } else {
            0.0
        };
        params.center = [
            mid + sym(rng, t) * cfg.image_size as f64,
            mid + sym(rng, t) * cfg.image_size as f64,
        ];
        if inside(&params.landmarks(), cfg.image_size) {
            break;
        }
    }
    params
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params: Vec<RenderParams> = (0..cfg.count).map(|_| draw_params(cfg, &mut rng)).collect();
    let images: Vec<GrayImage> = params.par_iter().map(render_face).collect();
    let records = params
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let points = p.landmarks();
            if !inside(&points, cfg.image_size) {
                return Err(Error::InvalidValue(format!(
                    "face {i} does not fit in a {0}x{0} image; reduce scale or translation ranges",
                    cfg.image_size
                )));
            }
            let id = format!("synth_{i:05}");
            let tag = if p.rotation.abs() >= cfg.challenging_rotation {
                "challenging"
            } else {
                "common"
            };
            Ok(AnnotationRecord {
                image_path: format!("{id}.pgm"),
                image_id: id,
                face_box: landmark_box(&points, 0.1),
                landmarks: points.iter().map(|p| [p.x, p.y]).collect(),
                subset_tag: Some(tag.into()),
                render: Some(p),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticCorpus {
        manifest: DatasetManifest::new(SYNTHETIC12, records),
        images,
    })
}

impl SyntheticCorpus {
    /// Writes `<id>.pgm`, `<id>.pts` and `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let schema = SchemaDef::synthetic12();
        for (record, image) in self.manifest.records.iter().zip(&self.images) {
            std::fs::write(dir.join(&record.image_path), write_pgm(image))?;
            let shape = Shape::with_schema(
                &schema,
                record
                    .landmarks
                    .iter()
                    .map(|&[x, y]| Point2::new(x, y))
                    .collect(),
            )?;
            std::fs::write(
                dir.join(format!("{}.pts", record.image_id)),
                write_pts(&shape),
            )?;
        }
        self.manifest.write(&dir.join("manifest.json"))
    }

    pub fn samples(&self) -> Result<Vec<super::Sample>> {
        self.manifest
            .records
            .iter()
            .zip(&self.images)
            .map(|(r, img)| {
                Ok(super::Sample {
                    image_id: r.image_id.clone(),
                    image: img.clone(),
                    face_box: r.face_box,
                    shape: r.shape(SYNTHETIC12)?,
                    subset_tag: r.subset_tag.clone(),
                })
            })
            .collect()
    }
}
