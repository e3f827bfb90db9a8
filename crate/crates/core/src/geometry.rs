//! Points, landmark shapes and 2-D similarity transforms.
//!
//! A [`SimilarityTransform`] maps `p` to `scale * R(rotation) * p + translation`.
//! Rotation angles are normalized to `(-pi, pi]` on construction.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::SchemaDef;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (*self - *other).norm()
    }

    pub fn dot(&self, other: &Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3-D cross product.
    pub fn cross(&self, other: &Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

/// Arithmetic mean of a non-empty set of points.
pub fn centroid<'a>(points: impl IntoIterator<Item = &'a Point2>) -> Option<Point2> {
    let mut sum = Point2::ORIGIN;
    let mut n = 0usize;
    for p in points {
        sum = sum + *p;
        n += 1;
    }
    (n > 0).then(|| sum * (1.0 / n as f64))
}

/// An ordered set of landmarks under a named schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    schema_id: String,
    points: Vec<Point2>,
}

impl Shape {
    pub fn new(schema_id: impl Into<String>, points: Vec<Point2>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidValue(format!("landmark {i} is not finite")));
        }
        Ok(Self {
            schema_id: schema_id.into(),
            points,
        })
    }

    /// Builds a shape and checks its point count against `schema`.
    pub fn with_schema(schema: &SchemaDef, points: Vec<Point2>) -> Result<Self> {
        if points.len() != schema.point_count {
            return Err(Error::DimensionMismatch {
                expected: schema.point_count,
                actual: points.len(),
                context: "landmark count",
            });
        }
        Self::new(schema.id.clone(), points)
    }

    pub fn schema_id(&self) -> &str {
        &self.schema_id
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point2 {
        centroid(&self.points).unwrap_or(Point2::ORIGIN)
    }

    /// `(min, max)` corners of the tight bounding box.
    pub fn bounding_box(&self) -> (Point2, Point2) {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.points {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }

    /// Interleaved `[x0, y0, x1, y1, ...]` coordinates.
    pub fn flatten(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn from_flat(schema_id: impl Into<String>, coords: &[f64]) -> Result<Self> {
        if !coords.len().is_multiple_of(2) {
            return Err(Error::InvalidValue(
                "flattened shape has an odd coordinate count".into(),
            ));
        }
        let points = coords
            .chunks_exact(2)
            .map(|c| Point2::new(c[0], c[1]))
            .collect();
        Self::new(schema_id, points)
    }

    pub(crate) fn map_points(&self, f: impl Fn(&Point2) -> Point2) -> Shape {
        Shape {
            schema_id: self.schema_id.clone(),
            points: self.points.iter().map(f).collect(),
        }
    }

    pub(crate) fn points_mut(&mut self) -> &mut [Point2] {
        &mut self.points
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let wrapped = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped <= -PI {
        wrapped + 2.0 * PI
    } else {
        wrapped
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    scale: f64,
    rotation: f64,
    translation: Point2,
}

impl SimilarityTransform {
    pub fn new(scale: f64, rotation: f64, translation: Point2) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidValue(format!(
                "similarity scale must be positive and finite, got {scale}"
            )));
        }
        if !rotation.is_finite() || !translation.is_finite() {
            return Err(Error::InvalidValue(
                "similarity rotation/translation must be finite".into(),
            ));
        }
        Ok(Self {
            scale,
            rotation: normalize_angle(rotation),
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: 0.0,
            translation: Point2::ORIGIN,
        }
    }

    pub fn translation_only(t: Point2) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rotation(&self) -> f64 {
        self.rotation
    }

    pub fn translation(&self) -> Point2 {
        self.translation
    }

    fn rotate_scale(&self, p: Point2) -> Point2 {
        let (sin, cos) = self.rotation.sin_cos();
        Point2::new(
            self.scale * (cos * p.x - sin * p.y),
            self.scale * (sin * p.x + cos * p.y),
        )
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        self.rotate_scale(p) + self.translation
    }

    pub fn inverse(&self) -> Self {
        let inv = Self {
            scale: 1.0 / self.scale,
            rotation: normalize_angle(-self.rotation),
            translation: Point2::ORIGIN,
        };
        let t = inv.rotate_scale(self.translation) * -1.0;
        Self {
            translation: t,
            ..inv
        }
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &SimilarityTransform) -> Self {
        Self {
            scale: self.scale * other.scale,
            rotation: normalize_angle(self.rotation + other.rotation),
            translation: self.apply(other.translation),
        }
    }
}

pub fn apply_transform(t: &SimilarityTransform, p: Point2) -> Point2 {
    t.apply(p)
}

pub fn invert_transform(t: &SimilarityTransform) -> SimilarityTransform {
    t.inverse()
}

pub fn compose(t1: &SimilarityTransform, t2: &SimilarityTransform) -> SimilarityTransform {
    t1.compose(t2)
}

pub fn transform_shape(t: &SimilarityTransform, s: &Shape) -> Shape {
    s.map_points(|p| t.apply(*p))
}

/// Least-squares similarity transform carrying `src` onto `dst`.
///
/// Closed form on the centered point sets: the rotation is the argument of
/// `sum(a_i . b_i) + i * sum(a_i x b_i)`, the scale is the modulus of the same
/// quantity over `sum |a_i|^2`. Reflections are never returned.
pub fn fit_similarity(src: &[Point2], dst: &[Point2]) -> Result<SimilarityTransform> {
    if src.len() != dst.len() {
        return Err(Error::DimensionMismatch {
            expected: src.len(),
            actual: dst.len(),
            context: "fit_similarity point sets",
        });
    }
    if src.len() < 2 {
        return Err(Error::Degenerate(
            "similarity fit needs at least two point pairs".into(),
        ));
    }
    let mu_src = centroid(src).expect("non-empty");
    let mu_dst = centroid(dst).expect("non-empty");

    let mut dot = 0.0;
    let mut cross = 0.0;
    let mut var = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let a = *s - mu_src;
        let b = *d - mu_dst;
        dot += a.dot(&b);
        cross += a.cross(&b);
        var += a.dot(&a);
    }
    let spread = src
        .iter()
        .map(|p| p.distance(&mu_src))
        .fold(0.0_f64, f64::max);
    if var == 0.0 || spread <= 1e-12 * (1.0 + mu_src.norm()) {
        return Err(Error::Degenerate("source points are coincident".into()));
    }
    let scale = dot.hypot(cross) / var;
    if scale == 0.0 {
        return Err(Error::Degenerate("target points are coincident".into()));
    }
    let rotation = cross.atan2(dot);
    let linear = SimilarityTransform::new(scale, rotation, Point2::ORIGIN)?;
    let translation = mu_dst - linear.apply(mu_src);
    SimilarityTransform::new(scale, rotation, translation)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub face_size: f64,
    pub roll: f64,
}

/// Eye-set centroids `(left, right)` of a shape.
pub fn eye_centers(shape: &Shape, schema: &SchemaDef) -> Result<(Point2, Point2)> {
    check_schema(shape, schema)?;
    if schema.left_eye.is_empty() || schema.right_eye.is_empty() {
        return Err(Error::MissingEyeSets(schema.id.clone()));
    }
    let pts = shape.points();
    let left = centroid(schema.left_eye.iter().map(|&i| &pts[i])).expect("non-empty");
    let right = centroid(schema.right_eye.iter().map(|&i| &pts[i])).expect("non-empty");
    Ok((left, right))
}

/// In-plane roll (angle of the left-eye to right-eye vector) and face size.
///
/// The face size is the diagonal of the tight bounding box taken in the
/// roll-free frame, so it does not change when the face is rotated.
pub fn estimate_pose(shape: &Shape, schema: &SchemaDef) -> Result<PoseEstimate> {
    let (left, right) = eye_centers(shape, schema)?;
    let v = right - left;
    let roll = normalize_angle(v.y.atan2(v.x));
    let upright = SimilarityTransform::new(1.0, -roll, Point2::ORIGIN)?;
    let (lo, hi) = transform_shape(&upright, shape).bounding_box();
    Ok(PoseEstimate {
        face_size: (hi - lo).norm(),
        roll,
    })
}

pub(crate) fn check_schema(shape: &Shape, schema: &SchemaDef) -> Result<()> {
    if shape.schema_id() != schema.id {
        return Err(Error::SchemaMismatch {
            expected: schema.id.clone(),
            actual: shape.schema_id().to_string(),
        });
    }
    if shape.len() != schema.point_count {
        return Err(Error::DimensionMismatch {
            expected: schema.point_count,
            actual: shape.len(),
            context: "landmark count",
        });
    }
    Ok(())
}
