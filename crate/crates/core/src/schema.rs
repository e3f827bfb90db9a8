//! Landmark schemas and linear least-squares maps between them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Shape;

pub const SYNTHETIC12: &str = "synthetic12";
pub const IBUG68: &str = "ibug68";

/// Describes what each landmark index of a schema means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaDef {
    pub id: String,
    pub point_count: usize,
    /// Image-left eye landmarks; their centroid is the left pupil.
    pub left_eye: Vec<usize>,
    pub right_eye: Vec<usize>,
    /// Named landmark groups, used as the default refinement grouping.
    pub groups: Vec<(String, Vec<usize>)>,
}

impl SchemaDef {
    /// A schema with eye sets and no group hints. Panics on invalid indices.
    pub fn custom(
        id: impl Into<String>,
        point_count: usize,
        left_eye: Vec<usize>,
        right_eye: Vec<usize>,
    ) -> Self {
        let def = Self {
            id: id.into(),
            point_count,
            left_eye,
            right_eye,
            groups: Vec::new(),
        };
        def.validate().expect("invalid schema definition");
        def
    }

    /// A schema that only fixes the point count (no eyes, no groups).
    pub fn generic(id: impl Into<String>, point_count: usize) -> Self {
        Self {
            id: id.into(),
            point_count,
            left_eye: Vec::new(),
            right_eye: Vec::new(),
            groups: Vec::new(),
        }
    }

    /// 12-point schema of the bundled synthetic corpus.
    ///
    /// 0-3 head contour (top, left, bottom, right), 4-5 left eye
    /// (outer, inner), 6-7 right eye (inner, outer), 8-10 mouth (left,
    /// bottom, right), 11 nose tip.
    pub fn synthetic12() -> Self {
        Self {
            id: SYNTHETIC12.into(),
            point_count: 12,
            left_eye: vec![4, 5],
            right_eye: vec![6, 7],
            groups: vec![
                ("contour".into(), vec![0, 1, 2, 3]),
                ("left_eye".into(), vec![4, 5]),
                ("right_eye".into(), vec![6, 7]),
                ("nose".into(), vec![5, 6, 11]),
                ("mouth".into(), vec![8, 9, 10, 11]),
            ],
        }
    }

    /// The 68-point iBUG / 300-W markup.
    pub fn ibug68() -> Self {
        let range = |a: usize, b: usize| (a..=b).collect::<Vec<_>>();
        let with = |mut v: Vec<usize>, extra: &[usize]| {
            v.extend_from_slice(extra);
            v
        };
        Self {
            id: IBUG68.into(),
            point_count: 68,
            left_eye: range(36, 41),
            right_eye: range(42, 47),
            groups: vec![
                ("contour".into(), range(0, 16)),
                (
                    "left_brow_eye".into(),
                    with(range(17, 21), &[36, 37, 38, 39, 40, 41, 0]),
                ),
                (
                    "right_brow_eye".into(),
                    with(range(22, 26), &[42, 43, 44, 45, 46, 47, 16]),
                ),
                ("nose".into(), with(range(27, 35), &[39, 42])),
                ("outer_mouth".into(), with(range(48, 59), &[33])),
                ("inner_mouth".into(), with(range(60, 67), &[48, 54])),
            ],
        }
    }

    pub fn builtin(id: &str) -> Result<Self> {
        match id {
            SYNTHETIC12 => Ok(Self::synthetic12()),
            IBUG68 => Ok(Self::ibug68()),
            other => Err(Error::UnknownSchema(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_range = |set: &[usize]| set.iter().all(|&i| i < self.point_count);
        if !in_range(&self.left_eye) || !in_range(&self.right_eye) {
            return Err(Error::InvalidValue(format!(
                "schema `{}` has eye indices out of range",
                self.id
            )));
        }
        if self.left_eye.is_empty() != self.right_eye.is_empty() {
            return Err(Error::InvalidValue(format!(
                "schema `{}` declares only one eye set",
                self.id
            )));
        }
        if self.left_eye.iter().any(|i| self.right_eye.contains(i)) {
            return Err(Error::InvalidValue(format!(
                "schema `{}` has overlapping eye sets",
                self.id
            )));
        }
        for (name, g) in &self.groups {
            if g.is_empty() || !in_range(g) {
                return Err(Error::InvalidValue(format!(
                    "schema `{}` group `{name}` is empty or out of range",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn has_eyes(&self) -> bool {
        !self.left_eye.is_empty() && !self.right_eye.is_empty()
    }
}

pub const MAP_FORMAT_VERSION: u32 = 1;

/// Affine map `flatten(dst) = A * flatten(src) + b` between two schemas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearShapeMap {
    pub format_version: u32,
    pub source_schema: String,
    pub source_points: usize,
    pub target_schema: String,
    pub target_points: usize,
    /// Row-major, `2 * target_points` rows by `2 * source_points` columns.
    pub matrix: Vec<f64>,
    pub bias: Vec<f64>,
    pub ridge_lambda: f64,
}

impl LinearShapeMap {
    pub fn identity(schema_id: &str, points: usize) -> Self {
        let n = 2 * points;
        let mut matrix = vec![0.0; n * n];
        for i in 0..n {
            matrix[i * n + i] = 1.0;
        }
        Self {
            format_version: MAP_FORMAT_VERSION,
            source_schema: schema_id.into(),
            source_points: points,
            target_schema: schema_id.into(),
            target_points: points,
            matrix,
            bias: vec![0.0; n],
            ridge_lambda: 0.0,
        }
    }

    fn in_dim(&self) -> usize {
        2 * self.source_points
    }

    fn out_dim(&self) -> usize {
        2 * self.target_points
    }

    /// Coefficient `A[row][col]`.
    pub fn coefficient(&self, row: usize, col: usize) -> f64 {
        self.matrix[row * self.in_dim() + col]
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != MAP_FORMAT_VERSION {
            return Err(Error::Version {
                found: self.format_version,
                expected: MAP_FORMAT_VERSION,
            });
        }
        if self.matrix.len() != self.in_dim() * self.out_dim() {
            return Err(Error::ShapeError(format!(
                "map matrix has {} entries, expected {}x{}",
                self.matrix.len(),
                self.out_dim(),
                self.in_dim()
            )));
        }
        if self.bias.len() != self.out_dim() {
            return Err(Error::ShapeError(format!(
                "map bias has {} entries, expected {}",
                self.bias.len(),
                self.out_dim()
            )));
        }
        if self.matrix.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::ShapeError("map contains non-finite entries".into()));
        }
        if !(self.ridge_lambda >= 0.0) {
            return Err(Error::ShapeError("ridge_lambda must be >= 0".into()));
        }
        Ok(())
    }

    pub fn to_document(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_document(text: &str) -> Result<Self> {
        let map: Self = serde_json::from_str(text)?;
        map.validate()?;
        Ok(map)
    }
}

fn consistent_schema(shapes: &[Shape], side: &str) -> Result<(String, usize)> {
    let first = &shapes[0];
    for s in shapes {
        if s.schema_id() != first.schema_id() {
            return Err(Error::SchemaMismatch {
                expected: first.schema_id().into(),
                actual: s.schema_id().into(),
            });
        }
        if s.len() != first.len() {
            return Err(Error::DimensionMismatch {
                expected: first.len(),
                actual: s.len(),
                context: if side == "source" {
                    "source landmark count"
                } else {
                    "target landmark count"
                },
            });
        }
    }
    Ok((first.schema_id().to_string(), first.len()))
}

/// In-place Cholesky factorization of a symmetric matrix (lower triangle).
///
/// Fails when a pivot drops below `rel_tol` times the largest diagonal entry.
fn cholesky(a: &mut [f64], n: usize, rel_tol: f64) -> std::result::Result<(), usize> {
    let max_diag = (0..n).map(|i| a[i * n + i].abs()).fold(0.0_f64, f64::max);
    let floor = rel_tol * max_diag.max(f64::MIN_POSITIVE);
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > floor) {
            return Err(j);
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    Ok(())
}

/// Solves `L L^T x = b` given the factor produced by [`cholesky`].
fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Fits `A, b` minimizing `sum ||A x + b - y||^2 + lambda ||A||_F^2`.
///
/// The bias is unpenalized, so the problem is solved on centered data and
/// `b = mean(y) - A mean(x)`.
pub fn fit_linear_map(src: &[Shape], dst: &[Shape], ridge_lambda: f64) -> Result<LinearShapeMap> {
    if src.len() != dst.len() {
        return Err(Error::DimensionMismatch {
            expected: src.len(),
            actual: dst.len(),
            context: "paired shape counts",
        });
    }
    if src.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(ridge_lambda >= 0.0 && ridge_lambda.is_finite()) {
        return Err(Error::InvalidValue(format!(
            "ridge_lambda must be finite and >= 0, got {ridge_lambda}"
        )));
    }
    let (src_id, src_pts) = consistent_schema(src, "source")?;
    let (dst_id, dst_pts) = consistent_schema(dst, "target")?;
    let d_in = 2 * src_pts;
    let d_out = 2 * dst_pts;
    let n = src.len() as f64;

    let xs: Vec<Vec<f64>> = src.iter().map(Shape::flatten).collect();
    let ys: Vec<Vec<f64>> = dst.iter().map(Shape::flatten).collect();
    let mean = |rows: &[Vec<f64>], d: usize| {
        let mut m = vec![0.0; d];
        for r in rows {
            for (acc, v) in m.iter_mut().zip(r) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= n);
        m
    };
    let x_mean = mean(&xs, d_in);
    let y_mean = mean(&ys, d_out);

    // Gram matrix G = Xc^T Xc + lambda I and right-hand sides Xc^T Yc.
    let mut gram = vec![0.0; d_in * d_in];
    let mut rhs = vec![0.0; d_in * d_out];
    for (x, y) in xs.iter().zip(&ys) {
        let xc: Vec<f64> = x.iter().zip(&x_mean).map(|(a, m)| a - m).collect();
        let yc: Vec<f64> = y.iter().zip(&y_mean).map(|(a, m)| a - m).collect();
        for i in 0..d_in {
            for j in 0..=i {
                gram[i * d_in + j] += xc[i] * xc[j];
            }
            for (k, yk) in yc.iter().enumerate() {
                rhs[i * d_out + k] += xc[i] * yk;
            }
        }
    }
    for i in 0..d_in {
        gram[i * d_in + i] += ridge_lambda;
    }
    cholesky(&mut gram, d_in, 1e-12).map_err(|col| {
        Error::RankDeficient(format!(
            "normal equations are singular at source coordinate {col} \
             ({} samples for {d_in} source coordinates); supply more varied \
             shapes or a positive ridge_lambda",
            src.len()
        ))
    })?;

    let mut matrix = vec![0.0; d_out * d_in];
    let mut col = vec![0.0; d_in];
    for k in 0..d_out {
        for i in 0..d_in {
            col[i] = rhs[i * d_out + k];
        }
        cholesky_solve(&gram, d_in, &mut col);
        matrix[k * d_in..(k + 1) * d_in].copy_from_slice(&col);
    }
    let bias = (0..d_out)
        .map(|k| {
            let row = &matrix[k * d_in..(k + 1) * d_in];
            y_mean[k] - row.iter().zip(&x_mean).map(|(a, m)| a * m).sum::<f64>()
        })
        .collect();

    Ok(LinearShapeMap {
        format_version: MAP_FORMAT_VERSION,
        source_schema: src_id,
        source_points: src_pts,
        target_schema: dst_id,
        target_points: dst_pts,
        matrix,
        bias,
        ridge_lambda,
    })
}

pub fn apply_map(map: &LinearShapeMap, shape: &Shape) -> Result<Shape> {
    if shape.schema_id() != map.source_schema {
        return Err(Error::SchemaMismatch {
            expected: map.source_schema.clone(),
            actual: shape.schema_id().into(),
        });
    }
    if shape.len() != map.source_points {
        return Err(Error::DimensionMismatch {
            expected: map.source_points,
            actual: shape.len(),
            context: "source landmark count",
        });
    }
    let x = shape.flatten();
    let d_in = x.len();
    let out: Vec<f64> = map
        .bias
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let row = &map.matrix[k * d_in..(k + 1) * d_in];
            b + row.iter().zip(&x).map(|(a, v)| a * v).sum::<f64>()
        })
        .collect();
    Shape::from_flat(map.target_schema.clone(), &out)
}
