//! The coarse-to-fine landmark pipeline.
//!
//! 1. A global regressor predicts every landmark from the (expanded) face box.
//! 2. The face is canonicalized: a similarity transform removes roll, rescales
//!    the face to the reference size and centers it in a square crop.
//! 3. Rounds of group regressors read multi-scale patch pyramids around the
//!    current landmarks and propose offsets; a landmark covered by several
//!    groups moves by the mean of their proposals. Passes over all rounds
//!    repeat until the mean displacement falls below the convergence threshold.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::Sample;
use crate::error::{Error, Result};
use crate::geometry::{
    centroid, check_schema, estimate_pose, transform_shape, Point2, Shape, SimilarityTransform,
};
use crate::imaging::{extract_pyramid, resample_region, warp_similarity, GrayImage, PyramidSpec};
use crate::regressor::{
    init_network, sgd_train, Activation, LossTrace, Network, NetworkDocument, NetworkSpec,
    TrainConfig,
};
use crate::schema::SchemaDef;

/// Axis-aligned face rectangle in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl FaceBox {
    pub fn new(x: f64, y: f64, width: f64, height: f64) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x, self.y, self.width, self.height]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !(self.width > 0.0 && self.height > 0.0) {
            return Err(Error::Degenerate(format!(
                "face box must have positive finite size, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    fn overlaps(&self, img: &GrayImage) -> bool {
        self.x < img.width() as f64
            && self.y < img.height() as f64
            && self.x + self.width > 0.0
            && self.y + self.height > 0.0
    }

    /// Grows the box by `margin` of its size on every side.
    pub fn expanded(&self, margin: f64) -> FaceBox {
        FaceBox {
            x: self.x - margin * self.width,
            y: self.y - margin * self.height,
            width: self.width * (1.0 + 2.0 * margin),
            height: self.height * (1.0 + 2.0 * margin),
        }
    }

    pub fn origin(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalSpec {
    pub crop_size: usize,
    pub reference_shape: Shape,
    pub reference_face_size: f64,
}

impl CanonicalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.crop_size < 2 || !(self.reference_face_size > 0.0) {
            return Err(Error::InvalidValue(
                "canonical crop must be >= 2 px and reference face size positive".into(),
            ));
        }
        let side = self.crop_size as f64;
        if self
            .reference_shape
            .points()
            .iter()
            .any(|p| !(0.0..=side).contains(&p.x) || !(0.0..=side).contains(&p.y))
        {
            return Err(Error::InvalidValue(
                "reference shape must lie inside the canonical crop".into(),
            ));
        }
        Ok(())
    }

    fn center(&self) -> Point2 {
        let c = (self.crop_size as f64 - 1.0) / 2.0;
        Point2::new(c, c)
    }
}

/// Landmark index sets, one per refinement network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LandmarkGrouping {
    groups: Vec<Vec<usize>>,
}

impl LandmarkGrouping {
    /// Every group must be non-empty and every landmark in `0..point_count`
    /// must belong to at least one group.
    pub fn new(groups: Vec<Vec<usize>>, point_count: usize) -> Result<Self> {
        let mut covered = vec![false; point_count];
        for (k, g) in groups.iter().enumerate() {
            if g.is_empty() {
                return Err(Error::InvalidValue(format!("landmark group {k} is empty")));
            }
            for &i in g {
                if i >= point_count {
                    return Err(Error::InvalidValue(format!(
                        "landmark group {k} references index {i} >= {point_count}"
                    )));
                }
                covered[i] = true;
            }
        }
        if let Some(i) = covered.iter().position(|c| !c) {
            return Err(Error::InvalidValue(format!(
                "landmark {i} is not covered by any group"
            )));
        }
        Ok(Self { groups })
    }

    pub fn from_schema(schema: &SchemaDef) -> Result<Self> {
        if schema.groups.is_empty() {
            return Self::new(vec![(0..schema.point_count).collect()], schema.point_count);
        }
        Self::new(
            schema.groups.iter().map(|(_, g)| g.clone()).collect(),
            schema.point_count,
        )
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementRound {
    grouping: LandmarkGrouping,
    nets: Vec<Network>,
    pyramid: PyramidSpec,
}

impl RefinementRound {
    pub fn new(
        grouping: LandmarkGrouping,
        nets: Vec<Network>,
        pyramid: PyramidSpec,
    ) -> Result<Self> {
        pyramid.validate()?;
        if nets.len() != grouping.groups.len() {
            return Err(Error::DimensionMismatch {
                expected: grouping.groups.len(),
                actual: nets.len(),
                context: "refinement networks per group",
            });
        }
        for (g, net) in grouping.groups.iter().zip(&nets) {
            let spec = net.spec();
            if spec.input_dim != g.len() * pyramid.feature_len() {
                return Err(Error::DimensionMismatch {
                    expected: g.len() * pyramid.feature_len(),
                    actual: spec.input_dim,
                    context: "refinement network input",
                });
            }
            if spec.output_dim != 2 * g.len() {
                return Err(Error::DimensionMismatch {
                    expected: 2 * g.len(),
                    actual: spec.output_dim,
                    context: "refinement network output",
                });
            }
        }
        Ok(Self {
            grouping,
            nets,
            pyramid,
        })
    }

    pub fn grouping(&self) -> &LandmarkGrouping {
        &self.grouping
    }

    pub fn nets(&self) -> &[Network] {
        &self.nets
    }

    pub fn pyramid(&self) -> &PyramidSpec {
        &self.pyramid
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeModel {
    pub schema: SchemaDef,
    pub coarse_net: Network,
    /// Side of the square resampled face-box crop fed to `coarse_net`.
    pub coarse_input_size: usize,
    /// Expansion of the detector box on each side before coarse cropping.
    pub box_margin: f64,
    pub canonical: CanonicalSpec,
    pub rounds: Vec<RefinementRound>,
    /// Convergence threshold as a fraction of the reference face size.
    pub convergence_epsilon: f64,
    pub max_iterations: usize,
}

impl CascadeModel {
    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        self.canonical.validate()?;
        check_schema(&self.canonical.reference_shape, &self.schema)?;
        let spec = self.coarse_net.spec();
        let n = self.schema.point_count;
        if spec.output_dim != 2 * n {
            return Err(Error::DimensionMismatch {
                expected: 2 * n,
                actual: spec.output_dim,
                context: "coarse network output",
            });
        }
        if spec.input_dim != self.coarse_input_size * self.coarse_input_size {
            return Err(Error::DimensionMismatch {
                expected: self.coarse_input_size * self.coarse_input_size,
                actual: spec.input_dim,
                context: "coarse network input",
            });
        }
        if self.rounds.is_empty() {
            return Err(Error::InvalidValue(
                "a cascade needs at least one refinement round".into(),
            ));
        }
        for r in &self.rounds {
            for g in r.grouping.groups() {
                if g.iter().any(|&i| i >= n) {
                    return Err(Error::InvalidValue(
                        "refinement grouping exceeds the schema's landmark count".into(),
                    ));
                }
            }
        }
        if !(self.convergence_epsilon > 0.0) || self.max_iterations == 0 {
            return Err(Error::InvalidValue(
                "convergence_epsilon must be > 0 and max_iterations >= 1".into(),
            ));
        }
        if !(self.box_margin >= 0.0) {
            return Err(Error::InvalidValue("box margin must be >= 0".into()));
        }
        Ok(())
    }

    pub fn schema_id(&self) -> &str {
        &self.schema.id
    }
}

/// Subtracts the mean so that features ignore global brightness.
fn center_values(values: &mut [f64]) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter_mut().for_each(|v| *v -= mean);
}

/// Coarse-network input for a face box plus the crop rectangle it was read from.
pub fn coarse_input(
    model: &CascadeModel,
    img: &GrayImage,
    face_box: &FaceBox,
) -> Result<(Vec<f64>, FaceBox)> {
    coarse_crop(img, face_box, model.box_margin, model.coarse_input_size)
}

fn coarse_crop(
    img: &GrayImage,
    face_box: &FaceBox,
    margin: f64,
    size: usize,
) -> Result<(Vec<f64>, FaceBox)> {
    face_box.validate()?;
    if !face_box.overlaps(img) {
        return Err(Error::Degenerate(
            "face box does not overlap the image".into(),
        ));
    }
    let crop = face_box.expanded(margin);
    let mut input = resample_region(img, crop.origin(), (crop.width, crop.height), size, size);
    center_values(&mut input);
    Ok((input, crop))
}

/// Maps normalized crop coordinates back into the image.
fn decode_coarse(schema: &SchemaDef, crop: &FaceBox, output: &[f64]) -> Result<Shape> {
    let points = output
        .chunks_exact(2)
        .map(|uv| Point2::new(crop.x + uv[0] * crop.width, crop.y + uv[1] * crop.height))
        .collect();
    Shape::with_schema(schema, points)
}

fn encode_coarse(crop: &FaceBox, shape: &Shape) -> Vec<f64> {
    shape
        .points()
        .iter()
        .flat_map(|p| [(p.x - crop.x) / crop.width, (p.y - crop.y) / crop.height])
        .collect()
}

pub fn predict_coarse(model: &CascadeModel, img: &GrayImage, face_box: &FaceBox) -> Result<Shape> {
    let (input, crop) = coarse_input(model, img, face_box)?;
    let out = model.coarse_net.forward(&input)?;
    decode_coarse(&model.schema, &crop, &out)
}

/// A face warped into the canonical frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Canonicalized {
    pub image: GrayImage,
    pub shape: Shape,
    /// Maps original image coordinates into the canonical frame.
    pub transform: SimilarityTransform,
}

/// Similarity that removes the shape's roll, scales its face size to the
/// reference size and moves its centroid to the crop center.
pub fn canonical_transform(
    shape: &Shape,
    canonical: &CanonicalSpec,
    schema: &SchemaDef,
) -> Result<SimilarityTransform> {
    let pose = estimate_pose(shape, schema)?;
    if !(pose.face_size > 1e-9) {
        return Err(Error::Degenerate("shape has zero face size".into()));
    }
    let scale = canonical.reference_face_size / pose.face_size;
    let linear = SimilarityTransform::new(scale, -pose.roll, Point2::ORIGIN)?;
    let translation = canonical.center() - linear.apply(shape.centroid());
    SimilarityTransform::new(scale, -pose.roll, translation)
}

pub fn canonicalize(
    img: &GrayImage,
    shape: &Shape,
    canonical: &CanonicalSpec,
    schema: &SchemaDef,
) -> Result<Canonicalized> {
    let transform = canonical_transform(shape, canonical, schema)?;
    Ok(Canonicalized {
        image: warp_similarity(img, &transform, canonical.crop_size, canonical.crop_size),
        shape: transform_shape(&transform, shape),
        transform,
    })
}

/// Mean-centered, concatenated pyramid intensities around one landmark.
pub fn landmark_features(
    img: &GrayImage,
    at: Point2,
    face_size: f64,
    spec: &PyramidSpec,
) -> Vec<f64> {
    let pyramid = extract_pyramid(img, at, face_size, spec);
    let mut out = Vec::with_capacity(spec.feature_len());
    for mut patch in pyramid.patches {
        center_values(&mut patch.intensities);
        out.extend(patch.intensities);
    }
    out
}

/// Input vector of one group network: the group's landmark pyramids in order.
pub fn group_input(
    img: &GrayImage,
    shape: &Shape,
    group: &[usize],
    face_size: f64,
    spec: &PyramidSpec,
) -> Vec<f64> {
    let mut input = Vec::with_capacity(group.len() * spec.feature_len());
    for &i in group {
        input.extend(landmark_features(img, shape.points()[i], face_size, spec));
    }
    input
}

/// Per-group pixel offsets proposed for the group's landmarks.
pub fn group_proposals(
    round: &RefinementRound,
    img: &GrayImage,
    shape: &Shape,
    face_size: f64,
) -> Result<Vec<Vec<Point2>>> {
    if let Some(&bad) = round
        .grouping
        .groups
        .iter()
        .flatten()
        .find(|&&i| i >= shape.len())
    {
        return Err(Error::DimensionMismatch {
            expected: bad + 1,
            actual: shape.len(),
            context: "landmarks required by the refinement grouping",
        });
    }
    round
        .grouping
        .groups
        .iter()
        .zip(&round.nets)
        .map(|(g, net)| {
            let input = group_input(img, shape, g, face_size, &round.pyramid);
            let out = net.forward(&input)?;
            Ok(out
                .chunks_exact(2)
                .map(|d| Point2::new(d[0] * face_size, d[1] * face_size))
                .collect())
        })
        .collect()
}

/// One refinement round: each landmark moves by the mean offset of the groups
/// that contain it.
pub fn refine_once(
    round: &RefinementRound,
    img: &GrayImage,
    shape: &Shape,
    face_size: f64,
) -> Result<Shape> {
    let proposals = group_proposals(round, img, shape, face_size)?;
    let mut sums = vec![Point2::ORIGIN; shape.len()];
    let mut counts = vec![0usize; shape.len()];
    for (g, offsets) in round.grouping.groups.iter().zip(&proposals) {
        for (&i, d) in g.iter().zip(offsets) {
            sums[i] = sums[i] + *d;
            counts[i] += 1;
        }
    }
    let mut out = shape.clone();
    for ((p, s), &n) in out.points_mut().iter_mut().zip(&sums).zip(&counts) {
        if n > 0 {
            let n = n as f64;
            *p = *p + Point2::new(s.x / n, s.y / n);
        }
    }
    Ok(out)
}

/// Mean per-landmark distance between two shapes of equal length.
pub fn mean_displacement(a: &Shape, b: &Shape) -> f64 {
    let total: f64 = a
        .points()
        .iter()
        .zip(b.points())
        .map(|(p, q)| p.distance(q))
        .sum();
    total / a.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementOutcome {
    pub shape: Shape,
    pub iterations: usize,
    /// Whether a pass moved the landmarks by less than the threshold.
    pub converged: bool,
    /// Shape after each executed pass.
    pub passes: Vec<Shape>,
}

/// Applies all rounds in order, pass after pass, in the canonical frame.
pub fn run_refinement(
    model: &CascadeModel,
    img: &GrayImage,
    shape: &Shape,
) -> Result<RefinementOutcome> {
    let face_size = model.canonical.reference_face_size;
    let threshold = model.convergence_epsilon * face_size;
    let mut current = shape.clone();
    let mut passes = Vec::with_capacity(model.max_iterations);
    let mut converged = false;
    for _ in 0..model.max_iterations {
        let start = current.clone();
        for round in &model.rounds {
            current = refine_once(round, img, &current, face_size)?;
        }
        passes.push(current.clone());
        if mean_displacement(&start, &current) < threshold {
            converged = true;
            break;
        }
    }
    Ok(RefinementOutcome {
        iterations: passes.len(),
        shape: current,
        converged,
        passes,
    })
}

/// Every intermediate result of a full alignment, in image coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignTrace {
    pub coarse: Shape,
    pub passes: Vec<Shape>,
    pub converged: bool,
}

impl AlignTrace {
    pub fn final_shape(&self) -> &Shape {
        self.passes.last().unwrap_or(&self.coarse)
    }

    pub fn iterations(&self) -> usize {
        self.passes.len()
    }
}

pub fn align_traced(
    model: &CascadeModel,
    img: &GrayImage,
    face_box: &FaceBox,
) -> Result<AlignTrace> {
    let coarse = predict_coarse(model, img, face_box)?;
    let canon = canonicalize(img, &coarse, &model.canonical, &model.schema)?;
    let outcome = run_refinement(model, &canon.image, &canon.shape)?;
    let back = canon.transform.inverse();
    Ok(AlignTrace {
        coarse,
        passes: outcome
            .passes
            .iter()
            .map(|s| transform_shape(&back, s))
            .collect(),
        converged: outcome.converged,
    })
}

pub fn align(model: &CascadeModel, img: &GrayImage, face_box: &FaceBox) -> Result<Shape> {
    Ok(align_traced(model, img, face_box)?.final_shape().clone())
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoarseConfig {
    pub input_size: usize,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub box_margin: f64,
    pub train: TrainConfig,
}

impl Default for CoarseConfig {
    fn default() -> Self {
        Self {
            input_size: 32,
            hidden_dims: vec![64],
            activation: Activation::Tanh,
            box_margin: 0.15,
            train: TrainConfig {
                learning_rate: 0.02,
                momentum: 0.9,
                epochs: 60,
                batch_size: 16,
                seed: 1,
                weight_init_scale: 1.0,
            },
        }
    }
}

/// Starting-shape sampling for refinement training, in face-size units.
///
/// Each jittered start draws a magnitude `u ~ U(0, 1)` and scales every
/// standard deviation below by it, so small residuals are represented too.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationConfig {
    pub samples_per_image: usize,
    pub rotation_sigma: f64,
    /// Standard deviation of the log scale factor.
    pub scale_sigma: f64,
    pub translation_sigma: f64,
    pub landmark_sigma: f64,
    /// Also start from the coarse stage's own prediction on each image.
    pub include_coarse: bool,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            samples_per_image: 6,
            rotation_sigma: 0.1,
            scale_sigma: 0.08,
            translation_sigma: 0.04,
            landmark_sigma: 0.02,
            include_coarse: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinementConfig {
    pub rounds: usize,
    pub pyramid: PyramidSpec,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    /// Explicit landmark groups; `None` uses the schema's groups.
    pub grouping: Option<Vec<Vec<usize>>>,
    pub perturbation: PerturbationConfig,
    pub train: TrainConfig,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            rounds: 2,
            pyramid: PyramidSpec::default(),
            hidden_dims: vec![32],
            activation: Activation::Tanh,
            grouping: None,
            perturbation: PerturbationConfig::default(),
            train: TrainConfig {
                learning_rate: 0.02,
                momentum: 0.9,
                epochs: 60,
                batch_size: 16,
                seed: 2,
                weight_init_scale: 1.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeConfig {
    pub seed: u64,
    pub coarse: CoarseConfig,
    pub crop_size: usize,
    pub reference_face_size: f64,
    pub refinement: RefinementConfig,
    pub convergence_epsilon: f64,
    pub max_iterations: usize,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            coarse: CoarseConfig::default(),
            crop_size: 96,
            reference_face_size: 64.0,
            refinement: RefinementConfig::default(),
            convergence_epsilon: 1e-3,
            max_iterations: 5,
        }
    }
}

impl CascadeConfig {
    /// Parses a possibly partial config; absent fields keep their defaults,
    /// including fields of nested sections.
    pub fn from_json(text: &str) -> Result<Self> {
        let overrides: serde_json::Value = serde_json::from_str(text)?;
        let mut merged = serde_json::to_value(Self::default())?;
        merge_json(&mut merged, overrides);
        Ok(serde_json::from_value(merged)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

fn merge_json(base: &mut serde_json::Value, overrides: serde_json::Value) {
    match (base, overrides) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// SplitMix64 step, used to derive independent sub-seeds.
fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn seeded(train: &TrainConfig, base: u64, stream: u64) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(base ^ train.seed, stream),
        ..train.clone()
    }
}

/// Loss traces recorded while training a cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub coarse: LossTrace,
    /// `rounds[r][g]`: trace of group `g` in round `r`.
    pub rounds: Vec<Vec<LossTrace>>,
}

/// A canonicalized training face with its starting shapes for refinement.
struct RefinementSample {
    image: GrayImage,
    truth: Shape,
    starts: Vec<Shape>,
}

fn check_dataset<'a>(samples: &'a [Sample], schema: &SchemaDef) -> Result<&'a [Sample]> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for s in samples {
        check_schema(&s.shape, schema)?;
    }
    Ok(samples)
}

/// Perturbs `truth` by a random similarity about its centroid and
/// per-landmark noise.
pub fn perturb_shape(
    truth: &Shape,
    face_size: f64,
    cfg: &PerturbationConfig,
    rng: &mut ChaCha8Rng,
) -> Shape {
    let u: f64 = rng.gen_range(0.0..1.0);
    let mut normal = || -> f64 { StandardNormal.sample(&mut *rng) };
    let rotation = normal() * cfg.rotation_sigma * u;
    let scale = (normal() * cfg.scale_sigma * u).exp();
    let shift = Point2::new(normal(), normal()) * (cfg.translation_sigma * u * face_size);
    let c = truth.centroid();
    let t =
        SimilarityTransform::new(scale, rotation, Point2::ORIGIN).expect("finite positive scale");
    let noise: Vec<Point2> = (0..truth.len())
        .map(|_| Point2::new(normal(), normal()) * (cfg.landmark_sigma * u * face_size))
        .collect();
    let mut out = truth.clone();
    for (p, n) in out.points_mut().iter_mut().zip(noise) {
        *p = t.apply(*p - c) + c + shift + n;
    }
    out
}

/// Group-network training pairs for one round: inputs from the pyramids at
/// the current landmarks, targets the remaining error in face-size units.
pub fn refinement_pairs(
    image: &GrayImage,
    current: &Shape,
    truth: &Shape,
    group: &[usize],
    face_size: f64,
    pyramid: &PyramidSpec,
) -> (Vec<f64>, Vec<f64>) {
    let input = group_input(image, current, group, face_size, pyramid);
    let target = group
        .iter()
        .flat_map(|&i| {
            let d = truth.points()[i] - current.points()[i];
            [d.x / face_size, d.y / face_size]
        })
        .collect();
    (input, target)
}

pub fn train_cascade(
    samples: &[Sample],
    schema: &SchemaDef,
    config: &CascadeConfig,
) -> Result<CascadeModel> {
    Ok(train_cascade_with_report(samples, schema, config)?.0)
}

pub fn train_cascade_with_report(
    samples: &[Sample],
    schema: &SchemaDef,
    config: &CascadeConfig,
) -> Result<(CascadeModel, TrainingReport)> {
    let samples = check_dataset(samples, schema)?;
    schema.validate()?;
    if !schema.has_eyes() {
        return Err(Error::MissingEyeSets(schema.id.clone()));
    }
    config.refinement.pyramid.validate()?;
    if config.refinement.rounds == 0 {
        return Err(Error::InvalidValue("refinement.rounds must be >= 1".into()));
    }
    let n = schema.point_count;
    let face_size = config.reference_face_size;

    // Stage 1: global coarse regressor on normalized box crops.
    let coarse_cfg = &config.coarse;
    let mut inputs = Vec::with_capacity(samples.len());
    let mut targets = Vec::with_capacity(samples.len());
    for s in samples {
        let (input, crop) = coarse_crop(
            &s.image,
            &s.face_box,
            coarse_cfg.box_margin,
            coarse_cfg.input_size,
        )?;
        inputs.push(input);
        targets.push(encode_coarse(&crop, &s.shape));
    }
    let coarse_spec = NetworkSpec::new(
        coarse_cfg.input_size * coarse_cfg.input_size,
        coarse_cfg.hidden_dims.clone(),
        2 * n,
        coarse_cfg.activation,
    )?;
    let coarse_train = seeded(&coarse_cfg.train, config.seed, 1);
    let coarse_init = init_network(
        &coarse_spec,
        coarse_train.seed,
        coarse_train.weight_init_scale,
    );
    let (coarse_net, coarse_trace) = sgd_train(&coarse_init, &inputs, &targets, &coarse_train)?;
    drop(inputs);

    // Stage 2: canonical frame and reference shape.
    let mut canonical = CanonicalSpec {
        crop_size: config.crop_size,
        reference_shape: samples[0].shape.clone(),
        reference_face_size: face_size,
    };
    let canonical_truths = samples
        .iter()
        .map(|s| {
            let t = canonical_transform(&s.shape, &canonical, schema)?;
            Ok(transform_shape(&t, &s.shape))
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_points = (0..n)
        .map(|i| centroid(canonical_truths.iter().map(|s| &s.points()[i])).expect("non-empty"))
        .collect();
    canonical.reference_shape = Shape::with_schema(schema, mean_points)?;

    let mut model = CascadeModel {
        schema: schema.clone(),
        coarse_net,
        coarse_input_size: coarse_cfg.input_size,
        box_margin: coarse_cfg.box_margin,
        canonical,
        rounds: Vec::new(),
        convergence_epsilon: config.convergence_epsilon,
        max_iterations: config.max_iterations,
    };

    // Refinement training faces, canonicalized through the coarse prediction
    // exactly as at inference time.
    let pert = &config.refinement.perturbation;
    let mut work: Vec<RefinementSample> = samples
        .par_iter()
        .enumerate()
        .map(|(idx, s)| {
            let coarse = predict_coarse(&model, &s.image, &s.face_box)?;
            let canon = canonicalize(&s.image, &coarse, &model.canonical, schema)?;
            let truth = transform_shape(&canon.transform, &s.shape);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1000 + idx as u64));
            let mut starts = Vec::with_capacity(pert.samples_per_image + 1);
            if pert.include_coarse {
                starts.push(canon.shape.clone());
            }
            for _ in 0..pert.samples_per_image {
                starts.push(perturb_shape(&truth, face_size, pert, &mut rng));
            }
            Ok(RefinementSample {
                image: canon.image,
                truth,
                starts,
            })
        })
        .collect::<Result<_>>()?;

    let grouping = match &config.refinement.grouping {
        Some(groups) => LandmarkGrouping::new(groups.clone(), n)?,
        None => LandmarkGrouping::from_schema(schema)?,
    };
    let pyramid = config.refinement.pyramid.clone();

    // Stage 3: rounds trained in sequence, each on the shapes left by the
    // previously trained rounds.
    let mut round_traces = Vec::with_capacity(config.refinement.rounds);
    for r in 0..config.refinement.rounds {
        let trained: Vec<(Network, LossTrace)> = grouping
            .groups()
            .par_iter()
            .enumerate()
            .map(|(g, group)| {
                let mut inputs = Vec::new();
                let mut targets = Vec::new();
                for w in &work {
                    for start in &w.starts {
                        let (x, y) =
                            refinement_pairs(&w.image, start, &w.truth, group, face_size, &pyramid);
                        inputs.push(x);
                        targets.push(y);
                    }
                }
                let spec = NetworkSpec::new(
                    group.len() * pyramid.feature_len(),
                    config.refinement.hidden_dims.clone(),
                    2 * group.len(),
                    config.refinement.activation,
                )?;
                let train = seeded(
                    &config.refinement.train,
                    config.seed,
                    100 + (r * 64 + g) as u64,
                );
                let init = init_network(&spec, train.seed, train.weight_init_scale);
                sgd_train(&init, &inputs, &targets, &train)
            })
            .collect::<Result<_>>()?;
        let (nets, traces): (Vec<_>, Vec<_>) = trained.into_iter().unzip();
        let round = RefinementRound::new(grouping.clone(), nets, pyramid.clone())?;

        if r + 1 < config.refinement.rounds {
            work.par_iter_mut().try_for_each(|w| -> Result<()> {
                for start in &mut w.starts {
                    *start = refine_once(&round, &w.image, start, face_size)?;
                }
                Ok(())
            })?;
        }
        model.rounds.push(round);
        round_traces.push(traces);
    }

    model.validate()?;
    Ok((
        model,
        TrainingReport {
            coarse: coarse_trace,
            rounds: round_traces,
        },
    ))
}

// ---------------------------------------------------------------------------
// Persistence

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseDocument {
    pub input_size: usize,
    pub box_margin: f64,
    pub net: NetworkDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalDocument {
    pub crop_size: usize,
    pub reference_face_size: f64,
    pub reference_shape: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundDocument {
    pub groups: Vec<Vec<usize>>,
    pub pyramid: PyramidSpec,
    pub nets: Vec<NetworkDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    pub schema: SchemaDef,
    pub coarse: CoarseDocument,
    pub canonical: CanonicalDocument,
    pub rounds: Vec<RoundDocument>,
    pub convergence_epsilon: f64,
    pub max_iterations: usize,
}

impl CascadeModel {
    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            format_version: MODEL_FORMAT_VERSION,
            schema: self.schema.clone(),
            coarse: CoarseDocument {
                input_size: self.coarse_input_size,
                box_margin: self.box_margin,
                net: self.coarse_net.to_document(),
            },
            canonical: CanonicalDocument {
                crop_size: self.canonical.crop_size,
                reference_face_size: self.canonical.reference_face_size,
                reference_shape: self
                    .canonical
                    .reference_shape
                    .points()
                    .iter()
                    .map(|p| [p.x, p.y])
                    .collect(),
            },
            rounds: self
                .rounds
                .iter()
                .map(|r| RoundDocument {
                    groups: r.grouping.groups.clone(),
                    pyramid: r.pyramid.clone(),
                    nets: r.nets.iter().map(Network::to_document).collect(),
                })
                .collect(),
            convergence_epsilon: self.convergence_epsilon,
            max_iterations: self.max_iterations,
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Version {
                found: doc.format_version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let n = doc.schema.point_count;
        let reference = doc
            .canonical
            .reference_shape
            .iter()
            .map(|&[x, y]| Point2::new(x, y))
            .collect();
        let rounds = doc
            .rounds
            .iter()
            .map(|r| {
                let nets = r
                    .nets
                    .iter()
                    .map(Network::from_document)
                    .collect::<Result<Vec<_>>>()?;
                RefinementRound::new(
                    LandmarkGrouping::new(r.groups.clone(), n)?,
                    nets,
                    r.pyramid.clone(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let model = CascadeModel {
            schema: doc.schema.clone(),
            coarse_net: Network::from_document(&doc.coarse.net)?,
            coarse_input_size: doc.coarse.input_size,
            box_margin: doc.coarse.box_margin,
            canonical: CanonicalSpec {
                crop_size: doc.canonical.crop_size,
                reference_shape: Shape::with_schema(&doc.schema, reference)?,
                reference_face_size: doc.canonical.reference_face_size,
            },
            rounds,
            convergence_epsilon: doc.convergence_epsilon,
            max_iterations: doc.max_iterations,
        };
        model.validate()?;
        Ok(model)
    }

    /// Compact single-line JSON; deterministic for a given model.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_document())? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        Self::from_document(&doc)
    }
}
