//! Inter-pupil normalized landmark error and the reports built from it.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{align_traced, predict_coarse, CascadeModel};
use crate::dataio::Sample;
use crate::error::{Error, Result};
use crate::geometry::{check_schema, eye_centers, Shape};
use crate::schema::SchemaDef;

/// Distance between the centroids of the ground truth's two eye sets.
pub fn inter_pupil_distance(gt: &Shape, schema: &SchemaDef) -> Result<f64> {
    let (left, right) = eye_centers(gt, schema)?;
    let d = left.distance(&right);
    if !(d > 0.0) {
        return Err(Error::Degenerate(
            "ground truth has zero inter-pupil distance".into(),
        ));
    }
    Ok(d)
}

/// Per-landmark Euclidean errors in pixels.
pub fn landmark_errors(pred: &Shape, gt: &Shape) -> Result<Vec<f64>> {
    if pred.schema_id() != gt.schema_id() {
        return Err(Error::SchemaMismatch {
            expected: gt.schema_id().into(),
            actual: pred.schema_id().into(),
        });
    }
    if pred.len() != gt.len() {
        return Err(Error::DimensionMismatch {
            expected: gt.len(),
            actual: pred.len(),
            context: "predicted landmark count",
        });
    }
    Ok(pred
        .points()
        .iter()
        .zip(gt.points())
        .map(|(p, q)| p.distance(q))
        .collect())
}

/// Mean landmark error as a fraction of the inter-pupil distance.
pub fn nme(pred: &Shape, gt: &Shape, schema: &SchemaDef) -> Result<f64> {
    check_schema(gt, schema)?;
    let errors = landmark_errors(pred, gt)?;
    let ipd = inter_pupil_distance(gt, schema)?;
    Ok(mean(&errors) / ipd)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub image_id: String,
    pub nme: f64,
    pub per_landmark_errors: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSummary {
    pub count: usize,
    pub mean_nme_percent: f64,
}

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub schema_id: String,
    pub count: usize,
    pub mean_nme_percent: f64,
    pub subsets: BTreeMap<String, SubsetSummary>,
    /// Mean NME (percent) after the coarse stage and after each refinement pass.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<Vec<f64>>,
    pub records: Vec<EvalRecord>,
}

/// Anything that maps a dataset sample to a predicted shape.
pub trait LandmarkPredictor: Sync {
    fn predict(&self, sample: &Sample) -> Result<Shape>;
}

impl LandmarkPredictor for CascadeModel {
    fn predict(&self, sample: &Sample) -> Result<Shape> {
        crate::cascade::align(self, &sample.image, &sample.face_box)
    }
}

/// Stops the pipeline after the global coarse stage.
pub struct CoarseOnly<'a>(pub &'a CascadeModel);

impl LandmarkPredictor for CoarseOnly<'_> {
    fn predict(&self, sample: &Sample) -> Result<Shape> {
        predict_coarse(self.0, &sample.image, &sample.face_box)
    }
}

/// Returns the ground truth; useful for checking the evaluation plumbing.
pub struct GroundTruthOracle;

impl LandmarkPredictor for GroundTruthOracle {
    fn predict(&self, sample: &Sample) -> Result<Shape> {
        Ok(sample.shape.clone())
    }
}

pub fn make_record(sample: &Sample, pred: &Shape, schema: &SchemaDef) -> Result<EvalRecord> {
    check_schema(&sample.shape, schema)?;
    let errors = landmark_errors(pred, &sample.shape)?;
    let ipd = inter_pupil_distance(&sample.shape, schema)?;
    Ok(EvalRecord {
        image_id: sample.image_id.clone(),
        nme: mean(&errors) / ipd,
        per_landmark_errors: errors,
        subset_tag: sample.subset_tag.clone(),
    })
}

/// Aggregates records (sorted by image id) into a report.
pub fn summarize(mut records: Vec<EvalRecord>, schema_id: &str) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let mean_nme_percent =
        100.0 * records.iter().map(|r| r.nme).sum::<f64>() / records.len() as f64;
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &records {
        if let Some(tag) = &r.subset_tag {
            groups.entry(tag.clone()).or_default().push(r.nme);
        }
    }
    let subsets = groups
        .into_iter()
        .map(|(tag, v)| {
            let summary = SubsetSummary {
                count: v.len(),
                mean_nme_percent: 100.0 * v.iter().sum::<f64>() / v.len() as f64,
            };
            (tag, summary)
        })
        .collect();
    Ok(EvalReport {
        format_version: REPORT_FORMAT_VERSION,
        schema_id: schema_id.to_string(),
        count: records.len(),
        mean_nme_percent,
        subsets,
        stages: None,
        records,
    })
}

/// Runs `predictor` on every sample (in parallel) and reports NME.
pub fn evaluate(
    predictor: &dyn LandmarkPredictor,
    samples: &[Sample],
    schema: &SchemaDef,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let records = samples
        .par_iter()
        .map(|s| make_record(s, &predictor.predict(s)?, schema))
        .collect::<Result<Vec<_>>>()?;
    summarize(records, &schema.id)
}

/// Stage-wise mean NME in percent, together with the final-pass report.
#[derive(Debug, Clone, PartialEq)]
pub struct StageEvaluation {
    pub report: EvalReport,
    pub stages: Vec<f64>,
    /// Refinement passes used per sample (sample order).
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
    /// `per_image[i][k]`: NME of sample `i` after stage `k` (sample order).
    pub per_image: Vec<Vec<f64>>,
}

pub fn stage_table(model: &CascadeModel, samples: &[Sample]) -> Result<Vec<f64>> {
    Ok(evaluate_stages(model, samples)?.stages)
}

/// Full pipeline evaluation plus the per-stage breakdown in one sweep.
pub fn evaluate_stages(model: &CascadeModel, samples: &[Sample]) -> Result<StageEvaluation> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let schema = &model.schema;
    let results = samples
        .par_iter()
        .map(|s| {
            let trace = align_traced(model, &s.image, &s.face_box)?;
            let mut values = vec![nme(&trace.coarse, &s.shape, schema)?];
            for pass in &trace.passes {
                values.push(nme(pass, &s.shape, schema)?);
            }
            let last = *values.last().expect("coarse value present");
            values.resize(model.max_iterations + 1, last);
            let record = make_record(s, trace.final_shape(), schema)?;
            Ok((values, record, trace.iterations(), trace.converged))
        })
        .collect::<Result<Vec<_>>>()?;

    // Average in image-id order so the numbers match `evaluate` bit for bit.
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].image_id.cmp(&samples[b].image_id));
    let columns = model.max_iterations + 1;
    let stages = (0..columns)
        .map(|k| 100.0 * order.iter().map(|&i| results[i].0[k]).sum::<f64>() / samples.len() as f64)
        .collect::<Vec<_>>();

    let mut per_image = Vec::with_capacity(results.len());
    let mut records = Vec::with_capacity(results.len());
    let mut iterations = Vec::with_capacity(results.len());
    let mut converged = Vec::with_capacity(results.len());
    for (values, record, iters, conv) in results {
        per_image.push(values);
        records.push(record);
        iterations.push(iters);
        converged.push(conv);
    }
    let mut report = summarize(records, &schema.id)?;
    report.stages = Some(stages.clone());
    Ok(StageEvaluation {
        report,
        stages,
        iterations,
        converged,
        per_image,
    })
}

/// Empirical CDF of `errors` sampled at each threshold.
pub fn ced_curve(errors: &[f64], thresholds: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    thresholds
        .iter()
        .map(|&t| {
            let below = sorted.partition_point(|&e| e <= t);
            let frac = if sorted.is_empty() {
                0.0
            } else {
                below as f64 / sorted.len() as f64
            };
            (t, frac)
        })
        .collect()
}

/// `threshold,fraction` rows with a header line.
pub fn ced_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("threshold,fraction\n");
    for (t, f) in points {
        let _ = writeln!(out, "{t},{f}");
    }
    out
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text)?;
        if report.format_version != REPORT_FORMAT_VERSION {
            return Err(Error::Version {
                found: report.format_version,
                expected: REPORT_FORMAT_VERSION,
            });
        }
        Ok(report)
    }

    /// One column per subset tag followed by the full set, in percent.
    pub fn table(&self) -> String {
        let mut headers: Vec<String> = self.subsets.keys().cloned().collect();
        let mut values: Vec<f64> = self.subsets.values().map(|s| s.mean_nme_percent).collect();
        headers.push("fullset".into());
        values.push(self.mean_nme_percent);
        let widths: Vec<usize> = headers.iter().map(|h| h.len().max(8)).collect();
        let mut out = String::new();
        let _ = write!(out, "{:<10}", "method");
        for (h, w) in headers.iter().zip(&widths) {
            let _ = write!(out, " {:>w$}", h, w = w);
        }
        out.push('\n');
        let _ = write!(out, "{:<10}", "cascade");
        for (v, w) in values.iter().zip(&widths) {
            let _ = write!(out, " {:>w$.2}", v, w = w);
        }
        out.push('\n');
        out
    }
}

/// Stage name / mean error table, coarse stage first.
pub fn stage_table_text(stages: &[f64]) -> String {
    let mut out = format!("{:<20} {:>10}\n", "stage", "mean_error");
    for (k, v) in stages.iter().enumerate() {
        let name = if k == 0 {
            "coarse".to_string()
        } else {
            format!("refinement-{}", k - 1)
        };
        let _ = writeln!(out, "{name:<20} {v:>10.2}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::FaceBox;
    use crate::geometry::Point2;
    use crate::imaging::GrayImage;

    fn schema() -> SchemaDef {
        SchemaDef::custom("eyes3", 3, vec![0], vec![1])
    }

    fn shape(pts: &[(f64, f64)]) -> Shape {
        Shape::new(
            "eyes3",
            pts.iter().map(|&(x, y)| Point2::new(x, y)).collect(),
        )
        .unwrap()
    }

    fn sample(id: &str, gt: Shape, tag: Option<&str>) -> Sample {
        Sample {
            image_id: id.into(),
            image: GrayImage::filled(4, 4, 0.5),
            face_box: FaceBox::new(0.0, 0.0, 4.0, 4.0),
            shape: gt,
            subset_tag: tag.map(str::to_string),
        }
    }

    /// Predicts the ground truth shifted along x so that the NME is `value`.
    struct FixedNme(Vec<(String, f64)>);

    impl LandmarkPredictor for FixedNme {
        fn predict(&self, s: &Sample) -> Result<Shape> {
            let (_, v) = self.0.iter().find(|(id, _)| *id == s.image_id).unwrap();
            let ipd = inter_pupil_distance(&s.shape, &schema())?;
            Ok(s.shape.map_points(|p| *p + Point2::new(v * ipd, 0.0)))
        }
    }

    #[test]
    fn inter_pupil_examples() {
        let s = schema();
        assert_eq!(
            inter_pupil_distance(&shape(&[(30.0, 40.0), (70.0, 40.0), (0.0, 0.0)]), &s).unwrap(),
            40.0
        );
        assert_eq!(
            inter_pupil_distance(&shape(&[(0.0, 0.0), (3.0, 4.0), (9.0, 9.0)]), &s).unwrap(),
            5.0
        );
        assert!(inter_pupil_distance(&shape(&[(1.0, 1.0), (1.0, 1.0), (2.0, 2.0)]), &s).is_err());
        let plain = SchemaDef::generic("eyes3", 3);
        assert!(matches!(
            inter_pupil_distance(&shape(&[(0.0, 0.0), (3.0, 4.0), (9.0, 9.0)]), &plain),
            Err(Error::MissingEyeSets(_))
        ));
    }

    #[test]
    fn nme_examples() {
        let s = schema();
        let gt = shape(&[(0.0, 0.0), (100.0, 0.0), (50.0, 50.0)]);
        assert_eq!(nme(&gt, &gt, &s).unwrap(), 0.0);
        let pred = gt.map_points(|p| *p + Point2::new(3.0, 4.0));
        let v = nme(&pred, &gt, &s).unwrap();
        assert!((v - 0.05).abs() < 1e-12);
        assert!((100.0 * v - 5.00).abs() < 1e-12);

        let other = Shape::new("x", vec![Point2::ORIGIN; 3]).unwrap();
        assert!(nme(&other, &gt, &s).is_err());
    }

    #[test]
    fn oracle_scores_zero() {
        let s = schema();
        let samples = vec![
            sample("a", shape(&[(0.0, 0.0), (10.0, 0.0), (5.0, 5.0)]), None),
            sample("b", shape(&[(1.0, 0.0), (9.0, 2.0), (5.0, 7.0)]), None),
        ];
        let report = evaluate(&GroundTruthOracle, &samples, &s).unwrap();
        assert_eq!(report.mean_nme_percent, 0.0);
        assert!(matches!(
            evaluate(&GroundTruthOracle, &[], &s),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn subset_means_by_hand() {
        let s = schema();
        let gt = shape(&[(0.0, 0.0), (20.0, 0.0), (10.0, 10.0)]);
        let samples = vec![
            sample("a1", gt.clone(), Some("A")),
            sample("a2", gt.clone(), Some("A")),
            sample("b1", gt.clone(), Some("B")),
        ];
        let fixed = FixedNme(vec![
            ("a1".into(), 0.04),
            ("a2".into(), 0.06),
            ("b1".into(), 0.10),
        ]);
        let report = evaluate(&fixed, &samples, &s).unwrap();
        assert!((report.subsets["A"].mean_nme_percent - 5.0).abs() < 1e-9);
        assert!((report.subsets["B"].mean_nme_percent - 10.0).abs() < 1e-9);
        assert!((report.mean_nme_percent - 20.0 / 3.0).abs() < 1e-9);
        let table = report.table();
        assert!(table.contains("fullset"), "{table}");
        assert!(table.contains("6.67"), "{table}");
        let back = EvalReport::from_json(&report.to_json().unwrap()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn ced_examples() {
        assert_eq!(ced_curve(&[0.0, 0.0], &[0.01]), vec![(0.01, 1.0)]);
        let c = ced_curve(&[0.02, 0.04, 0.08], &[0.03, 0.05, 0.10]);
        assert_eq!(c, vec![(0.03, 1.0 / 3.0), (0.05, 2.0 / 3.0), (0.10, 1.0)]);
        assert!(ced_curve(&[0.1], &[]).is_empty());
        assert!(ced_csv(&c).starts_with("threshold,fraction\n0.03,"));
    }

    #[test]
    fn stage_text_names_rows() {
        let text = stage_table_text(&[5.93, 4.27, 4.16]);
        assert!(text.contains("coarse"));
        assert!(text.contains("refinement-1"));
    }
}
