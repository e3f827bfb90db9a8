use std::f64::consts::PI;

use proptest::prelude::*;

use facealign::cascade::{canonicalize, CanonicalSpec, LandmarkGrouping};
use facealign::evaluation::{ced_curve, nme, summarize, EvalRecord};
use facealign::geometry::{
    compose, estimate_pose, fit_similarity, normalize_angle, transform_shape, Point2, Shape,
    SimilarityTransform,
};
use facealign::imaging::{sample_bilinear, warp_similarity, GrayImage};
use facealign::schema::{apply_map, LinearShapeMap};
use facealign::SchemaDef;

fn transform() -> impl Strategy<Value = SimilarityTransform> {
    (0.2f64..5.0, -PI..PI, -100.0f64..100.0, -100.0f64..100.0)
        .prop_map(|(s, r, x, y)| SimilarityTransform::new(s, r, Point2::new(x, y)).unwrap())
}

fn point() -> impl Strategy<Value = Point2> {
    (-100.0f64..100.0, -100.0f64..100.0).prop_map(|(x, y)| Point2::new(x, y))
}

fn points(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<Point2>> {
    prop::collection::vec(point(), n)
}

fn synthetic_shape() -> impl Strategy<Value = Shape> {
    points(12..=12).prop_map(|p| Shape::with_schema(&SchemaDef::synthetic12(), p).unwrap())
}

/// A 12-point face-like layout, eyes clearly separated.
fn face(center: Point2, scale: f64, roll: f64) -> Shape {
    let local = [
        (0.0, -28.0),
        (22.0, 0.0),
        (0.0, 28.0),
        (-22.0, 0.0),
        (-14.0, -6.0),
        (-6.0, -6.0),
        (6.0, -6.0),
        (14.0, -6.0),
        (-8.0, 14.0),
        (0.0, 17.0),
        (8.0, 14.0),
        (0.0, 5.0),
    ];
    let t = SimilarityTransform::new(scale, roll, center).unwrap();
    let pts = local
        .iter()
        .map(|&(x, y)| t.apply(Point2::new(x, y)))
        .collect();
    Shape::with_schema(&SchemaDef::synthetic12(), pts).unwrap()
}

fn close(a: Point2, b: Point2, tol: f64) -> bool {
    a.distance(&b) <= tol * (1.0 + a.norm().max(b.norm()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn inverse_round_trip(t in transform(), p in point()) {
        prop_assert!(close(t.inverse().apply(t.apply(p)), p, 1e-9));
    }

    #[test]
    fn compose_is_associative(a in transform(), b in transform(), c in transform(), p in point()) {
        let left = compose(&compose(&a, &b), &c);
        let right = compose(&a, &compose(&b, &c));
        prop_assert!(close(left.apply(p), right.apply(p), 1e-9));
        prop_assert!(close(left.apply(p), a.apply(b.apply(c.apply(p))), 1e-9));
    }

    #[test]
    fn angles_stay_in_half_open_interval(theta in -50.0f64..50.0) {
        let a = normalize_angle(theta);
        prop_assert!(a > -PI && a <= PI);
        let turns = (theta - a) / (2.0 * PI);
        prop_assert!((turns - turns.round()).abs() < 1e-9);
    }

    /// No nearby similarity explains noisy correspondences better.
    #[test]
    fn fit_is_least_squares_optimal(
        src in points(3..=15),
        t in transform(),
        noise in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 15),
        bump in (-0.01f64..0.01, -0.01f64..0.01, -0.5f64..0.5, -0.5f64..0.5),
    ) {
        let dst: Vec<Point2> = src
            .iter()
            .zip(&noise)
            .map(|(p, n)| t.apply(*p) + Point2::new(n.0, n.1))
            .collect();
        let Ok(fit) = fit_similarity(&src, &dst) else { return Ok(()) };
        let cost = |m: &SimilarityTransform| -> f64 {
            src.iter().zip(&dst).map(|(p, q)| (m.apply(*p) - *q).norm().powi(2)).sum()
        };
        let other = SimilarityTransform::new(
            fit.scale() * (1.0 + bump.0),
            fit.rotation() + bump.1,
            fit.translation() + Point2::new(bump.2, bump.3),
        ).unwrap();
        prop_assert!(cost(&fit) <= cost(&other) + 1e-9);
    }

    #[test]
    fn pose_is_rotation_equivariant(c in point(), s in 0.5f64..3.0, roll in -1.0f64..1.0, extra in -1.0f64..1.0) {
        let schema = SchemaDef::synthetic12();
        let base = face(c, s, roll);
        let spin = SimilarityTransform::new(1.0, extra, Point2::ORIGIN).unwrap();
        let a = estimate_pose(&base, &schema).unwrap();
        let b = estimate_pose(&transform_shape(&spin, &base), &schema).unwrap();
        prop_assert!(normalize_angle(b.roll - a.roll - extra).abs() < 1e-9);
        prop_assert!((a.face_size - b.face_size).abs() < 1e-9 * a.face_size);
    }

    #[test]
    fn canonicalization_is_idempotent_and_invertible(c in point(), s in 0.5f64..3.0, roll in -0.8f64..0.8) {
        let schema = SchemaDef::synthetic12();
        let reference = face(Point2::new(31.5, 31.5), 0.8, 0.0);
        let reference = {
            let shift = Point2::new(31.5, 31.5) - reference.centroid();
            Shape::with_schema(&schema, reference.points().iter().map(|p| *p + shift).collect()).unwrap()
        };
        let spec = CanonicalSpec { crop_size: 64, reference_shape: reference, reference_face_size: 50.0 };
        let shape = face(c, s, roll);
        let img = GrayImage::filled(8, 8, 0.5);
        let once = canonicalize(&img, &shape, &spec, &schema).unwrap();
        let twice = canonicalize(&img, &once.shape, &spec, &schema).unwrap();
        let t = twice.transform;
        prop_assert!((t.scale() - 1.0).abs() < 1e-6);
        prop_assert!(t.rotation().abs() < 1e-6);
        prop_assert!(t.translation().norm() < 1e-6);
        let back = transform_shape(&once.transform.inverse(), &once.shape);
        for (p, q) in back.points().iter().zip(shape.points()) {
            prop_assert!(p.distance(q) < 1e-9 * (1.0 + q.norm()));
        }
    }

    #[test]
    fn bilinear_stays_within_pixel_range(
        pixels in prop::collection::vec(0.0f64..=1.0, 12),
        x in -5.0f64..10.0,
        y in -5.0f64..10.0,
    ) {
        let img = GrayImage::new(4, 3, pixels.clone()).unwrap();
        let v = sample_bilinear(&img, x, y);
        let lo = pixels.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = pixels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
    }

    #[test]
    fn grouping_requires_coverage(
        n in 1usize..12,
        groups in prop::collection::vec(prop::collection::vec(0usize..12, 1..5), 1..5),
    ) {
        let covered = (0..n).all(|i| groups.iter().any(|g| g.contains(&i)));
        let in_range = groups.iter().flatten().all(|&i| i < n);
        let built = LandmarkGrouping::new(groups, n);
        prop_assert_eq!(built.is_ok(), covered && in_range);
    }

    #[test]
    fn affine_map_preserves_midpoints(
        coeffs in prop::collection::vec(-2.0f64..2.0, 6 * 4),
        bias in prop::collection::vec(-5.0f64..5.0, 6),
        a in points(2..=2),
        b in points(2..=2),
    ) {
        let map = LinearShapeMap { matrix: coeffs, bias, ..LinearShapeMap::identity("x", 1) };
        let map = LinearShapeMap {
            source_schema: "src".into(), source_points: 2,
            target_schema: "dst".into(), target_points: 3,
            ..map
        };
        let sa = Shape::new("src", a.clone()).unwrap();
        let sb = Shape::new("src", b.clone()).unwrap();
        let mid = Shape::new("src", a.iter().zip(&b).map(|(p, q)| (*p + *q) * 0.5).collect()).unwrap();
        let (ma, mb, mm) = (apply_map(&map, &sa).unwrap(), apply_map(&map, &sb).unwrap(), apply_map(&map, &mid).unwrap());
        for ((p, q), m) in ma.points().iter().zip(mb.points()).zip(mm.points()) {
            prop_assert!(close((*p + *q) * 0.5, *m, 1e-12));
        }
    }

    #[test]
    fn nme_is_zero_exactly_for_equal_shapes(gt in synthetic_shape(), k in 0usize..12, d in point()) {
        let schema = SchemaDef::synthetic12();
        let (l, r) = facealign::geometry::eye_centers(&gt, &schema).unwrap();
        prop_assume!(l.distance(&r) > 1e-3);
        prop_assert_eq!(nme(&gt, &gt, &schema).unwrap(), 0.0);
        prop_assume!(d.norm() > 1e-6);
        let mut pts = gt.points().to_vec();
        pts[k] = pts[k] + d;
        let moved = Shape::with_schema(&schema, pts).unwrap();
        prop_assert!(nme(&moved, &gt, &schema).unwrap() > 0.0);
    }

    #[test]
    fn subset_means_weight_to_the_full_mean(
        values in prop::collection::vec((0.0f64..0.5, 0usize..3), 1..40),
    ) {
        let records: Vec<EvalRecord> = values
            .iter()
            .enumerate()
            .map(|(i, &(v, tag))| EvalRecord {
                image_id: format!("{i:03}"),
                nme: v,
                per_landmark_errors: vec![v],
                subset_tag: Some(["a", "b", "c"][tag].to_string()),
            })
            .collect();
        let report = summarize(records, "s").unwrap();
        let weighted: f64 = report.subsets.values().map(|s| s.mean_nme_percent * s.count as f64).sum::<f64>()
            / report.count as f64;
        prop_assert!((weighted - report.mean_nme_percent).abs() < 1e-9);
        prop_assert_eq!(report.subsets.values().map(|s| s.count).sum::<usize>(), report.count);
    }

    #[test]
    fn ced_is_monotone_and_bounded(errors in prop::collection::vec(0.0f64..0.3, 0..50)) {
        let thresholds: Vec<f64> = (0..=30).map(|k| k as f64 * 0.01).collect();
        let curve = ced_curve(&errors, &thresholds);
        prop_assert!(curve.windows(2).all(|w| w[0].1 <= w[1].1));
        prop_assert!(curve.iter().all(|&(_, f)| (0.0..=1.0).contains(&f)));
        if !errors.is_empty() {
            prop_assert_eq!(curve.last().unwrap().1, 1.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    /// Warping forward then back recovers a smooth image away from the borders.
    #[test]
    fn warp_round_trip(s in 0.8f64..1.25, r in -0.3f64..0.3, tx in -3.0f64..3.0, ty in -3.0f64..3.0) {
        let size = 64;
        let img = GrayImage::from_fn(size, size, |x, y| {
            0.5 + 0.3 * (x as f64 * 0.15).sin() * (y as f64 * 0.11).cos()
        });
        let c = Point2::new(31.5, 31.5);
        let t = SimilarityTransform::new(s, r, Point2::ORIGIN).unwrap();
        let t = SimilarityTransform::new(s, r, c - t.apply(c) + Point2::new(tx, ty)).unwrap();
        let there = warp_similarity(&img, &t, size, size);
        let back = warp_similarity(&there, &t.inverse(), size, size);
        let mut total = 0.0;
        let mut n = 0usize;
        for y in 20..44 {
            for x in 20..44 {
                total += (back.get(x, y) - img.get(x, y)).abs();
                n += 1;
            }
        }
        prop_assert!(total / n as f64 <= 0.02);
    }
}
