use nalgebra::{DMatrix, DVector};

use facealign::cascade::{self, canonicalize, run_refinement, CascadeConfig};
use facealign::dataio::{generate_synthetic, Sample, SyntheticConfig};
use facealign::evaluation::{evaluate, evaluate_stages, CoarseOnly, GroundTruthOracle};
use facealign::regressor::{
    gradient_check, init_network, random_probe, sgd_train, Activation, NetworkSpec, TrainConfig,
};
use facealign::{Error, SchemaDef};

fn corpus(count: usize, seed: u64) -> Vec<Sample> {
    let cfg = SyntheticConfig {
        count,
        image_size: 64,
        seed,
        scale_range: [0.55, 0.8],
        ..Default::default()
    };
    generate_synthetic(&cfg).unwrap().samples().unwrap()
}

fn quick_config(seed: u64) -> CascadeConfig {
    let mut cfg = CascadeConfig::from_json(
        r#"{
            "coarse": {"input_size": 16, "hidden_dims": [16], "train": {"epochs": 20}},
            "crop_size": 64,
            "reference_face_size": 40.0,
            "refinement": {
                "pyramid": {"scales": [0.4, 0.15], "resolution": 4},
                "hidden_dims": [8],
                "perturbation": {"samples_per_image": 2},
                "train": {"epochs": 4}
            }
        }"#,
    )
    .unwrap();
    cfg.seed = seed;
    cfg
}

#[test]
fn gradients_match_finite_differences_on_random_nets() {
    for k in 0..100u64 {
        let act = if k % 2 == 0 {
            Activation::Tanh
        } else {
            Activation::Relu
        };
        let p = random_probe(k, 8, act);
        let err = gradient_check(&p.net, &p.input, &p.target, 1e-5).unwrap();
        assert!(err < 1e-4, "probe {k}: relative error {err}");
    }
}

/// A network without hidden layers is linear regression; SGD must land on the
/// normal-equations solution.
#[test]
fn sgd_recovers_the_least_squares_affine_map() {
    let (din, dout, m) = (3, 2, 64);
    let truth = [0.5, -1.0, 0.25, 1.5, 0.0, -0.75];
    let bias = [0.3, -0.2];
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for i in 0..m {
        let x: Vec<f64> = (0..din)
            .map(|j| ((i * 7 + j * 13) % 17) as f64 / 8.5 - 1.0)
            .collect();
        let y: Vec<f64> = (0..dout)
            .map(|o| bias[o] + (0..din).map(|j| truth[o * din + j] * x[j]).sum::<f64>())
            .collect();
        inputs.push(x);
        targets.push(y);
    }
    let spec = NetworkSpec::new(din, vec![], dout, Activation::Tanh).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        momentum: 0.9,
        epochs: 300,
        batch_size: 8,
        seed: 4,
        weight_init_scale: 1.0,
    };
    let (net, trace) = sgd_train(&init_network(&spec, 9, 1.0), &inputs, &targets, &cfg).unwrap();
    assert!(trace.last() < 1e-6, "final loss {}", trace.last());

    let x = DMatrix::from_fn(m, din + 1, |i, j| if j < din { inputs[i][j] } else { 1.0 });
    for o in 0..dout {
        let y = DVector::from_fn(m, |i, _| targets[i][o]);
        let w = (x.transpose() * &x)
            .lu()
            .solve(&(x.transpose() * y))
            .unwrap();
        let layer = &net.layers()[0];
        for j in 0..din {
            assert!((layer.weights[o * din + j] - w[j]).abs() < 1e-3);
        }
        assert!((layer.biases[o] - w[din]).abs() < 1e-3);
    }
}

#[test]
fn training_is_deterministic_and_learns() {
    let schema = SchemaDef::synthetic12();
    let train = corpus(60, 5);
    let (a, report) =
        cascade::train_cascade_with_report(&train, &schema, &quick_config(3)).unwrap();
    assert!(report.coarse.last() < 0.5 * report.coarse.first());
    let b = cascade::train_cascade(&train, &schema, &quick_config(3)).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let c = cascade::train_cascade(&train, &schema, &quick_config(4)).unwrap();
    assert_ne!(a.to_json().unwrap(), c.to_json().unwrap());

    let test = corpus(12, 6);
    for s in &test {
        let first = facealign::align(&a, &s.image, &s.face_box).unwrap();
        let second = facealign::align(&a, &s.image, &s.face_box).unwrap();
        assert_eq!(first, second);
        assert_eq!(first.schema_id(), a.schema_id());
        let coarse = cascade::predict_coarse(&a, &s.image, &s.face_box).unwrap();
        let canon = canonicalize(&s.image, &coarse, &a.canonical, &schema).unwrap();
        let out = run_refinement(&a, &canon.image, &canon.shape).unwrap();
        assert!(out.iterations >= 1 && out.iterations <= a.max_iterations);
    }

    // The stage table's first column is the coarse-only evaluation, exactly.
    let staged = evaluate_stages(&a, &test).unwrap();
    let coarse = evaluate(&CoarseOnly(&a), &test, &schema).unwrap();
    assert_eq!(staged.stages[0], coarse.mean_nme_percent);
    assert_eq!(staged.stages.len(), a.max_iterations + 1);
    let full = evaluate(&a, &test, &schema).unwrap();
    assert_eq!(staged.report.mean_nme_percent, full.mean_nme_percent);
    assert_eq!(
        evaluate(&GroundTruthOracle, &test, &schema)
            .unwrap()
            .mean_nme_percent,
        0.0
    );
}

#[test]
fn empty_inputs_are_rejected() {
    let schema = SchemaDef::synthetic12();
    assert!(matches!(
        cascade::train_cascade(&[], &schema, &quick_config(0)),
        Err(Error::EmptyDataset)
    ));
    assert_eq!(
        evaluate(&GroundTruthOracle, &[], &schema)
            .unwrap_err()
            .to_string(),
        "empty dataset"
    );
}
