use std::path::Path;
use std::process::{Command, Output};

fn facealign(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facealign"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn oracle_align_echoes_the_annotation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(
        facealign(&["synth", "--count", "2", "--seed", "1", "--out", "c"], d)
            .status
            .success()
    );
    let fixture = std::fs::read_to_string(d.join("c/synth_00001.pts")).unwrap();
    let out = facealign(
        &[
            "align",
            "--oracle-pts",
            "c/synth_00001.pts",
            "--image",
            "c/synth_00001.pgm",
            "--box",
            "10,10,50,50",
        ],
        d,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out), fixture);
}

#[test]
fn empty_manifest_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(
        facealign(&["synth", "--count", "20", "--seed", "2", "--out", "c"], d)
            .status
            .success()
    );
    let trained = facealign(
        &[
            "train",
            "--manifest",
            "c/manifest.json",
            "--out",
            "m.json",
            "--coarse-epochs",
            "2",
            "--refine-epochs",
            "1",
            "--resolution",
            "2",
        ],
        d,
    );
    assert!(trained.status.success(), "{}", stderr(&trained));
    std::fs::write(
        d.join("empty.json"),
        r#"{"format_version": 1, "schema_id": "synthetic12", "records": []}"#,
    )
    .unwrap();
    let out = facealign(
        &["eval", "--model", "m.json", "--manifest", "empty.json"],
        d,
    );
    assert!(!out.status.success());
    assert!(stderr(&out).contains("empty dataset"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_nonzero() {
    let d = std::env::temp_dir();
    let out = facealign(&["frobnicate"], &d);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("Usage"));
    let out = facealign(&["eval", "--model"], &d);
    assert!(!out.status.success());
    let out = facealign(&["align", "--image", "x.pgm", "--box", "1,2,3"], &d);
    assert!(!out.status.success());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("cfg.json"),
        r#"{"seed": 5, "max_iterations": 3, "refinement": {"rounds": 4}}"#,
    )
    .unwrap();
    let out = facealign(
        &[
            "train",
            "--manifest",
            "unused",
            "--out",
            "unused",
            "--config",
            "cfg.json",
            "--rounds",
            "1",
            "--print-config",
        ],
        d,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let cfg: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(cfg["seed"], 5);
    assert_eq!(cfg["max_iterations"], 3);
    assert_eq!(cfg["refinement"]["rounds"], 1);
    assert_eq!(cfg["refinement"]["pyramid"]["resolution"], 16);

    std::fs::write(d.join("bad.json"), r#"{"refinement": {"roundz": 4}}"#).unwrap();
    let out = facealign(
        &[
            "train",
            "--manifest",
            "m",
            "--out",
            "o",
            "--config",
            "bad.json",
            "--print-config",
        ],
        d,
    );
    assert!(!out.status.success());
    assert!(stderr(&out).contains("roundz"));
}

#[test]
fn remap_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(
        facealign(&["synth", "--count", "40", "--seed", "3", "--out", "a"], d)
            .status
            .success()
    );
    assert!(
        facealign(&["synth", "--count", "40", "--seed", "3", "--out", "b"], d)
            .status
            .success()
    );
    let fit = facealign(
        &[
            "remap-fit",
            "--source",
            "a/manifest.json",
            "--target",
            "b/manifest.json",
            "--lambda",
            "1e-6",
            "--out",
            "map.json",
        ],
        d,
    );
    assert!(fit.status.success(), "{}", stderr(&fit));
    let singular = facealign(
        &[
            "remap-fit",
            "--source",
            "a/manifest.json",
            "--target",
            "b/manifest.json",
            "--out",
            "x.json",
        ],
        d,
    );
    assert!(!singular.status.success());
    assert!(stderr(&singular).contains("ridge_lambda"));
    let applied = facealign(
        &[
            "remap-apply",
            "--map",
            "map.json",
            "--pts",
            "a/synth_00004.pts",
        ],
        d,
    );
    assert!(applied.status.success(), "{}", stderr(&applied));
    let expected = std::fs::read_to_string(d.join("a/synth_00004.pts")).unwrap();
    // Identical manifests fit (nearly) the identity map on their own shapes.
    let parse = |t: &str| -> Vec<f64> {
        t.lines()
            .filter(|l| l.starts_with(|c: char| c.is_ascii_digit() || c == '-'))
            .flat_map(|l| {
                l.split_whitespace()
                    .map(|v| v.parse::<f64>().unwrap())
                    .collect::<Vec<_>>()
            })
            .collect()
    };
    for (a, b) in parse(&stdout(&applied)).iter().zip(parse(&expected)) {
        assert!((a - b).abs() < 1e-3, "{a} vs {b}");
    }
}

#[test]
fn grad_check_command_passes() {
    let out = facealign(&["grad-check", "--nets", "20"], &std::env::temp_dir());
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("max relative error"));
}
