#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use facealign::cascade::{self, CascadeConfig, CascadeModel, FaceBox};
use facealign::dataio::{
    generate_synthetic, read_pgm, read_pts, write_pts, DatasetManifest, SyntheticConfig,
};
use facealign::evaluation::{self, ced_csv, ced_curve, stage_table_text, CoarseOnly, EvalReport};
use facealign::regressor::{gradient_check, random_probe, Activation};
use facealign::schema::{apply_map, fit_linear_map, LinearShapeMap};
use facealign::Shape;

#[derive(Parser)]
#[command(
    name = "facealign",
    version,
    about = "Coarse-to-fine facial landmark localization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a seeded synthetic face corpus (PGM images, pts files, manifest.json)
    Synth(SynthArgs),
    /// Train a cascade model from a manifest
    Train(TrainArgs),
    /// Localize landmarks on one image and print them as pts
    Align(AlignArgs),
    /// Evaluate a model on a manifest (NME in percent of inter-pupil distance)
    Eval(EvalArgs),
    /// Fit a linear map between two landmark schemas from paired manifests
    RemapFit(RemapFitArgs),
    /// Apply a fitted schema map to a pts file
    RemapApply(RemapApplyArgs),
    /// Compare backpropagation against finite differences on random networks
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON file with generator settings; flags below override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    image_size: Option<usize>,
    /// Maximum absolute roll in radians
    #[arg(long)]
    rotation: Option<f64>,
    #[arg(long)]
    scale_min: Option<f64>,
    #[arg(long)]
    scale_max: Option<f64>,
    /// Maximum face-center offset as a fraction of the image size
    #[arg(long)]
    translation: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output model document
    #[arg(long)]
    out: PathBuf,
    /// JSON training config; absent fields keep their defaults
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    coarse_epochs: Option<usize>,
    #[arg(long)]
    refine_epochs: Option<usize>,
    /// Patch side length of the refinement pyramid
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Convergence threshold as a fraction of the reference face size
    #[arg(long)]
    epsilon: Option<f64>,
    /// Print the effective config and exit without training
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct AlignArgs {
    #[arg(
        long,
        required_unless_present = "oracle_pts",
        conflicts_with = "oracle_pts"
    )]
    model: Option<PathBuf>,
    /// Stub predictor that returns this annotation unchanged
    #[arg(long)]
    oracle_pts: Option<PathBuf>,
    #[arg(long)]
    image: PathBuf,
    /// Face box as x,y,width,height
    #[arg(long = "box", value_parser = parse_box)]
    face_box: FaceBox,
    /// Schema of the oracle annotation
    #[arg(long, default_value = "synthetic12")]
    schema: String,
    /// Write the pts here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Write the report document here
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evaluate the coarse stage alone
    #[arg(long, conflicts_with = "stages")]
    coarse_only: bool,
    /// Add the per-stage mean error table
    #[arg(long)]
    stages: bool,
    /// Emit cumulative error distribution points (to the path, or stdout)
    #[arg(long, num_args = 0..=1, default_missing_value = "-")]
    ced: Option<String>,
    /// Largest CED threshold, in NME percent
    #[arg(long, default_value_t = 10.0)]
    ced_max: f64,
    #[arg(long, default_value_t = 100)]
    ced_steps: usize,
}

#[derive(Args)]
struct RemapFitArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RemapApplyArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    pts: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 100)]
    nets: usize,
    #[arg(long, default_value_t = 8)]
    max_dim: usize,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_box(text: &str) -> Result<FaceBox, String> {
    let v: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("invalid box `{text}`: {e}"))?;
    match v[..] {
        [x, y, w, h] => Ok(FaceBox::new(x, y, w, h)),
        _ => Err(format!("box needs 4 comma-separated numbers, got `{text}`")),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_model(path: &Path) -> Result<CascadeModel> {
    CascadeModel::from_json(&read_text(path)?)
        .with_context(|| format!("loading model {}", path.display()))
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    DatasetManifest::read(path).with_context(|| format!("loading manifest {}", path.display()))
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => serde_json::from_str(&read_text(p)?)?,
        None => SyntheticConfig::default(),
    };
    if let Some(v) = args.count {
        cfg.count = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.image_size {
        cfg.image_size = v;
    }
    if let Some(v) = args.rotation {
        cfg.rotation_range = v;
    }
    if let Some(v) = args.scale_min {
        cfg.scale_range[0] = v;
    }
    if let Some(v) = args.scale_max {
        cfg.scale_range[1] = v;
    }
    if let Some(v) = args.translation {
        cfg.translation_range = v;
    }
    if let Some(v) = args.noise {
        cfg.noise_level = v;
    }
    let corpus = generate_synthetic(&cfg)?;
    corpus.write(&args.out)?;
    println!(
        "wrote {} faces to {}",
        corpus.manifest.records.len(),
        args.out.join("manifest.json").display()
    );
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => CascadeConfig::from_json(&read_text(p)?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => CascadeConfig::default(),
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.rounds {
        cfg.refinement.rounds = v;
    }
    if let Some(v) = args.coarse_epochs {
        cfg.coarse.train.epochs = v;
    }
    if let Some(v) = args.refine_epochs {
        cfg.refinement.train.epochs = v;
    }
    if let Some(v) = args.resolution {
        cfg.refinement.pyramid.resolution = v;
    }
    if let Some(v) = args.max_iterations {
        cfg.max_iterations = v;
    }
    if let Some(v) = args.epsilon {
        cfg.convergence_epsilon = v;
    }
    if args.print_config {
        print!("{}", cfg.to_json()?);
        return Ok(());
    }
    let manifest = load_manifest(&args.manifest)?;
    let schema = manifest.schema()?;
    let samples = manifest.load_samples()?;
    let (model, report) = cascade::train_cascade_with_report(&samples, &schema, &cfg)?;
    fs::write(&args.out, model.to_json()?)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "coarse loss {:.6} -> {:.6}",
        report.coarse.first(),
        report.coarse.last()
    );
    for (r, traces) in report.rounds.iter().enumerate() {
        let last: f64 = traces.iter().map(|t| t.last()).sum::<f64>() / traces.len().max(1) as f64;
        println!(
            "round {r}: mean final loss {last:.6} over {} groups",
            traces.len()
        );
    }
    println!("model written to {}", args.out.display());
    Ok(())
}

fn align(args: AlignArgs) -> Result<()> {
    let bytes =
        fs::read(&args.image).with_context(|| format!("reading {}", args.image.display()))?;
    let image = read_pgm(&bytes)?;
    args.face_box.validate()?;
    let shape: Shape = match (&args.model, &args.oracle_pts) {
        (_, Some(pts)) => read_pts(&read_text(pts)?, &args.schema)?,
        (Some(m), None) => cascade::align(&load_model(m)?, &image, &args.face_box)?,
        (None, None) => bail!("either --model or --oracle-pts is required"),
    };
    write_output(args.out.as_deref(), &write_pts(&shape))
}

fn eval(args: EvalArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let manifest = load_manifest(&args.manifest)?;
    if manifest.schema_id != model.schema_id() {
        bail!(
            "manifest schema `{}` does not match model schema `{}`",
            manifest.schema_id,
            model.schema_id()
        );
    }
    let samples = manifest.load_samples()?;
    let (report, stages): (EvalReport, Option<Vec<f64>>) = if args.stages {
        let s = evaluation::evaluate_stages(&model, &samples)?;
        (s.report, Some(s.stages))
    } else if args.coarse_only {
        (
            evaluation::evaluate(&CoarseOnly(&model), &samples, &model.schema)?,
            None,
        )
    } else {
        (evaluation::evaluate(&model, &samples, &model.schema)?, None)
    };
    if let Some(out) = &args.out {
        fs::write(out, report.to_json()?).with_context(|| format!("writing {}", out.display()))?;
    }
    print!("{}", report.table());
    if let Some(stages) = &stages {
        println!();
        print!("{}", stage_table_text(stages));
    }
    if let Some(target) = &args.ced {
        if args.ced_steps == 0 || !(args.ced_max > 0.0) {
            bail!("--ced-steps and --ced-max must be positive");
        }
        let errors: Vec<f64> = report.records.iter().map(|r| 100.0 * r.nme).collect();
        let thresholds: Vec<f64> = (0..=args.ced_steps)
            .map(|k| args.ced_max * k as f64 / args.ced_steps as f64)
            .collect();
        let csv = ced_csv(&ced_curve(&errors, &thresholds));
        if target == "-" {
            println!();
            print!("{csv}");
        } else {
            fs::write(target, csv).with_context(|| format!("writing {target}"))?;
        }
    }
    Ok(())
}

fn remap_fit(args: RemapFitArgs) -> Result<()> {
    let src = load_manifest(&args.source)?;
    let dst = load_manifest(&args.target)?;
    let mut pairs_src = Vec::new();
    let mut pairs_dst = Vec::new();
    for r in &src.records {
        if let Some(t) = dst.records.iter().find(|t| t.image_id == r.image_id) {
            pairs_src.push(r.shape(&src.schema_id)?);
            pairs_dst.push(t.shape(&dst.schema_id)?);
        }
    }
    if pairs_src.is_empty() {
        bail!("empty dataset: no image ids shared by the two manifests");
    }
    let map = fit_linear_map(&pairs_src, &pairs_dst, args.lambda)?;
    fs::write(&args.out, map.to_document()?)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "fitted {} -> {} map from {} pairs",
        map.source_schema,
        map.target_schema,
        pairs_src.len()
    );
    Ok(())
}

fn remap_apply(args: RemapApplyArgs) -> Result<()> {
    let map = LinearShapeMap::from_document(&read_text(&args.map)?)?;
    let shape = read_pts(&read_text(&args.pts)?, &map.source_schema)?;
    let out = apply_map(&map, &shape)?;
    write_output(args.out.as_deref(), &write_pts(&out))
}

fn grad_check(args: GradCheckArgs) -> Result<()> {
    let mut worst = 0.0_f64;
    for k in 0..args.nets {
        let activation = if k % 2 == 0 {
            Activation::Tanh
        } else {
            Activation::Relu
        };
        let probe = random_probe(args.seed.wrapping_add(k as u64), args.max_dim, activation);
        worst = worst.max(gradient_check(
            &probe.net,
            &probe.input,
            &probe.target,
            args.epsilon,
        )?);
    }
    println!("max relative error {worst:.3e} over {} networks", args.nets);
    if !(worst < args.tolerance) {
        bail!(
            "gradient check failed: {worst:.3e} >= tolerance {:.1e}",
            args.tolerance
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Align(a) => align(a),
        Command::Eval(a) => eval(a),
        Command::RemapFit(a) => remap_fit(a),
        Command::RemapApply(a) => remap_apply(a),
        Command::GradCheck(a) => grad_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
