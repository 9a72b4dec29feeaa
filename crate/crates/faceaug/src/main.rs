//! `faceaug`: every pipeline stage behind one binary.
//!
//! Exit codes: 0 success, 1 input error, 2 internal failure.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use walkdir::WalkDir;

use faceaug::augment::{augment_dataset, AugmentConfig};
use faceaug::config::RunConfig;
use faceaug::eval::{
    load_protocol, load_template_list, run_benchmark, ConditioningConfig, EvalTemplate,
    IdentificationSplit,
};
use faceaug::features::{
    pca_fit, video_pool, EmbeddingBackend, FeatureVector, MediaFeature, PrecomputedBackend,
    ToyBackend,
};
use faceaug::fusion::{
    baseline_pool, fuse_scores, template_similarity, Strategy, TemplateFeatures,
};
use faceaug::geometry::{decompose_yaw, estimate_pose};
use faceaug::landmarks::LandmarkSet2D;
use faceaug::raster::RasterImage;
use faceaug::synth::{render_novel_views, signed_yaws};

#[derive(Parser)]
#[command(name = "faceaug", about = "Face dataset augmentation and matching pipeline")]
#[command(disable_version_flag = true)]
struct Cli {
    /// Print the artifact version and data-asset hashes.
    #[arg(long, short = 'V')]
    version: bool,
    /// Configuration file (TOML); flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override for reproducible stages.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel stages (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate yaw/pitch/roll from an image + landmark file.
    Pose(PoseArgs),
    /// Render a face at novel yaws.
    Render(RenderArgs),
    /// Augment a dataset tree into aligned / rendered / neutralized images.
    Augment(AugmentArgs),
    /// Embed images under a directory into a feature file.
    Embed(EmbedArgs),
    /// Fit a PCA model on an embedding file.
    Pca(PcaArgs),
    /// Score two template files.
    Match(MatchArgs),
    /// Run a verification/identification protocol and write a report.
    Eval(EvalArgs),
    /// Pool a score list with every fusion strategy.
    BenchFusion(BenchFusionArgs),
}

#[derive(Args)]
struct PoseArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    landmarks: PathBuf,
    /// Shape id to fit against (default 0).
    #[arg(long, default_value_t = 0)]
    shape: usize,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    landmarks: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated yaw magnitudes.
    #[arg(long, default_value = "0,40,75")]
    yaws: String,
    #[arg(long, default_value_t = 0)]
    shape: usize,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Skip the expression-neutralized variant (4x instead of 5x).
    #[arg(long)]
    no_expression: bool,
    /// Use shape 0 everywhere instead of hashed shape picks.
    #[arg(long)]
    no_shapes: bool,
    #[arg(long)]
    yaws: Option<String>,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PcaArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MatchArgs {
    #[arg(long)]
    probe_template: PathBuf,
    #[arg(long)]
    gallery_template: PathBuf,
    #[arg(long, default_value = "softmax")]
    strategy: String,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory with templates.csv, pairs.csv and optionally
    /// gallery.csv + probes.csv.
    #[arg(long)]
    protocol: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Training embeddings for PCA; conditioning is skipped when absent.
    #[arg(long)]
    train_embeddings: Option<PathBuf>,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct BenchFusionArgs {
    #[arg(long)]
    scores: PathBuf,
}

enum AppError {
    Input(String),
    Internal(String),
}

impl AppError {
    fn input(e: impl std::fmt::Display) -> AppError {
        AppError::Input(e.to_string())
    }

    fn internal(e: impl std::fmt::Display) -> AppError {
        AppError::Internal(e.to_string())
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            std::process::exit(0);
        }
        Err(e) => {
            eprint!("{e}");
            std::process::exit(1);
        }
    };
    std::process::exit(match run(cli) {
        Ok(()) => 0,
        Err(AppError::Input(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(AppError::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            2
        }
    });
}

fn asset_hash(config: &RunConfig) -> Result<String, AppError> {
    let shapes = faceaug::assets::load_or_build_shape_set(config.assets_dir.as_deref())
        .map_err(AppError::input)?;
    let basis = faceaug::assets::load_or_build_basis(config.assets_dir.as_deref())
        .map_err(AppError::input)?;
    let mut hasher = Sha256::new();
    for mesh in &shapes.shapes {
        for v in &mesh.vertices {
            hasher.update(format!("{} {} {}\n", v.x, v.y, v.z));
        }
        for t in &mesh.triangles {
            hasher.update(format!("{} {} {}\n", t[0], t[1], t[2]));
        }
    }
    for delta in [&basis.mouth_open, &basis.mouth_closed, &basis.smile] {
        for d in delta {
            hasher.update(format!("{} {} {}\n", d.x, d.y, d.z));
        }
    }
    Ok(format!("{:x}", hasher.finalize()))
}

fn run(cli: Cli) -> Result<(), AppError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(AppError::input)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.augment.seed = seed;
    } else {
        config.augment.seed = config.seed;
    }
    if let Some(workers) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(AppError::internal)?;
    }

    if cli.version {
        println!(
            "faceaug {} assets:{}",
            env!("CARGO_PKG_VERSION"),
            asset_hash(&config)?
        );
        return Ok(());
    }

    match cli.command {
        None => Err(AppError::Input(
            "no subcommand given; see --help".to_string(),
        )),
        Some(Command::Pose(args)) => cmd_pose(&config, args),
        Some(Command::Render(args)) => cmd_render(&config, args),
        Some(Command::Augment(args)) => cmd_augment(&config, args),
        Some(Command::Embed(args)) => cmd_embed(args),
        Some(Command::Pca(args)) => cmd_pca(args),
        Some(Command::Match(args)) => cmd_match(&config, args),
        Some(Command::Eval(args)) => cmd_eval(&config, args),
        Some(Command::BenchFusion(args)) => cmd_bench_fusion(args),
    }
}

fn parse_yaws(text: &str) -> Result<Vec<f64>, AppError> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| AppError::Input(format!("bad yaw value {t:?}")))
        })
        .collect()
}

fn load_inputs(
    image: &Path,
    landmarks: &Path,
) -> Result<(RasterImage, LandmarkSet2D), AppError> {
    let img = RasterImage::load_png(image).map_err(AppError::input)?;
    let lm = LandmarkSet2D::load(landmarks).map_err(AppError::input)?;
    Ok((img, lm))
}

fn cmd_pose(config: &RunConfig, args: PoseArgs) -> Result<(), AppError> {
    let (image, landmarks) = load_inputs(&args.image, &args.landmarks)?;
    let shapes = faceaug::assets::load_or_build_shape_set(config.assets_dir.as_deref())
        .map_err(AppError::input)?;
    if args.shape >= shapes.len() {
        return Err(AppError::Input(format!("shape id {} out of range", args.shape)));
    }
    let est = estimate_pose(&landmarks, shapes.shape(args.shape), (image.width, image.height))
        .map_err(AppError::input)?;
    let euler = decompose_yaw(&est.pose).map_err(AppError::internal)?;
    println!(
        "{}",
        serde_json::json!({
            "yaw": euler.yaw,
            "pitch": euler.pitch,
            "roll": euler.roll,
            "residual": est.residual,
        })
    );
    Ok(())
}

fn cmd_render(config: &RunConfig, args: RenderArgs) -> Result<(), AppError> {
    let (image, landmarks) = load_inputs(&args.image, &args.landmarks)?;
    let shapes = faceaug::assets::load_or_build_shape_set(config.assets_dir.as_deref())
        .map_err(AppError::input)?;
    if args.shape >= shapes.len() {
        return Err(AppError::Input(format!("shape id {} out of range", args.shape)));
    }
    let shape = shapes.shape(args.shape);
    let magnitudes = parse_yaws(&args.yaws)?;
    let est = estimate_pose(&landmarks, shape, (image.width, image.height))
        .map_err(AppError::input)?;
    let source_yaw = decompose_yaw(&est.pose).map_err(AppError::internal)?.yaw;
    let yaws = signed_yaws(source_yaw, &magnitudes);
    let outputs =
        render_novel_views(&image, &landmarks, shape, &yaws).map_err(AppError::internal)?;
    std::fs::create_dir_all(&args.out).map_err(AppError::input)?;
    for (render, yaw) in outputs.iter().zip(&yaws) {
        let tag = if *yaw < 0.0 {
            format!("m{}", yaw.round().abs() as i64)
        } else {
            format!("{}", yaw.round() as i64)
        };
        render
            .image
            .save_png_with_mask(&args.out.join(format!("render_{tag}.png")), &render.mask)
            .map_err(AppError::internal)?;
    }
    Ok(())
}

fn cmd_augment(config: &RunConfig, args: AugmentArgs) -> Result<(), AppError> {
    let shapes = faceaug::assets::load_or_build_shape_set(config.assets_dir.as_deref())
        .map_err(AppError::input)?;
    let basis = faceaug::assets::load_or_build_basis(config.assets_dir.as_deref())
        .map_err(AppError::input)?;
    let mut augment: AugmentConfig = config.augment.clone();
    if args.no_expression {
        augment.include_expression = false;
    }
    if args.no_shapes {
        augment.vary_shapes = false;
    }
    if let Some(yaws) = &args.yaws {
        augment.yaws = parse_yaws(yaws)?;
    }
    let manifest = augment_dataset(&args.input, &args.out, &shapes, &basis, &augment)
        .map_err(|e| match e {
            faceaug::augment::AugmentError::EmptyInput(_)
            | faceaug::augment::AugmentError::BadConfig(_)
            | faceaug::augment::AugmentError::Io(_) => AppError::input(e),
            other => AppError::internal(other),
        })?;
    eprintln!(
        "augmented {} subjects into {} rows",
        manifest.subjects().len(),
        manifest.rows.len()
    );
    Ok(())
}

fn cmd_embed(args: EmbedArgs) -> Result<(), AppError> {
    let backend = ToyBackend;
    let mut paths: Vec<PathBuf> = WalkDir::new(&args.input)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("png") | Some("jpg") | Some("jpeg")
            )
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(AppError::Input(format!(
            "no images under {}",
            args.input.display()
        )));
    }
    let mut entries = Vec::with_capacity(paths.len());
    for path in &paths {
        let rel = path
            .strip_prefix(&args.input)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/");
        let image = RasterImage::load_png(path).map_err(AppError::input)?;
        let feature = backend.embed(&image, &rel).map_err(AppError::internal)?;
        entries.push((rel, feature.values));
    }
    PrecomputedBackend::save(&args.out, backend.dim(), &entries).map_err(AppError::internal)?;
    eprintln!("embedded {} images", entries.len());
    Ok(())
}

fn cmd_pca(args: PcaArgs) -> Result<(), AppError> {
    let backend = PrecomputedBackend::load(&args.embeddings).map_err(AppError::input)?;
    let mut ids = backend.ids();
    ids.sort();
    let samples: Vec<FeatureVector> = ids
        .iter()
        .map(|id| backend.lookup(id))
        .collect::<Result<_, _>>()
        .map_err(AppError::internal)?;
    let model = pca_fit(&samples).map_err(AppError::input)?;
    model.save(&args.out).map_err(AppError::internal)?;
    eprintln!("fitted PCA on {} samples (D = {})", samples.len(), model.dim());
    Ok(())
}

fn load_template(path: &Path) -> Result<TemplateFeatures, AppError> {
    let text = std::fs::read_to_string(path).map_err(AppError::input)?;
    serde_json::from_str(&text).map_err(AppError::input)
}

fn cmd_match(config: &RunConfig, args: MatchArgs) -> Result<(), AppError> {
    let probe = load_template(&args.probe_template)?;
    let gallery = load_template(&args.gallery_template)?;
    let mut fusion = config.fusion.clone();
    fusion.strategy = args
        .strategy
        .parse::<Strategy>()
        .map_err(AppError::input)?;
    let score = template_similarity(&probe, &gallery, &fusion).map_err(AppError::input)?;
    if score.degraded {
        eprintln!("note: one variant list was empty; score uses the other alone");
    }
    println!("{}", score.score);
    Ok(())
}

fn cmd_eval(config: &RunConfig, args: EvalArgs) -> Result<(), AppError> {
    let (templates, split) = load_protocol(
        &args.protocol.join("templates.csv"),
        &args.protocol.join("pairs.csv"),
    )
    .map_err(AppError::input)?;
    let backend = PrecomputedBackend::load(&args.embeddings).map_err(AppError::input)?;

    let mut eval_templates: HashMap<String, EvalTemplate> = HashMap::new();
    for template in &templates {
        let mut media: Vec<MediaFeature> = Vec::new();
        let mut item_ids = Vec::new();
        for item in &template.media {
            let feature = backend.lookup(&item.item_id).map_err(AppError::input)?;
            item_ids.push(item.item_id.clone());
            media.push(MediaFeature {
                media_id: item.media_id.clone(),
                media_type: item.media_type,
                feature,
            });
        }
        let pooled = video_pool(&media);
        eval_templates.insert(
            template.template_id.clone(),
            EvalTemplate {
                features: TemplateFeatures {
                    template_id: template.template_id.clone(),
                    subject_id: template.subject_id.clone(),
                    in_plane: pooled.into_iter().map(|f| f.values).collect(),
                    rendered: Vec::new(),
                    yaws: Vec::new(),
                },
                item_ids,
            },
        );
    }

    let gallery_csv = args.protocol.join("gallery.csv");
    let probes_csv = args.protocol.join("probes.csv");
    let identification = if gallery_csv.exists() && probes_csv.exists() {
        Some(IdentificationSplit {
            gallery: load_template_list(&gallery_csv).map_err(AppError::input)?,
            probes: load_template_list(&probes_csv).map_err(AppError::input)?,
        })
    } else {
        None
    };

    let (train, conditioning) = match &args.train_embeddings {
        Some(path) => {
            let train_backend = PrecomputedBackend::load(path).map_err(AppError::input)?;
            let mut ids = train_backend.ids();
            ids.sort();
            let samples: Vec<FeatureVector> = ids
                .iter()
                .map(|id| train_backend.lookup(id))
                .collect::<Result<_, _>>()
                .map_err(AppError::internal)?;
            (samples, config.conditioning.clone())
        }
        None => (
            Vec::new(),
            ConditioningConfig {
                apply_pca: false,
                ..config.conditioning.clone()
            },
        ),
    };

    let report = run_benchmark(
        &eval_templates,
        &split,
        identification.as_ref(),
        &train,
        &config.fusion,
        &conditioning,
    )
    .map_err(AppError::internal)?;

    let json = serde_json::to_string_pretty(&report).map_err(AppError::internal)?;
    std::fs::write(&args.report, &json).map_err(AppError::input)?;
    for (far, tar) in &report.tar_at_far {
        println!("TAR@FAR{far}  {tar:.4}");
    }
    for (rank, rate) in &report.cmc {
        println!("Rank-{rank}    {rate:.4}");
    }
    println!("Accuracy  {:.4}", report.accuracy);
    println!("1-EER     {:.4}", report.eer_complement);
    Ok(())
}

fn cmd_bench_fusion(args: BenchFusionArgs) -> Result<(), AppError> {
    let text = std::fs::read_to_string(&args.scores).map_err(AppError::input)?;
    let scores: Vec<f64> = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| AppError::Input(format!("bad score {t:?}")))
        })
        .collect::<Result<_, _>>()?;
    if scores.is_empty() {
        return Err(AppError::Input("empty score list".to_string()));
    }
    for (name, strategy) in [
        ("min", Strategy::Min),
        ("max", Strategy::Max),
        ("mean", Strategy::Mean),
    ] {
        let pooled = baseline_pool(&scores, strategy).map_err(AppError::input)?;
        println!("{name:8}{pooled}");
    }
    let fused = fuse_scores(&scores).map_err(AppError::input)?;
    println!("{:8}{fused}", "softmax");
    Ok(())
}
