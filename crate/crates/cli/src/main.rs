//! `canopy`: command-line front end for attention-guided tiled detection.
//!
//! Exit codes: 0 success, 1 failure (for `run`: at least one image failed),
//! 2 usage error.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use canopy_core::attention::{parse_scale, rasterize, Scale};
use canopy_core::dataset::{
    alpha_gt_for_image, attention_from_dir, attention_path, build_unlabeled_corpus, load_dataset, DatasetIndex,
    Split,
};
use canopy_core::detector::{DetectorHandle, ExternalDetector, ExternalSpec, SyntheticNoise};
use canopy_core::evaluation::{bin_curves_svg, binned_ar, property_bins};
use canopy_core::geometry::{ImageId, ImageSize};
use canopy_core::pipeline::{
    bench_tiling, evaluate, read_detections, run_pipeline, write_outputs, AttentionSource, DetectionFile, Mode,
    PipelineConfig,
};
use canopy_core::reconstruction::ReconstructionConfig;
use canopy_core::semisup::{filter_pseudo_labels, PseudoLabelConfig, TrainSchedule};
use canopy_core::synth::{write_scenes, Ellipse, SceneSpec};
use canopy_core::tiling::TilingConfig;

#[derive(Parser)]
#[command(name = "canopy", version, about = "Attention-guided selective tiling for small-object detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tile, detect and reconstruct every image of a split.
    Run(RunArgs),
    /// Render seeded synthetic scenes with a manifest and crown attention maps.
    Synth(SynthArgs),
    /// Compare standard and selective tiling (tile counts, runtime, AP/AR).
    Bench(BenchArgs),
    /// Rasterize alpha-shape attention ground truth for labeled images.
    GtAttention(GtAttentionArgs),
    /// COCO-style AP/AR of detection files against the manifest.
    Eval(EvalArgs),
    /// Recall per property bin, as CSV and an SVG line plot.
    EvalBins(EvalBinsArgs),
    /// Select tiles of unlabeled images for semi-supervised training.
    BuildCorpus(BuildCorpusArgs),
    /// Turn teacher detections into pseudo labels.
    PseudoLabel(PseudoLabelArgs),
    /// Print the learning-rate and labeled-ratio schedules.
    Schedule(ScheduleArgs),
}

#[derive(Args, Clone)]
struct TilingArgs {
    #[arg(long, default_value_t = 800)]
    tile_size: u32,
    #[arg(long, default_value_t = 400)]
    stride: u32,
    /// Attention binarization threshold (strict).
    #[arg(long, default_value_t = 0.3)]
    tau: f32,
    /// Minimum mask coverage of a tile (strict).
    #[arg(long, default_value_t = 0.2)]
    coverage: f64,
}

impl TilingArgs {
    fn config(&self) -> Result<TilingConfig, UsageError> {
        let cfg = TilingConfig { tile_size: self.tile_size, stride: self.stride, tau: self.tau, coverage_min: self.coverage };
        cfg.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Args, Clone)]
struct PipelineArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "selective")]
    mode: Mode,
    /// `oracle`, `synthetic`, or `external:<shell command>`.
    #[arg(long, default_value = "oracle")]
    detector: String,
    /// `gt-alpha` or `file:<dir>`.
    #[arg(long, default_value = "gt-alpha")]
    attention: AttentionSource,
    /// Alpha radius for `gt-alpha`, in pixels.
    #[arg(long, default_value_t = 100.0)]
    alpha: f64,
    /// Attention-map scale for `gt-alpha`, e.g. `0.25` or `1/4`.
    #[arg(long, default_value = "1/4", value_parser = scale_arg)]
    scale: Scale,
    #[command(flatten)]
    tiling: TilingArgs,
    /// Border band width in pixels.
    #[arg(long, default_value_t = 100)]
    band: u32,
    /// NMS IoU threshold.
    #[arg(long, default_value_t = 0.5)]
    nms: f64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Seed of the synthetic detector.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Per-request timeout of an external detector.
    #[arg(long, default_value_t = 60_000)]
    timeout_ms: u64,
}

impl PipelineArgs {
    fn config(&self) -> Result<PipelineConfig, UsageError> {
        let attention = match &self.attention {
            AttentionSource::GtAlpha { .. } => AttentionSource::GtAlpha { alpha: self.alpha, scale: self.scale },
            other => other.clone(),
        };
        if !(self.alpha > 0.0) {
            return Err(UsageError(format!("--alpha {} must be positive", self.alpha)));
        }
        let cfg = PipelineConfig {
            mode: self.mode,
            attention,
            tiling: self.tiling.config()?,
            reconstruction: ReconstructionConfig { band: self.band, nms_iou: self.nms },
            jobs: self.jobs,
            split: self.split,
        };
        cfg.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(cfg)
    }

    fn detector(&self, idx: &DatasetIndex) -> anyhow::Result<DetectorHandle> {
        let truth = || {
            let t: HashMap<_, _> = idx.images().iter().map(|im| (im.id, idx.boxes_of(im.id))).collect();
            Arc::new(t)
        };
        if self.timeout_ms == 0 {
            bail!(UsageError("--timeout-ms must be positive".into()));
        }
        Ok(match self.detector.as_str() {
            "oracle" => DetectorHandle::Oracle(truth()),
            "synthetic" => DetectorHandle::Synthetic { truth: truth(), seed: self.seed, noise: SyntheticNoise::default() },
            other => match other.strip_prefix("external:") {
                Some(command) => DetectorHandle::External(Arc::new(ExternalDetector::spawn(ExternalSpec {
                    command: command.to_owned(),
                    timeout_ms: self.timeout_ms,
                })?)),
                None => bail!(UsageError(format!("unknown detector `{other}`"))),
            },
        })
    }
}

fn scale_arg(s: &str) -> Result<Scale, String> {
    parse_scale(s).map_err(|e| e.to_string())
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Number of scenes.
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3840)]
    width: u32,
    #[arg(long, default_value_t = 2160)]
    height: u32,
    #[arg(long, default_value_t = 50)]
    apples: usize,
    #[arg(long, default_value_t = 20.0)]
    size_min: f64,
    #[arg(long, default_value_t = 200.0)]
    size_max: f64,
    /// Crown ellipse `cx,cy,rx,ry`; defaults to a centred ellipse spanning
    /// 70% of the width and 80% of the height.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    crown: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.3)]
    max_overlap: f64,
    #[arg(long, default_value = "test")]
    split: Split,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GtAttentionArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory receiving `<image_id>.attn.pgm`.
    #[arg(long)]
    out: PathBuf,
    /// Only this image; all labeled images with annotations otherwise.
    #[arg(long)]
    image: Option<u64>,
    #[arg(long, default_value_t = 100.0)]
    alpha: f64,
    #[arg(long, default_value = "1/4", value_parser = scale_arg)]
    scale: Scale,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory of `<image_id>.dets.json` files.
    #[arg(long)]
    detections: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
}

#[derive(Args)]
struct EvalBinsArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    detections: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Annotation property to bin by; repeatable.
    #[arg(long = "property", default_values_t = ["size".to_string(), "occlusion".to_string(), "brightness".to_string()])]
    properties: Vec<String>,
    /// Fraction of annotations per bin.
    #[arg(long, default_value_t = 0.1)]
    bin_fraction: f64,
    /// Directory receiving `<property>.csv` and `bins.svg`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildCorpusArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory of `<image_id>.attn.pgm` maps.
    #[arg(long)]
    attention: PathBuf,
    #[command(flatten)]
    tiling: TilingArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PseudoLabelArgs {
    /// A `<image_id>.dets.json` file of teacher detections.
    #[arg(long)]
    detections: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    threshold: f64,
    #[arg(long, default_value_t = 0.5)]
    nms: f64,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScheduleArgs {
    /// Print every n-th step.
    #[arg(long, default_value_t = 500)]
    every: u64,
    #[arg(long, default_value_t = 100_000)]
    total_steps: u64,
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn write_or_print(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(args: RunArgs) -> anyhow::Result<ExitCode> {
    let cfg = args.pipeline.config()?;
    let idx = load_dataset(&args.pipeline.manifest)?;
    let detector = args.pipeline.detector(&idx)?;
    let out = run_pipeline(&idx, &detector, &cfg)?;
    write_outputs(&args.out, &out)?;
    let r = &out.report;
    eprintln!(
        "{} images, {} failed; tiles {}/{}; detections {}",
        r.images.len(),
        r.failed_images,
        r.tiles_selected(),
        r.tiles_total(),
        r.images.iter().map(|i| i.detections_after_nms).sum::<usize>()
    );
    Ok(if r.failed_images > 0 { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn synth(args: SynthArgs) -> anyhow::Result<ExitCode> {
    let size = ImageSize::new(args.width, args.height)?;
    let crown = match args.crown.as_deref() {
        Some([cx, cy, rx, ry]) => Ellipse { cx: *cx, cy: *cy, rx: *rx, ry: *ry },
        Some(_) => bail!(UsageError("--crown takes cx,cy,rx,ry".into())),
        None => Ellipse {
            cx: args.width as f64 / 2.0,
            cy: args.height as f64 / 2.0,
            rx: args.width as f64 * 0.35,
            ry: args.height as f64 * 0.4,
        },
    };
    let specs: Vec<SceneSpec> = (0..args.count as u64)
        .map(|i| SceneSpec {
            seed: args.seed.wrapping_add(i),
            size,
            apples: args.apples,
            size_range: (args.size_min, args.size_max),
            crown,
            max_overlap: args.max_overlap,
        })
        .collect();
    let idx = write_scenes(&args.out, &specs, args.split)?;
    eprintln!("wrote {} images, {} annotations to {}", idx.images().len(), idx.annotations().len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn bench(args: BenchArgs) -> anyhow::Result<ExitCode> {
    if args.repeats == 0 {
        bail!(UsageError("--repeats must be positive".into()));
    }
    let cfg = args.pipeline.config()?;
    let idx = load_dataset(&args.pipeline.manifest)?;
    let detector = args.pipeline.detector(&idx)?;
    let table = bench_tiling(&idx, &detector, &cfg, args.repeats)?;
    write_or_print(args.out.as_deref(), &table.to_csv())?;
    eprintln!("identical detections: {}", table.identical_detections);
    Ok(ExitCode::SUCCESS)
}

fn gt_attention(args: GtAttentionArgs) -> anyhow::Result<ExitCode> {
    let idx = load_dataset(&args.manifest)?;
    fs::create_dir_all(&args.out)?;
    let ids: Vec<ImageId> = match args.image {
        Some(id) => vec![ImageId(id)],
        None => idx.images().iter().filter(|im| idx.annotations_of(im.id).next().is_some()).map(|im| im.id).collect(),
    };
    for id in ids {
        let rec = idx.image(id).with_context(|| format!("unknown image {id}"))?;
        let shape = alpha_gt_for_image(&idx, id, args.alpha)?;
        rasterize(&shape, rec.size(), args.scale, id).save(&attention_path(&args.out, id))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn eval(args: EvalArgs) -> anyhow::Result<ExitCode> {
    let idx = load_dataset(&args.manifest)?;
    let dets = read_detections(&args.detections)?;
    println!("{}", serde_json::to_string_pretty(&evaluate(&idx, args.split, &dets))?);
    Ok(ExitCode::SUCCESS)
}

fn eval_bins(args: EvalBinsArgs) -> anyhow::Result<ExitCode> {
    let idx = load_dataset(&args.manifest)?;
    let dets = read_detections(&args.detections)?;
    let gt = idx.ground_truth(args.split);
    fs::create_dir_all(&args.out)?;
    let mut curves = Vec::new();
    for p in &args.properties {
        let bins = property_bins(&gt, p, args.bin_fraction)?;
        let curve = binned_ar(&dets, &gt, p, &bins);
        fs::write(args.out.join(format!("{p}.csv")), curve.to_csv())?;
        curves.push(curve);
    }
    fs::write(args.out.join("bins.svg"), bin_curves_svg(&curves))?;
    Ok(ExitCode::SUCCESS)
}

fn build_corpus(args: BuildCorpusArgs) -> anyhow::Result<ExitCode> {
    let cfg = args.tiling.config()?;
    let idx = load_dataset(&args.manifest)?;
    let corpus = build_unlabeled_corpus(&idx, |id| attention_from_dir(&args.attention, id), &cfg)?;
    fs::write(&args.out, serde_json::to_string_pretty(&corpus)? + "\n")?;
    eprintln!("{} tiles; {} warnings (missing attention maps)", corpus.tiles.len(), corpus.missing_attention.len());
    Ok(ExitCode::SUCCESS)
}

fn pseudo_label(args: PseudoLabelArgs) -> anyhow::Result<ExitCode> {
    let file: DetectionFile = serde_json::from_str(&fs::read_to_string(&args.detections)?)?;
    let cfg = PseudoLabelConfig { conf_threshold: args.threshold, nms_iou: args.nms };
    let boxes = filter_pseudo_labels(&file.to_detections()?, &cfg)?;
    let rows: Vec<[f64; 4]> = boxes.iter().map(|b| [b.x(), b.y(), b.w(), b.h()]).collect();
    let body = serde_json::json!({ "image_id": file.image_id, "boxes": rows });
    write_or_print(args.out.as_deref(), &(serde_json::to_string_pretty(&body)? + "\n"))?;
    Ok(ExitCode::SUCCESS)
}

fn schedule(args: ScheduleArgs) -> anyhow::Result<ExitCode> {
    if args.every == 0 {
        bail!(UsageError("--every must be positive".into()));
    }
    let s = TrainSchedule { total_steps: args.total_steps, ..TrainSchedule::default() };
    s.validate().map_err(|e| UsageError(e.to_string()))?;
    println!("step,lr,ratio");
    let mut steps: Vec<u64> = (0..s.total_steps).step_by(args.every as usize).collect();
    if steps.last() != Some(&(s.total_steps - 1)) {
        steps.push(s.total_steps - 1);
    }
    for step in steps {
        println!("{step},{},{}", s.lr_at(step)?, s.ratio_at(step)?);
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Synth(a) => synth(a),
        Command::Bench(a) => bench(a),
        Command::GtAttention(a) => gt_attention(a),
        Command::Eval(a) => eval(a),
        Command::EvalBins(a) => eval_bins(a),
        Command::BuildCorpus(a) => build_corpus(a),
        Command::PseudoLabel(a) => pseudo_label(a),
        Command::Schedule(a) => schedule(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

