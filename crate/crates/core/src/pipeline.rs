//! End-to-end runs: attention, tile selection, per-tile detection,
//! reconstruction, and the standard-vs-selective benchmark.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{mask_for_image, rasterize, BinaryMask, Scale, DEFAULT_SCALE};
use crate::dataset::{alpha_gt_for_image, attention_path, DatasetIndex, Split};
use crate::detector::{DetectorHandle, TileTask};
use crate::error::{Error, Result};
use crate::evaluation::{ap_ar, EvalResult, MAX_DETS};
use crate::geometry::{BoundingBox, Detection, Frame, ImageId};
use crate::reconstruction::{merge_tiles, nms, ReconstructionConfig};
use crate::tiling::{select_tiles, tile_grid, Tile, TilingConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Selective,
    Standard,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "selective" => Ok(Mode::Selective),
            "standard" => Ok(Mode::Standard),
            _ => Err(Error::Invalid(format!("mode `{s}` (expected selective or standard)"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Selective => "selective",
            Mode::Standard => "standard",
        })
    }
}

/// Where attention maps come from.
#[derive(Clone, Debug, PartialEq)]
pub enum AttentionSource {
    /// Alpha shape of the image's annotations, rasterized.
    GtAlpha { alpha: f64, scale: Scale },
    /// `<dir>/<image_id>.attn.pgm`.
    Files(PathBuf),
}

impl FromStr for AttentionSource {
    type Err = Error;

    /// `gt-alpha` or `file:<dir>`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "gt-alpha" {
            Ok(AttentionSource::GtAlpha { alpha: 100.0, scale: DEFAULT_SCALE })
        } else if let Some(dir) = s.strip_prefix("file:") {
            Ok(AttentionSource::Files(PathBuf::from(dir)))
        } else {
            Err(Error::Invalid(format!("attention source `{s}` (expected gt-alpha or file:<dir>)")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub attention: AttentionSource,
    pub tiling: TilingConfig,
    pub reconstruction: ReconstructionConfig,
    pub jobs: usize,
    pub split: Split,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Selective,
            attention: AttentionSource::GtAlpha { alpha: 100.0, scale: DEFAULT_SCALE },
            tiling: TilingConfig::default(),
            reconstruction: ReconstructionConfig::default(),
            jobs: 1,
            split: Split::Test,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.tiling.validate()?;
        self.reconstruction.validate(self.tiling.tile_size)?;
        if self.jobs == 0 {
            return Err(Error::Invalid("jobs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageSeconds {
    pub attention: f64,
    pub tiling: f64,
    pub detection: f64,
    pub reconstruction: f64,
}

impl StageSeconds {
    pub fn total(&self) -> f64 {
        self.attention + self.tiling + self.detection + self.reconstruction
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub image_id: ImageId,
    pub tiles_total: usize,
    pub tiles_selected: usize,
    pub detections_before_nms: usize,
    pub detections_after_nms: usize,
    pub seconds: StageSeconds,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: Mode,
    pub images: Vec<ImageReport>,
    pub failed_images: usize,
    pub wall_seconds: f64,
}

impl RunReport {
    pub fn tiles_total(&self) -> usize {
        self.images.iter().map(|r| r.tiles_total).sum()
    }

    pub fn tiles_selected(&self) -> usize {
        self.images.iter().map(|r| r.tiles_selected).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub report: RunReport,
    /// Image-frame detections of every image that succeeded.
    pub detections: BTreeMap<ImageId, Vec<Detection<f64>>>,
}

/// Binary attention mask of one image at full resolution. An annotated image
/// without apples has an all-zero mask under `GtAlpha`.
pub fn attention_mask(idx: &DatasetIndex, image: ImageId, source: &AttentionSource, tau: f32) -> Result<BinaryMask> {
    let rec = idx.image(image).ok_or_else(|| Error::Invalid(format!("unknown image {image}")))?;
    let size = rec.size();
    let map = match source {
        AttentionSource::GtAlpha { alpha, scale } => match alpha_gt_for_image(idx, image, *alpha) {
            Ok(shape) => rasterize(&shape, size, *scale, image),
            Err(Error::EmptyGroundTruth(_)) => {
                log::info!("image {image} has no annotations; attention is empty");
                return Ok(BinaryMask::new(size, false));
            }
            Err(e) => return Err(e),
        },
        AttentionSource::Files(dir) => crate::attention::AttentionMap::load(&attention_path(dir, image), image)?,
    };
    mask_for_image(&map, tau, size)
}

/// Request id of one tile task.
pub fn request_id(image: ImageId, tile: &Tile) -> String {
    format!("img{image}-t{}", tile.id)
}

fn process_image(
    idx: &DatasetIndex,
    detector: &DetectorHandle,
    cfg: &PipelineConfig,
    image: ImageId,
) -> (ImageReport, Result<Vec<Detection<f64>>>) {
    let mut report = ImageReport { image_id: image, ..Default::default() };
    let result = (|| -> Result<Vec<Detection<f64>>> {
        let rec = idx.image(image).ok_or_else(|| Error::Invalid(format!("unknown image {image}")))?;
        let size = rec.size();
        let grid = tile_grid(size, &cfg.tiling);
        report.tiles_total = grid.len();

        let t = Instant::now();
        let tiles = match cfg.mode {
            Mode::Standard => grid,
            Mode::Selective => {
                let mask = attention_mask(idx, image, &cfg.attention, cfg.tiling.tau)?;
                report.seconds.attention = t.elapsed().as_secs_f64();
                let t = Instant::now();
                let sel = select_tiles(&mask, &cfg.tiling, size)?;
                report.seconds.tiling = t.elapsed().as_secs_f64();
                sel
            }
        };
        report.tiles_selected = tiles.len();

        let t = Instant::now();
        let image_path = idx.root().join(&rec.file_name);
        let per_tile: Vec<(Tile, Vec<Detection<f64>>)> = tiles
            .par_iter()
            .map(|tile| {
                let task = TileTask {
                    request_id: request_id(image, tile),
                    image,
                    image_path: image_path.clone(),
                    tile: *tile,
                };
                detector.detect_tile(&task).map(|d| (*tile, d))
            })
            .collect::<std::result::Result<_, crate::error::DetectError>>()?;
        report.seconds.detection = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let per_tile: BTreeMap<_, _> = per_tile.into_iter().map(|(tile, d)| (tile.id, d)).collect();
        let merged = merge_tiles(&per_tile, &tiles, image, size, &cfg.reconstruction)?;
        report.detections_before_nms = merged.len();
        let kept = nms(&merged, cfg.reconstruction.nms_iou)?;
        report.detections_after_nms = kept.len();
        report.seconds.reconstruction = t.elapsed().as_secs_f64();
        Ok(kept)
    })();
    if let Err(e) = &result {
        log::error!("image {image}: {e}");
        report.error = Some(e.to_string());
    }
    (report, result)
}

/// Runs every image of `cfg.split` through the pipeline on `cfg.jobs`
/// threads. Per-image failures are recorded in the report and do not stop
/// the run; only configuration errors are returned as `Err`.
pub fn run_pipeline(idx: &DatasetIndex, detector: &DetectorHandle, cfg: &PipelineConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    let mut ids: Vec<ImageId> = idx.images_in(cfg.split).map(|im| im.id).collect();
    ids.sort();

    let start = Instant::now();
    let outcomes: Vec<_> = pool.install(|| ids.par_iter().map(|&id| process_image(idx, detector, cfg, id)).collect());
    let wall_seconds = start.elapsed().as_secs_f64();

    let mut images = Vec::with_capacity(outcomes.len());
    let mut detections = BTreeMap::new();
    for (report, result) in outcomes {
        if let Ok(d) = result {
            detections.insert(report.image_id, d);
        }
        images.push(report);
    }
    let failed_images = images.iter().filter(|r| r.error.is_some()).count();
    Ok(RunOutput {
        report: RunReport { mode: cfg.mode, images, failed_images, wall_seconds },
        detections,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
}

/// On-disk detections of one image, in the image frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionFile {
    pub image_id: ImageId,
    pub detections: Vec<DetectionRecord>,
}

impl DetectionFile {
    pub fn new(image_id: ImageId, dets: &[Detection<f64>]) -> Self {
        let detections = dets
            .iter()
            .map(|d| DetectionRecord { x: d.bbox.x(), y: d.bbox.y(), w: d.bbox.w(), h: d.bbox.h(), score: d.score() })
            .collect();
        Self { image_id, detections }
    }

    pub fn to_detections(&self) -> Result<Vec<Detection<f64>>> {
        self.detections
            .iter()
            .map(|r| Detection::new(BoundingBox::new(r.x, r.y, r.w, r.h)?, r.score, Frame::ImageGlobal(self.image_id)))
            .collect()
    }
}

pub fn detections_path(dir: &Path, image: ImageId) -> PathBuf {
    dir.join(format!("{image}.dets.json"))
}

/// Writes `<dir>/<image_id>.dets.json` per image and `<dir>/report.json`.
pub fn write_outputs(dir: &Path, out: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (id, dets) in &out.detections {
        let text = serde_json::to_string_pretty(&DetectionFile::new(*id, dets))?;
        fs::write(detections_path(dir, *id), text + "\n")?;
    }
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&out.report)? + "\n")?;
    Ok(())
}

/// Reads every `*.dets.json` in `dir`.
pub fn read_detections(dir: &Path) -> Result<BTreeMap<ImageId, Vec<Detection<f64>>>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|source| Error::Read { path: dir.to_path_buf(), source })? {
        let path = entry?.path();
        if path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".dets.json")) {
            let text = fs::read_to_string(&path).map_err(|source| Error::Read { path: path.clone(), source })?;
            let file: DetectionFile = serde_json::from_str(&text)?;
            out.insert(file.image_id, file.to_detections()?);
        }
    }
    Ok(out)
}

/// AP/AR of `detections` against the ground truth of `split`.
pub fn evaluate(idx: &DatasetIndex, split: Split, detections: &BTreeMap<ImageId, Vec<Detection<f64>>>) -> EvalResult {
    let gt = idx.ground_truth(split).boxes();
    ap_ar(detections, &gt, MAX_DETS)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub mode: Mode,
    pub tiles_total: usize,
    pub tiles_processed: usize,
    pub median_seconds: f64,
    pub ap: f64,
    pub ar: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
    /// Whether both modes produced the same detections.
    pub identical_detections: bool,
}

impl BenchTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("mode,tiles_total,tiles_processed,median_seconds,ap,ar\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6}\n",
                r.mode, r.tiles_total, r.tiles_processed, r.median_seconds, r.ap, r.ar
            ));
        }
        s
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Runs both modes `repeats` times each and compares tile counts, median
/// wall-clock time and AP/AR against the ground truth.
pub fn bench_tiling(
    idx: &DatasetIndex,
    detector: &DetectorHandle,
    cfg: &PipelineConfig,
    repeats: usize,
) -> Result<BenchTable> {
    if repeats == 0 {
        return Err(Error::Invalid("repeats must be at least 1".into()));
    }
    let mut rows = Vec::new();
    let mut outputs = Vec::new();
    for mode in [Mode::Standard, Mode::Selective] {
        let cfg = PipelineConfig { mode, ..cfg.clone() };
        let mut times = Vec::with_capacity(repeats);
        let mut last = None;
        for _ in 0..repeats {
            let out = run_pipeline(idx, detector, &cfg)?;
            times.push(out.report.wall_seconds);
            last = Some(out);
        }
        let out = last.expect("at least one repeat");
        let eval = evaluate(idx, cfg.split, &out.detections);
        rows.push(BenchRow {
            mode,
            tiles_total: out.report.tiles_total(),
            tiles_processed: out.report.tiles_selected(),
            median_seconds: median(times),
            ap: eval.ap,
            ar: eval.ar,
        });
        outputs.push(out.detections);
    }
    Ok(BenchTable { rows, identical_detections: outputs[0] == outputs[1] })
}
