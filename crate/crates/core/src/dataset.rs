//! Dataset manifests, split bookkeeping, alpha-shape attention ground truth
//! and the unlabeled tile corpus.
//!
//! Manifest (`"schema": 1`), COCO-flavoured:
//!
//! ```json
//! {
//!   "schema": 1,
//!   "images": [{"id": 1, "file_name": "images/1.pgm", "width": 3840, "height": 2160, "split": "test"}],
//!   "annotations": [{"id": 7, "image_id": 1, "bbox": [x, y, w, h], "properties": {"size": 0.02}}]
//! }
//! ```
//!
//! `file_name` is relative to the manifest's directory. `split` is one of
//! `train`, `val`, `test`, `unlabeled`; unlabeled images carry no annotations.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{alpha_shape, mask_for_image, AttentionMap, PolygonSet};
use crate::error::{Error, Result};
use crate::evaluation::{GroundTruthSet, GtAnnotation, Properties};
use crate::geometry::{BoundingBox, ImageId, ImageSize};
use crate::tiling::{select_tiles, Tile, TilingConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unlabeled,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::Test, Split::Unlabeled];
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.to_string() == s)
            .ok_or_else(|| Error::Invalid(format!("split `{s}` (expected train, val, test or unlabeled)")))
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unlabeled => "unlabeled",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: ImageId,
    #[serde(alias = "path")]
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    pub split: Split,
}

impl ImageRecord {
    pub fn size(&self) -> ImageSize {
        ImageSize { width: self.width, height: self.height }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: u64,
    pub image_id: ImageId,
    #[serde(with = "bbox_array")]
    pub bbox: BoundingBox<f64>,
    #[serde(default)]
    pub properties: Properties,
}

mod bbox_array {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    use crate::geometry::BoundingBox;

    pub fn serialize<S: Serializer>(b: &BoundingBox<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq([b.x(), b.y(), b.w(), b.h()])
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BoundingBox<f64>, D::Error> {
        let [x, y, w, h] = <[f64; 4]>::deserialize(d)?;
        BoundingBox::new(x, y, w, h).map_err(D::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    schema: u32,
    images: Vec<ImageRecord>,
    #[serde(default)]
    annotations: Vec<AnnotationRecord>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub images: usize,
    pub annotations: usize,
}

/// A validated dataset. Immutable after loading.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetIndex {
    root: PathBuf,
    images: Vec<ImageRecord>,
    annotations: Vec<AnnotationRecord>,
    by_image: BTreeMap<ImageId, Vec<usize>>,
    image_pos: HashMap<ImageId, usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct LoadOptions {
    /// Fail with `MissingImage` when a referenced file does not exist.
    pub verify_images: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { verify_images: true }
    }
}

fn schema_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema { path: path.into(), message: message.into() }
}

impl DatasetIndex {
    /// Validates records and builds the index. `root` is the directory image
    /// paths are relative to.
    pub fn new(root: PathBuf, images: Vec<ImageRecord>, annotations: Vec<AnnotationRecord>) -> Result<Self> {
        let mut image_pos = HashMap::new();
        for (i, im) in images.iter().enumerate() {
            if image_pos.insert(im.id, i).is_some() {
                return Err(schema_err(format!("images[{i}].id"), format!("duplicate image id {}", im.id)));
            }
            if im.width == 0 || im.height == 0 {
                return Err(schema_err(format!("images[{i}]"), "width and height must be positive"));
            }
        }
        let mut seen = HashSet::new();
        let mut by_image: BTreeMap<ImageId, Vec<usize>> = images.iter().map(|im| (im.id, Vec::new())).collect();
        for (i, a) in annotations.iter().enumerate() {
            if !seen.insert(a.id) {
                return Err(schema_err(format!("annotations[{i}].id"), format!("duplicate annotation id {}", a.id)));
            }
            let Some(&pos) = image_pos.get(&a.image_id) else {
                return Err(schema_err(
                    format!("annotations[{i}].image_id"),
                    format!("unknown image {}", a.image_id),
                ));
            };
            let im = &images[pos];
            if im.split == Split::Unlabeled {
                return Err(schema_err(
                    format!("annotations[{i}].image_id"),
                    format!("image {} is in the unlabeled split", im.id),
                ));
            }
            if !im.size().as_box::<f64>().contains(&a.bbox) {
                return Err(schema_err(
                    format!("annotations[{i}].bbox"),
                    format!("box {:?} leaves image {} ({})", a.bbox, im.id, im.size()),
                ));
            }
            by_image.get_mut(&a.image_id).expect("image registered").push(i);
        }
        Ok(Self { root, images, annotations, by_image, image_pos })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn annotations(&self) -> &[AnnotationRecord] {
        &self.annotations
    }

    pub fn image(&self, id: ImageId) -> Option<&ImageRecord> {
        self.image_pos.get(&id).map(|&i| &self.images[i])
    }

    pub fn image_path(&self, id: ImageId) -> Option<PathBuf> {
        self.image(id).map(|im| self.root.join(&im.file_name))
    }

    pub fn annotations_of(&self, id: ImageId) -> impl Iterator<Item = &AnnotationRecord> {
        self.by_image.get(&id).into_iter().flatten().map(|&i| &self.annotations[i])
    }

    pub fn boxes_of(&self, id: ImageId) -> Vec<BoundingBox<f64>> {
        self.annotations_of(id).map(|a| a.bbox).collect()
    }

    pub fn images_in(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.images.iter().filter(move |im| im.split == split)
    }

    pub fn stats(&self) -> BTreeMap<Split, SplitStats> {
        let mut out: BTreeMap<Split, SplitStats> = Split::ALL.iter().map(|s| (*s, SplitStats::default())).collect();
        for im in &self.images {
            let e = out.get_mut(&im.split).expect("all splits present");
            e.images += 1;
            e.annotations += self.by_image[&im.id].len();
        }
        out
    }

    /// Ground truth of the images in `split`, keyed by image.
    pub fn ground_truth(&self, split: Split) -> GroundTruthSet<f64> {
        GroundTruthSet {
            images: self
                .images_in(split)
                .map(|im| {
                    let anns = self
                        .annotations_of(im.id)
                        .map(|a| GtAnnotation { bbox: a.bbox, properties: a.properties.clone() })
                        .collect();
                    (im.id, anns)
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let m = Manifest {
            schema: SCHEMA_VERSION,
            images: self.images.clone(),
            annotations: self.annotations.clone(),
        };
        serde_json::to_string_pretty(&m).expect("manifest serializes")
    }
}

pub fn load_dataset(path: &Path) -> Result<DatasetIndex> {
    load_dataset_with(path, LoadOptions::default())
}

pub fn load_dataset_with(path: &Path, opts: LoadOptions) -> Result<DatasetIndex> {
    let text = fs::read_to_string(path).map_err(|source| Error::Read { path: path.to_path_buf(), source })?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, root, opts)
}

pub fn parse_manifest(text: &str, root: PathBuf, opts: LoadOptions) -> Result<DatasetIndex> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let m: Manifest = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        schema_err(path, e.into_inner().to_string())
    })?;
    if m.schema != SCHEMA_VERSION {
        return Err(schema_err("schema", format!("unsupported schema {} (expected {SCHEMA_VERSION})", m.schema)));
    }
    let idx = DatasetIndex::new(root, m.images, m.annotations)?;
    if opts.verify_images {
        for im in &idx.images {
            let p = idx.root.join(&im.file_name);
            if !p.exists() {
                return Err(Error::MissingImage(p));
            }
        }
    }
    Ok(idx)
}

pub fn save_dataset(idx: &DatasetIndex, path: &Path) -> Result<()> {
    fs::write(path, idx.to_json())?;
    Ok(())
}

/// Attention ground truth for a labeled image: the alpha shape of all
/// annotation corners. When the corners are degenerate (e.g. one apple) or no
/// triangle survives, the annotation rectangles themselves are used; boxes
/// whose corners the alpha shape leaves isolated are added as rectangles.
pub fn alpha_gt_for_image(idx: &DatasetIndex, image: ImageId, alpha: f64) -> Result<PolygonSet<f64>> {
    let boxes = idx.boxes_of(image);
    if boxes.is_empty() {
        return Err(Error::EmptyGroundTruth(image.0));
    }
    alpha_gt_for_boxes(&boxes, alpha)
}

pub fn alpha_gt_for_boxes(boxes: &[BoundingBox<f64>], alpha: f64) -> Result<PolygonSet<f64>> {
    let corners: Vec<[f64; 2]> = boxes.iter().flat_map(|b| b.corners()).collect();
    match alpha_shape(&corners, alpha) {
        Ok(a) => {
            let mut shape = a.shape;
            if !a.isolated_points.is_empty() {
                let lonely: HashSet<(u64, u64)> =
                    a.isolated_points.iter().map(|p| (p[0].to_bits(), p[1].to_bits())).collect();
                let uncovered: Vec<BoundingBox<f64>> = boxes
                    .iter()
                    .filter(|b| b.corners().iter().any(|c| lonely.contains(&(c[0].to_bits(), c[1].to_bits()))))
                    .copied()
                    .collect();
                shape.polygons.extend(PolygonSet::from_boxes(&uncovered).polygons);
            }
            Ok(shape)
        }
        Err(Error::DegenerateInput(_)) | Err(Error::EmptyShape { .. }) => Ok(PolygonSet::from_boxes(boxes)),
        Err(e) => Err(e),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusTile {
    pub image_id: ImageId,
    pub tile: Tile,
}

/// Tiles of unlabeled images selected for semi-supervised training.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileCorpus {
    pub tiles: Vec<CorpusTile>,
    /// Unlabeled images skipped for lack of an attention map.
    pub missing_attention: Vec<ImageId>,
}

/// Selected tiles of every unlabeled image, in image-id then tile order.
/// `maps` supplies the attention map of an image, or `None` when it has none.
pub fn build_unlabeled_corpus<F>(idx: &DatasetIndex, maps: F, cfg: &TilingConfig) -> Result<TileCorpus>
where
    F: Fn(ImageId) -> Option<Result<AttentionMap>> + Sync,
{
    cfg.validate()?;
    let mut images: Vec<&ImageRecord> = idx.images_in(Split::Unlabeled).collect();
    images.sort_by_key(|im| im.id);
    let per_image: Vec<Result<Option<Vec<CorpusTile>>>> = images
        .par_iter()
        .map(|im| {
            let Some(map) = maps(im.id) else { return Ok(None) };
            let mask = mask_for_image(&map?, cfg.tau, im.size())?;
            Ok(Some(
                select_tiles(&mask, cfg, im.size())?
                    .into_iter()
                    .map(|tile| CorpusTile { image_id: im.id, tile })
                    .collect(),
            ))
        })
        .collect();
    let mut corpus = TileCorpus::default();
    for (im, r) in images.iter().zip(per_image) {
        match r? {
            Some(tiles) => corpus.tiles.extend(tiles),
            None => {
                log::warn!("no attention map for unlabeled image {}", im.id);
                corpus.missing_attention.push(im.id);
            }
        }
    }
    Ok(corpus)
}

/// Reads `<dir>/<image_id>.attn.pgm` if present.
pub fn attention_from_dir(dir: &Path, image: ImageId) -> Option<Result<AttentionMap>> {
    let path = attention_path(dir, image);
    path.exists().then(|| AttentionMap::load(&path, image))
}

pub fn attention_path(dir: &Path, image: ImageId) -> PathBuf {
    dir.join(format!("{image}.attn.pgm"))
}
