//! Merging per-tile detections into one image-level result.
//!
//! Each tile drops detections that are not fully inside its inner region (the
//! tile inset by `band` pixels, except along image edges), the survivors are
//! mapped into the image frame, concatenated in tile order and reduced with
//! greedy class-agnostic NMS.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ensure_single_frame, iou, translate, BoundingBox, Detection, Frame, ImageId, ImageSize, TileId};
use crate::scalar::Scalar;
use crate::tiling::Tile;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionConfig {
    pub band: u32,
    pub nms_iou: f64,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self { band: 100, nms_iou: 0.5 }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self, tile_size: u32) -> Result<()> {
        if 2 * self.band >= tile_size {
            return Err(Error::Invalid(format!(
                "band {} must be below half the tile size {tile_size}",
                self.band
            )));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou < 1.0) {
            return Err(Error::Invalid(format!("nms iou {} must be in (0, 1)", self.nms_iou)));
        }
        Ok(())
    }
}

/// The tile's inner region in tile-local coordinates. Sides lying on the
/// image boundary are not inset.
pub fn inner_region<T: Scalar>(t: &Tile, image: ImageSize, band: u32) -> BoundingBox<T> {
    let inset = |at_edge: bool| if at_edge { 0 } else { band };
    let left = inset(t.x == 0);
    let top = inset(t.y == 0);
    let right = t.w - inset(t.x + t.w >= image.width);
    let bottom = t.h - inset(t.y + t.h >= image.height);
    BoundingBox::from_corners(
        T::lit(left as f64),
        T::lit(top as f64),
        T::lit(right as f64),
        T::lit(bottom as f64),
    )
    .expect("band below half the tile size")
}

/// Keeps the tile-local detections fully contained in the tile's inner region.
pub fn border_filter<T: Scalar>(
    dets: &[Detection<T>],
    t: &Tile,
    image: ImageSize,
    band: u32,
) -> Vec<Detection<T>> {
    let inner = inner_region::<T>(t, image, band);
    dets.iter().filter(|d| inner.contains(&d.bbox)).copied().collect()
}

/// Greedy NMS: take the best remaining detection (score descending, box
/// lexicographic on ties), drop everything with IoU above `thr` against it,
/// repeat. Output is in selection order.
pub fn nms<T: Scalar>(dets: &[Detection<T>], thr: T) -> Result<Vec<Detection<T>>> {
    ensure_single_frame(dets)?;
    let mut order: Vec<&Detection<T>> = dets.iter().collect();
    order.sort_by(|a, b| a.rank_cmp(b));

    let mut suppressed = vec![false; order.len()];
    let mut keep = Vec::new();
    for i in 0..order.len() {
        if suppressed[i] {
            continue;
        }
        let best = order[i];
        keep.push(*best);
        for j in i + 1..order.len() {
            if !suppressed[j] && iou(&best.bbox, &order[j].bbox) > thr {
                suppressed[j] = true;
            }
        }
    }
    Ok(keep)
}

/// Border-filters every tile, maps survivors into the image frame and runs NMS.
pub fn reconstruct<T: Scalar>(
    per_tile: &BTreeMap<TileId, Vec<Detection<T>>>,
    tiles: &[Tile],
    image: ImageId,
    size: ImageSize,
    cfg: &ReconstructionConfig,
) -> Result<Vec<Detection<T>>> {
    let merged = merge_tiles(per_tile, tiles, image, size, cfg)?;
    nms(&merged, T::lit(cfg.nms_iou))
}

/// Everything [`reconstruct`] does except the final NMS.
pub fn merge_tiles<T: Scalar>(
    per_tile: &BTreeMap<TileId, Vec<Detection<T>>>,
    tiles: &[Tile],
    image: ImageId,
    size: ImageSize,
    cfg: &ReconstructionConfig,
) -> Result<Vec<Detection<T>>> {
    let by_id: BTreeMap<TileId, &Tile> = tiles.iter().map(|t| (t.id, t)).collect();
    let mut merged = Vec::new();
    for (id, dets) in per_tile {
        let tile = by_id
            .get(id)
            .ok_or_else(|| Error::InvariantViolation(format!("detections for unknown tile {id}")))?;
        let local = tile.local_box::<T>();
        for d in dets {
            if d.frame != Frame::TileLocal(*id) {
                return Err(Error::InvariantViolation(format!(
                    "detection in frame {:?} filed under tile {id}",
                    d.frame
                )));
            }
            if !local.contains(&d.bbox) {
                return Err(Error::InvariantViolation(format!(
                    "detection {:?} outside tile {id}",
                    d.bbox
                )));
            }
        }
        for d in border_filter(dets, tile, size, cfg.band) {
            merged.push(translate(&d, tile.origin(), image)?);
        }
    }
    Ok(merged)
}
