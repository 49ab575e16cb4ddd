//! Per-tile detectors behind one interface.
//!
//! [`DetectorHandle`] is either a ground-truth oracle, a seeded synthetic
//! detector that perturbs ground truth, or an external child process speaking
//! the newline-delimited JSON protocol in [`external`].

pub mod external;
mod synthetic;

pub use external::{ExternalDetector, ExternalSpec};
pub use synthetic::{synthetic_detect, SyntheticNoise};

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use crate::error::DetectError;
use crate::geometry::{clip, BoundingBox, Detection, Frame, ImageId};
use crate::scalar::Scalar;
use crate::tiling::Tile;

/// One unit of detection work.
#[derive(Clone, Debug, PartialEq)]
pub struct TileTask {
    pub request_id: String,
    pub image: ImageId,
    pub image_path: PathBuf,
    pub tile: Tile,
}

/// Ground truth per image, shared by the oracle and synthetic detectors.
pub type GroundTruth = Arc<HashMap<ImageId, Vec<BoundingBox<f64>>>>;

#[derive(Clone)]
pub enum DetectorHandle {
    Oracle(GroundTruth),
    Synthetic { truth: GroundTruth, seed: u64, noise: SyntheticNoise },
    External(Arc<ExternalDetector>),
}

impl std::fmt::Debug for DetectorHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DetectorHandle::Oracle(_) => f.write_str("Oracle"),
            DetectorHandle::Synthetic { seed, noise, .. } => {
                write!(f, "Synthetic {{ seed: {seed}, noise: {noise:?} }}")
            }
            DetectorHandle::External(e) => write!(f, "External({:?})", e.spec()),
        }
    }
}

impl DetectorHandle {
    /// Tile-local detections for one task. Every returned box lies inside the
    /// tile rectangle.
    pub fn detect_tile(&self, task: &TileTask) -> Result<Vec<Detection<f64>>, DetectError> {
        match self {
            DetectorHandle::Oracle(truth) => Ok(truth
                .get(&task.image)
                .map(|gts| oracle_detect(gts, &task.tile))
                .unwrap_or_default()),
            DetectorHandle::Synthetic { truth, seed, noise } => Ok(truth
                .get(&task.image)
                .map(|gts| synthetic_detect(gts, &task.tile, task.image, *seed, noise))
                .unwrap_or_default()),
            DetectorHandle::External(ext) => ext.detect(task),
        }
    }
}

/// Every annotation overlapping the tile, clipped to it and expressed in
/// tile-local coordinates, with score 1.
pub fn oracle_detect<T: Scalar>(annotations: &[BoundingBox<T>], t: &Tile) -> Vec<Detection<T>> {
    let local = t.local_box::<T>();
    let (ox, oy) = t.origin::<T>();
    annotations
        .iter()
        .filter_map(|a| clip(&a.shifted(-ox, -oy), &local))
        .map(|c| Detection::new(c, T::one(), Frame::TileLocal(t.id)).expect("score 1 is valid"))
        .collect()
}
