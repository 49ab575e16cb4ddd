//! Attention-guided selective tiling for small-object detection in
//! high-resolution images.
//!
//! The pipeline turns an attention map into a binary mask, keeps only the
//! tiles of a sliding-window grid that the mask covers, runs a detector on
//! each selected tile, drops detections that touch inner tile borders, moves
//! the rest into image coordinates and merges them with NMS. The evaluation
//! module scores the result COCO-style and per property bin; `semisup`
//! holds the schedules and bookkeeping of the teacher/student training loop.
//!
//! Geometry, NMS, alpha shapes, EMA and evaluation are generic over the
//! scalar type ([`Scalar`], implemented for `f32` and `f64`). The aliases
//! below fix the pipeline's working precision at `f64`.

pub mod attention;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod pgm;
pub mod pipeline;
pub mod reconstruction;
pub mod scalar;
pub mod semisup;
pub mod synth;
pub mod tiling;

pub use error::{DetectError, Error, Result};
pub use geometry::{Frame, ImageId, ImageSize, TileId};
pub use scalar::Scalar;

pub type BBox = geometry::BoundingBox<f64>;
pub type BBoxF32 = geometry::BoundingBox<f32>;
pub type Det = geometry::Detection<f64>;
pub type DetF32 = geometry::Detection<f32>;
pub type Polygons = attention::PolygonSet<f64>;
pub type Params = semisup::ParamVector<f64>;
