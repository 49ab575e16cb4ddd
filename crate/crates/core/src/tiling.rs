//! Sliding-window tile grids and attention-guided tile selection.

use serde::{Deserialize, Serialize};

use crate::attention::{BinaryMask, IntegralMask};
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, ImageId, ImageSize, TileId};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tile {
    pub id: TileId,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Tile {
    pub fn as_box<T: Scalar>(&self) -> BoundingBox<T> {
        BoundingBox::new(
            T::lit(self.x as f64),
            T::lit(self.y as f64),
            T::lit(self.w as f64),
            T::lit(self.h as f64),
        )
        .expect("tiles have positive size")
    }

    /// The tile in its own frame: `(0, 0, w, h)`.
    pub fn local_box<T: Scalar>(&self) -> BoundingBox<T> {
        BoundingBox::new(T::zero(), T::zero(), T::lit(self.w as f64), T::lit(self.h as f64))
            .expect("tiles have positive size")
    }

    pub fn origin<T: Scalar>(&self) -> (T, T) {
        (T::lit(self.x as f64), T::lit(self.y as f64))
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TilingConfig {
    pub tile_size: u32,
    pub stride: u32,
    pub tau: f32,
    pub coverage_min: f64,
}

impl Default for TilingConfig {
    fn default() -> Self {
        Self { tile_size: 800, stride: 400, tau: 0.3, coverage_min: 0.2 }
    }
}

impl TilingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.stride > self.tile_size {
            return Err(Error::Invalid(format!(
                "stride {} must be in (0, tile_size = {}]",
                self.stride, self.tile_size
            )));
        }
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::Invalid(format!("tau {} must be in [0, 1)", self.tau)));
        }
        if !(self.coverage_min > 0.0 && self.coverage_min <= 1.0) {
            return Err(Error::Invalid(format!(
                "coverage_min {} must be in (0, 1]",
                self.coverage_min
            )));
        }
        Ok(())
    }
}

/// Window origins along one axis: multiples of `stride` up to
/// `dim - tile`, plus a final origin clamped to `dim - tile` when the
/// remainder is not a stride multiple. Returns the window length too.
pub fn axis_origins(dim: u32, tile: u32, stride: u32) -> (Vec<u32>, u32) {
    if dim <= tile {
        return (vec![0], dim);
    }
    let last = dim - tile;
    let mut origins: Vec<u32> = (0..=last).step_by(stride as usize).collect();
    if origins.last() != Some(&last) {
        origins.push(last);
    }
    (origins, tile)
}

/// Every window of the sliding grid, row-major, ids `0..n`.
pub fn tile_grid(size: ImageSize, cfg: &TilingConfig) -> Vec<Tile> {
    let (xs, w) = axis_origins(size.width, cfg.tile_size, cfg.stride);
    let (ys, h) = axis_origins(size.height, cfg.tile_size, cfg.stride);
    ys.iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .enumerate()
        .map(|(i, (x, y))| Tile { id: TileId(i), x, y, w, h })
        .collect()
}

/// Share of the tile's pixels that are set in the full-resolution mask.
pub fn coverage_fraction(mask: &IntegralMask, t: &Tile) -> f64 {
    mask.count(t.x, t.y, t.x + t.w, t.y + t.h) as f64 / t.area() as f64
}

/// Grid tiles whose mask coverage strictly exceeds `coverage_min`, in grid order.
pub fn select_tiles(mask: &BinaryMask, cfg: &TilingConfig, size: ImageSize) -> Result<Vec<Tile>> {
    if mask.size() != size {
        return Err(Error::Size(format!("mask {} does not match image {size}", mask.size())));
    }
    let integral = mask.integral();
    Ok(tile_grid(size, cfg)
        .into_iter()
        .filter(|t| coverage_fraction(&integral, t) > cfg.coverage_min)
        .collect())
}

/// JSON document `{image_id, tiles: [{id, x, y, w, h}]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileList {
    pub image_id: ImageId,
    pub tiles: Vec<Tile>,
}
