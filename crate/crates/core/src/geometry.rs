//! Axis-aligned boxes, detections and image sizes.
//!
//! Boxes are `(x, y, w, h)` in pixels with the origin at the image top-left
//! and y growing downward. Area is `w * h` (continuous, no +1 convention).

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Default, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageId(pub u64);

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Ordinal of a tile within its image's grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TileId(pub usize);

impl fmt::Display for TileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Size(format!("image size {width}x{height} must be positive")));
        }
        Ok(Self { width, height })
    }

    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    /// The whole image as a box.
    pub fn as_box<T: Scalar>(&self) -> BoundingBox<T> {
        BoundingBox {
            x: T::zero(),
            y: T::zero(),
            w: T::lit(self.width as f64),
            h: T::lit(self.height as f64),
        }
    }
}

impl fmt::Display for ImageSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

#[derive(Serialize, Deserialize)]
struct RawBox<T> {
    x: T,
    y: T,
    w: T,
    h: T,
}

/// Axis-aligned rectangle with positive, finite extent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "RawBox<T>",
    into = "RawBox<T>",
    bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>")
)]
pub struct BoundingBox<T> {
    x: T,
    y: T,
    w: T,
    h: T,
}

impl<T: Scalar> TryFrom<RawBox<T>> for BoundingBox<T> {
    type Error = Error;

    fn try_from(r: RawBox<T>) -> Result<Self> {
        BoundingBox::new(r.x, r.y, r.w, r.h)
    }
}

impl<T: Scalar> From<BoundingBox<T>> for RawBox<T> {
    fn from(b: BoundingBox<T>) -> Self {
        RawBox { x: b.x, y: b.y, w: b.w, h: b.h }
    }
}

impl<T: Scalar> BoundingBox<T> {
    pub fn new(x: T, y: T, w: T, h: T) -> Result<Self> {
        let finite = x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite();
        if !finite || !(w > T::zero()) || !(h > T::zero()) {
            return Err(Error::Invalid(format!("box ({x}, {y}, {w}, {h})")));
        }
        Ok(Self { x, y, w, h })
    }

    /// Box from corner coordinates `(x0, y0)`–`(x1, y1)`.
    /// Box spanning `[x0, x1] x [y0, y1]`. The extent is rounded down where
    /// needed so that `right() <= x1` and `bottom() <= y1` hold exactly.
    pub fn from_corners(x0: T, y0: T, x1: T, y1: T) -> Result<Self> {
        Self::new(x0, y0, fit_extent(x0, x1), fit_extent(y0, y1))
    }

    pub fn x(&self) -> T {
        self.x
    }
    pub fn y(&self) -> T {
        self.y
    }
    pub fn w(&self) -> T {
        self.w
    }
    pub fn h(&self) -> T {
        self.h
    }
    pub fn right(&self) -> T {
        self.x + self.w
    }
    pub fn bottom(&self) -> T {
        self.y + self.h
    }
    pub fn area(&self) -> T {
        self.w * self.h
    }

    pub fn corners(&self) -> [[T; 2]; 4] {
        [
            [self.x, self.y],
            [self.right(), self.y],
            [self.right(), self.bottom()],
            [self.x, self.bottom()],
        ]
    }

    /// Closed containment of `other` in `self`.
    pub fn contains(&self, other: &BoundingBox<T>) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    pub fn intersection_area(&self, other: &BoundingBox<T>) -> T {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= T::zero() || ih <= T::zero() {
            T::zero()
        } else {
            iw * ih
        }
    }

    pub fn shifted(&self, dx: T, dy: T) -> Self {
        Self { x: self.x + dx, y: self.y + dy, w: self.w, h: self.h }
    }

    /// Lexicographic order on `(x, y, w, h)`; the deterministic tie-breaker.
    pub fn lex_cmp(&self, other: &BoundingBox<T>) -> Ordering {
        let key = |b: &BoundingBox<T>| [b.x, b.y, b.w, b.h];
        key(self)
            .iter()
            .zip(key(other).iter())
            .map(|(a, b)| a.partial_cmp(b).unwrap_or(Ordering::Equal))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }

    pub fn cast<U: Scalar>(&self) -> BoundingBox<U> {
        BoundingBox {
            x: U::lit(self.x.as_f64()),
            y: U::lit(self.y.as_f64()),
            w: U::lit(self.w.as_f64()),
            h: U::lit(self.h.as_f64()),
        }
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou<T: Scalar>(a: &BoundingBox<T>, b: &BoundingBox<T>) -> T {
    let inter = a.intersection_area(b);
    if inter <= T::zero() {
        return T::zero();
    }
    inter / (a.area() + b.area() - inter)
}

/// Intersection of `b` with `region`, or `None` when it has no area.
pub fn clip<T: Scalar>(b: &BoundingBox<T>, region: &BoundingBox<T>) -> Option<BoundingBox<T>> {
    let x0 = b.x.max(region.x);
    let y0 = b.y.max(region.y);
    let x1 = b.right().min(region.right());
    let y1 = b.bottom().min(region.bottom());
    BoundingBox::from_corners(x0, y0, x1, y1).ok()
}

fn fit_extent<T: Scalar>(lo: T, hi: T) -> T {
    let mut w = hi - lo;
    for _ in 0..4 {
        if !(lo + w > hi) {
            break;
        }
        w = w - w * T::epsilon();
    }
    w
}

/// Coordinate frame a detection is expressed in. Mixing frames is an error.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Frame {
    TileLocal(TileId),
    ImageGlobal(ImageId),
}

#[derive(Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
struct RawDetection<T> {
    bbox: BoundingBox<T>,
    score: T,
    frame: Frame,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "RawDetection<T>",
    into = "RawDetection<T>",
    bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>")
)]
pub struct Detection<T> {
    pub bbox: BoundingBox<T>,
    score: T,
    pub frame: Frame,
}

impl<T: Scalar> TryFrom<RawDetection<T>> for Detection<T> {
    type Error = Error;

    fn try_from(r: RawDetection<T>) -> Result<Self> {
        Detection::new(r.bbox, r.score, r.frame)
    }
}

impl<T: Scalar> From<Detection<T>> for RawDetection<T> {
    fn from(d: Detection<T>) -> Self {
        RawDetection { bbox: d.bbox, score: d.score, frame: d.frame }
    }
}

impl<T: Scalar> Detection<T> {
    pub fn new(bbox: BoundingBox<T>, score: T, frame: Frame) -> Result<Self> {
        if !(score >= T::zero() && score <= T::one()) {
            return Err(Error::Invalid(format!("score {score} outside [0, 1]")));
        }
        Ok(Self { bbox, score, frame })
    }

    pub fn score(&self) -> T {
        self.score
    }

    /// Score descending, then box lexicographic ascending.
    pub fn rank_cmp(&self, other: &Detection<T>) -> Ordering {
        other
            .score
            .partial_cmp(&self.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| self.bbox.lex_cmp(&other.bbox))
    }
}

/// Map a tile-local detection into the image frame by adding the tile origin.
pub fn translate<T: Scalar>(d: &Detection<T>, offset: (T, T), image: ImageId) -> Result<Detection<T>> {
    match d.frame {
        Frame::TileLocal(_) => Ok(Detection {
            bbox: d.bbox.shifted(offset.0, offset.1),
            score: d.score,
            frame: Frame::ImageGlobal(image),
        }),
        Frame::ImageGlobal(id) => Err(Error::Frame(format!(
            "cannot translate detection already in image frame {id}"
        ))),
    }
}

/// Inverse of [`translate`]: image frame back into the frame of a tile at `offset`.
pub fn to_tile_local<T: Scalar>(d: &Detection<T>, offset: (T, T), tile: TileId) -> Result<Detection<T>> {
    match d.frame {
        Frame::ImageGlobal(_) => Ok(Detection {
            bbox: d.bbox.shifted(-offset.0, -offset.1),
            score: d.score,
            frame: Frame::TileLocal(tile),
        }),
        Frame::TileLocal(id) => Err(Error::Frame(format!(
            "detection is already local to tile {id}"
        ))),
    }
}

/// Errors unless every detection shares one frame.
pub fn ensure_single_frame<T>(dets: &[Detection<T>]) -> Result<()> {
    if let Some(first) = dets.first() {
        if let Some(other) = dets.iter().find(|d| d.frame != first.frame) {
            return Err(Error::Frame(format!(
                "mixed frames {:?} and {:?}",
                first.frame, other.frame
            )));
        }
    }
    Ok(())
}
