//! Attention maps: alpha-shape ground truth, rasterization, thresholding and
//! upsampling to image resolution.

mod alpha;
mod raster;

pub use alpha::{alpha_shape, circumradius, AlphaShape, PolygonSet};
pub use raster::rasterize;

use std::path::Path;

use num_rational::Ratio;

use crate::error::{Error, Result};
use crate::geometry::{ImageId, ImageSize};
use crate::pgm::{self, Pgm};

/// Map cells per image pixel along each axis (at most 1).
pub type Scale = Ratio<u32>;

pub const DEFAULT_SCALE: Scale = Ratio::new_raw(1, 4);

/// `ceil(dim * scale)`, exact.
pub fn scaled_dim(dim: u32, scale: Scale) -> u32 {
    let num = dim as u64 * *scale.numer() as u64;
    let den = *scale.denom() as u64;
    num.div_ceil(den) as u32
}

pub fn parse_scale(s: &str) -> Result<Scale> {
    let parsed = if let Some((n, d)) = s.split_once('/') {
        let n: u32 = n.trim().parse().map_err(|_| Error::Invalid(format!("scale `{s}`")))?;
        let d: u32 = d.trim().parse().map_err(|_| Error::Invalid(format!("scale `{s}`")))?;
        if d == 0 {
            return Err(Error::Invalid(format!("scale `{s}`")));
        }
        Ratio::new(n, d)
    } else {
        parse_decimal(s.trim()).ok_or_else(|| Error::Invalid(format!("scale `{s}`")))?
    };
    if *parsed.numer() == 0 || parsed > Ratio::from_integer(1) {
        return Err(Error::Invalid(format!("scale {parsed} must be in (0, 1]")));
    }
    Ok(parsed)
}

fn parse_decimal(s: &str) -> Option<Scale> {
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if frac.len() > 9 || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let den = 10u64.pow(frac.len() as u32);
    let int: u64 = if int.is_empty() { 0 } else { int.parse().ok()? };
    let frac: u64 = if frac.is_empty() { 0 } else { frac.parse().ok()? };
    let r = num_rational::Ratio::new(int * den + frac, den);
    Some(Ratio::new(u32::try_from(*r.numer()).ok()?, u32::try_from(*r.denom()).ok()?))
}

/// Dense grid of attention values in `[0, 1]` for one image, at `scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    cols: u32,
    rows: u32,
    values: Vec<f32>,
    pub scale: Scale,
    pub image: ImageId,
}

impl AttentionMap {
    pub fn zeros(image: ImageId, size: ImageSize, scale: Scale) -> Self {
        Self::filled(image, size, scale, 0.0)
    }

    pub fn filled(image: ImageId, size: ImageSize, scale: Scale, value: f32) -> Self {
        let cols = scaled_dim(size.width, scale);
        let rows = scaled_dim(size.height, scale);
        Self {
            cols,
            rows,
            values: vec![value; cols as usize * rows as usize],
            scale,
            image,
        }
    }

    pub fn from_values(
        image: ImageId,
        scale: Scale,
        cols: u32,
        rows: u32,
        values: Vec<f32>,
    ) -> Result<Self> {
        if values.len() != cols as usize * rows as usize {
            return Err(Error::Shape { left: values.len(), right: cols as usize * rows as usize });
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invalid(format!("attention value {v} outside [0, 1]")));
        }
        Ok(Self { cols, rows, values, scale, image })
    }

    pub fn cols(&self) -> u32 {
        self.cols
    }
    pub fn rows(&self) -> u32 {
        self.rows
    }
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, col: u32, row: u32) -> f32 {
        self.values[(row * self.cols + col) as usize]
    }

    pub fn set(&mut self, col: u32, row: u32, v: f32) {
        assert!((0.0..=1.0).contains(&v), "attention value {v} outside [0, 1]");
        self.values[(row * self.cols + col) as usize] = v;
    }

    /// Whether the grid dimensions match `size` at this map's scale.
    pub fn fits(&self, size: ImageSize) -> bool {
        self.cols == scaled_dim(size.width, self.scale) && self.rows == scaled_dim(size.height, self.scale)
    }

    /// 8-bit PGM with a `# scale n/d` header comment.
    pub fn to_pgm(&self) -> Pgm {
        Pgm {
            width: self.cols,
            height: self.rows,
            comments: vec![format!("scale {}", self.scale), format!("image {}", self.image)],
            data: self.values.iter().map(|v| (v * 255.0).round() as u8).collect(),
        }
    }

    pub fn from_pgm(p: &Pgm, image: ImageId) -> Result<Self> {
        let scale = p
            .comments
            .iter()
            .find_map(|c| c.strip_prefix("scale "))
            .ok_or_else(|| Error::Pgm("attention map is missing the `# scale` comment".into()))
            .and_then(|s| parse_scale(s.trim()))?;
        let values = p.data.iter().map(|&b| b as f32 / 255.0).collect();
        Self::from_values(image, scale, p.width, p.height, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        pgm::write(path, &self.to_pgm())
    }

    pub fn load(path: &Path, image: ImageId) -> Result<Self> {
        Self::from_pgm(&pgm::read(path)?, image)
    }
}

/// Row-major boolean grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    size: ImageSize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(size: ImageSize, fill: bool) -> Self {
        Self { size, bits: vec![fill; size.area() as usize] }
    }

    pub fn from_bits(size: ImageSize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() as u64 != size.area() {
            return Err(Error::Shape { left: bits.len(), right: size.area() as usize });
        }
        Ok(Self { size, bits })
    }

    pub fn size(&self) -> ImageSize {
        self.size
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y as usize) * self.size.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let w = self.size.width as usize;
        self.bits[(y as usize) * w + x as usize] = v;
    }

    /// Sets every bit in the half-open pixel rectangle, clamped to the mask.
    pub fn fill_rect(&mut self, x0: u32, y0: u32, x1: u32, y1: u32) {
        let x1 = x1.min(self.size.width);
        let y1 = y1.min(self.size.height);
        for y in y0..y1 {
            for x in x0..x1 {
                self.set(x, y, true);
            }
        }
    }

    pub fn count_ones(&self) -> u64 {
        self.bits.iter().filter(|b| **b).count() as u64
    }

    pub fn fraction_set(&self) -> f64 {
        self.count_ones() as f64 / self.size.area() as f64
    }

    /// Bitwise OR; sizes must match.
    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        if self.size != other.size {
            return Err(Error::Size(format!("mask {} vs {}", self.size, other.size)));
        }
        Ok(BinaryMask {
            size: self.size,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect(),
        })
    }

    /// The mask as an attention map with values 0 and 1.
    pub fn to_map(&self, image: ImageId, scale: Scale) -> AttentionMap {
        AttentionMap {
            cols: self.size.width,
            rows: self.size.height,
            values: self.bits.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect(),
            scale,
            image,
        }
    }

    pub fn to_pgm(&self) -> Pgm {
        Pgm {
            width: self.size.width,
            height: self.size.height,
            comments: Vec::new(),
            data: self.bits.iter().map(|b| if *b { 255 } else { 0 }).collect(),
        }
    }

    /// Summed-area table for constant-time rectangle counts.
    pub fn integral(&self) -> IntegralMask {
        let w = self.size.width as usize;
        let h = self.size.height as usize;
        let mut sums = vec![0u32; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0u32;
            for x in 0..w {
                row += self.bits[y * w + x] as u32;
                sums[(y + 1) * (w + 1) + x + 1] = sums[y * (w + 1) + x + 1] + row;
            }
        }
        IntegralMask { size: self.size, sums }
    }
}

#[derive(Clone, Debug)]
pub struct IntegralMask {
    size: ImageSize,
    sums: Vec<u32>,
}

impl IntegralMask {
    pub fn size(&self) -> ImageSize {
        self.size
    }

    /// Set bits in the half-open rectangle `[x0, x1) x [y0, y1)`, clamped.
    pub fn count(&self, x0: u32, y0: u32, x1: u32, y1: u32) -> u64 {
        let x1 = x1.min(self.size.width) as usize;
        let y1 = y1.min(self.size.height) as usize;
        let x0 = (x0 as usize).min(x1);
        let y0 = (y0 as usize).min(y1);
        let stride = self.size.width as usize + 1;
        let at = |x: usize, y: usize| self.sums[y * stride + x] as i64;
        (at(x1, y1) - at(x0, y1) - at(x1, y0) + at(x0, y0)) as u64
    }
}

/// Bit set iff the value is strictly greater than `tau`.
pub fn binarize(map: &AttentionMap, tau: f32) -> BinaryMask {
    BinaryMask {
        size: ImageSize { width: map.cols, height: map.rows },
        bits: map.values.iter().map(|v| *v > tau).collect(),
    }
}

/// Nearest-neighbour enlargement: target pixel `(x, y)` reads source
/// `(x * w / W, y * h / H)`.
pub fn upsample_nearest(mask: &BinaryMask, target: ImageSize) -> Result<BinaryMask> {
    let src = mask.size;
    if target.width < src.width || target.height < src.height {
        return Err(Error::Size(format!("cannot upsample {src} to smaller {target}")));
    }
    if target == src {
        return Ok(mask.clone());
    }
    let col_of: Vec<usize> = (0..target.width as u64)
        .map(|x| (x * src.width as u64 / target.width as u64) as usize)
        .collect();
    let mut bits = Vec::with_capacity(target.area() as usize);
    let mut last_row: Option<(u64, usize)> = None;
    for y in 0..target.height as u64 {
        let sy = y * src.height as u64 / target.height as u64;
        if let Some((prev, start)) = last_row {
            if prev == sy {
                bits.extend_from_within(start..start + target.width as usize);
                continue;
            }
        }
        let start = bits.len();
        let row = &mask.bits[sy as usize * src.width as usize..][..src.width as usize];
        bits.extend(col_of.iter().map(|&c| row[c]));
        last_row = Some((sy, start));
    }
    Ok(BinaryMask { size: target, bits })
}

/// Full-resolution binary mask for an image: threshold, then upsample.
pub fn mask_for_image(map: &AttentionMap, tau: f32, size: ImageSize) -> Result<BinaryMask> {
    if !map.fits(size) {
        return Err(Error::Size(format!(
            "attention map {}x{} at scale {} does not fit image {size}",
            map.cols, map.rows, map.scale
        )));
    }
    upsample_nearest(&binarize(map, tau), size)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn size(w: u32, h: u32) -> ImageSize {
        ImageSize::new(w, h).unwrap()
    }

    #[test]
    fn scale_arithmetic() {
        assert_eq!(scaled_dim(3840, DEFAULT_SCALE), 960);
        assert_eq!(scaled_dim(2160, DEFAULT_SCALE), 540);
        assert_eq!(scaled_dim(1001, DEFAULT_SCALE), 251);
        assert_eq!(parse_scale("0.25").unwrap(), DEFAULT_SCALE);
        assert_eq!(parse_scale("1/4").unwrap(), DEFAULT_SCALE);
        assert_eq!(scaled_dim(2160, parse_scale("0.1").unwrap()), 216);
        assert!(parse_scale("2").is_err());
        assert!(parse_scale("0").is_err());
    }

    #[test]
    fn binarize_is_strict() {
        let img = ImageId(0);
        let s = Ratio::from_integer(1);
        let m = AttentionMap::from_values(img, s, 3, 1, vec![0.0, 0.3, 0.31]).unwrap();
        assert_eq!(binarize(&m, 0.3).bits(), &[false, false, true]);
        let z = AttentionMap::zeros(img, size(4, 4), s);
        assert_eq!(binarize(&z, 0.3).count_ones(), 0);
    }

    #[test]
    fn binarize_of_binary_map_is_idempotent() {
        let mut mask = BinaryMask::new(size(6, 5), false);
        mask.fill_rect(1, 1, 4, 3);
        let again = binarize(&mask.to_map(ImageId(0), Ratio::from_integer(1)), 0.5);
        assert_eq!(again, mask);
    }

    #[test]
    fn upsample_examples() {
        let mut checker = BinaryMask::new(size(2, 2), false);
        checker.set(0, 0, true);
        checker.set(1, 1, true);
        assert_eq!(upsample_nearest(&checker, size(2, 2)).unwrap(), checker);
        let up = upsample_nearest(&checker, size(4, 4)).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(up.get(x, y), (x / 2) == (y / 2), "({x},{y})");
            }
        }
        assert!(matches!(upsample_nearest(&up, size(2, 4)), Err(Error::Size(_))));
    }

    #[test]
    fn upsample_4k_blocks() {
        let mut m = BinaryMask::new(size(960, 540), false);
        m.set(5, 7, true);
        m.set(959, 539, true);
        let up = upsample_nearest(&m, size(3840, 2160)).unwrap();
        assert_eq!(up.count_ones(), 32);
        for y in 28..32 {
            for x in 20..24 {
                assert!(up.get(x, y));
            }
        }
        assert!(!up.get(19, 28) && !up.get(24, 28) && !up.get(20, 27) && !up.get(20, 32));
        assert!(up.get(3839, 2159) && up.get(3836, 2156));
    }

    #[test]
    fn upsample_preserves_fraction() {
        let mut m = BinaryMask::new(size(7, 5), false);
        for (i, b) in m.bits.iter_mut().enumerate() {
            *b = (i * 7919) % 3 == 0;
        }
        let up = upsample_nearest(&m, size(23, 16)).unwrap();
        assert!((up.fraction_set() - m.fraction_set()).abs() <= 1.0 / 5.0);
    }

    #[test]
    fn integral_counts() {
        let mut m = BinaryMask::new(size(10, 8), false);
        m.fill_rect(2, 3, 6, 8);
        let ii = m.integral();
        assert_eq!(ii.count(0, 0, 10, 8), 20);
        assert_eq!(ii.count(2, 3, 4, 5), 4);
        assert_eq!(ii.count(0, 0, 2, 8), 0);
        assert_eq!(ii.count(5, 7, 100, 100), 1);
    }

    #[test]
    fn pgm_roundtrip_keeps_scale() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("7.attn.pgm");
        let mut m = AttentionMap::zeros(ImageId(7), size(40, 20), DEFAULT_SCALE);
        m.set(3, 2, 1.0);
        m.set(4, 2, 0.5);
        m.save(&path).unwrap();
        let back = AttentionMap::load(&path, ImageId(7)).unwrap();
        assert_eq!(back.scale, DEFAULT_SCALE);
        assert_eq!((back.cols(), back.rows()), (10, 5));
        assert_eq!(back.get(3, 2), 1.0);
        assert!((back.get(4, 2) - 0.5).abs() < 1.0 / 255.0);
        assert!(back.fits(size(40, 20)));
    }
}
