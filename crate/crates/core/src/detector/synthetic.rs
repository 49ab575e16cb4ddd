use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{clip, BoundingBox, Detection, Frame, ImageId};
use crate::tiling::Tile;

/// Perturbations applied by the synthetic detector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticNoise {
    /// Probability that an apple is never detected.
    pub miss_rate: f64,
    /// Standard deviation of the corner jitter, as a fraction of box size.
    pub jitter: f64,
    /// Expected number of spurious boxes per tile.
    pub false_positives_per_tile: f64,
    pub score_min: f64,
    pub score_max: f64,
}

impl Default for SyntheticNoise {
    fn default() -> Self {
        Self {
            miss_rate: 0.05,
            jitter: 0.05,
            false_positives_per_tile: 0.5,
            score_min: 0.3,
            score_max: 1.0,
        }
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn rng_for(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(parts.iter().fold(0u64, |acc, p| mix(acc ^ *p)))
}

/// Ground truth seen through a noisy detector. The perturbation of each apple
/// depends only on `(seed, image, apple index)`, so overlapping tiles agree on
/// it; spurious boxes depend on the tile's position.
pub fn synthetic_detect(
    gts: &[BoundingBox<f64>],
    t: &Tile,
    image: ImageId,
    seed: u64,
    noise: &SyntheticNoise,
) -> Vec<Detection<f64>> {
    let region = t.as_box::<f64>();
    let local = t.local_box::<f64>();
    let (ox, oy) = t.origin::<f64>();
    let frame = Frame::TileLocal(t.id);
    let score = |rng: &mut ChaCha8Rng| {
        if noise.score_max > noise.score_min {
            rng.gen_range(noise.score_min..=noise.score_max)
        } else {
            noise.score_max
        }
    };
    let mut out = Vec::new();

    for (i, g) in gts.iter().enumerate() {
        if g.intersection_area(&region) <= 0.0 {
            continue;
        }
        let mut rng = rng_for(&[seed, image.0, i as u64, 1]);
        if rng.gen_bool(noise.miss_rate.clamp(0.0, 1.0)) {
            continue;
        }
        let mut wiggle = |extent: f64| (rng.gen::<f64>() * 2.0 - 1.0) * 1.732 * noise.jitter * extent;
        let x0 = g.x() + wiggle(g.w());
        let y0 = g.y() + wiggle(g.h());
        let x1 = g.right() + wiggle(g.w());
        let y1 = g.bottom() + wiggle(g.h());
        let s = score(&mut rng);
        let Ok(jittered) = BoundingBox::from_corners(x0, y0, x1, y1) else { continue };
        if let Some(c) = clip(&jittered.shifted(-ox, -oy), &local) {
            out.push(Detection::new(c, s, frame).expect("score in range"));
        }
    }

    let mut rng = rng_for(&[seed, image.0, t.x as u64, t.y as u64, 2]);
    let lambda = noise.false_positives_per_tile.max(0.0);
    // Poisson by inversion
    let mut count = 0;
    let mut p = (-lambda).exp();
    let mut cdf = p;
    let u: f64 = rng.gen();
    while u > cdf && count < 1000 {
        count += 1;
        p *= lambda / count as f64;
        cdf += p;
    }
    for _ in 0..count {
        let w = rng.gen_range(10.0..80.0f64).min(t.w as f64);
        let h = rng.gen_range(10.0..80.0f64).min(t.h as f64);
        let x = rng.gen_range(0.0..=(t.w as f64 - w));
        let y = rng.gen_range(0.0..=(t.h as f64 - h));
        let s = score(&mut rng);
        let bbox = BoundingBox::new(x, y, w, h).expect("positive size");
        out.push(Detection::new(bbox, s, frame).expect("score in range"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TileId;

    #[test]
    fn deterministic_and_inside_tile() {
        let gts: Vec<_> = (0..30)
            .map(|i| BoundingBox::new(50.0 + i as f64 * 40.0, 300.0, 35.0, 35.0).unwrap())
            .collect();
        let t = Tile { id: TileId(1), x: 400, y: 0, w: 800, h: 800 };
        let noise = SyntheticNoise { false_positives_per_tile: 3.0, ..Default::default() };
        let a = synthetic_detect(&gts, &t, ImageId(2), 7, &noise);
        let b = synthetic_detect(&gts, &t, ImageId(2), 7, &noise);
        assert_eq!(a, b);
        assert!(!a.is_empty());
        let local = t.local_box::<f64>();
        assert!(a.iter().all(|d| local.contains(&d.bbox)));
        assert!(a.iter().all(|d| (0.3..=1.0).contains(&d.score())));
        assert_ne!(a, synthetic_detect(&gts, &t, ImageId(2), 8, &noise));
    }

    #[test]
    fn noiseless_equals_oracle() {
        let gts = vec![BoundingBox::new(700.0, 100.0, 200.0, 50.0).unwrap()];
        let t = Tile { id: TileId(0), x: 0, y: 0, w: 800, h: 800 };
        let noise = SyntheticNoise {
            miss_rate: 0.0,
            jitter: 0.0,
            false_positives_per_tile: 0.0,
            score_min: 1.0,
            score_max: 1.0,
        };
        assert_eq!(synthetic_detect(&gts, &t, ImageId(0), 1, &noise), super::super::oracle_detect(&gts, &t));
    }
}
