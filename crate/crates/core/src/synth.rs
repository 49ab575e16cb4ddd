//! Seeded synthetic orchard scenes: bright disc "apples" packed inside an
//! elliptical crown on a textured background, rendered as 8-bit grayscale.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionMap, Scale, DEFAULT_SCALE};
use crate::dataset::{attention_path, AnnotationRecord, DatasetIndex, ImageRecord, Split};
use crate::error::{Error, Result};
use crate::evaluation::{brightness, relative_size, Properties};
use crate::geometry::{BoundingBox, ImageId, ImageSize};
use crate::pgm::{self, Pgm};

/// Placement attempts per requested apple before giving up.
pub const ATTEMPTS_PER_APPLE: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = (x - self.cx) / self.rx;
        let dy = (y - self.cy) / self.ry;
        dx * dx + dy * dy <= 1.0
    }

    pub fn contains_box(&self, b: &BoundingBox<f64>) -> bool {
        b.corners().iter().all(|c| self.contains(c[0], c[1]))
    }

    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.rx * self.ry
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub size: ImageSize,
    pub apples: usize,
    /// Apple diameter range in pixels, inclusive.
    pub size_range: (f64, f64),
    pub crown: Ellipse,
    /// Largest allowed overlap between two apple boxes, as a fraction of the
    /// smaller box.
    pub max_overlap: f64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.size_range;
        if !(lo >= 1.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Invalid(format!("apple size range ({lo}, {hi})")));
        }
        let c = &self.crown;
        if !(c.rx > 0.0 && c.ry > 0.0 && c.cx.is_finite() && c.cy.is_finite()) {
            return Err(Error::Invalid(format!("crown ellipse {c:?}")));
        }
        if !(0.0..=1.0).contains(&self.max_overlap) {
            return Err(Error::Invalid(format!("max_overlap {} outside [0, 1]", self.max_overlap)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneApple {
    pub bbox: BoundingBox<f64>,
    pub properties: Properties,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub spec: SceneSpec,
    pub apples: Vec<SceneApple>,
    pub pixels: Vec<u8>,
}

impl Scene {
    pub fn to_pgm(&self) -> Pgm {
        Pgm {
            width: self.spec.size.width,
            height: self.spec.size.height,
            comments: vec![format!("synthetic scene seed {}", self.spec.seed)],
            data: self.pixels.clone(),
        }
    }

    pub fn boxes(&self) -> Vec<BoundingBox<f64>> {
        self.apples.iter().map(|a| a.bbox).collect()
    }

    /// Crown attention: 1 at cells whose centre lies in the crown ellipse.
    pub fn crown_attention(&self, image: ImageId, scale: Scale) -> AttentionMap {
        let mut map = AttentionMap::zeros(image, self.spec.size, scale);
        let inv = 1.0 / (*scale.numer() as f64 / *scale.denom() as f64);
        for r in 0..map.rows() {
            for c in 0..map.cols() {
                if self.spec.crown.contains((c as f64 + 0.5) * inv, (r as f64 + 0.5) * inv) {
                    map.set(c, r, 1.0);
                }
            }
        }
        map
    }
}

fn hash2(seed: u64, x: u64, y: u64) -> u64 {
    let mut z = seed ^ x.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ y.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn texture(seed: u64, x: u32, y: u32, cell: u32, amplitude: i32) -> i32 {
    let h = hash2(seed, (x / cell) as u64, (y / cell) as u64);
    (h % (2 * amplitude as u64 + 1)) as i32 - amplitude
}

fn place(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Vec<BoundingBox<f64>>> {
    let img = spec.size.as_box::<f64>();
    let c = spec.crown;
    let attempts = ATTEMPTS_PER_APPLE * spec.apples;
    let mut boxes: Vec<BoundingBox<f64>> = Vec::with_capacity(spec.apples);
    let mut tries = 0;
    while boxes.len() < spec.apples {
        if tries == attempts {
            return Err(Error::Packing { placed: boxes.len(), requested: spec.apples, attempts });
        }
        tries += 1;
        let (lo, hi) = spec.size_range;
        let d = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        // uniform point in the unit disc, stretched to the ellipse
        let r = rng.gen::<f64>().sqrt();
        let t = rng.gen::<f64>() * std::f64::consts::TAU;
        let (x, y) = (c.cx + r * t.cos() * c.rx, c.cy + r * t.sin() * c.ry);
        let b = BoundingBox::new((x - d / 2.0).round(), (y - d / 2.0).round(), d.round().max(1.0), d.round().max(1.0))?;
        if !img.contains(&b) || !c.contains_box(&b) {
            continue;
        }
        let crowded = boxes.iter().any(|o| {
            let smaller = b.area().min(o.area());
            b.intersection_area(o) / smaller > spec.max_overlap
        });
        if !crowded {
            boxes.push(b);
        }
    }
    Ok(boxes)
}

/// Renders one scene. The same spec always yields the same bytes.
pub fn synth_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let boxes = place(spec, &mut rng)?;
    let tones: Vec<i32> = boxes.iter().map(|_| rng.gen_range(170..=235)).collect();
    let (w, h) = (spec.size.width, spec.size.height);
    let tex_seed = rng.gen::<u64>();

    let mut pixels = vec![0u8; w as usize * h as usize];
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let v = if spec.crown.contains(fx, fy) {
                85 + texture(tex_seed, x, y, 6, 25) + texture(tex_seed ^ 1, x, y, 1, 6)
            } else {
                55 + texture(tex_seed ^ 2, x, y, 16, 20) + texture(tex_seed ^ 3, x, y, 1, 8)
            };
            pixels[(y * w + x) as usize] = v.clamp(0, 255) as u8;
        }
    }
    for (b, tone) in boxes.iter().zip(&tones) {
        let (cx, cy, rad) = (b.x() + b.w() / 2.0, b.y() + b.h() / 2.0, b.w() / 2.0);
        let (x0, y0) = (b.x() as u32, b.y() as u32);
        let (x1, y1) = (b.right().ceil() as u32, b.bottom().ceil() as u32);
        for y in y0..y1.min(h) {
            for x in x0..x1.min(w) {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let d = (dx * dx + dy * dy).sqrt();
                if d <= rad {
                    // light from the upper left
                    let shade = 1.0 - 0.2 * ((dx + dy) / (2.0 * rad) + 0.5).clamp(0.0, 1.0);
                    pixels[(y * w + x) as usize] = (*tone as f64 * shade).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }

    let apples = boxes
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let mut props = Properties::new();
            props.insert("size".into(), relative_size(b, spec.size));
            let occlusion = boxes
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, o)| b.intersection_area(o) / b.area())
                .fold(0.0f64, f64::max);
            props.insert("occlusion".into(), occlusion.min(1.0));
            let region: Vec<u8> = (b.y() as u32..b.bottom() as u32)
                .flat_map(|y| (b.x() as u32..b.right() as u32).map(move |x| (x, y)))
                .map(|(x, y)| pixels[(y * w + x) as usize])
                .collect();
            props.insert("brightness".into(), brightness(&region, 255).unwrap_or(0.0));
            SceneApple { bbox: *b, properties: props }
        })
        .collect();
    Ok(Scene { spec: spec.clone(), apples, pixels })
}

/// Renders `specs` into `dir`: `images/<id>.pgm`, crown attention maps
/// `attention/<id>.attn.pgm` and `manifest.json`. Image ids count from 1.
pub fn write_scenes(dir: &Path, specs: &[SceneSpec], split: Split) -> Result<DatasetIndex> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("attention"))?;
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let id = ImageId(i as u64 + 1);
        let scene = synth_scene(spec)?;
        let file_name = format!("images/{id}.pgm");
        pgm::write(&dir.join(&file_name), &scene.to_pgm())?;
        scene.crown_attention(id, DEFAULT_SCALE).save(&attention_path(&dir.join("attention"), id))?;
        images.push(ImageRecord { id, file_name, width: spec.size.width, height: spec.size.height, split });
        if split != Split::Unlabeled {
            for a in scene.apples {
                annotations.push(AnnotationRecord {
                    id: annotations.len() as u64 + 1,
                    image_id: id,
                    bbox: a.bbox,
                    properties: a.properties,
                });
            }
        }
    }
    let idx = DatasetIndex::new(dir.to_path_buf(), images, annotations)?;
    crate::dataset::save_dataset(&idx, &dir.join("manifest.json"))?;
    Ok(idx)
}
