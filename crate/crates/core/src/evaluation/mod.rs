//! Detection quality metrics: greedy IoU matching, COCO-style AP/AR at 100
//! detections, and recall curves over annotation property bins.

mod bins;
mod plot;

pub use bins::{binned_ar, property_bins, Bin, BinCurve, BinPoint};
pub use plot::bin_curves_svg;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox, Detection, ImageId, ImageSize};
use crate::scalar::Scalar;

/// IoU thresholds 0.50:0.05:0.95.
pub const IOU_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

pub const MAX_DETS: usize = 100;

/// Recall sample points of the interpolated precision curve, `k * 0.01`.
pub fn recall_points() -> [f64; 101] {
    let mut r = [0.0; 101];
    for (k, v) in r.iter_mut().enumerate() {
        *v = k as f64 * 0.01;
    }
    r[100] = 1.0;
    r
}

/// Result of matching one image's detections against its ground truth.
/// Indices refer to the input slices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_dets: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
}

/// Input indices sorted by score descending, box lexicographic on ties.
pub fn rank_order<T: Scalar>(dets: &[Detection<T>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[a].rank_cmp(&dets[b]));
    order
}

/// Greedy matching in score order: each detection claims the unmatched ground
/// truth box with the highest IoU at or above `iou_thr` (lowest index on ties).
pub fn match_detections<T: Scalar>(
    dets: &[Detection<T>],
    gts: &[BoundingBox<T>],
    iou_thr: f64,
) -> Matching {
    let thr = T::lit(iou_thr);
    let mut taken = vec![false; gts.len()];
    let mut m = Matching::default();
    for d in rank_order(dets) {
        let mut best: Option<(usize, T)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let v = iou(&dets[d].bbox, gt);
            if v >= thr && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        match best {
            Some((g, _)) => {
                taken[g] = true;
                m.pairs.push((d, g));
            }
            None => m.unmatched_dets.push(d),
        }
    }
    m.unmatched_gts = (0..gts.len()).filter(|g| !taken[*g]).collect();
    m
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IouStat {
    pub iou: f64,
    /// Area under the 101-point interpolated precision curve.
    pub ap: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub ap: f64,
    pub ar: f64,
    pub per_iou: Vec<IouStat>,
    pub num_gt: usize,
    pub num_dets: usize,
}

/// Ranked detections and ground truth of one image.
type ImagePair<'a, T> = (Vec<Detection<T>>, &'a Vec<BoundingBox<T>>);

/// Top `max_dets` detections of one image, in rank order.
fn top_dets<T: Scalar>(dets: &[Detection<T>], max_dets: usize) -> Vec<Detection<T>> {
    rank_order(dets).into_iter().take(max_dets).map(|i| dets[i]).collect()
}

fn image_ids<A, B>(dets: &BTreeMap<ImageId, A>, gts: &BTreeMap<ImageId, B>) -> Vec<ImageId> {
    dets.keys().chain(gts.keys()).copied().collect::<BTreeSet<_>>().into_iter().collect()
}

/// Precision-curve area for ranked true/false positive flags over `num_gt`
/// ground truth boxes. The flags must already be in global score order.
fn interpolated_ap(tp_flags: &[bool], num_gt: usize) -> (f64, f64) {
    if num_gt == 0 || tp_flags.is_empty() {
        return (0.0, 0.0);
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut recall = Vec::with_capacity(tp_flags.len());
    let mut precision = Vec::with_capacity(tp_flags.len());
    for &hit in tp_flags {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let mut sum = 0.0;
    for r in recall_points() {
        let idx = recall.partition_point(|&v| v < r);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    (sum / 101.0, *recall.last().expect("non-empty"))
}

/// AP and AR over all images, averaged over [`IOU_THRESHOLDS`]. Images
/// without ground truth contribute only false positives; with no ground
/// truth at all both metrics are 0.
pub fn ap_ar<T: Scalar>(
    dets: &BTreeMap<ImageId, Vec<Detection<T>>>,
    gts: &BTreeMap<ImageId, Vec<BoundingBox<T>>>,
    max_dets: usize,
) -> EvalResult {
    let ids = image_ids(dets, gts);
    let empty_d: Vec<Detection<T>> = Vec::new();
    let empty_g: Vec<BoundingBox<T>> = Vec::new();
    let per_image: Vec<ImagePair<T>> = ids
        .iter()
        .map(|id| (top_dets(dets.get(id).unwrap_or(&empty_d), max_dets), gts.get(id).unwrap_or(&empty_g)))
        .collect();
    let num_gt: usize = per_image.iter().map(|(_, g)| g.len()).sum();
    let num_dets: usize = per_image.iter().map(|(d, _)| d.len()).sum();

    let per_iou: Vec<IouStat> = IOU_THRESHOLDS
        .iter()
        .map(|&thr| {
            // (score, tp) in image order, each image already ranked
            let mut flagged: Vec<(T, bool)> = Vec::with_capacity(num_dets);
            for (d, g) in &per_image {
                let m = match_detections(d, g, thr);
                let mut hit = vec![false; d.len()];
                for &(di, _) in &m.pairs {
                    hit[di] = true;
                }
                flagged.extend(d.iter().zip(hit).map(|(x, h)| (x.score(), h)));
            }
            flagged.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
            let flags: Vec<bool> = flagged.iter().map(|f| f.1).collect();
            let (ap, recall) = interpolated_ap(&flags, num_gt);
            IouStat { iou: thr, ap, recall }
        })
        .collect();

    let n = per_iou.len() as f64;
    EvalResult {
        ap: per_iou.iter().map(|s| s.ap).sum::<f64>() / n,
        ar: per_iou.iter().map(|s| s.recall).sum::<f64>() / n,
        per_iou,
        num_gt,
        num_dets,
    }
}

/// `sqrt(w h) / sqrt(W H)`.
pub fn relative_size<T: Scalar>(b: &BoundingBox<T>, img: ImageSize) -> f64 {
    (b.area().as_f64() / img.area() as f64).sqrt()
}

/// Mean intensity of a pixel region over `max_value`.
pub fn brightness(pixels: &[u8], max_value: u8) -> Result<f64> {
    if pixels.is_empty() {
        return Err(Error::Invalid("brightness of an empty region".into()));
    }
    if max_value == 0 {
        return Err(Error::Invalid("max value must be positive".into()));
    }
    let sum: u64 = pixels.iter().map(|&p| p as u64).sum();
    Ok(sum as f64 / pixels.len() as f64 / max_value as f64)
}

/// Per-annotation property scalars (e.g. `size`, `occlusion`, `brightness`).
pub type Properties = BTreeMap<String, f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct GtAnnotation<T> {
    pub bbox: BoundingBox<T>,
    pub properties: Properties,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruthSet<T> {
    pub images: BTreeMap<ImageId, Vec<GtAnnotation<T>>>,
}

impl<T: Scalar> GroundTruthSet<T> {
    pub fn boxes(&self) -> BTreeMap<ImageId, Vec<BoundingBox<T>>> {
        self.images
            .iter()
            .map(|(id, anns)| (*id, anns.iter().map(|a| a.bbox).collect()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.images.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
