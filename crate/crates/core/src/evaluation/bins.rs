use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{match_detections, top_dets, GroundTruthSet, IOU_THRESHOLDS, MAX_DETS};
use crate::geometry::{Detection, ImageId};
use crate::scalar::Scalar;

/// A run of annotations, adjacent in property order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    /// `(image, annotation index)` of every member.
    pub members: Vec<(ImageId, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinPoint {
    pub range_lo: f64,
    pub range_hi: f64,
    pub count: usize,
    pub ar: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinCurve {
    pub property: String,
    pub bins: Vec<BinPoint>,
}

impl BinCurve {
    /// One row per bin: `range_lo,range_hi,count,ar`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("range_lo,range_hi,count,ar\n");
        for b in &self.bins {
            out.push_str(&format!("{},{},{},{}\n", b.range_lo, b.range_hi, b.count, b.ar));
        }
        out
    }
}

/// Sorts all annotations by `property` (stable, so equal values keep their
/// `(image, index)` order) and cuts them into `ceil(1 / bin_fraction)` bins of
/// equal count; the last bin takes the remainder. With fewer annotations than
/// bins every annotation gets its own bin.
pub fn property_bins<T: Scalar>(
    gt: &GroundTruthSet<T>,
    property: &str,
    bin_fraction: f64,
) -> Result<Vec<Bin>> {
    if !(bin_fraction > 0.0 && bin_fraction <= 1.0) {
        return Err(Error::Invalid(format!("bin fraction {bin_fraction} must be in (0, 1]")));
    }
    let mut keyed: Vec<(f64, (ImageId, usize))> = Vec::with_capacity(gt.len());
    for (id, anns) in &gt.images {
        for (i, a) in anns.iter().enumerate() {
            let v = *a
                .properties
                .get(property)
                .ok_or_else(|| Error::Property(property.to_string()))?;
            keyed.push((v, (*id, i)));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));

    let n = keyed.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let wanted = ((1.0 / bin_fraction) - 1e-9).ceil().max(1.0) as usize;
    let (bins, per) = if n < wanted { (n, 1) } else { (wanted, n / wanted) };
    Ok((0..bins)
        .map(|k| {
            let start = k * per;
            let end = if k + 1 == bins { n } else { start + per };
            let chunk = &keyed[start..end];
            Bin {
                lo: chunk[0].0,
                hi: chunk[chunk.len() - 1].0,
                members: chunk.iter().map(|c| c.1).collect(),
            }
        })
        .collect())
}

/// Recall per bin, averaged over the IoU thresholds. Matching runs on whole
/// images (top 100 detections each); bins only select which matched ground
/// truth boxes are counted.
pub fn binned_ar<T: Scalar>(
    dets: &BTreeMap<ImageId, Vec<Detection<T>>>,
    gt: &GroundTruthSet<T>,
    property: &str,
    bins: &[Bin],
) -> BinCurve {
    let boxes = gt.boxes();
    // matched[t][(image, gt index)]
    let mut matched: Vec<BTreeMap<(ImageId, usize), bool>> = Vec::with_capacity(IOU_THRESHOLDS.len());
    for &thr in &IOU_THRESHOLDS {
        let mut hits = BTreeMap::new();
        for (id, gts) in &boxes {
            let top = dets.get(id).map(|d| top_dets(d, MAX_DETS)).unwrap_or_default();
            let m = match_detections(&top, gts, thr);
            for &(_, g) in &m.pairs {
                hits.insert((*id, g), true);
            }
        }
        matched.push(hits);
    }
    BinCurve {
        property: property.to_string(),
        bins: bins
            .iter()
            .map(|bin| {
                let count = bin.members.len();
                let ar = if count == 0 {
                    0.0
                } else {
                    matched
                        .iter()
                        .map(|hits| bin.members.iter().filter(|m| hits.contains_key(m)).count() as f64 / count as f64)
                        .sum::<f64>()
                        / IOU_THRESHOLDS.len() as f64
                };
                BinPoint { range_lo: bin.lo, range_hi: bin.hi, count, ar }
            })
            .collect(),
    }
}
