use crate::attention::{scaled_dim, AttentionMap, PolygonSet, Scale};
use crate::geometry::{ImageId, ImageSize};
use crate::scalar::Scalar;

/// Fills a map at `scale`: a cell is 1 iff its centre lies inside or on the
/// boundary of the polygon set (non-zero winding), else 0.
pub fn rasterize<T: Scalar>(
    shape: &PolygonSet<T>,
    size: ImageSize,
    scale: Scale,
    image: ImageId,
) -> AttentionMap {
    let mut map = AttentionMap::zeros(image, size, scale);
    let cols = scaled_dim(size.width, scale);
    let rows = scaled_dim(size.height, scale);
    let k = *scale.numer() as f64 / *scale.denom() as f64;

    // polygon vertices in map coordinates; cell (c, r) has centre (c + .5, r + .5)
    let rings: Vec<Vec<[f64; 2]>> = shape
        .polygons
        .iter()
        .map(|r| r.iter().map(|p| [p[0].as_f64() * k, p[1].as_f64() * k]).collect())
        .collect();

    let mut crossings: Vec<(f64, i32)> = Vec::new();
    let mut on_line: Vec<(f64, f64)> = Vec::new();
    for row in 0..rows {
        let yc = row as f64 + 0.5;
        crossings.clear();
        on_line.clear();
        for ring in &rings {
            let n = ring.len();
            for i in 0..n {
                let a = ring[i];
                let b = ring[(i + 1) % n];
                if a[1] == yc {
                    on_line.push((a[0], a[0]));
                }
                if a[1] == yc && b[1] == yc {
                    on_line.push((a[0].min(b[0]), a[0].max(b[0])));
                } else if (a[1] <= yc && yc < b[1]) || (b[1] <= yc && yc < a[1]) {
                    let x = a[0] + (yc - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                    let dir = if b[1] > a[1] { 1 } else { -1 };
                    crossings.push((x, dir));
                }
            }
        }
        crossings.sort_by(|p, q| p.0.total_cmp(&q.0));

        let mut fill = |lo: f64, hi: f64| {
            let first = (lo - 0.5).ceil().max(0.0);
            let last = (hi - 0.5).floor().min(cols as f64 - 1.0);
            if first > last {
                return;
            }
            for c in first as u32..=last as u32 {
                map.set(c, row, 1.0);
            }
        };
        let mut winding = 0;
        for pair in crossings.windows(2) {
            winding += pair[0].1;
            if winding != 0 {
                fill(pair[0].0, pair[1].0);
            }
        }
        // lone crossings still touch the boundary
        for &(x, _) in &crossings {
            fill(x, x);
        }
        for &(lo, hi) in &on_line {
            fill(lo, hi);
        }
    }
    map
}
