//! Alpha shapes over 2-D point sets.
//!
//! The shape is the union of Delaunay triangles whose circumradius is at most
//! `alpha` (pixels). Its boundary is returned as closed rings: rings with
//! positive signed area are outer boundaries, rings with negative signed area
//! are holes.

use std::collections::{HashMap, HashSet};
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use spade::{DelaunayTriangulation, Point2, Triangulation};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Closed polygon rings in pixel coordinates, serialized as
/// `{"polygons": [[[x, y], ...], ...]}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PolygonSet<T> {
    pub polygons: Vec<Vec<[T; 2]>>,
}

impl<T: Scalar> PolygonSet<T> {
    pub fn empty() -> Self {
        Self { polygons: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.polygons.is_empty()
    }

    /// Shoelace area of one ring, positive for counter-clockwise rings in the
    /// `cross(b - a, c - a) > 0` sense.
    pub fn signed_ring_area(ring: &[[T; 2]]) -> T {
        let n = ring.len();
        let mut acc = T::zero();
        for i in 0..n {
            let [x0, y0] = ring[i];
            let [x1, y1] = ring[(i + 1) % n];
            acc = acc + (x0 * y1 - x1 * y0);
        }
        acc / T::lit(2.0)
    }

    /// Area of the filled region (outer rings minus holes).
    pub fn area(&self) -> T {
        self.polygons
            .iter()
            .fold(T::zero(), |a, r| a + Self::signed_ring_area(r))
    }

    /// Number of outer boundaries, i.e. connected filled components.
    pub fn components(&self) -> usize {
        self.polygons
            .iter()
            .filter(|r| Self::signed_ring_area(r) > T::zero())
            .count()
    }

    /// Non-zero winding test; points on an edge count as inside.
    pub fn contains(&self, p: [T; 2]) -> bool {
        let mut winding = 0i32;
        for ring in &self.polygons {
            let n = ring.len();
            for i in 0..n {
                let a = ring[i];
                let b = ring[(i + 1) % n];
                if on_segment(a, b, p) {
                    return true;
                }
                let cross = (b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1]);
                if a[1] <= p[1] {
                    if b[1] > p[1] && cross > T::zero() {
                        winding += 1;
                    }
                } else if b[1] <= p[1] && cross < T::zero() {
                    winding -= 1;
                }
            }
        }
        winding != 0
    }

    /// Axis-aligned rectangles as counter-clockwise rings.
    pub fn from_boxes(boxes: &[crate::geometry::BoundingBox<T>]) -> Self {
        Self {
            polygons: boxes
                .iter()
                .map(|b| {
                    // ccw in the cross-product sense: (x,y) (x,y+h) (x+w,y+h) (x+w,y)
                    vec![
                        [b.x(), b.y()],
                        [b.x(), b.bottom()],
                        [b.right(), b.bottom()],
                        [b.right(), b.y()],
                    ]
                })
                .collect(),
        }
    }
}

fn on_segment<T: Scalar>(a: [T; 2], b: [T; 2], p: [T; 2]) -> bool {
    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1]);
    cross == T::zero()
        && p[0] >= a[0].min(b[0])
        && p[0] <= a[0].max(b[0])
        && p[1] >= a[1].min(b[1])
        && p[1] <= a[1].max(b[1])
}

#[derive(Clone, Debug)]
pub struct AlphaShape<T> {
    pub shape: PolygonSet<T>,
    /// Input points that are not a vertex of any kept triangle.
    pub isolated_points: Vec<[T; 2]>,
    /// Kept triangles, counter-clockwise.
    pub triangles: Vec<[[T; 2]; 3]>,
}

pub fn circumradius(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    let d = |p: [f64; 2], q: [f64; 2]| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
    let twice_area = ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])).abs();
    if twice_area == 0.0 {
        return f64::INFINITY;
    }
    d(a, b) * d(b, c) * d(c, a) / (2.0 * twice_area)
}

/// Alpha shape of `points` with circumradius threshold `alpha` (may be infinite).
pub fn alpha_shape<T: Scalar>(points: &[[T; 2]], alpha: T) -> Result<AlphaShape<T>> {
    if !(alpha > T::zero()) {
        return Err(Error::Invalid(format!("alpha must be positive, got {alpha}")));
    }
    let pts: Vec<[f64; 2]> = points.iter().map(|p| [p[0].as_f64(), p[1].as_f64()]).collect();
    if pts.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::Invalid("non-finite point".into()));
    }
    if !has_three_non_collinear(&pts) {
        return Err(Error::DegenerateInput(format!(
            "{} points without three non-collinear",
            pts.len()
        )));
    }

    let tri: DelaunayTriangulation<Point2<f64>> = DelaunayTriangulation::bulk_load(
        pts.iter().map(|p| Point2::new(p[0], p[1])).collect(),
    )
    .map_err(|e| Error::DegenerateInput(format!("triangulation failed: {e:?}")))?;

    let alpha = alpha.as_f64();
    let mut kept: Vec<[usize; 3]> = Vec::new();
    let mut position: HashMap<usize, [f64; 2]> = HashMap::new();
    for face in tri.inner_faces() {
        let vs = face.vertices();
        let ids = vs.map(|v| v.fix().index());
        let ps = vs.map(|v| {
            let p = v.position();
            [p.x, p.y]
        });
        if circumradius(ps[0], ps[1], ps[2]) <= alpha {
            for (id, p) in ids.iter().zip(ps.iter()) {
                position.insert(*id, *p);
            }
            kept.push(ids);
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyShape { alpha });
    }

    let rings = trace_boundary(&kept, &position);
    let to_t = |p: [f64; 2]| [T::lit(p[0]), T::lit(p[1])];

    let used: HashSet<(u64, u64)> = position.values().map(|p| key(*p)).collect();
    let isolated_points = points
        .iter()
        .zip(&pts)
        .filter(|(_, p)| !used.contains(&key(**p)))
        .map(|(orig, _)| *orig)
        .collect();

    Ok(AlphaShape {
        shape: PolygonSet {
            polygons: rings
                .into_iter()
                .map(|r| r.into_iter().map(|v| to_t(position[&v])).collect())
                .collect(),
        },
        isolated_points,
        triangles: kept
            .iter()
            .map(|t| t.map(|v| to_t(position[&v])))
            .collect(),
    })
}

fn key(p: [f64; 2]) -> (u64, u64) {
    // +0.0 and -0.0 must collide
    ((p[0] + 0.0).to_bits(), (p[1] + 0.0).to_bits())
}

fn has_three_non_collinear(pts: &[[f64; 2]]) -> bool {
    let Some(&a) = pts.first() else { return false };
    let Some(&b) = pts.iter().find(|p| **p != a) else {
        return false;
    };
    pts.iter()
        .any(|c| (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]) != 0.0)
}

/// Chains the directed boundary edges of the kept triangles into closed rings.
///
/// At a vertex shared by several boundary loops (two components touching at a
/// point) the walk takes the first outgoing edge clockwise from the incoming
/// edge, which keeps every ring simple.
fn trace_boundary(kept: &[[usize; 3]], position: &HashMap<usize, [f64; 2]>) -> Vec<Vec<usize>> {
    let mut directed: HashSet<(usize, usize)> = HashSet::new();
    for t in kept {
        for i in 0..3 {
            directed.insert((t[i], t[(i + 1) % 3]));
        }
    }
    let mut boundary: Vec<(usize, usize)> = directed
        .iter()
        .copied()
        .filter(|&(a, b)| !directed.contains(&(b, a)))
        .collect();
    boundary.sort_unstable();

    let mut outgoing: HashMap<usize, Vec<usize>> = HashMap::new();
    for &(a, b) in &boundary {
        outgoing.entry(a).or_default().push(b);
    }

    let angle = |from: usize, to: usize| {
        let p = position[&from];
        let q = position[&to];
        (q[1] - p[1]).atan2(q[0] - p[0])
    };

    let mut used: HashSet<(usize, usize)> = HashSet::new();
    let mut rings = Vec::new();
    for &start in &boundary {
        if used.contains(&start) {
            continue;
        }
        let mut ring = vec![start.0];
        used.insert(start);
        let (mut prev, mut cur) = start;
        loop {
            let back = angle(cur, prev);
            let next = outgoing[&cur]
                .iter()
                .copied()
                .filter(|&n| (cur, n) == start || !used.contains(&(cur, n)))
                .min_by(|&m, &n| {
                    let cw = |t: usize| {
                        let d = (back - angle(cur, t)).rem_euclid(TAU);
                        if d == 0.0 { TAU } else { d }
                    };
                    cw(m).total_cmp(&cw(n))
                });
            match next {
                Some(n) if (cur, n) == start => break,
                Some(n) => {
                    ring.push(cur);
                    used.insert((cur, n));
                    prev = cur;
                    cur = n;
                }
                None => break,
            }
        }
        if ring.len() >= 3 {
            rings.push(ring);
        }
    }
    rings
}
