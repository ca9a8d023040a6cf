use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convex polygon with counterclockwise vertices and no collinear vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainHull {
    pub vertices: Vec<[f64; 2]>,
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Andrew's monotone chain.
pub fn convex_hull(points: &[[f64; 2]]) -> Result<DomainHull> {
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::input("hull points must be finite"));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return Err(Error::DegenerateGeometry("convex hull needs at least 3 distinct points".into()));
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    if hull.len() < 3 {
        return Err(Error::DegenerateGeometry("points are collinear".into()));
    }
    Ok(DomainHull { vertices: hull })
}

/// Whether `p` lies inside the hull or within `slack` of its boundary.
pub fn point_in_hull(hull: &DomainHull, p: [f64; 2], slack: f64) -> bool {
    let v = &hull.vertices;
    (0..v.len()).all(|i| {
        let (a, b) = (v[i], v[(i + 1) % v.len()]);
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        cross(a, b, p) >= -slack * len
    })
}

fn project_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> [f64; 2] {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0);
    [a[0] + t * d[0], a[1] + t * d[1]]
}

/// Euclidean projection onto the hull: identity inside, nearest boundary point outside.
pub fn hull_project(hull: &DomainHull, p: [f64; 2]) -> [f64; 2] {
    // A hair of slack keeps projected boundary points fixed under a second projection.
    if point_in_hull(hull, p, 1e-12) {
        return p;
    }
    let v = &hull.vertices;
    let mut best = v[0];
    let mut best_d = f64::INFINITY;
    for i in 0..v.len() {
        let q = project_segment(v[i], v[(i + 1) % v.len()], p);
        let d = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
        if d < best_d {
            best_d = d;
            best = q;
        }
    }
    best
}
