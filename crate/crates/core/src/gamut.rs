//! Convex gamut polygons as halfspace lists, with exact projection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::{rgb_pixel_to_xy, white_point_xy};

/// Tolerance for counting a color as outside a halfspace.
pub const GAMUT_TOL: f64 = 1e-9;

/// `a . y <= b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub a: Vec<f64>,
    pub b: f64,
}

impl Halfspace {
    /// Positive amount by which `y` violates the constraint, else 0.
    pub fn violation(&self, y: &[f64]) -> f64 {
        (self.a.iter().zip(y).map(|(a, v)| a * v).sum::<f64>() - self.b).max(0.0)
    }
}

/// A convex polygon in the plane, vertices counterclockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Gamut {
    vertices: Vec<[f64; 2]>,
    halfspaces: Vec<Halfspace>,
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

impl Gamut {
    pub fn from_vertices(mut vertices: Vec<[f64; 2]>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::DegenerateGamut(format!("{} vertices, need at least 3", vertices.len())));
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateGamut("non-finite vertex".into()));
        }
        let n = vertices.len();
        let area2: f64 = (0..n).map(|i| cross([0.0, 0.0], vertices[i], vertices[(i + 1) % n])).sum();
        let scale = vertices.iter().flatten().map(|v| v.abs()).fold(1.0, f64::max);
        if area2.abs() <= 1e-12 * scale * scale {
            return Err(Error::DegenerateGamut("vertices are collinear".into()));
        }
        if area2 < 0.0 {
            vertices.reverse();
        }
        for i in 0..n {
            let t = cross(vertices[i], vertices[(i + 1) % n], vertices[(i + 2) % n]);
            if t < 0.0 {
                return Err(Error::DegenerateGamut("polygon is not convex".into()));
            }
        }
        let halfspaces = (0..n)
            .filter_map(|i| {
                let (p, q) = (vertices[i], vertices[(i + 1) % n]);
                let (ex, ey) = (q[0] - p[0], q[1] - p[1]);
                let len = (ex * ex + ey * ey).sqrt();
                (len > 0.0).then(|| {
                    let a = vec![ey / len, -ex / len];
                    let b = a[0] * p[0] + a[1] * p[1];
                    Halfspace { a, b }
                })
            })
            .collect();
        Ok(Gamut { vertices, halfspaces })
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn halfspaces(&self) -> &[Halfspace] {
        &self.halfspaces
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        self.halfspaces.iter().all(|h| h.violation(p) <= GAMUT_TOL)
    }

    /// Closest point of the polygon to `p`.
    pub fn project(&self, p: [f64; 2]) -> [f64; 2] {
        if self.halfspaces.iter().all(|h| h.violation(&p) <= 0.0) {
            return p;
        }
        let n = self.vertices.len();
        let mut best = self.vertices[0];
        let mut best_d = f64::INFINITY;
        for i in 0..n {
            let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
            let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
            let len2 = ex * ex + ey * ey;
            let t = if len2 > 0.0 {
                (((p[0] - a[0]) * ex + (p[1] - a[1]) * ey) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let c = [a[0] + t * ex, a[1] + t * ey];
            let d = (c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        // pull onto the boundary line exactly so every halfspace holds
        for _ in 0..4 {
            let mut moved = false;
            for h in &self.halfspaces {
                let v = h.violation(&best);
                if v > 0.0 {
                    best[0] -= v * h.a[0];
                    best[1] -= v * h.a[1];
                    moved = true;
                }
            }
            if !moved {
                return best;
            }
        }
        let n = n as f64;
        let c = self.vertices.iter().fold([0.0, 0.0], |acc, v| [acc[0] + v[0] / n, acc[1] + v[1] / n]);
        let mut t = 1e-12;
        while self.halfspaces.iter().any(|h| h.violation(&best) > 0.0) && t < 1.0 {
            best = [best[0] + t * (c[0] - best[0]), best[1] + t * (c[1] - best[1])];
            t *= 10.0;
        }
        best
    }
}

/// Parses `x0,y0,x1,y1,...` into a polygon.
pub fn parse_gamut_polygon(spec: &str) -> Result<Gamut> {
    let values = spec
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Config(format!("bad gamut '{spec}': {e}")))?;
    if values.len() % 2 != 0 {
        return Err(Error::Config(format!("gamut '{spec}' has an odd number of coordinates")));
    }
    Gamut::from_vertices(values.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
}

/// Parses `x0,y0,x1,y1,...` into halfspaces `a . y <= b`.
pub fn parse_gamut(spec: &str) -> Result<Vec<Halfspace>> {
    Ok(parse_gamut_polygon(spec)?.halfspaces)
}

/// The sRGB primaries' chromaticity triangle shrunk halfway toward white.
pub fn default_gamut() -> Gamut {
    let w = white_point_xy();
    let verts = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
        .iter()
        .map(|rgb| {
            let p = rgb_pixel_to_xy(rgb);
            [w[0] + 0.5 * (p[0] - w[0]), w[1] + 0.5 * (p[1] - w[1])]
        })
        .collect();
    Gamut::from_vertices(verts).expect("sRGB triangle is non-degenerate")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_triangle() {
        let hs = parse_gamut("0,0,1,0,0,1").unwrap();
        assert_eq!(hs.len(), 3);
        let inside = |p: &[f64]| hs.iter().all(|h| h.violation(p) <= 0.0);
        assert!(inside(&[0.2, 0.2]));
        assert!(!inside(&[0.8, 0.8]));
    }

    #[test]
    fn clockwise_is_normalized() {
        let ccw = parse_gamut("0,0,1,0,0,1").unwrap();
        let cw = parse_gamut_polygon("0,1,1,0,0,0").unwrap();
        for h in cw.halfspaces() {
            assert!(ccw.iter().any(|g| g.a.iter().zip(&h.a).all(|(x, y)| (x - y).abs() < 1e-15) && (g.b - h.b).abs() < 1e-15));
        }
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(parse_gamut("0,0,1,1"), Err(Error::DegenerateGamut(_))));
        assert!(matches!(parse_gamut("0,0,1,1,2,2"), Err(Error::DegenerateGamut(_))));
        assert!(parse_gamut("0,0,1").is_err());
        assert!(parse_gamut("a,b,c,d,e,f").is_err());
    }

    #[test]
    fn default_gamut_contains_white() {
        let g = default_gamut();
        assert!(g.contains(&white_point_xy()));
        assert!(!g.contains(&rgb_pixel_to_xy(&[1.0, 0.0, 0.0])));
    }

    /// Point-in-triangle by barycentric coordinates.
    fn in_triangle(t: &[[f64; 2]], p: [f64; 2]) -> bool {
        let d = cross(t[0], t[1], t[2]);
        let l1 = cross(p, t[1], t[2]) / d;
        let l2 = cross(t[0], p, t[2]) / d;
        let l3 = 1.0 - l1 - l2;
        l1 >= 0.0 && l2 >= 0.0 && l3 >= 0.0
    }

    proptest! {
        #[test]
        fn halfspaces_agree_with_barycentric(x in -0.5f64..1.5, y in -0.5f64..1.5) {
            let g = parse_gamut_polygon("0.1,0.1,0.9,0.2,0.3,0.8").unwrap();
            let inside = g.halfspaces().iter().all(|h| h.violation(&[x, y]) <= 0.0);
            let bary = in_triangle(g.vertices(), [x, y]);
            // skip points within rounding distance of an edge
            let margin = g.halfspaces().iter().map(|h| (h.a[0] * x + h.a[1] * y - h.b).abs()).fold(f64::INFINITY, f64::min);
            prop_assume!(margin > 1e-12);
            prop_assert_eq!(inside, bary);
        }

        #[test]
        fn projection_is_feasible_and_nearest(x in -1.0f64..2.0, y in -1.0f64..2.0) {
            let g = default_gamut();
            let p = g.project([x, y]);
            prop_assert!(g.halfspaces().iter().all(|h| h.violation(&p) == 0.0));
            // no vertex or sampled edge point is closer
            let d = (p[0] - x).powi(2) + (p[1] - y).powi(2);
            let n = g.vertices().len();
            for i in 0..n {
                let (a, b) = (g.vertices()[i], g.vertices()[(i + 1) % n]);
                for k in 0..=50 {
                    let t = k as f64 / 50.0;
                    let c = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                    prop_assert!(d <= (c[0] - x).powi(2) + (c[1] - y).powi(2) + 1e-12);
                }
            }
        }
    }
}
