//! Incremental Bowyer-Watson Delaunay triangulation of planar point sets.

use std::collections::HashMap;

use crate::error::{CapError, Result};
use crate::Vec2;

const NONE: usize = usize::MAX;

fn orient(a: &Vec2, b: &Vec2, c: &Vec2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Positive when `d` is strictly inside the circumcircle of the
/// counterclockwise triangle (a, b, c).
fn incircle(a: &Vec2, b: &Vec2, c: &Vec2, d: &Vec2) -> f64 {
    let (adx, ady) = (a.x - d.x, a.y - d.y);
    let (bdx, bdy) = (b.x - d.x, b.y - d.y);
    let (cdx, cdy) = (c.x - d.x, c.y - d.y);
    let ad = adx * adx + ady * ady;
    let bd = bdx * bdx + bdy * bdy;
    let cd = cdx * cdx + cdy * cdy;
    adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx)
}

struct Builder {
    pts: Vec<Vec2>,
    tris: Vec<[usize; 3]>,
    nbr: Vec<[usize; 3]>,
    alive: Vec<bool>,
    free: Vec<usize>,
    last: usize,
}

impl Builder {
    fn locate(&self, p: &Vec2) -> Result<usize> {
        let mut t = self.last;
        if !self.alive[t] {
            t = self.alive.iter().position(|&a| a).unwrap();
        }
        let mut steps = 0usize;
        'walk: loop {
            steps += 1;
            if steps > 4 * self.tris.len() + 16 {
                // Fall back to a scan if the walk cycles on near-degenerate input.
                return (0..self.tris.len())
                    .find(|&t| self.alive[t] && (0..3).all(|k| self.edge_orient(t, k, p) >= 0.0))
                    .ok_or_else(|| CapError::DegenerateGeometry {
                        face: 0,
                        message: "Delaunay point location failed".into(),
                    });
            }
            // Rotate the starting edge to avoid walking in circles.
            for j in 0..3 {
                let k = (j + steps) % 3;
                if self.edge_orient(t, k, p) < 0.0 && self.nbr[t][k] != NONE {
                    t = self.nbr[t][k];
                    continue 'walk;
                }
            }
            return Ok(t);
        }
    }

    fn edge_orient(&self, t: usize, k: usize, p: &Vec2) -> f64 {
        let v = self.tris[t];
        orient(&self.pts[v[(k + 1) % 3]], &self.pts[v[(k + 2) % 3]], p)
    }

    fn in_circle(&self, t: usize, p: &Vec2) -> bool {
        let [a, b, c] = self.tris[t];
        incircle(&self.pts[a], &self.pts[b], &self.pts[c], p) > 0.0
    }

    fn insert(&mut self, pi: usize) -> Result<()> {
        let p = self.pts[pi];
        let t0 = self.locate(&p)?;
        let mut bad = vec![t0];
        let mut is_bad: HashMap<usize, bool> = HashMap::from([(t0, true)]);
        let mut i = 0;
        while i < bad.len() {
            let t = bad[i];
            i += 1;
            for k in 0..3 {
                let n = self.nbr[t][k];
                if n == NONE || is_bad.contains_key(&n) {
                    continue;
                }
                let inside = self.in_circle(n, &p);
                is_bad.insert(n, inside);
                if inside {
                    bad.push(n);
                }
            }
        }
        // Boundary of the cavity: (a, b, outer neighbour, outer slot).
        let mut boundary = Vec::new();
        for &t in &bad {
            for k in 0..3 {
                let n = self.nbr[t][k];
                if n == NONE || !is_bad[&n] {
                    let v = self.tris[t];
                    let (a, b) = (v[(k + 1) % 3], v[(k + 2) % 3]);
                    let slot = if n == NONE {
                        NONE
                    } else {
                        (0..3).find(|&s| self.nbr[n][s] == t).unwrap()
                    };
                    boundary.push((a, b, n, slot));
                }
            }
        }
        for &t in &bad {
            self.alive[t] = false;
            self.free.push(t);
        }
        let mut by_start: HashMap<usize, usize> = HashMap::with_capacity(boundary.len());
        let mut created = Vec::with_capacity(boundary.len());
        for &(a, b, n, slot) in &boundary {
            if orient(&self.pts[a], &self.pts[b], &p) <= 0.0 {
                return Err(CapError::DegenerateGeometry {
                    face: 0,
                    message: format!("Delaunay cavity not star-shaped at point {pi} (duplicate or collinear points?)"),
                });
            }
            let t = match self.free.pop() {
                Some(t) => {
                    self.tris[t] = [a, b, pi];
                    self.nbr[t] = [NONE, NONE, n];
                    self.alive[t] = true;
                    t
                }
                None => {
                    self.tris.push([a, b, pi]);
                    self.nbr.push([NONE, NONE, n]);
                    self.alive.push(true);
                    self.tris.len() - 1
                }
            };
            if n != NONE {
                self.nbr[n][slot] = t;
            }
            by_start.insert(a, t);
            created.push(t);
        }
        for &t in &created {
            let next = by_start[&self.tris[t][1]];
            self.nbr[t][0] = next;
            self.nbr[next][1] = t;
        }
        self.last = created[0];
        Ok(())
    }
}

/// Delaunay triangulation of `points`, returned as counterclockwise index
/// triples covering the convex hull. Fails on duplicate points.
pub fn delaunay(points: &[Vec2]) -> Result<Vec<[usize; 3]>> {
    let n = points.len();
    if n < 3 {
        return Err(CapError::Argument("Delaunay triangulation needs at least 3 points".into()));
    }
    let mut lo = Vec2::repeat(f64::INFINITY);
    let mut hi = Vec2::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let c = (lo + hi) * 0.5;
    let ext = (hi - lo).max().max(1e-300);
    let big = 1e3 * ext;
    let mut pts = points.to_vec();
    pts.push(c + Vec2::new(-big, -big));
    pts.push(c + Vec2::new(big, -big));
    pts.push(c + Vec2::new(0.0, big));
    let mut b = Builder {
        pts,
        tris: vec![[n, n + 1, n + 2]],
        nbr: vec![[NONE; 3]],
        alive: vec![true],
        free: Vec::new(),
        last: 0,
    };
    // Insert in a snake order over a coarse grid so the walk stays short.
    let g = ((n as f64).sqrt().ceil() as usize).max(1);
    let cell = |p: &Vec2| {
        let i = (((p.y - lo.y) / ext * g as f64) as usize).min(g - 1);
        let j = (((p.x - lo.x) / ext * g as f64) as usize).min(g - 1);
        let j = if i.is_multiple_of(2) { j } else { g - 1 - j };
        (i, j)
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c2| {
        let (ka, kb) = (cell(&points[a]), cell(&points[c2]));
        ka.cmp(&kb).then_with(|| {
            let s = if ka.0 % 2 == 0 { 1.0 } else { -1.0 };
            (s * points[a].x).total_cmp(&(s * points[c2].x)).then(a.cmp(&c2))
        })
    });
    for &i in &order {
        b.insert(i)?;
    }
    let out: Vec<[usize; 3]> = (0..b.tris.len())
        .filter(|&t| b.alive[t] && b.tris[t].iter().all(|&v| v < n))
        .map(|t| b.tris[t])
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_with_center() {
        let pts = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
            Vec2::new(0.5, 0.4),
        ];
        let t = delaunay(&pts).unwrap();
        assert_eq!(t.len(), 4);
        let area: f64 = t.iter().map(|f| 0.5 * orient(&pts[f[0]], &pts[f[1]], &pts[f[2]])).sum();
        assert!((area - 1.0).abs() < 1e-14);
    }

    #[test]
    fn random_points_are_delaunay() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Vec2> = (0..800).map(|_| Vec2::new(rng.random(), rng.random())).collect();
        let tris = delaunay(&pts).unwrap();
        let mut area = 0.0;
        for t in &tris {
            let (a, b, c) = (&pts[t[0]], &pts[t[1]], &pts[t[2]]);
            assert!(orient(a, b, c) > 0.0);
            area += 0.5 * orient(a, b, c);
            for (i, p) in pts.iter().enumerate().step_by(13) {
                if !t.contains(&i) {
                    assert!(incircle(a, b, c, p) <= 1e-12);
                }
            }
        }
        // Euler: 2n - 2 - h triangles for n points with h on the hull.
        assert!(tris.len() < 2 * pts.len());
        assert!(area > 0.9 && area < 1.0);
    }

    #[test]
    fn circle_boundary_is_hull() {
        let m = 64;
        let mut pts: Vec<Vec2> = (0..m)
            .map(|k| {
                let a = k as f64 * std::f64::consts::TAU / m as f64;
                Vec2::new(a.cos(), a.sin())
            })
            .collect();
        pts.push(Vec2::new(0.01, -0.02));
        let tris = delaunay(&pts).unwrap();
        assert_eq!(tris.len(), 2 * pts.len() - 2 - m);
    }
}
