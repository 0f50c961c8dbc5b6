use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CapError, Result};
use crate::kdtree::KdTree;
use crate::omt::sigma::sigma_moments;
use crate::{Vec2, Vec3};

/// Candidate neighbours examined before certification.
const NEIGHBOURS: usize = 12;

/// Positively oriented convex polygon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainPolygon {
    vertices: Vec<Vec2>,
}

impl DomainPolygon {
    /// Rejects polygons that are not strictly convex and counterclockwise
    /// (collinear runs are tolerated).
    pub fn new(vertices: Vec<Vec2>) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return Err(CapError::Argument(format!("domain polygon has {n} vertices")));
        }
        let scale = vertices.iter().map(|v| v.norm_squared()).fold(0.0, f64::max);
        let mut area = 0.0;
        for k in 0..n {
            let (a, b, c) = (vertices[k], vertices[(k + 1) % n], vertices[(k + 2) % n]);
            let turn = (b - a).x * (c - b).y - (b - a).y * (c - b).x;
            if turn < -1e-12 * scale {
                return Err(CapError::Argument(format!(
                    "domain polygon is not convex at vertex {}",
                    (k + 1) % n
                )));
            }
            area += a.x * b.y - a.y * b.x;
        }
        if !(area > 0.0) {
            return Err(CapError::Argument(
                "domain polygon must be counterclockwise with positive area".into(),
            ));
        }
        Ok(DomainPolygon { vertices })
    }

    /// Regular `n`-gon inscribed in the circle of radius `r`.
    pub fn regular(n: usize, r: f64) -> Result<Self> {
        let t = std::f64::consts::TAU / n.max(1) as f64;
        DomainPolygon::new((0..n).map(|k| r * Vec2::new((k as f64 * t).cos(), (k as f64 * t).sin())).collect())
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn mass(&self) -> f64 {
        sigma_moments(&self.vertices).0
    }

    pub fn scaled(&self, s: f64) -> DomainPolygon {
        DomainPolygon {
            vertices: self.vertices.iter().map(|v| v * s).collect(),
        }
    }

    /// Strictly inside, with a relative margin.
    pub fn contains(&self, p: &Vec2) -> bool {
        let n = self.vertices.len();
        (0..n).all(|k| {
            let (a, b) = (self.vertices[k], self.vertices[(k + 1) % n]);
            let e = b - a;
            e.x * (p.y - a.y) - e.y * (p.x - a.x) > 1e-12 * e.norm_squared()
        })
    }

    fn centroid(&self) -> Vec2 {
        self.vertices.iter().sum::<Vec2>() / self.vertices.len() as f64
    }
}

/// Convex cell with one label per edge: the neighbouring site across edge
/// `k` (from vertex k to k+1), or `None` on the domain boundary.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerCell {
    pub vertices: Vec<Vec2>,
    pub neighbors: Vec<Option<usize>>,
}

impl PowerCell {
    pub fn is_empty(&self) -> bool {
        self.vertices.len() < 3
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerDiagramState {
    pub sites: Vec<Vec2>,
    pub heights: Vec<f64>,
    pub cells: Vec<PowerCell>,
    /// Sigma-mass of each cell.
    pub masses: Vec<f64>,
    /// First sigma-moments `(int x sigma, int y sigma)` of each cell.
    pub moments: Vec<Vec2>,
}

impl PowerDiagramState {
    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Sigma-centroid of each cell; empty cells fall back to their site.
    pub fn centroids(&self) -> Vec<Vec2> {
        self.masses
            .iter()
            .zip(&self.moments)
            .zip(&self.sites)
            .map(|((m, m1), y)| if *m > 0.0 { m1 / *m } else { *y })
            .collect()
    }
}

/// Keeps the part of `cell` where `n . x <= c`; the new edge gets `label`.
pub(crate) fn clip(cell: &PowerCell, n: Vec2, c: f64, label: Option<usize>) -> PowerCell {
    let k = cell.vertices.len();
    let side: Vec<f64> = cell.vertices.iter().map(|v| n.dot(v) - c).collect();
    if side.iter().all(|&s| s <= 0.0) {
        return cell.clone();
    }
    let mut out = PowerCell::default();
    if side.iter().all(|&s| s > 0.0) {
        return out;
    }
    for i in 0..k {
        let j = (i + 1) % k;
        let (a, b) = (cell.vertices[i], cell.vertices[j]);
        let (sa, sb) = (side[i], side[j]);
        if sa <= 0.0 {
            out.vertices.push(a);
            if sb > 0.0 {
                out.neighbors.push(cell.neighbors[i]);
                out.vertices.push(a + (b - a) * (sa / (sa - sb)));
                out.neighbors.push(label);
            } else {
                out.neighbors.push(cell.neighbors[i]);
            }
        } else if sb <= 0.0 {
            out.vertices.push(a + (b - a) * (sa / (sa - sb)));
            out.neighbors.push(cell.neighbors[i]);
        }
    }
    if out.vertices.len() < 3 {
        return PowerCell::default();
    }
    out
}

/// Half-plane `pow_i <= pow_j` with `pow(x, y, h) = |x - y|^2 / 2 - h / 2`.
fn bisector(yi: &Vec2, hi: f64, yj: &Vec2, hj: f64) -> (Vec2, f64) {
    (yj - yi, 0.5 * (yj.norm_squared() - yi.norm_squared() + (hi - hj)))
}

/// `pow(x, y_i, h_i) - pow(x, y_j, h_j)`.
fn power_gap(x: &Vec2, yi: &Vec2, hi: f64, yj: &Vec2, hj: f64) -> f64 {
    0.5 * ((x - yi).norm_squared() - (x - yj).norm_squared()) - 0.5 * (hi - hj)
}

/// Power cells of the sites clipped to `omega`, with sigma masses and moments.
///
/// Sites are lifted to `(y, sqrt(H - h))` so that the power-nearest site of a
/// point is its Euclidean-nearest lifted site; candidates come from a kd-tree
/// and every cell vertex is then certified against its true nearest site.
pub fn power_diagram(sites: &[Vec2], heights: &[f64], omega: &DomainPolygon) -> Result<PowerDiagramState> {
    let n = sites.len();
    if heights.len() != n {
        return Err(CapError::Argument(format!("{n} sites but {} heights", heights.len())));
    }
    if n == 0 {
        return Err(CapError::Argument("power diagram needs at least one site".into()));
    }
    if sites.iter().any(|s| !s.iter().all(|c| c.is_finite())) || heights.iter().any(|h| !h.is_finite()) {
        return Err(CapError::Argument("non-finite site or height".into()));
    }
    let hmax = heights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lifted: Vec<Vec3> = sites
        .iter()
        .zip(heights)
        .map(|(y, h)| Vec3::new(y.x, y.y, (hmax - h).sqrt()))
        .collect();
    let plain = KdTree::new(sites.iter().map(|s| Vec3::new(s.x, s.y, 0.0)).collect());
    for (i, s) in sites.iter().enumerate() {
        let near = plain.knn(&Vec3::new(s.x, s.y, 0.0), 2);
        if let Some(&(j, d2)) = near.iter().find(|&&(j, _)| j != i) {
            if d2 == 0.0 {
                return Err(CapError::Argument(format!("sites {} and {} coincide", i.min(j), i.max(j))));
            }
        }
    }
    let tree = KdTree::new(lifted.clone());

    let om = omega.vertices();
    let (mut lo, mut hi) = (om[0], om[0]);
    for v in om {
        lo = lo.inf(v);
        hi = hi.sup(v);
    }
    let pad = (hi - lo).norm() + 1.0;
    let bbox = PowerCell {
        vertices: vec![
            Vec2::new(lo.x - pad, lo.y - pad),
            Vec2::new(hi.x + pad, lo.y - pad),
            Vec2::new(hi.x + pad, hi.y + pad),
            Vec2::new(lo.x - pad, hi.y + pad),
        ],
        neighbors: vec![None; 4],
    };

    let cells: Vec<PowerCell> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (yi, hi_) = (sites[i], heights[i]);
            let mut cell = bbox.clone();
            let mut used = vec![i];
            for (j, _) in tree.knn(&lifted[i], NEIGHBOURS + 1) {
                if j != i {
                    let (nrm, c) = bisector(&yi, hi_, &sites[j], heights[j]);
                    cell = clip(&cell, nrm, c, Some(j));
                    used.push(j);
                }
            }
            let k = om.len();
            for e in 0..k {
                let (a, b) = (om[e], om[(e + 1) % k]);
                let d = b - a;
                let nrm = Vec2::new(d.y, -d.x);
                cell = clip(&cell, nrm, nrm.dot(&a), None);
            }
            // Certify: every vertex must be power-closest to site i.
            loop {
                let mut violator = None;
                for v in &cell.vertices {
                    let (j, _) = tree.nearest(&Vec3::new(v.x, v.y, 0.0)).unwrap();
                    if j != i && !used.contains(&j) {
                        let gap = power_gap(v, &yi, hi_, &sites[j], heights[j]);
                        if gap > 1e-14 * (1.0 + v.norm_squared()) {
                            violator = Some(j);
                            break;
                        }
                    }
                }
                match violator {
                    None => break,
                    Some(j) => {
                        let (nrm, c) = bisector(&yi, hi_, &sites[j], heights[j]);
                        cell = clip(&cell, nrm, c, Some(j));
                        used.push(j);
                    }
                }
            }
            cell
        })
        .collect();
    let moments: Vec<(f64, Vec2)> = cells.par_iter().map(|c| sigma_moments(&c.vertices)).collect();
    Ok(PowerDiagramState {
        sites: sites.to_vec(),
        heights: heights.to_vec(),
        masses: moments.iter().map(|m| m.0).collect(),
        moments: moments.iter().map(|m| m.1).collect(),
        cells,
    })
}

/// Heights that turn the power diagram into the Voronoi diagram of the sites
/// contracted by `s` toward the centroid of the domain.
pub(crate) fn contraction_heights(sites: &[Vec2], omega: &DomainPolygon, s: f64) -> Vec<f64> {
    let c = omega.centroid();
    sites.iter().map(|y| (1.0 - s) * (y - c).norm_squared()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square() -> DomainPolygon {
        DomainPolygon::new(vec![
            Vec2::new(-0.5, -0.5),
            Vec2::new(0.5, -0.5),
            Vec2::new(0.5, 0.5),
            Vec2::new(-0.5, 0.5),
        ])
        .unwrap()
    }

    #[test]
    fn polygon_contract() {
        assert!(DomainPolygon::new(vec![Vec2::zeros(), Vec2::new(1.0, 0.0)]).is_err());
        let cw: Vec<Vec2> = square().vertices().iter().rev().cloned().collect();
        assert!(DomainPolygon::new(cw).is_err());
        let dart = vec![Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.0), Vec2::new(0.5, 0.5), Vec2::new(0.0, 2.0)];
        assert!(DomainPolygon::new(dart).is_err());
    }

    #[test]
    fn two_sites_split_by_bisector() {
        let s = [Vec2::new(-0.5, 0.0), Vec2::new(0.5, 0.0)];
        let d = power_diagram(&s, &[0.0, 0.0], &square()).unwrap();
        assert!((d.masses[0] - d.masses[1]).abs() < 1e-9);
        for c in &d.cells {
            assert!(c.vertices.iter().any(|v| v.x.abs() < 1e-15));
        }
        let d = power_diagram(&s, &[1.0, 0.0], &square()).unwrap();
        // Bisector moves from x = 0 to x = h / (2 d) = 0.5.
        for v in &d.cells[1].vertices {
            assert!(v.x >= 0.5 - 1e-12);
        }
        assert!(d.cells[1].is_empty() || d.masses[1].abs() < 1e-12);
        assert!((d.masses[0] - square().mass()).abs() < 1e-12);
        assert!(matches!(
            power_diagram(&[s[0], s[0]], &[0.0, 0.0], &square()),
            Err(CapError::Argument(_))
        ));
    }

    #[test]
    fn single_site_owns_domain() {
        let d = power_diagram(&[Vec2::new(0.1, 0.2)], &[0.3], &square()).unwrap();
        assert!((d.masses[0] - square().mass()).abs() < 1e-15);
    }

    fn brute_voronoi(sites: &[Vec2], omega: &DomainPolygon, i: usize) -> Vec<Vec2> {
        let om = omega.vertices();
        let mut cell = PowerCell {
            vertices: om.to_vec(),
            neighbors: vec![None; om.len()],
        };
        for j in 0..sites.len() {
            if j != i {
                let nrm = sites[j] - sites[i];
                cell = clip(&cell, nrm, 0.5 * (sites[j].norm_squared() - sites[i].norm_squared()), Some(j));
            }
        }
        cell.vertices
    }

    #[test]
    fn equal_heights_give_voronoi_and_mass_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let omega = DomainPolygon::regular(64, 1.5).unwrap();
        let sites: Vec<Vec2> = (0..300)
            .map(|_| Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let d = power_diagram(&sites, &vec![0.7; 300], &omega).unwrap();
        for i in 0..300 {
            let b = brute_voronoi(&sites, &omega, i);
            for v in &d.cells[i].vertices {
                assert!(b.iter().any(|w| (v - w).norm() < 1e-9), "cell {i}");
            }
            for w in &b {
                assert!(d.cells[i].vertices.iter().any(|v| (v - w).norm() < 1e-9), "cell {i}");
            }
        }
        assert!((d.total_mass() - omega.mass()).abs() <= 1e-9 * omega.mass());
    }

    #[test]
    fn gauge_invariance_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sites: Vec<Vec2> = (0..5)
            .map(|_| Vec2::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)))
            .collect();
        // Dyadic heights keep the shifted differences exact.
        let h: Vec<f64> = (0..5).map(|_| rng.random_range(-10..10) as f64 / 1024.0).collect();
        let a = power_diagram(&sites, &h, &square()).unwrap();
        let shifted: Vec<f64> = h.iter().map(|x| x + 0.25).collect();
        let b = power_diagram(&sites, &shifted, &square()).unwrap();
        assert_eq!(a.cells, b.cells);
        assert_eq!(a.masses, b.masses);
        assert_eq!(a.centroids(), b.centroids());
    }

    #[test]
    fn neighbour_labels_are_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let omega = DomainPolygon::regular(32, 1.0).unwrap();
        let sites: Vec<Vec2> = (0..200)
            .map(|_| Vec2::new(rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7)))
            .collect();
        let h: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..0.002)).collect();
        let d = power_diagram(&sites, &h, &omega).unwrap();
        for (i, c) in d.cells.iter().enumerate() {
            for j in c.neighbors.iter().flatten() {
                assert!(d.cells[*j].neighbors.contains(&Some(i)), "{i} -> {j}");
            }
        }
    }
}
