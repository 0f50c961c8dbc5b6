use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{CapError, Result};
use crate::mesh::TriangleMesh;

/// Two adjacent faces to cut out and the quadrilateral they form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PunctureQuad {
    pub faces: [usize; 2],
    /// Quad corners in the order of the two faces' outer boundary.
    pub corners: [usize; 4],
    /// Longest over shortest side.
    pub side_ratio: f64,
    /// Longer over shorter diagonal.
    pub diagonal_ratio: f64,
    /// No pair met both thresholds; this is the best pair found.
    pub fallback: bool,
}

impl PunctureQuad {
    fn score(&self) -> f64 {
        self.side_ratio.max(self.diagonal_ratio)
    }
}

fn ratio(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(0.0, f64::max);
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    max / min
}

/// Quad of faces `f` and `g`, which share an edge.
fn quad(mesh: &TriangleMesh, f: usize, g: usize) -> Option<PunctureQuad> {
    let (tf, tg) = (mesh.faces()[f], mesh.faces()[g]);
    let k = (0..3).find(|&k| tg.contains(&tf[k]) && tg.contains(&tf[(k + 1) % 3]))?;
    let (a, b, c) = (tf[k], tf[(k + 1) % 3], tf[(k + 2) % 3]);
    let d = *tg.iter().find(|&&v| v != a && v != b)?;
    let p = mesh.vertices();
    let len = |i: usize, j: usize| (p[i] - p[j]).norm();
    Some(PunctureQuad {
        faces: [f, g],
        corners: [a, d, b, c],
        side_ratio: ratio(&[len(a, d), len(d, b), len(b, c), len(c, a)]),
        diagonal_ratio: ratio(&[len(a, b), len(c, d)]),
        fallback: false,
    })
}

/// Finds two adjacent faces near the bottom (lowest Z) whose quadrilateral is
/// close to a square. Pairs are scored in breadth-first order over faces
/// starting at those around the lowest vertex; the first pair within both
/// ratio thresholds wins. Otherwise the pair with the smallest larger ratio
/// is returned with `fallback` set.
pub fn find_puncture_quad(mesh: &TriangleMesh, max_side_ratio: f64, max_diagonal_ratio: f64) -> Result<PunctureQuad> {
    if mesh.num_faces() < 2 {
        return Err(CapError::Argument(format!("mesh has {} faces, need at least 2", mesh.num_faces())));
    }
    let bottom = (0..mesh.num_vertices())
        .min_by(|&i, &j| mesh.vertices()[i].z.total_cmp(&mesh.vertices()[j].z))
        .unwrap();
    let vf = mesh.vertex_faces();
    let ef = mesh.edge_faces();
    let neighbors = |f: usize| -> Vec<usize> {
        let t = mesh.faces()[f];
        let mut out: Vec<usize> = (0..3)
            .flat_map(|k| {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                ef.get(&(a.min(b), a.max(b))).cloned().unwrap_or_default()
            })
            .filter(|&g| g != f)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    };

    let mut seen = vec![false; mesh.num_faces()];
    let mut queue = VecDeque::new();
    let mut start = vf[bottom].clone();
    start.sort_unstable();
    for f in start {
        seen[f] = true;
        queue.push_back(f);
    }
    let mut scored = HashSet::new();
    let mut best: Option<PunctureQuad> = None;
    loop {
        let f = match queue.pop_front() {
            Some(f) => f,
            None => match seen.iter().position(|s| !s) {
                // Disconnected remainder.
                Some(f) => {
                    seen[f] = true;
                    f
                }
                None => break,
            },
        };
        for g in neighbors(f) {
            if !seen[g] {
                seen[g] = true;
                queue.push_back(g);
            }
            if !scored.insert((f.min(g), f.max(g))) {
                continue;
            }
            let Some(q) = quad(mesh, f, g) else { continue };
            if q.side_ratio <= max_side_ratio && q.diagonal_ratio <= max_diagonal_ratio {
                return Ok(q);
            }
            if best.as_ref().is_none_or(|b| q.score() < b.score()) {
                best = Some(q);
            }
        }
    }
    let mut q = best.ok_or_else(|| CapError::Argument("mesh has no pair of adjacent faces".into()))?;
    log::warn!(
        "no quadrilateral within ratio thresholds; using faces {:?} (side {:.3}, diagonal {:.3})",
        q.faces,
        q.side_ratio,
        q.diagonal_ratio
    );
    q.fallback = true;
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;
    use crate::Vec3;

    fn all_pairs_best(mesh: &TriangleMesh) -> f64 {
        let mut best = f64::INFINITY;
        for f in 0..mesh.num_faces() {
            for g in 0..mesh.num_faces() {
                if f == g {
                    continue;
                }
                let shared = mesh.faces()[f].iter().filter(|v| mesh.faces()[g].contains(v)).count();
                if shared == 2 {
                    let q = quad(mesh, f, g).unwrap();
                    best = best.min(q.score());
                }
            }
        }
        best
    }

    #[test]
    fn octahedron_square_at_bottom() {
        let m = shapes::octahedron();
        let q = find_puncture_quad(&m, 1.5, 1.5).unwrap();
        assert!(!q.fallback);
        assert!(q.side_ratio <= 2f64.sqrt() + 1e-12 && q.diagonal_ratio <= 2f64.sqrt() + 1e-12);
        let bottom = (0..6).min_by(|&i, &j| m.vertices()[i].z.total_cmp(&m.vertices()[j].z)).unwrap();
        assert!(q.faces.iter().any(|&f| m.faces()[f].contains(&bottom)));
        let mut c = q.corners.to_vec();
        c.sort_unstable();
        c.dedup();
        assert_eq!(c.len(), 4);
    }

    #[test]
    fn icosphere_pairs() {
        let m = shapes::icosphere(1);
        let q = find_puncture_quad(&m, 1.5, 1.5).unwrap();
        assert!(q.fallback);
        assert_eq!(q.score(), all_pairs_best(&m));
        for level in [2, 3] {
            let q = find_puncture_quad(&shapes::icosphere(level), 1.5, 1.5).unwrap();
            assert!(!q.fallback);
            assert!(q.side_ratio <= 1.5 && q.diagonal_ratio <= 1.5, "{q:?}");
        }
    }

    #[test]
    fn needle_falls_back() {
        let mut v: Vec<Vec3> = (0..3)
            .map(|k| {
                let t = k as f64 * std::f64::consts::TAU / 3.0;
                Vec3::new(t.cos(), t.sin(), 0.0)
            })
            .collect();
        v.push(Vec3::new(0.0, 0.0, 20.0));
        v.push(Vec3::new(0.0, 0.0, -20.0));
        let f = vec![[0, 1, 3], [1, 2, 3], [2, 0, 3], [1, 0, 4], [2, 1, 4], [0, 2, 4]];
        let m = TriangleMesh::new(v, f).unwrap();
        let q = find_puncture_quad(&m, 1.5, 1.5).unwrap();
        assert!(q.fallback);
        assert_eq!(q.score(), all_pairs_best(&m));
    }

    #[test]
    fn too_few_faces() {
        let m = TriangleMesh::new(
            vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(matches!(find_puncture_quad(&m, 1.5, 1.5), Err(CapError::Argument(_))));
    }
}
