use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::CapMap;
use crate::error::{CapError, Result};
use crate::mesh::{TriangleLocator, TriangleMesh};
use crate::projection::cap_plane;
use crate::Vec3;

/// Largest fraction of snapped points tolerated in strict mode.
pub const MAX_SNAPPED_FRACTION: f64 = 0.01;

/// A cap mesh carried back onto the source surface.
#[derive(Debug, Clone)]
pub struct Pullback {
    pub mesh: TriangleMesh,
    /// Cap-mesh vertices that fell outside every planar triangle and were
    /// moved to the nearest one.
    pub snapped: Vec<usize>,
    /// Snapped vertices farther from the planar map than the gap between its
    /// boundary polygon and the rim circle.
    pub uncovered: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PullbackSummary {
    pub points: usize,
    pub snapped: usize,
    pub uncovered: usize,
}

impl Pullback {
    pub fn summary(&self) -> PullbackSummary {
        PullbackSummary {
            points: self.mesh.num_vertices(),
            snapped: self.snapped.len(),
            uncovered: self.uncovered.len(),
        }
    }
}

/// Maps every vertex of `cap_mesh` through the inverse of `cap`: projected to
/// the plane, located in the planar map of `surface`, and interpolated
/// barycentrically on the surface. Connectivity is kept.
///
/// Points between an open map's boundary polygon and the rim circle are
/// snapped but count as covered. More than 1% uncovered points is logged, or
/// an error when `strict` is set.
pub fn pullback(surface: &TriangleMesh, cap: &CapMap, cap_mesh: &TriangleMesh, strict: bool) -> Result<Pullback> {
    if cap.positions.len() != surface.num_vertices() || cap.planar.len() != surface.num_vertices() {
        return Err(CapError::Argument("cap map does not match the surface".into()));
    }
    let refilled = cap.refilled_faces();
    let p = &cap.planar.positions;
    let locator = TriangleLocator::new(
        surface
            .faces()
            .iter()
            .enumerate()
            .filter(|(f, _)| !refilled.contains(f))
            .map(|(f, t)| (f, t.map(|v| p[v]))),
    );
    let located = cap_mesh
        .vertices()
        .par_iter()
        .map(|x| {
            let q = cap_plane(&x.normalize())?;
            locator
                .locate(&q)
                .ok_or_else(|| CapError::Argument("planar map has no faces".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let gap = rim_gap(surface, cap);
    let verts = surface.vertices();
    let mut uncovered = Vec::new();
    let mut points = Vec::with_capacity(located.len());
    let mut snapped = Vec::new();
    for (i, loc) in located.iter().enumerate() {
        let t = surface.faces()[loc.face];
        points.push((0..3).map(|k| verts[t[k]] * loc.bary[k]).sum::<Vec3>());
        if loc.snapped {
            snapped.push(i);
            if loc.distance > gap {
                uncovered.push(i);
            }
        }
    }
    let fraction = uncovered.len() as f64 / located.len().max(1) as f64;
    if fraction > MAX_SNAPPED_FRACTION {
        let msg = format!(
            "{} of {} cap points lie outside the parameterized region",
            uncovered.len(),
            located.len()
        );
        if strict {
            return Err(CapError::Argument(msg));
        }
        log::warn!("{msg}");
    }
    Ok(Pullback {
        mesh: TriangleMesh::new_unchecked(points, cap_mesh.faces().to_vec()),
        snapped,
        uncovered,
    })
}

/// Largest distance from a point of the rim circle to the boundary polygon of
/// an open map, or 0 for closed maps.
fn rim_gap(surface: &TriangleMesh, cap: &CapMap) -> f64 {
    if !cap.refilled_faces().is_empty() {
        return 0.0;
    }
    let p = &cap.planar.positions;
    let r = cap.spec.radius;
    let gap = surface
        .edge_faces()
        .iter()
        .filter(|(_, fs)| fs.len() == 1)
        .map(|(&(a, b), _)| {
            let (x, y) = (p[a], p[b]);
            let d = y - x;
            let t = (-x.dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
            r - (x + d * t).norm()
        })
        .fold(0.0, f64::max);
    gap + 1e-9 * r
}
