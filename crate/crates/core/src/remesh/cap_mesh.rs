use std::f64::consts::{PI, TAU};

use crate::error::{CapError, Result};
use crate::mesh::TriangleMesh;
use crate::projection::{cap_plane_unchecked, CapSpec};
use crate::remesh::delaunay::delaunay;
use crate::{Vec2, Vec3};

fn golden_angle() -> f64 {
    PI * (3.0 - 5f64.sqrt())
}

fn on_sphere(theta: f64, phi: f64) -> Vec3 {
    let s = theta.sin();
    Vec3::new(s * phi.cos(), s * phi.sin(), theta.cos())
}

/// Near-uniform triangulation of the cap `Z >= Z*` with about `target_count`
/// vertices: a golden-angle spiral, evenly spaced points on the boundary
/// circle, and a Delaunay triangulation in the stereographic plane.
pub fn cap_uniform_mesh(spec: &CapSpec, target_count: usize) -> Result<TriangleMesh> {
    if target_count < 16 {
        return Err(CapError::Argument(format!("cap mesh needs at least 16 points, got {target_count}")));
    }
    let area = TAU * (1.0 - spec.zstar);
    let spacing = (2.0 * area / (3f64.sqrt() * target_count as f64)).sqrt();
    let boundary_len = TAU * spec.theta_star.sin();
    let m = ((boundary_len / spacing).round() as usize).max(3);
    let n_spiral = target_count.saturating_sub(m).max(1);

    let mut pts: Vec<Vec3> = Vec::with_capacity(target_count);
    let ga = golden_angle();
    for i in 0..n_spiral {
        let z = 1.0 - (i as f64 + 0.5) / n_spiral as f64 * (1.0 - spec.zstar);
        let theta = z.clamp(-1.0, 1.0).acos();
        // Leave room for the boundary ring.
        if spec.theta_star - theta < 0.5 * spacing {
            continue;
        }
        pts.push(on_sphere(theta, i as f64 * ga));
    }
    for k in 0..m {
        let p = on_sphere(spec.theta_star, k as f64 * TAU / m as f64);
        // Keep the boundary exactly at Z*.
        pts.push(Vec3::new(p.x, p.y, spec.zstar));
    }
    for p in pts.iter_mut().rev().take(m) {
        let s = (1.0 - spec.zstar * spec.zstar).sqrt() / Vec2::new(p.x, p.y).norm();
        p.x *= s;
        p.y *= s;
    }
    let planar: Vec<Vec2> = pts.iter().map(cap_plane_unchecked).collect();
    let faces = delaunay(&planar)?;
    TriangleMesh::new(pts, faces)
}

/// Latitude/longitude grid on the cap with a fan at the pole. Returns the
/// mesh and each vertex's polar angle.
pub fn latlong_cap_mesh(spec: &CapSpec, n_theta: usize, n_phi: usize) -> Result<(TriangleMesh, Vec<f64>)> {
    if n_theta < 2 {
        return Err(CapError::Argument(format!("n_theta = {n_theta} must be at least 2")));
    }
    if n_phi < 3 {
        return Err(CapError::Argument(format!("n_phi = {n_phi} must be at least 3")));
    }
    let mut verts = vec![Vec3::z()];
    let mut theta = vec![0.0];
    for j in 1..=n_theta {
        let t = j as f64 * spec.theta_star / n_theta as f64;
        for l in 0..n_phi {
            verts.push(on_sphere(t, l as f64 * TAU / n_phi as f64));
            theta.push(t);
        }
    }
    let ring = |j: usize, l: usize| 1 + (j - 1) * n_phi + (l % n_phi);
    let mut faces = Vec::with_capacity(n_phi * (2 * n_theta - 1));
    for l in 0..n_phi {
        faces.push([0, ring(1, l), ring(1, l + 1)]);
    }
    for j in 1..n_theta {
        for l in 0..n_phi {
            let (a, b, c, d) = (ring(j, l), ring(j + 1, l), ring(j + 1, l + 1), ring(j, l + 1));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    Ok((TriangleMesh::new(verts, faces)?, theta))
}
