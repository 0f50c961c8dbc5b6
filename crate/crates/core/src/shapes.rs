//! Synthetic test surfaces: caps, spheres, blobs, disks and squares.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CapError, Result};
use crate::mesh::{rotation_to_z, TriangleMesh};
use crate::projection::{stereographic_project, CapSpec};
use crate::remesh::{cap_uniform_mesh, delaunay};
use crate::{Vec2, Vec3};

fn build(verts: Vec<Vec3>, faces: Vec<[usize; 3]>) -> TriangleMesh {
    TriangleMesh::new(verts, faces).expect("generator produced an invalid mesh")
}

pub fn regular_tetrahedron(edge: f64) -> TriangleMesh {
    let s = edge / (2.0 * 2f64.sqrt());
    let v = vec![
        Vec3::new(1.0, 1.0, 1.0) * s,
        Vec3::new(1.0, -1.0, -1.0) * s,
        Vec3::new(-1.0, 1.0, -1.0) * s,
        Vec3::new(-1.0, -1.0, 1.0) * s,
    ];
    build(v, vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
}

pub fn octahedron() -> TriangleMesh {
    let v = vec![Vec3::x(), Vec3::y(), -Vec3::x(), -Vec3::y(), Vec3::z(), -Vec3::z()];
    let mut f = Vec::new();
    for k in 0..4 {
        f.push([k, (k + 1) % 4, 4]);
        f.push([(k + 1) % 4, k, 5]);
    }
    build(v, f)
}

/// Unit icosphere; `level` 3 has 642 vertices.
pub fn icosphere(level: usize) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut f: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, v: &mut Vec<Vec3>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                v.push(((v[a] + v[b]) * 0.5).normalize());
                v.len() - 1
            })
        };
        let mut nf = Vec::with_capacity(f.len() * 4);
        for &[a, b, c] in &f {
            let ab = midpoint(a, b, &mut v);
            let bc = midpoint(b, c, &mut v);
            let ca = midpoint(c, a, &mut v);
            nf.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = nf;
    }
    build(v, f)
}

/// Outward-orient a face of a surface that is star-shaped about the origin.
fn outward(v: &[Vec3], t: [usize; 3]) -> [usize; 3] {
    let n = (v[t[1]] - v[t[0]]).cross(&(v[t[2]] - v[t[0]]));
    if n.dot(&(v[t[0]] + v[t[1]] + v[t[2]])) >= 0.0 {
        t
    } else {
        [t[0], t[2], t[1]]
    }
}

/// Closed triangulation of `n` Fibonacci-spiral points on the unit sphere
/// (spherical Delaunay via stereographic projection).
pub fn fibonacci_sphere(n: usize) -> Result<TriangleMesh> {
    if n < 8 {
        return Err(CapError::Argument(format!("sphere needs at least 8 points, got {n}")));
    }
    let ga = PI * (3.0 - 5f64.sqrt());
    let pts: Vec<Vec3> = (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let s = (1.0 - z * z).sqrt();
            let a = i as f64 * ga;
            Vec3::new(s * a.cos(), s * a.sin(), z)
        })
        .collect();
    // Project from point 0 so the plane triangulation plus a fan closes the sphere.
    let rot = rotation_to_z(&pts[0]);
    let planar: Vec<Vec2> = pts[1..]
        .iter()
        .map(|p| {
            let q = rot * p;
            stereographic_project(&(q / q.norm()))
        })
        .collect::<Result<_>>()?;
    let tris = delaunay(&planar)?;
    let mut faces: Vec<[usize; 3]> = Vec::with_capacity(2 * n);
    let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
    for t in &tris {
        let t = [t[0] + 1, t[1] + 1, t[2] + 1];
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            *edge_count.entry((a.min(b), a.max(b))).or_default() += 1;
        }
        faces.push(outward(&pts, t));
    }
    let mut hull: Vec<(usize, usize)> = edge_count.into_iter().filter(|&(_, c)| c == 1).map(|(e, _)| e).collect();
    hull.sort_unstable();
    for (a, b) in hull {
        faces.push(outward(&pts, [a, b, 0]));
    }
    TriangleMesh::new(pts, faces)
}

/// Radially perturbs a sphere by a sum of smooth bumps with random centres.
fn bump_field(seed: u64, count: usize, amplitude: f64, sharpness: f64) -> impl Fn(&Vec3) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bumps: Vec<(Vec3, f64)> = (0..count)
        .map(|_| {
            let z: f64 = rng.random_range(-1.0..1.0);
            let a: f64 = rng.random_range(0.0..TAU);
            let s = (1.0 - z * z).sqrt();
            let h: f64 = rng.random_range(-1.0..1.0);
            (Vec3::new(s * a.cos(), s * a.sin(), z), amplitude * h)
        })
        .collect();
    move |p: &Vec3| {
        let u = p.normalize();
        1.0 + bumps.iter().map(|(c, h)| h * (-sharpness * (1.0 - u.dot(c))).exp()).sum::<f64>()
    }
}

/// Smooth genus-0 blob with about `n` vertices.
pub fn blob(seed: u64, n: usize) -> TriangleMesh {
    let r = bump_field(seed, 6, 0.25, 2.0);
    let s = fibonacci_sphere(n).expect("valid point count");
    s.map_vertices(|p| p * r(p)).expect("star-shaped perturbation keeps faces valid")
}

/// Sphere with many small bumps.
pub fn bumpy_sphere(seed: u64, n: usize) -> TriangleMesh {
    let r = bump_field(seed, 24, 0.08, 12.0);
    let s = fibonacci_sphere(n).expect("valid point count");
    s.map_vertices(|p| p * r(p)).expect("star-shaped perturbation keeps faces valid")
}

/// Ellipsoid with semi-axes (a, b, c) from a Fibonacci sphere.
pub fn ellipsoid(a: f64, b: f64, c: f64, n: usize) -> TriangleMesh {
    let s = fibonacci_sphere(n).expect("valid point count");
    s.map_vertices(|p| Vec3::new(a * p.x, b * p.y, c * p.z)).expect("positive axes")
}

/// Triangulated cap of the unit sphere around +Z with polar half-angle `half_angle`.
pub fn geodesic_cap(half_angle: f64, n: usize) -> Result<TriangleMesh> {
    if !(half_angle > 0.0 && half_angle < PI) {
        return Err(CapError::Argument(format!("half-angle {half_angle} must lie in (0, pi)")));
    }
    cap_uniform_mesh(&CapSpec::from_zstar(half_angle.cos())?, n)
}

/// Geodesic cap with its Z coordinates scaled by `stretch`.
pub fn stretched_cap(half_angle: f64, n: usize, stretch: f64) -> Result<TriangleMesh> {
    if !(stretch > 0.0) {
        return Err(CapError::Argument(format!("stretch {stretch} must be positive")));
    }
    geodesic_cap(half_angle, n)?.map_vertices(|p| Vec3::new(p.x, p.y, stretch * p.z))
}

/// Planar disk in Z = 0 made of `rings` concentric rings (ring k has 6k vertices).
pub fn flat_disk(rings: usize, radius: f64) -> TriangleMesh {
    let mut v = vec![Vec3::zeros()];
    let mut starts = vec![0usize];
    for k in 1..=rings {
        starts.push(v.len());
        let m = 6 * k;
        for j in 0..m {
            let a = j as f64 * TAU / m as f64;
            let r = radius * k as f64 / rings as f64;
            v.push(Vec3::new(r * a.cos(), r * a.sin(), 0.0));
        }
    }
    let mut f = Vec::new();
    for k in 1..=rings {
        let (m_in, m_out) = (if k == 1 { 1 } else { 6 * (k - 1) }, 6 * k);
        let inner = |i: usize| starts[k - 1] + i % m_in;
        let outer = |j: usize| starts[k] + j % m_out;
        if k == 1 {
            for j in 0..m_out {
                f.push([0, outer(j), outer(j + 1)]);
            }
            continue;
        }
        let (mut i, mut j) = (0, 0);
        while i < m_in || j < m_out {
            let ai = (i + 1) as f64 / m_in as f64;
            let aj = (j + 1) as f64 / m_out as f64;
            if j < m_out && (i == m_in || aj <= ai) {
                f.push([inner(i), outer(j), outer(j + 1)]);
                j += 1;
            } else {
                f.push([inner(i), outer(j), inner(i + 1)]);
                i += 1;
            }
        }
    }
    build(v, f)
}

/// Regular `n` x `n` grid on the square [-size/2, size/2]^2 in Z = 0.
pub fn flat_square_grid(n: usize, size: f64) -> TriangleMesh {
    let mut v = Vec::with_capacity((n + 1) * (n + 1));
    for i in 0..=n {
        for j in 0..=n {
            v.push(Vec3::new(
                size * (j as f64 / n as f64 - 0.5),
                size * (i as f64 / n as f64 - 0.5),
                0.0,
            ));
        }
    }
    let id = |i: usize, j: usize| i * (n + 1) + j;
    let mut f = Vec::with_capacity(2 * n * n);
    for i in 0..n {
        for j in 0..n {
            f.push([id(i, j), id(i, j + 1), id(i + 1, j + 1)]);
            f.push([id(i, j), id(i + 1, j + 1), id(i + 1, j)]);
        }
    }
    build(v, f)
}

/// Unit square in Z = 0 whose boundary consists of the 4 corners only:
/// interior points on a slightly jittered grid, Delaunay-triangulated.
pub fn flat_square_corners(n: usize) -> TriangleMesh {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut pts = vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(1.0, 1.0), Vec2::new(0.0, 1.0)];
    let h = 1.0 / n as f64;
    for i in 1..n {
        for j in 1..n {
            let jx: f64 = rng.random_range(-0.05..0.05);
            let jy: f64 = rng.random_range(-0.05..0.05);
            pts.push(Vec2::new((j as f64 + jx) * h, (i as f64 + jy) * h));
        }
    }
    let tris = delaunay(&pts).expect("distinct points");
    build(pts.iter().map(|p| Vec3::new(p.x, p.y, 0.0)).collect(), tris)
}

/// Torus around the Z axis (genus 1; used to exercise topology checks).
pub fn torus(major: f64, minor: f64, nu: usize, nv: usize) -> TriangleMesh {
    let mut v = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = i as f64 * TAU / nu as f64;
        for j in 0..nv {
            let w = j as f64 * TAU / nv as f64;
            let r = major + minor * w.cos();
            v.push(Vec3::new(r * u.cos(), r * u.sin(), minor * w.sin()));
        }
    }
    let id = |i: usize, j: usize| (i % nu) * nv + (j % nv);
    let mut f = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            f.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            f.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    build(v, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::SurfaceKind;

    #[test]
    fn closed_generators_are_spheres() {
        for m in [
            icosphere(2),
            octahedron(),
            regular_tetrahedron(1.0),
            blob(1, 2000),
            bumpy_sphere(7, 1500),
        ] {
            assert_eq!(m.validate_topology().unwrap().kind, SurfaceKind::Closed);
        }
        assert_eq!(blob(1, 2000).num_vertices(), 2000);
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(bumpy_sphere(7, 800), bumpy_sphere(7, 800));
        assert_ne!(bumpy_sphere(7, 800), bumpy_sphere(8, 800));
    }

    #[test]
    fn open_generators_are_disks() {
        let m = flat_square_corners(12);
        let t = m.validate_topology().unwrap();
        assert_eq!(t.boundary.unwrap().len(), 4);
        assert_eq!(flat_disk(5, 1.0).validate_topology().unwrap().kind, SurfaceKind::Open);
        assert_eq!(flat_square_grid(4, 1.0).validate_topology().unwrap().kind, SurfaceKind::Open);
        let cap = geodesic_cap(PI / 3.0, 1000).unwrap();
        assert_eq!(cap.validate_topology().unwrap().kind, SurfaceKind::Open);
    }
}
