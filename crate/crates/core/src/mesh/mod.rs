//! Indexed triangle meshes: construction-time validation, per-face and
//! per-vertex geometry, topology classification and axis alignment.

mod bvh;
mod io;

pub use bvh::{closest_point_on_triangle, ClosestPoint, Location, SurfaceIndex, TriangleLocator};
pub use io::{format_mesh, load_mesh, load_mesh_parts, load_ply_scalar, parse_mesh, save_mesh, save_mesh_with_scalar, MeshFormat};

use std::collections::HashMap;

use nalgebra::{Matrix3, Rotation3, SymmetricEigen};

use crate::error::{CapError, Result};
use crate::Vec3;

/// Relative degenerate-area threshold; scaled by the squared bounding-box diagonal.
pub const DEGENERATE_AREA_FACTOR: f64 = 1e-12;

/// Triangle surface with consistently oriented faces.
///
/// Immutable after construction. Faces are counterclockwise with respect to
/// the outward normal.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    /// Builds a mesh, rejecting out-of-range or repeated indices, degenerate
    /// faces, non-manifold edges and inconsistent orientation.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (f, tri) in faces.iter().enumerate() {
            if tri.iter().any(|&v| v >= n) {
                return Err(CapError::Topology(format!("face {f} references a vertex outside 0..{n}")));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(CapError::Topology(format!("face {f} repeats a vertex")));
            }
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(CapError::Argument("non-finite vertex coordinate".into()));
        }
        let mesh = TriangleMesh { vertices, faces };
        let eps = mesh.degenerate_area_threshold();
        for f in 0..mesh.faces.len() {
            let a = mesh.face_area(f);
            if a < eps {
                return Err(CapError::DegenerateGeometry {
                    face: f,
                    message: format!("area {a:.3e} below threshold {eps:.3e}"),
                });
            }
        }
        mesh.check_edges()?;
        Ok(mesh)
    }

    /// Skips validation. Meant for outputs that keep a known connectivity but
    /// may contain degenerate faces, such as reconstructions.
    pub fn new_unchecked(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Self {
        TriangleMesh { vertices, faces }
    }

    fn check_edges(&self) -> Result<()> {
        let mut directed: HashMap<(usize, usize), usize> = HashMap::with_capacity(self.faces.len() * 3);
        for (f, tri) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let e = (tri[k], tri[(k + 1) % 3]);
                if let Some(other) = directed.insert(e, f) {
                    return Err(CapError::Topology(format!(
                        "directed edge ({}, {}) used by faces {other} and {f}: inconsistent orientation or non-manifold edge",
                        e.0, e.1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn face_corners(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.face_corners(f);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Unnormalized face normal (length = 2 * area).
    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.face_corners(f);
        (b - a).cross(&(c - a))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        if self.vertices.is_empty() {
            return 0.0;
        }
        let (lo, hi) = self.bounding_box();
        (hi - lo).norm()
    }

    pub fn degenerate_area_threshold(&self) -> f64 {
        DEGENERATE_AREA_FACTOR * self.bbox_diagonal().powi(2)
    }

    /// Area-weighted centroid of the surface.
    pub fn area_centroid(&self) -> Vec3 {
        let mut acc = Vec3::zeros();
        let mut total = 0.0;
        for f in 0..self.faces.len() {
            let [a, b, c] = self.face_corners(f);
            let w = self.face_area(f);
            acc += w * (a + b + c) / 3.0;
            total += w;
        }
        acc / total
    }

    /// Returns a copy with every vertex transformed by `map`. Fails if the
    /// transform makes a face degenerate.
    pub fn map_vertices(&self, map: impl Fn(&Vec3) -> Vec3) -> Result<TriangleMesh> {
        TriangleMesh::new(self.vertices.iter().map(map).collect(), self.faces.clone())
    }

    /// Copy without the listed faces. Vertex indices are preserved, so
    /// vertices used only by dropped faces stay in the list unreferenced.
    pub fn without_faces(&self, drop: &[usize]) -> Result<TriangleMesh> {
        let faces = self
            .faces
            .iter()
            .enumerate()
            .filter(|(f, _)| !drop.contains(f))
            .map(|(_, t)| *t)
            .collect();
        TriangleMesh::new(self.vertices.clone(), faces)
    }

    /// Per-vertex lists of incident faces.
    pub fn vertex_faces(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.vertices.len()];
        for (f, tri) in self.faces.iter().enumerate() {
            for &v in tri {
                out[v].push(f);
            }
        }
        out
    }

    /// Map from an undirected edge (min, max) to its one or two faces.
    pub fn edge_faces(&self) -> HashMap<(usize, usize), Vec<usize>> {
        let mut map: HashMap<(usize, usize), Vec<usize>> = HashMap::with_capacity(self.faces.len() * 2);
        for (f, tri) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                map.entry((a.min(b), a.max(b))).or_default().push(f);
            }
        }
        map
    }

    /// Sorted vertex adjacency lists.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.vertices.len()];
        for tri in &self.faces {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                out[a].push(b);
                out[b].push(a);
            }
        }
        for list in &mut out {
            list.sort_unstable();
            list.dedup();
        }
        out
    }

    /// Vertex areas: one third of the incident face areas.
    pub fn vertex_areas(&self) -> VertexAreaField {
        let mut areas = vec![0.0; self.vertices.len()];
        for f in 0..self.faces.len() {
            let a = self.face_area(f) / 3.0;
            for &v in &self.faces[f] {
                areas[v] += a;
            }
        }
        VertexAreaField(areas)
    }

    /// Face areas and corner angles.
    pub fn face_geometry(&self) -> Result<FaceGeometry> {
        let eps = self.degenerate_area_threshold();
        let mut areas = Vec::with_capacity(self.faces.len());
        let mut angles = Vec::with_capacity(self.faces.len());
        for f in 0..self.faces.len() {
            let [a, b, c] = self.face_corners(f);
            let area = 0.5 * (b - a).cross(&(c - a)).norm();
            if area < eps || area == 0.0 {
                return Err(CapError::DegenerateGeometry {
                    face: f,
                    message: format!("area {area:.3e}"),
                });
            }
            areas.push(area);
            angles.push(triangle_angles(&a, &b, &c));
        }
        Ok(FaceGeometry { areas, angles })
    }

    /// Classifies the mesh as a topological disk or sphere.
    pub fn validate_topology(&self) -> Result<Topology> {
        let v_used = {
            let mut used = vec![false; self.vertices.len()];
            for tri in &self.faces {
                for &v in tri {
                    used[v] = true;
                }
            }
            used.iter().filter(|&&u| u).count()
        };
        if self.faces.is_empty() {
            return Err(CapError::Topology("mesh has no faces".into()));
        }
        if self.components() != 1 {
            return Err(CapError::Topology(format!(
                "mesh has {} connected components; expected 1",
                self.components()
            )));
        }
        let edges = self.edge_faces();
        let chi = v_used as i64 - edges.len() as i64 + self.faces.len() as i64;

        // Boundary half-edges a -> b where the twin b -> a is missing.
        let mut next: HashMap<usize, usize> = HashMap::new();
        for tri in &self.faces {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                if edges[&(a.min(b), a.max(b))].len() == 1 && next.insert(a, b).is_some() {
                    return Err(CapError::Topology(format!(
                        "vertex {a} appears twice on the boundary (non-manifold vertex)"
                    )));
                }
            }
        }
        if next.is_empty() {
            if chi != 2 {
                return Err(CapError::Topology(format!(
                    "closed mesh has Euler characteristic {chi}; expected 2 (genus 0)"
                )));
            }
            return Ok(Topology {
                kind: SurfaceKind::Closed,
                boundary: None,
            });
        }
        let start = *next.keys().min().unwrap();
        let mut loop_ = vec![start];
        let mut cur = next[&start];
        while cur != start {
            loop_.push(cur);
            cur = *next
                .get(&cur)
                .ok_or_else(|| CapError::Topology(format!("boundary broken at vertex {cur}")))?;
            if loop_.len() > next.len() {
                return Err(CapError::Topology("boundary does not close".into()));
            }
        }
        if loop_.len() != next.len() {
            return Err(CapError::Topology(format!(
                "mesh has multiple boundary loops ({} boundary edges, first loop has {})",
                next.len(),
                loop_.len()
            )));
        }
        if chi != 1 {
            return Err(CapError::Topology(format!(
                "open mesh has Euler characteristic {chi}; expected 1 (simply connected)"
            )));
        }
        Ok(Topology {
            kind: SurfaceKind::Open,
            boundary: Some(loop_),
        })
    }

    fn components(&self) -> usize {
        let n = self.vertices.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut used = vec![false; n];
        for tri in &self.faces {
            for k in 0..3 {
                used[tri[k]] = true;
                let (a, b) = (find(&mut parent, tri[k]), find(&mut parent, tri[(k + 1) % 3]));
                if a != b {
                    parent[a] = b;
                }
            }
        }
        (0..n).filter(|&v| used[v] && find(&mut parent, v) == v).count()
    }

    /// Rigidly rotates the mesh about the origin so that `axis` (or, when
    /// `None`, the dominant principal axis with its lighter half-space down)
    /// points along +Z. Returns the rotated mesh and the rotation used.
    pub fn align_to_axis(&self, axis: Option<Vec3>) -> Result<(TriangleMesh, Rotation3<f64>)> {
        let dir = match axis {
            Some(a) => {
                let n = a.norm();
                if !(n > 0.0) || !n.is_finite() {
                    return Err(CapError::Argument("alignment axis has zero length".into()));
                }
                a / n
            }
            None => self.principal_up_axis(),
        };
        let rot = rotation_to_z(&dir);
        let mesh = TriangleMesh {
            vertices: self.vertices.iter().map(|v| rot * v).collect(),
            faces: self.faces.clone(),
        };
        Ok((mesh, rot))
    }

    fn principal_up_axis(&self) -> Vec3 {
        let c = self.area_centroid();
        let mut cov = Matrix3::zeros();
        let mut total = 0.0;
        for f in 0..self.faces.len() {
            let [a, b, d] = self.face_corners(f);
            let w = self.face_area(f);
            // Exact second moment of a uniform triangle about c.
            let (pa, pb, pd) = (a - c, b - c, d - c);
            let s = pa + pb + pd;
            let m = (s * s.transpose() + pa * pa.transpose() + pb * pb.transpose() + pd * pd.transpose()) / 12.0;
            cov += w * m;
            total += w;
        }
        cov /= total;
        let eig = SymmetricEigen::new(cov);
        let imax = (0..3).max_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j])).unwrap();
        let mut axis: Vec3 = eig.eigenvectors.column(imax).into();
        axis.normalize_mut();
        // The half-space with less surface area becomes the bottom.
        let (mut up, mut down) = (0.0, 0.0);
        for f in 0..self.faces.len() {
            let [a, b, d] = self.face_corners(f);
            let h = ((a + b + d) / 3.0 - c).dot(&axis);
            if h >= 0.0 {
                up += self.face_area(f);
            } else {
                down += self.face_area(f);
            }
        }
        if up < down {
            -axis
        } else {
            axis
        }
    }

    /// Spatial index for closest-point queries.
    pub fn surface_index(&self) -> SurfaceIndex<'_> {
        SurfaceIndex::new(self)
    }
}

/// Rotation taking unit vector `dir` onto +Z. Antiparallel input rotates by
/// pi about the X axis.
pub fn rotation_to_z(dir: &Vec3) -> Rotation3<f64> {
    let z = Vec3::z();
    let d = dir.normalize();
    let c = d.dot(&z);
    if c > 1.0 - 1e-15 {
        return Rotation3::identity();
    }
    if c < -1.0 + 1e-15 {
        return Rotation3::from_axis_angle(&Vec3::x_axis(), std::f64::consts::PI);
    }
    let axis = nalgebra::Unit::new_normalize(d.cross(&z));
    let angle = d.cross(&z).norm().atan2(c);
    Rotation3::from_axis_angle(&axis, angle)
}

/// Interior angles at `a`, `b`, `c` of a 3-D triangle.
pub fn triangle_angles(a: &Vec3, b: &Vec3, c: &Vec3) -> [f64; 3] {
    let angle = |p: &Vec3, q: &Vec3, r: &Vec3| {
        let u = q - p;
        let v = r - p;
        u.cross(&v).norm().atan2(u.dot(&v))
    };
    [angle(a, b, c), angle(b, c, a), angle(c, a, b)]
}

/// Per-vertex area: one third of the one-ring area.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexAreaField(pub Vec<f64>);

impl VertexAreaField {
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Face areas and the three corner angles of each face, in face-vertex order.
#[derive(Debug, Clone)]
pub struct FaceGeometry {
    pub areas: Vec<f64>,
    pub angles: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceKind {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub kind: SurfaceKind,
    /// The single boundary loop, following face orientation (open meshes only).
    pub boundary: Option<Vec<usize>>,
}
