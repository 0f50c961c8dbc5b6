use crate::mesh::TriangleMesh;
use crate::{Vec2, Vec3};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            lo: Vec3::repeat(f64::INFINITY),
            hi: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    fn merge(&mut self, o: &Aabb) {
        self.lo = self.lo.inf(&o.lo);
        self.hi = self.hi.sup(&o.hi);
    }

    fn dist2(&self, p: &Vec3) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let e = (self.lo[k] - p[k]).max(0.0).max(p[k] - self.hi[k]);
            d += e * e;
        }
        d
    }
}

#[derive(Debug, Clone)]
struct Node {
    bbox: Aabb,
    /// Leaf: range into `order`; inner: children indices.
    start: usize,
    end: usize,
    left: usize,
    right: usize,
}

/// Axis-aligned bounding-volume hierarchy over triangles.
#[derive(Debug, Clone)]
struct Bvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
}

impl Bvh {
    fn build(tris: &[[Vec3; 3]]) -> Bvh {
        let boxes: Vec<Aabb> = tris
            .iter()
            .map(|t| {
                let mut b = Aabb::empty();
                t.iter().for_each(|p| b.grow(p));
                b
            })
            .collect();
        let centers: Vec<Vec3> = boxes.iter().map(|b| (b.lo + b.hi) * 0.5).collect();
        let mut bvh = Bvh {
            nodes: Vec::with_capacity(2 * tris.len() / LEAF_SIZE + 1),
            order: (0..tris.len()).collect(),
        };
        if !tris.is_empty() {
            bvh.split(0, tris.len(), &boxes, &centers);
        }
        bvh
    }

    fn split(&mut self, start: usize, end: usize, boxes: &[Aabb], centers: &[Vec3]) -> usize {
        let mut bbox = Aabb::empty();
        let mut cbox = Aabb::empty();
        for &i in &self.order[start..end] {
            bbox.merge(&boxes[i]);
            cbox.grow(&centers[i]);
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            bbox,
            start,
            end,
            left: usize::MAX,
            right: usize::MAX,
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let ext = cbox.hi - cbox.lo;
        let axis = ext.imax();
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| centers[a][axis].total_cmp(&centers[b][axis]));
        let left = self.split(start, mid, boxes, centers);
        let right = self.split(mid, end, boxes, centers);
        self.nodes[id].left = left;
        self.nodes[id].right = right;
        id
    }

    fn is_leaf(&self, n: usize) -> bool {
        self.nodes[n].left == usize::MAX
    }
}

/// Result of a closest-point query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPoint {
    pub point: Vec3,
    pub face: usize,
    pub distance: f64,
    /// Barycentric coordinates of `point` in the face, in face-vertex order.
    pub bary: [f64; 3],
}

/// Closest point to `p` on triangle (a, b, c) with its barycentric coordinates.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + v * ab, [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + w * ac, [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + w * (c - b), [0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

fn nearest(bvh: &Bvh, tris: &[[Vec3; 3]], q: &Vec3) -> Option<(usize, Vec3, [f64; 3], f64)> {
    if bvh.nodes.is_empty() {
        return None;
    }
    let mut best: Option<(usize, Vec3, [f64; 3], f64)> = None;
    let mut best_d2 = f64::INFINITY;
    let mut stack = vec![0usize];
    while let Some(n) = stack.pop() {
        if bvh.nodes[n].bbox.dist2(q) > best_d2 {
            continue;
        }
        if bvh.is_leaf(n) {
            let node = &bvh.nodes[n];
            for &f in &bvh.order[node.start..node.end] {
                let [a, b, c] = &tris[f];
                let (p, bary) = closest_point_on_triangle(q, a, b, c);
                let d2 = (p - q).norm_squared();
                // Ties go to the lowest face id so results do not depend on traversal order.
                if d2 < best_d2 || (d2 == best_d2 && best.is_some_and(|b| f < b.0)) {
                    best_d2 = d2;
                    best = Some((f, p, bary, d2));
                }
            }
        } else {
            let (l, r) = (bvh.nodes[n].left, bvh.nodes[n].right);
            let (dl, dr) = (bvh.nodes[l].bbox.dist2(q), bvh.nodes[r].bbox.dist2(q));
            if dl < dr {
                stack.push(r);
                stack.push(l);
            } else {
                stack.push(l);
                stack.push(r);
            }
        }
    }
    best.map(|(f, p, b, d2)| (f, p, b, d2.sqrt()))
}

/// Closest-point index over the faces of a mesh. Build once, query many times
/// from any number of threads.
#[derive(Debug, Clone)]
pub struct SurfaceIndex<'a> {
    mesh: &'a TriangleMesh,
    tris: Vec<[Vec3; 3]>,
    bvh: Bvh,
}

impl<'a> SurfaceIndex<'a> {
    pub fn new(mesh: &'a TriangleMesh) -> Self {
        let tris: Vec<[Vec3; 3]> = (0..mesh.num_faces()).map(|f| mesh.face_corners(f)).collect();
        let bvh = Bvh::build(&tris);
        SurfaceIndex { mesh, tris, bvh }
    }

    pub fn mesh(&self) -> &TriangleMesh {
        self.mesh
    }

    pub fn closest_point(&self, q: &Vec3) -> ClosestPoint {
        let (face, point, bary, distance) = nearest(&self.bvh, &self.tris, q).expect("mesh has at least one face");
        ClosestPoint {
            point,
            face,
            distance,
            bary,
        }
    }
}

/// Point location in a planar triangulation, with nearest-triangle fallback.
#[derive(Debug, Clone)]
pub struct TriangleLocator {
    faces: Vec<usize>,
    tris: Vec<[Vec3; 3]>,
    bvh: Bvh,
}

/// A located planar point: the face id (from the caller's numbering) and
/// barycentric coordinates. `snapped` is set when the point was outside every
/// triangle and was moved to the closest one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub face: usize,
    pub bary: [f64; 3],
    pub snapped: bool,
    pub distance: f64,
}

impl TriangleLocator {
    /// `faces` lists (face id, corner positions) pairs to index.
    pub fn new(faces: impl IntoIterator<Item = (usize, [Vec2; 3])>) -> Self {
        let (ids, tris): (Vec<usize>, Vec<[Vec3; 3]>) = faces.into_iter().map(|(f, t)| (f, t.map(|p| Vec3::new(p.x, p.y, 0.0)))).unzip();
        let bvh = Bvh::build(&tris);
        TriangleLocator { faces: ids, tris, bvh }
    }

    pub fn locate(&self, q: &Vec2) -> Option<Location> {
        let q3 = Vec3::new(q.x, q.y, 0.0);
        if let Some(loc) = self.contains(&q3) {
            return Some(loc);
        }
        nearest(&self.bvh, &self.tris, &q3).map(|(i, _, bary, d)| Location {
            face: self.faces[i],
            bary,
            snapped: true,
            distance: d,
        })
    }

    fn contains(&self, q: &Vec3) -> Option<Location> {
        if self.bvh.nodes.is_empty() {
            return None;
        }
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.bvh.nodes[n];
            let scale = (node.bbox.hi - node.bbox.lo).norm();
            if node.bbox.dist2(q) > (1e-12 * scale).powi(2) {
                continue;
            }
            if self.bvh.is_leaf(n) {
                for &i in &self.bvh.order[node.start..node.end] {
                    let b = barycentric_2d(q, &self.tris[i]);
                    let worst = b[0].min(b[1]).min(b[2]);
                    // Prefer the triangle in which the point is most interior.
                    if worst >= -1e-12 && best.is_none_or(|(bi, _, bw)| worst > bw || (worst == bw && i < bi)) {
                        best = Some((i, b, worst));
                    }
                }
            } else {
                stack.push(node.left);
                stack.push(node.right);
            }
        }
        best.map(|(i, b, _)| {
            let c = b.map(|x| x.max(0.0));
            let s = c[0] + c[1] + c[2];
            Location {
                face: self.faces[i],
                bary: c.map(|x| x / s),
                snapped: false,
                distance: 0.0,
            }
        })
    }
}

fn barycentric_2d(q: &Vec3, t: &[Vec3; 3]) -> [f64; 3] {
    let [a, b, c] = t;
    let det = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
    let l1 = ((q.x - a.x) * (c.y - a.y) - (c.x - a.x) * (q.y - a.y)) / det;
    let l2 = ((b.x - a.x) * (q.y - a.y) - (q.x - a.x) * (b.y - a.y)) / det;
    [1.0 - l1 - l2, l1, l2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(mesh: &TriangleMesh, q: &Vec3) -> f64 {
        (0..mesh.num_faces())
            .map(|f| {
                let [a, b, c] = mesh.face_corners(f);
                (closest_point_on_triangle(q, &a, &b, &c).0 - q).norm()
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn query_on_vertex() {
        let m = shapes::icosphere(2);
        let idx = m.surface_index();
        let v = m.vertices()[17];
        let cp = idx.closest_point(&v);
        assert!(cp.distance < 1e-15);
        assert!((cp.point - v).norm() < 1e-15);
    }

    #[test]
    fn foot_of_perpendicular_above_planar_mesh() {
        let m = shapes::flat_square_grid(8, 1.0);
        let idx = m.surface_index();
        let c = {
            let [a, b, d] = m.face_corners(5);
            (a + b + d) / 3.0
        };
        let cp = idx.closest_point(&(c + Vec3::z()));
        assert!((cp.distance - 1.0).abs() < 1e-12);
        assert!((cp.point - c).norm() < 1e-12);
    }

    #[test]
    fn matches_brute_force() {
        let m = shapes::blob(3, 2000);
        let idx = m.surface_index();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let q = Vec3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let cp = idx.closest_point(&q);
            assert!((cp.distance - brute(&m, &q)).abs() <= 1e-12);
            let s: f64 = cp.bary.iter().sum();
            assert!((s - 1.0).abs() < 1e-9 && cp.bary.iter().all(|&b| (-1e-12..=1.0 + 1e-12).contains(&b)));
            let [a, b, c] = m.face_corners(cp.face);
            let rebuilt = cp.bary[0] * a + cp.bary[1] * b + cp.bary[2] * c;
            assert!((rebuilt - cp.point).norm() < 1e-9);
        }
    }

    #[test]
    fn never_beaten_by_surface_samples() {
        let m = shapes::icosphere(2);
        let idx = m.surface_index();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = Vec3::new(0.3, -1.7, 0.4);
        let d = idx.closest_point(&q).distance;
        for _ in 0..10_000 {
            let f = rng.random_range(0..m.num_faces());
            let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            let [a, b, c] = m.face_corners(f);
            let s = a + u * (b - a) + v * (c - a);
            assert!(d <= (s - q).norm() + 1e-15);
        }
    }

    #[test]
    fn planar_location() {
        let tris = vec![
            (7, [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)]),
            (9, [Vec2::new(1.0, 0.0), Vec2::new(1.0, 1.0), Vec2::new(0.0, 1.0)]),
        ];
        let loc = TriangleLocator::new(tris);
        let a = loc.locate(&Vec2::new(0.2, 0.2)).unwrap();
        assert_eq!(a.face, 7);
        assert!(!a.snapped);
        assert!((a.bary[0] - 0.6).abs() < 1e-12);
        let b = loc.locate(&Vec2::new(0.9, 0.8)).unwrap();
        assert_eq!(b.face, 9);
        let out = loc.locate(&Vec2::new(2.0, 0.5)).unwrap();
        assert!(out.snapped && out.face == 9 && (out.distance - 1.0).abs() < 1e-12);
    }
}
