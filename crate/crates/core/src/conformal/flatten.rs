use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::TAU;

use crate::conformal::beltrami::hat_gradients;
use crate::conformal::lbs::stiffness;
use crate::conformal::{face_beltrami, mean_abs_mu, Chart, PlanarMap};
use crate::error::{CapError, Result};
use crate::linalg::{lbfgs, solve_dirichlet, Cholesky, CsrMatrix, TripletMatrix};
use crate::mesh::{SurfaceKind, TriangleMesh};
use crate::Vec2;

/// Cotangent Laplacian (positive semidefinite convention: positive diagonal).
pub fn cotan_laplacian(mesh: &TriangleMesh) -> Result<CsrMatrix> {
    stiffness(mesh.faces(), Chart::Space(mesh.vertices()), |_| [1.0, 0.0, 1.0])
}

/// Replaces non-positive edge weights by a small positive floor, which makes
/// every Dirichlet solve with convex boundary data an embedding.
fn clamped_weights(l: &CsrMatrix) -> CsrMatrix {
    let n = l.dim();
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        for (j, v) in l.row(i) {
            if j != i && -v > 0.0 {
                sum += -v;
                count += 1;
            }
        }
    }
    let floor = if count > 0 { 1e-3 * sum / count as f64 } else { 1.0 };
    let mut t = TripletMatrix::with_capacity(n, l.nnz());
    for i in 0..n {
        for (j, v) in l.row(i) {
            if j != i {
                let w = (-v).max(floor);
                t.add(i, j, -w);
                t.add(i, i, w);
            }
        }
    }
    t.to_csr()
}

fn open_boundary(mesh: &TriangleMesh) -> Result<Vec<usize>> {
    let topo = mesh.validate_topology()?;
    match (topo.kind, topo.boundary) {
        (SurfaceKind::Open, Some(b)) => Ok(b),
        _ => Err(CapError::Topology("flattening needs an open, disk-like mesh".into())),
    }
}

/// Cumulative 3-D arc length along the loop, scaled to `[0, 2pi)`.
pub(crate) fn arclength_angles(mesh: &TriangleMesh, loop_: &[usize]) -> Vec<f64> {
    let p = mesh.vertices();
    let n = loop_.len();
    let lens: Vec<f64> = (0..n).map(|k| (p[loop_[(k + 1) % n]] - p[loop_[k]]).norm()).collect();
    let total: f64 = lens.iter().sum();
    let mut acc = 0.0;
    lens.iter()
        .map(|l| {
            let a = acc / total * TAU;
            acc += l;
            a
        })
        .collect()
}

fn on_circle(theta: &[f64]) -> Vec<Vec2> {
    theta.iter().map(|t| Vec2::new(t.cos(), t.sin())).collect()
}

fn dirichlet_map(l: &CsrMatrix, boundary: &[usize], positions: &[Vec2]) -> Result<PlanarMap> {
    let n = l.dim();
    let xs = positions.iter().map(|p| p.x).collect();
    let ys = positions.iter().map(|p| p.y).collect();
    let sol = solve_dirichlet(l, boundary, &[xs, ys], &[vec![0.0; n], vec![0.0; n]])?;
    Ok(PlanarMap::new((0..n).map(|i| Vec2::new(sol[0][i], sol[1][i])).collect()))
}

/// Cotangent-harmonic map with the given boundary positions. Falls back to
/// clamped positive weights when the cotangent solution folds over.
pub fn harmonic_map_with_boundary(mesh: &TriangleMesh, boundary: &[usize], positions: &[Vec2]) -> Result<PlanarMap> {
    if boundary.len() != positions.len() {
        return Err(CapError::Argument(format!(
            "{} boundary vertices but {} positions",
            boundary.len(),
            positions.len()
        )));
    }
    let l = cotan_laplacian(mesh)?;
    match dirichlet_map(&l, boundary, positions) {
        Ok(map) if map.flipped_faces(mesh.faces()).is_empty() => Ok(map),
        _ => {
            log::debug!("cotangent harmonic map folds; using clamped weights");
            dirichlet_map(&clamped_weights(&l), boundary, positions)
        }
    }
}

/// Boundary to the unit circle by cumulative arc length (starting at angle 0
/// on the first loop vertex), interior cotangent-harmonic.
pub fn harmonic_disk_map(mesh: &TriangleMesh) -> Result<PlanarMap> {
    let b = open_boundary(mesh)?;
    let theta = arclength_angles(mesh, &b);
    harmonic_map_with_boundary(mesh, &b, &on_circle(&theta))
}

/// Conformal energy of disk maps parameterized by their boundary angles,
/// with the interior kept harmonic.
struct BoundaryEnergy<'a> {
    l: &'a CsrMatrix,
    boundary: &'a [usize],
    interior: Vec<usize>,
    /// Position of each vertex in `interior`, or usize::MAX.
    slot: Vec<usize>,
    chol: Cholesky,
}

impl<'a> BoundaryEnergy<'a> {
    fn new(l: &'a CsrMatrix, boundary: &'a [usize]) -> Result<Self> {
        let n = l.dim();
        let mut on_b = vec![false; n];
        for &v in boundary {
            on_b[v] = true;
        }
        let interior: Vec<usize> = (0..n).filter(|&i| !on_b[i]).collect();
        let mut slot = vec![usize::MAX; n];
        for (k, &i) in interior.iter().enumerate() {
            slot[i] = k;
        }
        let chol = Cholesky::factor(&l.submatrix(&interior))?;
        Ok(BoundaryEnergy {
            l,
            boundary,
            interior,
            slot,
            chol,
        })
    }

    fn extend(&self, theta: &[f64]) -> Vec<Vec2> {
        let n = self.l.dim();
        let mut pos = vec![Vec2::zeros(); n];
        for (&v, t) in self.boundary.iter().zip(theta) {
            pos[v] = Vec2::new(t.cos(), t.sin());
        }
        let mut bx = vec![0.0; self.interior.len()];
        let mut by = vec![0.0; self.interior.len()];
        for &v in self.boundary {
            for (j, w) in self.l.row(v) {
                let k = self.slot[j];
                if k != usize::MAX {
                    bx[k] -= w * pos[v].x;
                    by[k] -= w * pos[v].y;
                }
            }
        }
        let (x, y) = (self.chol.solve(&bx), self.chol.solve(&by));
        for (k, &i) in self.interior.iter().enumerate() {
            pos[i] = Vec2::new(x[k], y[k]);
        }
        pos
    }

    /// Energy and its gradient with respect to the boundary angles.
    fn eval(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let pos = self.extend(theta);
        let xs: Vec<f64> = pos.iter().map(|p| p.x).collect();
        let ys: Vec<f64> = pos.iter().map(|p| p.y).collect();
        let (lx, ly) = (self.l.mul_vec(&xs), self.l.mul_vec(&ys));
        let dirichlet = 0.5 * (xs.iter().zip(&lx).map(|(a, b)| a * b).sum::<f64>() + ys.iter().zip(&ly).map(|(a, b)| a * b).sum::<f64>());
        let m = theta.len();
        let mut area = 0.0;
        let mut grad = vec![0.0; m];
        for k in 0..m {
            let next = theta[(k + 1) % m] + if k + 1 == m { TAU } else { 0.0 };
            let prev = if k == 0 { theta[m - 1] - TAU } else { theta[k - 1] };
            area += 0.5 * (next - theta[k]).sin();
            let v = self.boundary[k];
            let (s, c) = theta[k].sin_cos();
            grad[k] = -lx[v] * s + ly[v] * c - 0.5 * ((theta[k] - prev).cos() - (next - theta[k]).cos());
        }
        (dirichlet - area, grad)
    }
}

fn monotone(theta: &[f64]) -> bool {
    theta.windows(2).all(|w| w[1] > w[0]) && *theta.last().unwrap() < TAU
}

/// Minimizes the boundary energy over angles 1.. with angle 0 pinned;
/// steps that break the cyclic order are shortened.
fn optimize_angles(energy: &BoundaryEnergy, start: Vec<f64>) -> Vec<f64> {
    let step = 0.1 * TAU / start.len() as f64;
    let eval = |t: &[f64]| {
        if t[0] != 0.0 || !monotone(t) {
            return None;
        }
        let (f, mut g) = energy.eval(t);
        g[0] = 0.0;
        Some((f, g))
    };
    lbfgs(start, eval, 500, 1e-10, step).0
}

/// Total per-face Beltrami modulus `sum_T |mu_T|` (smoothed at 0) of a disk
/// map whose boundary stays on the unit circle. Folded faces are infeasible.
struct ConformalDistortion<'a> {
    faces: &'a [[usize; 3]],
    /// Hat-function gradients of each source face in its own frame.
    hats: Vec<[Vec2; 3]>,
    boundary: &'a [usize],
    /// Variable offset of each vertex: boundary vertices own one angle,
    /// interior vertices own an (x, y) pair.
    var: Vec<usize>,
    on_boundary: Vec<bool>,
}

impl<'a> ConformalDistortion<'a> {
    fn new(mesh: &'a TriangleMesh, boundary: &'a [usize]) -> Self {
        let n = mesh.num_vertices();
        let chart = Chart::Space(mesh.vertices());
        let hats = mesh.faces().iter().map(|t| hat_gradients(&chart.local(t)).0).collect();
        let mut on_boundary = vec![false; n];
        let mut var = vec![0; n];
        for (k, &v) in boundary.iter().enumerate() {
            on_boundary[v] = true;
            var[v] = k;
        }
        let mut next = boundary.len();
        for v in 0..n {
            if !on_boundary[v] {
                var[v] = next;
                next += 2;
            }
        }
        ConformalDistortion {
            faces: mesh.faces(),
            hats,
            boundary,
            var,
            on_boundary,
        }
    }

    fn pack(&self, theta: &[f64], map: &PlanarMap) -> Vec<f64> {
        let mut x = vec![0.0; theta.len() + 2 * (map.len() - self.boundary.len())];
        x[..theta.len()].copy_from_slice(theta);
        for (v, p) in map.positions.iter().enumerate() {
            if !self.on_boundary[v] {
                x[self.var[v]] = p.x;
                x[self.var[v] + 1] = p.y;
            }
        }
        x
    }

    fn unpack(&self, x: &[f64]) -> Vec<Vec2> {
        (0..self.var.len())
            .map(|v| {
                let k = self.var[v];
                if self.on_boundary[v] {
                    Vec2::new(x[k].cos(), x[k].sin())
                } else {
                    Vec2::new(x[k], x[k + 1])
                }
            })
            .collect()
    }

    fn eval(&self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let m = self.boundary.len();
        if x[0] != 0.0 || !monotone(&x[..m]) {
            return None;
        }
        let p = self.unpack(x);
        let mut pgrad = vec![Vec2::zeros(); p.len()];
        let mut total = 0.0;
        for (t, g) in self.faces.iter().zip(&self.hats) {
            let du = g[0] * p[t[0]].x + g[1] * p[t[1]].x + g[2] * p[t[2]].x;
            let dv = g[0] * p[t[0]].y + g[1] * p[t[1]].y + g[2] * p[t[2]].y;
            if !(du.x * dv.y - du.y * dv.x > 0.0) {
                return None;
            }
            // |mu|^2 = q / pp in terms of the Jacobian rows du, dv.
            let (pa, pb, pc, pd) = (du.x, du.y, dv.x, dv.y);
            let q = (pa - pd).powi(2) + (pc + pb).powi(2);
            let pp = (pa + pd).powi(2) + (pc - pb).powi(2);
            let mu = (q / pp + EPS2).sqrt();
            total += mu;
            let (hq, hp) = (0.5 / (mu * pp), -0.5 * q / (mu * pp * pp));
            let gu = Vec2::new(
                hq * 2.0 * (pa - pd) + hp * 2.0 * (pa + pd),
                hq * 2.0 * (pc + pb) - hp * 2.0 * (pc - pb),
            );
            let gv = Vec2::new(
                hq * 2.0 * (pc + pb) + hp * 2.0 * (pc - pb),
                -hq * 2.0 * (pa - pd) + hp * 2.0 * (pa + pd),
            );
            for k in 0..3 {
                pgrad[t[k]] += Vec2::new(gu.dot(&g[k]), gv.dot(&g[k]));
            }
        }
        let mut grad = vec![0.0; x.len()];
        for (v, gp) in pgrad.iter().enumerate() {
            let k = self.var[v];
            if self.on_boundary[v] {
                grad[k] = -p[v].y * gp.x + p[v].x * gp.y;
            } else {
                grad[k] = gp.x;
                grad[k + 1] = gp.y;
            }
        }
        grad[0] = 0.0;
        Some((total, grad))
    }
}

const EPS2: f64 = 1e-16;

fn relax_distortion(mesh: &TriangleMesh, boundary: &[usize], start: &PlanarMap) -> Option<PlanarMap> {
    let d = ConformalDistortion::new(mesh, boundary);
    let theta: Vec<f64> = boundary
        .iter()
        .map(|&v| {
            let q = start.positions[v];
            q.y.atan2(q.x).rem_euclid(TAU)
        })
        .collect();
    let shift = theta[0];
    let theta: Vec<f64> = theta.iter().map(|t| (t - shift).rem_euclid(TAU)).collect();
    let (c, s) = (shift.cos(), shift.sin());
    let rotated = PlanarMap::new(
        start
            .positions
            .iter()
            .map(|q| Vec2::new(c * q.x + s * q.y, -s * q.x + c * q.y))
            .collect(),
    );
    let step = 0.1 * TAU / boundary.len() as f64;
    let (x, f, iters) = lbfgs(d.pack(&theta, &rotated), |x| d.eval(x), 1000, 1e-9, step);
    log::debug!("total |mu| relaxed to {f:.6e} in {iters} iterations");
    f.is_finite().then(|| PlanarMap::new(d.unpack(&x)))
}

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

/// Vertex farthest (along edges) from the boundary.
fn deepest_vertex(mesh: &TriangleMesh, boundary: &[usize]) -> usize {
    let nbr = mesh.vertex_neighbors();
    let p = mesh.vertices();
    let mut dist = vec![f64::INFINITY; p.len()];
    let mut heap = BinaryHeap::new();
    for &b in boundary {
        dist[b] = 0.0;
        heap.push(Item(0.0, b));
    }
    while let Some(Item(d, v)) = heap.pop() {
        if d > dist[v] {
            continue;
        }
        for &w in &nbr[v] {
            let nd = d + (p[w] - p[v]).norm();
            if nd < dist[w] {
                dist[w] = nd;
                heap.push(Item(nd, w));
            }
        }
    }
    let mut best = boundary[0];
    for v in 0..p.len() {
        if dist[v].is_finite() && dist[v] > dist[best] {
            best = v;
        }
    }
    best
}

/// Boundary angles from the harmonic measure seen from the deepest vertex.
fn harmonic_measure_angles(energy: &BoundaryEnergy, center: usize) -> Vec<f64> {
    let mut e = vec![0.0; energy.interior.len()];
    e[energy.slot[center]] = 1.0;
    let g = energy.chol.solve(&e);
    let flux: Vec<f64> = energy
        .boundary
        .iter()
        .map(|&b| {
            energy
                .l
                .row(b)
                .filter(|&(j, _)| energy.slot[j] != usize::MAX)
                .map(|(j, w)| -w * g[energy.slot[j]])
                .sum::<f64>()
        })
        .collect();
    let mean = flux.iter().sum::<f64>() / flux.len() as f64;
    let flux: Vec<f64> = flux.iter().map(|f| f.max(1e-3 * mean.abs())).collect();
    let m = flux.len();
    let total: f64 = flux.iter().sum();
    let mut theta = vec![0.0; m];
    for k in 1..m {
        theta[k] = theta[k - 1] + 0.5 * (flux[k - 1] + flux[k]) / total * TAU;
    }
    theta
}

/// Disk conformal map. Boundary angles are first chosen to minimize the
/// discrete conformal energy (Dirichlet energy minus image area) with a
/// harmonic interior; the total Beltrami modulus is then relaxed over all
/// positions with the boundary kept on the circle. Returns the fold-free
/// candidate (including the arc-length harmonic map) with the least mean |mu|.
pub fn disk_conformal_flatten(mesh: &TriangleMesh) -> Result<PlanarMap> {
    let b = open_boundary(mesh)?;
    let base = harmonic_disk_map(mesh)?;
    let domain = Chart::Space(mesh.vertices());
    let score = |m: &PlanarMap| -> Option<f64> {
        if !m.flipped_faces(mesh.faces()).is_empty() {
            return None;
        }
        face_beltrami(mesh.faces(), domain, m.chart()).ok().map(|mu| mean_abs_mu(&mu))
    };
    let mut best = (score(&base).unwrap_or(f64::INFINITY), base);
    if b.len() == mesh.num_vertices() || b.len() < 3 {
        return Ok(best.1);
    }
    let cot = cotan_laplacian(mesh)?;
    let clamped;
    let energy = match BoundaryEnergy::new(&cot, &b) {
        Ok(e) => e,
        Err(_) => {
            clamped = clamped_weights(&cot);
            BoundaryEnergy::new(&clamped, &b)?
        }
    };
    let arc = arclength_angles(mesh, &b);
    let hm = harmonic_measure_angles(&energy, deepest_vertex(mesh, &b));
    let start = if energy.eval(&hm).0 < energy.eval(&arc).0 {
        hm.clone()
    } else {
        arc
    };
    let opt = optimize_angles(&energy, start);
    let opt_map = PlanarMap::new(energy.extend(&opt));
    let relaxed = match opt_map.flipped_faces(mesh.faces()).is_empty() {
        true => relax_distortion(mesh, &b, &opt_map),
        false => relax_distortion(mesh, &b, &best.1),
    };
    let hm_map = PlanarMap::new(energy.extend(&hm));
    for cand in [Some(hm_map), Some(opt_map), relaxed].into_iter().flatten() {
        if let Some(s) = score(&cand) {
            if s < best.0 {
                best = (s, cand);
            }
        }
    }
    log::debug!("disk conformal flatten: mean |mu| = {:.4e}", best.0);
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3};

    fn mean_mu(m: &TriangleMesh, map: &PlanarMap) -> f64 {
        mean_abs_mu(&face_beltrami(m.faces(), Chart::Space(m.vertices()), map.chart()).unwrap())
    }

    #[test]
    fn laplacian_rows_sum_to_zero_and_kill_linear_functions() {
        let m = shapes::flat_square_corners(10);
        let l = cotan_laplacian(&m).unwrap();
        assert!(l.is_symmetric(1e-14));
        let ones = vec![1.0; m.num_vertices()];
        assert!(l.mul_vec(&ones).iter().all(|x| x.abs() < 1e-12));
        let b = m.validate_topology().unwrap().boundary.unwrap();
        let x: Vec<f64> = m.vertices().iter().map(|v| 2.0 * v.x - v.y).collect();
        let lx = l.mul_vec(&x);
        for (v, r) in lx.iter().enumerate() {
            if !b.contains(&v) {
                assert!(r.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn flat_disk_harmonic_is_identity() {
        let m = shapes::flat_disk(8, 1.0);
        let map = harmonic_disk_map(&m).unwrap();
        for (v, q) in m.vertices().iter().zip(&map.positions) {
            assert!((Vec2::new(v.x, v.y) - q).norm() <= 1e-6);
        }
    }

    #[test]
    fn boundary_on_unit_circle_and_no_flips() {
        let m = shapes::geodesic_cap(FRAC_PI_2, 1500).unwrap();
        let map = harmonic_disk_map(&m).unwrap();
        let b = m.validate_topology().unwrap().boundary.unwrap();
        assert!(b.iter().all(|&v| (map.positions[v].norm() - 1.0).abs() <= 1e-12));
        map.check_no_flips(m.faces()).unwrap();
        let bumpy = shapes::stretched_cap(2.0, 800, 1.8).unwrap();
        harmonic_disk_map(&bumpy).unwrap().check_no_flips(bumpy.faces()).unwrap();
    }

    #[test]
    fn energy_gradient_matches_differences() {
        let m = shapes::geodesic_cap(1.2, 400).unwrap();
        let b = m.validate_topology().unwrap().boundary.unwrap();
        let l = cotan_laplacian(&m).unwrap();
        let e = BoundaryEnergy::new(&l, &b).unwrap();
        let mut theta = arclength_angles(&m, &b);
        for (k, t) in theta.iter_mut().enumerate().skip(1) {
            *t += 0.02 * (k as f64).sin();
        }
        let (_, g) = e.eval(&theta);
        for k in [1, 5, b.len() - 1] {
            let h = 1e-6;
            let mut tp = theta.clone();
            tp[k] += h;
            let mut tm = theta.clone();
            tm[k] -= h;
            let fd = (e.eval(&tp).0 - e.eval(&tm).0) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-6 * (1.0 + g[k].abs()), "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn distortion_gradient_matches_differences() {
        let m = shapes::geodesic_cap(1.0, 300).unwrap();
        let b = m.validate_topology().unwrap().boundary.unwrap();
        let d = ConformalDistortion::new(&m, &b);
        let start = harmonic_disk_map(&m).unwrap();
        let theta = arclength_angles(&m, &b);
        let x = d.pack(&theta, &start);
        let (f0, g) = d.eval(&x).unwrap();
        assert!(f0 >= 0.0);
        for k in [1, 3, b.len() + 4, x.len() - 1] {
            let h = 1e-6;
            let mut xp = x.clone();
            xp[k] += h;
            let mut xm = x.clone();
            xm[k] -= h;
            let fd = (d.eval(&xp).unwrap().0 - d.eval(&xm).unwrap().0) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-4 * (1.0 + g[k].abs()), "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn planar_disk_is_conformal() {
        let m = shapes::flat_disk(10, 1.0);
        let map = disk_conformal_flatten(&m).unwrap();
        assert!(mean_mu(&m, &map) <= 1e-9);
    }

    #[test]
    fn cap_flattening_is_nearly_conformal() {
        let m = shapes::geodesic_cap(FRAC_PI_3, 2000).unwrap();
        let map = disk_conformal_flatten(&m).unwrap();
        map.check_no_flips(m.faces()).unwrap();
        assert!(mean_mu(&m, &map) <= 0.05);
    }

    #[test]
    fn hemisphere_improves_on_harmonic() {
        let m = shapes::geodesic_cap(FRAC_PI_2, 2000).unwrap();
        let h = mean_mu(&m, &harmonic_disk_map(&m).unwrap());
        let c = disk_conformal_flatten(&m).unwrap();
        c.check_no_flips(m.faces()).unwrap();
        let b = m.validate_topology().unwrap().boundary.unwrap();
        assert!(b.iter().all(|&v| (c.positions[v].norm() - 1.0).abs() <= 1e-12));
        assert!(mean_mu(&m, &c) < h, "{} vs {h}", mean_mu(&m, &c));
    }

    #[test]
    fn closed_mesh_rejected() {
        assert!(matches!(harmonic_disk_map(&shapes::icosphere(1)), Err(CapError::Topology(_))));
    }
}
