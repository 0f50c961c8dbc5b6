use crate::conformal::flatten::{arclength_angles, harmonic_map_with_boundary};
use crate::conformal::PlanarMap;
use crate::error::{CapError, Result};
use crate::linalg::{lbfgs, solve_dirichlet, TripletMatrix};
use crate::mesh::{SurfaceKind, TriangleMesh};
use crate::metrics::{log_area_ratios, signed_area_2d};
use crate::Vec2;

const MAX_ITERATIONS: usize = 50;
const REL_TOL: f64 = 1e-3;
const MAX_HALVINGS: usize = 20;
const POLISH_ITERATIONS: usize = 2000;

#[derive(Debug, Clone)]
pub struct SemResult {
    pub map: PlanarMap,
    /// Mean |d_area| of the first iterate and of every accepted iterate.
    pub trace: Vec<f64>,
    pub iterations: usize,
    /// An iterate folded over and was discarded.
    pub rolled_back: bool,
}

fn mean_abs_d_area(mesh: &TriangleMesh, map: &PlanarMap) -> Option<f64> {
    let src: Vec<f64> = (0..mesh.num_faces()).map(|f| mesh.face_area(f)).collect();
    let img: Vec<f64> = map.signed_areas(mesh.faces()).iter().map(|a| 0.5 * a).collect();
    let d = log_area_ratios(&src, &img).ok()?;
    Some(d.iter().map(|x| x.abs()).sum::<f64>() / d.len() as f64)
}

/// Minimizes `-sum_T |T| log(|f(T)| / (k |T|))` over the interior
/// positions, `k` being the image-to-source total area ratio. The boundary
/// fixes the total image area, so the minimum is the area-proportional map,
/// and folds are unreachable.
fn polish(mesh: &TriangleMesh, map: &PlanarMap, boundary: &[usize]) -> Option<PlanarMap> {
    let n = mesh.num_vertices();
    let faces = mesh.faces();
    let src: Vec<f64> = (0..mesh.num_faces()).map(|f| mesh.face_area(f)).collect();
    let total_src: f64 = src.iter().sum();
    let total_img: f64 = map.signed_areas(faces).iter().sum::<f64>() * 0.5;
    let mut slot = vec![usize::MAX; n];
    let mut free = Vec::new();
    for (v, s) in slot.iter_mut().enumerate() {
        if !boundary.contains(&v) {
            *s = free.len();
            free.push(v);
        }
    }
    let unpack = |x: &[f64]| -> Vec<Vec2> {
        let mut p = map.positions.clone();
        for (k, &v) in free.iter().enumerate() {
            p[v] = Vec2::new(x[2 * k], x[2 * k + 1]);
        }
        p
    };
    let eval = |x: &[f64]| -> Option<(f64, Vec<f64>)> {
        let p = unpack(x);
        let mut e = 0.0;
        let mut g = vec![0.0; x.len()];
        for (f, t) in faces.iter().enumerate() {
            let a = 0.5 * signed_area_2d(&p[t[0]], &p[t[1]], &p[t[2]]);
            if !(a > 0.0) {
                return None;
            }
            let w = src[f] / total_src;
            e -= w * (a * total_src / (total_img * src[f])).ln();
            for k in 0..3 {
                let (i, j, l) = (t[k], t[(k + 1) % 3], t[(k + 2) % 3]);
                if slot[i] == usize::MAX {
                    continue;
                }
                let c = -w / a * 0.5;
                g[2 * slot[i]] += c * (p[j].y - p[l].y);
                g[2 * slot[i] + 1] += c * (p[l].x - p[j].x);
            }
        }
        Some((e, g))
    };
    let x0: Vec<f64> = free.iter().flat_map(|&v| [map.positions[v].x, map.positions[v].y]).collect();
    let scale = total_img.sqrt() / (n as f64).sqrt();
    let (x, e, iters) = lbfgs(x0, eval, POLISH_ITERATIONS, 1e-12, 0.1 * scale);
    log::debug!("authalic polish: {iters} iterations, energy {e:.3e}");
    e.is_finite().then(|| PlanarMap::new(unpack(&x)))
}

/// Authalic flattening of a mesh whose boundary is a four-vertex loop.
///
/// The corners go to the unit circle at angles proportional to boundary arc
/// length from `corners[0]`. Starting from the harmonic map, each step solves
/// a Laplace problem with image cotangent weights scaled by the image-to-source
/// area ratio of each face, which drives the stretch energy
/// `sum |f(T)|^2 / |T|` down.
pub fn sem_flatten(mesh: &TriangleMesh, corners: &[usize]) -> Result<SemResult> {
    if corners.len() != 4 {
        return Err(CapError::Argument(format!("expected 4 corners, got {}", corners.len())));
    }
    let topo = mesh.validate_topology()?;
    let loop_ = match (topo.kind, topo.boundary) {
        (SurfaceKind::Open, Some(b)) => b,
        _ => return Err(CapError::Topology("authalic flattening needs a punctured mesh".into())),
    };
    let mut sorted_c = corners.to_vec();
    sorted_c.sort_unstable();
    let mut sorted_b = loop_.clone();
    sorted_b.sort_unstable();
    if sorted_c != sorted_b {
        return Err(CapError::Argument(format!(
            "corners {corners:?} are not the boundary loop {loop_:?}"
        )));
    }
    let start = loop_.iter().position(|&v| v == corners[0]).unwrap();
    let ordered: Vec<usize> = (0..4).map(|k| loop_[(start + k) % 4]).collect();
    let theta = arclength_angles(mesh, &ordered);
    let pos: Vec<Vec2> = theta.iter().map(|t| Vec2::new(t.cos(), t.sin())).collect();

    let mut map = harmonic_map_with_boundary(mesh, &ordered, &pos)?;
    map.check_no_flips(mesh.faces())?;
    let mut current = mean_abs_d_area(mesh, &map).ok_or_else(|| CapError::Solver("first authalic iterate is degenerate".into()))?;
    let mut trace = vec![current];
    let mut rolled_back = false;
    let mut iterations = 0;
    let n = mesh.num_vertices();
    let faces = mesh.faces();
    let src: Vec<f64> = (0..mesh.num_faces()).map(|f| mesh.face_area(f)).collect();
    let xs: Vec<f64> = pos.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = pos.iter().map(|p| p.y).collect();

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let p = &map.positions;
        let mut t = TripletMatrix::with_capacity(n, faces.len() * 9);
        for (f, tri) in faces.iter().enumerate() {
            let a2 = signed_area_2d(&p[tri[0]], &p[tri[1]], &p[tri[2]]);
            let scale = 0.5 * a2 / src[f];
            for k in 0..3 {
                let (i, j, o) = (tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]);
                let (u, v) = (p[i] - p[o], p[j] - p[o]);
                let cot = u.dot(&v) / (u.x * v.y - u.y * v.x);
                let w = 0.5 * cot * scale;
                t.add_sym(i, j, -w);
                t.add(i, i, w);
                t.add(j, j, w);
            }
        }
        let l = t.to_csr();
        let sol = match solve_dirichlet(&l, &ordered, &[xs.clone(), ys.clone()], &[vec![0.0; n], vec![0.0; n]]) {
            Ok(s) => s,
            Err(e) => {
                log::debug!("authalic step {iterations} failed to solve: {e}");
                rolled_back = true;
                break;
            }
        };
        let target: Vec<Vec2> = (0..n).map(|i| Vec2::new(sol[0][i], sol[1][i])).collect();
        // Damped step toward the fixed-point update.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let next = PlanarMap::new(map.positions.iter().zip(&target).map(|(p, q)| p + step * (q - p)).collect());
            if next.flipped_faces(faces).is_empty() {
                if let Some(value) = mean_abs_d_area(mesh, &next) {
                    if value < current {
                        accepted = Some((next, value));
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        let Some((next, value)) = accepted else {
            rolled_back = true;
            break;
        };
        let rel = (current - value) / current.max(1e-300);
        map = next;
        current = value;
        trace.push(value);
        if rel < REL_TOL {
            break;
        }
    }
    if let Some(next) = polish(mesh, &map, &ordered) {
        if let Some(value) = mean_abs_d_area(mesh, &next) {
            if value < current {
                map = next;
                trace.push(value);
            }
        }
    }
    Ok(SemResult {
        map,
        trace,
        iterations,
        rolled_back,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    #[test]
    fn square_maps_authalically() {
        let m = shapes::flat_square_corners(12);
        let b = m.validate_topology().unwrap().boundary.unwrap();
        let r = sem_flatten(&m, &b).unwrap();
        for &c in &b {
            assert!((r.map.positions[c].norm() - 1.0).abs() < 1e-12);
        }
        r.map.check_no_flips(m.faces()).unwrap();
        assert!(*r.trace.last().unwrap() <= 0.05);
    }

    #[test]
    fn punctured_sphere_is_embedded() {
        let s = shapes::icosphere(3);
        let (a, b) = {
            let e = s.edge_faces();
            let key = e.keys().min().unwrap();
            (e[key][0], e[key][1])
        };
        let p = s.without_faces(&[a, b]).unwrap();
        let corners = p.validate_topology().unwrap().boundary.unwrap();
        assert_eq!(corners.len(), 4);
        let r = sem_flatten(&p, &corners).unwrap();
        r.map.check_no_flips(p.faces()).unwrap();
        assert!(r.map.signed_areas(p.faces()).iter().sum::<f64>() > 0.0);
        assert!(r.trace.windows(2).all(|w| w[1] < w[0]));
        assert!(r.trace.last().unwrap() <= &r.trace[0]);
    }

    #[test]
    fn corner_angles_follow_arc_length() {
        let m = shapes::flat_square_corners(6);
        let b = m.validate_topology().unwrap().boundary.unwrap();
        let corners = vec![b[2], b[3], b[0], b[1]];
        let r = sem_flatten(&m, &corners).unwrap();
        assert!((r.map.positions[b[2]] - Vec2::new(1.0, 0.0)).norm() < 1e-12);
        assert!((r.map.positions[b[3]] - Vec2::new(0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn three_corners_rejected() {
        let m = shapes::flat_square_corners(6);
        let b = m.validate_topology().unwrap().boundary.unwrap();
        assert!(matches!(sem_flatten(&m, &b[..3]), Err(CapError::Argument(_))));
    }
}
