use serde::{Deserialize, Serialize};

use crate::conformal::PlanarMap;
use crate::error::{CapError, Result};
use crate::linalg::{solve_spd, TripletMatrix};
use crate::mesh::TriangleMesh;
use crate::omt::power::{clip, contraction_heights, power_diagram, DomainPolygon, PowerCell, PowerDiagramState};
use crate::omt::sigma::sigma_length;
use crate::projection::{cap_plane, cap_point};
use crate::{Vec2, Vec3};

const MAX_BACKTRACKS: usize = 20;

/// Per-vertex target masses on the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetMeasure(pub Vec<f64>);

impl TargetMeasure {
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Vertex areas of `surface` rescaled to the sigma-mass of `omega`.
pub fn target_measure(surface: &TriangleMesh, omega: &DomainPolygon) -> Result<TargetMeasure> {
    let areas = surface.vertex_areas();
    if let Some(v) = areas.0.iter().position(|&a| !(a > 0.0)) {
        return Err(CapError::DegenerateGeometry {
            face: v,
            message: format!("vertex {v} has no incident area"),
        });
    }
    let scale = omega.mass() / areas.total();
    Ok(TargetMeasure(areas.0.iter().map(|a| a * scale).collect()))
}

/// Convex transport energy whose gradient in `h` is `w - tau`:
/// `sum_i int_cell_i (2 <x, y_i> - |y_i|^2 + h_i) sigma - sum_i tau_i h_i`.
pub fn omt_energy(state: &PowerDiagramState, tau: &TargetMeasure) -> f64 {
    let mut e = 0.0;
    for i in 0..state.sites.len() {
        let y = state.sites[i];
        let h = state.heights[i];
        e += 2.0 * y.dot(&state.moments[i]) - (y.norm_squared() - h) * state.masses[i] - tau.0[i] * h;
    }
    e
}

/// Where boundary vertices go once the cells have converged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BoundarySnap {
    /// Every vertex sits at its cell centroid.
    None,
    /// The listed vertices are pushed radially onto the circle of `radius`.
    Radial { vertices: Vec<usize>, radius: f64 },
    /// The listed vertices are placed at fixed points.
    Fixed(Vec<(usize, Vec2)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmtOptions {
    /// Stop when `max_i |w_i - tau_i| / tau_i <= tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Warm-start heights; ignored if they leave a cell empty.
    pub initial_heights: Option<Vec<f64>>,
    pub snap: BoundarySnap,
    /// Passes of local kernel moves allowed to undo folded faces in the
    /// final map; 0 keeps the centroids as they are.
    pub untangle_passes: usize,
    pub fold_test: FoldTest,
}

/// What counts as a folded face in the final map.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldTest {
    /// Planar image triangle not counterclockwise.
    #[default]
    Planar,
    /// Also folded once lifted onto the cap by `cap_point`.
    Cap,
}

impl FoldTest {
    pub fn folded(&self, map: &PlanarMap, faces: &[[usize; 3]]) -> Vec<usize> {
        match self {
            FoldTest::Planar => map.flipped_faces(faces),
            FoldTest::Cap => {
                let p: Vec<Vec3> = map.positions.iter().map(cap_point).collect();
                let areas = map.signed_areas(faces);
                faces
                    .iter()
                    .enumerate()
                    .filter(|(f, t)| !(areas[*f] > 0.0) || !(p[t[0]].dot(&p[t[1]].cross(&p[t[2]])) > 0.0))
                    .map(|(f, _)| f)
                    .collect()
            }
        }
    }
}

impl OmtOptions {
    pub fn new(tol: f64) -> Self {
        OmtOptions {
            tol,
            max_iter: 100,
            initial_heights: None,
            snap: BoundarySnap::None,
            untangle_passes: 0,
            fold_test: FoldTest::Planar,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmtIteration {
    pub iter: usize,
    pub energy: f64,
    /// `max_i |w_i - tau_i| / tau_i`.
    pub residual: f64,
    /// Newton step fraction accepted to reach this iterate (0 for the start).
    pub step: f64,
    /// `sum_i w_i`.
    pub total_mass: f64,
}

#[derive(Debug, Clone)]
pub struct OmtResult {
    pub map: PlanarMap,
    pub state: PowerDiagramState,
    pub tau: TargetMeasure,
    pub log: Vec<OmtIteration>,
}

pub fn omt_log_csv(log: &[OmtIteration]) -> String {
    let mut s = String::from("iter,energy,residual,step,total_mass\n");
    for r in log {
        s.push_str(&format!(
            "{},{:.17e},{:.6e},{:.6e},{:.17e}\n",
            r.iter, r.energy, r.residual, r.step, r.total_mass
        ));
    }
    s
}

fn residual(state: &PowerDiagramState, tau: &TargetMeasure) -> f64 {
    state.masses.iter().zip(&tau.0).map(|(w, t)| (w - t).abs() / t).fold(0.0, f64::max)
}

fn min_mass(state: &PowerDiagramState) -> (usize, f64) {
    state
        .masses
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &w)| if w < acc.1 { (i, w) } else { acc })
}

/// Sigma-weighted Laplacian of the diagram's adjacency: the Hessian of the energy.
fn hessian(state: &PowerDiagramState) -> TripletMatrix {
    let n = state.sites.len();
    let mut t = TripletMatrix::with_capacity(n, 8 * n);
    for (i, cell) in state.cells.iter().enumerate() {
        let k = cell.vertices.len();
        for e in 0..k {
            if let Some(j) = cell.neighbors[e] {
                let d = (state.sites[i] - state.sites[j]).norm();
                let c = 0.5 * sigma_length(&cell.vertices[e], &cell.vertices[(e + 1) % k]) / (2.0 * d);
                t.add(i, j, -c);
                t.add(j, i, -c);
                t.add(i, i, c);
                t.add(j, j, c);
            }
        }
    }
    t
}

fn initial_state(sites: &[Vec2], omega: &DomainPolygon, warm: Option<&Vec<f64>>) -> Result<PowerDiagramState> {
    if let Some(h) = warm {
        let s = power_diagram(sites, h, omega)?;
        if min_mass(&s).1 > 0.0 {
            return Ok(s);
        }
    }
    let mut shrink = 1.0;
    for _ in 0..60 {
        let s = power_diagram(sites, &contraction_heights(sites, omega, shrink), omega)?;
        if min_mass(&s).1 > 0.0 {
            return Ok(s);
        }
        shrink *= 0.8;
    }
    let s = power_diagram(sites, &contraction_heights(sites, omega, shrink), omega)?;
    Err(CapError::EmptyCell {
        site: min_mass(&s).0,
        message: "no starting heights give every site a cell".into(),
    })
}

/// Area-preserving map: finds heights whose power cells carry the target
/// masses, then moves every vertex to its cell's sigma-centroid.
///
/// Damped Newton on the convex energy. A step is halved while it raises the
/// energy or leaves some cell with less than half the smallest starting or
/// target mass.
pub fn omt_solve(initial: &PlanarMap, surface: &TriangleMesh, omega: &DomainPolygon, options: &OmtOptions) -> Result<OmtResult> {
    if !(options.tol > 0.0) {
        return Err(CapError::Argument(format!("tolerance {} must be positive", options.tol)));
    }
    if initial.len() != surface.num_vertices() {
        return Err(CapError::Argument(format!(
            "map has {} positions for {} vertices",
            initial.len(),
            surface.num_vertices()
        )));
    }
    let tau = target_measure(surface, omega)?;
    let sites = &initial.positions;
    let n = sites.len();
    let mut state = initial_state(sites, omega, options.initial_heights.as_ref())?;
    let floor = 0.5 * min_mass(&state).1.min(tau.0.iter().cloned().fold(f64::INFINITY, f64::min));
    let mut energy = omt_energy(&state, &tau);
    let mut log = vec![OmtIteration {
        iter: 0,
        energy,
        residual: residual(&state, &tau),
        step: 0.0,
        total_mass: state.total_mass(),
    }];
    loop {
        let res = log.last().unwrap().residual;
        if res <= options.tol {
            break;
        }
        if log.len() > options.max_iter {
            return Err(CapError::Solver(format!(
                "transport did not reach tolerance {} in {} iterations (residual {res:.3e})",
                options.tol, options.max_iter
            )));
        }
        let h = hessian(&state).to_csr();
        let free: Vec<usize> = (1..n).collect();
        let grad: Vec<f64> = (1..n).map(|i| tau.0[i] - state.masses[i]).collect();
        let delta = solve_spd(&h.submatrix(&free), &[grad])?.pop().unwrap();
        let mut step = 1.0;
        let mut accepted = None;
        let mut worst = 0;
        for _ in 0..MAX_BACKTRACKS {
            let mut heights = state.heights.clone();
            for (k, d) in delta.iter().enumerate() {
                heights[k + 1] += step * d;
            }
            let trial = power_diagram(sites, &heights, omega)?;
            let (arg, w) = min_mass(&trial);
            let e = omt_energy(&trial, &tau);
            if w >= floor && e <= energy {
                accepted = Some((trial, e));
                break;
            }
            worst = arg;
            step *= 0.5;
        }
        let Some((trial, e)) = accepted else {
            return Err(CapError::EmptyCell {
                site: worst,
                message: format!("no descent step keeps every cell above mass {floor:.3e}"),
            });
        };
        state = trial;
        energy = e;
        log.push(OmtIteration {
            iter: log.len(),
            energy,
            residual: residual(&state, &tau),
            step,
            total_mass: state.total_mass(),
        });
    }
    log::debug!("transport converged in {} iterations", log.len() - 1);

    let mut positions = state.centroids();
    match &options.snap {
        BoundarySnap::None => {}
        BoundarySnap::Radial { vertices, radius } => {
            for &v in vertices {
                let p = positions[v];
                positions[v] = p * (radius / p.norm());
            }
        }
        BoundarySnap::Fixed(points) => {
            for &(v, p) in points {
                positions[v] = p;
            }
        }
    }
    let mut map = PlanarMap::new(positions);
    if options.untangle_passes > 0 {
        let mut fixed = vec![false; n];
        for (&(a, b), fs) in surface.edge_faces().iter() {
            if fs.len() == 1 {
                fixed[a] = true;
                fixed[b] = true;
            }
        }
        match &options.snap {
            BoundarySnap::None => {}
            BoundarySnap::Radial { vertices, .. } => vertices.iter().for_each(|&v| fixed[v] = true),
            BoundarySnap::Fixed(points) => points.iter().for_each(|&(v, _)| fixed[v] = true),
        }
        untangle(&mut map, surface, &fixed, options.untangle_passes, options.fold_test);
    }
    let folded = options.fold_test.folded(&map, surface.faces());
    if let Some(&first) = folded.first() {
        return Err(CapError::Flip {
            count: folded.len(),
            first,
        });
    }
    Ok(OmtResult { map, state, tau, log })
}

const UNTANGLE_RINGS: usize = 3;

type ChartFn = Box<dyn Fn(&Vec2) -> Option<Vec2>>;

/// Centroid of the region from which `v` sees every incident face
/// counterclockwise, if that region has area. With the cap test the region
/// is found in the gnomonic chart at the lifted vertex, where flat
/// triangles on the sphere keep their orientation.
fn kernel_centroid(v: usize, incident: &[usize], faces: &[[usize; 3]], pos: &[Vec2], test: FoldTest) -> Option<Vec2> {
    let chart: ChartFn;
    let back: Box<dyn Fn(Vec2) -> Option<Vec2>>;
    match test {
        FoldTest::Planar => {
            chart = Box::new(|q| Some(*q));
            back = Box::new(Some);
        }
        FoldTest::Cap => {
            let n = cap_point(&pos[v]);
            let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
            let e1 = helper.cross(&n).normalize();
            let e2 = n.cross(&e1);
            chart = Box::new(move |q| {
                let x = cap_point(q);
                let d = x.dot(&n);
                (d > 1e-6).then(|| Vec2::new(x.dot(&e1) / d, x.dot(&e2) / d))
            });
            back = Box::new(move |u| cap_plane(&(n + e1 * u.x + e2 * u.y).normalize()).ok());
        }
    }
    let mut p = std::collections::HashMap::new();
    for &f in incident {
        for u in faces[f] {
            if u != v && !p.contains_key(&u) {
                p.insert(u, chart(&pos[u])?);
            }
        }
    }
    let ring: Vec<Vec2> = p.values().copied().collect();
    let (mut lo, mut hi) = (ring[0], ring[0]);
    for q in &ring {
        lo = lo.inf(q);
        hi = hi.sup(q);
    }
    let mut cell = PowerCell {
        vertices: vec![lo, Vec2::new(hi.x, lo.y), hi, Vec2::new(lo.x, hi.y)],
        neighbors: vec![None; 4],
    };
    for &f in incident {
        let t = faces[f];
        let k = t.iter().position(|&u| u == v)?;
        let (a, b) = (p[&t[(k + 1) % 3]], p[&t[(k + 2) % 3]]);
        let d = b - a;
        let n = Vec2::new(d.y, -d.x);
        cell = clip(&cell, n, n.dot(&a), None);
        if cell.vertices.len() < 3 {
            return None;
        }
    }
    let q = &cell.vertices;
    let (mut area, mut c) = (0.0, Vec2::zeros());
    for i in 0..q.len() {
        let (x, y) = (q[i], q[(i + 1) % q.len()]);
        let w = x.x * y.y - x.y * y.x;
        area += w;
        c += (x + y) * w;
    }
    if !(area > 0.0) {
        return None;
    }
    back(c / (3.0 * area))
}

/// Which faces around `v` are folded, and the smallest planar area.
fn local_folds(incident: &[usize], faces: &[[usize; 3]], p: &[Vec2], test: FoldTest) -> (Vec<bool>, f64) {
    let mut worst = f64::INFINITY;
    let folded = incident
        .iter()
        .map(|&f| {
            let [a, b, c] = faces[f];
            let (e, g) = (p[b] - p[a], p[c] - p[a]);
            let area = 0.5 * (e.x * g.y - e.y * g.x);
            worst = worst.min(area);
            let lifted = || {
                let (x, y, z) = (cap_point(&p[a]), cap_point(&p[b]), cap_point(&p[c]));
                x.dot(&y.cross(&z))
            };
            !(area > 0.0) || (test == FoldTest::Cap && !(lifted() > 0.0))
        })
        .collect();
    (folded, worst)
}

/// True if `b` folds no face that `a` leaves intact and is strictly better.
fn improves(a: &(Vec<bool>, f64), b: &(Vec<bool>, f64)) -> bool {
    if a.0.iter().zip(&b.0).any(|(x, y)| !x && *y) {
        return false;
    }
    let count = |s: &(Vec<bool>, f64)| s.0.iter().filter(|&&x| x).count();
    count(b) < count(a) || (count(b) == count(a) && b.1 > a.1)
}

/// Moves free vertices of folded faces to the centroid of their one-ring
/// kernel. The moved set grows by one ring (up to three) whenever ten passes
/// in a row leave folds behind.
fn untangle(map: &mut PlanarMap, surface: &TriangleMesh, fixed: &[bool], passes: usize, test: FoldTest) {
    let faces = surface.faces();
    let nbrs = surface.vertex_neighbors();
    let vf = surface.vertex_faces();
    let mut rings = 0;
    for pass in 0..passes {
        let flipped = test.folded(map, faces);
        if flipped.is_empty() {
            if pass > 0 {
                log::debug!("untangled the final map in {pass} passes");
            }
            return;
        }
        if pass > 0 && pass % 10 == 0 && rings < UNTANGLE_RINGS {
            rings += 1;
        }
        let mut active = vec![false; map.len()];
        let mut order = Vec::new();
        let mut frontier: Vec<usize> = flipped.iter().flat_map(|&f| faces[f]).collect();
        for _ in 0..=rings {
            let mut next = Vec::new();
            for &v in &frontier {
                if !active[v] {
                    active[v] = true;
                    order.push(v);
                    next.extend(nbrs[v].iter().copied());
                }
            }
            frontier = next;
        }
        for v in order {
            if fixed[v] {
                continue;
            }
            let mut candidates = Vec::new();
            candidates.extend(kernel_centroid(v, &vf[v], faces, &map.positions, FoldTest::Planar));
            if test == FoldTest::Cap {
                candidates.extend(kernel_centroid(v, &vf[v], faces, &map.positions, FoldTest::Cap));
                if candidates.len() == 2 {
                    candidates.push((candidates[0] + candidates[1]) * 0.5);
                }
            }
            let here = map.positions[v];
            let mean = nbrs[v].iter().map(|&u| map.positions[u]).sum::<Vec2>() / nbrs[v].len() as f64;
            candidates.push(mean);
            for k in 0..candidates.len() {
                let c = candidates[k];
                candidates.extend([0.5, 0.25].map(|t| here + (c - here) * t));
            }
            let mut best = (local_folds(&vf[v], faces, &map.positions, test), map.positions[v]);
            for c in candidates {
                let old = std::mem::replace(&mut map.positions[v], c);
                let score = local_folds(&vf[v], faces, &map.positions, test);
                map.positions[v] = old;
                if improves(&best.0, &score) {
                    best = (score, c);
                }
            }
            map.positions[v] = best.1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::harmonic_disk_map;
    use crate::metrics::{area_distortion, Image};
    use crate::projection::{cap_plane, cap_point};
    use crate::shapes;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_site_energy_is_zero() {
        let omega = DomainPolygon::regular(16, 1.0).unwrap();
        let s = power_diagram(&[Vec2::zeros()], &[0.0], &omega).unwrap();
        assert_eq!(omt_energy(&s, &TargetMeasure(vec![omega.mass()])), 0.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let omega = DomainPolygon::regular(40, 1.2).unwrap();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sites: Vec<Vec2> = (0..10)
                .map(|_| Vec2::new(rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8)))
                .collect();
            let h: Vec<f64> = (0..10).map(|_| rng.random_range(-0.05..0.05)).collect();
            let raw: Vec<f64> = (0..10).map(|_| rng.random_range(0.5..1.5)).collect();
            let total: f64 = raw.iter().sum();
            let tau = TargetMeasure(raw.iter().map(|t| t * omega.mass() / total).collect());
            let s = power_diagram(&sites, &h, &omega).unwrap();
            for i in 0..10 {
                let step = 1e-5;
                let mut hp = h.clone();
                hp[i] += step;
                let mut hm = h.clone();
                hm[i] -= step;
                let ep = omt_energy(&power_diagram(&sites, &hp, &omega).unwrap(), &tau);
                let em = omt_energy(&power_diagram(&sites, &hm, &omega).unwrap(), &tau);
                let fd = (ep - em) / (2.0 * step);
                let g = s.masses[i] - tau.0[i];
                assert!((fd - g).abs() <= 1e-5 * tau.0[i], "seed {seed} site {i}: {fd} vs {g}");
            }
        }
    }

    #[test]
    fn gauge_shift_leaves_energy_unchanged() {
        let omega = DomainPolygon::regular(24, 1.0).unwrap();
        let sites = vec![Vec2::new(0.1, 0.0), Vec2::new(-0.3, 0.2), Vec2::new(0.0, -0.4)];
        let tau = TargetMeasure(vec![omega.mass() / 3.0; 3]);
        let a = omt_energy(&power_diagram(&sites, &[0.0, 0.01, -0.02], &omega).unwrap(), &tau);
        let b = omt_energy(&power_diagram(&sites, &[0.5, 0.51, 0.48], &omega).unwrap(), &tau);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn target_measure_is_proportional() {
        let m = shapes::flat_square_grid(4, 1.0);
        let omega = DomainPolygon::regular(4096, 1.0).unwrap();
        let tau = target_measure(&m, &omega).unwrap();
        assert!((tau.total() - 2.0 * std::f64::consts::PI).abs() < 1e-5);
        assert!((tau.total() - omega.mass()).abs() <= 1e-12 * omega.mass());
        let a = m.vertex_areas();
        for i in 0..a.0.len() {
            assert!((tau.0[i] / tau.0[0] - a.0[i] / a.0[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_tolerance_rejected() {
        let m = shapes::geodesic_cap(1.0, 100).unwrap();
        let map = harmonic_disk_map(&m).unwrap();
        let omega = DomainPolygon::regular(16, 1.0).unwrap();
        assert!(matches!(
            omt_solve(&map, &m, &omega, &OmtOptions::new(0.0)),
            Err(CapError::Argument(_))
        ));
    }

    fn boundary_polygon(m: &TriangleMesh, map: &PlanarMap) -> (Vec<usize>, DomainPolygon) {
        let b = m.validate_topology().unwrap().boundary.unwrap();
        let poly = DomainPolygon::new(b.iter().map(|&v| map.positions[v]).collect()).unwrap();
        (b, poly)
    }

    #[test]
    fn cap_round_trip_is_fixed_point() {
        // The exact cap preimage already balances the masses up to discretization.
        let m = shapes::geodesic_cap(1.2, 1500).unwrap();
        let map = PlanarMap::new(m.vertices().iter().map(|p| cap_plane(p).unwrap()).collect());
        let (b, omega) = boundary_polygon(&m, &map);
        let r = map.positions[b[0]].norm();
        let mut opt = OmtOptions::new(1e-6);
        opt.snap = BoundarySnap::Radial { vertices: b, radius: r };
        let out = omt_solve(&map, &m, &omega, &opt).unwrap();
        for w in out.log.windows(2) {
            assert!(w[1].energy <= w[0].energy);
        }
        for it in &out.log {
            assert!((it.total_mass - omega.mass()).abs() <= 1e-9 * omega.mass());
        }
        assert!(out.log.last().unwrap().residual <= 1e-6);
    }

    #[test]
    fn cap_transport_preserves_area() {
        let m = shapes::geodesic_cap(std::f64::consts::FRAC_PI_2, 3000).unwrap();
        let init = harmonic_disk_map(&m).unwrap();
        let (b, omega) = boundary_polygon(&m, &init);
        let mut opt = OmtOptions::new(1e-4);
        opt.snap = BoundarySnap::Radial { vertices: b, radius: 1.0 };
        let out = omt_solve(&init, &m, &omega, &opt).unwrap();
        let sphere: Vec<_> = out.map.positions.iter().map(cap_point).collect();
        let d = area_distortion(&m, Image::Spherical(&sphere)).unwrap();
        let mean = d.iter().map(|x| x.abs()).sum::<f64>() / d.len() as f64;
        assert!(mean <= 0.02, "{mean}");
    }
}
