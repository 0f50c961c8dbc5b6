use std::collections::HashMap;

use crate::conformal::beltrami::{face_beltrami, hat_gradients, is_degenerate};
use crate::conformal::{BeltramiField, Chart, PlanarMap};
use crate::error::{CapError, Result};
use crate::linalg::{solve_dirichlet, CsrMatrix, TripletMatrix};
use crate::mesh::TriangleMesh;
use crate::Vec2;

/// Symmetric 2x2 coefficient `[m11, m12, m22]` of the Beltrami operator for `mu = a + ib`.
pub(crate) fn beltrami_tensor(a: f64, b: f64) -> [f64; 3] {
    let d = 1.0 - a * a - b * b;
    [
        ((1.0 - a) * (1.0 - a) + b * b) / d,
        -2.0 * b / d,
        ((1.0 + a) * (1.0 + a) + b * b) / d,
    ]
}

/// Assembles `K_ij = sum_T |T| grad(phi_i)^T M_T grad(phi_j)` over the domain chart.
pub(crate) fn stiffness(faces: &[[usize; 3]], domain: Chart, tensor: impl Fn(usize) -> [f64; 3]) -> Result<CsrMatrix> {
    let mut t = TripletMatrix::with_capacity(domain.len(), faces.len() * 9);
    for (f, tri) in faces.iter().enumerate() {
        let local = domain.local(tri);
        let (g, a2) = hat_gradients(&local);
        if is_degenerate(&local, a2) {
            return Err(CapError::DegenerateGeometry {
                face: f,
                message: "domain triangle has no area".into(),
            });
        }
        let area = 0.5 * a2.abs();
        let [m11, m12, m22] = tensor(f);
        for i in 0..3 {
            let mg = (m11 * g[i].x + m12 * g[i].y, m12 * g[i].x + m22 * g[i].y);
            for j in 0..3 {
                t.add(tri[i], tri[j], area * (mg.0 * g[j].x + mg.1 * g[j].y));
            }
        }
    }
    Ok(t.to_csr())
}

/// Directed boundary edges following face orientation.
pub(crate) fn boundary_edges(faces: &[[usize; 3]]) -> Vec<(usize, usize)> {
    let mut directed: HashMap<(usize, usize), ()> = HashMap::with_capacity(faces.len() * 3);
    for tri in faces {
        for k in 0..3 {
            directed.insert((tri[k], tri[(k + 1) % 3]), ());
        }
    }
    let mut out: Vec<(usize, usize)> = directed
        .keys()
        .filter(|&&(a, b)| !directed.contains_key(&(b, a)))
        .copied()
        .collect();
    out.sort_unstable();
    out
}

fn check_constraints(n: usize, boundary: &[(usize, usize)], constraints: &[(usize, Vec2)]) -> Result<()> {
    if boundary.is_empty() {
        return Err(CapError::Constraint("mesh has no boundary; constraints cannot fix the map".into()));
    }
    if constraints.len() < 2 {
        return Err(CapError::Constraint(format!(
            "{} constraint(s) given; at least 2 are needed",
            constraints.len()
        )));
    }
    let mut seen = vec![false; n];
    for &(v, p) in constraints {
        if v >= n {
            return Err(CapError::Constraint(format!("constraint vertex {v} out of range")));
        }
        if seen[v] {
            return Err(CapError::Constraint(format!("vertex {v} constrained twice")));
        }
        if !p.iter().all(|c| c.is_finite()) {
            return Err(CapError::Constraint(format!("constraint on vertex {v} is not finite")));
        }
        seen[v] = true;
    }
    if constraints.iter().all(|(_, p)| *p == constraints[0].1) {
        return Err(CapError::Constraint("all constraint positions coincide".into()));
    }
    if !boundary.iter().any(|&(a, _)| seen[a]) {
        return Err(CapError::Constraint("no constraint lies on the boundary".into()));
    }
    Ok(())
}

/// Solves the discrete Beltrami equation for the map with coefficient `mu`
/// relative to `domain`.
///
/// When every boundary vertex is constrained, `u` and `v` are solved
/// independently. Otherwise the remaining boundary is free and the map
/// minimizes the quasi-conformal energy `1/2 (u'Ku + v'Kv) - area`.
pub fn lbs_reconstruct(faces: &[[usize; 3]], domain: Chart, mu: &BeltramiField, constraints: &[(usize, Vec2)]) -> Result<PlanarMap> {
    if mu.0.len() != faces.len() {
        return Err(CapError::Argument(format!("{} coefficients for {} faces", mu.0.len(), faces.len())));
    }
    for (f, m) in mu.0.iter().enumerate() {
        let modulus = m.norm();
        if !(modulus < 1.0) {
            return Err(CapError::InvalidCoefficient { face: f, modulus });
        }
    }
    let n = domain.len();
    let boundary = boundary_edges(faces);
    check_constraints(n, &boundary, constraints)?;
    let k = stiffness(faces, domain, |f| beltrami_tensor(mu.0[f].re, mu.0[f].im))?;

    let mut pinned = vec![false; n];
    for &(v, _) in constraints {
        pinned[v] = true;
    }
    let fixed: Vec<usize> = constraints.iter().map(|c| c.0).collect();
    if boundary.iter().all(|&(a, _)| pinned[a]) {
        let xs = constraints.iter().map(|c| c.1.x).collect();
        let ys = constraints.iter().map(|c| c.1.y).collect();
        let sol = solve_dirichlet(&k, &fixed, &[xs, ys], &[vec![0.0; n], vec![0.0; n]])?;
        return Ok(PlanarMap::new((0..n).map(|i| Vec2::new(sol[0][i], sol[1][i])).collect()));
    }

    // Interleaved unknowns (u_0, v_0, u_1, v_1, ...).
    let mut t = TripletMatrix::with_capacity(2 * n, 2 * k.nnz() + 4 * boundary.len());
    for i in 0..n {
        for (j, w) in k.row(i) {
            t.add(2 * i, 2 * j, w);
            t.add(2 * i + 1, 2 * j + 1, w);
        }
    }
    for &(a, b) in &boundary {
        // Image area is 1/2 sum (u_a v_b - u_b v_a) over boundary edges.
        t.add_sym(2 * a, 2 * b + 1, -0.5);
        t.add_sym(2 * b, 2 * a + 1, 0.5);
    }
    let coupled = t.to_csr();
    let fixed2: Vec<usize> = fixed.iter().flat_map(|&v| [2 * v, 2 * v + 1]).collect();
    let vals: Vec<f64> = constraints.iter().flat_map(|c| [c.1.x, c.1.y]).collect();
    let sol = solve_dirichlet(&coupled, &fixed2, &[vals], &[vec![0.0; 2 * n]]).map_err(|e| match e {
        CapError::Solver(m) => CapError::Constraint(format!("constraints do not fix the map: {m}")),
        other => other,
    })?;
    let x = &sol[0];
    Ok(PlanarMap::new((0..n).map(|i| Vec2::new(x[2 * i], x[2 * i + 1])).collect()))
}

/// Rebuilds `map` with its own Beltrami coefficient (relative to `surface`)
/// scaled by `lambda`.
pub fn qc_scale_compose(surface: &TriangleMesh, map: &PlanarMap, lambda: f64, constraints: &[(usize, Vec2)]) -> Result<PlanarMap> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(CapError::Argument(format!("lambda = {lambda} is outside [0, 1]")));
    }
    if map.len() != surface.num_vertices() {
        return Err(CapError::Argument(format!(
            "map has {} positions for {} vertices",
            map.len(),
            surface.num_vertices()
        )));
    }
    let domain = Chart::Space(surface.vertices());
    let mu = face_beltrami(surface.faces(), domain, map.chart())?.scaled(lambda);
    lbs_reconstruct(surface.faces(), domain, &mu, constraints)
}
