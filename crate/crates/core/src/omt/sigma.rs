use crate::error::{CapError, Result};
use crate::projection::sigma_density;
use crate::Vec2;

/// `int_0^1 dt / (1 + |p + t e|^2)` in closed form.
fn edge_kernel(p: &Vec2, e: &Vec2) -> f64 {
    let a = e.norm_squared();
    if a == 0.0 {
        return 0.0;
    }
    let pe = p.dot(e);
    let d = 4.0 * (a * (1.0 + p.norm_squared()) - pe * pe);
    let sd = d.sqrt();
    let u = (2.0 * a + 2.0 * pe) / sd;
    let v = 2.0 * pe / sd;
    // atan(u) - atan(v), with u - v = 2a / sqrt(D) formed without cancellation.
    2.0 / sd * (2.0 * a / sd).atan2(1.0 + u * v)
}

/// Mass and first moments `(int sigma, int x sigma, int y sigma)` of a
/// polygon, exact up to rounding. Uses the potentials
/// `sigma = d(2 (x dy - y dx) / (1 + |x|^2))`,
/// `x sigma = d(-2 dy / (1 + |x|^2))` and `y sigma = d(2 dx / (1 + |x|^2))`.
pub(crate) fn sigma_moments(poly: &[Vec2]) -> (f64, Vec2) {
    let n = poly.len();
    if n < 3 {
        return (0.0, Vec2::zeros());
    }
    let mut mass = 0.0;
    let mut m1 = Vec2::zeros();
    for k in 0..n {
        let p = poly[k];
        let q = poly[(k + 1) % n];
        let e = q - p;
        let i = edge_kernel(&p, &e);
        mass += 2.0 * (p.x * q.y - p.y * q.x) * i;
        m1 += Vec2::new(-2.0 * e.y * i, 2.0 * e.x * i);
    }
    (mass, m1)
}

/// Integral of the density `4 / (1 + |x|^2)^2` over a polygon: the area of
/// its image on the sphere. Signed by orientation; degenerate polygons give 0.
pub fn sigma_mass(poly: &[Vec2]) -> f64 {
    sigma_moments(poly).0
}

/// Density-weighted centroid of a polygon.
pub fn sigma_centroid(poly: &[Vec2]) -> Result<Vec2> {
    let (m, m1) = sigma_moments(poly);
    if !(m.abs() > 0.0) {
        return Err(CapError::EmptyCell {
            site: 0,
            message: "polygon has no mass".into(),
        });
    }
    Ok(m1 / m)
}

const GL_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

/// Line integral of the density along a segment (5-point Gauss-Legendre).
pub(crate) fn sigma_length(p: &Vec2, q: &Vec2) -> f64 {
    let e = q - p;
    let mid = (p + q) * 0.5;
    let s: f64 = GL_NODES
        .iter()
        .zip(&GL_WEIGHTS)
        .map(|(t, w)| w * sigma_density(&(mid + e * (0.5 * t))))
        .sum();
    0.5 * e.norm() * s
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn ngon(n: usize, r: f64, c: Vec2) -> Vec<Vec2> {
        (0..n)
            .map(|k| c + r * Vec2::new((k as f64 * 2.0 * PI / n as f64).cos(), (k as f64 * 2.0 * PI / n as f64).sin()))
            .collect()
    }

    /// Tensor Gauss-Legendre on a triangle via the Duffy map, iterated on a
    /// uniform subdivision.
    fn quad_triangle(a: Vec2, b: Vec2, c: Vec2, f: &dyn Fn(Vec2) -> f64, depth: usize) -> f64 {
        if depth > 0 {
            let (ab, bc, ca) = ((a + b) / 2.0, (b + c) / 2.0, (c + a) / 2.0);
            return quad_triangle(a, ab, ca, f, depth - 1)
                + quad_triangle(ab, b, bc, f, depth - 1)
                + quad_triangle(ca, bc, c, f, depth - 1)
                + quad_triangle(ab, bc, ca, f, depth - 1);
        }
        let area2 = ((b - a).x * (c - a).y - (b - a).y * (c - a).x).abs();
        let mut s = 0.0;
        for (ui, wi) in GL_NODES.iter().zip(&GL_WEIGHTS) {
            for (vi, wj) in GL_NODES.iter().zip(&GL_WEIGHTS) {
                let (u, v) = ((ui + 1.0) / 2.0, (vi + 1.0) / 2.0);
                let p = a + (b - a) * u + (c - a) * (u * v) - (b - a) * (u * v);
                s += wi * wj * u * f(p) / 4.0;
            }
        }
        s * area2
    }

    #[test]
    fn disks() {
        assert!((sigma_mass(&ngon(4096, 1.0, Vec2::zeros())) - 2.0 * PI).abs() < 1e-5);
        assert!((sigma_mass(&ngon(4096, 2.0, Vec2::zeros())) - 16.0 * PI / 5.0).abs() < 1e-4);
    }

    #[test]
    fn triangle_matches_quadrature() {
        let (a, b, c) = (Vec2::zeros(), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0));
        let q = quad_triangle(a, b, c, &|p| sigma_density(&p), 4);
        assert!((sigma_mass(&[a, b, c]) - q).abs() < 1e-8, "{} {q}", sigma_mass(&[a, b, c]));
        let qx = quad_triangle(a, b, c, &|p| p.x * sigma_density(&p), 4);
        let qy = quad_triangle(a, b, c, &|p| p.y * sigma_density(&p), 4);
        let (_, m1) = sigma_moments(&[a, b, c]);
        assert!((m1.x - qx).abs() < 1e-8 && (m1.y - qy).abs() < 1e-8);
    }

    #[test]
    fn centroids() {
        let sym = vec![
            Vec2::new(-1.0, -0.5),
            Vec2::new(1.0, -0.5),
            Vec2::new(1.0, 0.5),
            Vec2::new(-1.0, 0.5),
        ];
        assert!(sigma_centroid(&sym).unwrap().norm() < 1e-12);
        let sq = vec![Vec2::new(0.9, 0.9), Vec2::new(1.1, 0.9), Vec2::new(1.1, 1.1), Vec2::new(0.9, 1.1)];
        let m =
            quad_triangle(sq[0], sq[1], sq[2], &|p| sigma_density(&p), 3) + quad_triangle(sq[0], sq[2], sq[3], &|p| sigma_density(&p), 3);
        let mx = quad_triangle(sq[0], sq[1], sq[2], &|p| p.x * sigma_density(&p), 3)
            + quad_triangle(sq[0], sq[2], sq[3], &|p| p.x * sigma_density(&p), 3);
        let my = quad_triangle(sq[0], sq[1], sq[2], &|p| p.y * sigma_density(&p), 3)
            + quad_triangle(sq[0], sq[2], sq[3], &|p| p.y * sigma_density(&p), 3);
        assert!((sigma_centroid(&sq).unwrap() - Vec2::new(mx / m, my / m)).norm() < 1e-6);
        let tiny = ngon(7, 5e-5, Vec2::new(2.0, 0.0));
        let euclid = tiny.iter().sum::<Vec2>() / 7.0;
        assert!((sigma_centroid(&tiny).unwrap() - euclid).norm() < 1e-8);
        assert!(matches!(
            sigma_centroid(&[Vec2::zeros(), Vec2::new(1.0, 0.0)]),
            Err(CapError::EmptyCell { .. })
        ));
    }

    #[test]
    fn degenerate_polygon_has_no_mass() {
        assert_eq!(sigma_mass(&[Vec2::zeros(), Vec2::new(1.0, 1.0)]), 0.0);
        let line = [Vec2::zeros(), Vec2::new(1.0, 1.0), Vec2::new(2.0, 2.0)];
        assert!(sigma_mass(&line).abs() < 1e-15);
    }

    #[test]
    fn length_of_unit_segment_from_origin() {
        // int_0^1 4 / (1 + t^2)^2 dt = 1 + pi / 2
        let l = sigma_length(&Vec2::zeros(), &Vec2::new(1.0, 0.0));
        assert!((l - (1.0 + PI / 2.0)).abs() < 1e-3);
    }
}
