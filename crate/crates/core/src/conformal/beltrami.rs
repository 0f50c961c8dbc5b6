use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CapError, Result};
use crate::{Vec2, Vec3};

/// Per-vertex coordinates on either side of a map.
#[derive(Debug, Clone, Copy)]
pub enum Chart<'a> {
    Plane(&'a [Vec2]),
    /// Triangles in space; each is flattened isometrically into its own
    /// frame with edge v0 -> v1 along +x and v2 on the +y side.
    Space(&'a [Vec3]),
}

impl Chart<'_> {
    pub fn len(&self) -> usize {
        match self {
            Chart::Plane(p) => p.len(),
            Chart::Space(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Corner coordinates of face `t` in a 2-D frame.
    pub fn local(&self, t: &[usize; 3]) -> [Vec2; 3] {
        match self {
            Chart::Plane(p) => [p[t[0]], p[t[1]], p[t[2]]],
            Chart::Space(p) => {
                let (a, b, c) = (p[t[0]], p[t[1]], p[t[2]]);
                let e = b - a;
                let len = e.norm();
                let e1 = e / len;
                let n = e.cross(&(c - a));
                let nn = n.norm();
                if nn == 0.0 || len == 0.0 {
                    return [Vec2::zeros(); 3];
                }
                let e2 = (n / nn).cross(&e1);
                let d = c - a;
                [Vec2::zeros(), Vec2::new(len, 0.0), Vec2::new(d.dot(&e1), d.dot(&e2))]
            }
        }
    }
}

/// Per-face complex Beltrami coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeltramiField(pub Vec<Complex64>);

impl BeltramiField {
    pub fn scaled(&self, s: f64) -> BeltramiField {
        BeltramiField(self.0.iter().map(|m| m * s).collect())
    }

    pub fn moduli(&self) -> Vec<f64> {
        self.0.iter().map(|m| m.norm()).collect()
    }
}

pub fn mean_abs_mu(mu: &BeltramiField) -> f64 {
    if mu.0.is_empty() {
        return 0.0;
    }
    mu.0.iter().map(|m| m.norm()).sum::<f64>() / mu.0.len() as f64
}

/// Gradients of the three hat functions of a 2-D triangle and its doubled signed area.
pub(crate) fn hat_gradients(s: &[Vec2; 3]) -> ([Vec2; 3], f64) {
    let a2 = (s[1].x - s[0].x) * (s[2].y - s[0].y) - (s[1].y - s[0].y) * (s[2].x - s[0].x);
    let perp = |v: Vec2| Vec2::new(-v.y, v.x);
    let g = [perp(s[2] - s[1]) / a2, perp(s[0] - s[2]) / a2, perp(s[1] - s[0]) / a2];
    (g, a2)
}

pub(crate) fn is_degenerate(s: &[Vec2; 3], a2: f64) -> bool {
    let e = (s[1] - s[0])
        .norm_squared()
        .max((s[2] - s[1]).norm_squared())
        .max((s[0] - s[2]).norm_squared());
    !(a2.abs() > 1e-14 * e) || !a2.is_finite()
}

/// Beltrami coefficient of the affine map between two triangles.
pub(crate) fn affine_mu(src: &[Vec2; 3], dst: &[Vec2; 3], face: usize) -> Result<Complex64> {
    let (g, a2) = hat_gradients(src);
    if src == dst && !is_degenerate(src, a2) {
        return Ok(Complex64::new(0.0, 0.0));
    }
    if is_degenerate(src, a2) {
        return Err(CapError::DegenerateGeometry {
            face,
            message: "source triangle has no area".into(),
        });
    }
    let du = g[0] * dst[0].x + g[1] * dst[1].x + g[2] * dst[2].x;
    let dv = g[0] * dst[0].y + g[1] * dst[1].y + g[2] * dst[2].y;
    let fz = Complex64::new(0.5 * (du.x + dv.y), 0.5 * (dv.x - du.y));
    let fzb = Complex64::new(0.5 * (du.x - dv.y), 0.5 * (dv.x + du.y));
    let scale = du.norm() + dv.norm();
    if !(fz.norm() > 1e-14 * scale) {
        return Err(CapError::SingularMap { face });
    }
    Ok(fzb / fz)
}

/// Beltrami coefficient `f_zbar / f_z` of the piecewise-affine map taking
/// `source` to `target`, one value per face.
pub fn face_beltrami(faces: &[[usize; 3]], source: Chart, target: Chart) -> Result<BeltramiField> {
    if source.len() != target.len() {
        return Err(CapError::Argument(format!(
            "source has {} vertices, target has {}",
            source.len(),
            target.len()
        )));
    }
    let mu: Result<Vec<Complex64>> = faces
        .par_iter()
        .enumerate()
        .map(|(f, t)| affine_mu(&source.local(t), &target.local(t), f))
        .collect();
    Ok(BeltramiField(mu?))
}
