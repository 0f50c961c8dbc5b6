//! Stereographic projection and spherical-cap geometry.
//!
//! [`stereographic_project`] and [`inverse_stereographic`] are the textbook
//! pair through the north pole: the unit disk goes to the southern
//! hemisphere. The parameterization pipeline needs the disk of radius `r` to
//! land on the cap `Z >= Z*` with `Z* = (1 - r^2) / (1 + r^2)` instead, so it
//! uses [`cap_point`] / [`cap_plane`], which compose the pair with the
//! reflection `Z -> -Z`. That composition is orientation preserving for
//! outward normals.

use serde::{Deserialize, Serialize};

use crate::error::{CapError, Result};
use crate::{Vec2, Vec3};

/// Points this close to the projection pole are rejected.
pub const POLE_GUARD: f64 = 1e-12;

const UNIT_TOL: f64 = 1e-9;

/// Projection from the north pole onto the plane `Z = 0`.
pub fn stereographic_project(p: &Vec3) -> Result<Vec2> {
    if (p.norm() - 1.0).abs() > UNIT_TOL {
        return Err(CapError::Argument(format!("point {p:?} is not on the unit sphere")));
    }
    if p.z >= 1.0 - POLE_GUARD {
        return Err(CapError::Pole);
    }
    Ok(project_unit(p.x, p.y, p.z))
}

/// On the unit sphere 1/(1 - Z) = (1 + Z)/(X^2 + Y^2); the second form keeps
/// full relative precision near the pole.
fn project_unit(x: f64, y: f64, z: f64) -> Vec2 {
    if z <= 0.0 {
        Vec2::new(x / (1.0 - z), y / (1.0 - z))
    } else {
        let s = (1.0 + z) / (x * x + y * y);
        Vec2::new(x * s, y * s)
    }
}

/// Inverse of [`stereographic_project`].
pub fn inverse_stereographic(q: &Vec2) -> Vec3 {
    let s = q.norm_squared();
    let d = 1.0 + s;
    Vec3::new(2.0 * q.x / d, 2.0 * q.y / d, (s - 1.0) / d)
}

/// Plane to cap: the disk of radius `r` maps onto `Z >= (1 - r^2) / (1 + r^2)`.
pub fn cap_point(q: &Vec2) -> Vec3 {
    let s = q.norm_squared();
    let d = 1.0 + s;
    Vec3::new(2.0 * q.x / d, 2.0 * q.y / d, (1.0 - s) / d)
}

/// Cap to plane, the inverse of [`cap_point`]. The pole is at `Z = -1`.
pub fn cap_plane(p: &Vec3) -> Result<Vec2> {
    stereographic_project(&Vec3::new(p.x, p.y, -p.z))
}

/// Same as [`cap_plane`] without the unit-norm check, for points already
/// known to be on the sphere up to rounding.
pub(crate) fn cap_plane_unchecked(p: &Vec3) -> Vec2 {
    project_unit(p.x, p.y, -p.z)
}

/// Pullback density of the sphere area under [`cap_point`]: `4 / (1 + |q|^2)^2`.
pub fn sigma_density(q: &Vec2) -> f64 {
    let d = 1.0 + q.norm_squared();
    4.0 / (d * d)
}

/// The cap `Z >= zstar`, described three equivalent ways.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapSpec {
    pub zstar: f64,
    pub radius: f64,
    pub theta_star: f64,
}

impl CapSpec {
    pub fn from_zstar(zstar: f64) -> Result<CapSpec> {
        if !(zstar > -1.0 && zstar < 1.0) {
            return Err(CapError::Argument(format!("Z* = {zstar} must lie in (-1, 1)")));
        }
        Ok(CapSpec {
            zstar,
            radius: ((1.0 - zstar) / (1.0 + zstar)).sqrt(),
            theta_star: zstar.acos(),
        })
    }

    /// Whether `p` lies on the cap within `tol` in Z.
    pub fn contains(&self, p: &Vec3, tol: f64) -> bool {
        p.z >= self.zstar - tol
    }
}

pub fn cap_from_radius(r: f64) -> Result<CapSpec> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(CapError::Argument(format!("cap radius {r} must be positive and finite")));
    }
    let r2 = r * r;
    let zstar = (1.0 - r2) / (1.0 + r2);
    Ok(CapSpec {
        zstar,
        radius: r,
        theta_star: zstar.acos(),
    })
}

/// Area of the cap, `2 pi (1 - Z*)`.
pub fn cap_area(spec: &CapSpec) -> f64 {
    2.0 * std::f64::consts::PI * (1.0 - spec.zstar)
}

/// Signed area of the spherical triangle (a, b, c) on the unit sphere,
/// positive when counterclockwise seen from outside.
pub fn spherical_triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let num = a.dot(&b.cross(c));
    let den = 1.0 + a.dot(b) + b.dot(c) + c.dot(a);
    2.0 * num.atan2(den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn forward_examples() {
        assert_eq!(stereographic_project(&Vec3::new(0.0, 0.0, -1.0)).unwrap(), Vec2::new(0.0, 0.0));
        assert_eq!(stereographic_project(&Vec3::new(1.0, 0.0, 0.0)).unwrap(), Vec2::new(1.0, 0.0));
        let q = stereographic_project(&Vec3::new(0.6, 0.0, 0.8)).unwrap();
        assert!((q - Vec2::new(3.0, 0.0)).norm() < 1e-12);
        assert!(matches!(stereographic_project(&Vec3::z()), Err(CapError::Pole)));
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(inverse_stereographic(&Vec2::zeros()), Vec3::new(0.0, 0.0, -1.0));
        assert_eq!(inverse_stereographic(&Vec2::new(1.0, 0.0)), Vec3::new(1.0, 0.0, 0.0));
        let p = inverse_stereographic(&Vec2::new(3.0, 0.0));
        assert!((p - Vec3::new(0.6, 0.0, 0.8)).norm() < 1e-15);
    }

    #[test]
    fn cap_from_radius_examples() {
        assert_eq!(cap_from_radius(1.0).unwrap().zstar, 0.0);
        assert!((cap_from_radius(3f64.sqrt()).unwrap().zstar + 0.5).abs() < 1e-15);
        assert!((cap_from_radius(1.0 / 3f64.sqrt()).unwrap().zstar - 0.5).abs() < 1e-15);
        assert!(cap_from_radius(0.0).is_err());
        assert!(cap_from_radius(-1.0).is_err());
    }

    #[test]
    fn cap_area_examples() {
        assert!((cap_area(&CapSpec::from_zstar(0.0).unwrap()) - 2.0 * PI).abs() < 1e-15);
        assert!((cap_area(&CapSpec::from_zstar(-1.0 + 1e-15).unwrap()) - 4.0 * PI).abs() < 1e-12);
        assert!((cap_area(&cap_from_radius(2.0).unwrap()) - 16.0 * PI / 5.0).abs() < 1e-13);
    }

    #[test]
    fn cap_area_matches_radial_integral() {
        // Integrate 4 / (1 + rho^2)^2 * rho over [0, 2] with composite Simpson.
        let n = 2000;
        let h = 2.0 / n as f64;
        let f = |p: f64| 4.0 * p / (1.0 + p * p).powi(2);
        let mut s = f(0.0) + f(2.0);
        for i in 1..n {
            s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let integral = 2.0 * PI * s * h / 3.0;
        assert!((integral - cap_area(&cap_from_radius(2.0).unwrap())).abs() < 1e-10);
    }

    #[test]
    fn radius_circle_maps_to_zstar() {
        for &r in &[0.3, 1.0, 1.7, 4.0] {
            let spec = cap_from_radius(r).unwrap();
            assert!((spec.zstar - spec.theta_star.cos()).abs() < 1e-12);
            for k in 0..16 {
                let a = k as f64 * PI / 8.0;
                let p = cap_point(&Vec2::new(r * a.cos(), r * a.sin()));
                assert!((p.z - spec.zstar).abs() < 1e-12);
            }
            let back = CapSpec::from_zstar(spec.zstar).unwrap();
            assert!((back.radius - r).abs() < 1e-12 * r.max(1.0));
        }
    }

    #[test]
    fn cap_point_preserves_orientation() {
        let (a, b, c) = (Vec2::new(0.1, 0.1), Vec2::new(0.2, 0.1), Vec2::new(0.1, 0.2));
        let (pa, pb, pc) = (cap_point(&a), cap_point(&b), cap_point(&c));
        let n = (pb - pa).cross(&(pc - pa));
        assert!(n.dot(&((pa + pb + pc) / 3.0)) > 0.0);
        assert!(spherical_triangle_area(&pa, &pb, &pc) > 0.0);
    }

    #[test]
    fn octant_triangle_area() {
        let a = spherical_triangle_area(&Vec3::x(), &Vec3::y(), &Vec3::z());
        assert!((a - PI / 2.0).abs() < 1e-14);
    }

    #[test]
    fn monotone_in_radius() {
        let mut last = 1.0;
        for k in 1..100 {
            let z = cap_from_radius(k as f64 * 0.05).unwrap().zstar;
            assert!(z < last);
            last = z;
        }
    }

    proptest! {
        #[test]
        fn plane_round_trip(x in -1e6f64..1e6, y in -1e6f64..1e6) {
            let q = Vec2::new(x, y);
            let back = stereographic_project(&inverse_stereographic(&q)).unwrap();
            prop_assert!((back - q).norm() <= 1e-12 * q.norm().max(1.0));
            let back = cap_plane(&cap_point(&q)).unwrap();
            prop_assert!((back - q).norm() <= 1e-12 * q.norm().max(1.0));
        }

        #[test]
        fn sphere_round_trip(theta in 0.0f64..PI, phi in -PI..PI) {
            let p = Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
            prop_assume!(p.z < 1.0 - 1e-9);
            let back = inverse_stereographic(&stereographic_project(&p).unwrap());
            prop_assert!((back - p).norm() < 1e-9);
        }

        #[test]
        fn inverse_is_unit(x in -1e3f64..1e3, y in -1e3f64..1e3) {
            prop_assert!((inverse_stereographic(&Vec2::new(x, y)).norm() - 1.0).abs() < 1e-12);
        }
    }
}
