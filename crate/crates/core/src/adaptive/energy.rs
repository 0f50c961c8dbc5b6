use serde::{Deserialize, Serialize};

use crate::conformal::{face_beltrami, Chart, PlanarMap};
use crate::error::Result;
use crate::mesh::TriangleMesh;
use crate::projection::{cap_point, spherical_triangle_area};

/// Area measure over which the squared Beltrami modulus is averaged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnergyMeasure {
    /// Planar image area.
    #[default]
    Planar,
    /// Area of the image on the cap.
    Cap,
}

/// Area-weighted mean of `|mu|^2` for the map from the planar image back
/// onto the surface.
pub fn conformal_energy(surface: &TriangleMesh, planar: &PlanarMap) -> Result<f64> {
    conformal_energy_with(surface, planar, EnergyMeasure::Planar)
}

pub fn conformal_energy_with(surface: &TriangleMesh, planar: &PlanarMap, measure: EnergyMeasure) -> Result<f64> {
    let faces = surface.faces();
    planar.check_no_flips(faces)?;
    let mu = face_beltrami(faces, planar.chart(), Chart::Space(surface.vertices()))?;
    let weights: Vec<f64> = match measure {
        EnergyMeasure::Planar => planar.signed_areas(faces).iter().map(|a| 0.5 * a).collect(),
        EnergyMeasure::Cap => {
            let p: Vec<_> = planar.positions.iter().map(cap_point).collect();
            faces
                .iter()
                .map(|t| spherical_triangle_area(&p[t[0]], &p[t[1]], &p[t[2]]))
                .collect()
        }
    };
    let total: f64 = weights.iter().sum();
    Ok(mu.0.iter().zip(&weights).map(|(m, w)| m.norm_sqr() * w).sum::<f64>() / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::CapError;
    use crate::shapes;
    use crate::Vec2;

    fn plane(m: &TriangleMesh, f: impl Fn(f64, f64) -> Vec2) -> PlanarMap {
        PlanarMap::new(m.vertices().iter().map(|v| f(v.x, v.y)).collect())
    }

    #[test]
    fn identity_and_stretch() {
        let m = shapes::flat_square_grid(8, 1.0);
        let id = plane(&m, Vec2::new);
        assert!(conformal_energy(&m, &id).unwrap().abs() < 1e-24);
        let st = plane(&m, |x, y| Vec2::new(2.0 * x, y));
        assert!((conformal_energy(&m, &st).unwrap() - 1.0 / 9.0).abs() < 1e-12);
        let cap = conformal_energy_with(&m, &st.scaled(0.1), EnergyMeasure::Cap).unwrap();
        assert!((cap - 1.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn below_one_and_flip_rejected() {
        let m = shapes::flat_square_grid(6, 1.0);
        let st = plane(&m, |x, y| Vec2::new(50.0 * x + y * y, y));
        let e = conformal_energy(&m, &st).unwrap();
        assert!(e > 0.5 && e < 1.0);
        let mirrored = plane(&m, |x, y| Vec2::new(-x, y));
        assert!(matches!(conformal_energy(&m, &mirrored), Err(CapError::Flip { .. })));
    }
}
