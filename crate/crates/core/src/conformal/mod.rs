//! Beltrami coefficients, the linear Beltrami solver and the flattening maps
//! built on it (harmonic, disk conformal, stretch-energy authalic).

mod beltrami;
mod flatten;
mod lbs;
mod sem;

pub use beltrami::{face_beltrami, mean_abs_mu, BeltramiField, Chart};
pub use flatten::{cotan_laplacian, disk_conformal_flatten, harmonic_disk_map, harmonic_map_with_boundary};
pub use lbs::{lbs_reconstruct, qc_scale_compose};
pub use sem::{sem_flatten, SemResult};

use serde::{Deserialize, Serialize};

use crate::error::{CapError, Result};
use crate::metrics::signed_area_2d;
use crate::Vec2;

/// Per-vertex planar image of a mesh; connectivity lives with the mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarMap {
    pub positions: Vec<Vec2>,
}

impl PlanarMap {
    pub fn new(positions: Vec<Vec2>) -> Self {
        PlanarMap { positions }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Twice the signed area of each image face.
    pub fn signed_areas(&self, faces: &[[usize; 3]]) -> Vec<f64> {
        let p = &self.positions;
        faces.iter().map(|t| signed_area_2d(&p[t[0]], &p[t[1]], &p[t[2]])).collect()
    }

    /// Faces whose image is not strictly counterclockwise.
    pub fn flipped_faces(&self, faces: &[[usize; 3]]) -> Vec<usize> {
        self.signed_areas(faces)
            .iter()
            .enumerate()
            .filter(|(_, &a)| !(a > 0.0))
            .map(|(f, _)| f)
            .collect()
    }

    pub fn check_no_flips(&self, faces: &[[usize; 3]]) -> Result<()> {
        let flipped = self.flipped_faces(faces);
        match flipped.first() {
            None => Ok(()),
            Some(&first) => Err(CapError::Flip {
                count: flipped.len(),
                first,
            }),
        }
    }

    pub fn scaled(&self, s: f64) -> PlanarMap {
        PlanarMap::new(self.positions.iter().map(|p| p * s).collect())
    }

    pub fn chart(&self) -> Chart<'_> {
        Chart::Plane(&self.positions)
    }
}
