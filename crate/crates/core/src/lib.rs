//! Adaptive area-preserving spherical-cap parameterization of triangle
//! meshes, with orthogonal cap harmonics for shape fitting.
//!
//! The main entry points are [`adaptive::parameterize_open`] and
//! [`adaptive::parameterize_closed`]. Both return a [`adaptive::CapMap`]
//! that places every vertex on the cap `Z >= Z*` of the unit sphere, where
//! `Z*` is chosen to minimize conformal distortion while the map itself is
//! area preserving.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod conformal;
pub mod error;
pub mod harmonics;
pub mod kdtree;
pub mod linalg;
pub mod mesh;
pub mod metrics;
pub mod omt;
pub mod projection;
pub mod remesh;
pub mod shapes;

pub use error::{CapError, Result};
pub use mesh::TriangleMesh;

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;
