//! Parameterization-based remeshing: regular meshes on the cap and their
//! pullback onto the original surface.

mod cap_mesh;
mod delaunay;
mod pullback;

pub use cap_mesh::{cap_uniform_mesh, latlong_cap_mesh};
pub use delaunay::delaunay;
pub use pullback::{pullback, Pullback, PullbackSummary, MAX_SNAPPED_FRACTION};
