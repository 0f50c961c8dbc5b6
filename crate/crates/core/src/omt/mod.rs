//! Semi-discrete optimal transport from the stereographic density on a
//! convex planar domain to per-vertex target masses, via power diagrams.

mod power;
mod sigma;
mod solve;

pub use power::{power_diagram, DomainPolygon, PowerCell, PowerDiagramState};
pub use sigma::{sigma_centroid, sigma_mass};
pub use solve::{
    omt_energy, omt_log_csv, omt_solve, target_measure, BoundarySnap, FoldTest, OmtIteration, OmtOptions, OmtResult, TargetMeasure,
};
