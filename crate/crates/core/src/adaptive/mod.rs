//! Adaptive spherical-cap parameterization: the radius search over the cap
//! size and the open and closed surface pipelines built on it.

mod energy;
mod puncture;
mod radius;

pub use energy::{conformal_energy, conformal_energy_with, EnergyMeasure};
pub use puncture::{find_puncture_quad, PunctureQuad};
pub use radius::{fixed_radius, optimize_radius, BoundaryPlacement, RadiusProblem, RadiusSample, RadiusSearch};

use std::time::Instant;

use nalgebra::Rotation3;
use serde::{Deserialize, Serialize};

use crate::conformal::{disk_conformal_flatten, face_beltrami, mean_abs_mu, qc_scale_compose, sem_flatten, Chart, PlanarMap};
use crate::error::{CapError, Result, StageExt};
use crate::mesh::{SurfaceKind, TriangleMesh};
use crate::metrics::{angle_distortion, log_area_ratios, DistortionReport, Image};
use crate::omt::{DomainPolygon, OmtIteration};
use crate::projection::{cap_from_radius, cap_point, spherical_triangle_area, CapSpec};
use crate::{Vec2, Vec3};

/// Tolerance for "on the unit sphere" and "on the cap boundary".
pub const CAP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineOptions {
    /// Scale applied to the Beltrami coefficient of the authalic map (closed inputs).
    pub lambda: f64,
    pub radius_bounds: [f64; 2],
    /// Absolute tolerance of the radius search.
    pub radius_tol: f64,
    /// Transport tolerance while searching.
    pub search_tol: f64,
    /// Transport tolerance of the final solve.
    pub final_tol: f64,
    pub max_omt_iter: usize,
    /// Local untangling passes allowed to undo folds left by the transport.
    pub untangle_passes: usize,
    pub max_side_ratio: f64,
    pub max_diagonal_ratio: f64,
    /// Direction that becomes +Z for closed inputs; principal axis if absent.
    pub axis: Option<[f64; 3]>,
    /// Skip the search and use this cap radius.
    pub fixed_radius: Option<f64>,
    pub energy_measure: EnergyMeasure,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            lambda: 0.2,
            radius_bounds: [0.25, 4.0],
            radius_tol: 0.01,
            search_tol: 1e-3,
            final_tol: 1e-4,
            max_omt_iter: 100,
            untangle_passes: 50,
            max_side_ratio: 1.5,
            max_diagonal_ratio: 1.5,
            axis: None,
            fixed_radius: None,
            energy_measure: EnergyMeasure::Planar,
        }
    }
}

/// How a cap map was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Open,
    Closed {
        /// The two faces removed before flattening and put back on the bottom disk.
        refilled: [usize; 2],
        corners: [usize; 4],
        /// Rotation applied to the input before puncturing.
        rotation: Rotation3<f64>,
    },
}

/// Per-vertex positions on the cap `Z >= Z*`, with the planar map they come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapMap {
    pub positions: Vec<Vec3>,
    pub spec: CapSpec,
    /// Planar transport result; `cap_point` of each entry gives `positions`.
    pub planar: PlanarMap,
    pub provenance: Provenance,
}

impl CapMap {
    pub fn refilled_faces(&self) -> &[usize] {
        match &self.provenance {
            Provenance::Open => &[],
            Provenance::Closed { refilled, .. } => refilled,
        }
    }

    /// Checks unit length, the cap bound and face orientation. Refilled faces
    /// lie on the bottom disk and must face down.
    pub fn validate(&self, faces: &[[usize; 3]]) -> Result<()> {
        for (v, p) in self.positions.iter().enumerate() {
            if (p.norm() - 1.0).abs() > CAP_TOL || p.z < self.spec.zstar - CAP_TOL {
                return Err(CapError::Argument(format!("vertex {v} at {p:?} is off the cap")));
            }
        }
        let refilled = self.refilled_faces();
        let p = &self.positions;
        let flipped: Vec<usize> = faces
            .iter()
            .enumerate()
            .filter(|(f, t)| {
                if refilled.contains(f) {
                    !((p[t[1]] - p[t[0]]).cross(&(p[t[2]] - p[t[0]])).z < 0.0)
                } else {
                    !(spherical_triangle_area(&p[t[0]], &p[t[1]], &p[t[2]]) > 0.0)
                }
            })
            .map(|(f, _)| f)
            .collect();
        match flipped.first() {
            None => Ok(()),
            Some(&first) => Err(CapError::Flip {
                count: flipped.len(),
                first,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub kind: SurfaceKind,
    pub r_star: f64,
    pub z_star: f64,
    /// Conformal energy at `r_star` after the final transport solve.
    pub energy: f64,
    pub trace: Vec<RadiusSample>,
    pub omt_log: Vec<OmtIteration>,
    pub omt_residual: f64,
    /// Mean |mu| of the initial planar map against the surface.
    pub initial_mean_mu: f64,
    pub mean_abs_d_area: f64,
    pub mean_abs_d_angle: f64,
    pub lambda: Option<f64>,
    pub puncture: Option<PunctureQuad>,
    pub sem_iterations: Option<usize>,
    pub timings: Vec<StageTiming>,
    pub warnings: Vec<String>,
}

struct Clock {
    last: Instant,
    timings: Vec<StageTiming>,
}

impl Clock {
    fn new() -> Self {
        Clock {
            last: Instant::now(),
            timings: Vec::new(),
        }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.timings.push(StageTiming {
            stage: stage.into(),
            seconds: (now - self.last).as_secs_f64(),
        });
        self.last = now;
    }
}

fn search(problem: &RadiusProblem, opts: &PipelineOptions) -> Result<RadiusSearch> {
    match opts.fixed_radius {
        Some(r) => fixed_radius(problem, r),
        None => optimize_radius(problem, opts.radius_bounds, opts.radius_tol),
    }
}

fn mean_mu(surface: &TriangleMesh, map: &PlanarMap) -> Result<f64> {
    Ok(mean_abs_mu(&face_beltrami(
        surface.faces(),
        Chart::Space(surface.vertices()),
        map.chart(),
    )?))
}

/// Area and angle distortion of a cap map against its source mesh. Refilled
/// faces are measured as flat triangles on the bottom disk.
pub fn cap_map_distortion(mesh: &TriangleMesh, cap: &CapMap) -> Result<DistortionReport> {
    if cap.positions.len() != mesh.num_vertices() {
        return Err(CapError::Argument("cap map does not match the mesh".into()));
    }
    let refilled = cap.refilled_faces();
    let src: Vec<f64> = (0..mesh.num_faces()).map(|f| mesh.face_area(f)).collect();
    let img: Vec<f64> = mesh
        .faces()
        .iter()
        .enumerate()
        .map(|(f, t)| {
            if refilled.contains(&f) {
                Image::Surface(&cap.positions).face_area(t)
            } else {
                Image::Spherical(&cap.positions).face_area(t)
            }
        })
        .collect();
    let d_area = log_area_ratios(&src, &img)?;
    let d_angle = angle_distortion(mesh, Image::Surface(&cap.positions))?;
    Ok(DistortionReport::new(d_area, d_angle))
}

fn finish(
    mesh: &TriangleMesh,
    found: RadiusSearch,
    provenance: Provenance,
    mut report: PipelineReport,
    clock: &mut Clock,
) -> Result<(CapMap, PipelineReport)> {
    let spec = cap_from_radius(found.r_star)?;
    let cap = CapMap {
        positions: found.omt.map.positions.iter().map(cap_point).collect(),
        spec,
        planar: found.omt.map,
        provenance,
    };
    cap.validate(mesh.faces()).stage("projection")?;
    let d = cap_map_distortion(mesh, &cap).stage("metrics")?;
    clock.lap("projection");
    report.r_star = found.r_star;
    report.z_star = spec.zstar;
    report.energy = found.energy;
    report.trace = found.trace;
    report.omt_residual = found.omt.log.last().map_or(f64::NAN, |l| l.residual);
    report.omt_log = found.omt.log;
    report.mean_abs_d_area = d.mean_abs_d_area;
    report.mean_abs_d_angle = d.mean_abs_d_angle;
    report.timings = std::mem::take(&mut clock.timings);
    log::info!(
        "r* = {:.4}, Z* = {:.4}, mean |d_area| = {:.4}, mean |d_angle| = {:.4}",
        report.r_star,
        report.z_star,
        report.mean_abs_d_area,
        report.mean_abs_d_angle
    );
    Ok((cap, report))
}

fn empty_report(kind: SurfaceKind) -> PipelineReport {
    PipelineReport {
        kind,
        r_star: f64::NAN,
        z_star: f64::NAN,
        energy: f64::NAN,
        trace: Vec::new(),
        omt_log: Vec::new(),
        omt_residual: f64::NAN,
        initial_mean_mu: f64::NAN,
        mean_abs_d_area: f64::NAN,
        mean_abs_d_angle: f64::NAN,
        lambda: None,
        puncture: None,
        sem_iterations: None,
        timings: Vec::new(),
        warnings: Vec::new(),
    }
}

/// Parameterizes a disk-type mesh onto a spherical cap. The boundary loop
/// lands on the cap's bottom circle.
pub fn parameterize_open(mesh: &TriangleMesh, opts: &PipelineOptions) -> Result<(CapMap, PipelineReport)> {
    let mut clock = Clock::new();
    let topo = mesh.validate_topology().stage("topology")?;
    let boundary = match (topo.kind, topo.boundary) {
        (SurfaceKind::Open, Some(b)) => b,
        _ => return Err(CapError::Topology("expected an open mesh with one boundary loop".into()).at("topology")),
    };
    let g = disk_conformal_flatten(mesh).stage("conformal")?;
    let mut report = empty_report(SurfaceKind::Open);
    report.initial_mean_mu = mean_mu(mesh, &g).stage("conformal")?;
    clock.lap("conformal");

    let omega = DomainPolygon::new(boundary.iter().map(|&v| g.positions[v]).collect()).stage("domain")?;
    let problem = RadiusProblem {
        surface: mesh,
        g: &g,
        omega,
        boundary: BoundaryPlacement::Circle(boundary),
        measure: opts.energy_measure,
        search_tol: opts.search_tol,
        final_tol: opts.final_tol,
        max_omt_iter: opts.max_omt_iter,
        untangle_passes: opts.untangle_passes,
    };
    let found = search(&problem, opts).stage("radius")?;
    clock.lap("radius");
    finish(mesh, found, Provenance::Open, report, &mut clock)
}

/// Parameterizes a genus-0 closed mesh onto a spherical cap. Two faces near
/// the bottom are removed, the rest is flattened, and the removed faces
/// return as the bottom disk spanned by their four corners.
pub fn parameterize_closed(mesh: &TriangleMesh, opts: &PipelineOptions) -> Result<(CapMap, PipelineReport)> {
    let mut clock = Clock::new();
    let topo = mesh.validate_topology().stage("topology")?;
    if topo.kind != SurfaceKind::Closed {
        return Err(CapError::Topology("expected a closed mesh".into()).at("topology"));
    }
    let (aligned, rotation) = mesh.align_to_axis(opts.axis.map(Vec3::from)).stage("align")?;
    let quad = find_puncture_quad(&aligned, opts.max_side_ratio, opts.max_diagonal_ratio).stage("puncture")?;
    let punctured = aligned.without_faces(&quad.faces).stage("puncture")?;
    let mut report = empty_report(SurfaceKind::Closed);
    if quad.fallback {
        report.warnings.push(format!(
            "no puncture quadrilateral within thresholds; used side ratio {:.3}, diagonal ratio {:.3}",
            quad.side_ratio, quad.diagonal_ratio
        ));
    }
    let loop_ = match punctured.validate_topology().stage("puncture")? {
        crate::mesh::Topology {
            kind: SurfaceKind::Open,
            boundary: Some(b),
        } if b.len() == 4 => b,
        _ => return Err(CapError::Topology("punctured mesh is not a disk with a 4-vertex boundary".into()).at("puncture")),
    };
    let start = loop_.iter().position(|&v| v == quad.corners[0]).unwrap_or(0);
    let corners: Vec<usize> = (0..4).map(|k| loop_[(start + k) % 4]).collect();
    clock.lap("puncture");

    let sem = sem_flatten(&punctured, &corners).stage("authalic")?;
    report.sem_iterations = Some(sem.iterations);
    if sem.rolled_back {
        report.warnings.push("authalic iteration rolled back a folded step".into());
    }
    clock.lap("authalic");

    let pins: Vec<(usize, Vec2)> = corners.iter().map(|&v| (v, sem.map.positions[v])).collect();
    let g = qc_scale_compose(&punctured, &sem.map, opts.lambda, &pins).stage("quasiconformal")?;
    g.check_no_flips(punctured.faces()).stage("quasiconformal")?;
    report.lambda = Some(opts.lambda);
    report.initial_mean_mu = mean_mu(&punctured, &g).stage("quasiconformal")?;
    clock.lap("quasiconformal");

    let omega = DomainPolygon::new(pins.iter().map(|p| p.1).collect()).stage("domain")?;
    let problem = RadiusProblem {
        surface: &punctured,
        g: &g,
        omega,
        boundary: BoundaryPlacement::Corners(pins),
        measure: opts.energy_measure,
        search_tol: opts.search_tol,
        final_tol: opts.final_tol,
        max_omt_iter: opts.max_omt_iter,
        untangle_passes: opts.untangle_passes,
    };
    let found = search(&problem, opts).stage("radius")?;
    clock.lap("radius");
    let provenance = Provenance::Closed {
        refilled: quad.faces,
        corners: quad.corners,
        rotation,
    };
    report.puncture = Some(quad);
    finish(mesh, found, provenance, report, &mut clock)
}
