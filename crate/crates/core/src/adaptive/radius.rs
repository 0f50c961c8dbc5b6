use serde::{Deserialize, Serialize};

use crate::adaptive::energy::{conformal_energy_with, EnergyMeasure};
use crate::conformal::PlanarMap;
use crate::error::{CapError, Result};
use crate::mesh::TriangleMesh;
use crate::omt::{omt_solve, BoundarySnap, DomainPolygon, FoldTest, OmtOptions, OmtResult};
use crate::Vec2;

const MAX_EVALUATIONS: usize = 60;

/// How the boundary of the scaled initial map is pinned after transport.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryPlacement {
    /// Boundary vertices go radially onto the circle of radius `r`.
    Circle(Vec<usize>),
    /// Vertices fixed at `r` times the given unit-scale points.
    Corners(Vec<(usize, Vec2)>),
}

/// One objective evaluation `F(r)`: the energy, or why it failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusSample {
    pub r: f64,
    pub energy: Option<f64>,
    pub error: Option<String>,
}

/// Transport of `r * g` onto `r * omega` scored by conformal distortion.
#[derive(Debug, Clone)]
pub struct RadiusProblem<'a> {
    pub surface: &'a TriangleMesh,
    /// Initial map at unit scale; its image lies in `omega`.
    pub g: &'a PlanarMap,
    pub omega: DomainPolygon,
    pub boundary: BoundaryPlacement,
    pub measure: EnergyMeasure,
    pub search_tol: f64,
    pub final_tol: f64,
    pub max_omt_iter: usize,
    pub untangle_passes: usize,
}

#[derive(Debug, Clone)]
pub struct RadiusSearch {
    pub r_star: f64,
    /// `F(r*)` after the final solve.
    pub energy: f64,
    pub omt: OmtResult,
    /// Every evaluation in the order made.
    pub trace: Vec<RadiusSample>,
}

impl RadiusProblem<'_> {
    fn snap(&self, r: f64) -> BoundarySnap {
        match &self.boundary {
            BoundaryPlacement::Circle(v) => BoundarySnap::Radial {
                vertices: v.clone(),
                radius: r,
            },
            BoundaryPlacement::Corners(c) => BoundarySnap::Fixed(c.iter().map(|&(v, p)| (v, p * r)).collect()),
        }
    }

    /// Solves the transport at radius `r` and returns `F(r)` with the solution.
    /// Warm-start heights are retried cold if they fail.
    pub fn evaluate(&self, r: f64, tol: f64, warm: Option<Vec<f64>>) -> Result<(f64, OmtResult)> {
        let sites = self.g.scaled(r);
        let omega = self.omega.scaled(r);
        let mut opts = OmtOptions::new(tol);
        opts.max_iter = self.max_omt_iter;
        opts.snap = self.snap(r);
        opts.untangle_passes = self.untangle_passes;
        opts.fold_test = FoldTest::Cap;
        let warmed = warm.is_some();
        opts.initial_heights = warm;
        let res = match omt_solve(&sites, self.surface, &omega, &opts) {
            Err(e) if warmed => {
                log::debug!("warm-started transport at r = {r} failed ({e}); retrying cold");
                opts.initial_heights = None;
                omt_solve(&sites, self.surface, &omega, &opts)?
            }
            other => other?,
        };
        let f = conformal_energy_with(self.surface, &res.map, self.measure)?;
        Ok((f, res))
    }
}

struct Evaluator<'p, 'a> {
    problem: &'p RadiusProblem<'a>,
    trace: Vec<RadiusSample>,
    /// Heights of successful solves, keyed by radius.
    heights: Vec<(f64, Vec<f64>)>,
}

impl Evaluator<'_, '_> {
    fn warm(&self, r: f64) -> Option<Vec<f64>> {
        let (r0, h) = self.heights.iter().min_by(|a, b| (a.0 - r).abs().total_cmp(&(b.0 - r).abs()))?;
        let s = (r / r0).powi(2);
        Some(h.iter().map(|x| x * s).collect())
    }

    fn eval(&mut self, r: f64) -> f64 {
        let warm = self.warm(r);
        match self.problem.evaluate(r, self.problem.search_tol, warm) {
            Ok((f, res)) => {
                log::debug!("F({r:.6}) = {f:.6e}");
                self.heights.push((r, res.state.heights));
                self.trace.push(RadiusSample {
                    r,
                    energy: Some(f),
                    error: None,
                });
                f
            }
            Err(e) => {
                log::debug!("F({r:.6}) failed: {e}");
                self.trace.push(RadiusSample {
                    r,
                    energy: None,
                    error: Some(e.to_string()),
                });
                f64::INFINITY
            }
        }
    }
}

/// Bounded minimization on `[a, b]` by golden section with parabolic steps,
/// to absolute tolerance `xtol`.
fn brent_minimize(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, xtol: f64, max_eval: usize) {
    let golden = 0.5 * (3.0 - 5f64.sqrt());
    let sqrt_eps = f64::EPSILON.sqrt();
    let mut x = a + golden * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    for _ in 1..max_eval {
        let xm = 0.5 * (a + b);
        let tol1 = sqrt_eps * x.abs() + xtol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut use_golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                use_golden = false;
            }
        }
        if use_golden {
            e = if x >= xm { a - x } else { b - x };
            d = golden * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            (v, fv, w, fw, x, fx) = (w, fw, x, fx, u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv, w, fw) = (w, fw, u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
}

/// Chooses the cap radius minimizing conformal distortion of the transported
/// map, then re-solves the transport at the best radius with the final
/// tolerance. A failed evaluation counts as `+inf`.
pub fn optimize_radius(problem: &RadiusProblem, bounds: [f64; 2], rtol: f64) -> Result<RadiusSearch> {
    let [lo, hi] = bounds;
    if !(lo > 0.0 && lo < hi && hi.is_finite()) {
        return Err(CapError::Argument(format!("radius bounds [{lo}, {hi}] must satisfy 0 < lo < hi")));
    }
    if !(rtol > 0.0) {
        return Err(CapError::Argument(format!("radius tolerance {rtol} must be positive")));
    }
    let mut ev = Evaluator {
        problem,
        trace: Vec::new(),
        heights: Vec::new(),
    };
    brent_minimize(|r| ev.eval(r), lo, hi, rtol, MAX_EVALUATIONS);
    let best = ev
        .trace
        .iter()
        .filter_map(|s| s.energy.map(|f| (s.r, f)))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    let Some((r_star, _)) = best else {
        let failures: Vec<String> = ev
            .trace
            .iter()
            .map(|s| format!("r = {}: {}", s.r, s.error.as_deref().unwrap_or("?")))
            .collect();
        return Err(CapError::Pipeline(failures.join("; ")));
    };
    let warm = ev.heights.iter().find(|(r, _)| *r == r_star).map(|(_, h)| h.clone());
    let (energy, omt) = problem.evaluate(r_star, problem.final_tol, warm)?;
    Ok(RadiusSearch {
        r_star,
        energy,
        omt,
        trace: ev.trace,
    })
}

/// Solves the transport at one given radius.
pub fn fixed_radius(problem: &RadiusProblem, r: f64) -> Result<RadiusSearch> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(CapError::Argument(format!("cap radius {r} must be positive and finite")));
    }
    let (energy, omt) = problem.evaluate(r, problem.final_tol, None)?;
    Ok(RadiusSearch {
        r_star: r,
        energy,
        omt,
        trace: vec![RadiusSample {
            r,
            energy: Some(energy),
            error: None,
        }],
    })
}
