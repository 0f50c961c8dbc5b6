//! Distortion and remeshing quality metrics, histograms and a two-sample t-test.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{CapError, Result};
use crate::mesh::{triangle_angles, TriangleMesh};
use crate::projection::spherical_triangle_area;
use crate::{Vec2, Vec3};

pub const HISTOGRAM_BINS: usize = 50;

/// Per-vertex image positions of a parameterization.
#[derive(Debug, Clone, Copy)]
pub enum Image<'a> {
    /// Planar positions; areas are signed triangle areas.
    Planar(&'a [Vec2]),
    /// Points on the unit sphere; areas are spherical-triangle areas.
    Spherical(&'a [Vec3]),
    /// Points in space; areas are flat triangle areas.
    Surface(&'a [Vec3]),
}

impl Image<'_> {
    fn len(&self) -> usize {
        match self {
            Image::Planar(p) => p.len(),
            Image::Spherical(p) | Image::Surface(p) => p.len(),
        }
    }

    /// Image area of one face (signed for planar and spherical images).
    pub fn face_area(&self, t: &[usize; 3]) -> f64 {
        match self {
            Image::Planar(p) => 0.5 * signed_area_2d(&p[t[0]], &p[t[1]], &p[t[2]]),
            Image::Spherical(p) => spherical_triangle_area(&p[t[0]], &p[t[1]], &p[t[2]]),
            Image::Surface(p) => 0.5 * (p[t[1]] - p[t[0]]).cross(&(p[t[2]] - p[t[0]])).norm(),
        }
    }

    fn face_angles(&self, t: &[usize; 3]) -> [f64; 3] {
        match self {
            Image::Planar(p) => {
                let lift = |q: &Vec2| Vec3::new(q.x, q.y, 0.0);
                triangle_angles(&lift(&p[t[0]]), &lift(&p[t[1]]), &lift(&p[t[2]]))
            }
            Image::Spherical(p) | Image::Surface(p) => triangle_angles(&p[t[0]], &p[t[1]], &p[t[2]]),
        }
    }
}

pub fn signed_area_2d(a: &Vec2, b: &Vec2, c: &Vec2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn check_len(source: &TriangleMesh, image: &Image) -> Result<()> {
    if image.len() != source.num_vertices() {
        return Err(CapError::Argument(format!(
            "image has {} vertices, source has {}",
            image.len(),
            source.num_vertices()
        )));
    }
    Ok(())
}

/// `ln[(A_img(T) / sum A_img) / (A_src(T) / sum A_src)]` per face.
pub fn log_area_ratios(source_areas: &[f64], image_areas: &[f64]) -> Result<Vec<f64>> {
    for (f, &a) in image_areas.iter().enumerate() {
        if !(a > 0.0) {
            return Err(CapError::DegenerateGeometry {
                face: f,
                message: format!("image area {a:.3e} is not positive"),
            });
        }
    }
    let ts: f64 = source_areas.iter().sum();
    let ti: f64 = image_areas.iter().sum();
    Ok(source_areas
        .iter()
        .zip(image_areas)
        .map(|(s, i)| ((i / ti) / (s / ts)).ln())
        .collect())
}

pub fn area_distortion(source: &TriangleMesh, image: Image) -> Result<Vec<f64>> {
    check_len(source, &image)?;
    let src: Vec<f64> = (0..source.num_faces()).map(|f| source.face_area(f)).collect();
    let img: Vec<f64> = source.faces().iter().map(|t| image.face_area(t)).collect();
    log_area_ratios(&src, &img)
}

/// Image corner angle minus source corner angle, per face corner.
pub fn angle_distortion(source: &TriangleMesh, image: Image) -> Result<Vec<[f64; 3]>> {
    check_len(source, &image)?;
    let geo = source.face_geometry()?;
    source
        .faces()
        .iter()
        .enumerate()
        .map(|(f, t)| {
            let a = image.face_angles(t);
            if a.iter().any(|x| !x.is_finite()) || image.face_area(t) == 0.0 {
                return Err(CapError::DegenerateGeometry {
                    face: f,
                    message: "degenerate image face".into(),
                });
            }
            let s = geo.angles[f];
            Ok([a[0] - s[0], a[1] - s[1], a[2] - s[2]])
        })
        .collect()
}

/// Mean absolute deviation of face areas from their mean.
pub fn face_area_deviation(mesh: &TriangleMesh) -> f64 {
    let areas: Vec<f64> = (0..mesh.num_faces()).map(|f| mesh.face_area(f)).collect();
    let mean = areas.iter().sum::<f64>() / areas.len() as f64;
    areas.iter().map(|a| (a - mean).abs()).sum::<f64>() / areas.len() as f64
}

/// Mean distance from the vertices of `remeshed` to the surface of `original`.
pub fn surface_distance(remeshed: &TriangleMesh, original: &TriangleMesh) -> f64 {
    let index = original.surface_index();
    let d: Vec<f64> = remeshed.vertices().par_iter().map(|v| index.closest_point(v).distance).collect();
    d.iter().sum::<f64>() / d.len() as f64
}

fn mean_abs(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x.abs(), n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Uniform histogram over `[-max|x|, max|x|]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn symmetric(values: &[f64], bins: usize) -> Histogram {
        let m = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let m = if m > 0.0 { m } else { 1.0 };
        let edges: Vec<f64> = (0..=bins).map(|k| -m + 2.0 * m * k as f64 / bins as f64).collect();
        let mut counts = vec![0usize; bins];
        for v in values {
            let k = (((v + m) / (2.0 * m)) * bins as f64).floor() as isize;
            counts[k.clamp(0, bins as isize - 1) as usize] += 1;
        }
        Histogram { edges, counts }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("lo,hi,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            s.push_str(&format!("{},{},{}\n", self.edges[k], self.edges[k + 1], c));
        }
        s
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistortionReport {
    pub d_area: Vec<f64>,
    pub d_angle: Vec<[f64; 3]>,
    pub mean_abs_d_area: f64,
    pub mean_abs_d_angle: f64,
    pub area_histogram: Histogram,
    pub angle_histogram: Histogram,
}

impl DistortionReport {
    pub fn new(d_area: Vec<f64>, d_angle: Vec<[f64; 3]>) -> Self {
        let flat: Vec<f64> = d_angle.iter().flatten().copied().collect();
        DistortionReport {
            mean_abs_d_area: mean_abs(d_area.iter().copied()),
            mean_abs_d_angle: mean_abs(flat.iter().copied()),
            area_histogram: Histogram::symmetric(&d_area, HISTOGRAM_BINS),
            angle_histogram: Histogram::symmetric(&flat, HISTOGRAM_BINS),
            d_area,
            d_angle,
        }
    }

    pub fn compute(source: &TriangleMesh, image: Image) -> Result<Self> {
        Ok(Self::new(area_distortion(source, image)?, angle_distortion(source, image)?))
    }

    /// Per-face CSV: face, d_area, d_angle0, d_angle1, d_angle2.
    pub fn faces_csv(&self) -> String {
        let mut s = String::from("face,d_area,d_angle0,d_angle1,d_angle2\n");
        for (f, (a, g)) in self.d_area.iter().zip(&self.d_angle).enumerate() {
            s.push_str(&format!("{f},{a},{},{},{}\n", g[0], g[1], g[2]));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TTestKind {
    Pooled,
    Welch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub dof: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Two-sided two-sample t-test.
pub fn two_sample_t(a: &[f64], b: &[f64], kind: TTestKind) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(CapError::Argument("each sample needs at least 2 values".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (se, dof) = match kind {
        TTestKind::Pooled => {
            let dof = na + nb - 2.0;
            let sp2 = ((na - 1.0) * va + (nb - 1.0) * vb) / dof;
            ((sp2 * (1.0 / na + 1.0 / nb)).sqrt(), dof)
        }
        TTestKind::Welch => {
            let (qa, qb) = (va / na, vb / nb);
            let s2 = qa + qb;
            let dof = if s2 > 0.0 {
                s2 * s2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0))
            } else {
                na + nb - 2.0
            };
            (s2.sqrt(), dof)
        }
    };
    let diff = ma - mb;
    if se == 0.0 {
        return Ok(if diff == 0.0 {
            TTest { t: 0.0, p: 1.0, dof }
        } else {
            TTest {
                t: diff.signum() * f64::INFINITY,
                p: 0.0,
                dof,
            }
        });
    }
    let t = diff / se;
    let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| CapError::Argument(e.to_string()))?;
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(TTest { t, p, dof })
}
