//! Cap harmonics: shifted associated Legendre polynomials on `[Z*, 1]`, the
//! real basis built from them, least-squares shape fitting and the
//! aspect-ratio descriptor.

use nalgebra::{DMatrix, Matrix3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CapError, Result};
use crate::Vec3;

/// Slack allowed on the cap interval for points computed in floating point.
const DOMAIN_TOL: f64 = 1e-9;
/// Largest design-matrix condition number `ah_fit` accepts.
pub const MAX_CONDITION: f64 = 1e12;

/// Affine map `x -> q1 x + q2` taking `[Z*, 1]` onto `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftParams {
    pub zstar: f64,
    pub q1: f64,
    pub q2: f64,
}

impl ShiftParams {
    pub fn new(zstar: f64) -> Result<Self> {
        if !(-1.0..1.0).contains(&zstar) {
            return Err(CapError::Argument(format!("Z* = {zstar} must lie in [-1, 1)")));
        }
        Ok(ShiftParams {
            zstar,
            q1: 2.0 / (1.0 - zstar),
            q2: -(1.0 + zstar) / (1.0 - zstar),
        })
    }

    pub fn shift(&self, x: f64) -> f64 {
        (self.q1 * x + self.q2).clamp(-1.0, 1.0)
    }

    /// Upper elevation angle `arccos Z*`.
    pub fn theta_max(&self) -> f64 {
        self.zstar.acos()
    }
}

/// Associated Legendre function with the Condon-Shortley phase.
pub fn alp(n: usize, m: usize, x: f64) -> Result<f64> {
    if m > n {
        return Err(CapError::Argument(format!("degree {m} exceeds order {n}")));
    }
    if !(x.abs() <= 1.0) {
        return Err(CapError::Argument(format!("x = {x} outside [-1, 1]")));
    }
    Ok(alp_unchecked(n, m, x))
}

fn alp_unchecked(n: usize, m: usize, x: f64) -> f64 {
    let s = ((1.0 - x) * (1.0 + x)).max(0.0).sqrt();
    let mut pmm = 1.0;
    for k in 0..m {
        pmm *= -((2 * k + 1) as f64) * s;
    }
    if n == m {
        return pmm;
    }
    let mut prev = pmm;
    let mut cur = x * (2 * m + 1) as f64 * pmm;
    for l in (m + 2)..=n {
        let next = (x * (2 * l - 1) as f64 * cur - (l + m - 1) as f64 * prev) / (l - m) as f64;
        prev = cur;
        cur = next;
    }
    cur
}

/// `P_n^m(q1 x + q2)` for `x` in `[Z*, 1]`.
pub fn shifted_alp(params: &ShiftParams, n: usize, m: usize, x: f64) -> Result<f64> {
    if !(x >= params.zstar - DOMAIN_TOL && x <= 1.0 + DOMAIN_TOL) {
        return Err(CapError::Argument(format!("x = {x} outside [{}, 1]", params.zstar)));
    }
    alp(n, m, params.shift(x))
}

/// `(n - m)! / (n + m)!` without forming either factorial.
fn factorial_ratio(n: usize, m: usize) -> f64 {
    ((n - m + 1)..=(n + m)).fold(1.0, |acc, k| acc / k as f64)
}

/// Normalization constant of the order-`n`, degree-`m` basis function.
pub fn ah_norm(params: &ShiftParams, n: usize, m: usize) -> f64 {
    (params.q1 * (2 * n + 1) as f64 * factorial_ratio(n, m) / (4.0 * std::f64::consts::PI)).sqrt()
}

/// Row of `(n, m)` in a coefficient matrix.
pub fn basis_index(n: usize, m: i64) -> usize {
    ((n * n + n) as i64 + m) as usize
}

/// `(n, m)` pairs in coefficient order: (0,0), (1,-1), (1,0), (1,1), (2,-2), ...
pub fn basis_order(order: usize) -> Vec<(usize, i64)> {
    (0..=order).flat_map(|n| (-(n as i64)..=n as i64).map(move |m| (n, m))).collect()
}

fn check_sample(params: &ShiftParams, theta: f64, phi: f64) -> Result<()> {
    let tmax = params.theta_max();
    if !(theta >= -DOMAIN_TOL && theta <= tmax + DOMAIN_TOL) || !phi.is_finite() {
        return Err(CapError::Argument(format!(
            "sample ({theta}, {phi}) outside the cap, theta must lie in [0, {tmax}]"
        )));
    }
    Ok(())
}

fn eval_unchecked(params: &ShiftParams, n: usize, m: i64, theta: f64, phi: f64) -> f64 {
    let am = m.unsigned_abs() as usize;
    let p = alp_unchecked(n, am, params.shift(theta.cos()));
    let k = ah_norm(params, n, am);
    let sign = if am.is_multiple_of(2) { 1.0 } else { -1.0 };
    match m.signum() {
        -1 => sign * std::f64::consts::SQRT_2 * k * (am as f64 * phi).sin() * p,
        1 => sign * std::f64::consts::SQRT_2 * k * (am as f64 * phi).cos() * p,
        _ => k * p,
    }
}

/// Real cap-harmonic basis function `A_n^m(theta, phi)`.
pub fn ah_eval(zstar: f64, n: usize, m: i64, theta: f64, phi: f64) -> Result<f64> {
    let params = ShiftParams::new(zstar)?;
    if m.unsigned_abs() as usize > n {
        return Err(CapError::Argument(format!("degree {m} outside [-{n}, {n}]")));
    }
    check_sample(&params, theta, phi)?;
    Ok(eval_unchecked(&params, n, m, theta, phi))
}

/// `k x (N+1)^2` matrix of every basis function at every `(theta, phi)` sample.
pub fn ah_design_matrix(samples: &[(f64, f64)], order: usize, zstar: f64) -> Result<DMatrix<f64>> {
    let params = ShiftParams::new(zstar)?;
    for &(t, p) in samples {
        check_sample(&params, t, p)?;
    }
    let basis = basis_order(order);
    let rows: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|&(t, p)| basis.iter().map(|&(n, m)| eval_unchecked(&params, n, m, t, p)).collect())
        .collect();
    Ok(DMatrix::from_fn(samples.len(), basis.len(), |i, j| rows[i][j]))
}

/// `(theta, phi)` of points on the sphere: `theta = arccos(Z / |p|)`, `phi = atan2(Y, X)`.
pub fn cap_samples(points: &[Vec3]) -> Vec<(f64, f64)> {
    points
        .iter()
        .map(|p| ((p.z / p.norm()).clamp(-1.0, 1.0).acos(), p.y.atan2(p.x)))
        .collect()
}

/// Fitted coefficients: row `basis_index(n, m)` holds `C_n^m` for X, Y, Z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AHModelJson", into = "AHModelJson")]
pub struct AHModel {
    pub zstar: f64,
    pub order: usize,
    pub coefficients: Vec<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AHModelJson {
    zstar: f64,
    order: usize,
    /// `[n, m]` of each coefficient row, in row order.
    rows: Vec<(usize, i64)>,
    /// Row-major `(order + 1)^2 x 3` matrix.
    coefficients: Vec<[f64; 3]>,
}

impl From<AHModel> for AHModelJson {
    fn from(m: AHModel) -> Self {
        AHModelJson {
            zstar: m.zstar,
            order: m.order,
            rows: basis_order(m.order),
            coefficients: m.coefficients,
        }
    }
}

impl TryFrom<AHModelJson> for AHModel {
    type Error = String;

    fn try_from(j: AHModelJson) -> std::result::Result<Self, String> {
        let m = AHModel {
            zstar: j.zstar,
            order: j.order,
            coefficients: j.coefficients,
        };
        if j.rows != basis_order(m.order) {
            return Err("rows must list (n, m) in order (0,0), (1,-1), (1,0), (1,1), ...".into());
        }
        m.check().map_err(|e| e.to_string())?;
        Ok(m)
    }
}

impl AHModel {
    pub fn new(zstar: f64, order: usize, coefficients: Vec<[f64; 3]>) -> Result<Self> {
        let m = AHModel {
            zstar,
            order,
            coefficients,
        };
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<()> {
        ShiftParams::new(self.zstar)?;
        let rows = (self.order + 1) * (self.order + 1);
        if self.coefficients.len() != rows {
            return Err(CapError::Argument(format!(
                "order {} needs {rows} coefficient rows, got {}",
                self.order,
                self.coefficients.len()
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.coefficients.len(), 3, |i, j| self.coefficients[i][j])
    }

    pub fn coefficient(&self, n: usize, m: i64) -> Option<[f64; 3]> {
        (n <= self.order && m.unsigned_abs() as usize <= n).then(|| self.coefficients[basis_index(n, m)])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AHFit {
    pub model: AHModel,
    /// Root mean square of `|A C - V|` over the samples.
    pub rms: f64,
    /// Condition number of the design matrix.
    pub condition: f64,
}

/// Least-squares coefficients of `values` at `samples`, by Householder QR.
pub fn ah_fit(values: &[Vec3], samples: &[(f64, f64)], order: usize, zstar: f64) -> Result<AHFit> {
    let cols = (order + 1) * (order + 1);
    if values.len() != samples.len() {
        return Err(CapError::Argument(format!("{} values for {} samples", values.len(), samples.len())));
    }
    if samples.len() < cols {
        return Err(CapError::Argument(format!(
            "order {order} needs at least {cols} samples, got {}",
            samples.len()
        )));
    }
    let a = ah_design_matrix(samples, order, zstar)?;
    let qr = a.clone().qr();
    let r = qr.r();
    let sv = r.singular_values();
    let (hi, lo) = (sv.max(), sv.min());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(CapError::IllPosed { condition });
    }
    let v = DMatrix::from_fn(values.len(), 3, |i, j| values[i][j]);
    let qtv = qr.q().transpose() * &v;
    let c = r
        .solve_upper_triangular(&qtv)
        .ok_or_else(|| CapError::Solver("triangular solve failed".into()))?;
    let resid = &a * &c - v;
    let rms = (resid.norm_squared() / values.len() as f64).sqrt();
    let model = AHModel::new(zstar, order, (0..cols).map(|i| [c[(i, 0)], c[(i, 1)], c[(i, 2)]]).collect())?;
    Ok(AHFit { model, rms, condition })
}

/// `A C` at the given samples.
pub fn ah_reconstruct(model: &AHModel, samples: &[(f64, f64)]) -> Result<Vec<Vec3>> {
    model.check()?;
    let a = ah_design_matrix(samples, model.order, model.zstar)?;
    let y = a * model.matrix();
    Ok((0..samples.len()).map(|i| Vec3::new(y[(i, 0)], y[(i, 1)], y[(i, 2)])).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AspectRatio {
    pub sigma1: f64,
    pub sigma3: f64,
    pub ratio: f64,
}

/// `sigma1 / sigma3` of the linear map `A` minimizing `sum |y_i - A x_i|^2`.
pub fn aspect_ratio(y: &[Vec3], x: &[Vec3]) -> Result<AspectRatio> {
    if y.len() != x.len() || x.len() < 3 {
        return Err(CapError::Argument(format!(
            "need at least 3 paired points, got {} and {}",
            y.len(),
            x.len()
        )));
    }
    if let Some(i) = x.iter().position(|p| (p.norm() - 1.0).abs() > DOMAIN_TOL) {
        return Err(CapError::Argument(format!("direction {i} is not a unit vector")));
    }
    let mut sxx = Matrix3::zeros();
    let mut syx = Matrix3::zeros();
    for (a, b) in y.iter().zip(x) {
        sxx += b * b.transpose();
        syx += a * b.transpose();
    }
    let inv = sxx
        .try_inverse()
        .ok_or_else(|| CapError::Argument("directions do not span 3-space".into()))?;
    let mut s: Vec<f64> = (syx * inv).singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    if !(s[2] >= 1e-12 * s[0]) {
        return Err(CapError::IllPosed { condition: s[0] / s[2] });
    }
    Ok(AspectRatio {
        sigma1: s[0],
        sigma3: s[2],
        ratio: s[0] / s[2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// Rodrigues-type formula: differentiate `(x^2 - 1)^n` as a polynomial.
    fn alp_rodrigues(n: usize, m: usize, x: f64) -> f64 {
        let mut c = vec![0.0; 2 * n + 1];
        let mut binom = 1.0;
        for k in 0..=n {
            c[2 * k] = binom * if (n - k).is_multiple_of(2) { 1.0 } else { -1.0 };
            binom = binom * (n - k) as f64 / (k + 1) as f64;
        }
        for _ in 0..(n + m) {
            c = (1..c.len()).map(|i| c[i] * i as f64).collect();
        }
        let d: f64 = c.iter().rev().fold(0.0, |acc, &a| acc * x + a);
        let fact: f64 = (1..=n).map(|k| k as f64).product();
        let sign = if m.is_multiple_of(2) { 1.0 } else { -1.0 };
        sign / (2f64.powi(n as i32) * fact) * (1.0 - x * x).powf(m as f64 / 2.0) * d
    }

    /// Gauss-Legendre nodes and weights on [-1, 1] from the Jacobi matrix.
    fn gauss_legendre(k: usize) -> Vec<(f64, f64)> {
        let j = DMatrix::from_fn(k, k, |a, b| {
            if a.abs_diff(b) == 1 {
                let i = a.max(b) as f64;
                i / (4.0 * i * i - 1.0).sqrt()
            } else {
                0.0
            }
        });
        let e = SymmetricEigen::new(j);
        (0..k).map(|i| (e.eigenvalues[i], 2.0 * e.eigenvectors[(0, i)].powi(2))).collect()
    }

    fn real_sh(n: usize, m: i64, p: &Vec3) -> f64 {
        let (x, y, z) = (p.x, p.y, p.z);
        let c1 = (3.0 / (4.0 * PI)).sqrt();
        let c2 = 0.5 * (15.0 / PI).sqrt();
        match (n, m) {
            (0, 0) => 0.5 / PI.sqrt(),
            (1, -1) => c1 * y,
            (1, 0) => c1 * z,
            (1, 1) => c1 * x,
            (2, -2) => c2 * x * y,
            (2, -1) => c2 * y * z,
            (2, 0) => 0.25 * (5.0 / PI).sqrt() * (3.0 * z * z - 1.0),
            (2, 1) => c2 * x * z,
            (2, 2) => 0.25 * (15.0 / PI).sqrt() * (x * x - y * y),
            _ => unreachable!(),
        }
    }

    fn uniform_cap(zstar: f64, k: usize, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..k)
            .map(|_| {
                let z: f64 = rng.random_range(zstar..1.0);
                (z.acos(), rng.random_range(-PI..PI))
            })
            .collect()
    }

    fn direction(t: f64, p: f64) -> Vec3 {
        Vec3::new(t.sin() * p.cos(), t.sin() * p.sin(), t.cos())
    }

    #[test]
    fn alp_examples() {
        assert_eq!(alp(0, 0, 0.3).unwrap(), 1.0);
        assert_eq!(alp(1, 1, 0.0).unwrap(), -1.0);
        assert!((alp(2, 0, 0.5).unwrap() + 0.125).abs() < 1e-15);
        assert!(matches!(alp(1, 2, 0.0), Err(CapError::Argument(_))));
        assert!(matches!(alp(2, 1, 1.5), Err(CapError::Argument(_))));
    }

    #[test]
    fn alp_matches_rodrigues() {
        for n in 0..=7 {
            for m in 0..=n {
                for x in [-1.0, -0.83, -0.2, 0.0, 0.41, 0.9, 1.0] {
                    let a = alp(n, m, x).unwrap();
                    let b = alp_rodrigues(n, m, x);
                    assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{n} {m} {x}: {a} {b}");
                }
            }
        }
    }

    #[test]
    fn alp_is_stable_at_high_order() {
        // Unnormalized values grow like (2m - 1)!!; check the normalized
        // basis at the pole instead, where A_n^0(0, .) = sqrt((2n + 1) / 4 pi).
        let v = ah_eval(-1.0, 40, 0, 0.0, 0.0).unwrap();
        assert!((v - (81.0 / (4.0 * PI)).sqrt()).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn shift_constraints(zstar in -0.99f64..0.99) {
            let s = ShiftParams::new(zstar).unwrap();
            prop_assert!((s.q1 * zstar + s.q2 + 1.0).abs() <= 1e-12);
            prop_assert!((s.q1 + s.q2 - 1.0).abs() <= 1e-12);
            prop_assert!(s.q1 > 0.0);
        }
    }

    #[test]
    fn shift_params_domain() {
        assert!(ShiftParams::new(1.0).is_err());
        assert!(ShiftParams::new(-1.5).is_err());
        let s = ShiftParams::new(-1.0).unwrap();
        assert_eq!((s.q1, s.q2), (1.0, 0.0));
    }

    #[test]
    fn shifted_examples() {
        let s = ShiftParams::new(0.0).unwrap();
        assert!((shifted_alp(&s, 1, 0, 0.75).unwrap() - 0.5).abs() < 1e-15);
        assert!(shifted_alp(&s, 1, 0, -0.1).is_err());
        let full = ShiftParams::new(-1.0).unwrap();
        for x in [-0.9, -0.3, 0.2, 0.7] {
            assert_eq!(shifted_alp(&full, 3, 2, x).unwrap(), alp(3, 2, x).unwrap());
        }
        for t in [0.0, 0.3, 0.9, PI / 2.0] {
            assert!((s.shift(t.cos()) - (2.0 * t.cos() - 1.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn shifted_orthogonality() {
        let nodes = gauss_legendre(24);
        for zstar in [-0.5, 0.0, 0.5] {
            let s = ShiftParams::new(zstar).unwrap();
            for m in 0..=4 {
                for n in m..=4 {
                    for k in m..=4 {
                        let half = 0.5 * (1.0 - zstar);
                        let integral: f64 = nodes
                            .iter()
                            .map(|&(t, w)| {
                                let x = zstar + half * (t + 1.0);
                                w * half * shifted_alp(&s, n, m, x).unwrap() * shifted_alp(&s, k, m, x).unwrap()
                            })
                            .sum();
                        let expect = if n == k {
                            2.0 / (s.q1 * (2 * n + 1) as f64 * factorial_ratio(n, m))
                        } else {
                            0.0
                        };
                        assert!((integral - expect).abs() <= 1e-8, "{zstar} {m} {n} {k}: {integral} {expect}");
                    }
                }
            }
        }
    }

    #[test]
    fn reduces_to_real_sh() {
        for i in 0..10 {
            for j in 0..10 {
                let (t, p) = (PI * (i as f64 + 0.5) / 10.0, -PI + 2.0 * PI * j as f64 / 10.0);
                let d = direction(t, p);
                for (n, m) in basis_order(2) {
                    let a = ah_eval(-1.0, n, m, t, p).unwrap();
                    assert!((a - real_sh(n, m, &d)).abs() <= 1e-10, "{n} {m}");
                }
            }
        }
    }

    #[test]
    fn eval_examples() {
        let zstar = 0.3;
        let q1 = 2.0 / 0.7;
        for (t, p) in [(0.0, 0.0), (0.5, 1.0), (1.2, -2.0)] {
            assert!((ah_eval(zstar, 0, 0, t, p).unwrap() - (q1 / (4.0 * PI)).sqrt()).abs() < 1e-15);
            assert_eq!(ah_eval(zstar, 1, -1, t, 0.0).unwrap(), 0.0);
        }
        assert!(ah_eval(zstar, 1, 0, 1.3, 0.0).is_err());
        assert!(ah_eval(zstar, 1, 2, 0.1, 0.0).is_err());
    }

    #[test]
    fn design_matrix_shape() {
        let a = ah_design_matrix(&[(0.1, 0.2), (0.3, -1.0)], 0, 0.0).unwrap();
        assert_eq!(a.shape(), (2, 1));
        assert!(a.iter().all(|&v| (v - (2.0 / (4.0 * PI)).sqrt()).abs() < 1e-15));
        let s = uniform_cap(0.0, 4, 1);
        assert_eq!(ah_design_matrix(&s, 1, 0.0).unwrap().shape(), (4, 4));
    }

    #[test]
    fn monte_carlo_gram() {
        let zstar = -0.3;
        let s = uniform_cap(zstar, 100_000, 7);
        let a = ah_design_matrix(&s, 3, zstar).unwrap();
        let area = 2.0 * PI * (1.0 - zstar);
        let g = a.transpose() * &a * (area / s.len() as f64);
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - e).abs() <= 0.05, "{i} {j} {}", g[(i, j)]);
            }
        }
    }

    fn random_model(order: usize, zstar: f64, seed: u64) -> AHModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = (0..(order + 1) * (order + 1))
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        AHModel::new(zstar, order, c).unwrap()
    }

    #[test]
    fn fit_recovers_exact_coefficients() {
        let zstar = 0.2;
        let m0 = random_model(4, zstar, 3);
        let s = uniform_cap(zstar, 2000, 4);
        let v = ah_reconstruct(&m0, &s).unwrap();
        let fit = ah_fit(&v, &s, 4, zstar).unwrap();
        for (a, b) in fit.model.coefficients.iter().zip(&m0.coefficients) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 1e-8);
            }
        }
        assert!(fit.rms < 1e-10);
    }

    #[test]
    fn fit_contracts() {
        let s = uniform_cap(0.0, 8, 5);
        let v: Vec<Vec3> = s.iter().map(|&(t, p)| direction(t, p)).collect();
        assert!(matches!(ah_fit(&v, &s, 2, 0.0), Err(CapError::Argument(_))));
        let same = vec![(0.4, 0.5); 20];
        let v = vec![Vec3::x(); 20];
        assert!(matches!(ah_fit(&v, &same, 2, 0.0), Err(CapError::IllPosed { .. })));
    }

    #[test]
    fn linear_coordinates_on_sphere() {
        let s = uniform_cap(-1.0, 500, 9);
        let v: Vec<Vec3> = s.iter().map(|&(t, p)| direction(t, p)).collect();
        let fit = ah_fit(&v, &s, 1, -1.0).unwrap();
        assert!(fit.rms <= 1e-6);
        let back = ah_reconstruct(&fit.model, &s).unwrap();
        let rms = (back.iter().zip(&v).map(|(a, b)| (a - b).norm_squared()).sum::<f64>() / v.len() as f64).sqrt();
        assert!((rms - fit.rms).abs() < 1e-12);
    }

    #[test]
    fn refit_is_projection() {
        let zstar = -0.4;
        let s = uniform_cap(zstar, 800, 11);
        let v: Vec<Vec3> = s
            .iter()
            .map(|&(t, p)| direction(t, p) * (1.0 + 0.3 * (3.0 * t).cos() * p.sin()))
            .collect();
        let fit = ah_fit(&v, &s, 3, zstar).unwrap();
        let y = ah_reconstruct(&fit.model, &s).unwrap();
        let again = ah_fit(&y, &s, 3, zstar).unwrap();
        for (a, b) in again.model.coefficients.iter().zip(&fit.model.coefficients) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn rms_decreases_with_order() {
        let zstar = 0.1;
        let s = uniform_cap(zstar, 3000, 13);
        let v: Vec<Vec3> = s
            .iter()
            .map(|&(t, p)| {
                let d = direction(t, p);
                Vec3::new(1.5 * d.x, d.y, 0.8 * d.z) * (1.0 + 0.1 * (2.0 * p).cos() * t.sin())
            })
            .collect();
        let mut last = f64::INFINITY;
        for order in [1, 2, 4, 8] {
            let rms = ah_fit(&v, &s, order, zstar).unwrap().rms;
            assert!(rms <= last, "{order}: {rms} > {last}");
            last = rms;
        }
    }

    #[test]
    fn zero_model_reconstructs_origin() {
        let m = AHModel::new(0.0, 2, vec![[0.0; 3]; 9]).unwrap();
        assert!(ah_reconstruct(&m, &uniform_cap(0.0, 10, 1))
            .unwrap()
            .iter()
            .all(|p| *p == Vec3::zeros()));
        assert!(AHModel::new(0.0, 2, vec![[0.0; 3]; 8]).is_err());
    }

    #[test]
    fn model_json() {
        let m = random_model(2, -0.25, 17);
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"rows\":[[0,0],[1,-1],[1,0],[1,1],[2,-2]"));
        assert_eq!(serde_json::from_str::<AHModel>(&s).unwrap(), m);
        let bad = s.replace("[1,-1]", "[1,1]");
        assert!(serde_json::from_str::<AHModel>(&bad).is_err());
        assert_eq!(m.coefficient(2, -2), Some(m.coefficients[4]));
        assert_eq!(m.coefficient(3, 0), None);
    }

    #[test]
    fn aspect_ratio_examples() {
        let x: Vec<Vec3> = uniform_cap(-1.0, 200, 21).iter().map(|&(t, p)| direction(t, p)).collect();
        let r = aspect_ratio(&x, &x).unwrap();
        assert!((r.ratio - 1.0).abs() < 1e-12);
        let y: Vec<Vec3> = x.iter().map(|p| Vec3::new(2.0 * p.x, p.y, p.z)).collect();
        assert!((aspect_ratio(&y, &x).unwrap().ratio - 2.0).abs() < 1e-9);
        let flat: Vec<Vec3> = x.iter().map(|p| Vec3::new(p.x, p.y, 0.0)).collect();
        assert!(matches!(aspect_ratio(&flat, &x), Err(CapError::IllPosed { .. })));
        assert!(aspect_ratio(&y, &y).is_err());
    }

    #[test]
    fn aspect_ratio_matches_eigen_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x: Vec<Vec3> = uniform_cap(-1.0, 300, 22).iter().map(|&(t, p)| direction(t, p)).collect();
        for _ in 0..5 {
            let a0 = Matrix3::from_fn(|i, j| if i == j { 2.0 } else { 0.0 } + rng.random_range(-0.5..0.5));
            let y: Vec<Vec3> = x.iter().map(|p| a0 * p).collect();
            let r = aspect_ratio(&y, &x).unwrap();
            let mut ev: Vec<f64> = SymmetricEigen::new(a0.transpose() * a0)
                .eigenvalues
                .iter()
                .map(|l| l.sqrt())
                .collect();
            ev.sort_by(|a, b| b.total_cmp(a));
            assert!((r.sigma1 - ev[0]).abs() <= 1e-8 && (r.sigma3 - ev[2]).abs() <= 1e-8);
        }
    }
}
