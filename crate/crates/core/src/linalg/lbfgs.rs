use std::collections::VecDeque;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory BFGS with Armijo backtracking. `eval` returns `None` for
/// infeasible points, which the line search treats as too long a step.
/// Stops when an accepted step lowers `f` by less than `rel_tol * |f|`.
pub(crate) fn lbfgs(
    x0: Vec<f64>,
    eval: impl Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
    max_iter: usize,
    rel_tol: f64,
    first_step: f64,
) -> (Vec<f64>, f64, usize) {
    const MEMORY: usize = 8;
    let n = x0.len();
    let mut x = x0;
    let Some((mut f, mut g)) = eval(&x) else {
        return (x, f64::INFINITY, 0);
    };
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iters = 0;
    while iters < max_iter {
        iters += 1;
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            for i in 0..n {
                q[i] -= a * y[i];
            }
            alphas.push(a);
        }
        let scale = match hist.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => first_step / dot(&g, &g).sqrt().max(1e-300),
        };
        q.iter_mut().for_each(|v| *v *= scale);
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for i in 0..n {
                q[i] += s[i] * (a - b);
            }
        }
        let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&d, &g);
        if !(slope < 0.0) {
            hist.clear();
            let gn = dot(&g, &g).sqrt().max(1e-300);
            d = g.iter().map(|v| -v * first_step / gn).collect();
            slope = dot(&d, &g);
            if !(slope < 0.0) {
                break;
            }
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            if let Some((ft, gt)) = eval(&trial) {
                if ft <= f + 1e-4 * step * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((trial, ft, gt)) = accepted else { break };
        let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if hist.len() == MEMORY {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        let decrease = f - ft;
        x = trial;
        f = ft;
        g = gt;
        if decrease <= rel_tol * f.abs() {
            break;
        }
    }
    (x, f, iters)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let rosen = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            Some((f, g))
        };
        let (x, f, _) = lbfgs(vec![-1.2, 1.0], rosen, 1000, 0.0, 0.1);
        assert!(f < 1e-12, "{f}");
        assert!((x[0] - 1.0).abs() < 1e-5 && (x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn respects_infeasible_region() {
        // Minimum of (x - 2)^2 with x < 1 enforced by the evaluator.
        let (x, _, _) = lbfgs(
            vec![0.0],
            |x| (x[0] < 1.0).then(|| ((x[0] - 2.0).powi(2), vec![2.0 * (x[0] - 2.0)])),
            200,
            0.0,
            0.1,
        );
        assert!(x[0] < 1.0 && x[0] > 0.99);
    }
}
