use std::collections::VecDeque;

use crate::error::{CapError, Result};

/// Systems larger than this are solved with preconditioned conjugate gradients.
pub const DIRECT_SOLVE_LIMIT: usize = 200_000;

const CG_RTOL: f64 = 1e-10;

/// Coordinate-format accumulator. Duplicate entries are summed.
#[derive(Debug, Clone, Default)]
pub struct TripletMatrix {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletMatrix {
    pub fn new(n: usize) -> Self {
        TripletMatrix { n, entries: Vec::new() }
    }

    pub fn with_capacity(n: usize, cap: usize) -> Self {
        TripletMatrix {
            n,
            entries: Vec::with_capacity(cap),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n);
        self.entries.push((i, j, v));
    }

    /// Adds `v` at (i, j) and (j, i); `i == j` adds once.
    pub fn add_sym(&mut self, i: usize, j: usize, v: f64) {
        self.add(i, j, v);
        if i != j {
            self.add(j, i, v);
        }
    }

    pub fn to_csr(&self) -> CsrMatrix {
        let mut e = self.entries.clone();
        e.sort_unstable_by_key(|a| (a.0, a.1));
        let mut indptr = vec![0usize; self.n + 1];
        let mut indices = Vec::with_capacity(e.len());
        let mut values: Vec<f64> = Vec::with_capacity(e.len());
        let mut last = (usize::MAX, usize::MAX);
        for (i, j, v) in e {
            if (i, j) == last {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(j);
                values.push(v);
                indptr[i + 1] += 1;
                last = (i, j);
            }
        }
        for i in 0..self.n {
            indptr[i + 1] += indptr[i];
        }
        CsrMatrix {
            n: self.n,
            indptr,
            indices,
            values,
        }
    }
}

/// Square compressed-sparse-row matrix with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.indptr[i]..self.indptr[i + 1];
        match self.indices[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| (v - self.get(j, i)).abs() <= tol * v.abs().max(1.0)))
    }

    /// Principal submatrix on `keep` (in the given order).
    pub fn submatrix(&self, keep: &[usize]) -> CsrMatrix {
        let mut map = vec![usize::MAX; self.n];
        for (k, &i) in keep.iter().enumerate() {
            map[i] = k;
        }
        let mut t = TripletMatrix::with_capacity(keep.len(), self.nnz());
        for (k, &i) in keep.iter().enumerate() {
            for (j, v) in self.row(i) {
                if map[j] != usize::MAX {
                    t.add(k, map[j], v);
                }
            }
        }
        t.to_csr()
    }
}

/// Reverse Cuthill-McKee ordering; `perm[k]` is the original index placed at position k.
fn rcm_order(a: &CsrMatrix) -> Vec<usize> {
    let n = a.n;
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).filter(|&(j, _)| j != i).count()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let start = pseudo_peripheral(a, seed, &degree);
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nb: Vec<usize> = a.row(v).map(|(j, _)| j).filter(|&j| !visited[j]).collect();
            nb.sort_by_key(|&j| (degree[j], j));
            for j in nb {
                visited[j] = true;
                queue.push_back(j);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(a: &CsrMatrix, start: usize) -> (Vec<usize>, usize) {
    let mut level = vec![usize::MAX; a.n];
    level[start] = 0;
    let mut queue = VecDeque::from([start]);
    let mut last = start;
    while let Some(v) = queue.pop_front() {
        last = v;
        for (j, _) in a.row(v) {
            if level[j] == usize::MAX {
                level[j] = level[v] + 1;
                queue.push_back(j);
            }
        }
    }
    (level, last)
}

fn pseudo_peripheral(a: &CsrMatrix, seed: usize, degree: &[usize]) -> usize {
    let mut v = seed;
    let (mut level, _) = bfs_levels(a, v);
    let mut ecc = level.iter().filter(|&&l| l != usize::MAX).max().copied().unwrap_or(0);
    for _ in 0..8 {
        let far = (0..a.n).filter(|&i| level[i] == ecc).min_by_key(|&i| (degree[i], i)).unwrap_or(v);
        let (l2, _) = bfs_levels(a, far);
        let e2 = l2.iter().filter(|&&l| l != usize::MAX).max().copied().unwrap_or(0);
        if e2 <= ecc {
            break;
        }
        v = far;
        level = l2;
        ecc = e2;
    }
    v
}

/// Envelope (skyline) Cholesky factorization under a reverse Cuthill-McKee ordering.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    perm: Vec<usize>,
    /// First column stored in each (permuted) row.
    first: Vec<usize>,
    /// Start offset of each row in `data`; row i holds columns first[i]..=i.
    offset: Vec<usize>,
    data: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Cholesky> {
        let n = a.n;
        let perm = rcm_order(a);
        let mut inv = vec![0usize; n];
        for (k, &i) in perm.iter().enumerate() {
            inv[i] = k;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (i, &p) in perm.iter().enumerate() {
            for (j, _) in a.row(p) {
                let jj = inv[j];
                if jj < first[i] {
                    first[i] = jj;
                }
            }
        }
        let mut offset = vec![0usize; n + 1];
        for i in 0..n {
            offset[i + 1] = offset[i] + (i - first[i] + 1);
        }
        let mut data = vec![0.0; offset[n]];
        for (i, &p) in perm.iter().enumerate() {
            for (j, v) in a.row(p) {
                let jj = inv[j];
                if jj <= i {
                    data[offset[i] + jj - first[i]] += v;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let ri = offset[i] + (k0 - fi);
                let rj = offset[j] + (k0 - fj);
                let len = j - k0;
                let dot: f64 = data[ri..ri + len].iter().zip(&data[rj..rj + len]).map(|(x, y)| x * y).sum();
                let djj = data[offset[j] + j - fj];
                let idx = offset[i] + j - fi;
                data[idx] = (data[idx] - dot) / djj;
            }
            let row = &data[offset[i]..offset[i] + (i - fi)];
            let s: f64 = row.iter().map(|x| x * x).sum();
            let idx = offset[i] + i - fi;
            let d = data[idx] - s;
            if !(d > 0.0) || !d.is_finite() {
                return Err(CapError::Solver(format!(
                    "matrix is not positive definite (pivot {d:.3e} at row {})",
                    perm[i]
                )));
            }
            data[idx] = d.sqrt();
        }
        Ok(Cholesky {
            n,
            perm,
            first,
            offset,
            data,
        })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.data[self.offset[i]..self.offset[i + 1]];
            let s: f64 = row[..i - fi].iter().zip(&y[fi..i]).map(|(l, x)| l * x).sum();
            y[i] = (y[i] - s) / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.data[self.offset[i]..self.offset[i + 1]];
            y[i] /= row[i - fi];
            let yi = y[i];
            for (k, l) in (fi..i).zip(row) {
                y[k] -= l * yi;
            }
        }
        let mut x = vec![0.0; n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = y[k];
        }
        x
    }
}

/// Jacobi-preconditioned conjugate gradients.
fn pcg(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.n;
    let diag = a.diagonal();
    if diag.iter().any(|&d| !(d > 0.0)) {
        return Err(CapError::Solver("non-positive diagonal entry in SPD system".into()));
    }
    let bnorm = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for _ in 0..(10 * n).max(100) {
        let ap = a.mul_vec(&p);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(CapError::Solver("conjugate gradients hit a non-positive curvature".into()));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rnorm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        if rnorm <= CG_RTOL * bnorm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(CapError::Solver("conjugate gradients did not converge".into()))
}

/// Solves `A x = b` for each right-hand side; A must be symmetric positive definite.
pub fn solve_spd(a: &CsrMatrix, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if a.n == 0 {
        return Ok(rhs.iter().map(|_| Vec::new()).collect());
    }
    if a.n <= DIRECT_SOLVE_LIMIT {
        let chol = Cholesky::factor(a)?;
        Ok(rhs.iter().map(|b| chol.solve(b)).collect())
    } else {
        rhs.iter().map(|b| pcg(a, b)).collect()
    }
}

/// Solves `A x = b` with `x[fixed[k]] = values[c][k]` for each column c.
/// Rows of fixed unknowns are ignored; the remaining principal block must be SPD.
pub fn solve_dirichlet(a: &CsrMatrix, fixed: &[usize], values: &[Vec<f64>], rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.n;
    let mut is_fixed = vec![false; n];
    for &i in fixed {
        is_fixed[i] = true;
    }
    let free: Vec<usize> = (0..n).filter(|&i| !is_fixed[i]).collect();
    let reduced = a.submatrix(&free);
    let mut full: Vec<Vec<f64>> = Vec::with_capacity(values.len());
    let mut reduced_rhs = Vec::with_capacity(values.len());
    for (c, vals) in values.iter().enumerate() {
        let mut x = vec![0.0; n];
        for (k, &i) in fixed.iter().enumerate() {
            x[i] = vals[k];
        }
        let ax = a.mul_vec(&x);
        reduced_rhs.push(free.iter().map(|&i| rhs[c][i] - ax[i]).collect::<Vec<f64>>());
        full.push(x);
    }
    let sols = solve_spd(&reduced, &reduced_rhs)?;
    for (x, s) in full.iter_mut().zip(sols) {
        for (k, &i) in free.iter().enumerate() {
            x[i] = s[k];
        }
    }
    Ok(full)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> (CsrMatrix, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = TripletMatrix::new(n);
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            for _ in 0..3 {
                let j = rng.random_range(0..n);
                if j != i {
                    let w: f64 = rng.random_range(0.1..1.0);
                    t.add_sym(i, j, -w);
                    t.add(i, i, w);
                    t.add(j, j, w);
                    d[(i, j)] -= w;
                    d[(j, i)] -= w;
                    d[(i, i)] += w;
                    d[(j, j)] += w;
                }
            }
            t.add(i, i, 0.01);
            d[(i, i)] += 0.01;
        }
        (t.to_csr(), d)
    }

    #[test]
    fn cholesky_matches_dense() {
        let (a, d) = random_spd(120, 5);
        assert!(a.is_symmetric(0.0));
        let b: Vec<f64> = (0..120).map(|i| (i as f64).sin()).collect();
        let x = Cholesky::factor(&a).unwrap().solve(&b);
        let xd = d.cholesky().unwrap().solve(&DVector::from_vec(b.clone()));
        for i in 0..120 {
            assert!((x[i] - xd[i]).abs() < 1e-9 * xd.amax());
        }
    }

    #[test]
    fn pcg_matches_direct() {
        let (a, _) = random_spd(200, 9);
        let b: Vec<f64> = (0..200).map(|i| (i as f64 * 0.3).cos()).collect();
        let x1 = Cholesky::factor(&a).unwrap().solve(&b);
        let x2 = pcg(&a, &b).unwrap();
        let scale = x1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..200 {
            assert!((x1[i] - x2[i]).abs() < 1e-6 * scale);
        }
    }

    #[test]
    fn indefinite_is_rejected() {
        let mut t = TripletMatrix::new(2);
        t.add(0, 0, 1.0);
        t.add_sym(0, 1, 2.0);
        t.add(1, 1, 1.0);
        assert!(matches!(Cholesky::factor(&t.to_csr()), Err(CapError::Solver(_))));
    }

    #[test]
    fn dirichlet_path_graph_is_linear() {
        let n = 11;
        let mut t = TripletMatrix::new(n);
        for i in 0..n - 1 {
            t.add_sym(i, i + 1, -1.0);
            t.add(i, i, 1.0);
            t.add(i + 1, i + 1, 1.0);
        }
        let x = solve_dirichlet(&t.to_csr(), &[0, n - 1], &[vec![0.0, 1.0]], &[vec![0.0; n]]).unwrap();
        for (i, v) in x[0].iter().enumerate() {
            assert!((v - i as f64 / 10.0).abs() < 1e-13);
        }
    }

    #[test]
    fn duplicates_are_summed() {
        let mut t = TripletMatrix::new(2);
        t.add(1, 0, 1.5);
        t.add(1, 0, 2.0);
        let a = t.to_csr();
        assert_eq!(a.get(1, 0), 3.5);
        assert_eq!(a.get(0, 1), 0.0);
        assert_eq!(a.nnz(), 1);
    }
}
