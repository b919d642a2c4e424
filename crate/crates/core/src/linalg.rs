//! Small linear-algebra kernels: symmetric tridiagonal pencils (Sturm
//! bisection), CSR matrices, Jacobi-preconditioned CG and banded LU.

use crate::error::{Error, Result};

/// Symmetric tridiagonal matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SymTridiagonal {
    pub diag: Vec<f64>,
    /// `off[i]` couples rows `i` and `i + 1`.
    pub off: Vec<f64>,
}

impl SymTridiagonal {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Result<Self> {
        if diag.is_empty() || off.len() + 1 != diag.len() {
            return Err(Error::InvalidArgument(format!("tridiagonal sizes {} / {}", diag.len(), off.len())));
        }
        Ok(Self { diag, off })
    }

    pub fn diagonal(diag: Vec<f64>) -> Self {
        let off = vec![0.0; diag.len().saturating_sub(1)];
        Self { diag, off }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut y: Vec<f64> = (0..n).map(|i| self.diag[i] * x[i]).collect();
        for i in 0..n - 1 {
            y[i] += self.off[i] * x[i + 1];
            y[i + 1] += self.off[i] * x[i];
        }
        y
    }

    /// `x^T A x`.
    pub fn quad(&self, x: &[f64]) -> f64 {
        self.matvec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }
}

/// Finite-volume `-d^2/dx^2` on `cells` cells of width `h` with zero
/// Dirichlet values on both end faces (half-cell distance).
pub fn dirichlet_stiffness(cells: usize, h: f64) -> SymTridiagonal {
    let mut diag = vec![2.0 / h; cells];
    diag[0] = 3.0 / h;
    diag[cells - 1] = 3.0 / h;
    SymTridiagonal { diag, off: vec![-1.0 / h; cells - 1] }
}

/// Number of generalized eigenvalues of `(p, q)` below `mu`, i.e. the
/// number of negative pivots of `p - mu q` (Sylvester inertia). `q` must
/// be positive definite.
pub fn count_below(p: &SymTridiagonal, q: &SymTridiagonal, mu: f64) -> usize {
    let n = p.len();
    let mut count = 0;
    let mut piv = p.diag[0] - mu * q.diag[0];
    let tiny = f64::MIN_POSITIVE.sqrt();
    for i in 0..n {
        if i > 0 {
            let e = p.off[i - 1] - mu * q.off[i - 1];
            piv = (p.diag[i] - mu * q.diag[i]) - e * e / piv;
        }
        if piv == 0.0 {
            piv = -tiny;
        }
        if piv < 0.0 {
            count += 1;
        }
    }
    count
}

/// `k`-th smallest (0-based) generalized eigenvalue of `(p, q)`.
pub fn pencil_eigenvalue(p: &SymTridiagonal, q: &SymTridiagonal, k: usize) -> Result<f64> {
    let n = p.len();
    if q.len() != n || k >= n {
        return Err(Error::InvalidArgument(format!("eigenvalue index {k} for size {n}")));
    }
    let mut lo = -1.0;
    let mut hi = 1.0;
    let mut guard = 0;
    while count_below(p, q, lo) > k {
        lo *= 2.0;
        guard += 1;
        if guard > 2100 {
            return Err(Error::Eigen("no lower bracket".into()));
        }
    }
    while count_below(p, q, hi) <= k {
        hi *= 2.0;
        guard += 1;
        if guard > 2100 {
            return Err(Error::Eigen("no upper bracket".into()));
        }
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count_below(p, q, mid) > k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Largest generalized eigenvalue of `(p, q)`.
pub fn pencil_largest(p: &SymTridiagonal, q: &SymTridiagonal) -> Result<f64> {
    pencil_eigenvalue(p, q, p.len() - 1)
}

/// Eigenvector for an (accurately known) eigenvalue by inverse iteration.
pub fn pencil_eigenvector(p: &SymTridiagonal, q: &SymTridiagonal, lambda: f64) -> Result<Vec<f64>> {
    let n = p.len();
    let shift = lambda * (1.0 + 1e-13) + 1e-300;
    let sub: Vec<f64> = (0..n - 1).map(|i| p.off[i] - shift * q.off[i]).collect();
    let diag: Vec<f64> = (0..n).map(|i| p.diag[i] - shift * q.diag[i]).collect();
    let mut x = vec![1.0; n];
    for (i, v) in x.iter_mut().enumerate() {
        // deterministic start with components in every mode
        *v += 1e-3 * ((i * 7919) % 101) as f64;
    }
    for _ in 0..4 {
        let rhs = q.matvec(&x);
        x = solve_tridiagonal(&sub, &diag, &sub, &rhs)?;
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Eigen("inverse iteration broke down".into()));
        }
        x.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(x)
}

/// Gaussian elimination with partial pivoting for a general tridiagonal
/// system (`sub[i]` = A[i+1][i], `sup[i]` = A[i][i+1]).
pub fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    // after elimination row k holds columns k, k+1, k+2 as (d, u, u2)
    let mut d = diag.to_vec();
    let mut u = sup.to_vec();
    u.push(0.0);
    let mut u2 = vec![0.0; n];
    let mut b = rhs.to_vec();
    for k in 0..n - 1 {
        // row k+1 before elimination: (l, d[k+1], u[k+1]) on columns k, k+1, k+2
        let mut l = sub[k];
        if l.abs() > d[k].abs() {
            let (rk, rk1, rk2) = (d[k], u[k], u2[k]);
            d[k] = l;
            u[k] = d[k + 1];
            u2[k] = u[k + 1];
            l = rk;
            d[k + 1] = rk1;
            u[k + 1] = rk2;
            b.swap(k, k + 1);
        }
        if d[k] == 0.0 {
            return Err(Error::Eigen("singular tridiagonal system".into()));
        }
        let m = l / d[k];
        d[k + 1] -= m * u[k];
        u[k + 1] -= m * u2[k];
        b[k + 1] -= m * b[k];
    }
    if d[n - 1] == 0.0 {
        d[n - 1] = f64::EPSILON * d.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        if i + 1 < n {
            s -= u[i] * x[i + 1];
        }
        if i + 2 < n {
            s -= u2[i] * x[i + 2];
        }
        x[i] = s / d[i];
    }
    Ok(x)
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

/// Accumulates entries row by row; duplicates are summed.
#[derive(Clone, Debug, Default)]
pub struct TripletBuilder {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        Self { n, rows: vec![Vec::new(); n] }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            self.rows[i].push((j, v));
        }
    }

    pub fn build(self) -> CsrMatrix {
        let mut row_ptr = Vec::with_capacity(self.n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in self.rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (j, v) in row {
                if last == Some(j) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(j);
                    vals.push(v);
                    last = Some(j);
                }
            }
            row_ptr.push(cols.len());
        }
        CsrMatrix { n: self.n, row_ptr, cols, vals }
    }
}

impl CsrMatrix {
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            y[i] = s;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `max |A_ij - A_ji| / max |A_ij|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k];
                scale = scale.max(self.vals[k].abs());
                worst = worst.max((self.vals[k] - self.get(j, i)).abs());
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    /// Largest `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        let mut bw = 0;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                bw = bw.max(self.cols[k].abs_diff(i));
            }
        }
        bw
    }

    /// `self + s * diag(d)`.
    pub fn add_diagonal(&self, d: &[f64], s: f64) -> CsrMatrix {
        let mut b = TripletBuilder::new(self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                b.add(i, self.cols[k], self.vals[k]);
            }
            b.add(i, i, s * d[i]);
        }
        b.build()
    }
}

/// Outcome of an iterative solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients from the initial guess `x`.
/// Stops at `|b - A x| <= tol |b|`.
pub fn pcg(a: &CsrMatrix, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<SolveStats> {
    let n = a.n;
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats { iterations: 0, relative_residual: 0.0 });
    }
    let dinv: Vec<f64> = a.diagonal().iter().map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut r = a.matvec(x);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut rel = norm(&r) / bnorm;
    if rel <= tol {
        return Ok(SolveStats { iterations: 0, relative_residual: rel });
    }
    let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        a.matvec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NonConvergence { iterations: it, residual: rel });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = norm(&r) / bnorm;
        if rel <= tol {
            return Ok(SolveStats { iterations: it, relative_residual: rel });
        }
        for i in 0..n {
            z[i] = r[i] * dinv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NonConvergence { iterations: max_iter, residual: rel })
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Banded LU factorization with partial pivoting.
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    ab: Vec<f64>,
    piv: Vec<usize>,
}

impl BandedLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.n;
        let bw = a.bandwidth();
        let (kl, ku) = (bw, bw);
        let width = 2 * kl + ku + 1;
        let mut ab = vec![0.0; n * width];
        let idx = |i: usize, j: usize| i * width + (j + kl - i);
        for i in 0..n {
            for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                ab[idx(i, a.cols[k])] = a.vals[k];
            }
        }
        let mut piv = vec![0; n];
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = ab[idx(k, k)].abs();
            for i in k + 1..=last_row {
                let v = ab[idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            piv[k] = p;
            if best == 0.0 {
                return Err(Error::NonConvergence { iterations: k, residual: f64::INFINITY });
            }
            let last_col = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    ab.swap(idx(k, j), idx(p, j));
                }
            }
            let pivot = ab[idx(k, k)];
            for i in k + 1..=last_row {
                let l = ab[idx(i, k)] / pivot;
                ab[idx(i, k)] = l;
                if l != 0.0 {
                    for j in k + 1..=last_col {
                        ab[idx(i, j)] -= l * ab[idx(k, j)];
                    }
                }
            }
        }
        Ok(Self { n, kl, ku, width, ab, piv })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, kl, ku, w) = (self.n, self.kl, self.ku, self.width);
        let idx = |i: usize, j: usize| i * w + (j + kl - i);
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.piv[k]);
            let xk = x[k];
            if xk != 0.0 {
                for i in k + 1..=(k + kl).min(n - 1) {
                    x[i] -= self.ab[idx(i, k)] * xk;
                }
            }
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..=(i + kl + ku).min(n - 1) {
                s -= self.ab[idx(i, j)] * x[j];
            }
            x[i] = s / self.ab[idx(i, i)];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn random_matrix(n: usize, bw: usize, seed: u64, sym: bool) -> CsrMatrix {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
        };
        let mut b = TripletBuilder::new(n);
        for i in 0..n {
            b.add(i, i, 4.0 + bw as f64);
            for j in i + 1..(i + bw + 1).min(n) {
                let v = next();
                b.add(i, j, v);
                b.add(j, i, if sym { v } else { next() });
            }
        }
        b.build()
    }

    #[test]
    fn banded_lu_matches_dense() {
        let a = random_matrix(40, 3, 9, false);
        let lu = BandedLu::factor(&a).unwrap();
        let rhs: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
        let x = lu.solve(&rhs);
        let dense = DMatrix::from_fn(40, 40, |i, j| a.get(i, j));
        let xd = dense.lu().solve(&DVector::from_vec(rhs)).unwrap();
        for i in 0..40 {
            assert!((x[i] - xd[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn banded_lu_pivots() {
        // zero leading diagonal forces a row swap
        let mut b = TripletBuilder::new(3);
        b.add(0, 1, 1.0);
        b.add(1, 0, 1.0);
        b.add(1, 1, 1.0);
        b.add(1, 2, 1.0);
        b.add(2, 1, 1.0);
        b.add(2, 2, 3.0);
        let a = b.build();
        let x = BandedLu::factor(&a).unwrap().solve(&[1.0, 2.0, 3.0]);
        let y = a.matvec(&x);
        for (u, v) in y.iter().zip([1.0, 2.0, 3.0]) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn pcg_solves_spd() {
        let a = random_matrix(60, 2, 3, true);
        assert!(a.asymmetry() == 0.0);
        let rhs: Vec<f64> = (0..60).map(|i| 1.0 + i as f64 * 0.01).collect();
        let mut x = vec![0.0; 60];
        let st = pcg(&a, &rhs, &mut x, 1e-12, 500).unwrap();
        assert!(st.relative_residual <= 1e-12);
        let r = a.matvec(&x);
        assert!(r.iter().zip(&rhs).all(|(u, v)| (u - v).abs() < 1e-9));
    }

    #[test]
    fn pcg_reports_cap() {
        let a = random_matrix(60, 2, 3, true);
        let rhs = vec![1.0; 60];
        let mut x = vec![0.0; 60];
        match pcg(&a, &rhs, &mut x, 1e-30, 2) {
            Err(Error::NonConvergence { iterations, residual }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 0.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tridiagonal_solver_with_pivoting() {
        let sub = vec![5.0, 1.0, -2.0];
        let diag = vec![0.0, 1.0, 4.0, 1.0];
        let sup = vec![1.0, 3.0, 1.0];
        let rhs = vec![1.0, 2.0, 3.0, 4.0];
        let x = solve_tridiagonal(&sub, &diag, &sup, &rhs).unwrap();
        let dense = DMatrix::from_fn(4, 4, |i, j| {
            if i == j {
                diag[i]
            } else if i == j + 1 {
                sub[j]
            } else if j == i + 1 {
                sup[i]
            } else {
                0.0
            }
        });
        let xd = dense.lu().solve(&DVector::from_vec(rhs)).unwrap();
        for i in 0..4 {
            assert!((x[i] - xd[i]).abs() < 1e-13, "{x:?} vs {xd:?}");
        }
    }

    #[test]
    fn sturm_count_matches_dense_spectrum() {
        let n = 30;
        let p = dirichlet_stiffness(n, 1.0 / n as f64);
        let q = SymTridiagonal::diagonal((0..n).map(|i| 0.01 + i as f64 * 1e-3).collect());
        let dense_p = DMatrix::from_fn(n, n, |i, j| tri(&p, i, j));
        let qs = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 / q.diag[i].sqrt() } else { 0.0 });
        let c = &qs * dense_p * &qs;
        let mut ev: Vec<f64> = c.symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for k in [0, 5, n - 1] {
            let l = pencil_eigenvalue(&p, &q, k).unwrap();
            assert!(((l - ev[k]) / ev[k]).abs() < 1e-10, "{k}: {l} vs {}", ev[k]);
        }
    }

    fn tri(a: &SymTridiagonal, i: usize, j: usize) -> f64 {
        if i == j {
            a.diag[i]
        } else if i + 1 == j {
            a.off[i]
        } else if j + 1 == i {
            a.off[j]
        } else {
            0.0
        }
    }
}
