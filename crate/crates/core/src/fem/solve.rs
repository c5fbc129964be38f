//! Sparse linear solves: equilibrated direct LU with iterative refinement,
//! and restarted GMRES preconditioned by ILU(0).

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::sparse::{dot, norm2, CsrMatrix, Triplets};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LinearMethod {
    Direct,
    Gmres { restart: usize, max_iter: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearOptions {
    pub method: LinearMethod,
    /// Target for `||Ax - b|| / ||b||`.
    pub tol: f64,
    /// Try the other method when the first one misses `tol`.
    pub fallback: bool,
}

impl Default for LinearOptions {
    fn default() -> Self {
        LinearOptions {
            method: LinearMethod::Direct,
            tol: 1e-10,
            fallback: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LinearSolution {
    pub x: Vec<f64>,
    pub relative_residual: f64,
    pub history: Vec<f64>,
    pub method: &'static str,
}

/// Row then column max-norm equilibration factors.
fn equilibrate(a: &CsrMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = vec![0.0; a.n_rows];
    for (i, ri) in r.iter_mut().enumerate() {
        let m = a.row(i).fold(0.0f64, |m, (_, v)| m.max(v.abs()));
        if m == 0.0 || !m.is_finite() {
            return Err(Error::LinearSolver {
                reason: format!("row {i} is empty or not finite"),
                history: vec![],
            });
        }
        *ri = 1.0 / m;
    }
    let mut cm = vec![0.0f64; a.n_cols];
    for i in 0..a.n_rows {
        for (j, v) in a.row(i) {
            cm[j] = cm[j].max((v * r[i]).abs());
        }
    }
    let c = cm.iter().map(|&m| if m > 0.0 { 1.0 / m } else { 1.0 }).collect();
    Ok((r, c))
}

/// LU factors of an equilibrated copy of a square matrix.
pub struct DirectSolver {
    lu: Lu<usize, f64>,
    r: Vec<f64>,
    c: Vec<f64>,
}

impl DirectSolver {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        if a.n_rows != a.n_cols {
            return Err(Error::Dimension(format!("LU of a {}x{} matrix", a.n_rows, a.n_cols)));
        }
        let (r, c) = equilibrate(a)?;
        let mut t = Vec::with_capacity(a.nnz());
        for i in 0..a.n_rows {
            for (j, v) in a.row(i) {
                t.push(Triplet::new(i, j, v * r[i] * c[j]));
            }
        }
        let m = SparseColMat::<usize, f64>::try_new_from_triplets(a.n_rows, a.n_cols, &t).map_err(|e| {
            Error::LinearSolver {
                reason: format!("sparse structure rejected: {e:?}"),
                history: vec![],
            }
        })?;
        let lu = m.sp_lu().map_err(|e| Error::LinearSolver {
            reason: format!("LU factorization failed: {e:?}"),
            history: vec![],
        })?;
        Ok(DirectSolver { lu, r, c })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let rhs = Mat::<f64>::from_fn(n, 1, |i, _| b[i] * self.r[i]);
        let y = self.lu.solve(&rhs);
        (0..n).map(|i| y[(i, 0)] * self.c[i]).collect()
    }
}

fn residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    let mut r = a.matvec(x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    r
}

/// Direct solve followed by up to four refinement sweeps.
pub fn solve_direct(a: &CsrMatrix, b: &[f64], tol: f64) -> Result<LinearSolution> {
    let lu = DirectSolver::factor(a)?;
    refine_with(&lu, a, b, tol)
}

pub fn refine_with(lu: &DirectSolver, a: &CsrMatrix, b: &[f64], tol: f64) -> Result<LinearSolution> {
    let bn = norm2(b);
    let mut x = lu.solve(b);
    let mut r = residual(a, &x, b);
    let mut rel = norm2(&r) / bn;
    let mut history = vec![rel];
    for _ in 0..4 {
        if rel <= tol || !rel.is_finite() {
            break;
        }
        let dx = lu.solve(&r);
        let xn: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
        let rn = residual(a, &xn, b);
        let reln = norm2(&rn) / bn;
        history.push(reln);
        if reln >= rel {
            break;
        }
        x = xn;
        r = rn;
        rel = reln;
    }
    if !rel.is_finite() {
        return Err(Error::LinearSolver {
            reason: "direct solve produced non-finite values".into(),
            history,
        });
    }
    Ok(LinearSolution {
        x,
        relative_residual: rel,
        history,
        method: "direct",
    })
}

/// Incomplete LU with the sparsity of `a`.
struct Ilu0 {
    a: CsrMatrix,
    diag: Vec<usize>,
}

impl Ilu0 {
    fn new(a: &CsrMatrix) -> Result<Self> {
        let n = a.n_rows;
        let mut f = a.clone();
        let mut diag = vec![usize::MAX; n];
        for (i, d) in diag.iter_mut().enumerate() {
            for k in f.indptr[i]..f.indptr[i + 1] {
                if f.indices[k] == i {
                    *d = k;
                }
            }
            if *d == usize::MAX {
                return Err(Error::LinearSolver {
                    reason: format!("ILU(0) needs a stored diagonal (row {i})"),
                    history: vec![],
                });
            }
        }
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (s, e) = (f.indptr[i], f.indptr[i + 1]);
            for k in s..e {
                pos[f.indices[k]] = k;
            }
            for k in s..e {
                let j = f.indices[k];
                if j >= i {
                    break;
                }
                let piv = f.values[diag[j]];
                if piv == 0.0 {
                    return Err(Error::LinearSolver {
                        reason: format!("zero pivot in ILU(0) at row {j}"),
                        history: vec![],
                    });
                }
                let l = f.values[k] / piv;
                f.values[k] = l;
                for kk in diag[j] + 1..f.indptr[j + 1] {
                    let c = f.indices[kk];
                    if pos[c] != usize::MAX {
                        f.values[pos[c]] -= l * f.values[kk];
                    }
                }
            }
            for k in s..e {
                pos[f.indices[k]] = usize::MAX;
            }
        }
        Ok(Ilu0 { a: f, diag })
    }

    fn apply(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let f = &self.a;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in f.indptr[i]..self.diag[i] {
                s -= f.values[k] * y[f.indices[k]];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in self.diag[i] + 1..f.indptr[i + 1] {
                s -= f.values[k] * y[f.indices[k]];
            }
            y[i] = s / f.values[self.diag[i]];
        }
        y
    }
}

/// Restarted, right-preconditioned GMRES on the equilibrated system.
pub fn solve_gmres(a: &CsrMatrix, b: &[f64], tol: f64, restart: usize, max_iter: usize) -> Result<LinearSolution> {
    let n = b.len();
    let (r, c) = equilibrate(a)?;
    let s = a.scaled(&r, &c);
    let sb: Vec<f64> = b.iter().zip(&r).map(|(x, y)| x * y).collect();
    let ilu = Ilu0::new(&s)?;
    let bn = norm2(b);
    let m = restart.max(2);
    let mut y = vec![0.0; n];
    let mut history = Vec::new();
    let mut iters = 0;
    let true_rel = |y: &[f64]| {
        let x: Vec<f64> = y.iter().zip(&c).map(|(a, b)| a * b).collect();
        (norm2(&residual(a, &x, b)) / bn, x)
    };
    loop {
        let rr = residual(&s, &y, &sb);
        let beta = norm2(&rr);
        let (rel, x) = true_rel(&y);
        history.push(rel);
        if rel <= tol {
            return Ok(LinearSolution {
                x,
                relative_residual: rel,
                history,
                method: "gmres",
            });
        }
        if iters >= max_iter || beta == 0.0 {
            return Err(Error::LinearSolver {
                reason: format!("GMRES stopped after {iters} iterations"),
                history,
            });
        }
        let mut v: Vec<Vec<f64>> = vec![rr.iter().map(|x| x / beta).collect()];
        let mut z: Vec<Vec<f64>> = Vec::new();
        let mut h = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let sb_n = norm2(&sb);
        let mut k_used = 0;
        for k in 0..m {
            iters += 1;
            let zk = ilu.apply(&v[k]);
            let mut w = s.matvec(&zk);
            z.push(zk);
            for i in 0..=k {
                h[i][k] = dot(&w, &v[i]);
                for (wj, vj) in w.iter_mut().zip(&v[i]) {
                    *wj -= h[i][k] * vj;
                }
            }
            h[k + 1][k] = norm2(&w);
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let d = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
            if d == 0.0 {
                k_used = k;
                break;
            }
            cs[k] = h[k][k] / d;
            sn[k] = h[k + 1][k] / d;
            h[k][k] = d;
            let hk1 = h[k + 1][k];
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            if hk1 != 0.0 {
                v.push(w.iter().map(|x| x / hk1).collect());
            }
            if g[k + 1].abs() <= 0.1 * tol * sb_n || iters >= max_iter || hk1 == 0.0 {
                break;
            }
        }
        let mut yk = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut t = g[i];
            for j in i + 1..k_used {
                t -= h[i][j] * yk[j];
            }
            yk[i] = t / h[i][i];
        }
        for (i, coef) in yk.iter().enumerate() {
            for (yj, zj) in y.iter_mut().zip(&z[i]) {
                *yj += coef * zj;
            }
        }
    }
}

/// Solve `A x = b` to relative residual `tol`.
pub fn solve_linear(a: &CsrMatrix, b: &[f64], opts: &LinearOptions) -> Result<LinearSolution> {
    if a.n_rows != a.n_cols || a.n_rows != b.len() {
        return Err(Error::Dimension(format!(
            "system {}x{} with right-hand side of length {}",
            a.n_rows,
            a.n_cols,
            b.len()
        )));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::Degenerate(format!("solver tolerance {} must be positive", opts.tol)));
    }
    if norm2(b) == 0.0 {
        return Ok(LinearSolution {
            x: vec![0.0; b.len()],
            relative_residual: 0.0,
            history: vec![0.0],
            method: "trivial",
        });
    }
    let first = match opts.method {
        LinearMethod::Direct => solve_direct(a, b, opts.tol),
        LinearMethod::Gmres { restart, max_iter } => solve_gmres(a, b, opts.tol, restart, max_iter),
    };
    let mut history = Vec::new();
    match first {
        Ok(s) if s.relative_residual <= opts.tol => return Ok(s),
        Ok(s) => history.extend(s.history),
        Err(Error::LinearSolver { history: h, .. }) => history.extend(h),
        Err(e) => return Err(e),
    }
    if opts.fallback {
        let second = match opts.method {
            LinearMethod::Direct => solve_gmres(a, b, opts.tol, 50, 2000),
            LinearMethod::Gmres { .. } => solve_direct(a, b, opts.tol),
        };
        match second {
            Ok(s) if s.relative_residual <= opts.tol => return Ok(s),
            Ok(s) => history.extend(s.history),
            Err(Error::LinearSolver { history: h, .. }) => history.extend(h),
            Err(e) => return Err(e),
        }
    }
    Err(Error::LinearSolver {
        reason: format!("relative residual above {:e}", opts.tol),
        history,
    })
}

/// Solve a system whose kernel is spanned by the constant vector, returning
/// the solution with `sum_i w_i x_i = 0`.
///
/// The system is bordered with the weight vector to make it regular, and
/// the result is projected once more onto the zero-mean subspace.
pub fn solve_linear_mean_zero(a: &CsrMatrix, b: &[f64], weights: &[f64], opts: &LinearOptions) -> Result<LinearSolution> {
    let n = a.n_rows;
    if weights.len() != n || b.len() != n {
        return Err(Error::Dimension("gauge weights must match the system size".into()));
    }
    let wsum: f64 = weights.iter().sum();
    if wsum == 0.0 {
        return Err(Error::Degenerate("gauge weights sum to zero".into()));
    }
    let scale = a.diagonal().iter().fold(0.0f64, |m, d| m.max(d.abs())).max(1e-300);
    let wmax = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let s = scale / wmax;
    let mut t = Triplets::with_capacity(n + 1, n + 1, a.nnz() + 2 * n);
    for i in 0..n {
        for (j, v) in a.row(i) {
            t.push(i, j, v);
        }
        t.push(i, n, s * weights[i]);
        t.push(n, i, s * weights[i]);
    }
    let bordered = t.to_csr();
    let mut bb = b.to_vec();
    bb.push(0.0);
    let mut sol = solve_linear(&bordered, &bb, opts)?;
    sol.x.truncate(n);
    let mean = dot(&sol.x, weights) / wsum;
    for x in &mut sol.x {
        *x -= mean;
    }
    let bn = norm2(b).max(f64::MIN_POSITIVE);
    sol.relative_residual = norm2(&residual(a, &sol.x, b)) / bn;
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize, neumann: bool) -> CsrMatrix {
        let mut t = Triplets::new(n, n);
        for i in 0..n {
            let mut d = 0.0;
            if i > 0 {
                t.push(i, i - 1, -1.0);
                d += 1.0;
            }
            if i + 1 < n {
                t.push(i, i + 1, -1.0);
                d += 1.0;
            }
            if !neumann {
                d = 2.0;
            }
            t.push(i, i, d);
        }
        t.to_csr()
    }

    #[test]
    fn identity_and_2x2() {
        let i = CsrMatrix::identity(3);
        let s = solve_linear(&i, &[1.0, -2.0, 3.0], &LinearOptions::default()).unwrap();
        assert_eq!(s.x, vec![1.0, -2.0, 3.0]);
        let a = CsrMatrix::from_dense(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let s = solve_linear(&a, &[1.0, 1.0], &LinearOptions::default()).unwrap();
        assert!((s.x[0] - 1.0 / 3.0).abs() < 1e-15 && (s.x[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn gmres_matches_direct_on_nonsymmetric() {
        let n = 60;
        let mut t = Triplets::new(n, n);
        for i in 0..n {
            t.push(i, i, 4.0);
            if i > 0 {
                t.push(i, i - 1, -1.5);
            }
            if i + 1 < n {
                t.push(i, i + 1, -0.5);
            }
            if i + 7 < n {
                t.push(i, i + 7, 0.3);
            }
        }
        let a = t.to_csr();
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let d = solve_direct(&a, &b, 1e-12).unwrap();
        let g = solve_gmres(&a, &b, 1e-12, 10, 500).unwrap();
        for (x, y) in d.x.iter().zip(&g.x) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_neumann_gauge() {
        let n = 20;
        let a = laplace_1d(n, true);
        let mut b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let m = b.iter().sum::<f64>() / n as f64;
        b.iter_mut().for_each(|v| *v -= m);
        let w = vec![1.0; n];
        let s = solve_linear_mean_zero(&a, &b, &w, &LinearOptions::default()).unwrap();
        assert!(s.x.iter().sum::<f64>().abs() < 1e-12);
        assert!(s.relative_residual < 1e-10);
    }

    #[test]
    fn zero_rhs_and_bad_input() {
        let a = laplace_1d(4, false);
        let s = solve_linear(&a, &[0.0; 4], &LinearOptions::default()).unwrap();
        assert_eq!(s.x, vec![0.0; 4]);
        assert!(solve_linear(&a, &[1.0; 3], &LinearOptions::default()).is_err());
        let z = CsrMatrix::from_dense(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        assert!(solve_linear(&z, &[1.0, 1.0], &LinearOptions::default()).is_err());
    }
}
