//! Extreme eigenpairs of a symmetric pencil `A x = lambda B x` with `B`
//! positive definite, by Lanczos in the `B` inner product with full
//! reorthogonalisation.

use faer::{Mat, Side};

use crate::error::{Error, Result};
use crate::fem::solve::DirectSolver;
use crate::fem::sparse::{dot, CsrMatrix};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LanczosOptions {
    pub max_steps: usize,
    /// Relative residual `|beta_k y_k| / |lambda|` of the wanted Ritz pair.
    pub tol: f64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        LanczosOptions {
            max_steps: 200,
            tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RitzPair {
    pub value: f64,
    /// Normalised in the `B` inner product.
    pub vector: Vec<f64>,
    pub steps: usize,
    pub residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    Largest,
    /// Largest in absolute value.
    LargestMagnitude,
}

/// Lanczos on `B^{-1} A`. Stops early on an invariant subspace.
pub fn lanczos(a: &CsrMatrix, b: &CsrMatrix, start: &[f64], which: Which, opts: &LanczosOptions) -> Result<RitzPair> {
    let n = a.n_rows;
    if b.n_rows != n || start.len() != n || n == 0 {
        return Err(Error::Dimension("pencil and start vector sizes differ".into()));
    }
    let lu = DirectSolver::factor(b)?;
    let norm_b = |v: &[f64]| b.bilinear(v, v).max(0.0).sqrt();
    let s = norm_b(start);
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Degenerate("start vector has zero B-norm".into()));
    }
    let mut q: Vec<Vec<f64>> = vec![start.iter().map(|v| v / s).collect()];
    let mut bq: Vec<Vec<f64>> = vec![b.matvec(&q[0])];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut prev_value = f64::NAN;
    for k in 0..opts.max_steps.min(n) {
        let aq = a.matvec(&q[k]);
        let mut w = lu.solve(&aq);
        let ak = dot(&aq, &q[k]);
        alpha.push(ak);
        for _ in 0..2 {
            for (qi, bqi) in q.iter().zip(&bq) {
                let c = dot(&w, bqi);
                for (wj, qj) in w.iter_mut().zip(qi) {
                    *wj -= c * qj;
                }
            }
        }
        let bw = b.matvec(&w);
        let bk = dot(&w, &bw).max(0.0).sqrt();
        let (theta, y) = ritz(&alpha, &beta, which)?;
        let res = bk * y[k].abs();
        let scale = theta.abs().max(f64::MIN_POSITIVE);
        let best = (y, res / scale);
        let steps = k + 1;
        let invariant = bk <= 1e-14 * (ak.abs() + beta.last().copied().unwrap_or(0.0)).max(f64::MIN_POSITIVE);
        let stalled = (theta - prev_value).abs() <= 1e-15 * scale && k > 8;
        if best.1 <= opts.tol || invariant || stalled || steps == opts.max_steps.min(n) {
            if best.1 > opts.tol && !invariant && !stalled {
                return Err(Error::EigenStagnation(format!(
                    "Ritz residual {:e} after {steps} Lanczos steps",
                    best.1
                )));
            }
            let mut x = vec![0.0; n];
            for (yi, qi) in best.0.iter().zip(&q) {
                for (xj, qj) in x.iter_mut().zip(qi) {
                    *xj += yi * qj;
                }
            }
            let nx = norm_b(&x);
            x.iter_mut().for_each(|v| *v /= nx);
            return Ok(RitzPair {
                value: theta,
                vector: x,
                steps,
                residual: best.1,
            });
        }
        prev_value = theta;
        beta.push(bk);
        let qn: Vec<f64> = w.iter().map(|v| v / bk).collect();
        bq.push(bw.iter().map(|v| v / bk).collect());
        q.push(qn);
    }
    unreachable!("the loop returns on its last step")
}

/// Wanted eigenpair of the tridiagonal matrix.
fn ritz(alpha: &[f64], beta: &[f64], which: Which) -> Result<(f64, Vec<f64>)> {
    let m = alpha.len();
    let t = Mat::<f64>::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i == j + 1 {
            beta[j]
        } else if j == i + 1 {
            beta[i]
        } else {
            0.0
        }
    });
    let evd = t
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Degenerate(format!("tridiagonal eigensolver failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let idx = match which {
        Which::Largest => m - 1,
        Which::LargestMagnitude => {
            if s[0].abs() > s[m - 1].abs() {
                0
            } else {
                m - 1
            }
        }
    };
    let u = evd.U();
    Ok((s[idx], (0..m).map(|i| u[(i, idx)]).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(d: &[f64]) -> CsrMatrix {
        let rows: Vec<Vec<f64>> = (0..d.len())
            .map(|i| (0..d.len()).map(|j| if i == j { d[i] } else { 0.0 }).collect())
            .collect();
        CsrMatrix::from_dense(&rows)
    }

    #[test]
    fn diagonal_pencil() {
        let a = diag(&[1.0, 4.0, 9.0, 2.0, 3.0]);
        let b = diag(&[1.0, 2.0, 1.0, 1.0, 1.0]);
        let p = lanczos(&a, &b, &[1.0; 5], Which::Largest, &LanczosOptions::default()).unwrap();
        assert!((p.value - 9.0).abs() < 1e-12);
        assert!((p.vector[2].abs() - 1.0).abs() < 1e-8);
        let a = diag(&[-7.0, 4.0, 1.0]);
        let p = lanczos(&a, &diag(&[1.0; 3]), &[1.0; 3], Which::LargestMagnitude, &LanczosOptions::default()).unwrap();
        assert!((p.value + 7.0).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_laplacian_pencil() {
        // Mass against stiffness for P1 on (0, 1) with u(0) = 0: the top
        // eigenvalue tends to (2 / pi)^2.
        let n = 200;
        let h = 1.0 / n as f64;
        let mut k = vec![vec![0.0; n]; n];
        let mut m = vec![vec![0.0; n]; n];
        for e in 0..n {
            let nodes = [e as isize - 1, e as isize];
            for (a, &i) in nodes.iter().enumerate() {
                for (b, &j) in nodes.iter().enumerate() {
                    if i < 0 || j < 0 {
                        continue;
                    }
                    let (i, j) = (i as usize, j as usize);
                    k[i][j] += if a == b { 1.0 / h } else { -1.0 / h };
                    m[i][j] += if a == b { h / 3.0 } else { h / 6.0 };
                }
            }
        }
        let p = lanczos(
            &CsrMatrix::from_dense(&m),
            &CsrMatrix::from_dense(&k),
            &vec![1.0; n],
            Which::Largest,
            &LanczosOptions::default(),
        )
        .unwrap();
        let exact = (2.0 / std::f64::consts::PI).powi(2);
        assert!((p.value - exact).abs() < 1e-5, "{}", p.value);
        assert!(p.value <= exact);
    }
}
