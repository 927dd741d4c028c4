//! Left-preconditioned GMRES without restarts.

use crate::error::{Error, Result};

/// Matrix-free linear operator with optional left preconditioner.
pub trait LinearOperator {
    fn dim(&self) -> usize;

    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<()>;

    /// Applies `P^{-1}`; the identity by default.
    fn precondition(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
    }
}

/// Wraps closures as a [`LinearOperator`].
pub struct FnOperator<A, P> {
    pub n: usize,
    pub apply: A,
    pub precond: Option<P>,
}

impl<A> FnOperator<A, fn(&[f64], &mut [f64])>
where
    A: Fn(&[f64], &mut [f64]) -> Result<()>,
{
    pub fn new(n: usize, apply: A) -> Self {
        FnOperator {
            n,
            apply,
            precond: None,
        }
    }
}

impl<A, P> FnOperator<A, P>
where
    A: Fn(&[f64], &mut [f64]) -> Result<()>,
    P: Fn(&[f64], &mut [f64]),
{
    pub fn with_preconditioner(n: usize, apply: A, precond: P) -> Self {
        FnOperator {
            n,
            apply,
            precond: Some(precond),
        }
    }
}

impl<A, P> LinearOperator for FnOperator<A, P>
where
    A: Fn(&[f64], &mut [f64]) -> Result<()>,
    P: Fn(&[f64], &mut [f64]),
{
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        (self.apply)(x, y)
    }

    fn precondition(&self, x: &[f64], y: &mut [f64]) {
        match &self.precond {
            Some(p) => p(x, y),
            None => y.copy_from_slice(x),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Relative preconditioned residual after each iteration, starting with the initial one.
    pub history: Vec<f64>,
}

impl GmresOutcome {
    pub fn residual(&self) -> f64 {
        *self.history.last().unwrap_or(&0.0)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `A x = b` from a zero initial guess.
pub fn gmres<O: LinearOperator + ?Sized>(op: &O, b: &[f64], tol: f64, maxit: usize) -> Result<GmresOutcome> {
    gmres_with_guess(op, b, None, tol, maxit)
}

/// Solves `A x = b`, optionally starting from `x0`.
///
/// Convergence is declared when `‖P⁻¹(b − Ax)‖ ≤ tol ‖P⁻¹b‖`.
pub fn gmres_with_guess<O: LinearOperator + ?Sized>(
    op: &O,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    maxit: usize,
) -> Result<GmresOutcome> {
    let n = op.dim();
    if b.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: b.len(),
        });
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("GMRES tolerance {tol}")));
    }
    let mut x = match x0 {
        Some(g) if g.len() == n => g.to_vec(),
        Some(g) => {
            return Err(Error::Dimension {
                expected: n,
                got: g.len(),
            })
        }
        None => vec![0.0; n],
    };
    let mut tmp = vec![0.0; n];
    let mut pb = vec![0.0; n];
    op.precondition(b, &mut pb);
    let bnorm = norm(&pb);
    if bnorm == 0.0 {
        return Ok(GmresOutcome {
            x: vec![0.0; n],
            iterations: 0,
            history: vec![0.0],
        });
    }
    // r0 = P^{-1}(b - A x0)
    let mut r = vec![0.0; n];
    if x0.is_some() {
        op.apply(&x, &mut tmp)?;
        for i in 0..n {
            tmp[i] = b[i] - tmp[i];
        }
        op.precondition(&tmp, &mut r);
    } else {
        r.copy_from_slice(&pb);
    }
    let beta = norm(&r);
    let mut history = vec![beta / bnorm];
    if beta / bnorm <= tol {
        return Ok(GmresOutcome {
            x,
            iterations: 0,
            history,
        });
    }
    let maxit = maxit.max(1).min(n.max(1));
    let mut v: Vec<Vec<f64>> = Vec::with_capacity(maxit + 1);
    v.push(r.iter().map(|t| t / beta).collect());
    let mut h: Vec<Vec<f64>> = Vec::with_capacity(maxit);
    let mut cs: Vec<f64> = Vec::with_capacity(maxit);
    let mut sn: Vec<f64> = Vec::with_capacity(maxit);
    let mut g = vec![beta];
    let mut w = vec![0.0; n];
    let mut k = 0;
    let mut converged = false;
    while k < maxit {
        op.apply(&v[k], &mut tmp)?;
        op.precondition(&tmp, &mut w);
        let wnorm0 = norm(&w);
        let mut col = vec![0.0; k + 2];
        for pass in 0..2 {
            for i in 0..=k {
                let c = dot(&w, &v[i]);
                col[i] += c;
                for (wt, vt) in w.iter_mut().zip(&v[i]) {
                    *wt -= c * vt;
                }
            }
            if pass == 0 && norm(&w) > 0.7 * wnorm0 {
                break;
            }
        }
        let hn = norm(&w);
        col[k + 1] = hn;
        for i in 0..k {
            let t = cs[i] * col[i] + sn[i] * col[i + 1];
            col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
            col[i] = t;
        }
        let denom = col[k].hypot(col[k + 1]);
        let (c, s) = if denom == 0.0 { (1.0, 0.0) } else { (col[k] / denom, col[k + 1] / denom) };
        cs.push(c);
        sn.push(s);
        col[k] = denom;
        col[k + 1] = 0.0;
        let gk = g[k];
        g[k] = c * gk;
        g.push(-s * gk);
        h.push(col);
        k += 1;
        let res = g[k].abs() / bnorm;
        history.push(res);
        if res <= tol || hn == 0.0 {
            converged = true;
            break;
        }
        v.push(w.iter().map(|t| t / hn).collect());
    }
    // back substitution for y in H y = g
    let mut y = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = g[i];
        for j in (i + 1)..k {
            s -= h[j][i] * y[j];
        }
        y[i] = if h[i][i] != 0.0 { s / h[i][i] } else { 0.0 };
    }
    for (j, yj) in y.iter().enumerate() {
        for (xt, vt) in x.iter_mut().zip(&v[j]) {
            *xt += yj * vt;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations: k,
            residual: *history.last().unwrap(),
            best: x,
        });
    }
    Ok(GmresOutcome {
        x,
        iterations: k,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed;
        move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        }
    }

    fn dense_op(a: &DMatrix<f64>) -> impl Fn(&[f64], &mut [f64]) -> Result<()> + '_ {
        move |x, y| {
            let r = a * DVector::from_column_slice(x);
            y.copy_from_slice(r.as_slice());
            Ok(())
        }
    }

    #[test]
    fn identity_one_iteration() {
        let op = FnOperator::new(5, |x: &[f64], y: &mut [f64]| {
            y.copy_from_slice(x);
            Ok(())
        });
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        let out = gmres(&op, &b, 1e-12, 10).unwrap();
        assert_eq!(out.iterations, 1);
        for (a, b) in out.x.iter().zip(&b) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn diagonal_with_own_preconditioner() {
        let d: Vec<f64> = (1..=20).map(|i| i as f64 * 1.7).collect();
        let d2 = d.clone();
        let op = FnOperator::with_preconditioner(
            20,
            move |x: &[f64], y: &mut [f64]| {
                for i in 0..20 {
                    y[i] = d[i] * x[i];
                }
                Ok(())
            },
            move |x: &[f64], y: &mut [f64]| {
                for i in 0..20 {
                    y[i] = x[i] / d2[i];
                }
            },
        );
        let b = vec![1.0; 20];
        let out = gmres(&op, &b, 1e-12, 50).unwrap();
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn dense_oracle() {
        let n = 50;
        let mut rnd = lcg(7);
        let a = DMatrix::from_fn(n, n, |i, j| if i == j { 4.0 } else { 0.3 * rnd() / (n as f64).sqrt() });
        let b: Vec<f64> = (0..n).map(|_| rnd()).collect();
        let exact = a.clone().lu().solve(&DVector::from_column_slice(&b)).unwrap();
        let apply = dense_op(&a);
        let op = FnOperator::new(n, apply);
        let tol = 1e-10;
        let out = gmres(&op, &b, tol, 100).unwrap();
        let err = (DVector::from_column_slice(&out.x) - &exact).norm() / exact.norm();
        assert!(err < tol * 10.0, "err {err}");
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn non_convergence_reports_best() {
        let n = 30;
        let mut rnd = lcg(3);
        let a = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 + i as f64 } else { 0.5 * rnd() });
        let b = vec![1.0; n];
        let op = FnOperator::new(n, dense_op(&a));
        match gmres(&op, &b, 1e-14, 3) {
            Err(Error::NonConvergence { iterations, residual, best }) => {
                assert_eq!(iterations, 3);
                assert_eq!(best.len(), n);
                assert!(residual < 1.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn initial_guess_is_used() {
        let n = 10;
        let a = DMatrix::from_fn(n, n, |i, j| if i == j { 2.0 } else if i + 1 == j { 0.5 } else { 0.0 });
        let b: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let op = FnOperator::new(n, dense_op(&a));
        let exact = gmres(&op, &b, 1e-13, 50).unwrap().x;
        let out = gmres_with_guess(&op, &b, Some(&exact), 1e-10, 50).unwrap();
        assert_eq!(out.iterations, 0);
    }

    proptest! {
        #[test]
        fn preconditioning_does_not_change_solution(seed in 0u64..500) {
            let n = 25;
            let mut rnd = lcg(seed);
            let a = DMatrix::from_fn(n, n, |i, j| if i == j { 2.0 + i as f64 } else { 0.4 * rnd() });
            let b: Vec<f64> = (0..n).map(|_| rnd()).collect();
            let diag: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
            let plain = gmres(&FnOperator::new(n, dense_op(&a)), &b, 1e-12, 100).unwrap();
            let pre = FnOperator::with_preconditioner(n, dense_op(&a), move |x: &[f64], y: &mut [f64]| {
                for i in 0..n { y[i] = x[i] / diag[i]; }
            });
            let prec = gmres(&pre, &b, 1e-12, 100).unwrap();
            let err: f64 = plain.x.iter().zip(&prec.x).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            prop_assert!(err < 1e-9);
            prop_assert!(plain.history.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}
