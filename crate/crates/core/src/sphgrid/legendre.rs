//! Normalized associated Legendre functions and their colatitude derivatives.
//!
//! Values are stored for `m >= 0` in triangular layout `n(n+1)/2 + m`. The
//! normalization is such that `Y_n^m = P_n^m(cos θ) e^{imφ}` is orthonormal on
//! the unit sphere, including the Condon-Shortley phase.

use crate::error::{Error, Result};

#[inline]
pub fn tri(n: usize, m: usize) -> usize {
    n * (n + 1) / 2 + m
}

#[inline]
pub fn tri_len(p: usize) -> usize {
    (p + 1) * (p + 2) / 2
}

/// Table of `P_n^m(x)` and optionally `d/dθ`, `d²/dθ²` for `0 <= m <= n <= p`.
#[derive(Debug, Clone)]
pub struct LegendreTable {
    pub p: usize,
    pub x: f64,
    pub values: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

impl LegendreTable {
    #[inline]
    pub fn value(&self, n: usize, m: usize) -> f64 {
        self.values[tri(n, m)]
    }

    #[inline]
    pub fn dtheta(&self, n: usize, m: usize) -> f64 {
        self.d1[tri(n, m)]
    }

    #[inline]
    pub fn dtheta2(&self, n: usize, m: usize) -> f64 {
        self.d2[tri(n, m)]
    }
}

/// Builds the table at abscissa `x = cos θ`.
///
/// Derivatives are rejected at the poles; use [`legendre_any`] when pole values
/// are acceptable.
pub fn legendre_table(p: usize, x: f64, deriv_order: usize) -> Result<LegendreTable> {
    if !(-1.0..=1.0).contains(&x) || x.is_nan() {
        return Err(Error::Domain(x));
    }
    if deriv_order > 2 {
        return Err(Error::UnsupportedDerivative(deriv_order));
    }
    if deriv_order >= 1 && x.abs() == 1.0 {
        return Err(Error::PoleSingularity);
    }
    Ok(legendre_any(p, x, (1.0 - x * x).max(0.0).sqrt(), deriv_order))
}

/// Unchecked variant taking `sin θ` explicitly.
pub fn legendre_any(p: usize, x: f64, s: f64, deriv_order: usize) -> LegendreTable {
    let len = tri_len(p);
    let mut v = vec![0.0; len];
    fill_values(p, x, s, &mut v);
    let mut d1 = Vec::new();
    let mut d2 = Vec::new();
    if deriv_order >= 1 {
        d1 = vec![0.0; len];
        derive(p, &v, &mut d1);
    }
    if deriv_order >= 2 {
        d2 = vec![0.0; len];
        derive(p, &d1, &mut d2);
    }
    LegendreTable {
        p,
        x,
        values: v,
        d1,
        d2,
    }
}

pub(crate) fn fill_values(p: usize, x: f64, s: f64, v: &mut [f64]) {
    let mut pmm = 1.0 / (4.0 * std::f64::consts::PI).sqrt();
    for m in 0..=p {
        if m > 0 {
            pmm *= -(1.0 + 0.5 / m as f64).sqrt() * s;
        }
        v[tri(m, m)] = pmm;
        if m < p {
            v[tri(m + 1, m)] = (2.0 * m as f64 + 3.0).sqrt() * x * pmm;
        }
        let mf = m as f64;
        for n in (m + 2)..=p {
            let nf = n as f64;
            let a = ((4.0 * nf * nf - 1.0) / (nf * nf - mf * mf)).sqrt();
            let n1 = nf - 1.0;
            let b = -((n1 * n1 - mf * mf) / (4.0 * n1 * n1 - 1.0)).sqrt();
            v[tri(n, m)] = a * (x * v[tri(n - 1, m)] + b * v[tri(n - 2, m)]);
        }
    }
}

/// Applies `d/dθ` using the ladder relation between neighbouring orders.
fn derive(p: usize, v: &[f64], out: &mut [f64]) {
    for n in 0..=p {
        let nf = n as f64;
        for m in 0..=n {
            let mf = m as f64;
            let up = if m < n { v[tri(n, m + 1)] } else { 0.0 };
            let down = if m > 0 {
                v[tri(n, m - 1)]
            } else if n > 0 {
                -v[tri(n, 1)]
            } else {
                0.0
            };
            let alpha = ((nf - mf) * (nf + mf + 1.0)).sqrt();
            let beta = ((nf + mf) * (nf - mf + 1.0)).sqrt();
            out[tri(n, m)] = 0.5 * (alpha * up - beta * down);
        }
    }
}

/// Gauss-Legendre nodes (descending, so colatitudes ascend) and weights.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (pn, d) = legendre_p_and_deriv(n, z);
            dp = d;
            let dz = pn / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_p_and_deriv(n, z);
        if d.is_finite() {
            dp = d;
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// Unnormalized Legendre polynomial `P_n(z)` and its derivative.
pub fn legendre_p_and_deriv(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Values `P_0(z), ..., P_n(z)` of the unnormalized Legendre polynomials.
pub fn legendre_p_all(n: usize, z: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(1.0);
    if n >= 1 {
        out.push(z);
    }
    for k in 2..=n {
        let kf = k as f64;
        let v = ((2.0 * kf - 1.0) * z * out[k - 1] - (kf - 1.0) * out[k - 2]) / kf;
        out.push(v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn p00_is_constant() {
        for &x in &[-1.0, -0.3, 0.0, 0.7, 1.0] {
            let t = legendre_table(4, x, 0).unwrap();
            assert_relative_eq!(t.value(0, 0), (1.0 / (4.0 * PI)).sqrt(), epsilon = 1e-15);
        }
    }

    #[test]
    fn p10_closed_form() {
        for &x in &[-0.9, -0.2, 0.4, 0.99] {
            let t = legendre_table(3, x, 0).unwrap();
            assert_relative_eq!(t.value(1, 0), (3.0 / (4.0 * PI)).sqrt() * x, epsilon = 1e-15);
        }
    }

    #[test]
    fn domain_and_pole_errors() {
        assert!(matches!(legendre_table(3, 1.5, 0), Err(Error::Domain(_))));
        assert!(matches!(legendre_table(3, 1.0, 1), Err(Error::PoleSingularity)));
        assert!(matches!(legendre_table(3, -1.0, 2), Err(Error::PoleSingularity)));
        assert!(legendre_table(3, 1.0, 0).is_ok());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let p = 12;
        for &theta in &[PI / 2.0, 0.3, 2.9] {
            // five-point stencils
            let h = 1e-3;
            let t = legendre_table(p, theta.cos(), 2).unwrap();
            let at = |d: f64| legendre_table(p, (theta + d).cos(), 0).unwrap();
            let (p1, m1, p2, m2) = (at(h), at(-h), at(2.0 * h), at(-2.0 * h));
            for n in 0..=p {
                for m in 0..=n {
                    let v = |tb: &LegendreTable| tb.value(n, m);
                    let fd = (8.0 * (v(&p1) - v(&m1)) - (v(&p2) - v(&m2))) / (12.0 * h);
                    assert!((fd - t.dtheta(n, m)).abs() < 1e-8, "d1 n={n} m={m}");
                    let fd2 = (-v(&p2) + 16.0 * v(&p1) - 30.0 * t.value(n, m) + 16.0 * v(&m1) - v(&m2))
                        / (12.0 * h * h);
                    assert!((fd2 - t.dtheta2(n, m)).abs() < 1e-6, "d2 n={n} m={m}");
                }
            }
        }
    }

    #[test]
    fn gauss_legendre_roots_of_p16() {
        let (x, w) = gauss_legendre(16);
        // Independent oracle: sign changes of P_16 on a fine grid refined by bisection.
        let f = |z: f64| legendre_p_and_deriv(16, z).0;
        let mut roots = Vec::new();
        let npts = 20000;
        for i in 0..npts {
            let mut a = -1.0 + 2.0 * i as f64 / npts as f64;
            let mut b = -1.0 + 2.0 * (i + 1) as f64 / npts as f64;
            if f(a) * f(b) < 0.0 {
                for _ in 0..200 {
                    let c = 0.5 * (a + b);
                    if f(a) * f(c) <= 0.0 {
                        b = c;
                    } else {
                        a = c;
                    }
                }
                roots.push(0.5 * (a + b));
            }
        }
        assert_eq!(roots.len(), 16);
        roots.reverse();
        for (r, z) in roots.iter().zip(&x) {
            assert!((r - z).abs() < 1e-14);
        }
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(9);
        // exact for degree 17
        let val: f64 = x.iter().zip(&w).map(|(z, wi)| wi * z.powi(16)).sum();
        assert_relative_eq!(val, 2.0 / 17.0, epsilon = 1e-14);
    }
}
