//! Wigner small-d matrices `d^n_{m' m}(β)`.
//!
//! Each `(m', m)` column is started from the single-term closed form at
//! `n = max(|m'|, |m|)` and continued by the three-term recurrence in `n`.

/// Natural logarithms of `0!, 1!, ..., n!`.
fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// Explicit factorial sum for `d^j_{m' m}(β)`.
pub fn wigner_d_sum(j: i64, mp: i64, m: i64, beta: f64) -> f64 {
    if mp.abs() > j || m.abs() > j {
        return 0.0;
    }
    let lf = ln_factorials((2 * j + 2) as usize);
    wigner_d_sum_with(&lf, j, mp, m, beta)
}

fn wigner_d_sum_with(lf: &[f64], j: i64, mp: i64, m: i64, beta: f64) -> f64 {
    let c = (0.5 * beta).cos();
    let s = (0.5 * beta).sin();
    let f = |k: i64| lf[k as usize];
    let pre = 0.5 * (f(j + mp) + f(j - mp) + f(j + m) + f(j - m));
    let smin = 0.max(m - mp);
    let smax = (j + m).min(j - mp);
    let mut acc = 0.0;
    for k in smin..=smax {
        let ln_mag = pre - f(j + m - k) - f(k) - f(mp - m + k) - f(j - mp - k);
        let sign = if (mp - m + k).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        let pc = (2 * j + m - mp - 2 * k) as i32;
        let ps = (mp - m + 2 * k) as i32;
        acc += sign * ln_mag.exp() * c.powi(pc) * s.powi(ps);
    }
    acc
}

/// All `d^n_{m' m}(β)` for `0 <= n <= nmax`.
#[derive(Debug, Clone)]
pub struct WignerD {
    pub nmax: usize,
    pub beta: f64,
    data: Vec<f64>,
}

#[inline]
fn offset(n: usize) -> usize {
    (4 * n * n * n - n) / 3
}

impl WignerD {
    pub fn new(nmax: usize, beta: f64) -> Self {
        let mut data = vec![0.0; offset(nmax + 1)];
        let lf = ln_factorials(2 * nmax + 2);
        let cb = beta.cos();
        let nm = nmax as i64;
        let idx = |n: i64, mp: i64, m: i64| -> usize {
            offset(n as usize) + ((mp + n) * (2 * n + 1) + (m + n)) as usize
        };
        for mp in -nm..=nm {
            for m in -nm..=nm {
                let j0 = mp.abs().max(m.abs());
                let mut prev = 0.0;
                let mut cur;
                let mut j;
                if j0 == 0 {
                    data[idx(0, 0, 0)] = 1.0;
                    if nm == 0 {
                        continue;
                    }
                    prev = 1.0;
                    cur = cb;
                    data[idx(1, 0, 0)] = cur;
                    j = 1;
                } else {
                    cur = wigner_d_sum_with(&lf, j0, mp, m, beta);
                    data[idx(j0, mp, m)] = cur;
                    j = j0;
                }
                let (mf, mpf) = (m as f64, mp as f64);
                while j < nm {
                    let jf = j as f64;
                    let j1 = jf + 1.0;
                    let lhs = jf * ((j1 * j1 - mf * mf) * (j1 * j1 - mpf * mpf)).sqrt();
                    let a = (2.0 * jf + 1.0) * (jf * j1 * cb - mf * mpf);
                    let b = j1 * ((jf * jf - mf * mf) * (jf * jf - mpf * mpf)).max(0.0).sqrt();
                    let next = (a * cur - b * prev) / lhs;
                    prev = cur;
                    cur = next;
                    j += 1;
                    data[idx(j, mp, m)] = cur;
                }
            }
        }
        WignerD { nmax, beta, data }
    }

    /// `d^n_{m' m}(β)`; zero outside the valid index range.
    #[inline]
    pub fn get(&self, n: usize, mp: i64, m: i64) -> f64 {
        let ni = n as i64;
        if mp.abs() > ni || m.abs() > ni {
            return 0.0;
        }
        self.data[offset(n) + ((mp + ni) * (2 * ni + 1) + (m + ni)) as usize]
    }

    /// Contiguous `(2n+1)²` block for degree `n`, indexed `(m'+n)(2n+1) + m+n`.
    #[inline]
    pub fn block(&self, n: usize) -> &[f64] {
        &self.data[offset(n)..offset(n + 1)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn recurrence_matches_factorial_sum() {
        for &beta in &[0.0, 0.3, 1.1, PI / 2.0, 2.7, PI] {
            let w = WignerD::new(10, beta);
            for n in 0..=10i64 {
                for mp in -n..=n {
                    for m in -n..=n {
                        let a = w.get(n as usize, mp, m);
                        let b = wigner_d_sum(n, mp, m, beta);
                        assert!((a - b).abs() < 1e-12, "n={n} mp={mp} m={m} beta={beta}");
                    }
                }
            }
        }
    }

    #[test]
    fn small_cases_closed_form() {
        let b = 0.7f64;
        let w = WignerD::new(1, b);
        assert!((w.get(1, 0, 0) - b.cos()).abs() < 1e-15);
        assert!((w.get(1, 1, 1) - 0.5 * (1.0 + b.cos())).abs() < 1e-15);
        assert!((w.get(1, 1, 0) + b.sin() / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_at_high_degree() {
        let n = 40usize;
        let w = WignerD::new(n, 1.234);
        let ni = n as i64;
        for a in -ni..=ni {
            for b in -ni..=ni {
                let s: f64 = (-ni..=ni).map(|m| w.get(n, a, m) * w.get(n, b, m)).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((s - expect).abs() < 1e-11, "a={a} b={b} s={s}");
            }
        }
    }
}
