//! Spherical-harmonics grids, transforms, derivatives, resampling and rotation.
//!
//! Grid nodes are `θ_j = arccos t_j` with `t_j` the Gauss-Legendre nodes
//! (ordered so that `θ` ascends) and `φ_k = πk/(p+1)`, `k = 0..2p+1`.

pub mod legendre;
pub mod wigner;

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
pub use legendre::{legendre_table, LegendreTable};
pub use wigner::WignerD;

use legendre::{tri, tri_len};

#[inline]
pub fn nphi(p: usize) -> usize {
    2 * p + 2
}

#[inline]
pub fn ncoef(p: usize) -> usize {
    (p + 1) * (p + 1)
}

/// Spherical-harmonics coefficients `f_n^m`, `0 <= n <= p`, `|m| <= n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffField {
    pub p: usize,
    pub data: Vec<Complex64>,
}

impl CoeffField {
    pub fn zeros(p: usize) -> Self {
        CoeffField {
            p,
            data: vec![Complex64::new(0.0, 0.0); ncoef(p)],
        }
    }

    /// Flat index of `(n, m)`.
    #[inline]
    pub fn index(n: usize, m: i64) -> usize {
        ((n * n + n) as i64 + m) as usize
    }

    #[inline]
    pub fn get(&self, n: usize, m: i64) -> Complex64 {
        self.data[Self::index(n, m)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, m: i64, v: Complex64) {
        self.data[Self::index(n, m)] = v;
    }

    /// Sets `(n, m)` and its conjugate partner so the field stays real.
    pub fn set_real(&mut self, n: usize, m: i64, v: Complex64) {
        self.set(n, m, v);
        let sign = if m.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        self.set(n, -m, v.conj() * sign);
    }

    /// Whether `f_n^m = (-1)^m conj(f_n^{-m})` holds to `tol` (absolute).
    pub fn is_real_field(&self, tol: f64) -> bool {
        for n in 0..=self.p {
            for m in 0..=n as i64 {
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                let d = self.get(n, m) - self.get(n, -m).conj() * sign;
                if d.norm() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// Per-degree energy `(Σ_m |f_n^m|²)^{1/2}`.
    pub fn degree_energy(&self, n: usize) -> f64 {
        (-(n as i64)..=n as i64)
            .map(|m| self.get(n, m).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Zero-padding or truncation to order `p_new`.
    pub fn resample(&self, p_new: usize) -> CoeffField {
        let mut out = CoeffField::zeros(p_new);
        let pm = self.p.min(p_new);
        let len = ncoef(pm);
        out.data[..len].copy_from_slice(&self.data[..len]);
        out
    }

    pub fn scaled(&self, s: f64) -> CoeffField {
        CoeffField {
            p: self.p,
            data: self.data.iter().map(|c| c * s).collect(),
        }
    }

    /// `self + s * other`, with `other` resampled to `self.p`.
    pub fn axpy(&self, s: f64, other: &CoeffField) -> CoeffField {
        let mut out = self.clone();
        let pm = self.p.min(other.p);
        for i in 0..ncoef(pm) {
            out.data[i] += other.data[i] * s;
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Number of reals written by [`CoeffField::pack_real`].
    pub fn packed_len(p: usize) -> usize {
        (p + 1) * (p + 2)
    }

    /// Appends the `m >= 0` coefficients as (real, imaginary) pairs.
    pub fn pack_real(&self, out: &mut Vec<f64>) {
        for n in 0..=self.p {
            for m in 0..=n as i64 {
                let v = self.get(n, m);
                out.push(v.re);
                out.push(v.im);
            }
        }
    }

    /// Inverse of [`CoeffField::pack_real`]; imaginary parts of `m = 0` are dropped.
    pub fn unpack_real(p: usize, x: &[f64]) -> CoeffField {
        let mut c = CoeffField::zeros(p);
        let mut pos = 0;
        for n in 0..=p {
            for m in 0..=n as i64 {
                let im = if m == 0 { 0.0 } else { x[pos + 1] };
                c.set_real(n, m, Complex64::new(x[pos], im));
                pos += 2;
            }
        }
        c
    }

    /// Projects onto the nearest real field.
    pub fn symmetrize(&mut self) {
        for n in 0..=self.p {
            let c0 = self.get(n, 0);
            self.set(n, 0, Complex64::new(c0.re, 0.0));
            for m in 1..=n as i64 {
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                let v = 0.5 * (self.get(n, m) + self.get(n, -m).conj() * sign);
                self.set_real(n, m, v);
            }
        }
    }
}

/// Grid samples stored row-major, `(p+1)` colatitude rows of `2p+2` values.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField<T = f64> {
    pub p: usize,
    pub values: Vec<T>,
}

impl<T: Clone + Default> GridField<T> {
    pub fn zeros(p: usize) -> Self {
        GridField {
            p,
            values: vec![T::default(); (p + 1) * nphi(p)],
        }
    }
}

impl<T: Copy> GridField<T> {
    #[inline]
    pub fn ntheta(&self) -> usize {
        self.p + 1
    }

    #[inline]
    pub fn nphi(&self) -> usize {
        nphi(self.p)
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> T {
        self.values[j * nphi(self.p) + k]
    }

    pub fn map<U, F: Fn(T) -> U>(&self, f: F) -> GridField<U> {
        GridField {
            p: self.p,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Rotation `R = R_z(α) R_y(β) R_z(γ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerAngles {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl EulerAngles {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        EulerAngles { alpha, beta, gamma }
    }

    /// Row-major rotation matrix.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let rz = |a: f64| {
            let (s, c) = a.sin_cos();
            [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
        };
        let (s, c) = self.beta.sin_cos();
        let ry = [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]];
        matmul(&matmul(&rz(self.alpha), &ry), &rz(self.gamma))
    }

    pub fn inverse(&self) -> EulerAngles {
        EulerAngles::new(-self.gamma, -self.beta, -self.alpha)
    }
}

fn matmul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Which derivative of the expansion to synthesize.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Deriv {
    Value,
    Theta,
    Phi,
    ThetaTheta,
    ThetaPhi,
    PhiPhi,
}

impl Deriv {
    fn theta_order(self) -> usize {
        match self {
            Deriv::Value | Deriv::Phi | Deriv::PhiPhi => 0,
            Deriv::Theta | Deriv::ThetaPhi => 1,
            Deriv::ThetaTheta => 2,
        }
    }

    fn phi_order(self) -> u32 {
        match self {
            Deriv::Value | Deriv::Theta | Deriv::ThetaTheta => 0,
            Deriv::Phi | Deriv::ThetaPhi => 1,
            Deriv::PhiPhi => 2,
        }
    }
}

/// Direction argument of [`sh_derivative`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Theta,
    Phi,
}

/// Gaussian spherical grid of order `p` with cached Legendre tables.
pub struct SphGrid {
    pub p: usize,
    /// `t_j = cos θ_j`
    pub t: Vec<f64>,
    pub theta: Vec<f64>,
    pub sin_theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub gl_weights: Vec<f64>,
    rows: Vec<LegendreTable>,
    fft_fwd: Arc<dyn Fft<f64>>,
    fft_inv: Arc<dyn Fft<f64>>,
    wigner_rows: OnceLock<Vec<WignerD>>,
}

impl std::fmt::Debug for SphGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SphGrid").field("p", &self.p).finish()
    }
}

static GRIDS: OnceLock<Mutex<HashMap<usize, Arc<SphGrid>>>> = OnceLock::new();

/// Returns the (cached) grid of order `p`.
pub fn build_grid(p: usize) -> Result<Arc<SphGrid>> {
    if p < 1 {
        return Err(Error::InvalidOrder(p));
    }
    let map = GRIDS.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(g) = map.lock().unwrap().get(&p) {
        return Ok(g.clone());
    }
    let g = Arc::new(SphGrid::new(p));
    map.lock().unwrap().insert(p, g.clone());
    Ok(g)
}

/// Convenience for internal callers with an order already validated.
pub(crate) fn grid(p: usize) -> Arc<SphGrid> {
    build_grid(p.max(1)).expect("order >= 1")
}

impl SphGrid {
    fn new(p: usize) -> Self {
        let (t, gl_weights) = legendre::gauss_legendre(p + 1);
        let theta: Vec<f64> = t.iter().map(|x| x.acos()).collect();
        let sin_theta: Vec<f64> = t.iter().map(|x| (1.0 - x * x).sqrt()).collect();
        let np = nphi(p);
        let phi = (0..np).map(|k| PI * k as f64 / (p as f64 + 1.0)).collect();
        let rows = t
            .iter()
            .zip(&sin_theta)
            .map(|(&x, &s)| legendre::legendre_any(p, x, s, 2))
            .collect();
        let mut planner = FftPlanner::new();
        let fft_fwd = planner.plan_fft_forward(np);
        let fft_inv = planner.plan_fft_inverse(np);
        SphGrid {
            p,
            t,
            theta,
            sin_theta,
            phi,
            gl_weights,
            rows,
            fft_fwd,
            fft_inv,
            wigner_rows: OnceLock::new(),
        }
    }

    #[inline]
    pub fn ntheta(&self) -> usize {
        self.p + 1
    }

    #[inline]
    pub fn nphi(&self) -> usize {
        nphi(self.p)
    }

    #[inline]
    pub fn npoints(&self) -> usize {
        self.ntheta() * self.nphi()
    }

    /// Legendre table (with derivatives) for colatitude row `j`.
    #[inline]
    pub fn row(&self, j: usize) -> &LegendreTable {
        &self.rows[j]
    }

    /// Per-node quadrature weight `(π/(p+1)) w_j / sin θ_j` for `∫ f W dθ dφ`.
    pub fn area_weight(&self, j: usize) -> f64 {
        PI / (self.p as f64 + 1.0) * self.gl_weights[j] / self.sin_theta[j]
    }

    /// Weight of the unit-sphere surface quadrature `(π/(p+1)) w_j`.
    pub fn sphere_weight(&self, j: usize) -> f64 {
        PI / (self.p as f64 + 1.0) * self.gl_weights[j]
    }

    /// Wigner tables at `β = θ_j`, one per row, built on first use.
    pub fn wigner_rows(&self) -> &[WignerD] {
        self.wigner_rows
            .get_or_init(|| self.theta.iter().map(|&b| WignerD::new(self.p, b)).collect())
    }

    pub fn fft_forward(&self, buf: &mut [Complex64]) {
        self.fft_fwd.process(buf);
    }

    pub fn fft_inverse(&self, buf: &mut [Complex64]) {
        self.fft_inv.process(buf);
    }

    fn check_shape<T>(&self, f: &GridField<T>) -> Result<()> {
        if f.p != self.p || f.values.len() != self.npoints() {
            return Err(Error::Dimension {
                expected: self.npoints(),
                got: f.values.len(),
            });
        }
        Ok(())
    }

    /// Forward transform of complex samples.
    pub fn analyze(&self, f: &GridField<Complex64>) -> Result<CoeffField> {
        self.check_shape(f)?;
        let p = self.p;
        let np = self.nphi();
        let mut out = CoeffField::zeros(p);
        let mut buf = vec![Complex64::new(0.0, 0.0); np];
        for j in 0..=p {
            buf.copy_from_slice(&f.values[j * np..(j + 1) * np]);
            self.fft_fwd.process(&mut buf);
            let w = PI / (p as f64 + 1.0) * self.gl_weights[j];
            let row = &self.rows[j];
            for m in -(p as i64)..=p as i64 {
                let k = m.rem_euclid(np as i64) as usize;
                let fm = buf[k] * w;
                let ma = m.unsigned_abs() as usize;
                let sign = if m < 0 && ma % 2 == 1 { -1.0 } else { 1.0 };
                for n in ma..=p {
                    out.data[CoeffField::index(n, m)] += fm * (sign * row.values[tri(n, ma)]);
                }
            }
        }
        Ok(out)
    }

    /// Forward transform of real samples; the result satisfies the real-field symmetry exactly.
    pub fn analyze_real(&self, f: &GridField<f64>) -> Result<CoeffField> {
        self.check_shape(f)?;
        let p = self.p;
        let np = self.nphi();
        let mut out = CoeffField::zeros(p);
        let mut buf = vec![Complex64::new(0.0, 0.0); np];
        let mut half = vec![Complex64::new(0.0, 0.0); tri_len(p)];
        let mut j = 0;
        // Two rows per FFT: pack row a as real part and row b as imaginary part.
        while j <= p {
            let jb = if j < p { Some(j + 1) } else { None };
            for k in 0..np {
                let a = f.values[j * np + k];
                let b = jb.map(|jb| f.values[jb * np + k]).unwrap_or(0.0);
                buf[k] = Complex64::new(a, b);
            }
            self.fft_fwd.process(&mut buf);
            for (jj, which) in [(Some(j), 0), (jb, 1)] {
                let Some(jj) = jj else { continue };
                let w = PI / (p as f64 + 1.0) * self.gl_weights[jj];
                let row = &self.rows[jj];
                for m in 0..=p {
                    let z = buf[m];
                    let zc = buf[(np - m) % np].conj();
                    let fm = if which == 0 {
                        0.5 * (z + zc)
                    } else {
                        Complex64::new(0.0, -0.5) * (z - zc)
                    } * w;
                    for n in m..=p {
                        half[tri(n, m)] += fm * row.values[tri(n, m)];
                    }
                }
            }
            j += 2;
        }
        for n in 0..=p {
            out.set(n, 0, Complex64::new(half[tri(n, 0)].re, 0.0));
            for m in 1..=n {
                out.set_real(n, m as i64, half[tri(n, m)]);
            }
        }
        Ok(out)
    }

    /// Synthesizes a complex expansion (or a derivative of it) on this grid.
    /// Coefficients above the grid order are ignored.
    pub fn synth(&self, c: &CoeffField, d: Deriv) -> GridField<Complex64> {
        let p = self.p;
        let pc = c.p.min(p);
        let np = self.nphi();
        let mut out = GridField::<Complex64>::zeros(p);
        let mut buf = vec![Complex64::new(0.0, 0.0); np];
        for j in 0..=p {
            let row = &self.rows[j];
            let tab = match d.theta_order() {
                0 => &row.values,
                1 => &row.d1,
                _ => &row.d2,
            };
            buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
            for m in -(pc as i64)..=pc as i64 {
                let ma = m.unsigned_abs() as usize;
                let sign = if m < 0 && ma % 2 == 1 { -1.0 } else { 1.0 };
                let mut acc = Complex64::new(0.0, 0.0);
                for n in ma..=pc {
                    acc += c.data[CoeffField::index(n, m)] * tab[tri(n, ma)];
                }
                buf[m.rem_euclid(np as i64) as usize] = acc * sign * phi_factor(m, d.phi_order());
            }
            self.fft_inv.process(&mut buf);
            out.values[j * np..(j + 1) * np].copy_from_slice(&buf);
        }
        out
    }

    /// Synthesizes a real expansion using only `m >= 0` coefficients.
    pub fn synth_real(&self, c: &CoeffField, d: Deriv) -> GridField<f64> {
        let p = self.p;
        let np = self.nphi();
        let mut out = GridField::<f64>::zeros(p);
        let mut sa = vec![Complex64::new(0.0, 0.0); p + 1];
        let mut sb = vec![Complex64::new(0.0, 0.0); p + 1];
        let mut buf = vec![Complex64::new(0.0, 0.0); np];
        let mut j = 0;
        while j <= p {
            let jb = if j < p { Some(j + 1) } else { None };
            self.row_spectrum(c, j, d, &mut sa);
            if let Some(jb) = jb {
                self.row_spectrum(c, jb, d, &mut sb);
            } else {
                sb.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            }
            pack_two_real(&sa, &sb, &mut buf);
            self.fft_inv.process(&mut buf);
            for k in 0..np {
                out.values[j * np + k] = buf[k].re;
                if let Some(jb) = jb {
                    out.values[jb * np + k] = buf[k].im;
                }
            }
            j += 2;
        }
        out
    }

    /// Row spectrum `Σ_n c_n^m ∂P_n^m(t_j) (im)^k` for `m = 0..=p`.
    fn row_spectrum(&self, c: &CoeffField, j: usize, d: Deriv, s: &mut [Complex64]) {
        let pc = c.p.min(self.p);
        let row = &self.rows[j];
        let tab = match d.theta_order() {
            0 => &row.values,
            1 => &row.d1,
            _ => &row.d2,
        };
        for (m, sm) in s.iter_mut().enumerate() {
            if m > pc {
                *sm = Complex64::new(0.0, 0.0);
                continue;
            }
            let mut acc = Complex64::new(0.0, 0.0);
            for n in m..=pc {
                acc += c.data[CoeffField::index(n, m as i64)] * tab[tri(n, m)];
            }
            *sm = acc * phi_factor(m as i64, d.phi_order());
        }
    }

    /// Synthesizes several real expansions sharing one derivative type.
    pub fn synth_real_many(&self, cs: &[&CoeffField], d: Deriv) -> Vec<GridField<f64>> {
        cs.iter().map(|c| self.synth_real(c, d)).collect()
    }
}

/// Fills `buf` with the Hermitian spectra of two real rows, `a` in the real part and `b` in the imaginary part.
pub(crate) fn pack_two_real(a: &[Complex64], b: &[Complex64], buf: &mut [Complex64]) {
    let np = buf.len();
    let i = Complex64::new(0.0, 1.0);
    buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
    let pmax = a.len() - 1;
    buf[0] = Complex64::new(a[0].re, 0.0) + i * b[0].re;
    for m in 1..=pmax {
        buf[m] = a[m] + i * b[m];
        buf[np - m] = a[m].conj() + i * b[m].conj();
    }
}

#[inline]
fn phi_factor(m: i64, k: u32) -> Complex64 {
    let mf = m as f64;
    match k {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, mf),
        _ => Complex64::new(-mf * mf, 0.0),
    }
}

/// Forward transform of real grid samples.
pub fn forward_transform(f: &GridField<f64>) -> Result<CoeffField> {
    build_grid(f.p)?.analyze_real(f)
}

/// Forward transform of complex grid samples.
pub fn forward_transform_complex(f: &GridField<Complex64>) -> Result<CoeffField> {
    build_grid(f.p)?.analyze(f)
}

/// Evaluates the expansion at arbitrary angles.
pub fn inverse_transform(c: &CoeffField, points: &[(f64, f64)]) -> Vec<Complex64> {
    points.iter().map(|&(t, f)| eval_point(c, t, f)).collect()
}

/// Evaluates the expansion on the standard grid of its own order.
pub fn inverse_transform_grid(c: &CoeffField) -> GridField<Complex64> {
    grid(c.p).synth(c, Deriv::Value)
}

/// Expansion value at `(θ, φ)`.
pub fn eval_point(c: &CoeffField, theta: f64, phi: f64) -> Complex64 {
    let tab = legendre::legendre_any(c.p, theta.cos(), theta.sin().abs(), 0);
    let mut acc = Complex64::new(0.0, 0.0);
    for m in -(c.p as i64)..=c.p as i64 {
        let ma = m.unsigned_abs() as usize;
        let sign = if m < 0 && ma % 2 == 1 { -1.0 } else { 1.0 };
        let mut s = Complex64::new(0.0, 0.0);
        for n in ma..=c.p {
            s += c.get(n, m) * tab.values[tri(n, ma)];
        }
        acc += s * sign * Complex64::from_polar(1.0, m as f64 * phi);
    }
    acc
}

/// Value and parameter derivatives of a real expansion at one point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PointDerivs {
    pub f: f64,
    pub ft: f64,
    pub fp: f64,
    pub ftt: f64,
    pub ftp: f64,
    pub fpp: f64,
}

/// Evaluates several real expansions (same order) and their derivatives at one point.
pub fn eval_real_derivs(cs: &[&CoeffField], theta: f64, phi: f64, order: usize) -> Vec<PointDerivs> {
    let p = cs.iter().map(|c| c.p).max().unwrap_or(1);
    let tab = legendre::legendre_any(p, theta.cos(), theta.sin().abs(), order.min(2));
    cs.iter()
        .map(|c| {
            let mut r = PointDerivs::default();
            for m in 0..=c.p {
                let e = Complex64::from_polar(if m == 0 { 1.0 } else { 2.0 }, m as f64 * phi);
                let mf = m as f64;
                let mut v = Complex64::new(0.0, 0.0);
                let mut v1 = Complex64::new(0.0, 0.0);
                let mut v2 = Complex64::new(0.0, 0.0);
                for n in m..=c.p {
                    let cn = c.get(n, m as i64);
                    v += cn * tab.values[tri(n, m)];
                    if order >= 1 {
                        v1 += cn * tab.d1[tri(n, m)];
                    }
                    if order >= 2 {
                        v2 += cn * tab.d2[tri(n, m)];
                    }
                }
                let im = Complex64::new(0.0, mf);
                r.f += (v * e).re;
                if order >= 1 {
                    r.ft += (v1 * e).re;
                    r.fp += (v * e * im).re;
                }
                if order >= 2 {
                    r.ftt += (v2 * e).re;
                    r.ftp += (v1 * e * im).re;
                    r.fpp -= (v * e).re * mf * mf;
                }
            }
            r
        })
        .collect()
}

/// Real-expansion value at `(θ, φ)`.
pub fn eval_real(c: &CoeffField, theta: f64, phi: f64) -> f64 {
    eval_real_derivs(&[c], theta, phi, 0)[0].f
}

/// Derivative of the expansion on the standard grid of its order.
pub fn sh_derivative(c: &CoeffField, direction: Direction, order: usize) -> Result<GridField<Complex64>> {
    let d = match (direction, order) {
        (_, 0) => Deriv::Value,
        (Direction::Theta, 1) => Deriv::Theta,
        (Direction::Theta, 2) => Deriv::ThetaTheta,
        (Direction::Phi, 1) => Deriv::Phi,
        (Direction::Phi, 2) => Deriv::PhiPhi,
        _ => return Err(Error::UnsupportedDerivative(order)),
    };
    Ok(grid(c.p).synth(c, d))
}

/// Zero-padding or truncation.
pub fn resample(c: &CoeffField, p_new: usize) -> Result<CoeffField> {
    if p_new < 1 {
        return Err(Error::InvalidOrder(p_new));
    }
    Ok(c.resample(p_new))
}

/// Coefficients of `g(ŝ) = f(R ŝ)` for the rotation `R` given by `e`.
pub fn rotate_expansion(c: &CoeffField, e: &EulerAngles) -> CoeffField {
    let w = WignerD::new(c.p, e.beta);
    rotate_with(c, e.alpha, e.gamma, &w)
}

/// Rotation with a precomputed Wigner table for `β`.
pub fn rotate_with(c: &CoeffField, alpha: f64, gamma: f64, w: &WignerD) -> CoeffField {
    let p = c.p;
    let pi = p as i64;
    let mut out = CoeffField::zeros(p);
    let ea: Vec<Complex64> = (-pi..=pi).map(|m| Complex64::from_polar(1.0, m as f64 * alpha)).collect();
    let eg: Vec<Complex64> = (-pi..=pi).map(|m| Complex64::from_polar(1.0, m as f64 * gamma)).collect();
    let mut tmp = vec![Complex64::new(0.0, 0.0); 2 * p + 1];
    for n in 0..=p {
        let ni = n as i64;
        let blk = w.block(n);
        let dim = 2 * n + 1;
        for m in -ni..=ni {
            tmp[(m + ni) as usize] = c.get(n, m) * ea[(m + pi) as usize];
        }
        for mp in -ni..=ni {
            let mut acc = Complex64::new(0.0, 0.0);
            let col = (mp + ni) as usize;
            for mi in 0..dim {
                acc += tmp[mi] * blk[mi * dim + col];
            }
            out.set(n, mp, acc * eg[(mp + pi) as usize]);
        }
    }
    out
}

/// Rotation of a real expansion producing only `m' >= 0`; negative orders are filled by symmetry.
pub fn rotate_real_with(c: &CoeffField, alpha: f64, w: &WignerD, out: &mut CoeffField) {
    let p = c.p;
    let mut tmp = vec![Complex64::new(0.0, 0.0); 2 * p + 1];
    let ea: Vec<Complex64> = (0..=p).map(|m| Complex64::from_polar(1.0, m as f64 * alpha)).collect();
    for n in 0..=p {
        let ni = n as i64;
        let blk = w.block(n);
        let dim = 2 * n + 1;
        for m in 0..=ni {
            let v = c.get(n, m) * ea[m as usize];
            tmp[(m + ni) as usize] = v;
            if m > 0 {
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                tmp[(ni - m) as usize] = v.conj() * sign;
            }
        }
        for mp in 0..=ni {
            let col = (mp + ni) as usize;
            let mut acc = Complex64::new(0.0, 0.0);
            for mi in 0..dim {
                acc += tmp[mi] * blk[mi * dim + col];
            }
            out.set(n, mp, acc);
        }
    }
}
