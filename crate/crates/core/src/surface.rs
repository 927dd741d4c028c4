//! Surface geometry: fundamental forms, normals, curvatures and surface operators.
//!
//! With `E = x_φ·x_φ`, `F = x_φ·x_θ`, `G = x_θ·x_θ`, `L = x_φφ·n`, `M = x_φθ·n`,
//! `N = x_θθ·n`, the outward normal is `n = x_θ × x_φ / W`, and
//! `H_mean = (EN − 2FM + GL)/(2W²)` is negative on a sphere. The curvature
//! entering the interfacial force is `H_signed = −H_mean`, so that
//! `2 H_signed = ∇_γ·n`.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::sphgrid::{self, CoeffField, Deriv, GridField, SphGrid};
use crate::surfactant::{eos_sigma, EosParams};
use crate::vec3::{self, Vec3};

/// Order of the grid used with upsampling factor `u` for a shape of order `p`.
#[inline]
pub fn upsampled_order(p: usize, u: usize) -> usize {
    u.max(1) * (p + 1) - 1
}

/// Drop surface given by three real expansions of the Cartesian coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceShape {
    pub p: usize,
    pub coeffs: [CoeffField; 3],
}

impl SurfaceShape {
    pub fn new(coeffs: [CoeffField; 3]) -> Result<Self> {
        let p = coeffs[0].p;
        for c in &coeffs {
            if c.p != p {
                return Err(Error::Dimension {
                    expected: p,
                    got: c.p,
                });
            }
        }
        Ok(SurfaceShape { p, coeffs })
    }

    /// Shape from a position function of `(θ, φ)` sampled on the order-`p` grid.
    pub fn from_fn<F: Fn(f64, f64) -> Vec3>(p: usize, f: F) -> Result<Self> {
        let g = sphgrid::build_grid(p)?;
        let mut pos = Vec::with_capacity(g.npoints());
        for j in 0..g.ntheta() {
            for k in 0..g.nphi() {
                pos.push(f(g.theta[j], g.phi[k]));
            }
        }
        Self::from_positions(p, &pos)
    }

    /// Shape from node positions on the order-`p` grid.
    pub fn from_positions(p: usize, pos: &[Vec3]) -> Result<Self> {
        let g = sphgrid::build_grid(p)?;
        if pos.len() != g.npoints() {
            return Err(Error::Dimension {
                expected: g.npoints(),
                got: pos.len(),
            });
        }
        let comp = |i: usize| -> Result<CoeffField> {
            g.analyze_real(&GridField {
                p,
                values: pos.iter().map(|x| x[i]).collect(),
            })
        };
        Ok(SurfaceShape {
            p,
            coeffs: [comp(0)?, comp(1)?, comp(2)?],
        })
    }

    pub fn sphere(p: usize, radius: f64, center: Vec3) -> Result<Self> {
        Self::ellipsoid(p, [radius; 3], center)
    }

    /// Ellipsoid with semi-axes `a` along the coordinate axes.
    pub fn ellipsoid(p: usize, a: [f64; 3], center: Vec3) -> Result<Self> {
        Self::from_fn(p, |t, f| {
            let s = vec3::spherical(t, f);
            [center[0] + a[0] * s[0], center[1] + a[1] * s[1], center[2] + a[2] * s[2]]
        })
    }

    /// Positions on the grid of order `q`.
    pub fn positions(&self, q: usize) -> Vec<Vec3> {
        let g = sphgrid::grid(q);
        let c: Vec<GridField<f64>> = self.coeffs.iter().map(|c| g.synth_real(c, Deriv::Value)).collect();
        (0..g.npoints())
            .map(|i| [c[0].values[i], c[1].values[i], c[2].values[i]])
            .collect()
    }

    /// Point and first/second parameter derivatives at arbitrary `(θ, φ)`.
    pub fn eval(&self, theta: f64, phi: f64, order: usize) -> [sphgrid::PointDerivs; 3] {
        let r = sphgrid::eval_real_derivs(&[&self.coeffs[0], &self.coeffs[1], &self.coeffs[2]], theta, phi, order);
        [r[0], r[1], r[2]]
    }

    pub fn resample(&self, p_new: usize) -> SurfaceShape {
        SurfaceShape {
            p: p_new,
            coeffs: [
                self.coeffs[0].resample(p_new),
                self.coeffs[1].resample(p_new),
                self.coeffs[2].resample(p_new),
            ],
        }
    }

    pub fn translated(&self, d: Vec3) -> SurfaceShape {
        let mut s = self.clone();
        let y00 = (4.0 * std::f64::consts::PI).sqrt();
        for i in 0..3 {
            let c = s.coeffs[i].get(0, 0);
            s.coeffs[i].set(0, 0, c + Complex64::new(d[i] * y00, 0.0));
        }
        s
    }

    /// Centroid of the coefficient `n = 0` mode.
    pub fn center(&self) -> Vec3 {
        let y00 = (4.0 * std::f64::consts::PI).sqrt();
        [
            self.coeffs[0].get(0, 0).re / y00,
            self.coeffs[1].get(0, 0).re / y00,
            self.coeffs[2].get(0, 0).re / y00,
        ]
    }

    /// Applies the rigid rotation `x ↦ R x` to the surface (parameterization unchanged).
    pub fn rotated_points(&self, r: &[[f64; 3]; 3]) -> SurfaceShape {
        let mut out = self.clone();
        for i in 0..3 {
            let mut c = CoeffField::zeros(self.p);
            for (k, src) in self.coeffs.iter().enumerate() {
                c = c.axpy(r[i][k], src);
            }
            out.coeffs[i] = c;
        }
        out
    }
}

/// Grid samples of the geometric quantities at working order `q`.
#[derive(Debug, Clone)]
pub struct GeometryCache {
    /// Order of the shape expansion.
    pub p: usize,
    /// Working grid order.
    pub q: usize,
    pub upsample: usize,
    pub grid: Arc<SphGrid>,
    pub pos: Vec<Vec3>,
    pub xt: Vec<Vec3>,
    pub xp: Vec<Vec3>,
    pub xtt: Vec<Vec3>,
    pub xtp: Vec<Vec3>,
    pub xpp: Vec<Vec3>,
    pub e: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub l: Vec<f64>,
    pub m: Vec<f64>,
    pub n: Vec<f64>,
    pub w: Vec<f64>,
    pub normal: Vec<Vec3>,
    pub h_mean: Vec<f64>,
    pub k_gauss: Vec<f64>,
}

impl GeometryCache {
    #[inline]
    pub fn npoints(&self) -> usize {
        self.pos.len()
    }

    /// `H_signed = −H_mean`, with `2 H_signed = ∇_γ·n`.
    #[inline]
    pub fn h_signed(&self, i: usize) -> f64 {
        -self.h_mean[i]
    }

    /// Quadrature weight of node `i` for `∫ f dS`.
    #[inline]
    pub fn ds(&self, i: usize) -> f64 {
        let np = self.grid.nphi();
        self.grid.area_weight(i / np) * self.w[i]
    }

    /// `∫ f dS` for grid samples `f`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().enumerate().map(|(i, v)| v * self.ds(i)).sum()
    }
}

/// Computes the geometry on the grid of order `U(p+1) − 1`.
pub fn geometry(s: &SurfaceShape, upsample: usize) -> Result<GeometryCache> {
    geometry_at(s, upsampled_order(s.p, upsample), upsample)
}

/// Computes the geometry on the grid of order `q`.
pub fn geometry_at(s: &SurfaceShape, q: usize, upsample: usize) -> Result<GeometryCache> {
    let grid = sphgrid::build_grid(q)?;
    let np = grid.npoints();
    let synth = |d: Deriv| -> Vec<Vec3> {
        let c: Vec<GridField<f64>> = s.coeffs.iter().map(|c| grid.synth_real(c, d)).collect();
        (0..np).map(|i| [c[0].values[i], c[1].values[i], c[2].values[i]]).collect()
    };
    let pos = synth(Deriv::Value);
    let xt = synth(Deriv::Theta);
    let xp = synth(Deriv::Phi);
    let xtt = synth(Deriv::ThetaTheta);
    let xtp = synth(Deriv::ThetaPhi);
    let xpp = synth(Deriv::PhiPhi);
    let mut geo = GeometryCache {
        p: s.p,
        q,
        upsample,
        grid,
        e: vec![0.0; np],
        f: vec![0.0; np],
        g: vec![0.0; np],
        l: vec![0.0; np],
        m: vec![0.0; np],
        n: vec![0.0; np],
        w: vec![0.0; np],
        normal: vec![[0.0; 3]; np],
        h_mean: vec![0.0; np],
        k_gauss: vec![0.0; np],
        pos,
        xt,
        xp,
        xtt,
        xtp,
        xpp,
    };
    for i in 0..np {
        let (xt, xp) = (geo.xt[i], geo.xp[i]);
        let e = vec3::dot(xp, xp);
        let f = vec3::dot(xp, xt);
        let g = vec3::dot(xt, xt);
        let c = vec3::cross(xt, xp);
        let w = vec3::norm(c);
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::DegenerateSurface { node: i, w });
        }
        let nrm = vec3::scale(c, 1.0 / w);
        let l = vec3::dot(geo.xpp[i], nrm);
        let m = vec3::dot(geo.xtp[i], nrm);
        let nn = vec3::dot(geo.xtt[i], nrm);
        let w2 = w * w;
        geo.e[i] = e;
        geo.f[i] = f;
        geo.g[i] = g;
        geo.l[i] = l;
        geo.m[i] = m;
        geo.n[i] = nn;
        geo.w[i] = w;
        geo.normal[i] = nrm;
        geo.h_mean[i] = (e * nn - 2.0 * f * m + g * l) / (2.0 * w2);
        geo.k_gauss[i] = (l * nn - m * m) / w2;
    }
    Ok(geo)
}

/// Surface area and enclosed volume.
pub fn area_volume(s: &SurfaceShape) -> Result<(f64, f64)> {
    let geo = geometry(s, 2)?;
    Ok(area_volume_geo(&geo))
}

pub fn area_volume_geo(geo: &GeometryCache) -> (f64, f64) {
    let mut a = 0.0;
    let mut v = 0.0;
    for i in 0..geo.npoints() {
        let ds = geo.ds(i);
        a += ds;
        v += vec3::dot(geo.pos[i], geo.normal[i]) * ds;
    }
    (a, v / 3.0)
}

/// Surface gradient from parameter derivatives at one node.
#[inline]
fn grad_from_derivs(geo: &GeometryCache, i: usize, ft: f64, fp: f64) -> Vec3 {
    let (e, f, g) = (geo.e[i], geo.f[i], geo.g[i]);
    let w2 = geo.w[i] * geo.w[i];
    let a = (e * ft - f * fp) / w2;
    let b = (g * fp - f * ft) / w2;
    vec3::add(vec3::scale(geo.xt[i], a), vec3::scale(geo.xp[i], b))
}

/// Surface gradient of a real expansion, sampled on the geometry's grid.
pub fn surf_grad(fc: &CoeffField, geo: &GeometryCache) -> Vec<Vec3> {
    let ft = geo.grid.synth_real(fc, Deriv::Theta);
    let fp = geo.grid.synth_real(fc, Deriv::Phi);
    (0..geo.npoints())
        .map(|i| grad_from_derivs(geo, i, ft.values[i], fp.values[i]))
        .collect()
}

/// Surface gradient of grid samples on the geometry's grid.
pub fn surf_grad_grid(f: &[f64], geo: &GeometryCache) -> Result<Vec<Vec3>> {
    let c = geo.grid.analyze_real(&GridField {
        p: geo.q,
        values: f.to_vec(),
    })?;
    Ok(surf_grad(&c, geo))
}

/// Surface divergence of a vector field sampled on the geometry's grid.
///
/// The input is projected onto the tangent plane first; a warning is logged if
/// the removed normal part exceeds `1e-8` relative to the field size and is
/// above roundoff.
pub fn surf_div(v: &[Vec3], geo: &GeometryCache) -> Result<Vec<f64>> {
    let np = geo.npoints();
    if v.len() != np {
        return Err(Error::Dimension {
            expected: np,
            got: v.len(),
        });
    }
    let vmax = v.iter().map(|x| vec3::norm(*x)).fold(0.0, f64::max);
    let mut worst = 0.0f64;
    let tang: Vec<Vec3> = v
        .iter()
        .zip(&geo.normal)
        .map(|(x, n)| {
            let vn = vec3::dot(*x, *n);
            worst = worst.max(vn.abs());
            vec3::axpy(*x, -vn, *n)
        })
        .collect();
    if worst > 1e-8 * vmax && worst > 1e-13 {
        log::warn!("surf_div: removed normal component {:.3e} (field size {:.3e})", worst, vmax);
    }
    let mut out = vec![0.0; np];
    for comp in 0..3 {
        let vals: Vec<f64> = tang.iter().map(|x| x[comp]).collect();
        let grad = surf_grad_grid(&vals, geo)?;
        for i in 0..np {
            out[i] += grad[i][comp];
        }
    }
    Ok(out)
}

/// Laplace-Beltrami operator of a real expansion on the geometry's grid.
pub fn laplace_beltrami(fc: &CoeffField, geo: &GeometryCache) -> Result<Vec<f64>> {
    let grad = surf_grad(fc, geo);
    surf_div(&grad, geo)
}

/// Laplace-Beltrami operator returned as an expansion of order `p_out`.
pub fn laplace_beltrami_coeffs(fc: &CoeffField, geo: &GeometryCache, p_out: usize) -> Result<CoeffField> {
    let lb = laplace_beltrami(fc, geo)?;
    Ok(geo.grid.analyze_real(&GridField { p: geo.q, values: lb })?.resample(p_out))
}

/// Result of [`adaptive_upsample_rate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpsampleChoice {
    pub factor: usize,
    /// Set when the criterion was not met below the cap.
    pub capped: bool,
}

/// Smallest factor `U <= u_max` for which the mean-curvature spectrum computed at
/// order `U(p+1) − 1` has relative tail energy above degree `⌊pU/(U+1)⌋` below `tol`.
pub fn adaptive_upsample_rate(s: &SurfaceShape, tol: f64, u_max: usize) -> Result<UpsampleChoice> {
    let u_max = u_max.max(1);
    for u in 1..=u_max {
        let geo = geometry(s, u)?;
        let h = geo.grid.analyze_real(&GridField {
            p: geo.q,
            values: geo.h_mean.clone(),
        })?;
        let cut = s.p * u / (u + 1);
        let mut total = 0.0;
        let mut tail = 0.0;
        for n in 0..=h.p {
            let en = h.degree_energy(n).powi(2);
            total += en;
            if n > cut {
                tail += en;
            }
        }
        if total == 0.0 || tail / total < tol {
            return Ok(UpsampleChoice {
                factor: u,
                capped: false,
            });
        }
    }
    log::debug!("adaptive upsampling capped at U = {u_max}");
    Ok(UpsampleChoice {
        factor: u_max,
        capped: true,
    })
}

/// Interfacial force `f = 2σ H_signed n − ∇_γ σ` on the geometry's grid.
///
/// `gamma` is the surfactant expansion; it is synthesized on the working grid,
/// and `σ` is transformed at that order before differentiation.
pub fn interfacial_force(geo: &GeometryCache, gamma: &CoeffField, eos: &EosParams) -> Result<Vec<Vec3>> {
    let gam = geo.grid.synth_real(gamma, Deriv::Value);
    let sigma = eos_sigma(&gam.values, eos)?;
    let grad = if eos.elasticity == 0.0 || eos.coverage == 0.0 {
        vec![[0.0; 3]; geo.npoints()]
    } else {
        surf_grad_grid(&sigma, geo)?
    };
    Ok((0..geo.npoints())
        .map(|i| vec3::sub(vec3::scale(geo.normal[i], 2.0 * sigma[i] * geo.h_signed(i)), grad[i]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn spheroid(p: usize) -> SurfaceShape {
        SurfaceShape::ellipsoid(p, [1.0, 1.0, 2.0], [0.0; 3]).unwrap()
    }

    /// Closed-form curvatures of the ellipsoid `x²/a² + y²/b² + z²/c² = 1`.
    fn ellipsoid_curvatures(a: [f64; 3], x: Vec3) -> (f64, f64) {
        let h = (x[0] * x[0] / a[0].powi(4) + x[1] * x[1] / a[1].powi(4) + x[2] * x[2] / a[2].powi(4)).sqrt();
        let abc2 = (a[0] * a[1] * a[2]).powi(2);
        let k = 1.0 / (abc2 * h.powi(4));
        let r2 = vec3::dot(x, x);
        let hm = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2] - r2) / (2.0 * abc2 * h.powi(3));
        (hm, k)
    }

    #[test]
    fn unit_sphere_closed_forms() {
        let s = SurfaceShape::sphere(9, 1.0, [0.0; 3]).unwrap();
        let geo = geometry(&s, 1).unwrap();
        let np = geo.grid.nphi();
        for i in 0..geo.npoints() {
            let st = geo.grid.sin_theta[i / np];
            assert!((geo.w[i] - st).abs() < 1e-12);
            for c in 0..3 {
                assert!((geo.normal[i][c] - geo.pos[i][c]).abs() < 1e-12);
            }
            assert!((geo.h_mean[i] + 1.0).abs() < 1e-12);
            assert!((geo.h_signed(i) - 1.0).abs() < 1e-12);
            assert!((geo.k_gauss[i] - 1.0).abs() < 1e-12);
            assert!((vec3::norm(geo.normal[i]) - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn translation_invariance() {
        let s = SurfaceShape::ellipsoid(8, [1.0, 0.7, 1.3], [0.0; 3]).unwrap();
        let t = s.translated([0.3, -2.0, 1.5]);
        let (a, b) = (geometry(&s, 2).unwrap(), geometry(&t, 2).unwrap());
        for i in 0..a.npoints() {
            for (u, v) in [
                (a.e[i], b.e[i]),
                (a.f[i], b.f[i]),
                (a.g[i], b.g[i]),
                (a.l[i], b.l[i]),
                (a.m[i], b.m[i]),
                (a.n[i], b.n[i]),
                (a.w[i], b.w[i]),
                (a.h_mean[i], b.h_mean[i]),
                (a.k_gauss[i], b.k_gauss[i]),
            ] {
                assert!((u - v).abs() < 1e-13 * (1.0 + u.abs()));
            }
        }
    }

    #[test]
    fn spheroid_curvatures() {
        let a = [1.0, 1.0, 2.0];
        let geo = geometry(&spheroid(15), 1).unwrap();
        for i in 0..geo.npoints() {
            let (hm, k) = ellipsoid_curvatures(a, geo.pos[i]);
            assert!((geo.h_signed(i) - hm).abs() / hm < 1e-10);
            assert!((geo.k_gauss[i] - k).abs() / k < 1e-10);
        }
    }

    #[test]
    fn triaxial_curvatures() {
        let a = [1.2, 0.8, 1.5];
        let s = SurfaceShape::ellipsoid(12, a, [0.1, 0.0, -0.2]).unwrap();
        let geo = geometry(&s, 1).unwrap();
        for i in 0..geo.npoints() {
            let x = vec3::sub(geo.pos[i], [0.1, 0.0, -0.2]);
            let (hm, k) = ellipsoid_curvatures(a, x);
            assert!((geo.h_signed(i) - hm).abs() / hm < 1e-10);
            assert!((geo.k_gauss[i] - k).abs() / k < 1e-10);
        }
    }

    #[test]
    fn area_and_volume() {
        let (a, v) = area_volume(&SurfaceShape::sphere(6, 1.0, [0.0; 3]).unwrap()).unwrap();
        assert!((a - 4.0 * PI).abs() < 1e-12);
        assert!((v - 4.0 * PI / 3.0).abs() < 1e-12);
        let s = spheroid(16);
        let (_, v) = area_volume(&s).unwrap();
        assert!((v - 8.0 * PI / 3.0).abs() < 1e-10);
        let e = sphgrid::EulerAngles::new(0.4, 1.1, -0.3);
        let r = SurfaceShape::new([
            sphgrid::rotate_expansion(&s.coeffs[0], &e),
            sphgrid::rotate_expansion(&s.coeffs[1], &e),
            sphgrid::rotate_expansion(&s.coeffs[2], &e),
        ])
        .unwrap();
        let (_, vr) = area_volume(&r).unwrap();
        assert!((vr - v).abs() < 1e-12);
    }

    #[test]
    fn gradient_of_z_on_sphere() {
        let s = SurfaceShape::sphere(8, 1.0, [0.0; 3]).unwrap();
        let geo = geometry(&s, 1).unwrap();
        let gz = surf_grad(&s.coeffs[2], &geo);
        for i in 0..geo.npoints() {
            let x = geo.pos[i];
            let expect = vec3::sub([0.0, 0.0, 1.0], vec3::scale(x, x[2]));
            for c in 0..3 {
                assert!((gz[i][c] - expect[c]).abs() < 1e-12);
            }
            assert!(vec3::dot(gz[i], geo.normal[i]).abs() < 1e-12);
        }
        let mut one = CoeffField::zeros(8);
        one.set(0, 0, Complex64::new(2.0, 0.0));
        assert!(surf_grad(&one, &geo).iter().all(|g| vec3::norm(*g) < 1e-14));
    }

    #[test]
    fn divergence_properties() {
        let s = spheroid(12);
        let geo = geometry(&s, 2).unwrap();
        // divergence theorem for a tangential field
        let f = &s.coeffs[0];
        let v: Vec<Vec3> = surf_grad(f, &geo)
            .iter()
            .zip(&geo.pos)
            .map(|(g, x)| vec3::scale(*g, 1.0 + 0.3 * x[2]))
            .collect();
        let d = surf_div(&v, &geo).unwrap();
        assert!(geo.integrate(&d).abs() < 1e-10);
        // rigid rotation about the symmetry axis is tangential and divergence free
        let rot: Vec<Vec3> = geo.pos.iter().map(|x| vec3::cross([0.0, 0.0, 0.7], *x)).collect();
        let d = surf_div(&rot, &geo).unwrap();
        assert!(d.iter().all(|v| v.abs() < 1e-11));
        // rotating sphere
        let sph = SurfaceShape::sphere(12, 1.3, [0.0; 3]).unwrap();
        let gs = geometry(&sph, 2).unwrap();
        let omega = [0.3, -0.5, 0.8];
        let rot: Vec<Vec3> = gs.pos.iter().map(|x| vec3::cross(omega, *x)).collect();
        let d = surf_div(&rot, &gs).unwrap();
        assert!(d.iter().all(|v| v.abs() < 1e-11), "{}", d.iter().fold(0.0f64, |a, b| a.max(b.abs())));
    }

    #[test]
    fn normal_divergence_on_sphere() {
        let r = 1.7;
        let s = SurfaceShape::sphere(8, r, [0.2, 0.0, 0.0]).unwrap();
        let geo = geometry(&s, 2).unwrap();
        let mut div = vec![0.0; geo.npoints()];
        for c in 0..3 {
            let nc: Vec<f64> = geo.normal.iter().map(|n| n[c]).collect();
            let g = surf_grad_grid(&nc, &geo).unwrap();
            for i in 0..geo.npoints() {
                div[i] += g[i][c];
            }
        }
        for i in 0..geo.npoints() {
            assert!((div[i] - 2.0 / r).abs() < 1e-10);
            assert!((2.0 * geo.h_signed(i) - 2.0 / r).abs() < 1e-12);
        }
    }

    #[test]
    fn sphere_laplace_beltrami_eigenvalues() {
        let p = 12;
        let s = SurfaceShape::sphere(p, 1.0, [0.0; 3]).unwrap();
        let geo = geometry(&s, 2).unwrap();
        for n in 0..=(p - 2) {
            for m in [0i64, 1, n as i64] {
                if m as usize > n {
                    continue;
                }
                let mut c = CoeffField::zeros(p);
                c.set_real(n, m, Complex64::new(1.0, 0.3));
                let lb = laplace_beltrami(&c, &geo).unwrap();
                let y = geo.grid.synth_real(&c, Deriv::Value);
                let scale = y.values.iter().fold(0.0f64, |a, b| a.max(b.abs()));
                for i in 0..geo.npoints() {
                    let expect = -((n * (n + 1)) as f64) * y.values[i];
                    assert!((lb[i] - expect).abs() < 1e-9 * scale * (1.0 + (n * n) as f64));
                }
                assert!(geo.integrate(&lb).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn spheroid_laplace_beltrami_self_convergence() {
        let p = 12;
        let s = spheroid(p);
        let mut f = CoeffField::zeros(p);
        f.set_real(2, 1, Complex64::new(0.5, -0.2));
        f.set_real(3, 0, Complex64::new(0.7, 0.0));
        // result at the shape order, default de-aliasing vs a heavily over-resolved grid
        let g1 = geometry(&s, 2).unwrap();
        let g2 = geometry(&s, 8).unwrap();
        let a = laplace_beltrami_coeffs(&f, &g1, p).unwrap();
        let b = laplace_beltrami_coeffs(&f, &g2, p).unwrap();
        let err = a.axpy(-1.0, &b).max_abs() / b.max_abs();
        assert!(err < 1e-8, "{err}");
        assert!(g1.integrate(&laplace_beltrami(&f, &g1).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn upsample_rates() {
        let s = SurfaceShape::sphere(10, 1.0, [0.0; 3]).unwrap();
        assert_eq!(adaptive_upsample_rate(&s, 1e-8, 4).unwrap().factor, 1);
        let e = SurfaceShape::ellipsoid(10, [1.0, 1.0, 3.0], [0.0; 3]).unwrap();
        let mut last = 0;
        for tol in [1e-2, 1e-4, 1e-6, 1e-8, 1e-10] {
            let u = adaptive_upsample_rate(&e, tol, 4).unwrap().factor;
            assert!(u >= last);
            last = u;
        }
    }

    #[test]
    fn clean_sphere_force() {
        let s = SurfaceShape::sphere(8, 1.0, [0.0; 3]).unwrap();
        let geo = geometry(&s, 2).unwrap();
        let mut gam = CoeffField::zeros(8);
        gam.set(0, 0, Complex64::new((4.0 * PI).sqrt(), 0.0));
        let eos = EosParams::new(0.2, 0.3).unwrap();
        let f = interfacial_force(&geo, &CoeffField::zeros(8), &EosParams::clean()).unwrap();
        for i in 0..geo.npoints() {
            assert!((vec3::norm(f[i]) - 2.0).abs() < 1e-12);
        }
        // uniform Γ: Marangoni term vanishes, force purely normal
        let f = interfacial_force(&geo, &gam, &eos).unwrap();
        let sigma = 1.0 + 0.2 * (0.7f64).ln();
        for i in 0..geo.npoints() {
            let t = vec3::sub(f[i], vec3::scale(geo.normal[i], vec3::dot(f[i], geo.normal[i])));
            assert!(vec3::norm(t) < 1e-12);
            assert!((vec3::dot(f[i], geo.normal[i]) - 2.0 * sigma).abs() < 1e-12);
        }
    }

    #[test]
    fn net_force_vanishes_on_closed_surface() {
        let s = SurfaceShape::ellipsoid(14, [1.0, 0.8, 1.6], [0.0; 3]).unwrap();
        let geo = geometry(&s, 2).unwrap();
        let f = interfacial_force(&geo, &CoeffField::zeros(14), &EosParams::clean()).unwrap();
        for c in 0..3 {
            let comp: Vec<f64> = f.iter().map(|v| v[c]).collect();
            assert!(geo.integrate(&comp).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_surface_detected() {
        let s = SurfaceShape::from_fn(6, |_, _| [1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(geometry(&s, 1), Err(Error::DegenerateSurface { .. })));
    }
}
