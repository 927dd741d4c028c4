//! Insoluble surfactant: equation of state, transport terms and IMEX stages.

use crate::error::{Error, Result};
use crate::krylov::{self, FnOperator};
use crate::sphgrid::{self, CoeffField, Deriv, GridField};
use crate::surface::{self, GeometryCache};
use crate::vec3;

/// Langmuir equation-of-state parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EosParams {
    /// Elasticity number `E`.
    pub elasticity: f64,
    /// Surface coverage `x_s`.
    pub coverage: f64,
}

impl EosParams {
    pub fn new(elasticity: f64, coverage: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&coverage) || elasticity < 0.0 || !elasticity.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "equation of state E = {elasticity}, x_s = {coverage}"
            )));
        }
        Ok(EosParams { elasticity, coverage })
    }

    /// Surfactant-free interface, `σ ≡ 1`.
    pub fn clean() -> Self {
        EosParams {
            elasticity: 0.0,
            coverage: 0.0,
        }
    }
}

/// `σ = 1 + E ln(1 − x_s Γ)` pointwise.
pub fn eos_sigma(gamma: &[f64], eos: &EosParams) -> Result<Vec<f64>> {
    gamma
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            let arg = 1.0 - eos.coverage * g;
            if eos.coverage == 0.0 || eos.elasticity == 0.0 {
                return Ok(1.0);
            }
            if !(arg > 0.0) {
                return Err(Error::EosDomain {
                    node: i,
                    value: eos.coverage * g,
                });
            }
            Ok(1.0 + eos.elasticity * arg.ln())
        })
        .collect()
}

/// Total amount `∫ Γ dS`.
pub fn surfactant_mass(gamma: &CoeffField, geo: &GeometryCache) -> f64 {
    let g = geo.grid.synth_real(gamma, Deriv::Value);
    geo.integrate(&g.values)
}

/// Scales `Γ` so that its surface mean equals one.
pub fn normalize_mean(gamma: &CoeffField, geo: &GeometryCache) -> Result<CoeffField> {
    let mass = surfactant_mass(gamma, geo);
    let area: f64 = (0..geo.npoints()).map(|i| geo.ds(i)).sum();
    if !(mass.abs() > 0.0) {
        return Err(Error::DegenerateState("zero surfactant mass".into()));
    }
    Ok(gamma.scaled(area / mass))
}

/// Explicit transport terms `f_E = −∇_γ·(Γ u_γ) − (∇_γ·n) Γ (u·n)`.
///
/// Products are formed on the grid of `geo` and the result truncated to `p_out`.
pub fn rhs_explicit(geo: &GeometryCache, gamma: &CoeffField, velocity: &[CoeffField; 3], p_out: usize) -> Result<CoeffField> {
    let g = geo.grid.synth_real(gamma, Deriv::Value).values;
    let u: Vec<Vec<f64>> = velocity.iter().map(|c| geo.grid.synth_real(c, Deriv::Value).values).collect();
    let np = geo.npoints();
    let mut flux = Vec::with_capacity(np);
    let mut stretch = Vec::with_capacity(np);
    for i in 0..np {
        let ui = [u[0][i], u[1][i], u[2][i]];
        let n = geo.normal[i];
        let un = vec3::dot(ui, n);
        flux.push(vec3::scale(vec3::axpy(ui, -un, n), g[i]));
        stretch.push(2.0 * geo.h_signed(i) * g[i] * un);
    }
    let div = surface::surf_div(&flux, geo)?;
    let fe: Vec<f64> = div.iter().zip(&stretch).map(|(d, s)| -d - s).collect();
    Ok(geo.grid.analyze_real(&GridField { p: geo.q, values: fe })?.resample(p_out))
}

/// Transport terms seen by nodes that move with the full velocity `u`.
///
/// Adds the advection `u_γ·∇_γΓ` to [`rhs_explicit`], giving
/// `−Γ ∇_γ·u_γ − (∇_γ·n) Γ (u·n)`; this keeps `d/dt ∫Γ dS = 0` for material nodes.
pub fn rhs_material(geo: &GeometryCache, gamma: &CoeffField, velocity: &[CoeffField; 3], p_out: usize) -> Result<CoeffField> {
    let fe = rhs_explicit(geo, gamma, velocity, geo.q)?;
    let grad = surface::surf_grad(gamma, geo);
    let u: Vec<Vec<f64>> = velocity.iter().map(|c| geo.grid.synth_real(c, Deriv::Value).values).collect();
    let adv: Vec<f64> = (0..geo.npoints())
        .map(|i| vec3::dot([u[0][i], u[1][i], u[2][i]], grad[i]))
        .collect();
    let adv = geo.grid.analyze_real(&GridField { p: geo.q, values: adv })?;
    Ok(fe.axpy(1.0, &adv).resample(p_out))
}

/// Implicit term `f_I = Δ_γ Γ / Pe`.
pub fn rhs_implicit(geo: &GeometryCache, gamma: &CoeffField, pe: f64, p_out: usize) -> Result<CoeffField> {
    if pe.is_infinite() {
        return Ok(CoeffField::zeros(p_out));
    }
    Ok(surface::laplace_beltrami_coeffs(gamma, geo, p_out)?.scaled(1.0 / pe))
}

/// Result of one implicit stage solve.
#[derive(Debug, Clone)]
pub struct StageSolve {
    pub gamma: CoeffField,
    pub iterations: usize,
    pub residual: f64,
}

/// Tolerance of the implicit stage solves.
pub const STAGE_TOL: f64 = 1e-12;

/// Solves `(I − c Δ_γ) y = b` on real coefficients of order `b.p`.
///
/// With `precondition` the degree-`n` entries are divided by `1 + c n(n+1)`,
/// which is the exact inverse on the unit sphere.
pub fn implicit_solve(geo: &GeometryCache, b: &CoeffField, c: f64, precondition: bool) -> Result<StageSolve> {
    let p = b.p;
    if c == 0.0 {
        return Ok(StageSolve {
            gamma: b.clone(),
            iterations: 0,
            residual: 0.0,
        });
    }
    let len = CoeffField::packed_len(p);
    let diag: Vec<f64> = (0..=p)
        .flat_map(|n| std::iter::repeat_n(1.0 + c * (n * (n + 1)) as f64, 2 * (n + 1)))
        .collect();
    let apply = |x: &[f64], y: &mut [f64]| -> Result<()> {
        let f = CoeffField::unpack_real(p, x);
        let lb = surface::laplace_beltrami_coeffs(&f, geo, p)?;
        let mut v = Vec::with_capacity(len);
        f.axpy(-c, &lb).pack_real(&mut v);
        y.copy_from_slice(&v);
        // imaginary slots of m = 0 carry the identity
        let mut pos = 0;
        for n in 0..=p {
            y[pos + 1] = x[pos + 1];
            pos += 2 * (n + 1);
        }
        Ok(())
    };
    let mut rhs = Vec::with_capacity(len);
    b.pack_real(&mut rhs);
    let out = if precondition {
        let pre = |x: &[f64], y: &mut [f64]| {
            for i in 0..x.len() {
                y[i] = x[i] / diag[i];
            }
        };
        krylov::gmres(&FnOperator::with_preconditioner(len, apply, pre), &rhs, STAGE_TOL, len)?
    } else {
        krylov::gmres(&FnOperator::new(len, apply), &rhs, STAGE_TOL, len)?
    };
    Ok(StageSolve {
        gamma: CoeffField::unpack_real(p, &out.x),
        iterations: out.iterations,
        residual: out.residual(),
    })
}

/// Stage `Γ^{t+dt/2}` from `(I − (dt/2)Δ_γ/Pe) Γ^{t+dt/2} = Γ^t + (dt/2) f_E(t)`.
pub fn imex_half_step(geo_half: &GeometryCache, gamma: &CoeffField, fe: &CoeffField, dt: f64, pe: f64) -> Result<StageSolve> {
    let b = gamma.axpy(0.5 * dt, fe);
    implicit_solve(geo_half, &b, diffusion_coefficient(0.5 * dt, pe), true)
}

/// Second-order update `Γ^{t+dt} = Γ^t + dt (f_E(t+dt/2) + f_I(t+dt/2))`.
pub fn imex_full_step(gamma: &CoeffField, fe_half: &CoeffField, fi_half: &CoeffField, dt: f64) -> CoeffField {
    gamma.axpy(dt, fe_half).axpy(dt, fi_half)
}

/// First-order companion `(I − dt Δ_γ/Pe) Γ = Γ^t + dt f_E(t)` on the end-of-step geometry.
pub fn imex1_step(geo_end: &GeometryCache, gamma: &CoeffField, fe: &CoeffField, dt: f64, pe: f64) -> Result<StageSolve> {
    let b = gamma.axpy(dt, fe);
    implicit_solve(geo_end, &b, diffusion_coefficient(dt, pe), true)
}

fn diffusion_coefficient(dt: f64, pe: f64) -> f64 {
    if pe.is_infinite() {
        0.0
    } else {
        dt / pe
    }
}

/// `‖Γ − Γ_IMEX1‖_∞ / ‖Γ‖_∞` on the order-`q` grid.
pub fn err_imex1(gamma: &CoeffField, gamma_imex1: &CoeffField, q: usize) -> Result<f64> {
    let g = sphgrid::build_grid(q)?;
    let a = g.synth_real(gamma, Deriv::Value).values;
    let b = g.synth_real(gamma_imex1, Deriv::Value).values;
    let den = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if den == 0.0 {
        return Err(Error::DegenerateState("zero surfactant field".into()));
    }
    Ok(a.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / den)
}

/// Relative change of total surfactant mass over a step.
pub fn err_conservation(mass_old: f64, mass_new: f64) -> Result<f64> {
    if mass_old == 0.0 {
        return Err(Error::DegenerateState("zero surfactant mass".into()));
    }
    Ok((mass_new - mass_old).abs() / mass_old.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::SurfaceShape;
    use crate::vec3::Vec3;
    use num_complex::Complex64;
    use std::f64::consts::PI;

    fn uniform(p: usize, v: f64) -> CoeffField {
        let mut c = CoeffField::zeros(p);
        c.set(0, 0, Complex64::new(v * (4.0 * PI).sqrt(), 0.0));
        c
    }

    #[test]
    fn eos_values() {
        let e = EosParams::new(0.2, 0.3).unwrap();
        assert_eq!(eos_sigma(&[0.0], &e).unwrap()[0], 1.0);
        assert!((eos_sigma(&[1.0], &e).unwrap()[0] - 0.928_665_5).abs() < 1e-6);
        let s = eos_sigma(&[0.1, 0.5, 1.0, 2.0], &e).unwrap();
        assert!(s.windows(2).all(|w| w[1] < w[0]));
        assert!(matches!(
            eos_sigma(&[1.0, 4.0], &e),
            Err(Error::EosDomain { node: 1, .. })
        ));
        assert!(EosParams::new(0.1, 1.5).is_err());
    }

    #[test]
    fn rotating_sphere_has_no_transport() {
        let p = 10;
        let s = SurfaceShape::sphere(p, 1.0, [0.0; 3]).unwrap();
        let geo = surface::geometry(&s, 2).unwrap();
        // u = ω × x with ω = (0.3, -0.2, 1)
        let vel = crate::quadrature::density_coeffs(
            &s.positions(p)
                .iter()
                .map(|x| vec3::cross([0.3, -0.2, 1.0], *x))
                .collect::<Vec<_>>(),
            p,
        )
        .unwrap();
        let fe = rhs_explicit(&geo, &uniform(p, 1.3), &vel, p).unwrap();
        assert!(fe.max_abs() < 1e-11);
    }

    #[test]
    fn material_form_under_rotation() {
        let p = 10;
        let s = SurfaceShape::ellipsoid(p, [1.0, 1.0, 1.6], [0.0; 3]).unwrap();
        let geo = surface::geometry(&s, 2).unwrap();
        let pos = s.positions(p);
        let vel = crate::quadrature::density_coeffs(
            &pos.iter().map(|x| vec3::cross([0.0, 0.0, 1.0], *x)).collect::<Vec<_>>(),
            p,
        )
        .unwrap();
        let gvals: Vec<f64> = pos.iter().map(|x| 1.0 + 0.3 * x[0] + 0.1 * x[2]).collect();
        let g = crate::sphgrid::forward_transform(&GridField { p, values: gvals }).unwrap();
        // material nodes carry Γ unchanged; the fixed-frame form advects it
        assert!(rhs_material(&geo, &g, &vel, p).unwrap().max_abs() < 1e-10);
        let fe = rhs_explicit(&geo, &g, &vel, p).unwrap();
        assert!(fe.max_abs() > 0.1);
        // the fixed-frame flux term integrates to zero on any closed surface
        let vals = geo.grid.synth_real(&fe.resample(geo.q), Deriv::Value).values;
        assert!(geo.integrate(&vals).abs() < 1e-10);
    }

    #[test]
    fn expanding_sphere_stretching() {
        let p = 8;
        let r = 1.7;
        let s = SurfaceShape::sphere(p, r, [0.0; 3]).unwrap();
        let geo = surface::geometry(&s, 2).unwrap();
        let rdot = 0.4;
        let vals: Vec<Vec3> = s.positions(p).iter().map(|x| vec3::scale(*x, rdot / r)).collect();
        let vel = crate::quadrature::density_coeffs(&vals, p).unwrap();
        let fe = rhs_explicit(&geo, &uniform(p, 2.0), &vel, p).unwrap();
        let expect = uniform(p, -2.0 * 2.0 * rdot / r);
        assert!(fe.axpy(-1.0, &expect).max_abs() < 1e-12);
    }

    #[test]
    fn sphere_stage_is_diagonal() {
        let p = 9;
        let s = SurfaceShape::sphere(p, 1.0, [0.0; 3]).unwrap();
        let geo = surface::geometry(&s, 2).unwrap();
        let mut b = uniform(p, 1.0);
        b.set_real(3, 2, Complex64::new(0.2, 0.1));
        let out = implicit_solve(&geo, &b, 0.5, true).unwrap();
        assert_eq!(out.iterations, 1);
        let expect = 0.2 / (1.0 + 0.5 * 12.0);
        assert!((out.gamma.get(3, 2).re - expect).abs() < 1e-12);
    }

    #[test]
    fn infinite_peclet_is_identity() {
        let p = 6;
        let s = SurfaceShape::sphere(p, 1.0, [0.0; 3]).unwrap();
        let geo = surface::geometry(&s, 2).unwrap();
        let mut g = uniform(p, 1.0);
        g.set_real(2, 1, Complex64::new(0.1, 0.3));
        let fe = CoeffField::zeros(p);
        let half = imex_half_step(&geo, &g, &fe, 0.1, f64::INFINITY).unwrap();
        assert_eq!(half.gamma, g);
        let fi = rhs_implicit(&geo, &g, f64::INFINITY, p).unwrap();
        assert_eq!(imex_full_step(&g, &fe, &fi, 0.1), g);
    }

    #[test]
    fn diffusion_decay_second_order() {
        let p = 6;
        let pe = 2.0;
        let s = SurfaceShape::sphere(p, 1.0, [0.0; 3]).unwrap();
        let geo = surface::geometry(&s, 2).unwrap();
        let mut g0 = uniform(p, 1.0);
        g0.set(2, 0, Complex64::new(0.5, 0.0));
        let t_end = 0.5;
        let run = |steps: usize| {
            let dt = t_end / steps as f64;
            let zero = CoeffField::zeros(p);
            let mut g = g0.clone();
            for _ in 0..steps {
                let half = imex_half_step(&geo, &g, &zero, dt, pe).unwrap();
                let fi = rhs_implicit(&geo, &half.gamma, pe, p).unwrap();
                g = imex_full_step(&g, &zero, &fi, dt);
            }
            (g.get(2, 0).re - 0.5 * (-6.0 * t_end / pe).exp()).abs()
        };
        let e1 = run(20);
        let e2 = run(40);
        let order = (e1 / e2).log2();
        assert!((order - 2.0).abs() < 0.2, "order {order}");
    }

    #[test]
    fn estimators() {
        let g = uniform(4, 1.0);
        assert_eq!(err_imex1(&g, &g, 4).unwrap(), 0.0);
        assert_eq!(err_conservation(2.0, 2.0).unwrap(), 0.0);
        assert!((err_conservation(2.0, 2.1).unwrap() - 0.05).abs() < 1e-15);
        assert!(err_conservation(0.0, 1.0).is_err());
        assert!(err_imex1(&CoeffField::zeros(4), &g, 4).is_err());
    }

    #[test]
    fn mean_normalization() {
        let s = SurfaceShape::ellipsoid(8, [1.0, 1.0, 2.0], [0.0; 3]).unwrap();
        let geo = surface::geometry(&s, 2).unwrap();
        let g = normalize_mean(&uniform(8, 3.0), &geo).unwrap();
        let area: f64 = (0..geo.npoints()).map(|i| geo.ds(i)).sum();
        assert!((surfactant_mass(&g, &geo) - area).abs() < 1e-12 * area);
    }

    #[test]
    fn preconditioner_reduces_iterations() {
        let p = 15;
        let s = crate::surface::SurfaceShape::from_fn(p, |t, f| {
            let y32 = (105.0 / (32.0 * PI)).sqrt() * t.sin().powi(2) * t.cos() * (2.0 * f).cos();
            vec3::scale(vec3::spherical(t, f), 0.7 + 0.3 * (-3.0 * y32).exp())
        })
        .unwrap();
        let geo = surface::geometry(&s, 2).unwrap();
        let b = crate::quadrature::density_coeffs(
            &s.positions(p).iter().map(|x| [2.0 + x[0], 0.0, 0.0]).collect::<Vec<_>>(),
            p,
        )
        .unwrap()[0]
            .clone();
        let pre = implicit_solve(&geo, &b, 1.0, true).unwrap();
        let raw = implicit_solve(&geo, &b, 1.0, false).unwrap();
        assert!(pre.iterations * 2 < raw.iterations, "{} vs {}", pre.iterations, raw.iterations);
        assert!(pre.gamma.axpy(-1.0, &raw.gamma).max_abs() < 1e-9);
    }
}
