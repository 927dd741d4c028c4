//! Validation cases with fixed parameters and pass/fail thresholds.
//!
//! Every case returns a [`CaseReport`] holding a printable table and one
//! check line per threshold. The acceptance tests call the same functions.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;

use dropsim_core::evolve::{EvolveConfig, Evolver, PrescribedVelocity, ReparamMode, Scheme, StepController};
use dropsim_core::quadrature::{self, Kernel, NearParams, SingularPlan, SourceSurface, Spacing};
use dropsim_core::reparam::{self, ReparamConfig};
use dropsim_core::sphgrid::{self, CoeffField, Deriv, GridField};
use dropsim_core::stokes::{Drop, DropSystem, FarField, StokesParams};
use dropsim_core::surface::{self, SurfaceShape};
use dropsim_core::surfactant::{self, EosParams};
use dropsim_core::vec3::{self, Vec3};

use crate::config::{DropSpec, GammaSpec, ShapeSpec, SimulationConfig};
use crate::diagnostics::{self, FlowPlane};
use crate::error::{AppError, AppResult};
use crate::runner;

/// One threshold check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub label: String,
    pub value: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct CaseReport {
    pub name: String,
    pub table: Vec<String>,
    pub checks: Vec<Check>,
}

impl CaseReport {
    fn new(name: &str) -> Self {
        CaseReport {
            name: name.to_string(),
            ..Default::default()
        }
    }

    fn line(&mut self, s: impl Into<String>) {
        self.table.push(s.into());
    }

    fn check(&mut self, label: impl Into<String>, value: f64, passed: bool) {
        self.checks.push(Check {
            label: label.into(),
            value,
            passed,
        });
    }

    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    /// Value of the first check whose label starts with `prefix`.
    pub fn value(&self, prefix: &str) -> Option<f64> {
        self.checks.iter().find(|c| c.label.starts_with(prefix)).map(|c| c.value)
    }
}

impl fmt::Display for CaseReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "== {} ==", self.name)?;
        for l in &self.table {
            writeln!(f, "{l}")?;
        }
        for c in &self.checks {
            writeln!(f, "[{}] {} (measured {:.6e})", if c.passed { "PASS" } else { "FAIL" }, c.label, c.value)?;
        }
        write!(f, "{}: {}", self.name, if self.passed() { "PASS" } else { "FAIL" })
    }
}

/// Case names accepted by [`run_case`].
pub const CASES: &[&str] = &[
    "quad-identity",
    "singular-convergence",
    "near-eval",
    "preconditioner",
    "diffusion",
    "stretch-sphere",
    "rotate-sphere",
    "four-roll",
    "extension-clean",
    "extension-surfactant",
    "convergence",
    "reparam",
    "two-drop",
    "time-order",
];

pub fn run_case(name: &str, p: Option<usize>) -> AppResult<CaseReport> {
    match name {
        "quad-identity" => quad_identity(p.unwrap_or(15)),
        "singular-convergence" => singular_convergence(p.unwrap_or(11), 23),
        "near-eval" => near_eval_study(p.unwrap_or(39)),
        "preconditioner" => preconditioner(&p.map_or_else(|| vec![9, 15, 21], |p| vec![p])),
        "diffusion" => diffusion(p.unwrap_or(8)),
        "stretch-sphere" => stretch_sphere(p.unwrap_or(6)),
        "rotate-sphere" => rotate_sphere(p.unwrap_or(10)),
        "four-roll" => four_roll(p.unwrap_or(17)),
        "extension-clean" => extension(p.unwrap_or(17), false),
        "extension-surfactant" => extension(p.unwrap_or(17), true),
        "convergence" => convergence(&[11, 15, 19, 23], p.unwrap_or(29)),
        "reparam" => reparam_study(p.unwrap_or(7)),
        "two-drop" => two_drop(p.unwrap_or(13), 20.0),
        "time-order" => time_order(p.unwrap_or(9)),
        other => Err(AppError::UnknownCase(other.to_string())),
    }
}

fn constant_density(p: usize, v: Vec3) -> [CoeffField; 3] {
    let y00 = (4.0 * PI).sqrt();
    let mut out = [CoeffField::zeros(p), CoeffField::zeros(p), CoeffField::zeros(p)];
    for c in 0..3 {
        out[c].set(0, 0, Complex64::new(v[c] * y00, 0.0));
    }
    out
}

/// Quasi-uniform directions from a golden-angle spiral.
fn spiral_directions(n: usize) -> Vec<Vec3> {
    let ga = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            vec3::spherical(z.acos(), ga * i as f64)
        })
        .collect()
}

/// Double-layer identity `∮ T·n dS ∈ {0, 4π, 8π}·e` on and off the unit sphere.
pub fn quad_identity(p: usize) -> AppResult<CaseReport> {
    let mut rep = CaseReport::new("quad-identity");
    let s = SurfaceShape::sphere(p, 1.0, [0.0; 3])?;
    let plan = SingularPlan::new(&s, p)?;
    let src = SourceSurface::new(&s, NearParams::default())?;
    let h = src.h;
    let ratios = [0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0];
    let dirs = spiral_directions(16);
    let mut on_err = 0.0f64;
    let mut off = vec![(0.0f64, 0.0f64); ratios.len()];
    for e in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] {
        let rho = constant_density(p, e);
        let field = plan.apply(&rho, Kernel::Double)?;
        for v in &field {
            on_err = on_err.max(vec3::norm(vec3::sub(*v, vec3::scale(e, 4.0 * PI))) / (4.0 * PI));
        }
        let self_field = quadrature::density_coeffs(&field, p)?;
        let mut targets = Vec::new();
        for r in ratios {
            for d in &dirs {
                targets.push(vec3::scale(*d, 1.0 + r * h));
                targets.push(vec3::scale(*d, 1.0 - r * h));
            }
        }
        let qplan = quadrature::classify_targets(&targets, &src);
        let vals = quadrature::evaluate_plan(&src, &targets, &qplan, &rho, &self_field, Kernel::Double);
        let per = 2 * dirs.len();
        for (k, chunk) in vals.chunks(per).enumerate() {
            for pair in chunk.chunks(2) {
                let eo = vec3::norm(pair[0]) / (4.0 * PI);
                let ei = vec3::norm(vec3::sub(pair[1], vec3::scale(e, 8.0 * PI))) / (4.0 * PI);
                off[k].0 = off[k].0.max(eo);
                off[k].1 = off[k].1.max(ei);
            }
        }
    }
    rep.line(format!("p = {p}, h = {h:.4e}, A = 5h, U = 4; errors relative to 4π"));
    rep.line(format!("{:>8} {:>12} {:>12}", "r/h", "outside", "inside"));
    for (r, (eo, ei)) in ratios.iter().zip(&off) {
        rep.line(format!("{r:>8.2} {eo:>12.3e} {ei:>12.3e}"));
    }
    let off_max = off.iter().fold(0.0f64, |m, (a, b)| m.max(*a).max(*b));
    rep.check("on-surface error <= 1e-8", on_err, on_err <= 1e-8);
    rep.check("off-surface error at r >= 0.25h <= 1e-6", off_max, off_max <= 1e-6);
    Ok(rep)
}

fn laplace_single_error(p: usize) -> AppResult<f64> {
    let s = SurfaceShape::sphere(p, 1.0, [0.0; 3])?;
    let mut one = CoeffField::zeros(p);
    one.set(0, 0, Complex64::new((4.0 * PI).sqrt(), 0.0));
    let v = SingularPlan::new(&s, p)?.apply_laplace_single(&one)?;
    Ok(v.iter().map(|x| (x - 4.0 * PI).abs()).fold(0.0, f64::max) / (4.0 * PI))
}

/// Single layer of unit density on the unit sphere against `4π` at two orders.
pub fn singular_convergence(p_lo: usize, p_hi: usize) -> AppResult<CaseReport> {
    let mut rep = CaseReport::new("singular-convergence");
    rep.line(format!("{:>4} {:>12}", "p", "rel. error"));
    let mut errs = Vec::new();
    for p in [p_lo, (p_lo + p_hi) / 2, p_hi] {
        let e = laplace_single_error(p)?;
        rep.line(format!("{p:>4} {e:>12.3e}"));
        errs.push(e);
    }
    let ratio = errs[2] / errs[0].max(f64::MIN_POSITIVE);
    rep.check(format!("error(p={p_hi}) <= 1e-3 error(p={p_lo})"), ratio, ratio <= 1e-3);
    Ok(rep)
}

/// Smooth density used by the nearly-singular study.
fn study_density(x: Vec3) -> Vec3 {
    [1.0 + 0.5 * x[0], 0.3 * x[1] * x[2], 0.2 + x[0] * x[1]]
}

struct NearSetup {
    shape: SurfaceShape,
    rho: [CoeffField; 3],
    self_field: [CoeffField; 3],
}

fn near_setup(p: usize) -> AppResult<NearSetup> {
    let shape = SurfaceShape::ellipsoid(p, [1.0, 1.0, 2.0], [0.0; 3])?;
    let vals: Vec<Vec3> = shape.positions(p).iter().map(|x| study_density(*x)).collect();
    let rho = quadrature::density_coeffs(&vals, p)?;
    let field = SingularPlan::new(&shape, p)?.apply(&rho, Kernel::Single)?;
    let self_field = quadrature::density_coeffs(&field, p)?;
    Ok(NearSetup { shape, rho, self_field })
}

fn near_values(setup: &NearSetup, params: NearParams, targets: &[Vec3]) -> AppResult<Vec<Vec3>> {
    let src = SourceSurface::new(&setup.shape, params)?;
    let plan = quadrature::classify_targets(targets, &src);
    Ok(quadrature::evaluate_plan(&src, targets, &plan, &setup.rho, &setup.self_field, Kernel::Single))
}

/// Stokeslet single layer `∮ G·ρ dS` of the exact spheroid `(x, y, z/c) ∈ S²`,
/// by adaptive quadrature in spherical coordinates centered at the closest point.
///
/// `θ'` is split into panels that double in length away from the closest point
/// and each carries a 20-point Gauss rule; `φ'` uses the periodic trapezoid rule.
/// Accuracy does not depend on how close `x0` is to the surface.
pub fn spheroid_single_layer(c: f64, rho: impl Fn(Vec3) -> Vec3, x0: Vec3) -> Vec3 {
    let map = |s: Vec3| [s[0], s[1], c * s[2]];
    // closest point of the axisymmetric meridian curve (sin t, c cos t)
    let (r0, z0) = (x0[0].hypot(x0[1]), x0[2]);
    let phi0 = x0[1].atan2(x0[0]);
    let dist2 = |t: f64| (t.sin() - r0).powi(2) + (c * t.cos() - z0).powi(2);
    let mut t = (0..=4000).map(|k| PI * k as f64 / 4000.0).fold(0.0, |b, t| if dist2(t) < dist2(b) { t } else { b });
    for _ in 0..50 {
        let g = (t.sin() - r0) * t.cos() - (c * t.cos() - z0) * c * t.sin();
        let gp = t.cos().powi(2) - (t.sin() - r0) * t.sin() + c * c * t.sin().powi(2) - (c * t.cos() - z0) * c * t.cos();
        let step = g / gp;
        t = (t - step).clamp(0.0, PI);
        if step.abs() < 1e-15 {
            break;
        }
    }
    let pole = vec3::spherical(t, phi0);
    let d = dist2(t).sqrt().max(1e-14);
    let seed = if pole[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
    let e1 = vec3::normalize(vec3::cross(seed, pole));
    let e2 = vec3::cross(pole, e1);
    let mut breaks = vec![0.0];
    let mut b = 0.125 * d;
    while b < PI {
        breaks.push(b);
        b *= 2.0;
    }
    breaks.push(PI);
    let (gx, gw) = sphgrid::legendre::gauss_legendre(20);
    let nphi = 96;
    let mut acc = [0.0; 3];
    for w in breaks.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        for (xg, wg) in gx.iter().zip(&gw) {
            let th = 0.5 * (lo + hi) + 0.5 * (hi - lo) * xg;
            let wt = 0.5 * (hi - lo) * wg * 2.0 * PI / nphi as f64;
            let (st, ct) = th.sin_cos();
            for k in 0..nphi {
                let (sp, cp) = (2.0 * PI * k as f64 / nphi as f64).sin_cos();
                let sh = |a: f64, b: f64, g: f64| -> Vec3 {
                    [a * e1[0] + b * e2[0] + g * pole[0], a * e1[1] + b * e2[1] + g * pole[1], a * e1[2] + b * e2[2] + g * pole[2]]
                };
                let x = map(sh(st * cp, st * sp, ct));
                let xt = map(sh(ct * cp, ct * sp, -st));
                let xp = map(sh(-st * sp, st * cp, 0.0));
                let ds = vec3::norm(vec3::cross(xt, xp)) * wt;
                let r = vec3::sub(x0, x);
                let ir = 1.0 / vec3::norm(r);
                let f = rho(x);
                let fr = vec3::dot(r, f) * ir * ir;
                for i in 0..3 {
                    acc[i] += ds * ir * (f[i] + fr * r[i]);
                }
            }
        }
    }
    acc
}

/// Stokes single layer near a 1:2 spheroid at order `p` against an adaptive-quadrature oracle.
pub fn near_eval_study(p: usize) -> AppResult<CaseReport> {
    let mut rep = CaseReport::new("near-eval");
    let setup = near_setup(p)?;
    let sqrt = NearParams::default();
    let uniform = NearParams {
        spacing: Spacing::Uniform,
        ..sqrt
    };
    let h = SourceSurface::new(&setup.shape, sqrt)?.h;
    let ratios = [0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
    let params: Vec<(f64, f64)> = (0..10)
        .map(|i| {
            let t = 0.15 + 2.8 * (i as f64 + 0.5) / 10.0;
            (t, 1.3 + 2.1 * i as f64)
        })
        .collect();
    let mut targets = Vec::new();
    for r in ratios {
        for &(t, f) in &params {
            let x = setup.shape.eval(t, f, 0);
            let x = [x[0].f, x[1].f, x[2].f];
            let n = quadrature::normal_at(&setup.shape, t, f);
            targets.push(vec3::axpy(x, r * h, n));
            targets.push(vec3::axpy(x, -r * h, n));
        }
    }
    let v_sqrt = near_values(&setup, sqrt, &targets)?;
    let v_unif = near_values(&setup, uniform, &targets)?;
    let v_ref: Vec<Vec3> = targets.iter().map(|x| spheroid_single_layer(2.0, study_density, *x)).collect();
    let scale = v_ref.iter().map(|v| vec3::norm(*v)).fold(0.0, f64::max);
    let per = 2 * params.len();
    rep.line(format!("p = {p}, h = {h:.4e}, L = 8, U = 4; errors relative to max |u_ref| of the adaptive oracle"));
    rep.line(format!("{:>6} {:>14} {:>14}", "r/h", "D_l = h sqrt(l)", "D_l = h l"));
    let (mut es_max, mut eu_max) = (0.0f64, 0.0f64);
    for (k, r) in ratios.iter().enumerate() {
        let range = k * per..(k + 1) * per;
        let err = |v: &[Vec3]| {
            range
                .clone()
                .map(|i| vec3::norm(vec3::sub(v[i], v_ref[i])) / scale)
                .fold(0.0, f64::max)
        };
        let (es, eu) = (err(&v_sqrt), err(&v_unif));
        es_max = es_max.max(es);
        eu_max = eu_max.max(eu);
        rep.line(format!("{r:>6.2} {es:>14.3e} {eu:>14.3e}"));
    }
    rep.check("sqrt spacing error over (0, h] <= 1e-6", es_max, es_max <= 1e-6);
    let gain = eu_max / es_max.max(f64::MIN_POSITIVE);
    rep.check("uniform / sqrt max error >= 10", gain, gain >= 10.0);
    Ok(rep)
}

/// Surface `ρ = 0.7 + 0.3 exp(−3 Re Y_3^2)` carrying `Γ = 2 + x`.
pub fn preconditioner_surface(p: usize) -> AppResult<SurfaceShape> {
    Ok(SurfaceShape::from_fn(p, |t, f| {
        let y32 = (105.0 / (32.0 * PI)).sqrt() * t.sin().powi(2) * t.cos() * (2.0 * f).cos();
        vec3::scale(vec3::spherical(t, f), 0.7 + 0.3 * (-3.0 * y32).exp())
    })?)
}

/// Diffusion coefficient `c` of the stage operator `I − cΔ` used for the threshold checks.
pub const PRECONDITIONER_C: f64 = 1.0;

/// Stage-solve GMRES iterations with and without the Laplace–Beltrami preconditioner.
pub fn preconditioner(orders: &[usize]) -> AppResult<CaseReport> {
    let mut rep = CaseReport::new("preconditioner");
    let cs = [0.01, 0.1, PRECONDITIONER_C, 10.0, 100.0];
    rep.line(format!(
        "iterations preconditioned/unpreconditioned, GMRES tol {:.0e}",
        surfactant::STAGE_TOL
    ));
    rep.line(format!(
        "{:>4} {}",
        "p",
        cs.iter().map(|c| format!("{:>12}", format!("c={c}"))).collect::<String>()
    ));
    let mut pre_counts = Vec::new();
    let mut worst_ratio = 0.0f64;
    for &p in orders {
        let s = preconditioner_surface(p)?;
        let geo = surface::geometry(&s, 2)?;
        let vals: Vec<f64> = s.positions(p).iter().map(|x| 2.0 + x[0]).collect();
        let b = sphgrid::forward_transform(&GridField { p, values: vals })?;
        let mut row = format!("{p:>4}");
        for &c in &cs {
            let pre = surfactant::implicit_solve(&geo, &b, c, true)?.iterations;
            let raw = surfactant::implicit_solve(&geo, &b, c, false)?.iterations;
            row.push_str(&format!("{:>12}", format!("{pre}/{raw}")));
            if c == PRECONDITIONER_C {
                pre_counts.push(pre);
                worst_ratio = worst_ratio.max(pre as f64 / raw.max(1) as f64);
            }
        }
        rep.line(row);
    }
    rep.check(format!("preconditioned <= 0.25 unpreconditioned at c = {PRECONDITIONER_C}"), worst_ratio, worst_ratio <= 0.25);
    let spread = (pre_counts.iter().max().unwrap_or(&0) - pre_counts.iter().min().unwrap_or(&0)) as f64;
    rep.check("preconditioned counts vary by <= 2 across p", spread, spread <= 2.0);
    Ok(rep)
}

fn prescribed_evolver<F: Fn(Vec3, f64) -> Vec3>(
    shape: SurfaceShape,
    gamma: CoeffField,
    pe: f64,
    dt: f64,
    field: F,
) -> AppResult<Evolver<PrescribedVelocity<F>>> {
    let mut drop = Drop::new(shape, 1.0, EosParams::clean())?;
    drop.gamma = gamma;
    let sys = DropSystem {
        drops: vec![drop],
        far_field: FarField::Quiescent,
        ca: 1.0,
        pe,
        params: StokesParams::default(),
    };
    let cfg = EvolveConfig {
        scheme: Scheme::Midpoint,
        controller: StepController {
            fixed_dt: Some(dt),
            ..StepController::default()
        },
        reparam: ReparamMode::Off,
        ..EvolveConfig::default()
    };
    Ok(Evolver::new(sys, PrescribedVelocity { field }, cfg)?)
}

fn uniform_gamma(p: usize, v: f64) -> CoeffField {
    let mut c = CoeffField::zeros(p);
    c.set(0, 0, Complex64::new(v * (4.0 * PI).sqrt(), 0.0));
    c
}

/// Pure diffusion on the resting unit sphere: each mode decays as `e^{−n(n+1)t/Pe}`.
pub fn diffusion(p: usize) -> AppResult<CaseReport> {
    let mut rep = CaseReport::new("diffusion");
    let (pe, t_end, dt) = (10.0, 1.0, 1e-3);
    let mut g0 = uniform_gamma(p, 1.0);
    let modes: Vec<(usize, i64)> = (1..=p.min(4)).map(|n| (n, (n as i64) / 2)).collect();
    for &(n, m) in &modes {
        g0.set_real(n, m, Complex64::new(0.1, if m == 0 { 0.0 } else { 0.05 }));
    }
    let s = SurfaceShape::sphere(p, 1.0, [0.0; 3])?;
    let mut ev = prescribed_evolver(s, g0.clone(), pe, dt, |_x, _t| [0.0; 3])?;
    let mut worst = 0.0f64;
    let mut rows = Vec::new();
    let mut next = 0.25;
    ev.run(t_end, |r, sys| {
        let g = &sys.drops[0].gamma;
        let mut line = format!("t = {:5.3}", r.t);
        for &(n, m) in &modes {
            let ratio = g.get(n, m).re / g0.get(n, m).re;
            let exact = (-((n * (n + 1)) as f64) * r.t / pe).exp();
            worst = worst.max((ratio - exact).abs());
            line.push_str(&format!("  n={n}: {ratio:.9} vs {exact:.9}"));
        }
        if r.t >= next - 1e-9 {
            rows.push(line);
            next += 0.25;
        }
        Ok(())
    })?;
    for r in rows {
        rep.line(r);
    }
    let mean_drift = ((ev.sys.drops[0].gamma.get(0, 0) - g0.get(0, 0)).norm()) / g0.get(0, 0).norm();
    rep.check("per-mode decay within 1e-6 of exp(-n(n+1)t/Pe)", worst, worst <= 1e-6);
    rep.check("mean concentration conserved to 1e-12", mean_drift, mean_drift <= 1e-12);
    Ok(rep)
}

/// Sphere expanding as `R = e^{at}`: the product `Γ R²` stays at `Γ(0)`.
pub fn stretch_sphere(p: usize) -> AppResult<CaseReport> {
    let mut rep = CaseReport::new("stretch-sphere");
    let (a, t_end, dt) = (0.25, 1.0, 2e-4);
    let s = SurfaceShape::sphere(p, 1.0, [0.0; 3])?;
    let g0 = 1.5;
    let mut ev = prescribed_evolver(s, uniform_gamma(p, g0), f64::INFINITY, dt, move |x, _t| vec3::scale(x, a))?;
    let grid = sphgrid::build_grid(p)?;
    let mut worst = 0.0f64;
    let mut radius_err = 0.0f64;
    let mut rows = Vec::new();
    let mut next = 0.2;
    ev.run(t_end, |r, sys| {
        let d = &sys.drops[0];
        let (_, vol) = surface::area_volume(&d.shape)?;
        let radius = (3.0 * vol / (4.0 * PI)).cbrt();
        let vals = grid.synth_real(&d.gamma, Deriv::Value).values;
        let dev = vals.iter().map(|g| (g * radius * radius - g0).abs()).fold(0.0, f64::max);
        worst = worst.max(dev);
        radius_err = radius_err.max((radius - (a * r.t).exp()).abs());
        if r.t >= next - 1e-9 {
            rows.push(format!("t = {:4.2}  R = {radius:.10}  max|Γ R² − Γ(0)| = {dev:.3e}", r.t));
            next += 0.2;
        }
        Ok(())
    })?;
    for r in rows {
        rep.line(r);
    }
    rep.check("max_t |Γ R² − Γ(0)| < 1e-8", worst, worst < 1e-8);
    rep.check("radius follows e^{at} to 1e-8", radius_err, radius_err < 1e-8);
    Ok(rep)
}

/// Rigidly rotating sphere: material nodes keep their concentration.
pub fn rotate_sphere(p: usize) -> AppResult<CaseReport> {
    let mut rep = CaseReport::new("rotate-sphere");
    let omega = [0.3, -0.2, 1.0];
    let s = SurfaceShape::sphere(p, 1.0, [0.0; 3])?;
    let mut worst = 0.0f64;
    for (label, gamma) in [
        ("uniform Γ", uniform_gamma(p, 1.0)),
        ("Γ = 1 + 0.3x + 0.2z", {
            let vals: Vec<f64> = s.positions(p).iter().map(|x| 1.0 + 0.3 * x[0] + 0.2 * x[2]).collect();
            sphgrid::forward_transform(&GridField { p, values: vals })?
        }),
    ] {
        let mut ev = prescribed_evolver(s.clone(), gamma.clone(), f64::INFINITY, 0.01, move |x, _t| vec3::cross(omega, x))?;
        let mut dev = 0.0f64;
        ev.run(2.0, |_r, sys| {
            dev = dev.max(sys.drops[0].gamma.axpy(-1.0, &gamma).max_abs());
            Ok(())
        })?;
        let (_, vol) = surface::area_volume(&ev.sys.drops[0].shape)?;
        rep.line(format!("{label}: max coefficient change {dev:.3e}, volume {vol:.12}"));
        worst = worst.max(dev);
    }
    rep.check("Γ constant to 1e-10", worst, worst <= 1e-10);
    Ok(rep)
}

/// A steady single-drop run: deformation and reparameterization energy histories.
#[derive(Debug, Clone)]
pub struct SteadyRun {
    pub times: Vec<f64>,
    pub deformation: Vec<f64>,
    pub energy: Vec<f64>,
    pub max_step_error: f64,
    pub stokes_evaluations: usize,
    pub final_state: DropSystem,
}

/// Runs `cfg` until `t_max` or until `|ΔD|/Δt` over a unit window drops below `rate`.
pub fn steady_run(cfg: &SimulationConfig, rate: f64) -> AppResult<SteadyRun> {
    let mut ev = runner::build_evolver(cfg)?;
    let plane = FlowPlane::default();
    let pc = cfg.reparam.p_cutoff;
    let mut out = SteadyRun {
        times: vec![0.0],
        deformation: vec![diagnostics::deformation_number(&ev.sys.drops[0].shape, &plane)?],
        energy: vec![shape_energy(&ev.sys.drops[0].shape, pc)],
        max_step_error: 0.0,
        stokes_evaluations: 0,
        final_state: ev.sys.clone(),
    };
    let eps = 1e-12 * cfg.t_max.max(1.0);
    while ev.t < cfg.t_max - eps {
        let r = ev.step(cfg.t_max - ev.t)?;
        if !r.accepted {
            continue;
        }
        out.max_step_error = out.max_step_error.max(r.err_drop.max(r.err_surfactant));
        let s = &ev.sys.drops[0].shape;
        let d = diagnostics::deformation_number(s, &plane)?;
        out.times.push(ev.t);
        out.deformation.push(d);
        out.energy.push(shape_energy(s, pc));
        log::info!("t = {:.3} dt = {:.3e} D = {d:.5}", ev.t, r.dt);
        let back = out.times.iter().rposition(|t| *t <= ev.t - 1.0);
        if let Some(i) = back {
            let rate_now = (d - out.deformation[i]).abs() / (ev.t - out.times[i]);
            if ev.t > 2.0 && rate_now < rate {
                break;
            }
        }
    }
    out.stokes_evaluations = ev.stats.stokes_evaluations;
    out.final_state = ev.sys;
    Ok(out)
}

fn shape_energy(s: &SurfaceShape, p_cutoff: f64) -> f64 {
    let cut = reparam::adaptive_cutoff(s, p_cutoff).n_cutoff;
    reparam::energy(s, cut, ReparamConfig::default().filter)
}

/// Single unit sphere at the origin.
fn single_drop_config(p: usize, flow: FarField, ca: f64, lambda: f64) -> SimulationConfig {
    SimulationConfig {
        p,
        flow,
        ca,
        drops: vec![DropSpec {
            lambda,
            ..DropSpec::default()
        }],
        ..SimulationConfig::default()
    }
}

/// Four-roll mill steady state of a clean drop.
pub fn four_roll(p: usize) -> AppResult<CaseReport> {
    let mut rep = CaseReport::new("four-roll");
    let mut cfg = single_drop_config(p, FarField::FourRoll { alpha: 0.6 }, 0.0718, 0.118);
    cfg.t_max = 30.0;
    let run = steady_run(&cfg, 2e-4)?;
    let d = *run.deformation.last().unwrap_or(&f64::NAN);
    let t_end = *run.times.last().unwrap_or(&0.0);
    history_table(&mut rep, &run);
    let (lo, hi) = quarter_range(&run.times, &run.energy);
    let variation = (hi - lo) / hi.max(f64::MIN_POSITIVE);
    rep.line(format!("t_end = {t_end:.2}, Stokes evaluations {}", run.stokes_evaluations));
    rep.check("D = 0.117 ± 0.005", d, (d - 0.117).abs() <= 0.005);
    rep.check("reparam energy varies < 5% over the final quarter", variation, variation < 0.05);
    Ok(rep)
}

fn quarter_range(times: &[f64], v: &[f64]) -> (f64, f64) {
    let t_end = *times.last().unwrap_or(&0.0);
    let from = 0.75 * t_end;
    times
        .iter()
        .zip(v)
        .filter(|(t, _)| **t >= from)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, x)| (lo.min(*x), hi.max(*x)))
}

fn history_table(rep: &mut CaseReport, run: &SteadyRun) {
    rep.line(format!("{:>8} {:>10} {:>12}", "t", "D", "energy"));
    let mut next = 0.0;
    for ((t, d), e) in run.times.iter().zip(&run.deformation).zip(&run.energy) {
        if *t >= next - 1e-9 || Some(t) == run.times.last() {
            rep.line(format!("{t:>8.3} {d:>10.5} {e:>12.4e}"));
            next = t + 1.0;
        }
    }
}

/// Extensional-flow configuration, clean or covered with surfactant.
pub fn extension_config(p: usize, surfactant: bool) -> SimulationConfig {
    let mut cfg = single_drop_config(p, FarField::Extension, 0.1, 0.093);
    cfg.pe = 11.8;
    if surfactant {
        cfg.elasticity = 0.35;
        cfg.coverage = 0.36;
    }
    cfg.t_max = 40.0;
    cfg
}

/// Steady deformation in planar extension.
pub fn extension(p: usize, surfactant: bool) -> AppResult<CaseReport> {
    let name = if surfactant { "extension-surfactant" } else { "extension-clean" };
    let mut rep = CaseReport::new(name);
    let run = steady_run(&extension_config(p, surfactant), 2e-4)?;
    history_table(&mut rep, &run);
    let d = *run.deformation.last().unwrap_or(&f64::NAN);
    let target = if surfactant { 0.30 } else { 0.21 };
    rep.check(format!("D = {target:.2} ± 0.01"), d, (d - target).abs() <= 0.01);
    Ok(rep)
}

fn coeff_l2(c: &CoeffField) -> f64 {
    (0..=c.p).map(|n| c.degree_energy(n).powi(2)).sum::<f64>().sqrt()
}

/// Relative L2 coefficient errors of shape and surfactant against a reference state.
pub fn state_error(a: &Drop, reference: &Drop) -> (f64, f64) {
    let pr = reference.p();
    let mut num = 0.0;
    let mut den = 0.0;
    for c in 0..3 {
        let diff = a.shape.coeffs[c].resample(pr).axpy(-1.0, &reference.shape.coeffs[c]);
        num += coeff_l2(&diff).powi(2);
        den += coeff_l2(&reference.shape.coeffs[c]).powi(2);
    }
    let g = a.gamma.resample(pr).axpy(-1.0, &reference.gamma);
    ((num / den).sqrt(), coeff_l2(&g) / coeff_l2(&reference.gamma))
}

/// Spectral convergence of the steady surfactant-covered extension state.
pub fn convergence(orders: &[usize], p_ref: usize) -> AppResult<CaseReport> {
    let mut rep = CaseReport::new("convergence");
    // a common horizon so every order reports the same physical state
    let horizon = 30.0;
    let run_at = |p: usize| -> AppResult<DropSystem> {
        let mut cfg = extension_config(p, true);
        cfg.t_max = horizon;
        Ok(steady_run(&cfg, 0.0)?.final_state)
    };
    let reference = run_at(p_ref)?;
    rep.line(format!("reference p = {p_ref} at t = {horizon}"));
    rep.line(format!("{:>4} {:>12} {:>12}", "p", "shape", "surfactant"));
    let mut errs = Vec::new();
    for &p in orders {
        let sys = run_at(p)?;
        let (es, eg) = state_error(&sys.drops[0], &reference.drops[0]);
        rep.line(format!("{p:>4} {es:>12.3e} {eg:>12.3e}"));
        errs.push(es.max(eg));
    }
    let monotone = errs.windows(2).all(|w| w[1] < w[0]);
    rep.check("errors decrease monotonically", if monotone { 1.0 } else { 0.0 }, monotone);
    let n = orders.len();
    let rate = (errs[n - 2] / errs[n - 1]).ln() / (orders[n - 1] as f64 / orders[n - 2] as f64).ln();
    rep.check("algebraic rate over the last pair > 4", rate, rate > 4.0);
    Ok(rep)
}

/// Angle vs point reparameterization on the distorted 1:2 spheroid.
pub fn reparam_study(p: usize) -> AppResult<CaseReport> {
    let mut rep = CaseReport::new("reparam");
    let base = SurfaceShape::ellipsoid(p, [1.0, 1.0, 2.0], [0.0; 3])?;
    let (d, _) = reparam::distort_grid(&base, 0.01, 3.0, 60)?;
    let analytic = |x: Vec3| 2.0 - 0.5 * x[0] + x[1] + 0.5 * x[2];
    let gvals: Vec<f64> = d.positions(p).iter().map(|x| analytic(*x)).collect();
    let g = sphgrid::forward_transform(&GridField { p, values: gvals })?;
    let (a0, v0) = surface::area_volume(&d)?;
    let grid = sphgrid::build_grid(p)?;
    let dtaus = [0.1, 0.3, 1.0, 3.0, 10.0];
    rep.line(format!("p = {p}, U_rep = 2; relative changes of area and volume"));
    rep.line(format!("{:>6} {:>11} {:>11} {:>11} {:>11}", "dτ", "angle dA", "angle dV", "point dA", "point dV"));
    let mut angle_err = Vec::new();
    let mut point_err = Vec::new();
    let mut gamma_err = 0.0f64;
    for &dtau in &dtaus {
        let cfg = ReparamConfig {
            u_rep: 2,
            dtau,
            ..ReparamConfig::default()
        };
        let ang = reparam::angle_reparam(&d, &g, &cfg)?;
        let pt = reparam::point_reparam(&d, &g, &cfg)?;
        let rel = |s: &SurfaceShape| -> AppResult<(f64, f64)> {
            let (a, v) = surface::area_volume(s)?;
            Ok((((a - a0) / a0).abs(), ((v - v0) / v0).abs()))
        };
        let (aa, av) = rel(&ang.shape)?;
        let (pa, pv) = match rel(&pt.shape) {
            Ok(x) if x.0.is_finite() && x.1.is_finite() => x,
            _ => (f64::INFINITY, f64::INFINITY),
        };
        rep.line(format!("{dtau:>6} {aa:>11.3e} {av:>11.3e} {pa:>11.3e} {pv:>11.3e}"));
        angle_err.push(aa.max(av));
        point_err.push(pa.max(pv));
        let gnew = grid.synth_real(&ang.gamma, Deriv::Value).values;
        for (x, v) in ang.shape.positions(p).iter().zip(&gnew) {
            gamma_err = gamma_err.max((analytic(*x) - v).abs());
        }
    }
    let amax = angle_err.iter().cloned().fold(0.0, f64::max);
    let amin = angle_err.iter().cloned().fold(f64::INFINITY, f64::min);
    rep.check("angle error spread over dτ < 2x", amax / amin, amax / amin < 2.0);
    rep.check("angle area/volume error <= 1e-10", amax, amax <= 1e-10);
    let growing = point_err.windows(2).all(|w| w[1] > w[0]);
    rep.check("point error grows with dτ", if growing { 1.0 } else { 0.0 }, growing);
    rep.check("post-reparam pointwise Γ error < 1e-13", gamma_err, gamma_err < 1e-13);
    Ok(rep)
}

/// Two drops approaching in shear: configuration used by the two-drop case.
pub fn two_drop_config(p: usize, t_end: f64) -> SimulationConfig {
    let drop = |x: f64, y: f64| DropSpec {
        shape: ShapeSpec::Sphere { radius: 1.0 },
        center: [x, y, 0.0],
        lambda: 2.0,
        gamma: GammaSpec::Linear([1.0, 0.0, 0.0, 0.0]),
    };
    SimulationConfig {
        p,
        flow: FarField::Shear,
        ca: 0.2,
        pe: 200.0,
        elasticity: 0.5,
        coverage: 0.6,
        drops: vec![drop(-1.5, 0.5), drop(1.5, -0.5)],
        t_max: t_end,
        ..SimulationConfig::default()
    }
}

/// Conservation and minimum gap for two surfactant-covered drops in shear.
pub fn two_drop(p: usize, t_end: f64) -> AppResult<CaseReport> {
    let mut rep = CaseReport::new("two-drop");
    let cfg = two_drop_config(p, t_end);
    let dir = std::env::temp_dir().join(format!("dropsim-two-drop-{}", std::process::id()));
    let summary = runner::simulate(&cfg, &dir)?;
    let _ = std::fs::remove_dir_all(&dir);
    let gap = summary.min_gap.unwrap_or(f64::NAN);
    rep.line(format!(
        "t_end = {:.2}, accepted {}, rejected {}, Stokes evaluations {}",
        summary.t, summary.stats.accepted, summary.stats.rejected, summary.stats.stokes_evaluations
    ));
    rep.check("volume error < 0.2%", summary.volume_error(), summary.volume_error() < 2e-3);
    rep.check("surfactant mass error < 0.3%", summary.mass_error(), summary.mass_error() < 3e-3);
    rep.check("minimum gap in [0.10, 0.25]", gap, (0.10..=0.25).contains(&gap));
    let done = (summary.t - t_end).abs() < 1e-9;
    rep.check("run completes", summary.t, done);
    Ok(rep)
}

/// Shear-flow spheroid with `Γ = 1 + x` used by the time-stepping studies.
pub fn time_study_config(p: usize) -> SimulationConfig {
    SimulationConfig {
        p,
        flow: FarField::Shear,
        ca: 0.2,
        pe: 10.0,
        elasticity: 0.2,
        coverage: 0.3,
        drops: vec![DropSpec {
            shape: ShapeSpec::Ellipsoid { axes: [1.0, 1.0, 2.0] },
            center: [0.0; 3],
            lambda: 1.0,
            gamma: GammaSpec::Linear([1.0, 1.0, 0.0, 0.0]),
        }],
        tol_stokes: 1e-12,
        ..SimulationConfig::default()
    }
}

fn fixed_step_state(cfg: &SimulationConfig, dt: f64, t_end: f64) -> AppResult<Drop> {
    let mut c = cfg.clone();
    c.fixed_dt = Some(dt);
    c.dt_max = dt;
    c.reparam_kind = crate::config::ReparamKind::Off;
    c.t_max = t_end;
    let mut ev = runner::build_evolver(&c)?;
    ev.run(t_end, |_, _| Ok(()))?;
    Ok(ev.sys.drops[0].clone())
}

/// Reference step of the order study.
pub const ORDER_REFERENCE_DT: f64 = 1e-5;

/// Observed order of the coupled midpoint/IMEX2 scheme and adaptive error control.
pub fn time_order(p: usize) -> AppResult<CaseReport> {
    let mut rep = CaseReport::new("time-order");
    let cfg = time_study_config(p);
    let t_end = 0.02;
    let reference = fixed_step_state(&cfg, ORDER_REFERENCE_DT, t_end)?;
    rep.line(format!("p = {p}, T = {t_end}, reference dt = {ORDER_REFERENCE_DT:e}"));
    rep.line(format!("{:>10} {:>12} {:>12} {:>8}", "dt", "shape", "surfactant", "order"));
    let dts = [t_end / 2.0, t_end / 4.0, t_end / 8.0, t_end / 16.0];
    let mut errs = Vec::new();
    for &dt in &dts {
        let d = fixed_step_state(&cfg, dt, t_end)?;
        let (es, eg) = state_error(&d, &reference);
        let e = es.max(eg);
        let order = errs.last().map(|prev: &f64| (prev / e).log2());
        rep.line(format!(
            "{dt:>10.3e} {es:>12.3e} {eg:>12.3e} {:>8}",
            order.map_or(String::new(), |o| format!("{o:.3}"))
        ));
        errs.push(e);
    }
    // least-squares slope of log error against log dt
    let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    rep.check("observed order 2.0 ± 0.2", slope, (slope - 2.0).abs() <= 0.2);
    let mut worst = 0.0f64;
    for tol in [1e-3, 1e-4] {
        let mut c = cfg.clone();
        c.tol = tol;
        c.t_max = 0.5;
        c.tol_stokes = 1e-10;
        let mut ev = runner::build_evolver(&c)?;
        let mut peak = 0.0f64;
        ev.run(c.t_max, |r, _| {
            peak = peak.max(r.err_drop.max(r.err_surfactant) / tol);
            Ok(())
        })?;
        rep.line(format!(
            "adaptive tol {tol:.0e}: accepted {}, rejected {}, max error / tol {peak:.3}",
            ev.stats.accepted, ev.stats.rejected
        ));
        worst = worst.max(peak);
    }
    rep.check("adaptive steps keep max error / tol < 1", worst, worst < 1.0);
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Uniform force density on the unit sphere: the translating-sphere field.
    fn sphere_exact(x: Vec3, e: Vec3) -> Vec3 {
        let r = vec3::norm(x);
        if r < 1.0 {
            return vec3::scale(e, 16.0 * PI / 3.0);
        }
        let xe = vec3::dot(x, e);
        let a = 0.75 / r + 0.25 / r.powi(3);
        let b = 0.75 / r.powi(3) - 0.75 / r.powi(5);
        vec3::scale(vec3::axpy(vec3::scale(e, a), b * xe, x), 16.0 * PI / 3.0)
    }

    #[test]
    fn oracle_matches_translating_sphere_at_any_distance() {
        let e = [0.3, -0.5, 0.8];
        for d in [1e-4, 1e-3, 0.05, 0.5] {
            for dir in spiral_directions(5) {
                for x in [vec3::scale(dir, 1.0 + d), vec3::scale(dir, 1.0 - d)] {
                    let v = spheroid_single_layer(1.0, |_| e, x);
                    let err = vec3::norm(vec3::sub(v, sphere_exact(x, e)));
                    assert!(err < 1e-11, "d = {d}: {err:e}");
                }
            }
        }
    }

    #[test]
    fn oracle_agrees_with_plain_quadrature_away_from_spheroid() {
        let x0 = [1.7, -0.4, 1.1];
        let v = spheroid_single_layer(2.0, study_density, x0);
        let s = SurfaceShape::ellipsoid(40, [1.0, 1.0, 2.0], [0.0; 3]).unwrap();
        let src = SourceSurface::new(&s, NearParams::default()).unwrap();
        let vals: Vec<Vec3> = s.positions(s.p).iter().map(|x| study_density(*x)).collect();
        let rho = quadrature::density_coeffs(&vals, s.p).unwrap();
        let w = src.fine.eval(Kernel::Single, x0, &quadrature::density_on_grid(&rho, src.fine.q));
        assert!(vec3::norm(vec3::sub(v, w)) < 1e-10 * vec3::norm(w));
    }

    #[test]
    fn reports_fail_without_checks() {
        let mut r = CaseReport::new("x");
        assert!(!r.passed());
        r.check("a", 1.0, true);
        assert!(r.passed());
        r.check("b", 2.0, false);
        assert!(!r.passed());
        assert_eq!(r.value("b"), Some(2.0));
        assert!(r.to_string().ends_with("x: FAIL"));
    }

    #[test]
    fn unknown_case_is_an_error() {
        assert!(matches!(run_case("nope", None), Err(AppError::UnknownCase(_))));
    }
}
