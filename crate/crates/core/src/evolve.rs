//! Coupled drop/surfactant time stepping with adaptive step control.
//!
//! Every scheme shares the stages `t` and `t + dt/2` with the second-order IMEX
//! surfactant update. Nodes move with the full fluid velocity, so the surfactant
//! transport uses the material form of the explicit terms.

use crate::error::{Error, Result};
use crate::quadrature;
use crate::reparam::{self, ReparamConfig};
use crate::sphgrid::CoeffField;
use crate::stokes::{self, DropSystem, Prepared};
use crate::surface::{self, GeometryCache, SurfaceShape};
use crate::surfactant;
use crate::vec3::{self, Vec3};

/// Drop evolution scheme together with its embedded lower-order pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Midpoint,
    Rk23,
    Kutta3,
}

impl Scheme {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "midpoint" => Ok(Scheme::Midpoint),
            "rk23" => Ok(Scheme::Rk23),
            "kutta3" => Ok(Scheme::Kutta3),
            _ => Err(Error::InvalidParameter(format!("unknown scheme {s:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Midpoint => "midpoint",
            Scheme::Rk23 => "rk23",
            Scheme::Kutta3 => "kutta3",
        }
    }
}

/// Surfactant error estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Imex1,
    Conservation,
}

impl Estimator {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "imex1" => Ok(Estimator::Imex1),
            "conservation" => Ok(Estimator::Conservation),
            _ => Err(Error::InvalidParameter(format!("unknown estimator {s:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Imex1 => "imex1",
            Estimator::Conservation => "conservation",
        }
    }
}

/// Grid-quality maintenance applied after accepted steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReparamMode {
    Off,
    Angle(ReparamConfig),
    Point(ReparamConfig),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepController {
    pub tol: f64,
    pub dt: f64,
    pub dt_max: f64,
    pub dt_min: f64,
    pub safety: f64,
    pub estimator: Estimator,
    /// Constant step with unconditional acceptance.
    pub fixed_dt: Option<f64>,
}

impl Default for StepController {
    fn default() -> Self {
        StepController {
            tol: 1e-3,
            dt: 1e-3,
            dt_max: 0.1,
            dt_min: 1e-10,
            safety: 0.9,
            estimator: Estimator::Conservation,
            fixed_dt: None,
        }
    }
}

impl StepController {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tol > 0.0
            && self.dt > 0.0
            && self.dt_max > 0.0
            && self.dt_min > 0.0
            && self.safety > 0.0
            && self.fixed_dt.is_none_or(|d| d > 0.0);
        if !ok {
            return Err(Error::InvalidParameter(format!("step controller {self:?}")));
        }
        Ok(())
    }

    /// Accepts iff `err < tol`; the next step is `min(dt (s tol/err)^{1/2}, dt_max)`.
    pub fn adapt(&self, dt: f64, err_drop: f64, err_surf: f64) -> (bool, f64) {
        let err = err_drop.max(err_surf);
        let accept = err < self.tol;
        let dt_new = if err > 0.0 {
            dt * (self.safety * self.tol / err).sqrt()
        } else {
            f64::INFINITY
        };
        (accept, dt_new.min(self.dt_max))
    }
}

/// Source of drop-surface velocities.
pub trait VelocityModel {
    /// Velocity coefficients (order `p` of each drop) for the state in `sys` at time `t`.
    fn velocity(&mut self, sys: &DropSystem, t: f64) -> Result<Vec<[CoeffField; 3]>>;

    /// GMRES iterations of the most recent evaluation, if any.
    fn last_iterations(&self) -> usize {
        0
    }
}

/// Velocities from the boundary integral solve.
#[derive(Debug, Default)]
pub struct StokesModel {
    guess: Option<Vec<f64>>,
    last_iterations: usize,
}

impl StokesModel {
    /// Packed solution used as the next GMRES initial guess.
    pub fn warm_start(&self) -> Option<&[f64]> {
        self.guess.as_deref()
    }

    pub fn set_warm_start(&mut self, guess: Option<Vec<f64>>) {
        self.guess = guess;
    }
}

impl VelocityModel for StokesModel {
    fn velocity(&mut self, sys: &DropSystem, _t: f64) -> Result<Vec<[CoeffField; 3]>> {
        let prep = Prepared::new(sys)?;
        let guess = self.guess.as_deref().filter(|g| g.len() == prep.dim());
        let sol = stokes::solve_velocity_prepared(sys, &prep, guess)?;
        self.last_iterations = sol.iterations;
        self.guess = Some(sol.packed);
        Ok(sol.drops.into_iter().map(|d| d.coeffs).collect())
    }

    fn last_iterations(&self) -> usize {
        self.last_iterations
    }
}

/// A velocity field given as a function of position and time.
pub struct PrescribedVelocity<F: Fn(Vec3, f64) -> Vec3> {
    pub field: F,
}

impl<F: Fn(Vec3, f64) -> Vec3> VelocityModel for PrescribedVelocity<F> {
    fn velocity(&mut self, sys: &DropSystem, t: f64) -> Result<Vec<[CoeffField; 3]>> {
        sys.drops
            .iter()
            .map(|d| {
                let p = d.shape.p;
                let v: Vec<Vec3> = d.shape.positions(p).into_iter().map(|x| (self.field)(x, t)).collect();
                quadrature::density_coeffs(&v, p)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct EvolveConfig {
    pub scheme: Scheme,
    pub controller: StepController,
    pub reparam: ReparamMode,
    /// Upsampling of the geometry used by the surfactant terms.
    pub surf_upsample: usize,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        EvolveConfig {
            scheme: Scheme::Midpoint,
            controller: StepController::default(),
            reparam: ReparamMode::Angle(ReparamConfig::default()),
            surf_upsample: 2,
        }
    }
}

/// Outcome of one attempted step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Time at the end of the step if accepted, else the unchanged time.
    pub t: f64,
    pub dt: f64,
    pub accepted: bool,
    pub err_drop: f64,
    pub err_surfactant: f64,
    /// Step size proposed for the next attempt.
    pub dt_next: f64,
    pub stokes_evaluations: usize,
    pub gmres_iterations: usize,
    pub stage_iterations: usize,
    pub reparam_iterations: Vec<usize>,
}

/// Per-run counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunStats {
    pub accepted: usize,
    pub rejected: usize,
    pub stokes_evaluations: usize,
}

/// Drop positions and surfactant at one stage.
#[derive(Clone)]
struct Stage {
    shapes: Vec<SurfaceShape>,
    gammas: Vec<CoeffField>,
}

struct Proposal {
    stage: Stage,
    err_drop: f64,
    err_surf: f64,
    /// Velocity at the proposed state when the scheme already computed it.
    end_velocity: Option<Vec<[CoeffField; 3]>>,
    stage_iterations: usize,
}

pub struct Evolver<M: VelocityModel> {
    pub sys: DropSystem,
    pub model: M,
    pub cfg: EvolveConfig,
    pub t: f64,
    pub dt: f64,
    pub stats: RunStats,
    /// Velocity of the current state, valid until the state changes.
    cached: Option<Vec<[CoeffField; 3]>>,
    gmres_acc: usize,
}

fn shifted(s: &SurfaceShape, dt: f64, u: &[CoeffField; 3]) -> SurfaceShape {
    let coeffs = [
        s.coeffs[0].axpy(dt, &u[0]),
        s.coeffs[1].axpy(dt, &u[1]),
        s.coeffs[2].axpy(dt, &u[2]),
    ];
    SurfaceShape { p: s.p, coeffs }
}

/// `x + dt Σ b_i k_i` for every drop.
fn combine(base: &[SurfaceShape], dt: f64, ks: &[(&Vec<[CoeffField; 3]>, f64)]) -> Vec<SurfaceShape> {
    base.iter()
        .enumerate()
        .map(|(d, s)| {
            let mut out = s.clone();
            for (k, b) in ks {
                out = shifted(&out, dt * b, &k[d]);
            }
            out
        })
        .collect()
}

/// Relative ∞-norm of the node difference, maximized over drops.
fn rel_position_error(a: &[SurfaceShape], b: &[SurfaceShape]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let p = x.p;
            let (px, py) = (x.positions(p), y.positions(p));
            let big = px.iter().map(|v| vec3::norm(*v)).fold(0.0, f64::max);
            let diff = px.iter().zip(&py).map(|(u, v)| vec3::norm(vec3::sub(*u, *v))).fold(0.0, f64::max);
            diff / big.max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max)
}

impl<M: VelocityModel> Evolver<M> {
    pub fn new(sys: DropSystem, model: M, cfg: EvolveConfig) -> Result<Self> {
        cfg.controller.validate()?;
        if let ReparamMode::Angle(r) | ReparamMode::Point(r) = &cfg.reparam {
            r.validate()?;
        }
        let dt = cfg.controller.fixed_dt.unwrap_or(cfg.controller.dt).min(cfg.controller.dt_max);
        Ok(Evolver {
            sys,
            model,
            cfg,
            t: 0.0,
            dt,
            stats: RunStats::default(),
            cached: None,
            gmres_acc: 0,
        })
    }

    fn current(&self) -> Stage {
        Stage {
            shapes: self.sys.drops.iter().map(|d| d.shape.clone()).collect(),
            gammas: self.sys.drops.iter().map(|d| d.gamma.clone()).collect(),
        }
    }

    fn install(&mut self, st: &Stage) {
        for (d, (s, g)) in self.sys.drops.iter_mut().zip(st.shapes.iter().zip(&st.gammas)) {
            d.shape = s.clone();
            d.gamma = g.clone();
        }
    }

    /// Velocity of `st` at time `t`; the system keeps the state of `base` afterwards.
    fn velocity_at(&mut self, st: &Stage, base: &Stage, t: f64) -> Result<Vec<[CoeffField; 3]>> {
        self.install(st);
        let out = self.model.velocity(&self.sys, t);
        self.install(base);
        self.stats.stokes_evaluations += 1;
        self.gmres_acc += self.model.last_iterations();
        out
    }

    fn geometries(&self, shapes: &[SurfaceShape]) -> Result<Vec<GeometryCache>> {
        shapes.iter().map(|s| surface::geometry(s, self.cfg.surf_upsample)).collect()
    }

    fn pe(&self) -> f64 {
        self.sys.pe
    }

    /// Material explicit terms for every drop.
    fn explicit_terms(geos: &[GeometryCache], gammas: &[CoeffField], u: &[[CoeffField; 3]]) -> Result<Vec<CoeffField>> {
        geos.iter()
            .zip(gammas)
            .zip(u)
            .map(|((g, gm), ui)| surfactant::rhs_material(g, gm, ui, gm.p))
            .collect()
    }

    fn propose(&mut self, dt: f64) -> Result<Proposal> {
        let base = self.current();
        let t = self.t;
        let pe = self.pe();
        let k1 = match self.cached.clone() {
            Some(u) => u,
            None => {
                let u = self.velocity_at(&base, &base, t)?;
                self.cached = Some(u.clone());
                u
            }
        };
        let mut stage_iterations = 0;
        let geo0 = self.geometries(&base.shapes)?;
        let fe0 = Self::explicit_terms(&geo0, &base.gammas, &k1)?;

        // stage t + dt/2
        let half_shapes = combine(&base.shapes, dt, &[(&k1, 0.5)]);
        let geo_half = self.geometries(&half_shapes)?;
        let mut half_gammas = Vec::with_capacity(base.gammas.len());
        for d in 0..base.gammas.len() {
            let s = surfactant::imex_half_step(&geo_half[d], &base.gammas[d], &fe0[d], dt, pe)?;
            stage_iterations += s.iterations;
            half_gammas.push(s.gamma);
        }
        let half = Stage {
            shapes: half_shapes,
            gammas: half_gammas,
        };
        let k2 = self.velocity_at(&half, &base, t + 0.5 * dt)?;
        let fe_half = Self::explicit_terms(&geo_half, &half.gammas, &k2)?;
        let new_gammas: Vec<CoeffField> = (0..base.gammas.len())
            .map(|d| {
                let fi = surfactant::rhs_implicit(&geo_half[d], &half.gammas[d], pe, base.gammas[d].p)?;
                Ok(surfactant::imex_full_step(&base.gammas[d], &fe_half[d], &fi, dt))
            })
            .collect::<Result<_>>()?;

        let (new_shapes, low_shapes, end_velocity) = match self.cfg.scheme {
            Scheme::Midpoint => (
                combine(&base.shapes, dt, &[(&k2, 1.0)]),
                combine(&base.shapes, dt, &[(&k1, 1.0)]),
                None,
            ),
            Scheme::Kutta3 => {
                let s3 = Stage {
                    shapes: combine(&base.shapes, dt, &[(&k1, -1.0), (&k2, 2.0)]),
                    gammas: new_gammas.clone(),
                };
                let k3 = self.velocity_at(&s3, &base, t + dt)?;
                (
                    combine(&base.shapes, dt, &[(&k1, 1.0 / 6.0), (&k2, 4.0 / 6.0), (&k3, 1.0 / 6.0)]),
                    combine(&base.shapes, dt, &[(&k2, 1.0)]),
                    None,
                )
            }
            Scheme::Rk23 => {
                // surfactant at t + 3dt/4 from a first-order IMEX substep of length dt/4
                let s3_shapes = combine(&base.shapes, dt, &[(&k2, 0.75)]);
                let geo3 = self.geometries(&s3_shapes)?;
                let mut g3 = Vec::with_capacity(base.gammas.len());
                for d in 0..base.gammas.len() {
                    let s = surfactant::imex1_step(&geo3[d], &half.gammas[d], &fe_half[d], 0.25 * dt, pe)?;
                    stage_iterations += s.iterations;
                    g3.push(s.gamma);
                }
                let s3 = Stage {
                    shapes: s3_shapes,
                    gammas: g3,
                };
                let k3 = self.velocity_at(&s3, &base, t + 0.75 * dt)?;
                let x_new = combine(&base.shapes, dt, &[(&k1, 2.0 / 9.0), (&k2, 1.0 / 3.0), (&k3, 4.0 / 9.0)]);
                let s4 = Stage {
                    shapes: x_new.clone(),
                    gammas: new_gammas.clone(),
                };
                let k4 = self.velocity_at(&s4, &base, t + dt)?;
                let low = combine(
                    &base.shapes,
                    dt,
                    &[(&k1, 7.0 / 24.0), (&k2, 0.25), (&k3, 1.0 / 3.0), (&k4, 0.125)],
                );
                (x_new, low, Some(k4))
            }
        };
        let err_drop = rel_position_error(&new_shapes, &low_shapes);

        let geo_new = self.geometries(&new_shapes)?;
        let mut err_surf = 0.0f64;
        for d in 0..base.gammas.len() {
            let e = match self.cfg.controller.estimator {
                Estimator::Imex1 => {
                    let s = surfactant::imex1_step(&geo_new[d], &base.gammas[d], &fe0[d], dt, pe)?;
                    stage_iterations += s.iterations;
                    surfactant::err_imex1(&new_gammas[d], &s.gamma, geo_new[d].q)?
                }
                Estimator::Conservation => surfactant::err_conservation(
                    surfactant::surfactant_mass(&base.gammas[d], &geo0[d]),
                    surfactant::surfactant_mass(&new_gammas[d], &geo_new[d]),
                )?,
            };
            err_surf = err_surf.max(e);
        }
        Ok(Proposal {
            stage: Stage {
                shapes: new_shapes,
                gammas: new_gammas,
            },
            err_drop,
            err_surf,
            end_velocity,
            stage_iterations,
        })
    }

    fn reparameterize(&mut self) -> Result<Vec<usize>> {
        let mode = self.cfg.reparam;
        let mut its = Vec::with_capacity(self.sys.drops.len());
        let mut changed = false;
        for d in self.sys.drops.iter_mut() {
            let out = match &mode {
                ReparamMode::Off => {
                    its.push(0);
                    continue;
                }
                ReparamMode::Angle(c) => reparam::angle_reparam(&d.shape, &d.gamma, c)?,
                ReparamMode::Point(c) => reparam::point_reparam(&d.shape, &d.gamma, c)?,
            };
            its.push(out.iterations);
            if out.steps > 0 {
                changed = true;
                d.shape = out.shape;
                d.gamma = out.gamma;
            }
        }
        if changed {
            self.cached = None;
        }
        Ok(its)
    }

    /// Attempts one step of size at most `dt_cap`.
    pub fn step(&mut self, dt_cap: f64) -> Result<StepReport> {
        let dt = self.dt.min(dt_cap);
        let evals0 = self.stats.stokes_evaluations;
        self.gmres_acc = 0;
        let ctrl = self.cfg.controller;
        let outcome = self.propose(dt);
        let (accept, dt_next, err_drop, err_surf, stage_iterations, prop) = match outcome {
            Ok(p) => {
                let (acc, dn) = match ctrl.fixed_dt {
                    Some(f) => (true, f),
                    None => ctrl.adapt(dt, p.err_drop, p.err_surf),
                };
                (acc, dn, p.err_drop, p.err_surf, p.stage_iterations, Some(p))
            }
            Err(Error::EosDomain { node, value }) if ctrl.fixed_dt.is_none() => {
                log::warn!("equation of state left its domain at node {node} (Γ = {value}); halving dt");
                (false, 0.5 * dt, f64::NAN, f64::NAN, 0, None)
            }
            Err(e) => return Err(e),
        };
        let mut report = StepReport {
            t: self.t,
            dt,
            accepted: accept,
            err_drop,
            err_surfactant: err_surf,
            dt_next,
            stokes_evaluations: 0,
            gmres_iterations: 0,
            stage_iterations,
            reparam_iterations: Vec::new(),
        };
        if accept {
            let p = prop.expect("accepted steps carry a proposal");
            self.install(&p.stage);
            self.cached = p.end_velocity;
            self.t += dt;
            self.stats.accepted += 1;
            report.t = self.t;
            report.reparam_iterations = self.reparameterize()?;
        } else {
            self.stats.rejected += 1;
            if dt_next < ctrl.dt_min {
                return Err(Error::Stall { t: self.t, dt: dt_next });
            }
        }
        self.dt = if dt < self.dt && ctrl.fixed_dt.is_none() && dt_next.is_finite() {
            // a step shortened to hit the end time scales the controller's step by the same factor
            (self.dt * dt_next / dt).min(ctrl.dt_max)
        } else {
            dt_next
        };
        report.stokes_evaluations = self.stats.stokes_evaluations - evals0;
        report.gmres_iterations = self.gmres_acc;
        Ok(report)
    }

    /// Advances to `t_end`, calling `hook` after every accepted step.
    pub fn run<H>(&mut self, t_end: f64, mut hook: H) -> Result<RunStats>
    where
        H: FnMut(&StepReport, &DropSystem) -> Result<()>,
    {
        let eps = 1e-12 * t_end.abs().max(1.0);
        while self.t < t_end - eps {
            let rep = self.step(t_end - self.t)?;
            if rep.accepted {
                hook(&rep, &self.sys)?;
            }
        }
        Ok(self.stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stokes::{Drop, FarField, StokesParams};
    use crate::surfactant::EosParams;
    use num_complex::Complex64;

    fn single(shape: SurfaceShape, pe: f64) -> DropSystem {
        DropSystem {
            drops: vec![Drop::new(shape, 1.0, EosParams::clean()).unwrap()],
            far_field: FarField::Quiescent,
            ca: 1.0,
            pe,
            params: StokesParams::default(),
        }
    }

    #[test]
    fn controller_law() {
        let c = StepController {
            tol: 1e-4,
            ..Default::default()
        };
        let (acc, dt) = c.adapt(0.01, 0.9e-4, 0.0);
        assert!(acc);
        assert!((dt - 0.01).abs() < 1e-15);
        let (acc, dt) = c.adapt(0.01, 0.0, 4.0 * 0.9e-4);
        assert!(!acc);
        assert!((dt - 0.005).abs() < 1e-15);
        assert!(!c.adapt(0.01, 1e-4, 0.0).0);
        assert_eq!(c.adapt(0.01, 0.0, 0.0), (true, 0.1));
    }

    #[test]
    fn translation_is_exact() {
        let p = 6;
        let s = SurfaceShape::ellipsoid(p, [1.0, 0.8, 1.2], [0.0; 3]).unwrap();
        let vol0 = surface::area_volume(&s).unwrap().1;
        let model = PrescribedVelocity {
            field: |_x: Vec3, _t: f64| [0.3, -0.1, 0.2],
        };
        let cfg = EvolveConfig {
            reparam: ReparamMode::Off,
            ..Default::default()
        };
        let mut ev = Evolver::new(single(s, f64::INFINITY), model, cfg).unwrap();
        let stats = ev.run(1.0, |r, _| {
            assert!(r.err_drop < 1e-13 && r.err_surfactant < 1e-13);
            Ok(())
        })
        .unwrap();
        assert!(stats.rejected == 0);
        assert!((ev.t - 1.0).abs() < 1e-12);
        let c = ev.sys.drops[0].shape.center();
        assert!(vec3::norm(vec3::sub(c, [0.3, -0.1, 0.2])) < 1e-12);
        let vol = surface::area_volume(&ev.sys.drops[0].shape).unwrap().1;
        assert!((vol - vol0).abs() < 1e-12);
    }

    #[test]
    fn expanding_sphere_keeps_gamma_r_squared() {
        let p = 6;
        let s = SurfaceShape::sphere(p, 1.0, [0.0; 3]).unwrap();
        let mut sys = single(s, f64::INFINITY);
        sys.drops[0].gamma = sys.drops[0].gamma.scaled(0.5);
        let g0 = 0.5;
        // R(t) = 1 + 0.5 t
        let model = PrescribedVelocity {
            field: |x: Vec3, _t: f64| vec3::scale(vec3::normalize(x), 0.5),
        };
        let cfg = EvolveConfig {
            reparam: ReparamMode::Off,
            controller: StepController {
                tol: 1e-9,
                estimator: Estimator::Imex1,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut ev = Evolver::new(sys, model, cfg).unwrap();
        ev.run(1.0, |_, _| Ok(())).unwrap();
        let r = 1.5;
        let gamma = ev.sys.drops[0].gamma.get(0, 0).re / (4.0 * std::f64::consts::PI).sqrt();
        assert!((gamma * r * r - g0).abs() < 1e-6, "{}", gamma * r * r);
    }

    #[test]
    fn rejection_rolls_back_bitwise() {
        let p = 5;
        let s = SurfaceShape::ellipsoid(p, [1.0, 1.0, 1.5], [0.0; 3]).unwrap();
        let mut sys = single(s, 2.0);
        sys.drops[0].gamma.set_real(1, 0, Complex64::new(0.5, 0.0));
        let model = PrescribedVelocity {
            field: |x: Vec3, _t: f64| [x[1], -x[0] + 0.3 * x[2], 0.2 * x[0]],
        };
        let cfg = EvolveConfig {
            controller: StepController {
                tol: 1e-12,
                dt: 0.1,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut ev = Evolver::new(sys, model, cfg).unwrap();
        let before = ev.sys.drops[0].clone();
        let rep = ev.step(1.0).unwrap();
        assert!(!rep.accepted);
        assert_eq!(ev.t, 0.0);
        assert_eq!(ev.sys.drops[0].shape, before.shape);
        assert_eq!(ev.sys.drops[0].gamma, before.gamma);
        assert!(ev.dt < 0.1);
        // the velocity of the unchanged state is reused
        let rep = ev.step(1.0).unwrap();
        assert_eq!(rep.stokes_evaluations, 1);
    }

    #[test]
    fn stokes_evaluations_per_scheme() {
        let p = 4;
        let s = SurfaceShape::sphere(p, 1.0, [0.0; 3]).unwrap();
        for (scheme, first, second) in [(Scheme::Midpoint, 2, 2), (Scheme::Kutta3, 3, 3), (Scheme::Rk23, 4, 3)] {
            let model = PrescribedVelocity {
                field: |x: Vec3, _t: f64| [0.1 * x[0], -0.1 * x[1], 0.0],
            };
            let cfg = EvolveConfig {
                scheme,
                reparam: ReparamMode::Off,
                controller: StepController {
                    fixed_dt: Some(0.01),
                    ..Default::default()
                },
                ..Default::default()
            };
            let mut ev = Evolver::new(single(s.clone(), 10.0), model, cfg).unwrap();
            assert_eq!(ev.step(1.0).unwrap().stokes_evaluations, first, "{scheme:?}");
            assert_eq!(ev.step(1.0).unwrap().stokes_evaluations, second, "{scheme:?}");
        }
    }

    #[test]
    fn clean_sphere_at_rest() {
        let p = 5;
        let s = SurfaceShape::sphere(p, 1.0, [0.0; 3]).unwrap();
        let cfg = EvolveConfig {
            controller: StepController {
                dt: 0.05,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut ev = Evolver::new(single(s.clone(), 10.0), StokesModel::default(), cfg).unwrap();
        ev.run(0.3, |_, _| Ok(())).unwrap();
        let pos = ev.sys.drops[0].shape.positions(p);
        let dev = pos.iter().map(|x| (vec3::norm(*x) - 1.0).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-7, "{dev}");
    }
}
