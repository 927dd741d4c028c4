//! Stokes kernels, layer potentials across drops, the boundary-integral operator and
//! the GMRES velocity solve.
//!
//! The velocity on drop `i` satisfies
//! `(λ_i+1) u − Σ_j (λ_j−1)/(4π) ∫_j u·T·n dS = 2u_∞ − 1/(4π) Σ_j ∫_j f·G dS`.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::krylov::{self, LinearOperator};
use crate::quadrature::{self, Kernel, NearEvalPlan, NearParams, SingularPlan, SourceSurface};
use crate::sphgrid::{self, CoeffField};
use crate::surface::{self, GeometryCache, SurfaceShape};
use crate::surfactant::EosParams;
use crate::vec3::{self, Vec3};

pub type Mat3 = [[f64; 3]; 3];

/// Stokeslet `G` and stresslet `T` for `x̂ = x0 − x`.
pub fn kernels(x0: Vec3, x: Vec3) -> Result<(Mat3, [Mat3; 3])> {
    let d = vec3::sub(x0, x);
    let r = vec3::norm(d);
    if r == 0.0 {
        return Err(Error::SingularKernel);
    }
    let mut g = [[0.0; 3]; 3];
    let mut t = [[[0.0; 3]; 3]; 3];
    let r3 = r * r * r;
    let r5 = r3 * r * r;
    for i in 0..3 {
        for j in 0..3 {
            g[i][j] = d[i] * d[j] / r3 + if i == j { 1.0 / r } else { 0.0 };
            for k in 0..3 {
                t[i][j][k] = -6.0 * d[i] * d[j] * d[k] / r5;
            }
        }
    }
    Ok((g, t))
}

/// Imposed linear flow, scaled by the capillary number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FarField {
    Quiescent,
    /// `A x = (x₂, 0, 0)`
    Shear,
    /// `A x = (x₁, −x₂, 0)`
    Extension,
    /// `A = ½[[1+α, 1−α, 0], [α−1, −1−α, 0], [0, 0, 0]]`
    FourRoll { alpha: f64 },
    Custom(Mat3),
}

impl FarField {
    /// Unit-rate velocity gradient `A_ij = ∂u_i/∂x_j`.
    pub fn gradient(&self) -> Result<Mat3> {
        let a = match *self {
            FarField::Quiescent => [[0.0; 3]; 3],
            FarField::Shear => [[0.0, 1.0, 0.0], [0.0; 3], [0.0; 3]],
            FarField::Extension => [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0; 3]],
            FarField::FourRoll { alpha } => [
                [0.5 * (1.0 + alpha), 0.5 * (1.0 - alpha), 0.0],
                [0.5 * (alpha - 1.0), -0.5 * (1.0 + alpha), 0.0],
                [0.0; 3],
            ],
            FarField::Custom(a) => a,
        };
        let tr = a[0][0] + a[1][1] + a[2][2];
        let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        if !a.iter().flatten().all(|v| v.is_finite()) || tr.abs() > 1e-12 * scale {
            return Err(Error::InvalidFlow(format!("velocity gradient trace {tr:e}")));
        }
        Ok(a)
    }
}

/// `u_∞(x) = Ca · A x` at every point.
pub fn far_field(flow: &FarField, ca: f64, points: &[Vec3]) -> Result<Vec<Vec3>> {
    let a = flow.gradient()?;
    Ok(points.iter().map(|x| vec3::scale(vec3::matvec(&a, *x), ca)).collect())
}

/// One drop: shape, surfactant concentration and material parameters.
#[derive(Debug, Clone)]
pub struct Drop {
    pub shape: SurfaceShape,
    pub gamma: CoeffField,
    /// Viscosity ratio.
    pub lambda: f64,
    pub eos: EosParams,
}

impl Drop {
    /// Drop with uniform concentration `Γ ≡ 1`.
    pub fn new(shape: SurfaceShape, lambda: f64, eos: EosParams) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("viscosity ratio {lambda}")));
        }
        let mut gamma = CoeffField::zeros(shape.p);
        gamma.set(0, 0, (4.0 * PI).sqrt().into());
        Ok(Drop {
            shape,
            gamma,
            lambda,
            eos,
        })
    }

    pub fn p(&self) -> usize {
        self.shape.p
    }
}

/// Numerical parameters for the velocity solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StokesParams {
    pub near: NearParams,
    /// Order of the rotated grid for the singular rule; `None` uses the drop order.
    pub singular_order: Option<usize>,
    pub tol: f64,
    pub maxit: usize,
    /// Tail tolerance of the adaptive de-aliasing rule.
    pub upsample_tol: f64,
    /// Floor of the de-aliasing factor.
    pub upsample_min: usize,
    pub upsample_max: usize,
}

impl Default for StokesParams {
    fn default() -> Self {
        StokesParams {
            near: NearParams::default(),
            singular_order: None,
            tol: 1e-8,
            maxit: 400,
            upsample_tol: 1e-8,
            upsample_min: 2,
            upsample_max: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DropSystem {
    pub drops: Vec<Drop>,
    pub far_field: FarField,
    pub ca: f64,
    pub pe: f64,
    pub params: StokesParams,
}

/// Number of real Galerkin unknowns per Cartesian component.
pub fn galerkin_len(p: usize) -> usize {
    CoeffField::packed_len(p)
}

/// Packs the `m >= 0` coefficients (real, imaginary) of real fields.
pub fn pack(fields: &[[CoeffField; 3]], out: &mut Vec<f64>) {
    out.clear();
    for f in fields {
        for c in f {
            c.pack_real(out);
        }
    }
}

/// Inverse of [`pack`]; the imaginary parts of `m = 0` entries are ignored.
pub fn unpack(x: &[f64], orders: &[usize]) -> Vec<[CoeffField; 3]> {
    let mut pos = 0;
    orders
        .iter()
        .map(|&p| {
            let len = galerkin_len(p);
            let mut next = || {
                let c = CoeffField::unpack_real(p, &x[pos..pos + len]);
                pos += len;
                c
            };
            [next(), next(), next()]
        })
        .collect()
}

/// Geometry, quadrature plans and cross-drop evaluation plans for one configuration.
#[derive(Debug)]
pub struct Prepared {
    pub sources: Vec<SourceSurface>,
    pub singular: Vec<SingularPlan>,
    /// Geometry on each drop's own grid (targets of the boundary-integral equation).
    pub geo: Vec<GeometryCache>,
    /// `cross[i][j]`: plan of targets on drop `i` against source drop `j`.
    pub cross: Vec<Vec<Option<NearEvalPlan>>>,
    pub orders: Vec<usize>,
}

impl Prepared {
    pub fn new(sys: &DropSystem) -> Result<Self> {
        if sys.drops.is_empty() {
            return Err(Error::InvalidParameter("system without drops".into()));
        }
        let params = &sys.params;
        let mut sources = Vec::new();
        let mut singular = Vec::new();
        let mut geo = Vec::new();
        for d in &sys.drops {
            sources.push(SourceSurface::new(&d.shape, params.near)?);
            singular.push(SingularPlan::new(&d.shape, params.singular_order.unwrap_or(d.p()))?);
            geo.push(surface::geometry_at(&d.shape, d.p(), 1)?);
        }
        let nd = sys.drops.len();
        let mut cross = Vec::with_capacity(nd);
        for i in 0..nd {
            let row = (0..nd)
                .map(|j| (i != j).then(|| quadrature::classify_targets(&geo[i].pos, &sources[j])))
                .collect();
            cross.push(row);
        }
        Ok(Prepared {
            sources,
            singular,
            geo,
            cross,
            orders: sys.drops.iter().map(|d| d.p()).collect(),
        })
    }

    pub fn ndrops(&self) -> usize {
        self.orders.len()
    }

    pub fn dim(&self) -> usize {
        self.orders.iter().map(|&p| 3 * galerkin_len(p)).sum()
    }

    /// Layer potential sums (without the `1/(4π)` factor) of per-drop densities at
    /// every drop's grid nodes; `active[j]` selects the source drops.
    pub fn layer_sums(&self, rho: &[[CoeffField; 3]], kernel: Kernel, active: &[bool]) -> Result<Vec<Vec<Vec3>>> {
        let nd = self.ndrops();
        let mut out: Vec<Vec<Vec3>> = self.geo.iter().map(|g| vec![[0.0; 3]; g.npoints()]).collect();
        for j in 0..nd {
            if !active[j] {
                continue;
            }
            let self_vals = self.singular[j].apply(&rho[j], kernel)?;
            let self_field = quadrature::density_coeffs(&self_vals, self.orders[j])?;
            for (o, v) in out[j].iter_mut().zip(&self_vals) {
                *o = vec3::add(*o, *v);
            }
            for i in 0..nd {
                if i == j {
                    continue;
                }
                let plan = self.cross[i][j].as_ref().expect("cross plan");
                let vals = layer_cross(&self.sources[j], &rho[j], &self_field, kernel, &self.geo[i].pos, plan);
                for (o, v) in out[i].iter_mut().zip(&vals) {
                    *o = vec3::add(*o, *v);
                }
            }
        }
        Ok(out)
    }
}

/// Potential of drop `source` at targets on another drop, per the region plan.
pub fn layer_cross(
    source: &SourceSurface,
    rho: &[CoeffField; 3],
    self_field: &[CoeffField; 3],
    kernel: Kernel,
    targets: &[Vec3],
    plan: &NearEvalPlan,
) -> Vec<Vec3> {
    quadrature::evaluate_plan(source, targets, plan, rho, self_field, kernel)
}

/// Interfacial force expansions (order `p`) of every drop, computed on de-aliased grids.
pub fn interfacial_forces(sys: &DropSystem) -> Result<Vec<[CoeffField; 3]>> {
    let prm = &sys.params;
    sys.drops
        .iter()
        .map(|d| {
            let u = surface::adaptive_upsample_rate(&d.shape, prm.upsample_tol, prm.upsample_max)?
                .factor
                .max(prm.upsample_min);
            let geo = surface::geometry(&d.shape, u)?;
            let f = surface::interfacial_force(&geo, &d.gamma, &d.eos)?;
            let c = quadrature::density_coeffs(&f, geo.q)?;
            Ok([c[0].resample(d.p()), c[1].resample(d.p()), c[2].resample(d.p())])
        })
        .collect()
}

/// Matrix-free boundary-integral operator on packed Galerkin unknowns.
pub struct BimOperator<'a> {
    pub prep: &'a Prepared,
    pub lambdas: Vec<f64>,
}

impl BimOperator<'_> {
    pub fn apply_fields(&self, u: &[[CoeffField; 3]]) -> Result<Vec<[CoeffField; 3]>> {
        let prep = self.prep;
        let mut out: Vec<[CoeffField; 3]> = (0..prep.ndrops())
            .map(|i| {
                let (p, s) = (prep.orders[i], self.lambdas[i] + 1.0);
                [u[i][0].resample(p).scaled(s), u[i][1].resample(p).scaled(s), u[i][2].resample(p).scaled(s)]
            })
            .collect();
        let active: Vec<bool> = self.lambdas.iter().map(|&l| l != 1.0).collect();
        if active.iter().any(|&a| a) {
            let scaled: Vec<[CoeffField; 3]> = u
                .iter()
                .zip(&self.lambdas)
                .map(|(f, &l)| [f[0].scaled(l - 1.0), f[1].scaled(l - 1.0), f[2].scaled(l - 1.0)])
                .collect();
            let sums = prep.layer_sums(&scaled, Kernel::Double, &active)?;
            for i in 0..prep.ndrops() {
                let c = quadrature::density_coeffs(&sums[i], prep.orders[i])?;
                for k in 0..3 {
                    out[i][k] = out[i][k].axpy(-1.0 / (4.0 * PI), &c[k]);
                }
            }
        }
        Ok(out)
    }
}

impl LinearOperator for BimOperator<'_> {
    fn dim(&self) -> usize {
        self.prep.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        let u = unpack(x, &self.prep.orders);
        let out = self.apply_fields(&u)?;
        let mut v = Vec::with_capacity(y.len());
        pack(&out, &mut v);
        y.copy_from_slice(&v);
        // keep the unused imaginary slots of m = 0 nonsingular
        let mut pos = 0;
        for (i, &p) in self.prep.orders.iter().enumerate() {
            for _ in 0..3 {
                for n in 0..=p {
                    y[pos + 1] = (self.lambdas[i] + 1.0) * x[pos + 1];
                    pos += 2 * (n + 1);
                }
            }
        }
        Ok(())
    }
}

/// Velocity of one drop on its own grid.
#[derive(Debug, Clone)]
pub struct DropVelocity {
    pub coeffs: [CoeffField; 3],
    pub values: Vec<Vec3>,
    pub normal: Vec<f64>,
    pub tangential: Vec<Vec3>,
}

#[derive(Debug, Clone)]
pub struct VelocitySolution {
    pub drops: Vec<DropVelocity>,
    pub iterations: usize,
    pub residual: f64,
    /// Packed Galerkin solution, reusable as an initial guess.
    pub packed: Vec<f64>,
}

/// Right-hand side `2u_∞ − 1/(4π) Σ_j S_j[f]` in expansion form.
pub fn bim_rhs(sys: &DropSystem, prep: &Prepared) -> Result<Vec<[CoeffField; 3]>> {
    let forces = interfacial_forces(sys)?;
    let active = vec![true; prep.ndrops()];
    let sl = prep.layer_sums(&forces, Kernel::Single, &active)?;
    let mut out = Vec::with_capacity(prep.ndrops());
    for i in 0..prep.ndrops() {
        let uinf = far_field(&sys.far_field, sys.ca, &prep.geo[i].pos)?;
        let vals: Vec<Vec3> = uinf
            .iter()
            .zip(&sl[i])
            .map(|(u, s)| vec3::sub(vec3::scale(*u, 2.0), vec3::scale(*s, 1.0 / (4.0 * PI))))
            .collect();
        out.push(quadrature::density_coeffs(&vals, prep.orders[i])?);
    }
    Ok(out)
}

/// Solves for the interface velocity of all drops.
pub fn solve_velocity(sys: &DropSystem) -> Result<VelocitySolution> {
    let prep = Prepared::new(sys)?;
    solve_velocity_prepared(sys, &prep, None)
}

pub fn solve_velocity_prepared(sys: &DropSystem, prep: &Prepared, guess: Option<&[f64]>) -> Result<VelocitySolution> {
    let rhs = bim_rhs(sys, prep)?;
    let mut b = Vec::new();
    pack(&rhs, &mut b);
    let op = BimOperator {
        prep,
        lambdas: sys.drops.iter().map(|d| d.lambda).collect(),
    };
    let guess = guess.filter(|g| g.len() == b.len());
    let out = krylov::gmres_with_guess(&op, &b, guess, sys.params.tol, sys.params.maxit)?;
    let fields = unpack(&out.x, &prep.orders);
    let drops = fields
        .into_par_iter()
        .enumerate()
        .map(|(i, coeffs)| {
            let values = quadrature::density_on_grid(&coeffs, prep.orders[i]);
            let geo = &prep.geo[i];
            let normal: Vec<f64> = values.iter().zip(&geo.normal).map(|(u, n)| vec3::dot(*u, *n)).collect();
            let tangential = values
                .iter()
                .zip(&geo.normal)
                .zip(&normal)
                .map(|((u, n), un)| vec3::axpy(*u, -un, *n))
                .collect();
            DropVelocity {
                coeffs,
                values,
                normal,
                tangential,
            }
        })
        .collect();
    Ok(VelocitySolution {
        drops,
        iterations: out.iterations,
        residual: out.residual(),
        packed: out.x,
    })
}

/// Smallest distance between the surfaces of two different drops.
pub fn min_gap(sys: &DropSystem) -> Result<f64> {
    let nd = sys.drops.len();
    let mut best = f64::INFINITY;
    for i in 0..nd {
        let pi = sys.drops[i].shape.positions(sys.drops[i].p());
        for j in 0..nd {
            if i == j {
                continue;
            }
            let sj = &sys.drops[j].shape;
            let pj = sj.positions(sj.p);
            let g = sphgrid::build_grid(sj.p)?;
            let (mut dmin, mut arg) = (f64::INFINITY, (0, 0));
            for (a, x) in pi.iter().enumerate() {
                for (b, y) in pj.iter().enumerate() {
                    let d = vec3::norm(vec3::sub(*x, *y));
                    if d < dmin {
                        dmin = d;
                        arg = (a, b);
                    }
                }
            }
            // alternate projections between the two surfaces
            let gi = sphgrid::build_grid(sys.drops[i].p())?;
            let (npi, npj) = (gi.nphi(), g.nphi());
            let si = &sys.drops[i].shape;
            let mut a = quadrature::closest_point(si, pj[arg.1], (gi.theta[arg.0 / npi], gi.phi[arg.0 % npi]));
            let mut b = quadrature::closest_point(sj, a.x, (g.theta[arg.1 / npj], g.phi[arg.1 % npj]));
            for _ in 0..20 {
                let prev = b.distance;
                a = quadrature::closest_point(si, b.x, (a.theta, a.phi));
                b = quadrature::closest_point(sj, a.x, (b.theta, b.phi));
                if (prev - b.distance).abs() < 1e-12 {
                    break;
                }
            }
            best = best.min(dmin.min(b.distance));
        }
    }
    Ok(best)
}
