//! Regular, singular and nearly-singular surface quadrature for Stokes layer potentials.
//!
//! Sums returned here omit the `1/(4π)` (single layer) and `1/(4π)` (double layer)
//! prefactors; callers in [`crate::stokes`] apply them.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sphgrid::{self, legendre, CoeffField, Deriv, GridField, SphGrid};
use crate::surface::{self, GeometryCache, SurfaceShape};
use crate::vec3::{self, Vec3};

/// Layer-potential kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    /// Stokeslet `G = I/r + x̂x̂/r³` applied to a force density.
    Single,
    /// Stresslet `T = −6x̂x̂x̂/r⁵` contracted with a velocity density and the normal.
    Double,
}

/// Contribution of one source node: `G·f ds` or `(T:u n) ds`.
#[inline(always)]
fn kernel_term(kernel: Kernel, x0: Vec3, x: Vec3, nds: Vec3, ds: f64, rho: Vec3) -> Vec3 {
    let d = [x0[0] - x[0], x0[1] - x[1], x0[2] - x[2]];
    let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    let ir = 1.0 / r2.sqrt();
    let ir2 = ir * ir;
    match kernel {
        Kernel::Single => {
            let dr = (d[0] * rho[0] + d[1] * rho[1] + d[2] * rho[2]) * ir2;
            let s = ds * ir;
            [s * (rho[0] + dr * d[0]), s * (rho[1] + dr * d[1]), s * (rho[2] + dr * d[2])]
        }
        Kernel::Double => {
            let du = d[0] * rho[0] + d[1] * rho[1] + d[2] * rho[2];
            let dn = d[0] * nds[0] + d[1] * nds[1] + d[2] * nds[2];
            let c = -6.0 * du * dn * ir2 * ir2 * ir;
            [c * d[0], c * d[1], c * d[2]]
        }
    }
}

/// Regular quadrature `Σ w_j f W` on the geometry's grid.
pub fn regular_integrate(f: &GridField<f64>, geo: &GeometryCache) -> Result<f64> {
    if f.values.len() != geo.npoints() {
        return Err(Error::Dimension {
            expected: geo.npoints(),
            got: f.values.len(),
        });
    }
    Ok(geo.integrate(&f.values))
}

/// Singular weights per colatitude row (including the `1/sin θ_j` factor).
pub fn singular_weights(g: &SphGrid) -> Vec<f64> {
    (0..g.ntheta())
        .map(|j| {
            let th = g.theta[j];
            let s: f64 = legendre::legendre_p_all(g.p, g.t[j]).iter().sum();
            g.area_weight(j) * 2.0 * (0.5 * th).sin() * s
        })
        .collect()
}

/// Sampled source surface for regular quadrature.
#[derive(Debug, Clone)]
pub struct QuadGrid {
    pub q: usize,
    pub pos: Vec<Vec3>,
    /// `n ds`
    pub nds: Vec<Vec3>,
    pub ds: Vec<f64>,
}

impl QuadGrid {
    pub fn from_geometry(geo: &GeometryCache) -> Self {
        let ds: Vec<f64> = (0..geo.npoints()).map(|i| geo.ds(i)).collect();
        QuadGrid {
            q: geo.q,
            pos: geo.pos.clone(),
            nds: geo.normal.iter().zip(&ds).map(|(n, w)| vec3::scale(*n, *w)).collect(),
            ds,
        }
    }

    pub fn new(s: &SurfaceShape, q: usize) -> Result<Self> {
        Ok(Self::from_geometry(&surface::geometry_at(s, q, 1)?))
    }

    /// `Σ K(x0, x_i) ρ_i ds_i`.
    pub fn eval(&self, kernel: Kernel, x0: Vec3, rho: &[Vec3]) -> Vec3 {
        let mut acc = [0.0; 3];
        for i in 0..self.pos.len() {
            let t = kernel_term(kernel, x0, self.pos[i], self.nds[i], self.ds[i], rho[i]);
            acc[0] += t[0];
            acc[1] += t[1];
            acc[2] += t[2];
        }
        acc
    }
}

/// Synthesizes a vector density given by three real expansions on the order-`q` grid.
pub fn density_on_grid(rho: &[CoeffField; 3], q: usize) -> Vec<Vec3> {
    let g = sphgrid::grid(q);
    let c: Vec<GridField<f64>> = rho.iter().map(|c| g.synth_real(c, Deriv::Value)).collect();
    (0..g.npoints()).map(|i| [c[0].values[i], c[1].values[i], c[2].values[i]]).collect()
}

/// Forward transform of a vector field on the order-`q` grid into three expansions.
pub fn density_coeffs(v: &[Vec3], q: usize) -> Result<[CoeffField; 3]> {
    let g = sphgrid::build_grid(q)?;
    let comp = |c: usize| {
        g.analyze_real(&GridField {
            p: q,
            values: v.iter().map(|x| x[c]).collect(),
        })
    };
    Ok([comp(0)?, comp(1)?, comp(2)?])
}

/// Per-target rotated geometry for the singular rule.
///
/// For each target node of the order-`p` grid the surface is reparameterized so
/// that the target sits at the north pole; the rotated nodes of an order-`q`
/// grid carry position, `ω n W'` and `ω W'`. The blocks are cached when they fit
/// in [`SINGULAR_CACHE_BYTES`] and rebuilt on every apply otherwise.
#[derive(Debug, Clone)]
pub struct SingularPlan {
    pub p: usize,
    pub q: usize,
    pub targets: Vec<Vec3>,
    shape: SurfaceShape,
    weights: Vec<f64>,
    nodes: usize,
    data: Option<Vec<f64>>,
}

const STRIDE: usize = 7;

/// Memory budget for cached rotated geometry.
pub const SINGULAR_CACHE_BYTES: usize = 512 << 20;

impl SingularPlan {
    pub fn new(s: &SurfaceShape, q: usize) -> Result<Self> {
        let p = s.p;
        let gp = sphgrid::build_grid(p)?;
        let gq = sphgrid::build_grid(q)?;
        let nodes = gq.npoints();
        let ntarget = gp.npoints();
        let mut plan = SingularPlan {
            p,
            q,
            targets: s.positions(p),
            shape: s.clone(),
            weights: singular_weights(&gq),
            nodes,
            data: None,
        };
        if ntarget * nodes * STRIDE * 8 <= SINGULAR_CACHE_BYTES {
            let blocks: Vec<Result<Vec<f64>>> = (0..ntarget).into_par_iter().map(|t| plan.block(t)).collect();
            let mut data = Vec::with_capacity(ntarget * nodes * STRIDE);
            for b in blocks {
                data.extend_from_slice(&b?);
            }
            plan.data = Some(data);
        }
        Ok(plan)
    }

    pub fn is_cached(&self) -> bool {
        self.data.is_some()
    }

    /// Rotated geometry for target `t`.
    fn block(&self, t: usize) -> Result<Vec<f64>> {
        let p = self.p;
        let gp = sphgrid::grid(p);
        let gq = sphgrid::grid(self.q);
        let wig = gp.wigner_rows();
        let np = gp.nphi();
        let nphi_q = gq.nphi();
        let (j, k) = (t / np, t % np);
        let mut rot = [CoeffField::zeros(p), CoeffField::zeros(p), CoeffField::zeros(p)];
        for c in 0..3 {
            sphgrid::rotate_real_with(&self.shape.coeffs[c], gp.phi[k], &wig[j], &mut rot[c]);
        }
        let syn = |d: Deriv| -> Vec<GridField<f64>> { rot.iter().map(|c| gq.synth_real(c, d)).collect() };
        let x = syn(Deriv::Value);
        let xt = syn(Deriv::Theta);
        let xp = syn(Deriv::Phi);
        let mut out = vec![0.0; self.nodes * STRIDE];
        for i in 0..self.nodes {
            let a = [xt[0].values[i], xt[1].values[i], xt[2].values[i]];
            let b = [xp[0].values[i], xp[1].values[i], xp[2].values[i]];
            let c = vec3::cross(a, b);
            let w = vec3::norm(c);
            if !(w > 0.0) {
                return Err(Error::DegenerateSurface { node: i, w });
            }
            let om = self.weights[i / nphi_q];
            let o = &mut out[i * STRIDE..(i + 1) * STRIDE];
            o[0] = x[0].values[i];
            o[1] = x[1].values[i];
            o[2] = x[2].values[i];
            o[3] = c[0] * om;
            o[4] = c[1] * om;
            o[5] = c[2] * om;
            o[6] = w * om;
        }
        Ok(out)
    }

    /// Principal-value self potential at every order-`p` grid node.
    pub fn apply(&self, rho: &[CoeffField; 3], kernel: Kernel) -> Result<Vec<Vec3>> {
        let p = self.p;
        let gp = sphgrid::grid(p);
        let gq = sphgrid::grid(self.q);
        let wig = gp.wigner_rows();
        let np = gp.nphi();
        let rho: Vec<CoeffField> = rho.iter().map(|c| c.resample(p)).collect();
        let stride = self.nodes * STRIDE;
        (0..self.targets.len())
            .into_par_iter()
            .map(|t| {
                let (j, k) = (t / np, t % np);
                let mut rot = CoeffField::zeros(p);
                let mut vals: [Vec<f64>; 3] = Default::default();
                for c in 0..3 {
                    sphgrid::rotate_real_with(&rho[c], gp.phi[k], &wig[j], &mut rot);
                    vals[c] = gq.synth_real(&rot, Deriv::Value).values;
                }
                let owned;
                let blk: &[f64] = match &self.data {
                    Some(d) => &d[t * stride..(t + 1) * stride],
                    None => {
                        owned = self.block(t)?;
                        &owned
                    }
                };
                let x0 = self.targets[t];
                let mut acc = [0.0; 3];
                for i in 0..self.nodes {
                    let o = &blk[i * STRIDE..(i + 1) * STRIDE];
                    let r = [vals[0][i], vals[1][i], vals[2][i]];
                    let v = kernel_term(kernel, x0, [o[0], o[1], o[2]], [o[3], o[4], o[5]], o[6], r);
                    acc[0] += v[0];
                    acc[1] += v[1];
                    acc[2] += v[2];
                }
                Ok(acc)
            })
            .collect()
    }
}

impl SingularPlan {
    /// Scalar single layer `∮ ρ/r dS` at every order-`p` grid node.
    pub fn apply_laplace_single(&self, rho: &CoeffField) -> Result<Vec<f64>> {
        let p = self.p;
        let gp = sphgrid::grid(p);
        let gq = sphgrid::grid(self.q);
        let wig = gp.wigner_rows();
        let np = gp.nphi();
        let rho = rho.resample(p);
        let stride = self.nodes * STRIDE;
        (0..self.targets.len())
            .into_par_iter()
            .map(|t| {
                let (j, k) = (t / np, t % np);
                let mut rot = CoeffField::zeros(p);
                sphgrid::rotate_real_with(&rho, gp.phi[k], &wig[j], &mut rot);
                let vals = gq.synth_real(&rot, Deriv::Value).values;
                let owned;
                let blk: &[f64] = match &self.data {
                    Some(d) => &d[t * stride..(t + 1) * stride],
                    None => {
                        owned = self.block(t)?;
                        &owned
                    }
                };
                let x0 = self.targets[t];
                let mut acc = 0.0;
                for (i, v) in vals.iter().enumerate() {
                    let o = &blk[i * STRIDE..(i + 1) * STRIDE];
                    acc += o[6] * v / vec3::norm(vec3::sub(x0, [o[0], o[1], o[2]]));
                }
                Ok(acc)
            })
            .collect()
    }
}

/// Self layer potential of a density sampled on the order-`p` grid of `s`.
pub fn layer_self(s: &SurfaceShape, density: &[Vec3], kernel: Kernel, q: usize) -> Result<Vec<Vec3>> {
    let rho = density_coeffs(density, s.p)?;
    SingularPlan::new(s, q)?.apply(&rho, kernel)
}

/// Target region relative to one source surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionLabel {
    /// Well separated: regular quadrature on the standard grid.
    Far,
    /// Intermediate: regular quadrature on the upsampled grid.
    Intermediate,
    /// Nearest: interpolation along the line through the closest point.
    Near,
}

/// Spacing rule for the interpolation nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spacing {
    /// `D_l = h √l`
    Sqrt,
    /// `D_l = h l`
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearParams {
    /// `Ã = a_mult · h`
    pub a_mult: f64,
    /// Upsampling factor of the intermediate grid.
    pub upsample: usize,
    /// Number of interpolation nodes away from the surface.
    pub nodes: usize,
    pub spacing: Spacing,
}

impl Default for NearParams {
    fn default() -> Self {
        NearParams {
            a_mult: 5.0,
            upsample: 4,
            nodes: 8,
            spacing: Spacing::Sqrt,
        }
    }
}

impl NearParams {
    /// Distance of interpolation node `l` (1-based) from the surface.
    pub fn node_distance(&self, h: f64, l: usize) -> f64 {
        match self.spacing {
            Spacing::Sqrt => h * (l as f64).sqrt(),
            Spacing::Uniform => h * l as f64,
        }
    }
}

/// Uniform bins of surface grid points with edge length `edge`.
#[derive(Debug, Clone)]
pub struct CellList {
    pub edge: f64,
    bins: HashMap<(i64, i64, i64), Vec<usize>>,
}

impl CellList {
    pub fn new(points: &[Vec3], edge: f64) -> Self {
        let mut bins: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, x) in points.iter().enumerate() {
            bins.entry(Self::key(x, edge)).or_default().push(i);
        }
        CellList { edge, bins }
    }

    #[inline]
    fn key(x: &Vec3, edge: f64) -> (i64, i64, i64) {
        (
            (x[0] / edge).floor() as i64,
            (x[1] / edge).floor() as i64,
            (x[2] / edge).floor() as i64,
        )
    }

    pub fn len(&self) -> usize {
        self.bins.values().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Nearest point within one bin edge, searching the 27 neighbouring bins.
    pub fn nearest(&self, points: &[Vec3], x0: Vec3) -> Option<(usize, f64)> {
        let (a, b, c) = Self::key(&x0, self.edge);
        let mut best: Option<(usize, f64)> = None;
        for da in -1..=1 {
            for db in -1..=1 {
                for dc in -1..=1 {
                    if let Some(list) = self.bins.get(&(a + da, b + db, c + dc)) {
                        for &i in list {
                            let d = vec3::norm(vec3::sub(points[i], x0));
                            if best.map(|(_, bd)| d < bd).unwrap_or(true) {
                                best = Some((i, d));
                            }
                        }
                    }
                }
            }
        }
        best.filter(|&(_, d)| d <= self.edge)
    }
}

/// Result of the closest-point search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPoint {
    pub theta: f64,
    pub phi: f64,
    pub x: Vec3,
    pub distance: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) fn wrap_angles(theta: f64, phi: f64) -> (f64, f64) {
    let (mut t, mut f) = (theta, phi);
    t = t.rem_euclid(2.0 * PI);
    if t > PI {
        t = 2.0 * PI - t;
        f += PI;
    }
    (t, f.rem_euclid(2.0 * PI))
}

/// Damped Newton search for the surface point closest to `x0`, seeded at `(θ, φ)`.
///
/// Minimizes `|x(θ,φ) − x0|²` with a Levenberg shift `μI`: `μ` is multiplied
/// by 10 when a step does not decrease the objective and by 0.5 otherwise.
pub fn closest_point(s: &SurfaceShape, x0: Vec3, seed: (f64, f64)) -> ClosestPoint {
    let (mut th, mut ph) = seed;
    if th <= 1e-8 || th >= PI - 1e-8 {
        th = th.clamp(1e-3, PI - 1e-3);
    }
    let eval = |t: f64, f: f64| {
        let d = s.eval(t, f, 2);
        let x = [d[0].f, d[1].f, d[2].f];
        let r = vec3::sub(x, x0);
        let xt = [d[0].ft, d[1].ft, d[2].ft];
        let xp = [d[0].fp, d[1].fp, d[2].fp];
        let xtt = [d[0].ftt, d[1].ftt, d[2].ftt];
        let xtp = [d[0].ftp, d[1].ftp, d[2].ftp];
        let xpp = [d[0].fpp, d[1].fpp, d[2].fpp];
        let g = [2.0 * vec3::dot(r, xt), 2.0 * vec3::dot(r, xp)];
        let h = [
            [2.0 * (vec3::dot(xt, xt) + vec3::dot(r, xtt)), 2.0 * (vec3::dot(xt, xp) + vec3::dot(r, xtp))],
            [2.0 * (vec3::dot(xt, xp) + vec3::dot(r, xtp)), 2.0 * (vec3::dot(xp, xp) + vec3::dot(r, xpp))],
        ];
        (x, vec3::dot(r, r), g, h)
    };
    let (mut x, mut fval, mut g, mut h) = eval(th, ph);
    let mut mu = 1e-6 * (h[0][0].abs() + h[1][1].abs()).max(1e-12);
    let mut it = 0;
    let mut converged = false;
    while it < 50 {
        if g[0].hypot(g[1]) < 1e-10 {
            converged = true;
            break;
        }
        it += 1;
        let mut accepted = false;
        for _ in 0..30 {
            let a = h[0][0] + mu;
            let d = h[1][1] + mu;
            let b = h[0][1];
            let det = a * d - b * b;
            let indefinite = a <= 0.0 || det <= 0.0;
            if indefinite {
                mu = mu * 10.0 + 1e-12;
                continue;
            }
            let dt = -(d * g[0] - b * g[1]) / det;
            let dp = -(a * g[1] - b * g[0]) / det;
            let (nt, np) = wrap_angles(th + dt, ph + dp);
            let (nx, nf, ng, nh) = eval(nt, np);
            if nf <= fval {
                th = nt;
                ph = np;
                x = nx;
                fval = nf;
                g = ng;
                h = nh;
                mu *= 0.5;
                accepted = true;
                break;
            }
            mu *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    if !converged && g[0].hypot(g[1]) < 1e-10 {
        converged = true;
    }
    if !converged {
        log::debug!("closest point: no convergence after {it} iterations, |g| = {:e}", g[0].hypot(g[1]));
    }
    ClosestPoint {
        theta: th,
        phi: ph,
        x,
        distance: fval.sqrt(),
        iterations: it,
        converged,
    }
}

/// Everything needed to evaluate potentials of one source surface at arbitrary targets.
#[derive(Debug, Clone)]
pub struct SourceSurface {
    pub shape: SurfaceShape,
    /// Grid spacing `h = Rπ/(p+1)` with `R` the volume-equivalent radius.
    pub h: f64,
    pub params: NearParams,
    pub base: QuadGrid,
    pub fine: QuadGrid,
    pub cells: CellList,
    grid: Arc<SphGrid>,
}

impl SourceSurface {
    pub fn new(shape: &SurfaceShape, params: NearParams) -> Result<Self> {
        let p = shape.p;
        let (_, vol) = surface::area_volume(shape)?;
        let radius = (3.0 * vol.abs() / (4.0 * PI)).cbrt();
        let h = radius * PI / (p as f64 + 1.0);
        let base = QuadGrid::new(shape, p)?;
        let fine = QuadGrid::new(shape, surface::upsampled_order(p, params.upsample))?;
        let cells = CellList::new(&base.pos, params.a_mult * h);
        Ok(SourceSurface {
            shape: shape.clone(),
            h,
            params,
            base,
            fine,
            cells,
            grid: sphgrid::build_grid(p)?,
        })
    }

    pub fn a_tilde(&self) -> f64 {
        self.params.a_mult * self.h
    }

    /// Classifies one target, returning the label and (for refined targets) the closest point.
    pub fn classify(&self, x0: Vec3) -> (RegionLabel, Option<ClosestPoint>) {
        let Some((i, dgrid)) = self.cells.nearest(&self.base.pos, x0) else {
            return (RegionLabel::Far, None);
        };
        let h = self.h;
        if dgrid > 2.0 * h {
            let label = if dgrid > self.a_tilde() { RegionLabel::Far } else { RegionLabel::Intermediate };
            return (label, None);
        }
        let np = self.grid.nphi();
        let seed = (self.grid.theta[i / np], self.grid.phi[i % np]);
        let cp = closest_point(&self.shape, x0, seed);
        let d = cp.distance.min(dgrid);
        let label = if d <= h {
            RegionLabel::Near
        } else if d <= self.a_tilde() {
            RegionLabel::Intermediate
        } else {
            RegionLabel::Far
        };
        (label, Some(cp))
    }
}

/// Interpolation data for one nearest-region target.
#[derive(Debug, Clone)]
pub struct NearTarget {
    pub closest: ClosestPoint,
    /// `+1` if the target lies on the side the normal points to.
    pub side: f64,
    pub nodes: Vec<Vec3>,
    /// Barycentric coefficients for `(x*, x_1, ..., x_L)` at the target.
    pub coeffs: Vec<f64>,
}

/// Per-target evaluation plan for one (targets, source) pair.
#[derive(Debug, Clone)]
pub struct NearEvalPlan {
    pub labels: Vec<RegionLabel>,
    pub near: Vec<Option<NearTarget>>,
}

impl NearEvalPlan {
    pub fn count(&self, label: RegionLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Barycentric Lagrange coefficients of the interpolant through `nodes` at `s`.
pub fn barycentric_coeffs(nodes: &[f64], s: f64) -> Vec<f64> {
    let n = nodes.len();
    if let Some(k) = nodes.iter().position(|&x| x == s) {
        let mut out = vec![0.0; n];
        out[k] = 1.0;
        return out;
    }
    let w: Vec<f64> = (0..n)
        .map(|k| {
            let prod: f64 = (0..n).filter(|&j| j != k).map(|j| nodes[k] - nodes[j]).product();
            1.0 / prod
        })
        .collect();
    let terms: Vec<f64> = (0..n).map(|k| w[k] / (s - nodes[k])).collect();
    let sum: f64 = terms.iter().sum();
    terms.iter().map(|t| t / sum).collect()
}

/// Unit normal of a shape at arbitrary parameters.
pub fn normal_at(s: &SurfaceShape, theta: f64, phi: f64) -> Vec3 {
    let d = s.eval(theta, phi, 1);
    let xt = [d[0].ft, d[1].ft, d[2].ft];
    let xp = [d[0].fp, d[1].fp, d[2].fp];
    vec3::normalize(vec3::cross(xt, xp))
}

/// Classifies all targets against `src` and builds interpolation data for nearest ones.
pub fn classify_targets(targets: &[Vec3], src: &SourceSurface) -> NearEvalPlan {
    let res: Vec<(RegionLabel, Option<NearTarget>)> = targets
        .par_iter()
        .map(|&x0| {
            let (label, cp) = src.classify(x0);
            if label != RegionLabel::Near {
                return (label, None);
            }
            let cp = cp.expect("refined near target");
            (label, Some(near_target(src, x0, cp)))
        })
        .collect();
    let (labels, near) = res.into_iter().unzip();
    NearEvalPlan { labels, near }
}

/// Builds the interpolation line for a target with known closest point.
pub fn near_target(src: &SourceSurface, x0: Vec3, cp: ClosestPoint) -> NearTarget {
    let n = normal_at(&src.shape, cp.theta, cp.phi);
    let off = vec3::sub(x0, cp.x);
    let side = if vec3::dot(off, n) >= 0.0 { 1.0 } else { -1.0 };
    let dir = vec3::scale(n, side);
    let dist = vec3::dot(off, dir).max(0.0);
    let mut s_nodes = vec![0.0];
    let mut nodes = Vec::with_capacity(src.params.nodes);
    for l in 1..=src.params.nodes {
        let d = src.params.node_distance(src.h, l);
        s_nodes.push(d);
        nodes.push(vec3::axpy(cp.x, d, dir));
    }
    NearTarget {
        closest: cp,
        side,
        nodes,
        coeffs: barycentric_coeffs(&s_nodes, dist),
    }
}

/// Evaluates the potential of `src` with density `rho` at the planned targets.
///
/// `self_field` holds the expansion of the principal-value self potential (order
/// `p`) used for the on-surface value at the closest point; `rho` is needed in
/// coefficient form for the intermediate grid and the double-layer jump.
pub fn evaluate_plan(
    src: &SourceSurface,
    targets: &[Vec3],
    plan: &NearEvalPlan,
    rho: &[CoeffField; 3],
    self_field: &[CoeffField; 3],
    kernel: Kernel,
) -> Vec<Vec3> {
    let base_rho = density_on_grid(rho, src.base.q);
    let fine_rho = density_on_grid(rho, src.fine.q);
    targets
        .par_iter()
        .enumerate()
        .map(|(t, &x0)| match plan.labels[t] {
            RegionLabel::Far => src.base.eval(kernel, x0, &base_rho),
            RegionLabel::Intermediate => src.fine.eval(kernel, x0, &fine_rho),
            RegionLabel::Near => {
                let nt = plan.near[t].as_ref().expect("near data");
                near_value(src, nt, rho, self_field, kernel, &fine_rho)
            }
        })
        .collect()
}

fn near_value(
    src: &SourceSurface,
    nt: &NearTarget,
    rho: &[CoeffField; 3],
    self_field: &[CoeffField; 3],
    kernel: Kernel,
    fine_rho: &[Vec3],
) -> Vec3 {
    let (th, ph) = (nt.closest.theta, nt.closest.phi);
    let mut on = [0.0; 3];
    for c in 0..3 {
        on[c] = sphgrid::eval_real(&self_field[c], th, ph);
    }
    if kernel == Kernel::Double {
        for c in 0..3 {
            on[c] -= nt.side * 4.0 * PI * sphgrid::eval_real(&rho[c], th, ph);
        }
    }
    let mut acc = vec3::scale(on, nt.coeffs[0]);
    for (l, xl) in nt.nodes.iter().enumerate() {
        let v = src.fine.eval(kernel, *xl, fine_rho);
        acc = vec3::axpy(acc, nt.coeffs[l + 1], v);
    }
    acc
}

/// Single-target nearly-singular evaluation with a freshly computed self field.
pub fn near_eval(
    src: &SourceSurface,
    rho: &[CoeffField; 3],
    kernel: Kernel,
    x0: Vec3,
    singular_order: usize,
) -> Result<Vec3> {
    let (_, cp) = src.classify(x0);
    let cp = match cp {
        Some(c) => c,
        None => {
            let i = src.cells.nearest(&src.base.pos, x0).map(|(i, _)| i).unwrap_or(0);
            let np = src.grid.nphi();
            closest_point(&src.shape, x0, (src.grid.theta[i / np], src.grid.phi[i % np]))
        }
    };
    let nt = near_target(src, x0, cp);
    let plan = SingularPlan::new(&src.shape, singular_order)?;
    let field = plan.apply(rho, kernel)?;
    let self_field = density_coeffs(&field, src.shape.p)?;
    let fine_rho = density_on_grid(rho, src.fine.q);
    Ok(near_value(src, &nt, rho, &self_field, kernel, &fine_rho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn constant_density(p: usize, v: Vec3) -> [CoeffField; 3] {
        let y00 = (4.0 * PI).sqrt();
        let mut out = [CoeffField::zeros(p), CoeffField::zeros(p), CoeffField::zeros(p)];
        for c in 0..3 {
            out[c].set(0, 0, Complex64::new(v[c] * y00, 0.0));
        }
        out
    }

    #[test]
    fn regular_rules() {
        let s = SurfaceShape::sphere(10, 1.0, [0.0; 3]).unwrap();
        let geo = surface::geometry(&s, 1).unwrap();
        let one = GridField { p: 10, values: vec![1.0; geo.npoints()] };
        assert!((regular_integrate(&one, &geo).unwrap() - 4.0 * PI).abs() < 1e-12);
        let mut y20 = CoeffField::zeros(10);
        y20.set(2, 0, Complex64::new(1.0, 0.0));
        let f = geo.grid.synth_real(&y20, Deriv::Value);
        assert!(regular_integrate(&f, &geo).unwrap().abs() < 1e-13);
    }

    #[test]
    fn regular_self_convergence() {
        // ∫ exp(x + z/2) dS on a spheroid, p vs 2p
        let integrand = |p: usize| {
            let s = SurfaceShape::ellipsoid(p, [1.0, 1.0, 2.0], [0.0; 3]).unwrap();
            let geo = surface::geometry(&s, 1).unwrap();
            let f: Vec<f64> = geo.pos.iter().map(|x| (x[0] + 0.5 * x[2]).exp()).collect();
            geo.integrate(&f)
        };
        let a = integrand(8);
        let b = integrand(16);
        let c = integrand(32);
        assert!((b - c).abs() < 1e-3 * (a - c).abs());
        assert!((b - c).abs() / c.abs() < 1e-9);
    }

    #[test]
    fn singular_weights_positive_and_surface_independent() {
        for p in [7, 11, 19, 39] {
            let g = sphgrid::build_grid(p).unwrap();
            let w = singular_weights(&g);
            assert!(w.iter().all(|&x| x > 0.0), "p={p}");
        }
    }

    #[test]
    fn single_layer_unit_density_sphere() {
        // Single layer of the scalar 1/r: Σ_i ω_i W / r = 4π at every target.
        let p = 9;
        let s = SurfaceShape::sphere(p, 1.0, [0.0; 3]).unwrap();
        let plan = SingularPlan::new(&s, p).unwrap();
        for t in [0usize, 7, 55] {
            let blk = plan.block(t).unwrap();
            let x0 = plan.targets[t];
            let sum: f64 = (0..plan.nodes)
                .map(|i| {
                    let o = &blk[i * STRIDE..];
                    o[6] / vec3::norm(vec3::sub(x0, [o[0], o[1], o[2]]))
                })
                .sum();
            assert!((sum - 4.0 * PI).abs() < 1e-12);
        }
    }

    fn identity_error(s: &SurfaceShape) -> f64 {
        let p = s.p;
        let plan = SingularPlan::new(s, p).unwrap();
        let mut err: f64 = 0.0;
        for e in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] {
            let out = plan.apply(&constant_density(p, e), Kernel::Double).unwrap();
            for v in &out {
                err = err.max(vec3::norm(vec3::sub(*v, vec3::scale(e, 4.0 * PI))) / (4.0 * PI));
            }
        }
        err
    }

    #[test]
    fn double_layer_identity_on_surface() {
        let s = SurfaceShape::sphere(15, 1.0, [0.0; 3]).unwrap();
        let err = identity_error(&s);
        assert!(err < 1e-9, "err {err}");
    }

    #[test]
    fn double_layer_identity_spheroid_convergence() {
        let errs: Vec<f64> = [7, 11, 15, 19]
            .iter()
            .map(|&p| identity_error(&SurfaceShape::ellipsoid(p, [1.0, 1.0, 2.0], [0.0; 3]).unwrap()))
            .collect();
        // the local algebraic slope keeps steepening
        let slope = |a: usize, b: usize, pa: f64, pb: f64| (errs[a] / errs[b]).ln() / (pb / pa).ln();
        let s1 = slope(0, 1, 7.0, 11.0);
        let s2 = slope(2, 3, 15.0, 19.0);
        assert!(s2 > s1 && s1 > 2.0, "{errs:?}");
    }

    #[test]
    fn kernel_values() {
        let x0 = [1.0, 0.0, 0.0];
        let v = kernel_term(Kernel::Single, x0, [0.0; 3], [0.0; 3], 1.0, [1.0, 0.0, 0.0]);
        assert!((v[0] - 2.0).abs() < 1e-15);
        let v = kernel_term(Kernel::Single, x0, [0.0; 3], [0.0; 3], 1.0, [0.0, 1.0, 0.0]);
        assert!((v[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cell_list_partition() {
        let s = SurfaceShape::sphere(8, 1.0, [0.0; 3]).unwrap();
        let pos = s.positions(8);
        let cl = CellList::new(&pos, 0.3);
        assert_eq!(cl.len(), pos.len());
        let (i, d) = cl.nearest(&pos, vec3::scale(pos[17], 1.1)).unwrap();
        assert_eq!(i, 17);
        assert!((d - 0.1).abs() < 1e-12);
        assert!(cl.nearest(&pos, [5.0, 0.0, 0.0]).is_none());
    }

    #[test]
    fn closest_point_cases() {
        let s = SurfaceShape::sphere(6, 1.0, [0.0; 3]).unwrap();
        let cp = closest_point(&s, [0.0, 0.0, 2.0], (0.3, 0.5));
        assert!(vec3::norm(vec3::sub(cp.x, [0.0, 0.0, 1.0])) < 1e-10);
        let x = vec3::spherical(1.2, 0.7);
        let cp = closest_point(&s, x, (1.0, 0.9));
        assert!(cp.distance < 1e-10);
    }

    #[test]
    fn closest_point_on_spheroid_vs_dense_sampling() {
        let s = SurfaceShape::ellipsoid(8, [1.0, 1.0, 2.0], [0.0; 3]).unwrap();
        let x0 = [1.1, 0.4, 1.3];
        let g = sphgrid::build_grid(8).unwrap();
        let pos = s.positions(8);
        let (i, _) = pos
            .iter()
            .enumerate()
            .map(|(i, x)| (i, vec3::norm(vec3::sub(*x, x0))))
            .fold((0, f64::MAX), |a, b| if b.1 < a.1 { b } else { a });
        let cp = closest_point(&s, x0, (g.theta[i / g.nphi()], g.phi[i % g.nphi()]));
        assert!(cp.converged);
        // oracle: exact spheroid, dense grid followed by local refinement
        let f = |t: f64, p: f64| {
            let y = [t.sin() * p.cos(), t.sin() * p.sin(), 2.0 * t.cos()];
            vec3::norm(vec3::sub(y, x0))
        };
        let (nt, np) = (2000, 4000);
        let mut best = (f64::MAX, 0.0, 0.0);
        for a in 0..nt {
            let t = PI * (a as f64 + 0.5) / nt as f64;
            for b in 0..np {
                let p = 2.0 * PI * b as f64 / np as f64;
                let d = f(t, p);
                if d < best.0 {
                    best = (d, t, p);
                }
            }
        }
        // two rounds of local zoom around the sampled minimum
        let mut span = (PI / nt as f64, 2.0 * PI / np as f64);
        for _ in 0..2 {
            let (c0, t0, p0) = best;
            let mut b = (c0, t0, p0);
            for a in -100..=100 {
                for c in -100..=100 {
                    let t = t0 + span.0 * a as f64 / 50.0;
                    let p = p0 + span.1 * c as f64 / 50.0;
                    let d = f(t, p);
                    if d < b.0 {
                        b = (d, t, p);
                    }
                }
            }
            best = b;
            span = (span.0 / 50.0, span.1 / 50.0);
        }
        assert!((best.0 - cp.distance).abs() < 1e-6, "{} vs {}", best.0, cp.distance);
    }

    #[test]
    fn barycentric_reproduces_polynomials() {
        let nodes: Vec<f64> = (0..9).map(|l| (l as f64).sqrt()).collect();
        let c = barycentric_coeffs(&nodes, 0.37);
        let v: f64 = c.iter().zip(&nodes).map(|(c, x)| c * (x * x * x - 2.0 * x + 1.0)).sum();
        assert!((v - (0.37f64.powi(3) - 0.74 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn classification_thresholds() {
        let p = 15;
        let s = SurfaceShape::sphere(p, 1.0, [0.0; 3]).unwrap();
        let src = SourceSurface::new(&s, NearParams::default()).unwrap();
        let h = src.h;
        assert_eq!(src.classify([0.0, 0.0, 11.0]).0, RegionLabel::Far);
        assert_eq!(src.classify([0.0, 0.0, 1.0 + 3.0 * h]).0, RegionLabel::Intermediate);
        assert_eq!(src.classify([0.0, 0.0, 1.0 + 0.5 * h]).0, RegionLabel::Near);
        assert_eq!(src.classify([0.3, 0.2, 1.0 + 6.0 * h]).0, RegionLabel::Far);
    }

    #[test]
    fn near_double_layer_identity() {
        let p = 15;
        let s = SurfaceShape::sphere(p, 1.0, [0.0; 3]).unwrap();
        let src = SourceSurface::new(&s, NearParams::default()).unwrap();
        let rho = constant_density(p, [0.0, 1.0, 0.0]);
        let h = src.h;
        let dir = vec3::spherical(1.0, 0.4);
        let out = near_eval(&src, &rho, Kernel::Double, vec3::scale(dir, 1.0 + 0.25 * h), p).unwrap();
        assert!(vec3::norm(out) / (4.0 * PI) < 1e-6, "{out:?}");
        let inn = near_eval(&src, &rho, Kernel::Double, vec3::scale(dir, 1.0 - 0.25 * h), p).unwrap();
        assert!((inn[1] - 8.0 * PI).abs() / (8.0 * PI) < 1e-6, "{inn:?}");
    }
}
