//! Per-step measurements: deformation number, volume, area, surfactant mass, gap.

use dropsim_core::sphgrid;
use dropsim_core::stokes::{self, DropSystem};
use dropsim_core::surface::{self, SurfaceShape};
use dropsim_core::surfactant;
use dropsim_core::vec3::{self, Vec3};

use crate::error::{AppError, AppResult};

/// Orthonormal in-plane directions of the flow plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowPlane {
    pub e1: Vec3,
    pub e2: Vec3,
}

impl Default for FlowPlane {
    fn default() -> Self {
        FlowPlane {
            e1: [1.0, 0.0, 0.0],
            e2: [0.0, 1.0, 0.0],
        }
    }
}

/// `max_x e·x` over the surface, refined from the best dense node by damped Newton
/// steps on the parameter angles.
fn support(s: &SurfaceShape, pos: &[Vec3], angles: &[(f64, f64)], e: Vec3) -> f64 {
    let (mut best, mut ib) = (f64::NEG_INFINITY, 0);
    for (i, x) in pos.iter().enumerate() {
        let v = vec3::dot(e, *x);
        if v > best {
            best = v;
            ib = i;
        }
    }
    let (mut t, mut f) = angles[ib];
    let mut mu = 1e-6;
    for _ in 0..30 {
        let d = s.eval(t, f, 2);
        let dot = |sel: fn(&sphgrid::PointDerivs) -> f64| e[0] * sel(&d[0]) + e[1] * sel(&d[1]) + e[2] * sel(&d[2]);
        let (gt, gp) = (dot(|p| p.ft), dot(|p| p.fp));
        let (htt, htp, hpp) = (dot(|p| p.ftt), dot(|p| p.ftp), dot(|p| p.fpp));
        if gt.hypot(gp) < 1e-15 {
            break;
        }
        // ascend: solve (−H + μI) δ = g
        let (a, b, c) = (-htt + mu, -htp, -hpp + mu);
        let det = a * c - b * b;
        if !(det > 0.0) {
            mu = mu * 10.0 + (htt.abs() + hpp.abs());
            continue;
        }
        let dt = (c * gt - b * gp) / det;
        let dp = (a * gp - b * gt) / det;
        let (tn, fp) = (t + dt, f + dp);
        let v = s.eval(tn, fp, 0);
        let val = e[0] * v[0].f + e[1] * v[1].f + e[2] * v[2].f;
        if val >= best {
            best = val;
            t = tn;
            f = fp;
            mu = (mu * 0.1).max(1e-12);
            if dt.hypot(dp) < 1e-14 {
                break;
            }
        } else {
            mu *= 10.0;
            if mu > 1e8 {
                break;
            }
        }
    }
    best
}

/// Deformation number `(L − B)/(L + B)` from caliper widths in the flow plane.
///
/// `L` is the largest in-plane width and `B` the width in the orthogonal
/// in-plane direction.
pub fn deformation_number(s: &SurfaceShape, plane: &FlowPlane) -> AppResult<f64> {
    let q = surface::upsampled_order(s.p, 4);
    let grid = sphgrid::build_grid(q)?;
    let np = grid.nphi();
    let pos = s.positions(q);
    let angles: Vec<(f64, f64)> = (0..grid.npoints()).map(|i| (grid.theta[i / np], grid.phi[i % np])).collect();
    let width = |psi: f64| -> f64 {
        let e = vec3::add(vec3::scale(plane.e1, psi.cos()), vec3::scale(plane.e2, psi.sin()));
        support(s, &pos, &angles, e) + support(s, &pos, &angles, vec3::scale(e, -1.0))
    };
    let nscan = 90;
    let (mut psi_best, mut w_best) = (0.0, f64::NEG_INFINITY);
    for k in 0..nscan {
        let psi = std::f64::consts::PI * k as f64 / nscan as f64;
        let w = width(psi);
        if w > w_best {
            w_best = w;
            psi_best = psi;
        }
    }
    // golden-section refinement of the widest direction
    let step = std::f64::consts::PI / nscan as f64;
    let (mut a, mut b) = (psi_best - step, psi_best + step);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (b - r * (b - a), a + r * (b - a));
    let (mut wc, mut wd) = (width(c), width(d));
    for _ in 0..40 {
        if wc > wd {
            b = d;
            d = c;
            wd = wc;
            c = b - r * (b - a);
            wc = width(c);
        } else {
            a = c;
            c = d;
            wc = wd;
            d = a + r * (b - a);
            wd = width(d);
        }
    }
    let psi = 0.5 * (a + b);
    let l = width(psi).max(w_best);
    let bw = width(psi + 0.5 * std::f64::consts::PI);
    if !(l + bw > 0.0) {
        return Err(AppError::Diagnostics("degenerate projection onto the flow plane".into()));
    }
    Ok((l - bw) / (l + bw))
}

/// Measurements of one drop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropDiagnostics {
    pub deformation: f64,
    pub volume: f64,
    pub area: f64,
    pub mass: f64,
}

pub fn drop_diagnostics(sys: &DropSystem, plane: &FlowPlane) -> AppResult<Vec<DropDiagnostics>> {
    sys.drops
        .iter()
        .map(|d| {
            let geo = surface::geometry(&d.shape, 2)?;
            let (area, volume) = surface::area_volume_geo(&geo);
            Ok(DropDiagnostics {
                deformation: deformation_number(&d.shape, plane)?,
                volume,
                area,
                mass: surfactant::surfactant_mass(&d.gamma, &geo),
            })
        })
        .collect()
}

/// Smallest surface-to-surface distance, `None` for a single drop.
pub fn min_gap(sys: &DropSystem) -> AppResult<Option<f64>> {
    if sys.drops.len() < 2 {
        return Ok(None);
    }
    Ok(Some(stokes::min_gap(sys)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_and_ellipsoids() {
        let plane = FlowPlane::default();
        let s = SurfaceShape::sphere(8, 1.3, [0.2, -0.1, 0.4]).unwrap();
        assert!(deformation_number(&s, &plane).unwrap().abs() < 1e-10);
        let e = SurfaceShape::ellipsoid(8, [2.0, 1.0, 1.0], [0.0; 3]).unwrap();
        assert!((deformation_number(&e, &plane).unwrap() - 1.0 / 3.0).abs() < 1e-10);
        // tilted in the plane by 30 degrees
        let (c, s30) = (30f64.to_radians().cos(), 30f64.to_radians().sin());
        let r = [[c, -s30, 0.0], [s30, c, 0.0], [0.0, 0.0, 1.0]];
        let t = SurfaceShape::ellipsoid(10, [1.5, 1.0, 0.8], [0.0; 3]).unwrap().rotated_points(&r);
        assert!((deformation_number(&t, &plane).unwrap() - 0.2).abs() < 1e-8);
    }
}
