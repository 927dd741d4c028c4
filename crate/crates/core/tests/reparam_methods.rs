use dropsim_core::reparam::{self, ReparamConfig};
use dropsim_core::sphgrid::{self, GridField};
use dropsim_core::surface::{self, SurfaceShape};

fn rel(s: &SurfaceShape, a0: f64, v0: f64) -> f64 {
    let (a, v) = surface::area_volume(s).unwrap();
    ((a - a0) / a0).abs().max(((v - v0) / v0).abs())
}

#[test]
fn point_error_grows_with_pseudo_step_while_angle_error_stays_flat() {
    let p = 7;
    let base = SurfaceShape::ellipsoid(p, [1.0, 1.0, 2.0], [0.0; 3]).unwrap();
    let (d, _) = reparam::distort_grid(&base, 0.01, 3.0, 60).unwrap();
    let vals: Vec<f64> = d.positions(p).iter().map(|x| 2.0 - 0.5 * x[0] + x[1] + 0.5 * x[2]).collect();
    let g = sphgrid::forward_transform(&GridField { p, values: vals }).unwrap();
    let (a0, v0) = surface::area_volume(&d).unwrap();
    let mut angle = Vec::new();
    let mut point = Vec::new();
    for dtau in [0.1, 0.3, 1.0] {
        let cfg = ReparamConfig {
            u_rep: 2,
            dtau,
            ..ReparamConfig::default()
        };
        angle.push(rel(&reparam::angle_reparam(&d, &g, &cfg).unwrap().shape, a0, v0));
        point.push(rel(&reparam::point_reparam(&d, &g, &cfg).unwrap().shape, a0, v0));
    }
    assert!(point.windows(2).all(|w| w[1] > 2.0 * w[0]), "{point:?}");
    let (lo, hi) = angle.iter().fold((f64::INFINITY, 0.0f64), |(l, h), e| (l.min(*e), h.max(*e)));
    assert!(hi < 1.2 * lo, "{angle:?}");
    assert!(hi < point[0]);
}

#[test]
fn angle_reparam_lowers_energy_and_keeps_the_shape() {
    let p = 9;
    let base = SurfaceShape::ellipsoid(p, [1.0, 1.2, 1.6], [0.0; 3]).unwrap();
    let (d, _) = reparam::distort_grid(&base, 0.02, 2.0, 40).unwrap();
    let g = sphgrid::forward_transform(&GridField { p, values: vec![1.0; d.positions(p).len()] }).unwrap();
    let out = reparam::angle_reparam(&d, &g, &ReparamConfig::default()).unwrap();
    assert!(out.energy_final < out.energy_initial);
    let (a0, v0) = surface::area_volume(&d).unwrap();
    assert!(rel(&out.shape, a0, v0) < 1e-3);
}
