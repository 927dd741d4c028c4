use dropsim_core::stokes::{self, Drop, DropSystem, FarField, StokesParams};
use dropsim_core::surface::{self, SurfaceShape};
use dropsim_core::surfactant::EosParams;
use dropsim_core::vec3;

fn system(shape: SurfaceShape, lambda: f64, flow: FarField) -> DropSystem {
    DropSystem {
        drops: vec![Drop::new(shape, lambda, EosParams::clean()).unwrap()],
        far_field: flow,
        ca: 0.2,
        pe: f64::INFINITY,
        params: StokesParams {
            tol: 1e-12,
            ..StokesParams::default()
        },
    }
}

#[test]
fn clean_sphere_at_rest_stays_at_rest() {
    let sys = system(SurfaceShape::sphere(9, 1.0, [0.0; 3]).unwrap(), 3.0, FarField::Quiescent);
    let sol = stokes::solve_velocity(&sys).unwrap();
    let m = sol.drops[0].values.iter().map(|v| vec3::norm(*v)).fold(0.0, f64::max);
    assert!(m < 1e-10, "{m:e}");
}

#[test]
fn matched_viscosity_sphere_follows_the_imposed_flow() {
    let sys = system(SurfaceShape::sphere(9, 1.0, [0.0; 3]).unwrap(), 1.0, FarField::Extension);
    let sol = stokes::solve_velocity(&sys).unwrap();
    let pos = sys.drops[0].shape.positions(9);
    for (x, u) in pos.iter().zip(&sol.drops[0].values) {
        let want = [0.2 * x[0], -0.2 * x[1], 0.0];
        assert!(vec3::norm(vec3::sub(*u, want)) < 1e-9);
    }
}

#[test]
fn deforming_drop_conserves_volume_and_translates_with_the_flow() {
    let shape = SurfaceShape::ellipsoid(9, [1.0, 0.9, 1.2], [0.0; 3]).unwrap();
    let here = system(shape.clone(), 4.0, FarField::Shear);
    let c = [0.0, 0.7, 0.0];
    let there = system(shape.translated(c), 4.0, FarField::Shear);
    let a = stokes::solve_velocity(&here).unwrap();
    let b = stokes::solve_velocity(&there).unwrap();
    // shear carries the shifted drop along with `Ca·A·c`
    let drift = [0.2 * c[1], 0.0, 0.0];
    for (ua, ub) in a.drops[0].values.iter().zip(&b.drops[0].values) {
        assert!(vec3::norm(vec3::sub(vec3::add(*ua, drift), *ub)) < 1e-8);
    }
    let geo = surface::geometry(&here.drops[0].shape, 1).unwrap();
    let un: Vec<f64> = a.drops[0].normal.clone();
    let flux = geo.integrate(&un);
    assert!(flux.abs() < 1e-8, "volume flux {flux:e}");
}
