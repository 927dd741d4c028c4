use dropsim::config::SimulationConfig;
use dropsim::io::Checkpoint;
use dropsim::runner::{self, CHECKPOINT_FILE, DIAGNOSTICS_FILE};
use dropsim_core::stokes::FarField;

fn small_config(t_max: f64) -> SimulationConfig {
    let text = format!(
        "p = 5\nflow = shear\nca = 0.3\npe = 5\nelasticity = 0.2\ncoverage = 0.3\n\
         drop.0.shape = ellipsoid\ndrop.0.axes = 1, 1, 1.2\ndrop.0.gamma = 1, 0.2, 0, 0\n\
         fixed_dt = 0.05\nt_max = {t_max}\n"
    );
    SimulationConfig::parse(&text, None).unwrap()
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let straight = dir.path().join("straight");
    let split = dir.path().join("split");
    let full = runner::simulate(&small_config(0.3), &straight).unwrap();

    runner::simulate(&small_config(0.15), &split).unwrap();
    let ck_path = split.join(CHECKPOINT_FILE);
    let mut ck = Checkpoint::load(&ck_path).unwrap();
    let mut cfg = SimulationConfig::parse(&ck.config_text, None).unwrap();
    assert_eq!(cfg.flow, FarField::Shear);
    cfg.t_max = 0.3;
    ck.config_text = cfg.to_text();
    ck.save(&ck_path).unwrap();
    let resumed = runner::resume(&ck_path).unwrap();

    assert!((resumed.t - full.t).abs() < 1e-14);
    assert_eq!(resumed.stats.accepted, full.stats.accepted);
    let a = Checkpoint::load(&straight.join(CHECKPOINT_FILE)).unwrap();
    let b = Checkpoint::load(&ck_path).unwrap();
    for (da, db) in a.drops.iter().zip(&b.drops) {
        for c in 0..3 {
            let diff = da.shape.coeffs[c].axpy(-1.0, &db.shape.coeffs[c]).max_abs();
            assert!(diff <= 1e-13, "shape component {c} differs by {diff:e}");
        }
        assert!(da.gamma.axpy(-1.0, &db.gamma).max_abs() <= 1e-13);
    }
    // the resumed run appends to the existing diagnostics
    let rows = std::fs::read_to_string(split.join(DIAGNOSTICS_FILE)).unwrap().lines().count();
    let rows_full = std::fs::read_to_string(straight.join(DIAGNOSTICS_FILE)).unwrap().lines().count();
    assert_eq!(rows, rows_full);
}

#[test]
fn checkpoint_survives_a_byte_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    runner::simulate(&small_config(0.05), dir.path()).unwrap();
    let ck = Checkpoint::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
    assert_eq!(back.to_bytes(), ck.to_bytes());
    assert!(Checkpoint::from_bytes(&ck.to_bytes()[..10]).is_err());
}
