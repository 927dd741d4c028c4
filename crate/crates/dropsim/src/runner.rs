//! Batch driver behind `simulate` and `resume`.
//!
//! The driver writes `diagnostics.csv` after every accepted step, surface
//! snapshots and checkpoints at the configured cadence, and a final checkpoint
//! when the run ends or the solver fails.

use std::path::{Path, PathBuf};

use dropsim_core::evolve::{Evolver, RunStats, StokesModel};
use dropsim_core::sphgrid::{self, GridField};
use dropsim_core::stokes::{Drop, DropSystem};
use dropsim_core::surface::{self, SurfaceShape};
use dropsim_core::surfactant;
use dropsim_core::vec3;

use crate::config::{GammaSpec, ShapeSpec, SimulationConfig};
use crate::diagnostics::{self, DropDiagnostics, FlowPlane};
use crate::error::{io_err, AppError, AppResult};
use crate::io::{self, Checkpoint, CheckpointDrop, DiagnosticsRow, DiagnosticsWriter};

pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

/// Window over which the steady-state rate `|ΔD|/Δt` is measured.
const STEADY_WINDOW: f64 = 1.0;

fn shape_of(spec: &ShapeSpec, p: usize, center: [f64; 3]) -> AppResult<(SurfaceShape, Option<sphgrid::CoeffField>)> {
    Ok(match spec {
        ShapeSpec::Sphere { radius } => (SurfaceShape::sphere(p, *radius, center)?, None),
        ShapeSpec::Ellipsoid { axes } => (SurfaceShape::ellipsoid(p, *axes, center)?, None),
        ShapeSpec::File(path) => {
            let fields = io::read_coefficients(path)?;
            let get = |name: &str| fields.iter().find(|f| f.0 == name).map(|f| f.1.resample(p));
            let missing = |c: &str| AppError::CoefficientFile {
                path: path.clone(),
                msg: format!("missing coordinate `{c}`"),
            };
            let x = get("x").ok_or_else(|| missing("x"))?;
            let y = get("y").ok_or_else(|| missing("y"))?;
            let z = get("z").ok_or_else(|| missing("z"))?;
            (SurfaceShape::new([x, y, z])?.translated(center), get("gamma"))
        }
    })
}

/// Drops, far field and parameters described by `cfg`.
pub fn build_system(cfg: &SimulationConfig) -> AppResult<DropSystem> {
    cfg.validate()?;
    let eos = cfg.eos()?;
    let mut drops = Vec::with_capacity(cfg.drops.len());
    for spec in &cfg.drops {
        let (shape, file_gamma) = shape_of(&spec.shape, cfg.p, spec.center)?;
        let mut drop = Drop::new(shape, spec.lambda, eos)?;
        drop.gamma = match &spec.gamma {
            GammaSpec::Linear([a, b, c, d]) => {
                let center = spec.center;
                let values = drop
                    .shape
                    .positions(cfg.p)
                    .iter()
                    .map(|x| {
                        let r = vec3::sub(*x, center);
                        a + b * r[0] + c * r[1] + d * r[2]
                    })
                    .collect();
                sphgrid::forward_transform(&GridField { p: cfg.p, values })?
            }
            GammaSpec::File(path) => {
                let fields = io::read_coefficients(path)?;
                let g = fields.iter().find(|f| f.0 == "gamma").ok_or_else(|| AppError::CoefficientFile {
                    path: path.clone(),
                    msg: "missing field `gamma`".into(),
                })?;
                g.1.resample(cfg.p)
            }
        };
        if let (ShapeSpec::File(_), Some(g), GammaSpec::Linear(_)) = (&spec.shape, file_gamma, &spec.gamma) {
            // a shape file that carries Γ overrides only the default uniform field
            if spec.gamma == GammaSpec::Linear([1.0, 0.0, 0.0, 0.0]) {
                drop.gamma = g;
            }
        }
        if cfg.normalize_gamma {
            let geo = surface::geometry(&drop.shape, 2)?;
            drop.gamma = surfactant::normalize_mean(&drop.gamma, &geo)?;
        }
        drops.push(drop);
    }
    Ok(DropSystem {
        drops,
        far_field: cfg.flow,
        ca: cfg.ca,
        pe: cfg.pe,
        params: cfg.stokes_params(),
    })
}

pub fn build_evolver(cfg: &SimulationConfig) -> AppResult<Evolver<StokesModel>> {
    let sys = build_system(cfg)?;
    Ok(Evolver::new(sys, StokesModel::default(), cfg.evolve_config())?)
}

/// Snapshot of the evolver state.
pub fn checkpoint_of(ev: &Evolver<StokesModel>, cfg: &SimulationConfig) -> Checkpoint {
    Checkpoint {
        t: ev.t,
        dt: ev.dt,
        accepted: ev.stats.accepted as u64,
        rejected: ev.stats.rejected as u64,
        stokes_evaluations: ev.stats.stokes_evaluations as u64,
        config_text: cfg.to_text(),
        warm_start: ev.model.warm_start().map(<[f64]>::to_vec).unwrap_or_default(),
        drops: ev
            .sys
            .drops
            .iter()
            .map(|d| CheckpointDrop {
                lambda: d.lambda,
                shape: d.shape.clone(),
                gamma: d.gamma.clone(),
            })
            .collect(),
    }
}

/// Rebuilds the configuration and the evolver stored in a checkpoint.
pub fn restore(ck: &Checkpoint) -> AppResult<(SimulationConfig, Evolver<StokesModel>)> {
    let cfg = SimulationConfig::parse(&ck.config_text, None)?;
    if ck.drops.len() != cfg.drops.len() {
        return Err(AppError::Checkpoint(format!(
            "{} drops stored, configuration has {}",
            ck.drops.len(),
            cfg.drops.len()
        )));
    }
    let eos = cfg.eos()?;
    let drops = ck
        .drops
        .iter()
        .map(|d| {
            let mut drop = Drop::new(d.shape.clone(), d.lambda, eos)?;
            drop.gamma = d.gamma.clone();
            Ok(drop)
        })
        .collect::<dropsim_core::Result<Vec<_>>>()?;
    let sys = DropSystem {
        drops,
        far_field: cfg.flow,
        ca: cfg.ca,
        pe: cfg.pe,
        params: cfg.stokes_params(),
    };
    let mut model = StokesModel::default();
    model.set_warm_start((!ck.warm_start.is_empty()).then(|| ck.warm_start.clone()));
    let mut ev = Evolver::new(sys, model, cfg.evolve_config())?;
    ev.t = ck.t;
    ev.dt = ck.dt;
    ev.stats = RunStats {
        accepted: ck.accepted as usize,
        rejected: ck.rejected as usize,
        stokes_evaluations: ck.stokes_evaluations as usize,
    };
    Ok((cfg, ev))
}

/// Outcome of a run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub t: f64,
    pub stats: RunStats,
    /// Stopped by the steady-state rule before `t_max`.
    pub steady: bool,
    pub initial: Vec<DropDiagnostics>,
    pub last: Vec<DropDiagnostics>,
    /// Smallest surface gap over all accepted steps.
    pub min_gap: Option<f64>,
    /// Largest `max(err_drop, err_surfactant)` over accepted steps.
    pub max_step_error: f64,
    pub out_dir: PathBuf,
}

impl RunSummary {
    /// Largest relative volume change of any drop.
    pub fn volume_error(&self) -> f64 {
        rel_change(&self.initial, &self.last, |d| d.volume)
    }

    /// Largest relative surfactant mass change of any drop.
    pub fn mass_error(&self) -> f64 {
        rel_change(&self.initial, &self.last, |d| d.mass)
    }
}

fn rel_change(a: &[DropDiagnostics], b: &[DropDiagnostics], f: fn(&DropDiagnostics) -> f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| ((f(y) - f(x)) / f(x)).abs())
        .fold(0.0, f64::max)
}

/// Runs the configuration from `t = 0`, writing outputs into `out`.
pub fn simulate(cfg: &SimulationConfig, out: &Path) -> AppResult<RunSummary> {
    let ev = build_evolver(cfg)?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    drive(cfg, ev, out, false)
}

/// Continues the run stored in `checkpoint`, appending to the outputs in its directory.
pub fn resume(checkpoint: &Path) -> AppResult<RunSummary> {
    let ck = Checkpoint::load(checkpoint)?;
    let (cfg, ev) = restore(&ck)?;
    let out = checkpoint.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    drive(&cfg, ev, &out, true)
}

fn drive(cfg: &SimulationConfig, mut ev: Evolver<StokesModel>, out: &Path, append: bool) -> AppResult<RunSummary> {
    let plane = FlowPlane::default();
    let initial = diagnostics::drop_diagnostics(&ev.sys, &plane)?;
    let csv_path = out.join(DIAGNOSTICS_FILE);
    let mut writer = DiagnosticsWriter::open(&csv_path, ev.sys.drops.len(), append)?;
    let ck_path = out.join(CHECKPOINT_FILE);
    let mut min_gap = diagnostics::min_gap(&ev.sys)?;
    let mut history: Vec<(f64, Vec<f64>)> = vec![(ev.t, initial.iter().map(|d| d.deformation).collect())];
    let mut last = initial.clone();
    let mut max_err = 0.0f64;
    let mut steady = false;
    let eps = 1e-12 * cfg.t_max.abs().max(1.0);
    log::info!("run from t = {} to t = {} with {} drops", ev.t, cfg.t_max, ev.sys.drops.len());
    while ev.t < cfg.t_max - eps {
        let rep = match ev.step(cfg.t_max - ev.t) {
            Ok(r) => r,
            Err(e) => {
                log::error!("solver failure at t = {}: {e}; writing {}", ev.t, ck_path.display());
                checkpoint_of(&ev, cfg).save(&ck_path)?;
                return Err(e.into());
            }
        };
        if !rep.accepted {
            log::debug!("rejected dt = {:.3e} at t = {:.4}", rep.dt, ev.t);
            continue;
        }
        max_err = max_err.max(rep.err_drop.max(rep.err_surfactant));
        let diag = diagnostics::drop_diagnostics(&ev.sys, &plane)?;
        let gap = diagnostics::min_gap(&ev.sys)?;
        if let Some(g) = gap {
            min_gap = Some(min_gap.map_or(g, |m| m.min(g)));
        }
        writer.write(&DiagnosticsRow {
            t: rep.t,
            dt: rep.dt,
            stokes_evaluations: rep.stokes_evaluations,
            gmres_iterations: rep.gmres_iterations,
            stage_iterations: rep.stage_iterations,
            min_gap: gap,
            drops: diag.clone(),
            reparam_iterations: rep.reparam_iterations.clone(),
        })?;
        let n = ev.stats.accepted;
        if cfg.snapshot_every > 0 && n % cfg.snapshot_every == 0 {
            io::write_vtk(&out.join(format!("surface_{n:06}.vtk")), &ev.sys, 2)?;
        }
        if cfg.checkpoint_every > 0 && n % cfg.checkpoint_every == 0 {
            checkpoint_of(&ev, cfg).save(&ck_path)?;
        }
        log::info!(
            "t = {:.4} dt = {:.3e} D = {:?}",
            rep.t,
            rep.dt,
            diag.iter().map(|d| d.deformation).collect::<Vec<_>>()
        );
        history.push((rep.t, diag.iter().map(|d| d.deformation).collect()));
        last = diag;
        if let Some(tol) = cfg.steady_tol {
            if steady_rate(&history).is_some_and(|r| r < tol) {
                steady = true;
                log::info!("steady state at t = {:.4}", ev.t);
                break;
            }
        }
    }
    checkpoint_of(&ev, cfg).save(&ck_path)?;
    Ok(RunSummary {
        t: ev.t,
        stats: ev.stats,
        steady,
        initial,
        last,
        min_gap,
        max_step_error: max_err,
        out_dir: out.to_path_buf(),
    })
}

/// `max_d |D_d(t) − D_d(t − τ)| / τ` for the latest entry at least one window back.
fn steady_rate(history: &[(f64, Vec<f64>)]) -> Option<f64> {
    let (t, now) = history.last()?;
    let (t0, then) = history.iter().rev().find(|(s, _)| *s <= t - STEADY_WINDOW)?;
    let dt = t - t0;
    Some(now.iter().zip(then).map(|(a, b)| (a - b).abs() / dt).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steady_rate_uses_window() {
        let h: Vec<(f64, Vec<f64>)> = (0..=20).map(|i| (0.1 * i as f64, vec![0.01 * i as f64])).collect();
        let r = steady_rate(&h).unwrap();
        assert!((r - 0.1).abs() < 1e-12);
        assert!(steady_rate(&h[..5]).is_none());
    }

    #[test]
    fn initial_gamma_has_unit_mean() {
        let mut cfg = SimulationConfig::default();
        cfg.p = 8;
        cfg.drops[0].shape = ShapeSpec::Ellipsoid { axes: [1.0, 1.3, 0.8] };
        cfg.drops[0].gamma = GammaSpec::Linear([3.0, 0.5, 0.0, 1.0]);
        let sys = build_system(&cfg).unwrap();
        let geo = surface::geometry(&sys.drops[0].shape, 2).unwrap();
        let (area, _) = surface::area_volume(&sys.drops[0].shape).unwrap();
        let mean = surfactant::surfactant_mass(&sys.drops[0].gamma, &geo) / area;
        assert!((mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_gamma_is_exact() {
        let mut cfg = SimulationConfig::default();
        cfg.normalize_gamma = false;
        cfg.p = 6;
        cfg.drops[0].center = [0.5, 0.0, 0.0];
        cfg.drops[0].gamma = GammaSpec::Linear([2.0, 0.5, -1.0, 0.25]);
        let sys = build_system(&cfg).unwrap();
        let d = &sys.drops[0];
        let grid = sphgrid::build_grid(6).unwrap();
        let vals = grid.synth_real(&d.gamma, sphgrid::Deriv::Value).values;
        for (x, v) in d.shape.positions(6).iter().zip(vals) {
            let want = 2.0 + 0.5 * (x[0] - 0.5) - x[1] + 0.25 * x[2];
            assert!((v - want).abs() < 1e-12);
        }
    }
}
