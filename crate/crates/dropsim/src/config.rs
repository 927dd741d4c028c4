//! Flat `key = value` simulation configuration.
//!
//! Lines starting with `#` are comments. Per-drop keys carry the drop index,
//! e.g. `drop.1.center = 0, 0.5, 0`. Every key is optional; the defaults match
//! [`SimulationConfig::default`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dropsim_core::evolve::{Estimator, EvolveConfig, ReparamMode, Scheme, StepController};
use dropsim_core::quadrature::{NearParams, Spacing};
use dropsim_core::reparam::{Filter, ReparamConfig};
use dropsim_core::stokes::{FarField, StokesParams};
use dropsim_core::surfactant::EosParams;
use dropsim_core::vec3::Vec3;

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, PartialEq)]
pub enum ShapeSpec {
    Sphere { radius: f64 },
    Ellipsoid { axes: [f64; 3] },
    /// Coefficient file, see [`crate::io::read_coefficients`].
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum GammaSpec {
    /// `Γ = a + b x + c y + d z` with coordinates relative to the drop center.
    Linear([f64; 4]),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropSpec {
    pub shape: ShapeSpec,
    pub center: Vec3,
    pub lambda: f64,
    pub gamma: GammaSpec,
}

impl Default for DropSpec {
    fn default() -> Self {
        DropSpec {
            shape: ShapeSpec::Sphere { radius: 1.0 },
            center: [0.0; 3],
            lambda: 1.0,
            gamma: GammaSpec::Linear([1.0, 0.0, 0.0, 0.0]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReparamKind {
    Off,
    Angle,
    Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub p: usize,
    pub flow: FarField,
    pub ca: f64,
    pub pe: f64,
    pub elasticity: f64,
    pub coverage: f64,
    pub drops: Vec<DropSpec>,
    /// Scale each drop's initial `Γ` to unit surface mean.
    pub normalize_gamma: bool,
    pub scheme: Scheme,
    pub estimator: Estimator,
    pub tol: f64,
    pub dt0: f64,
    pub dt_max: f64,
    pub fixed_dt: Option<f64>,
    pub tol_stokes: f64,
    pub near: NearParams,
    pub reparam_kind: ReparamKind,
    pub reparam: ReparamConfig,
    pub t_max: f64,
    /// Stop early once every `|dD/dt|` falls below this rate.
    pub steady_tol: Option<f64>,
    /// Surface snapshot every k-th accepted step; 0 disables snapshots.
    pub snapshot_every: usize,
    /// Checkpoint every k-th accepted step; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            p: 13,
            flow: FarField::Quiescent,
            ca: 0.1,
            pe: f64::INFINITY,
            elasticity: 0.0,
            coverage: 0.0,
            drops: vec![DropSpec::default()],
            normalize_gamma: true,
            scheme: Scheme::Midpoint,
            estimator: Estimator::Conservation,
            tol: 1e-3,
            dt0: 1e-3,
            dt_max: 0.1,
            fixed_dt: None,
            tol_stokes: 1e-8,
            near: NearParams::default(),
            reparam_kind: ReparamKind::Angle,
            reparam: ReparamConfig::default(),
            t_max: 1.0,
            steady_tol: None,
            snapshot_every: 0,
            checkpoint_every: 0,
        }
    }
}

fn fmt_f(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        // shortest representation that parses back exactly
        format!("{v:?}")
    }
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f(*x)).collect::<Vec<_>>().join(", ")
}

fn key_err(key: &str, msg: impl Into<String>) -> AppError {
    AppError::Key {
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn parse_f(key: &str, v: &str) -> AppResult<f64> {
    match v.trim() {
        "inf" | "infinity" => Ok(f64::INFINITY),
        s => s.parse().map_err(|_| key_err(key, format!("expected a number, got {s:?}"))),
    }
}

fn parse_u(key: &str, v: &str) -> AppResult<usize> {
    v.trim()
        .parse()
        .map_err(|_| key_err(key, format!("expected a non-negative integer, got {:?}", v.trim())))
}

fn parse_list<const N: usize>(key: &str, v: &str) -> AppResult<[f64; N]> {
    let items: Vec<f64> = v.split(',').map(|s| parse_f(key, s)).collect::<AppResult<_>>()?;
    items
        .try_into()
        .map_err(|_| key_err(key, format!("expected {N} comma-separated numbers")))
}

fn parse_opt_f(key: &str, v: &str) -> AppResult<Option<f64>> {
    match v.trim() {
        "none" | "off" => Ok(None),
        s => parse_f(key, s).map(Some),
    }
}

fn parse_opt_u(key: &str, v: &str) -> AppResult<Option<usize>> {
    match v.trim() {
        "none" | "adaptive" => Ok(None),
        s => parse_u(key, s).map(Some),
    }
}

fn flow_name(f: &FarField) -> String {
    match f {
        FarField::Quiescent => "quiescent".into(),
        FarField::Shear => "shear".into(),
        FarField::Extension => "extension".into(),
        FarField::FourRoll { .. } => "fourroll".into(),
        FarField::Custom(_) => "custom".into(),
    }
}

impl SimulationConfig {
    /// Parses configuration text; relative file paths resolve against `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> AppResult<Self> {
        let mut kv = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| AppError::Parse {
                line: lineno + 1,
                msg: format!("expected `key = value`, got {line:?}"),
            })?;
            let k = k.trim().to_string();
            if kv.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(key_err(&k, "duplicate key"));
            }
        }
        let mut c = SimulationConfig::default();
        let ndrops = match kv.remove("drops") {
            Some(v) => parse_u("drops", &v)?,
            None => 1,
        };
        if ndrops == 0 {
            return Err(key_err("drops", "at least one drop is required"));
        }
        c.drops = vec![DropSpec::default(); ndrops];
        let mut alpha = None;
        let mut flow = None;
        let mut gradient: Option<[f64; 9]> = None;
        let resolve = |v: &str| -> PathBuf {
            let p = PathBuf::from(v);
            match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        };
        for (k, v) in &kv {
            let k = k.as_str();
            match k {
                "p" => c.p = parse_u(k, v)?,
                "flow" => flow = Some(v.clone()),
                "alpha" => alpha = Some(parse_f(k, v)?),
                "gradient" => gradient = Some(parse_list::<9>(k, v)?),
                "ca" => c.ca = parse_f(k, v)?,
                "pe" => c.pe = parse_f(k, v)?,
                "elasticity" => c.elasticity = parse_f(k, v)?,
                "coverage" => c.coverage = parse_f(k, v)?,
                "normalize_gamma" => {
                    c.normalize_gamma = v.parse().map_err(|_| key_err(k, "expected true or false"))?;
                }
                "scheme" => c.scheme = Scheme::parse(v).map_err(|e| key_err(k, e.to_string()))?,
                "estimator" => c.estimator = Estimator::parse(v).map_err(|e| key_err(k, e.to_string()))?,
                "tol" => c.tol = parse_f(k, v)?,
                "dt0" => c.dt0 = parse_f(k, v)?,
                "dt_max" => c.dt_max = parse_f(k, v)?,
                "fixed_dt" => c.fixed_dt = parse_opt_f(k, v)?,
                "tol_stokes" => c.tol_stokes = parse_f(k, v)?,
                "near.a_mult" => c.near.a_mult = parse_f(k, v)?,
                "near.upsample" => c.near.upsample = parse_u(k, v)?,
                "near.nodes" => c.near.nodes = parse_u(k, v)?,
                "near.spacing" => {
                    c.near.spacing = match v.as_str() {
                        "sqrt" => Spacing::Sqrt,
                        "uniform" => Spacing::Uniform,
                        _ => return Err(key_err(k, "expected sqrt or uniform")),
                    }
                }
                "reparam" => {
                    c.reparam_kind = match v.as_str() {
                        "off" => ReparamKind::Off,
                        "angle" => ReparamKind::Angle,
                        "point" => ReparamKind::Point,
                        _ => return Err(key_err(k, "expected off, angle or point")),
                    }
                }
                "reparam.p_cutoff" => c.reparam.p_cutoff = parse_f(k, v)?,
                "reparam.filter" => {
                    c.reparam.filter = match v.as_str() {
                        "lowpass" => Filter::LowPass,
                        "ramp" => Filter::Ramp,
                        _ => return Err(key_err(k, "expected lowpass or ramp")),
                    }
                }
                "reparam.eps" => c.reparam.eps = parse_f(k, v)?,
                "reparam.i_max" => c.reparam.i_max = parse_u(k, v)?,
                "reparam.dtau" => c.reparam.dtau = parse_f(k, v)?,
                "reparam.u_rep" => c.reparam.u_rep = parse_u(k, v)?,
                "reparam.cutoff" => c.reparam.fixed_cutoff = parse_opt_u(k, v)?,
                "t_max" => c.t_max = parse_f(k, v)?,
                "steady_tol" => c.steady_tol = parse_opt_f(k, v)?,
                "output.snapshot_every" => c.snapshot_every = parse_u(k, v)?,
                "output.checkpoint_every" => c.checkpoint_every = parse_u(k, v)?,
                _ => {
                    let Some(rest) = k.strip_prefix("drop.") else {
                        return Err(key_err(k, "unknown key"));
                    };
                    let (idx, field) = rest.split_once('.').ok_or_else(|| key_err(k, "unknown key"))?;
                    let i = parse_u(k, idx)?;
                    let d = c
                        .drops
                        .get_mut(i)
                        .ok_or_else(|| key_err(k, format!("drop index {i} but drops = {ndrops}")))?;
                    match field {
                        "shape" => {
                            d.shape = match v.as_str() {
                                "sphere" => ShapeSpec::Sphere { radius: 1.0 },
                                "ellipsoid" => ShapeSpec::Ellipsoid { axes: [1.0; 3] },
                                "file" => ShapeSpec::File(PathBuf::new()),
                                _ => return Err(key_err(k, "expected sphere, ellipsoid or file")),
                            }
                        }
                        "center" => d.center = parse_list::<3>(k, v)?,
                        "lambda" => d.lambda = parse_f(k, v)?,
                        "gamma" => d.gamma = GammaSpec::Linear(parse_list::<4>(k, v)?),
                        "gamma_file" => d.gamma = GammaSpec::File(resolve(v)),
                        "radius" | "axes" | "file" => {}
                        _ => return Err(key_err(k, "unknown key")),
                    }
                }
            }
        }
        // shape parameters depend on the shape kind, so they are read second
        for (i, d) in c.drops.iter_mut().enumerate() {
            let get = |f: &str| kv.get(&format!("drop.{i}.{f}"));
            match &mut d.shape {
                ShapeSpec::Sphere { radius } => {
                    if let Some(v) = get("radius") {
                        *radius = parse_f(&format!("drop.{i}.radius"), v)?;
                    }
                }
                ShapeSpec::Ellipsoid { axes } => {
                    if let Some(v) = get("axes") {
                        *axes = parse_list::<3>(&format!("drop.{i}.axes"), v)?;
                    }
                }
                ShapeSpec::File(path) => {
                    let key = format!("drop.{i}.file");
                    *path = resolve(get("file").ok_or_else(|| key_err(&key, "required for shape = file"))?);
                }
            }
        }
        c.flow = match flow.as_deref().unwrap_or("quiescent") {
            "quiescent" => FarField::Quiescent,
            "shear" => FarField::Shear,
            "extension" => FarField::Extension,
            "fourroll" => FarField::FourRoll {
                alpha: alpha.ok_or_else(|| key_err("alpha", "required for flow = fourroll"))?,
            },
            "custom" => {
                let g = gradient.ok_or_else(|| key_err("gradient", "required for flow = custom"))?;
                FarField::Custom([[g[0], g[1], g[2]], [g[3], g[4], g[5]], [g[6], g[7], g[8]]])
            }
            other => return Err(key_err("flow", format!("unknown flow {other:?}"))),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text, path.parent())
    }

    pub fn validate(&self) -> AppResult<()> {
        let check = |ok: bool, key: &str, msg: &str| if ok { Ok(()) } else { Err(key_err(key, msg)) };
        check(self.p >= 2, "p", "expansion order must be at least 2")?;
        check(self.ca.is_finite() && self.ca >= 0.0, "ca", "must be finite and non-negative")?;
        check(self.pe > 0.0, "pe", "must be positive (inf disables diffusion)")?;
        check((0.0..1.0).contains(&self.coverage), "coverage", "must lie in [0, 1)")?;
        check(self.elasticity >= 0.0 && self.elasticity.is_finite(), "elasticity", "must be non-negative")?;
        check(self.tol > 0.0, "tol", "must be positive")?;
        check(self.dt0 > 0.0, "dt0", "must be positive")?;
        check(self.dt_max > 0.0, "dt_max", "must be positive")?;
        check(self.fixed_dt.is_none_or(|d| d > 0.0), "fixed_dt", "must be positive")?;
        check(self.tol_stokes > 0.0 && self.tol_stokes < 1.0, "tol_stokes", "must lie in (0, 1)")?;
        check(self.near.a_mult > 1.0, "near.a_mult", "must exceed 1")?;
        check(self.near.upsample >= 1, "near.upsample", "must be at least 1")?;
        check(self.near.nodes >= 1, "near.nodes", "must be at least 1")?;
        check(self.t_max > 0.0 && self.t_max.is_finite(), "t_max", "must be positive and finite")?;
        check(self.steady_tol.is_none_or(|s| s > 0.0), "steady_tol", "must be positive")?;
        self.reparam.validate().map_err(|e| key_err("reparam", e.to_string()))?;
        self.flow.gradient().map_err(|e| key_err("flow", e.to_string()))?;
        for (i, d) in self.drops.iter().enumerate() {
            check(d.lambda >= 0.0 && d.lambda.is_finite(), &format!("drop.{i}.lambda"), "must be non-negative")?;
            match &d.shape {
                ShapeSpec::Sphere { radius } => check(*radius > 0.0, &format!("drop.{i}.radius"), "must be positive")?,
                ShapeSpec::Ellipsoid { axes } => {
                    check(axes.iter().all(|a| *a > 0.0), &format!("drop.{i}.axes"), "must be positive")?
                }
                ShapeSpec::File(_) => {}
            }
        }
        Ok(())
    }

    /// Serialized form accepted by [`SimulationConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("p", self.p.to_string());
        kv("flow", flow_name(&self.flow));
        match self.flow {
            FarField::FourRoll { alpha } => kv("alpha", fmt_f(alpha)),
            FarField::Custom(a) => kv("gradient", fmt_list(&a.concat())),
            _ => {}
        }
        kv("ca", fmt_f(self.ca));
        kv("pe", fmt_f(self.pe));
        kv("elasticity", fmt_f(self.elasticity));
        kv("coverage", fmt_f(self.coverage));
        kv("normalize_gamma", self.normalize_gamma.to_string());
        kv("scheme", self.scheme.name().into());
        kv("estimator", self.estimator.name().into());
        kv("tol", fmt_f(self.tol));
        kv("dt0", fmt_f(self.dt0));
        kv("dt_max", fmt_f(self.dt_max));
        kv("fixed_dt", self.fixed_dt.map_or("none".into(), fmt_f));
        kv("tol_stokes", fmt_f(self.tol_stokes));
        kv("near.a_mult", fmt_f(self.near.a_mult));
        kv("near.upsample", self.near.upsample.to_string());
        kv("near.nodes", self.near.nodes.to_string());
        kv(
            "near.spacing",
            match self.near.spacing {
                Spacing::Sqrt => "sqrt",
                Spacing::Uniform => "uniform",
            }
            .into(),
        );
        kv(
            "reparam",
            match self.reparam_kind {
                ReparamKind::Off => "off",
                ReparamKind::Angle => "angle",
                ReparamKind::Point => "point",
            }
            .into(),
        );
        kv("reparam.p_cutoff", fmt_f(self.reparam.p_cutoff));
        kv(
            "reparam.filter",
            match self.reparam.filter {
                Filter::LowPass => "lowpass",
                Filter::Ramp => "ramp",
            }
            .into(),
        );
        kv("reparam.eps", fmt_f(self.reparam.eps));
        kv("reparam.i_max", self.reparam.i_max.to_string());
        kv("reparam.dtau", fmt_f(self.reparam.dtau));
        kv("reparam.u_rep", self.reparam.u_rep.to_string());
        kv("reparam.cutoff", self.reparam.fixed_cutoff.map_or("adaptive".into(), |c| c.to_string()));
        kv("t_max", fmt_f(self.t_max));
        kv("steady_tol", self.steady_tol.map_or("none".into(), fmt_f));
        kv("output.snapshot_every", self.snapshot_every.to_string());
        kv("output.checkpoint_every", self.checkpoint_every.to_string());
        kv("drops", self.drops.len().to_string());
        for (i, d) in self.drops.iter().enumerate() {
            match &d.shape {
                ShapeSpec::Sphere { radius } => {
                    kv(&format!("drop.{i}.shape"), "sphere".into());
                    kv(&format!("drop.{i}.radius"), fmt_f(*radius));
                }
                ShapeSpec::Ellipsoid { axes } => {
                    kv(&format!("drop.{i}.shape"), "ellipsoid".into());
                    kv(&format!("drop.{i}.axes"), fmt_list(axes));
                }
                ShapeSpec::File(p) => {
                    kv(&format!("drop.{i}.shape"), "file".into());
                    kv(&format!("drop.{i}.file"), p.display().to_string());
                }
            }
            kv(&format!("drop.{i}.center"), fmt_list(&d.center));
            kv(&format!("drop.{i}.lambda"), fmt_f(d.lambda));
            match &d.gamma {
                GammaSpec::Linear(c) => kv(&format!("drop.{i}.gamma"), fmt_list(c)),
                GammaSpec::File(p) => kv(&format!("drop.{i}.gamma_file"), p.display().to_string()),
            }
        }
        s
    }

    pub fn eos(&self) -> AppResult<EosParams> {
        if self.coverage == 0.0 || self.elasticity == 0.0 {
            return Ok(EosParams::clean());
        }
        Ok(EosParams::new(self.elasticity, self.coverage)?)
    }

    pub fn stokes_params(&self) -> StokesParams {
        StokesParams {
            near: self.near,
            tol: self.tol_stokes,
            ..StokesParams::default()
        }
    }

    pub fn evolve_config(&self) -> EvolveConfig {
        EvolveConfig {
            scheme: self.scheme,
            controller: StepController {
                tol: self.tol,
                dt: self.dt0,
                dt_max: self.dt_max,
                estimator: self.estimator,
                fixed_dt: self.fixed_dt,
                ..StepController::default()
            },
            reparam: match self.reparam_kind {
                ReparamKind::Off => ReparamMode::Off,
                ReparamKind::Angle => ReparamMode::Angle(self.reparam),
                ReparamKind::Point => ReparamMode::Point(self.reparam),
            },
            ..EvolveConfig::default()
        }
    }
}
