//! Output files: diagnostics table, surface snapshots, checkpoints, coefficient files.
//!
//! Checkpoint layout, all little-endian:
//!
//! ```text
//! magic  b"DSCK"      u32 version (1)
//! f64 t, f64 dt       u64 accepted, u64 rejected, u64 stokes evaluations
//! u64 len + UTF-8     configuration text
//! u64 len + f64s      GMRES warm start (may be empty)
//! u32 drops, then per drop:
//!   u32 p, f64 lambda, 4 × (p+1)² complex coefficients (x, y, z, Γ) as (re, im)
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use dropsim_core::sphgrid::{self, CoeffField};
use dropsim_core::stokes::DropSystem;
use dropsim_core::surface::{self, SurfaceShape};
use dropsim_core::surfactant;

use crate::diagnostics::DropDiagnostics;
use crate::error::{io_err, AppError, AppResult};

/// One row of `diagnostics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub dt: f64,
    pub stokes_evaluations: usize,
    pub gmres_iterations: usize,
    pub stage_iterations: usize,
    pub min_gap: Option<f64>,
    pub drops: Vec<DropDiagnostics>,
    pub reparam_iterations: Vec<usize>,
}

pub struct DiagnosticsWriter {
    w: csv::Writer<BufWriter<File>>,
    path: PathBuf,
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> AppError + '_ {
    move |e| AppError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

impl DiagnosticsWriter {
    pub fn header(ndrops: usize) -> Vec<String> {
        let mut h: Vec<String> = ["t", "dt", "stokes_evaluations", "gmres_iterations", "stage_iterations", "min_gap"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for i in 0..ndrops {
            for k in ["D", "volume", "area", "mass", "reparam_iterations"] {
                h.push(format!("{k}_{i}"));
            }
        }
        h
    }

    /// Creates the file, or appends to it when `append` is set and it exists.
    pub fn open(path: &Path, ndrops: usize, append: bool) -> AppResult<Self> {
        let exists = append && path.exists();
        let file = std::fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(exists)
            .truncate(!exists)
            .open(path)
            .map_err(io_err(path))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        if !exists {
            w.write_record(Self::header(ndrops)).map_err(csv_err(path))?;
        }
        Ok(DiagnosticsWriter {
            w,
            path: path.to_path_buf(),
        })
    }

    pub fn write(&mut self, r: &DiagnosticsRow) -> AppResult<()> {
        let mut rec = vec![
            format!("{:e}", r.t),
            format!("{:e}", r.dt),
            r.stokes_evaluations.to_string(),
            r.gmres_iterations.to_string(),
            r.stage_iterations.to_string(),
            r.min_gap.map_or(String::new(), |g| format!("{g:e}")),
        ];
        for (d, it) in r.drops.iter().zip(&r.reparam_iterations) {
            rec.push(format!("{:e}", d.deformation));
            rec.push(format!("{:e}", d.volume));
            rec.push(format!("{:e}", d.area));
            rec.push(format!("{:e}", d.mass));
            rec.push(it.to_string());
        }
        self.w.write_record(&rec).map_err(csv_err(&self.path))?;
        self.w.flush().map_err(io_err(&self.path))
    }
}

/// Legacy ASCII polygonal surface on the upsampled `(θ, φ)` lattice with `Γ` and `σ`.
///
/// Poles are closed by triangle fans around points evaluated at `θ = 0, π`.
pub fn write_vtk(path: &Path, sys: &DropSystem, upsample: usize) -> AppResult<()> {
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let mut points = Vec::new();
    let mut gamma = Vec::new();
    let mut sigma = Vec::new();
    let mut polys: Vec<Vec<usize>> = Vec::new();
    for d in &sys.drops {
        let q = surface::upsampled_order(d.shape.p, upsample);
        let grid = sphgrid::build_grid(q)?;
        let (nt, np) = (grid.ntheta(), grid.nphi());
        let base = points.len();
        points.extend(d.shape.positions(q));
        let mut g = grid.synth_real(&d.gamma.resample(q), sphgrid::Deriv::Value).values;
        let north = d.shape.eval(0.0, 0.0, 0);
        let south = d.shape.eval(std::f64::consts::PI, 0.0, 0);
        points.push([north[0].f, north[1].f, north[2].f]);
        points.push([south[0].f, south[1].f, south[2].f]);
        g.push(sphgrid::eval_real(&d.gamma, 0.0, 0.0));
        g.push(sphgrid::eval_real(&d.gamma, std::f64::consts::PI, 0.0));
        // snapshots stay usable when Γ leaves the equation-of-state domain
        let s = surfactant::eos_sigma(&g, &d.eos).unwrap_or_else(|_| vec![f64::NAN; g.len()]);
        gamma.extend(g);
        sigma.extend(s);
        let id = |j: usize, k: usize| base + j * np + (k % np);
        for j in 0..nt - 1 {
            for k in 0..np {
                polys.push(vec![id(j, k), id(j, k + 1), id(j + 1, k + 1), id(j + 1, k)]);
            }
        }
        let (pn, ps) = (base + nt * np, base + nt * np + 1);
        for k in 0..np {
            polys.push(vec![pn, id(0, k + 1), id(0, k)]);
            polys.push(vec![ps, id(nt - 1, k), id(nt - 1, k + 1)]);
        }
    }
    let e = io_err(path);
    let mut body = String::new();
    use std::fmt::Write as _;
    let _ = writeln!(body, "# vtk DataFile Version 3.0\ndrop surfaces\nASCII\nDATASET POLYDATA");
    let _ = writeln!(body, "POINTS {} double", points.len());
    for x in &points {
        let _ = writeln!(body, "{:.15e} {:.15e} {:.15e}", x[0], x[1], x[2]);
    }
    let size: usize = polys.iter().map(|p| p.len() + 1).sum();
    let _ = writeln!(body, "POLYGONS {} {}", polys.len(), size);
    for p in &polys {
        let ids: Vec<String> = p.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(body, "{} {}", p.len(), ids.join(" "));
    }
    let _ = writeln!(body, "POINT_DATA {}", points.len());
    for (name, vals) in [("gamma", &gamma), ("sigma", &sigma)] {
        let _ = writeln!(body, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for v in vals.iter() {
            let _ = writeln!(body, "{v:.15e}");
        }
    }
    out.write_all(body.as_bytes()).map_err(e)?;
    out.flush().map_err(io_err(path))
}

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub t: f64,
    pub dt: f64,
    pub accepted: u64,
    pub rejected: u64,
    pub stokes_evaluations: u64,
    pub config_text: String,
    pub warm_start: Vec<f64>,
    pub drops: Vec<CheckpointDrop>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointDrop {
    pub lambda: f64,
    pub shape: SurfaceShape,
    pub gamma: CoeffField,
}

const MAGIC: &[u8; 4] = b"DSCK";
const VERSION: u32 = 1;

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        for v in [self.t, self.dt] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        for v in [self.accepted, self.rejected, self.stokes_evaluations] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b.extend_from_slice(&(self.config_text.len() as u64).to_le_bytes());
        b.extend_from_slice(self.config_text.as_bytes());
        b.extend_from_slice(&(self.warm_start.len() as u64).to_le_bytes());
        for v in &self.warm_start {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b.extend_from_slice(&(self.drops.len() as u32).to_le_bytes());
        for d in &self.drops {
            b.extend_from_slice(&(d.shape.p as u32).to_le_bytes());
            b.extend_from_slice(&d.lambda.to_le_bytes());
            for c in d.shape.coeffs.iter().chain(std::iter::once(&d.gamma)) {
                for z in &c.data {
                    b.extend_from_slice(&z.re.to_le_bytes());
                    b.extend_from_slice(&z.im.to_le_bytes());
                }
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> AppResult<Self> {
        let mut r = Reader { b: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(AppError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(AppError::Checkpoint(format!("unsupported version {version}")));
        }
        let (t, dt) = (r.f64()?, r.f64()?);
        let (accepted, rejected, stokes_evaluations) = (r.u64()?, r.u64()?, r.u64()?);
        let n = r.u64()? as usize;
        let config_text = String::from_utf8(r.take(n)?.to_vec())
            .map_err(|_| AppError::Checkpoint("configuration is not UTF-8".into()))?;
        let n = r.u64()? as usize;
        let warm_start = (0..n).map(|_| r.f64()).collect::<AppResult<_>>()?;
        let nd = r.u32()? as usize;
        let mut drops = Vec::with_capacity(nd);
        for _ in 0..nd {
            let p = r.u32()? as usize;
            let lambda = r.f64()?;
            let mut fields = Vec::with_capacity(4);
            for _ in 0..4 {
                let mut c = CoeffField::zeros(p);
                for z in c.data.iter_mut() {
                    *z = Complex64::new(r.f64()?, r.f64()?);
                }
                fields.push(c);
            }
            let gamma = fields.pop().expect("four fields");
            let coeffs: [CoeffField; 3] = fields.try_into().expect("three fields");
            drops.push(CheckpointDrop {
                lambda,
                shape: SurfaceShape { p, coeffs },
                gamma,
            });
        }
        if r.pos != bytes.len() {
            return Err(AppError::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint {
            t,
            dt,
            accepted,
            rejected,
            stokes_evaluations,
            config_text,
            warm_start,
            drops,
        })
    }

    pub fn save(&self, path: &Path) -> AppResult<()> {
        // write-then-rename so an interrupted write never leaves a torn checkpoint
        let tmp = path.with_extension("bin.tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, path).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(io_err(path))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> AppResult<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.b.len());
        let end = end.ok_or_else(|| AppError::Checkpoint("truncated file".into()))?;
        let s = &self.b[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> AppResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> AppResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> AppResult<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Reads expansion coefficients from whitespace-separated lines `field n m re im`.
///
/// `field` is one of `x`, `y`, `z`, `gamma`; `#` starts a comment. Entries with
/// `m < 0` are optional and filled from the real-field symmetry if absent.
pub fn read_coefficients(path: &Path) -> AppResult<Vec<(String, CoeffField)>> {
    let f = File::open(path).map_err(io_err(path))?;
    let bad = |msg: String| AppError::CoefficientFile {
        path: path.to_path_buf(),
        msg,
    };
    let mut entries: Vec<(String, usize, i64, Complex64)> = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let line = line.split('#').next().unwrap_or("").trim().to_string();
        if line.is_empty() {
            continue;
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 5 {
            return Err(bad(format!("line {}: expected `field n m re im`", i + 1)));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("line {}: bad number {s:?}", i + 1)));
        let n: usize = t[1].parse().map_err(|_| bad(format!("line {}: bad degree", i + 1)))?;
        let m: i64 = t[2].parse().map_err(|_| bad(format!("line {}: bad order", i + 1)))?;
        if m.unsigned_abs() as usize > n {
            return Err(bad(format!("line {}: |m| > n", i + 1)));
        }
        entries.push((t[0].to_string(), n, m, Complex64::new(num(t[3])?, num(t[4])?)));
    }
    let p = entries.iter().map(|e| e.1).max().ok_or_else(|| bad("no coefficients".into()))?;
    let mut out: Vec<(String, CoeffField)> = Vec::new();
    for name in ["x", "y", "z", "gamma"] {
        let mine: Vec<_> = entries.iter().filter(|e| e.0 == name).collect();
        if mine.is_empty() {
            continue;
        }
        let mut c = CoeffField::zeros(p.max(1));
        for e in mine.iter().filter(|e| e.2 >= 0) {
            c.set_real(e.1, e.2, e.3);
        }
        for e in mine.iter().filter(|e| e.2 < 0) {
            c.set(e.1, e.2, e.3);
        }
        out.push((name.to_string(), c));
    }
    if let Some(e) = entries.iter().find(|e| !["x", "y", "z", "gamma"].contains(&e.0.as_str())) {
        return Err(bad(format!("unknown field {:?}", e.0)));
    }
    Ok(out)
}

/// Writes coefficients in the format of [`read_coefficients`] (`m >= 0` only).
pub fn write_coefficients(path: &Path, fields: &[(&str, &CoeffField)]) -> AppResult<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let mut s = String::new();
    use std::fmt::Write as _;
    for (name, c) in fields {
        for n in 0..=c.p {
            for m in 0..=n as i64 {
                let z = c.get(n, m);
                let _ = writeln!(s, "{name} {n} {m} {:e} {:e}", z.re, z.im);
            }
        }
    }
    w.write_all(s.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip() {
        let s = SurfaceShape::ellipsoid(5, [1.0, 1.2, 0.8], [0.1, 0.0, 0.0]).unwrap();
        let mut g = CoeffField::zeros(5);
        g.set_real(2, 1, Complex64::new(0.3, -0.2));
        let c = Checkpoint {
            t: 1.25,
            dt: 0.0123,
            accepted: 10,
            rejected: 2,
            stokes_evaluations: 24,
            config_text: "p = 5\n".into(),
            warm_start: vec![1.0, -2.5],
            drops: vec![CheckpointDrop {
                lambda: 0.5,
                shape: s,
                gamma: g,
            }],
        };
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        let bytes = c.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"XXXX").is_err());
    }
}
