//! Training data: random strain histories and their labelled cell responses.
//!
//! Strains are monotone cubic interpolants of a balanced random walk on a
//! random partition of `[0, T]`. Labels come either from the exact
//! internal-variable model of a two-layer cell or from the forced cell solver.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::homogenize::kv_exact_params;
use crate::material::{MaterialProfile, ProfileKind};
use crate::microsolver::{analytic_cell_2piece, solve_cell_forced, Trajectory};
use crate::signal::{sample_count, Pchip, Signal};

/// Strain sampler settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MuConfig {
    pub t_final: f64,
    pub n_pieces: usize,
    /// Knot increments are `+-step_scale` times the interval length.
    pub step_scale: f64,
    pub seed: u64,
}

impl Default for MuConfig {
    fn default() -> Self {
        Self { t_final: 4.0, n_pieces: 10, step_scale: 1.0, seed: 0 }
    }
}

impl MuConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_pieces < 2 {
            return Err(Error::Configuration(format!("n_pieces must be >= 2, got {}", self.n_pieces)));
        }
        if !(self.t_final > 0.0) || !(self.step_scale > 0.0) {
            return Err(Error::Configuration("t_final and step_scale must be positive".into()));
        }
        Ok(())
    }
}

/// One random strain history as a continuous signal.
pub fn sample_mu_signal(cfg: &MuConfig) -> Result<Signal> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let t_end = cfg.t_final;
    let times = loop {
        let mut t: Vec<f64> = (1..cfg.n_pieces).map(|_| rng.random::<f64>() * t_end).collect();
        t.sort_by(f64::total_cmp);
        t.insert(0, 0.0);
        t.push(t_end);
        // a repeated knot has probability ~0; draw again if it happens
        if t.windows(2).all(|w| w[1] > w[0]) {
            break t;
        }
    };
    let mut values = Vec::with_capacity(times.len());
    values.push(0.0);
    for k in 1..times.len() {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        values.push(values[k - 1] + sign * cfg.step_scale * (times[k] - times[k - 1]));
    }
    Ok(Signal::Pchip(Pchip::new(times, values)?))
}

/// Strain and strain rate of one draw on the grid `k * dt`.
pub fn sample_mu(cfg: &MuConfig, dt: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = sample_count(dt, cfg.t_final)?;
    Ok(sample_mu_signal(cfg)?.sample(dt, n))
}

/// How stresses are computed for each strain draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Labeler {
    /// Exact internal-variable model of a two-layer Kelvin-Voigt cell; also records `xi`, `xi'`.
    Analytic2Piece,
    /// Forced cell solver with `n_nodes` nodes (ignored for layered cells).
    CellFd { n_nodes: usize },
}

impl Labeler {
    pub fn id(&self) -> String {
        match self {
            Labeler::Analytic2Piece => "analytic_2piece".into(),
            Labeler::CellFd { n_nodes } => format!("cell_fd(n_nodes={n_nodes})"),
        }
    }
}

/// Everything needed to generate a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n: usize,
    /// Stored step.
    pub dt: f64,
    /// Labelling step; `dt` must be a multiple of it.
    pub fine_dt: f64,
    pub labeler: Labeler,
    /// `seed` is the base seed; trajectory `i` uses `seed + i`.
    pub mu: MuConfig,
}

/// Origin of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub profile_digest: String,
    pub profile: String,
    pub generator: String,
    pub seed: u64,
    pub n_pieces: usize,
    pub step_scale: f64,
    pub fine_dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dt: f64,
    pub t_final: f64,
    /// Samples per trajectory.
    pub len: usize,
    pub trajectories: Vec<Trajectory>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.trajectories.len()
    }

    pub fn hidden_dim(&self) -> Option<usize> {
        self.trajectories.first().and_then(|t| t.hidden_dim())
    }

    pub fn validate(&self) -> Result<()> {
        for (i, tr) in self.trajectories.iter().enumerate() {
            tr.validate()?;
            if tr.len() != self.len || (tr.dt - self.dt).abs() > 1e-12 * self.dt {
                return Err(Error::Format(format!("trajectory {i} has a different length or step")));
            }
            if tr.b.first().is_some_and(|b| b.abs() > 1e-14) {
                return Err(Error::Format(format!("trajectory {i} does not start from zero strain")));
            }
            if tr.hidden_dim() != self.hidden_dim() {
                return Err(Error::Format(format!("trajectory {i} has different hidden channels")));
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> Vec<String> {
        let mut c: Vec<String> = ["t", "b", "c", "sigma"].iter().map(|s| s.to_string()).collect();
        if let Some(l) = self.hidden_dim() {
            c.extend((1..=l).map(|j| format!("xi_{j}")));
            c.extend((1..=l).map(|j| format!("xidot_{j}")));
        }
        c
    }
}

fn stride_of(dt: f64, fine_dt: f64) -> Result<usize> {
    if !(fine_dt > 0.0) || !(dt > 0.0) {
        return Err(Error::Configuration("dataset steps must be positive".into()));
    }
    let r = dt / fine_dt;
    if (r - r.round()).abs() > 1e-9 * r || r.round() < 1.0 {
        return Err(Error::Configuration(format!("dt = {dt} is not a multiple of fine_dt = {fine_dt}")));
    }
    Ok(r.round() as usize)
}

/// Draws `spec.n` strains and labels them, in parallel on the current rayon pool.
pub fn build_dataset(profile: &MaterialProfile, spec: &DatasetSpec) -> Result<Dataset> {
    spec.mu.validate()?;
    let stride = stride_of(spec.dt, spec.fine_dt)?;
    let t_final = spec.mu.t_final;
    let len = sample_count(spec.dt, t_final).map_err(|e| Error::Configuration(e.to_string()))?;
    sample_count(spec.fine_dt, t_final).map_err(|e| Error::Configuration(e.to_string()))?;
    let params = match spec.labeler {
        Labeler::Analytic2Piece => {
            if profile.kind() != ProfileKind::PiecewiseKv || profile.layer_count() != Some(2) {
                return Err(Error::Configuration(
                    "the analytic labeler needs a two-layer Kelvin-Voigt profile".into(),
                ));
            }
            Some(kv_exact_params(profile)?)
        }
        Labeler::CellFd { .. } => {
            if profile.kind() == ProfileKind::PiecewiseSls {
                return Err(Error::Configuration("the cell labeler needs a Kelvin-Voigt profile".into()));
            }
            None
        }
    };
    let trajectories = (0..spec.n)
        .into_par_iter()
        .map(|i| {
            let mu = MuConfig { seed: spec.mu.seed.wrapping_add(i as u64), ..spec.mu.clone() };
            let b = sample_mu_signal(&mu)?;
            let fine = match (spec.labeler, &params) {
                (Labeler::Analytic2Piece, Some(p)) => analytic_cell_2piece(p, &b, spec.fine_dt, t_final)?,
                (Labeler::CellFd { n_nodes }, _) => solve_cell_forced(profile, &b, spec.fine_dt, t_final, n_nodes)?,
                _ => unreachable!("labeler parameters resolved above"),
            };
            Ok(fine.subsample(stride))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        dt: spec.dt,
        t_final,
        len,
        trajectories,
        provenance: Provenance {
            profile_digest: profile.digest(),
            profile: profile.describe(),
            generator: spec.labeler.id(),
            seed: spec.mu.seed,
            n_pieces: spec.mu.n_pieces,
            step_scale: spec.mu.step_scale,
            fine_dt: spec.fine_dt,
        },
    })
}

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    dt: f64,
    t_final: f64,
    n: usize,
    len: usize,
    hidden_dim: usize,
    channels: Vec<String>,
    files: Vec<String>,
    provenance: Provenance,
}

fn trajectory_file(i: usize) -> String {
    format!("traj_{i:05}.csv")
}

/// Writes `manifest.toml` plus one CSV per trajectory into `dir`.
pub fn write_dataset(data: &Dataset, dir: &Path) -> Result<()> {
    data.validate()?;
    fs::create_dir_all(dir)?;
    let files: Vec<String> = (0..data.n()).map(trajectory_file).collect();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dt: data.dt,
        t_final: data.t_final,
        n: data.n(),
        len: data.len,
        hidden_dim: data.hidden_dim().unwrap_or(0),
        channels: data.channels(),
        files: files.clone(),
        provenance: data.provenance.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(dir.join("manifest.toml"), text)?;
    let header = data.channels().join(",");
    for (tr, name) in data.trajectories.iter().zip(&files) {
        let mut out = BufWriter::new(fs::File::create(dir.join(name))?);
        writeln!(out, "{header}")?;
        for k in 0..tr.len() {
            write!(out, "{:.16e},{:.16e},{:.16e},{:.16e}", k as f64 * data.dt, tr.b[k], tr.c[k], tr.sigma[k])?;
            if let (Some(x), Some(r)) = (&tr.xi, &tr.xi_rate) {
                for v in x.row(k).iter().chain(r.row(k).iter()) {
                    write!(out, ",{v:.16e}")?;
                }
            }
            writeln!(out)?;
        }
        out.flush()?;
    }
    Ok(())
}

/// Reads a dataset written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(dir.join("manifest.toml"))?;
    let m: Manifest = toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported dataset format version {}", m.format_version)));
    }
    if m.files.len() != m.n {
        return Err(Error::Format("manifest file list does not match n".into()));
    }
    let l = m.hidden_dim;
    let width = 4 + 2 * l;
    let mut trajectories = Vec::with_capacity(m.n);
    for name in &m.files {
        let reader = BufReader::new(fs::File::open(dir.join(name))?);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m.len);
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if i == 0 {
                if line.split(',').count() != width {
                    return Err(Error::Format(format!("{name}: header has the wrong column count")));
                }
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("{name} line {}: {e}", i + 1)))?;
            if row.len() != width {
                return Err(Error::Format(format!("{name} line {}: expected {width} fields", i + 1)));
            }
            rows.push(row);
        }
        if rows.len() != m.len {
            return Err(Error::Format(format!("{name}: expected {} rows, found {}", m.len, rows.len())));
        }
        let col = |j: usize| rows.iter().map(|r| r[j]).collect::<Vec<f64>>();
        let (xi, xi_rate) = if l > 0 {
            let xi = Array2::from_shape_fn((m.len, l), |(k, j)| rows[k][4 + j]);
            let xr = Array2::from_shape_fn((m.len, l), |(k, j)| rows[k][4 + l + j]);
            (Some(xi), Some(xr))
        } else {
            (None, None)
        };
        trajectories.push(Trajectory { dt: m.dt, b: col(1), c: col(2), sigma: col(3), xi, xi_rate });
    }
    let data = Dataset { dt: m.dt, t_final: m.t_final, len: m.len, trajectories, provenance: m.provenance };
    data.validate()?;
    Ok(data)
}
