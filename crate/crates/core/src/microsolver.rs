//! Fine-scale reference solvers.
//!
//! * [`solve_multiscale_fem`]: the oscillating-coefficient Kelvin-Voigt wave
//!   equation on the macroscopic domain, resolved down to the cell scale.
//! * [`solve_cell_forced`]: the unit cell driven by a prescribed average strain.
//! * [`analytic_cell_2piece`]: the same cell response computed from the exact
//!   internal-variable model.
//!
//! The dynamic solvers share one explicit driver: P1 elements, lumped mass
//! `rho h` per node, symplectic Euler (leapfrog with half-step velocities).
//! The viscous force uses the velocity of the previous half step, so the
//! scheme stays fully explicit.

use std::io::{BufRead, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::constitutive::{analytic_stress, analytic_xi_rate, StepScheme};
use crate::error::{Error, Result};
use crate::homogenize::HomogenizedParams;
use crate::material::{MaterialProfile, ProfileKind};
use crate::signal::{sample_count, Signal};

/// Body force `f(x, t)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BodyForce {
    #[default]
    Zero,
    Constant { value: f64 },
}

impl BodyForce {
    pub fn eval(&self, _x: f64, _t: f64) -> f64 {
        match self {
            BodyForce::Zero => 0.0,
            BodyForce::Constant { value } => *value,
        }
    }
}

/// Initial displacement or velocity field on `[0, L]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialField {
    #[default]
    Zero,
    /// `amplitude * sin(mode pi x / L)`; vanishes at both ends.
    SineMode { amplitude: f64, mode: u32 },
}

impl InitialField {
    pub fn eval(&self, x: f64, length: f64) -> f64 {
        match self {
            InitialField::Zero => 0.0,
            InitialField::SineMode { amplitude, mode } => {
                amplitude * (*mode as f64 * std::f64::consts::PI * x / length).sin()
            }
        }
    }
}

/// Dirichlet data: fixed left end, prescribed right-end displacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    #[serde(default)]
    pub left: f64,
    pub right: Signal,
}

impl Default for Boundary {
    fn default() -> Self {
        Self { left: 0.0, right: Signal::Zero }
    }
}

/// Settings shared by the fine-scale and homogenized dynamic solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub domain_length: f64,
    /// Microstructure period; only the multiscale solver reads it.
    pub epsilon: Option<f64>,
    pub h: f64,
    pub dt: f64,
    pub t_final: f64,
    pub rho: f64,
    pub forcing: BodyForce,
    pub boundary: Boundary,
    pub initial_u: InitialField,
    pub initial_v: InitialField,
    /// Keep every `output_stride`-th step (the last step is always kept).
    pub output_stride: usize,
    /// Internal-variable integrator of the homogenized solver.
    pub scheme: StepScheme,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            domain_length: 1.0,
            epsilon: None,
            h: 0.005,
            dt: 0.1 * 0.005 * 0.005,
            t_final: 4.0,
            rho: 1.0,
            forcing: BodyForce::Zero,
            boundary: Boundary::default(),
            initial_u: InitialField::Zero,
            initial_v: InitialField::Zero,
            output_stride: 1,
            scheme: StepScheme::ForwardEuler,
        }
    }
}

impl SimConfig {
    /// Fine-scale run under `b(t) = 0.1 sin(2 pi t)`: `h = 0.005`, `dt = 0.1 h^2`.
    pub fn fem_sinusoidal(epsilon: f64, t_final: f64) -> Self {
        let h = 0.005;
        Self {
            epsilon: Some(epsilon),
            h,
            dt: 0.1 * h * h,
            t_final,
            boundary: Boundary { left: 0.0, right: Signal::Sine { amplitude: 0.1, frequency: 1.0 } },
            output_stride: 4000,
            ..Self::default()
        }
    }

    /// Homogenized run under the same forcing: `h = 0.04`, `dt = 0.4 h^2`.
    pub fn macro_sinusoidal(t_final: f64) -> Self {
        let h = 0.04;
        Self {
            epsilon: None,
            h,
            dt: 0.4 * h * h,
            t_final,
            boundary: Boundary { left: 0.0, right: Signal::Sine { amplitude: 0.1, frequency: 1.0 } },
            output_stride: 16,
            ..Self::default()
        }
    }

    pub fn element_count(&self) -> Result<usize> {
        if !(self.h > 0.0) || !(self.domain_length > 0.0) {
            return Err(Error::Configuration("mesh width and domain length must be positive".into()));
        }
        let n = self.domain_length / self.h;
        let r = n.round();
        if (n - r).abs() > 1e-9 * n || r < 2.0 {
            return Err(Error::Configuration(format!(
                "domain length {} is not a multiple (>= 2) of h = {}",
                self.domain_length, self.h
            )));
        }
        Ok(r as usize)
    }

    pub fn step_count(&self) -> Result<usize> {
        sample_count(self.dt, self.t_final)
            .map(|n| n - 1)
            .map_err(|e| Error::Configuration(e.to_string()))
    }

    pub(crate) fn validate(&self) -> Result<(usize, usize)> {
        if !(self.rho > 0.0) {
            return Err(Error::Configuration(format!(
                "explicit dynamics needs rho > 0, got {}",
                self.rho
            )));
        }
        if self.output_stride == 0 {
            return Err(Error::Configuration("output_stride must be at least 1".into()));
        }
        Ok((self.element_count()?, self.step_count()?))
    }

    /// Largest stable step for an element with stiffness `e` and viscosity `nu`.
    pub fn max_stable_dt(&self, e: f64, nu: f64) -> f64 {
        let m = self.rho * self.h * self.h;
        let gamma = 4.0 * nu / m;
        let omega2 = 4.0 * e / m;
        let diffusive = if nu > 0.0 { 0.5 * m / nu } else { f64::INFINITY };
        // dt gamma + dt^2 omega^2 / 2 <= 2 bounds every discrete mode
        let modal = if omega2 > 0.0 {
            (-gamma + (gamma * gamma + 4.0 * omega2).sqrt()) / omega2
        } else if gamma > 0.0 {
            2.0 / gamma
        } else {
            f64::INFINITY
        };
        diffusive.min(modal)
    }

    pub(crate) fn check_stability(&self, e: f64, nu: f64) -> Result<()> {
        let limit = self.max_stable_dt(e, nu);
        if self.dt > limit {
            return Err(Error::Configuration(format!(
                "dt = {} exceeds the explicit stability limit {limit:.6e} (E+ = {e}, nu+ = {nu}, rho = {}, h = {})",
                self.dt, self.rho, self.h
            )));
        }
        Ok(())
    }
}

/// Space-time displacement history.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub times: Vec<f64>,
    pub nodes: Vec<f64>,
    /// Rows are output times, columns nodes.
    pub displacement: Array2<f64>,
    /// Absent when read back from CSV.
    pub config: Option<SimConfig>,
    pub solver: String,
}

impl SimResult {
    /// Long-form CSV `t,x,u`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,x,u")?;
        for (i, t) in self.times.iter().enumerate() {
            for (j, x) in self.nodes.iter().enumerate() {
                writeln!(out, "{:.16e},{:.16e},{:.16e}", t, x, self.displacement[[i, j]])?;
            }
        }
        Ok(())
    }

    /// Reads the format written by [`SimResult::write_csv`].
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut rows: Vec<(f64, f64, f64)> = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if n == 0 {
                if line.trim() != "t,x,u" {
                    return Err(Error::Format(format!("expected header t,x,u, found {line:?}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))?;
            if f.len() != 3 {
                return Err(Error::Format(format!("line {}: expected 3 fields", n + 1)));
            }
            rows.push((f[0], f[1], f[2]));
        }
        if rows.is_empty() {
            return Err(Error::Format("no data rows".into()));
        }
        let t0 = rows[0].0;
        let n_nodes = rows.iter().take_while(|r| r.0 == t0).count();
        if rows.len() % n_nodes != 0 {
            return Err(Error::Format("rows do not form a full time x node table".into()));
        }
        let n_times = rows.len() / n_nodes;
        let nodes: Vec<f64> = rows[..n_nodes].iter().map(|r| r.1).collect();
        let mut times = Vec::with_capacity(n_times);
        let mut displacement = Array2::zeros((n_times, n_nodes));
        for i in 0..n_times {
            times.push(rows[i * n_nodes].0);
            for j in 0..n_nodes {
                let r = rows[i * n_nodes + j];
                if r.0 != times[i] || r.1 != nodes[j] {
                    return Err(Error::Format(format!("row {} breaks the time x node layout", i * n_nodes + j + 2)));
                }
                displacement[[i, j]] = r.2;
            }
        }
        Ok(Self { times, nodes, displacement, config: None, solver: "csv".into() })
    }
}

/// Explicit P1 driver. `stress` receives the step index, time, element strains
/// and strain rates, and fills element stresses. Also returns the final
/// half-step nodal velocities.
pub(crate) fn explicit_dynamics(
    cfg: &SimConfig,
    solver: &str,
    mut stress: impl FnMut(usize, f64, &[f64], &[f64], &mut [f64]) -> Result<()>,
) -> Result<(SimResult, Vec<f64>)> {
    let (n_el, n_steps) = cfg.validate()?;
    let h = cfg.h;
    let dt = cfg.dt;
    let nodes: Vec<f64> = (0..=n_el).map(|i| i as f64 * h).collect();
    let mut u: Vec<f64> = nodes.iter().map(|&x| cfg.initial_u.eval(x, cfg.domain_length)).collect();
    let mut v: Vec<f64> = nodes.iter().map(|&x| cfg.initial_v.eval(x, cfg.domain_length)).collect();
    let right = &cfg.boundary.right;
    u[0] = cfg.boundary.left;
    v[0] = 0.0;
    u[n_el] = right.value(0.0);
    v[n_el] = right.rate(0.0);

    let n_out = n_steps / cfg.output_stride + 1 + usize::from(n_steps % cfg.output_stride != 0);
    let mut times = Vec::with_capacity(n_out);
    let mut displacement = Array2::zeros((n_out, n_el + 1));
    let mut record = |row: usize, t: f64, u: &[f64], times: &mut Vec<f64>| {
        times.push(t);
        displacement.row_mut(row).iter_mut().zip(u).for_each(|(d, x)| *d = *x);
    };
    record(0, 0.0, &u, &mut times);
    let mut row = 1;

    let mut strain = vec![0.0; n_el];
    let mut rate = vec![0.0; n_el];
    let mut sigma = vec![0.0; n_el];
    let inv_mass = 1.0 / (cfg.rho * h);
    for step in 0..n_steps {
        let t = step as f64 * dt;
        for e in 0..n_el {
            strain[e] = (u[e + 1] - u[e]) / h;
            rate[e] = (v[e + 1] - v[e]) / h;
        }
        stress(step, t, &strain, &rate, &mut sigma)?;
        for i in 1..n_el {
            let f = h * cfg.forcing.eval(nodes[i], t);
            v[i] += dt * inv_mass * (sigma[i] - sigma[i - 1] + f);
            u[i] += dt * v[i];
        }
        let t1 = (step + 1) as f64 * dt;
        let b1 = right.value(t1);
        v[n_el] = (b1 - u[n_el]) / dt;
        u[n_el] = b1;
        if (step + 1) % cfg.output_stride == 0 || step + 1 == n_steps {
            if let Some(i) = u.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("displacement at node {i}, step {}", step + 1)));
            }
            record(row, t1, &u, &mut times);
            row += 1;
        }
    }
    debug_assert_eq!(row, n_out);
    let result = SimResult { times, nodes, displacement, config: Some(cfg.clone()), solver: solver.into() };
    Ok((result, v))
}

/// Element-midpoint coefficients `(E, nu)` of the `eps`-periodic material.
pub fn element_coefficients(profile: &MaterialProfile, cfg: &SimConfig) -> Result<Vec<(f64, f64)>> {
    let n_el = cfg.element_count()?;
    let eps = cfg
        .epsilon
        .ok_or_else(|| Error::Configuration("multiscale solve needs epsilon".into()))?;
    let ratio = eps / cfg.h;
    if !(ratio.round() >= 4.0) || (ratio - ratio.round()).abs() > 1e-9 * ratio {
        return Err(Error::Configuration(format!(
            "epsilon / h = {ratio} must be an integer >= 4 to resolve the cell"
        )));
    }
    (0..n_el)
        .map(|e| {
            let y = ((e as f64 + 0.5) * cfg.h / eps).fract();
            profile.sample(y)
        })
        .collect()
}

/// Kelvin-Voigt wave equation with `eps`-periodic coefficients `E(x/eps)`, `nu(x/eps)`.
pub fn solve_multiscale_fem(profile: &MaterialProfile, cfg: &SimConfig) -> Result<SimResult> {
    if profile.kind() == ProfileKind::PiecewiseSls {
        return Err(Error::Unsupported("the fine-scale solver handles Kelvin-Voigt profiles".into()));
    }
    cfg.validate()?;
    let coeff = element_coefficients(profile, cfg)?;
    let e_max = coeff.iter().map(|c| c.0).fold(0.0, f64::max);
    let nu_max = coeff.iter().map(|c| c.1).fold(0.0, f64::max);
    cfg.check_stability(e_max, nu_max)?;
    explicit_dynamics(cfg, "fem", |_, _, strain, rate, sigma| {
        for (k, s) in sigma.iter_mut().enumerate() {
            *s = coeff[k].0 * strain[k] + coeff[k].1 * rate[k];
        }
        Ok(())
    })
    .map(|(result, _)| result)
}

/// Time-sampled strain, strain rate and stress with optional internal channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Rows are time samples.
    pub xi: Option<Array2<f64>>,
    pub xi_rate: Option<Array2<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    pub fn hidden_dim(&self) -> Option<usize> {
        self.xi.as_ref().map(|x| x.ncols())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.b.len();
        for len in [self.c.len(), self.sigma.len()] {
            if len != n {
                return Err(Error::Dimension { expected: n, got: len });
            }
        }
        match (&self.xi, &self.xi_rate) {
            (None, None) => Ok(()),
            (Some(x), Some(r)) => {
                if x.nrows() != n || r.nrows() != n {
                    return Err(Error::Dimension { expected: n, got: x.nrows().min(r.nrows()) });
                }
                if x.ncols() != r.ncols() {
                    return Err(Error::Dimension { expected: x.ncols(), got: r.ncols() });
                }
                Ok(())
            }
            _ => Err(Error::Format("xi and xi_rate must be present together".into())),
        }
    }

    /// Every `stride`-th sample, starting with the first.
    pub fn subsample(&self, stride: usize) -> Trajectory {
        let pick = |v: &Vec<f64>| v.iter().step_by(stride).copied().collect::<Vec<_>>();
        let pick_rows = |a: &Array2<f64>| {
            let rows: Vec<usize> = (0..a.nrows()).step_by(stride).collect();
            a.select(ndarray::Axis(0), &rows)
        };
        Trajectory {
            dt: self.dt * stride as f64,
            b: pick(&self.b),
            c: pick(&self.c),
            sigma: pick(&self.sigma),
            xi: self.xi.as_ref().map(pick_rows),
            xi_rate: self.xi_rate.as_ref().map(pick_rows),
        }
    }
}

fn check_initial_strain(b: &Signal) -> Result<()> {
    let b0 = b.value(0.0);
    if b0.abs() > 1e-14 {
        return Err(Error::Precondition(format!("strain must start at 0, got b(0) = {b0}")));
    }
    Ok(())
}

/// Cell driven by average strain `b(t)`.
///
/// The cell stress is uniform, so each node obeys `nu_i e_i' = sigma - E_i e_i`
/// and the constraint `<e> = b` fixes `sigma = (b' + <E e / nu>) / <1 / nu>`.
/// Layered profiles use one node per layer weighted by its length, which is
/// exact; analytic profiles use `n_nodes` midpoint nodes.
pub fn solve_cell_forced(
    profile: &MaterialProfile,
    b: &Signal,
    dt: f64,
    t_final: f64,
    n_nodes: usize,
) -> Result<Trajectory> {
    check_initial_strain(b)?;
    let n = sample_count(dt, t_final)?;
    let nodes: Vec<(f64, f64, f64)> = match profile {
        MaterialProfile::PiecewiseKv(layers) => {
            layers.iter().map(|l| (l.length, l.modulus, l.viscosity)).collect()
        }
        MaterialProfile::AnalyticKv(a) => {
            if n_nodes < 50 {
                return Err(Error::Argument(format!("analytic cells need at least 50 nodes, got {n_nodes}")));
            }
            let w = 1.0 / n_nodes as f64;
            (0..n_nodes)
                .map(|i| {
                    let y = (i as f64 + 0.5) * w;
                    (w, a.modulus.eval(y), a.viscosity.eval(y))
                })
                .collect()
        }
        MaterialProfile::PiecewiseSls(_) => {
            return Err(Error::Unsupported("the forced cell solver handles Kelvin-Voigt profiles".into()))
        }
    };
    let compliance: f64 = nodes.iter().map(|(w, _, nu)| w / nu).sum();
    let mut e = vec![0.0; nodes.len()];
    let (bs, cs) = b.sample(dt, n);
    let mut sigma = Vec::with_capacity(n);
    for k in 0..n {
        let relax: f64 = nodes.iter().zip(&e).map(|((w, m, nu), ei)| w * m * ei / nu).sum();
        let s = (cs[k] + relax) / compliance;
        sigma.push(s);
        for ((_, m, nu), ei) in nodes.iter().zip(e.iter_mut()) {
            *ei += dt * (s - m * *ei) / nu;
        }
    }
    if sigma.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("cell stress".into()));
    }
    Ok(Trajectory { dt, b: bs, c: cs, sigma, xi: None, xi_rate: None })
}

/// Cell response from the exact internal-variable model, forward Euler in `xi`.
///
/// Works for any parameter set; the name reflects its use with two-layer cells,
/// whose single pole gives the reference training data.
pub fn analytic_cell_2piece(
    params: &HomogenizedParams,
    b: &Signal,
    dt: f64,
    t_final: f64,
) -> Result<Trajectory> {
    let n = sample_count(dt, t_final)?;
    let l0 = params.dim();
    let (bs, cs) = b.sample(dt, n);
    let mut xi = Array2::zeros((n, l0));
    let mut xi_rate = Array2::zeros((n, l0));
    let mut sigma = Vec::with_capacity(n);
    let mut state = vec![0.0; l0];
    for k in 0..n {
        let r = analytic_xi_rate(params, &state, bs[k])?;
        sigma.push(analytic_stress(params, bs[k], cs[k], &state)?);
        for j in 0..l0 {
            xi[[k, j]] = state[j];
            xi_rate[[k, j]] = r[j];
            state[j] += dt * r[j];
        }
    }
    Ok(Trajectory { dt, b: bs, c: cs, sigma, xi: Some(xi), xi_rate: Some(xi_rate) })
}

/// Discrete `L2(0, T)` norm with weight `dt`.
pub fn l2_norm(v: &[f64], dt: f64) -> f64 {
    (dt * v.iter().map(|x| x * x).sum::<f64>()).sqrt()
}

/// `||a - b|| / ||a||` in discrete `L2(0, T)`.
pub fn relative_l2(reference: &[f64], test: &[f64]) -> f64 {
    let diff: f64 = reference.iter().zip(test).map(|(a, b)| (a - b) * (a - b)).sum();
    let norm: f64 = reference.iter().map(|a| a * a).sum();
    (diff / norm).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homogenize::kv_exact_params;
    use crate::material::KvLayer;
    use approx::assert_relative_eq;

    fn homogeneous(e: f64, nu: f64) -> MaterialProfile {
        MaterialProfile::piecewise_kv(&[KvLayer::new(1.0, e, nu)]).unwrap()
    }

    #[test]
    fn static_limit_of_constant_load() {
        let h = 0.02;
        let cfg = SimConfig {
            epsilon: Some(4.0 * h),
            h,
            dt: 2e-4,
            t_final: 8.0,
            forcing: BodyForce::Constant { value: 1.0 },
            output_stride: 1000,
            ..SimConfig::default()
        };
        let res = solve_multiscale_fem(&homogeneous(2.0, 0.5), &cfg).unwrap();
        let last = res.displacement.row(res.times.len() - 1);
        for (j, x) in res.nodes.iter().enumerate().skip(1).take(res.nodes.len() - 2) {
            let exact = x * (1.0 - x) / 4.0;
            assert!((last[j] - exact).abs() <= 1e-3 * exact, "x={x}: {} vs {exact}", last[j]);
        }
        assert_eq!(*res.times.last().unwrap(), 8.0);
    }

    #[test]
    fn zero_data_gives_zero_field() {
        let cfg = SimConfig { epsilon: Some(0.04), t_final: 0.01, output_stride: 100, ..SimConfig::default() };
        let res = solve_multiscale_fem(&MaterialProfile::two_piece_reference(), &cfg).unwrap();
        assert!(res.displacement.iter().all(|&u| u == 0.0));
    }

    #[test]
    fn sinusoidal_reference_run_is_bounded() {
        let cfg = SimConfig::fem_sinusoidal(0.04, 4.0);
        let res = solve_multiscale_fem(&MaterialProfile::two_piece_reference(), &cfg).unwrap();
        assert_eq!(res.times.len(), 401);
        let max = res.displacement.iter().fold(0.0f64, |m, u| m.max(u.abs()));
        assert!(max.is_finite() && max <= 0.2, "max |u| = {max}");
        // Dirichlet rows hold exactly
        for (i, t) in res.times.iter().enumerate() {
            assert_eq!(res.displacement[[i, 0]], 0.0);
            assert!((res.displacement[[i, 200]] - 0.1 * (std::f64::consts::TAU * t).sin()).abs() < 1e-15);
        }
    }

    #[test]
    fn stability_bound_is_enforced() {
        let mut cfg = SimConfig::fem_sinusoidal(0.04, 1.0);
        cfg.dt = 1e-4;
        let err = solve_multiscale_fem(&MaterialProfile::two_piece_reference(), &cfg).unwrap_err();
        assert!(matches!(err, Error::Configuration(_)), "{err}");
        let limit = cfg.max_stable_dt(3.0, 0.2);
        assert!(limit <= 0.5 * cfg.h * cfg.h / 0.2);
    }

    #[test]
    fn invalid_meshes_are_rejected() {
        let p = MaterialProfile::two_piece_reference();
        let bad_ratio = SimConfig { epsilon: Some(0.015), ..SimConfig::default() };
        assert!(matches!(solve_multiscale_fem(&p, &bad_ratio), Err(Error::Configuration(_))));
        let no_eps = SimConfig::default();
        assert!(matches!(solve_multiscale_fem(&p, &no_eps), Err(Error::Configuration(_))));
        let static_case = SimConfig { epsilon: Some(0.04), rho: 0.0, ..SimConfig::default() };
        assert!(matches!(solve_multiscale_fem(&p, &static_case), Err(Error::Configuration(_))));
    }

    #[test]
    fn discrete_energy_decays_without_forcing() {
        let p = MaterialProfile::two_piece_reference();
        let h = 0.01;
        let cfg = SimConfig {
            epsilon: Some(0.04),
            h,
            dt: 0.1 * h * h,
            t_final: 0.5,
            initial_u: InitialField::SineMode { amplitude: 0.05, mode: 2 },
            initial_v: InitialField::SineMode { amplitude: -0.3, mode: 5 },
            ..SimConfig::default()
        };
        let res = solve_multiscale_fem(&p, &cfg).unwrap();
        let coeff = element_coefficients(&p, &cfg).unwrap();
        let u = &res.displacement;
        let dt = cfg.dt;
        // E(n+1/2) = 1/2 v'(M - dt/2 C)v + 1/2 u(n+1)' K u(n) with v = (u(n+1) - u(n)) / dt
        let energy = |n: usize| {
            let mut kinetic = 0.0;
            for i in 1..coeff.len() {
                let v = (u[[n + 1, i]] - u[[n, i]]) / dt;
                kinetic += 0.5 * cfg.rho * h * v * v;
            }
            let mut rest = 0.0;
            for (e, (m, nu)) in coeff.iter().enumerate() {
                let dv = ((u[[n + 1, e + 1]] - u[[n, e + 1]]) - (u[[n + 1, e]] - u[[n, e]])) / dt;
                let s1 = u[[n + 1, e + 1]] - u[[n + 1, e]];
                let s0 = u[[n, e + 1]] - u[[n, e]];
                rest += 0.5 * m * s1 * s0 / h - 0.25 * dt * nu * dv * dv / h;
            }
            kinetic + rest
        };
        let mut prev = energy(0);
        assert!(prev > 0.0);
        for n in 1..res.times.len() - 1 {
            let e = energy(n);
            assert!(e <= prev + 1e-10, "energy rose at step {n}: {prev} -> {e}");
            prev = e;
        }
        assert!(prev < 0.5 * energy(0));
    }

    #[test]
    fn csv_roundtrip() {
        let cfg = SimConfig {
            epsilon: Some(0.2),
            h: 0.05,
            dt: 1e-4,
            t_final: 0.05,
            boundary: Boundary { left: 0.0, right: Signal::Sine { amplitude: 0.1, frequency: 1.0 } },
            output_stride: 100,
            ..SimConfig::default()
        };
        let res = solve_multiscale_fem(&MaterialProfile::two_piece_reference(), &cfg).unwrap();
        let mut buf = Vec::new();
        res.write_csv(&mut buf).unwrap();
        let back = SimResult::read_csv(&buf[..]).unwrap();
        assert_eq!(back.times, res.times);
        assert_eq!(back.nodes, res.nodes);
        assert_eq!(back.displacement, res.displacement);
        assert!(SimResult::read_csv(&b"a,b\n"[..]).is_err());
    }

    #[test]
    fn cell_zero_strain() {
        let tr = solve_cell_forced(&MaterialProfile::two_piece_reference(), &Signal::Zero, 1e-3, 1.0, 0).unwrap();
        assert_eq!(tr.len(), 1001);
        assert!(tr.sigma.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn cell_ramp_on_homogeneous_material() {
        let (e, nu) = (2.0, 0.5);
        let tr = solve_cell_forced(&homogeneous(e, nu), &Signal::Ramp { rate: 1.0 }, 1e-3, 2.0, 0).unwrap();
        for (k, s) in tr.sigma.iter().enumerate() {
            let t = k as f64 * 1e-3;
            assert_relative_eq!(*s, e * t + nu, epsilon = 1e-12);
        }
    }

    #[test]
    fn cell_requires_zero_initial_strain() {
        let b = Signal::Relaxation { amplitude: 1.0, rate: -1.0 };
        assert!(solve_cell_forced(&MaterialProfile::two_piece_reference(), &b, 1e-3, 1.0, 0).is_ok());
        let shifted = Signal::Pchip(crate::signal::Pchip::new(vec![0.0, 1.0], vec![0.5, 1.0]).unwrap());
        let err = solve_cell_forced(&MaterialProfile::two_piece_reference(), &shifted, 1e-3, 1.0, 0).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn analytic_cell_needs_enough_nodes() {
        let p = MaterialProfile::tanh_reference();
        let b = Signal::Ramp { rate: 1.0 };
        assert!(solve_cell_forced(&p, &b, 1e-3, 0.1, 10).is_err());
        assert!(solve_cell_forced(&p, &b, 1e-3, 0.1, 50).is_ok());
    }

    #[test]
    fn cell_matches_internal_variable_model() {
        let p = MaterialProfile::two_piece_reference();
        let params = kv_exact_params(&p).unwrap();
        let b = Signal::Sine { amplitude: 0.1, frequency: 1.0 };
        let fd = solve_cell_forced(&p, &b, 1e-4, 4.0, 0).unwrap();
        let an = analytic_cell_2piece(&params, &b, 1e-4, 4.0).unwrap();
        assert!(relative_l2(&an.sigma, &fd.sigma) < 1e-3);
        let diff = |dt: f64| {
            let fd = solve_cell_forced(&p, &b, dt, 4.0, 0).unwrap();
            let an = analytic_cell_2piece(&params, &b, dt, 4.0).unwrap();
            relative_l2(&an.sigma, &fd.sigma)
        };
        let ratio = diff(1e-3) / diff(5e-4);
        assert!((1.5..=2.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn analytic_cell_zero_strain() {
        let params = kv_exact_params(&MaterialProfile::two_piece_reference()).unwrap();
        let tr = analytic_cell_2piece(&params, &Signal::Zero, 1e-3, 1.0).unwrap();
        tr.validate().unwrap();
        assert!(tr.sigma.iter().chain(tr.xi.as_ref().unwrap()).chain(tr.xi_rate.as_ref().unwrap()).all(|&v| v == 0.0));
    }

    #[test]
    fn analytic_cell_relaxes_to_harmonic_mean() {
        let params = kv_exact_params(&MaterialProfile::two_piece_reference()).unwrap();
        let b = Signal::Relaxation { amplitude: 1.0, rate: 1.0 };
        let tr = analytic_cell_2piece(&params, &b, 1e-3, 10.0).unwrap();
        assert!((tr.sigma.last().unwrap() - 1.5).abs() < 1e-2);
    }

    #[test]
    fn analytic_cell_converges_at_first_order() {
        let params = kv_exact_params(&MaterialProfile::two_piece_reference()).unwrap();
        let b = Signal::Sine { amplitude: 0.1, frequency: 1.0 };
        let run = |dt: f64| analytic_cell_2piece(&params, &b, dt, 2.0).unwrap();
        let (coarse, mid, fine) = (run(4e-3), run(2e-3), run(1e-3));
        let max_diff = |a: &Trajectory, b: &Trajectory| {
            let stride = (a.dt / b.dt).round() as usize;
            a.sigma.iter().zip(b.sigma.iter().step_by(stride)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
        };
        let ratio = max_diff(&coarse, &mid) / max_diff(&mid, &fine);
        assert!((1.5..=2.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn subsampling_takes_every_kth_row() {
        let params = kv_exact_params(&MaterialProfile::two_piece_reference()).unwrap();
        let tr = analytic_cell_2piece(&params, &Signal::Ramp { rate: 0.1 }, 1e-3, 1.0).unwrap();
        let sub = tr.subsample(4);
        assert_eq!(sub.len(), 251);
        assert_relative_eq!(sub.dt, 4e-3);
        for k in 0..sub.len() {
            assert_eq!(sub.sigma[k], tr.sigma[4 * k]);
            assert_eq!(sub.xi.as_ref().unwrap()[[k, 0]], tr.xi.as_ref().unwrap()[[4 * k, 0]]);
        }
        sub.validate().unwrap();
    }
}
