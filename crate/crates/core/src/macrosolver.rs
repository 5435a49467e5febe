//! Homogenized macroscale dynamics with a pluggable constitutive model, and
//! the relative error metric used to compare against fine-scale runs.
//!
//! The mesh skeleton is the one of [`crate::microsolver`]; each element keeps
//! its own internal state. Strain rates come from the half-step nodal
//! velocities, the same convention as the fine-scale solver.

use std::io::Write;

use serde::Serialize;

use crate::constitutive::{ConstitutiveModel, InternalState, StepScheme};
use crate::error::{Error, Result};
use crate::microsolver::{explicit_dynamics, SimConfig, SimResult};

/// Final state of a macroscale run.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroState {
    pub displacement: Vec<f64>,
    /// Half-step nodal velocities.
    pub velocity: Vec<f64>,
    pub internal: Vec<InternalState>,
}

/// Runs the homogenized model; see [`solve_macro_with_state`].
pub fn solve_macro(model: &dyn ConstitutiveModel, cfg: &SimConfig) -> Result<SimResult> {
    solve_macro_with_state(model, cfg).map(|(r, _)| r)
}

/// Runs the homogenized model and also returns the final state.
///
/// Per step and element: strain and strain rate from the nodal fields, stress
/// from the model at the current internal state, then one internal update.
pub fn solve_macro_with_state(model: &dyn ConstitutiveModel, cfg: &SimConfig) -> Result<(SimResult, MacroState)> {
    let n_el = cfg.element_count()?;
    cfg.validate()?;
    let hint = model.stability_hint();
    cfg.check_stability(hint.stiffness.max(0.0), hint.viscosity.max(0.0))?;
    if cfg.scheme == StepScheme::ForwardEuler && cfg.dt * hint.max_rate >= 2.0 {
        return Err(Error::Configuration(format!(
            "dt = {} violates the internal-variable bound dt < 2 / {} for forward Euler",
            cfg.dt, hint.max_rate
        )));
    }
    let dim = model.dim();
    let dt = cfg.dt;
    let mut xi = vec![0.0; n_el * dim];
    let mut xi_rate = vec![0.0; n_el * dim];
    let (result, velocity) = explicit_dynamics(cfg, "macro", |step, _, strain, rate, sigma| {
        model.stress_batch(strain, rate, &xi, sigma)?;
        if let Some(e) = sigma.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("model stress at element {e}, step {step}")));
        }
        if dim == 0 {
            return Ok(());
        }
        match cfg.scheme {
            StepScheme::ForwardEuler => {
                model.xi_rate_batch(&xi, strain, &mut xi_rate)?;
                for (x, r) in xi.iter_mut().zip(&xi_rate) {
                    *x += dt * r;
                }
            }
            StepScheme::ExactExponential => {
                for (e, b) in strain.iter().enumerate() {
                    let cell = &mut xi[e * dim..(e + 1) * dim];
                    let next = model.exponential_step(cell, *b, dt).ok_or_else(|| {
                        Error::Unsupported("exact exponential stepping needs a linear internal law".into())
                    })??;
                    cell.copy_from_slice(&next);
                }
            }
        }
        Ok(())
    })?;
    let displacement = result.displacement.row(result.times.len() - 1).to_vec();
    let internal = if dim == 0 {
        vec![InternalState(vec![]); n_el]
    } else {
        xi.chunks(dim).map(|c| InternalState(c.to_vec())).collect()
    };
    Ok((result, MacroState { displacement, velocity, internal }))
}

/// Relative error curve `e(t)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorCurve {
    pub times: Vec<f64>,
    pub error: Vec<f64>,
}

impl ErrorCurve {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,error")?;
        for (t, e) in self.times.iter().zip(&self.error) {
            writeln!(out, "{t:.16e},{e:.16e}")?;
        }
        Ok(())
    }

    /// Maximum over `t` in `[t0, t1]`.
    pub fn max_on(&self, t0: f64, t1: f64) -> f64 {
        self.times
            .iter()
            .zip(&self.error)
            .filter(|(t, _)| **t >= t0 - 1e-12 && **t <= t1 + 1e-12)
            .map(|(_, e)| *e)
            .fold(0.0, f64::max)
    }
}

fn interp(xs: &[f64], ys: impl Fn(usize) -> f64, x: f64) -> f64 {
    let n = xs.len();
    if n == 1 {
        return ys(0);
    }
    let i = xs.partition_point(|&v| v <= x).clamp(1, n - 1);
    let (x0, x1) = (xs[i - 1], xs[i]);
    let w = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
    (1.0 - w) * ys(i - 1) + w * ys(i)
}

// Trapezoidal L2 norm of nodal values.
fn nodal_l2(nodes: &[f64], v: &[f64]) -> f64 {
    let mut sum = 0.0;
    for i in 1..nodes.len() {
        sum += 0.5 * (nodes[i] - nodes[i - 1]) * (v[i] * v[i] + v[i - 1] * v[i - 1]);
    }
    sum.sqrt()
}

/// `u_ref` interpolated (linearly in space and time) onto the grid of `u_test`.
fn reference_on_test_grid(u_ref: &SimResult, u_test: &SimResult) -> Result<Vec<Vec<f64>>> {
    let (r0, r1) = (u_ref.nodes[0], *u_ref.nodes.last().unwrap());
    let (t0, t1) = (u_test.nodes[0], *u_test.nodes.last().unwrap());
    let tol = 1e-9 * (r1 - r0).abs().max(1.0);
    if (r0 - t0).abs() > tol || (r1 - t1).abs() > tol {
        return Err(Error::Argument(format!("domains differ: [{r0}, {r1}] vs [{t0}, {t1}]")));
    }
    let (rt_end, tt_end) = (*u_ref.times.last().unwrap(), *u_test.times.last().unwrap());
    if tt_end > rt_end + 1e-9 * rt_end.max(1.0) || u_test.times[0] < u_ref.times[0] - 1e-12 {
        return Err(Error::Argument(format!(
            "test times [{}, {tt_end}] exceed reference times [{}, {rt_end}]",
            u_test.times[0], u_ref.times[0]
        )));
    }
    let d = &u_ref.displacement;
    Ok(u_test
        .times
        .iter()
        .map(|&t| {
            let row: Vec<f64> = (0..u_ref.nodes.len()).map(|j| interp(&u_ref.times, |i| d[[i, j]], t)).collect();
            u_test.nodes.iter().map(|&x| interp(&u_ref.nodes, |j| row[j], x)).collect()
        })
        .collect())
}

/// `e(t) = ||u_ref - u_test|| / (||u_ref|| + 0.01)` in `L2(D)` on the test grid.
pub fn relative_error(u_ref: &SimResult, u_test: &SimResult) -> Result<ErrorCurve> {
    let reference = reference_on_test_grid(u_ref, u_test)?;
    let error = reference
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let diff: Vec<f64> = r.iter().zip(u_test.displacement.row(i)).map(|(a, b)| a - b).collect();
            nodal_l2(&u_test.nodes, &diff) / (nodal_l2(&u_test.nodes, r) + 0.01)
        })
        .collect();
    Ok(ErrorCurve { times: u_test.times.clone(), error })
}

/// Absolute space-time `L2(0, T; L2(D))` difference on the test grid.
pub fn space_time_l2(u_ref: &SimResult, u_test: &SimResult) -> Result<f64> {
    let reference = reference_on_test_grid(u_ref, u_test)?;
    let per_time: Vec<f64> = reference
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let diff: Vec<f64> = r.iter().zip(u_test.displacement.row(i)).map(|(a, b)| a - b).collect();
            nodal_l2(&u_test.nodes, &diff).powi(2)
        })
        .collect();
    let t = &u_test.times;
    let mut sum = 0.0;
    for i in 1..t.len() {
        sum += 0.5 * (t[i] - t[i - 1]) * (per_time[i] + per_time[i - 1]);
    }
    Ok(sum.sqrt())
}
