//! Markovian constitutive laws: stress from `(strain, strain rate, internal
//! state)` plus an evolution law for the internal state.
//!
//! Models are stateless; callers own one [`InternalState`] per evaluation point.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::homogenize::{HomogenizedParams, ModelKind};

/// Internal variables at one material point (stress units).
#[derive(Debug, Clone, PartialEq)]
pub struct InternalState(pub Vec<f64>);

impl InternalState {
    pub fn zeros(dim: usize) -> Self {
        InternalState(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Time integrator for the internal state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepScheme {
    #[default]
    ForwardEuler,
    /// Exact solution of the linear ODE with strain frozen over the step.
    ExactExponential,
}

/// Tangent information used to pick stable explicit time steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityHint {
    /// Instantaneous stiffness `d stress / d strain`.
    pub stiffness: f64,
    /// `d stress / d strain rate`.
    pub viscosity: f64,
    /// Fastest internal relaxation rate.
    pub max_rate: f64,
}

/// Common interface of the analytic model and the recurrent surrogate.
pub trait ConstitutiveModel: Send + Sync {
    /// Number of internal variables.
    fn dim(&self) -> usize;

    fn stress(&self, b: f64, c: f64, xi: &[f64]) -> Result<f64>;

    fn xi_rate(&self, xi: &[f64], b: f64) -> Result<Vec<f64>>;

    /// Exact-exponential update, if the evolution law is linear.
    fn exponential_step(&self, _xi: &[f64], _b: f64, _dt: f64) -> Option<Result<Vec<f64>>> {
        None
    }

    fn stability_hint(&self) -> StabilityHint;

    /// Stress at `n` points; `xi` is row-major `n x dim`.
    fn stress_batch(&self, b: &[f64], c: &[f64], xi: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.dim();
        for i in 0..b.len() {
            out[i] = self.stress(b[i], c[i], &xi[i * d..(i + 1) * d])?;
        }
        Ok(())
    }

    /// Internal rates at `n` points; `xi` and `out` are row-major `n x dim`.
    fn xi_rate_batch(&self, xi: &[f64], b: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.dim();
        for i in 0..b.len() {
            let r = self.xi_rate(&xi[i * d..(i + 1) * d], b[i])?;
            out[i * d..(i + 1) * d].copy_from_slice(&r);
        }
        Ok(())
    }
}

/// The exact homogenized law for layered media:
/// `stress = E' b + nu' c - sum xi`, `xi' = beta b - alpha xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticModel {
    pub params: HomogenizedParams,
}

impl AnalyticModel {
    pub fn new(params: HomogenizedParams) -> Self {
        Self { params }
    }
}

/// `E' b + nu' c - sum xi` (KV); the SLS form ignores `c`.
pub fn analytic_stress(params: &HomogenizedParams, b: f64, c: f64, xi: &[f64]) -> Result<f64> {
    check_dim(params.dim(), xi.len())?;
    let memory: f64 = xi.iter().sum();
    Ok(match params.model {
        ModelKind::Kv => params.e_prime * b + params.nu_prime * c - memory,
        ModelKind::Sls => params.e_prime * b - memory,
    })
}

/// `beta_l b - alpha_l xi_l` for every internal variable.
pub fn analytic_xi_rate(params: &HomogenizedParams, xi: &[f64], b: f64) -> Result<Vec<f64>> {
    check_dim(params.dim(), xi.len())?;
    Ok(params.alpha.iter().zip(&params.beta).zip(xi).map(|((a, be), x)| be * b - a * x).collect())
}

impl ConstitutiveModel for AnalyticModel {
    fn dim(&self) -> usize {
        self.params.dim()
    }

    fn stress(&self, b: f64, c: f64, xi: &[f64]) -> Result<f64> {
        analytic_stress(&self.params, b, c, xi)
    }

    fn xi_rate(&self, xi: &[f64], b: f64) -> Result<Vec<f64>> {
        analytic_xi_rate(&self.params, xi, b)
    }

    fn exponential_step(&self, xi: &[f64], b: f64, dt: f64) -> Option<Result<Vec<f64>>> {
        Some(check_dim(self.dim(), xi.len()).map(|_| {
            self.params
                .alpha
                .iter()
                .zip(&self.params.beta)
                .zip(xi)
                .map(|((a, be), x)| {
                    let decay = (-a * dt).exp();
                    decay * x + be * b / a * (1.0 - decay)
                })
                .collect()
        }))
    }

    fn stability_hint(&self) -> StabilityHint {
        StabilityHint {
            stiffness: self.params.e_prime,
            viscosity: self.params.nu_prime,
            max_rate: self.params.max_alpha().unwrap_or(0.0),
        }
    }
}

/// Advances the internal state by one step of size `dt` with strain `b`.
pub fn step_internal(
    model: &dyn ConstitutiveModel,
    xi: &InternalState,
    b: f64,
    dt: f64,
    scheme: StepScheme,
) -> Result<InternalState> {
    if !(dt > 0.0) {
        return Err(Error::Argument(format!("time step must be positive, got {dt}")));
    }
    check_dim(model.dim(), xi.dim())?;
    match scheme {
        StepScheme::ForwardEuler => {
            let rate = model.xi_rate(&xi.0, b)?;
            Ok(InternalState(xi.0.iter().zip(rate).map(|(x, r)| x + dt * r).collect()))
        }
        StepScheme::ExactExponential => match model.exponential_step(&xi.0, b, dt) {
            Some(next) => next.map(InternalState),
            None => Err(Error::Unsupported(
                "exact exponential stepping needs a linear internal evolution law".into(),
            )),
        },
    }
}
