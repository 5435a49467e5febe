//! Homogenized Laplace symbol and its exact pole/residue parametrization.
//!
//! For a layered cell the homogenized symbol is the harmonic mean of the local
//! symbol, a rational function `P(s)/Q(s)`. Splitting off the polynomial part
//! and expanding the remainder in simple poles gives
//!
//! ```text
//! a0(s) = E' + nu' s - sum_l beta_l / (s + alpha_l)
//! ```
//!
//! (no `nu' s` term for the standard linear solid). Each pole becomes one
//! internal variable of the Markovian constitutive model.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::material::{AnalyticKv, MaterialProfile};
use crate::quad;

/// Which local law the parameters homogenize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Kv,
    Sls,
}

/// Markovian constitutive parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogenizedParams {
    pub model: ModelKind,
    pub e_prime: f64,
    /// Zero for SLS.
    pub nu_prime: f64,
    /// Decay rates, all positive, sorted ascending.
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Max relative reconstruction error on the verification grid.
    #[serde(default)]
    pub residual: f64,
}

impl HomogenizedParams {
    /// Parameters of a memoryless Kelvin-Voigt law.
    pub fn kelvin_voigt(e_prime: f64, nu_prime: f64) -> Self {
        Self { model: ModelKind::Kv, e_prime, nu_prime, alpha: vec![], beta: vec![], residual: 0.0 }
    }

    /// Number of internal variables.
    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    /// `E' + nu' s - sum beta/(s + alpha)`.
    pub fn symbol(&self, s: f64) -> f64 {
        let memory: f64 = self.alpha.iter().zip(&self.beta).map(|(a, b)| b / (s + a)).sum();
        self.e_prime + self.nu_prime * s - memory
    }

    /// Relaxed (static) modulus `a0(0)`.
    pub fn relaxed_modulus(&self) -> f64 {
        self.symbol(0.0)
    }

    pub fn max_alpha(&self) -> Option<f64> {
        self.alpha.iter().copied().reduce(f64::max)
    }
}

/// 60 log-spaced points in `[1e-3, 1e6]`.
pub fn verification_grid() -> Vec<f64> {
    (0..60).map(|i| 10f64.powf(-3.0 + 9.0 * i as f64 / 59.0)).collect()
}

const RESIDUAL_TOL: f64 = 1e-8;
const GAP_TOL: f64 = 1e-8;
const IMAG_TOL: f64 = 1e-9;
const PANELS: usize = 32;

fn check_s(s: f64) -> Result<()> {
    if s >= 0.0 && s.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("Laplace parameter must be finite and non-negative, got {s}")))
    }
}

/// Integrates over the cell, splitting at the profile's breakpoints.
fn cell_integral(profile: &AnalyticKv, f: impl Fn(f64, f64) -> f64) -> f64 {
    let mut edges = vec![0.0];
    edges.extend(profile.breakpoints.iter().copied());
    edges.push(1.0);
    edges
        .windows(2)
        .map(|w| {
            let panels = ((PANELS as f64 * (w[1] - w[0])).ceil() as usize).max(1);
            quad::composite(
                |y| f(profile.modulus.eval(y), profile.viscosity.eval(y)),
                w[0],
                w[1],
                panels,
            )
        })
        .sum()
}

/// Homogenized Kelvin-Voigt symbol `(int dy / (s nu + E))^-1`.
///
/// Layered profiles are summed exactly; analytic profiles use composite
/// 8-point Gauss-Legendre quadrature (256 nodes).
pub fn kv_numeric_a0(profile: &MaterialProfile, s: f64) -> Result<f64> {
    check_s(s)?;
    let inv = match profile {
        MaterialProfile::PiecewiseKv(layers) => {
            layers.iter().map(|l| l.length / (l.modulus + l.viscosity * s)).sum::<f64>()
        }
        MaterialProfile::AnalyticKv(a) => cell_integral(a, |e, nu| 1.0 / (e + nu * s)),
        MaterialProfile::PiecewiseSls(_) => {
            return Err(Error::Unsupported("kv_numeric_a0 on an SLS profile".into()))
        }
    };
    Ok(1.0 / inv)
}

/// Homogenized SLS symbol `(sum d (s + c)/(k s + p))^-1`.
pub fn sls_numeric_a0(profile: &MaterialProfile, s: f64) -> Result<f64> {
    check_s(s)?;
    let layers = profile
        .sls_layers()
        .ok_or_else(|| Error::Unsupported("sls_numeric_a0 needs an SLS profile".into()))?;
    let inv: f64 = layers
        .iter()
        .map(|l| {
            let (c, k, p) = sls_coefficients(l.e1, l.e2, l.viscosity);
            l.length * (s + c) / (k * s + p)
        })
        .sum();
    Ok(1.0 / inv)
}

/// Homogenized symbol of any profile kind.
pub fn numeric_a0(profile: &MaterialProfile, s: f64) -> Result<f64> {
    match profile {
        MaterialProfile::PiecewiseSls(_) => sls_numeric_a0(profile, s),
        _ => kv_numeric_a0(profile, s),
    }
}

fn sls_coefficients(e1: f64, e2: f64, nu: f64) -> (f64, f64, f64) {
    (e2 / nu, e1 + e2, e1 * e2 / nu)
}

/// High-frequency coefficients `(E', nu')` of a Kelvin-Voigt profile:
/// `nu' = (int 1/nu)^-1`, `E' = (int E/nu^2) / (int 1/nu)^2`.
pub fn kv_asymptotic_params(profile: &MaterialProfile) -> Result<(f64, f64)> {
    let (inv_nu, e_over_nu2) = match profile {
        MaterialProfile::PiecewiseKv(layers) => layers.iter().fold((0.0, 0.0), |acc, l| {
            (acc.0 + l.length / l.viscosity, acc.1 + l.length * l.modulus / (l.viscosity * l.viscosity))
        }),
        MaterialProfile::AnalyticKv(a) => (
            cell_integral(a, |_, nu| 1.0 / nu),
            cell_integral(a, |e, nu| e / (nu * nu)),
        ),
        MaterialProfile::PiecewiseSls(_) => {
            return Err(Error::Unsupported("asymptotic KV parameters of an SLS profile".into()))
        }
    };
    Ok((e_over_nu2 / (inv_nu * inv_nu), 1.0 / inv_nu))
}

/// A product of linear factors `a + b s` scaled by `weight`.
#[derive(Debug, Clone)]
struct ProductTerm {
    weight: f64,
    factors: Vec<(f64, f64)>,
}

impl ProductTerm {
    /// Value and derivative at `s`.
    fn eval(&self, s: f64) -> (f64, f64) {
        let vals: Vec<f64> = self.factors.iter().map(|(a, b)| a + b * s).collect();
        let value: f64 = vals.iter().product();
        let mut deriv = 0.0;
        for (i, (_, b)) in self.factors.iter().enumerate() {
            let rest: f64 = vals.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v).product();
            deriv += b * rest;
        }
        (self.weight * value, self.weight * deriv)
    }

    /// Ascending coefficients.
    fn coefficients(&self) -> Vec<f64> {
        let mut c = vec![self.weight];
        for &(a, b) in &self.factors {
            let mut next = vec![0.0; c.len() + 1];
            for (k, ck) in c.iter().enumerate() {
                next[k] += a * ck;
                next[k + 1] += b * ck;
            }
            c = next;
        }
        c
    }
}

/// A sum of [`ProductTerm`]s.
#[derive(Debug, Clone)]
struct ProductSum(Vec<ProductTerm>);

impl ProductSum {
    fn eval(&self, s: f64) -> (f64, f64) {
        self.0.iter().fold((0.0, 0.0), |acc, t| {
            let (v, d) = t.eval(s);
            (acc.0 + v, acc.1 + d)
        })
    }

    fn coefficients(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for t in &self.0 {
            let c = t.coefficients();
            if c.len() > out.len() {
                out.resize(c.len(), 0.0);
            }
            for (o, v) in out.iter_mut().zip(c) {
                *o += v;
            }
        }
        while out.len() > 1 && out.last() == Some(&0.0) {
            out.pop();
        }
        out
    }
}

/// Real roots of `q`, via companion-matrix eigenvalues and one Newton polish
/// per root against the product form.
fn real_roots(q: &ProductSum) -> Result<Vec<f64>> {
    let coeffs = q.coefficients();
    let n = coeffs.len() - 1;
    if n == 0 {
        return Ok(vec![]);
    }
    let lead = coeffs[n];
    let mut companion = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..n {
        companion[(i, n - 1)] = -coeffs[i] / lead;
    }
    let eig = companion.complex_eigenvalues();
    let mut roots = Vec::with_capacity(n);
    for z in eig.iter() {
        if z.im.abs() > IMAG_TOL * z.re.abs() {
            return Err(Error::Decomposition(format!(
                "denominator root {} + {}i is not real",
                z.re, z.im
            )));
        }
        let mut r = z.re;
        let (v, d) = q.eval(r);
        if d != 0.0 {
            let polished = r - v / d;
            if q.eval(polished).0.abs() <= v.abs() {
                r = polished;
            }
        }
        if !r.is_finite() {
            return Err(Error::Decomposition("root finder produced a non-finite root".into()));
        }
        roots.push(r);
    }
    roots.sort_by(f64::total_cmp);
    let scale = roots.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    for w in roots.windows(2) {
        if (w[1] - w[0]).abs() < GAP_TOL * scale {
            return Err(Error::Degeneracy(format!("roots {} and {} nearly coincide", w[0], w[1])));
        }
    }
    Ok(roots)
}

/// Poles and residues of `E' + nu' s - P/Q`, with `beta = -P(-alpha)/Q'(-alpha)`.
fn pole_residues(p: &ProductSum, q: &ProductSum) -> Result<(Vec<f64>, Vec<f64>)> {
    let roots = real_roots(q)?;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(roots.len());
    for r in roots {
        if r >= 0.0 {
            return Err(Error::Decomposition(format!("denominator root {r} is not negative")));
        }
        let (pv, _) = p.eval(r);
        let (_, qd) = q.eval(r);
        pairs.push((-r, -pv / qd));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs.into_iter().unzip())
}

fn verify(params: &mut HomogenizedParams, reference: impl Fn(f64) -> Result<f64>) -> Result<()> {
    let mut worst = 0.0f64;
    for s in verification_grid() {
        let a0 = reference(s)?;
        worst = worst.max((a0 - params.symbol(s)).abs() / a0.abs());
    }
    params.residual = worst;
    if !(worst < RESIDUAL_TOL) {
        return Err(Error::Decomposition(format!(
            "reconstruction residual {worst:e} exceeds {RESIDUAL_TOL:e}"
        )));
    }
    Ok(())
}

/// Exact Markovian parameters of a layered Kelvin-Voigt cell.
///
/// With `L` layers, `P(s) = prod (E_l + nu_l s)` and
/// `Q(s) = sum_l d_l prod_{j != l} (E_j + nu_j s)`; the `L - 1` roots of `Q`
/// are the poles `-alpha_l`.
pub fn kv_exact_params(profile: &MaterialProfile) -> Result<HomogenizedParams> {
    let layers = profile
        .kv_layers()
        .ok_or_else(|| Error::Unsupported("kv_exact_params needs a piecewise Kelvin-Voigt profile".into()))?;
    let factors: Vec<(f64, f64)> = layers.iter().map(|l| (l.modulus, l.viscosity)).collect();
    let p = ProductSum(vec![ProductTerm { weight: 1.0, factors: factors.clone() }]);
    let q = ProductSum(
        layers
            .iter()
            .enumerate()
            .map(|(i, l)| ProductTerm {
                weight: l.length,
                factors: factors.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, f)| *f).collect(),
            })
            .collect(),
    );
    let (e_prime, nu_prime) = kv_asymptotic_params(profile)?;
    let (alpha, beta) = pole_residues(&p, &q)?;
    let mut params = HomogenizedParams { model: ModelKind::Kv, e_prime, nu_prime, alpha, beta, residual: 0.0 };
    verify(&mut params, |s| kv_numeric_a0(profile, s))?;
    Ok(params)
}

/// Exact Markovian parameters of a layered SLS cell: one pole per layer and no
/// strain-rate term.
pub fn sls_exact_params(profile: &MaterialProfile) -> Result<HomogenizedParams> {
    let layers = profile
        .sls_layers()
        .ok_or_else(|| Error::Unsupported("sls_exact_params needs a piecewise SLS profile".into()))?;
    let coeffs: Vec<(f64, f64, f64)> =
        layers.iter().map(|l| sls_coefficients(l.e1, l.e2, l.viscosity)).collect();
    let factors: Vec<(f64, f64)> = coeffs.iter().map(|&(_, k, p)| (p, k)).collect();
    let p = ProductSum(vec![ProductTerm { weight: 1.0, factors: factors.clone() }]);
    let q = ProductSum(
        layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let mut f: Vec<(f64, f64)> =
                    factors.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, f)| *f).collect();
                f.push((coeffs[i].0, 1.0));
                ProductTerm { weight: l.length, factors: f }
            })
            .collect(),
    );
    let e_prime = 1.0 / layers.iter().map(|l| l.length / (l.e1 + l.e2)).sum::<f64>();
    let (alpha, beta) = pole_residues(&p, &q)?;
    let mut params =
        HomogenizedParams { model: ModelKind::Sls, e_prime, nu_prime: 0.0, alpha, beta, residual: 0.0 };
    verify(&mut params, |s| sls_numeric_a0(profile, s))?;
    Ok(params)
}

/// Exact parameters for any layered profile.
pub fn exact_params(profile: &MaterialProfile) -> Result<HomogenizedParams> {
    match profile {
        MaterialProfile::PiecewiseKv(_) => kv_exact_params(profile),
        MaterialProfile::PiecewiseSls(_) => sls_exact_params(profile),
        MaterialProfile::AnalyticKv(_) => Err(Error::Unsupported(
            "analytic profiles have no finite pole expansion; approximate them piecewise first".into(),
        )),
    }
}

/// Memory kernel `kappa(t) = -sum beta exp(-alpha t)`.
pub fn kernel_eval(params: &HomogenizedParams, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("kernel time must be non-negative, got {t}")));
    }
    Ok(-params.alpha.iter().zip(&params.beta).map(|(a, b)| b * (-a * t).exp()).sum::<f64>())
}
