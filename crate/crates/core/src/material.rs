//! Unit-cell material descriptions.
//!
//! A profile lives on the unit cell `[0, 1]`. Piecewise profiles are stored in
//! canonical form: lengths renormalised to sum to one and adjacent layers with
//! identical coefficients merged.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One Kelvin-Voigt layer: `length` is a fraction of the cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KvLayer {
    pub length: f64,
    pub modulus: f64,
    pub viscosity: f64,
}

impl KvLayer {
    pub fn new(length: f64, modulus: f64, viscosity: f64) -> Self {
        Self { length, modulus, viscosity }
    }
}

/// One standard-linear-solid layer: spring `e1` in parallel with a Maxwell arm
/// made of spring `e2` and dashpot `viscosity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlsLayer {
    pub length: f64,
    pub e1: f64,
    pub e2: f64,
    pub viscosity: f64,
}

impl SlsLayer {
    pub fn new(length: f64, e1: f64, e2: f64, viscosity: f64) -> Self {
        Self { length, e1, e2, viscosity }
    }
}

/// A scalar coefficient field on the unit cell.
#[derive(Clone)]
pub enum ScalarField {
    Constant(f64),
    /// `base + amplitude * tanh((y - center) / width)`
    Tanh { base: f64, amplitude: f64, center: f64, width: f64 },
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl ScalarField {
    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        ScalarField::Custom(Arc::new(f))
    }

    pub fn eval(&self, y: f64) -> f64 {
        match self {
            ScalarField::Constant(v) => *v,
            ScalarField::Tanh { base, amplitude, center, width } => {
                base + amplitude * ((y - center) / width).tanh()
            }
            ScalarField::Custom(f) => f(y),
        }
    }

    fn describe(&self) -> String {
        match self {
            ScalarField::Constant(v) => format!("const({v:e})"),
            ScalarField::Tanh { base, amplitude, center, width } => {
                format!("tanh({base:e},{amplitude:e},{center:e},{width:e})")
            }
            ScalarField::Custom(_) => "custom".to_string(),
        }
    }
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

/// Continuous (or piecewise-continuous) Kelvin-Voigt coefficients.
#[derive(Debug, Clone)]
pub struct AnalyticKv {
    pub modulus: ScalarField,
    pub viscosity: ScalarField,
    /// Interior discontinuity locations in `(0, 1)`, sorted.
    pub breakpoints: Vec<f64>,
}

impl AnalyticKv {
    pub fn new(modulus: ScalarField, viscosity: ScalarField) -> Self {
        Self { modulus, viscosity, breakpoints: Vec::new() }
    }

    pub fn with_breakpoints(mut self, mut breakpoints: Vec<f64>) -> Result<Self> {
        breakpoints.sort_by(f64::total_cmp);
        if breakpoints.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::Argument("breakpoints must lie strictly inside (0, 1)".into()));
        }
        breakpoints.dedup();
        self.breakpoints = breakpoints;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileKind {
    PiecewiseKv,
    AnalyticKv,
    PiecewiseSls,
}

/// Unit-cell material description. Immutable after construction.
#[derive(Debug, Clone)]
pub enum MaterialProfile {
    PiecewiseKv(Vec<KvLayer>),
    AnalyticKv(AnalyticKv),
    PiecewiseSls(Vec<SlsLayer>),
}

fn normalise_lengths(lengths: &[f64]) -> Result<Vec<f64>> {
    if lengths.is_empty() {
        return Err(Error::Argument("a piecewise profile needs at least one layer".into()));
    }
    if lengths.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
        return Err(Error::Argument("layer lengths must be positive and finite".into()));
    }
    let total: f64 = lengths.iter().sum();
    Ok(lengths.iter().map(|d| d / total).collect())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Argument(format!("{name} must be strictly positive and finite, got {v}")))
    }
}

impl MaterialProfile {
    /// Builds a canonical piecewise Kelvin-Voigt profile.
    pub fn piecewise_kv(layers: &[KvLayer]) -> Result<Self> {
        let lengths = normalise_lengths(&layers.iter().map(|l| l.length).collect::<Vec<_>>())?;
        let mut out: Vec<KvLayer> = Vec::with_capacity(layers.len());
        for (layer, d) in layers.iter().zip(lengths) {
            check_positive("modulus", layer.modulus)?;
            check_positive("viscosity", layer.viscosity)?;
            match out.last_mut() {
                Some(prev) if prev.modulus == layer.modulus && prev.viscosity == layer.viscosity => {
                    prev.length += d;
                }
                _ => out.push(KvLayer::new(d, layer.modulus, layer.viscosity)),
            }
        }
        Ok(MaterialProfile::PiecewiseKv(out))
    }

    /// Builds a canonical piecewise SLS profile.
    pub fn piecewise_sls(layers: &[SlsLayer]) -> Result<Self> {
        let lengths = normalise_lengths(&layers.iter().map(|l| l.length).collect::<Vec<_>>())?;
        let mut out: Vec<SlsLayer> = Vec::with_capacity(layers.len());
        for (layer, d) in layers.iter().zip(lengths) {
            check_positive("e1", layer.e1)?;
            check_positive("e2", layer.e2)?;
            check_positive("viscosity", layer.viscosity)?;
            match out.last_mut() {
                Some(prev)
                    if prev.e1 == layer.e1 && prev.e2 == layer.e2 && prev.viscosity == layer.viscosity =>
                {
                    prev.length += d;
                }
                _ => out.push(SlsLayer::new(d, layer.e1, layer.e2, layer.viscosity)),
            }
        }
        Ok(MaterialProfile::PiecewiseSls(out))
    }

    /// Builds an analytic profile, checking positivity on a dense grid.
    pub fn analytic_kv(fields: AnalyticKv) -> Result<Self> {
        for i in 0..=1000 {
            let y = i as f64 / 1000.0;
            check_positive("modulus", fields.modulus.eval(y))?;
            check_positive("viscosity", fields.viscosity.eval(y))?;
        }
        Ok(MaterialProfile::AnalyticKv(fields))
    }

    /// The two-layer material used throughout the experiments:
    /// `E = (1, 3)`, `nu = (0.1, 0.2)`, equal halves.
    pub fn two_piece_reference() -> Self {
        Self::piecewise_kv(&[KvLayer::new(0.5, 1.0, 0.1), KvLayer::new(0.5, 3.0, 0.2)])
            .expect("reference material is valid")
    }

    /// `E(y) = 2 + tanh((y - 0.5)/0.2)`, `nu(y) = 0.5 + 0.1 tanh((y - 0.5)/0.2)`.
    pub fn tanh_reference() -> Self {
        let field = |base, amplitude| ScalarField::Tanh { base, amplitude, center: 0.5, width: 0.2 };
        Self::analytic_kv(AnalyticKv::new(field(2.0, 1.0), field(0.5, 0.1)))
            .expect("reference material is valid")
    }

    pub fn kind(&self) -> ProfileKind {
        match self {
            MaterialProfile::PiecewiseKv(_) => ProfileKind::PiecewiseKv,
            MaterialProfile::AnalyticKv(_) => ProfileKind::AnalyticKv,
            MaterialProfile::PiecewiseSls(_) => ProfileKind::PiecewiseSls,
        }
    }

    pub fn kv_layers(&self) -> Option<&[KvLayer]> {
        match self {
            MaterialProfile::PiecewiseKv(l) => Some(l),
            _ => None,
        }
    }

    pub fn sls_layers(&self) -> Option<&[SlsLayer]> {
        match self {
            MaterialProfile::PiecewiseSls(l) => Some(l),
            _ => None,
        }
    }

    /// Number of layers for piecewise profiles.
    pub fn layer_count(&self) -> Option<usize> {
        match self {
            MaterialProfile::PiecewiseKv(l) => Some(l.len()),
            MaterialProfile::PiecewiseSls(l) => Some(l.len()),
            MaterialProfile::AnalyticKv(_) => None,
        }
    }

    fn layer_index(lengths: impl Iterator<Item = f64>, count: usize, y: f64) -> usize {
        let mut right = 0.0;
        for (i, d) in lengths.enumerate() {
            right += d;
            if y < right {
                return i;
            }
        }
        count - 1
    }

    fn check_position(y: f64) -> Result<()> {
        if (0.0..=1.0).contains(&y) {
            Ok(())
        } else {
            Err(Error::Domain(format!("cell position {y} outside [0, 1]")))
        }
    }

    /// Kelvin-Voigt coefficients `(E, nu)` at cell position `y`.
    ///
    /// Layers own the half-open interval `[a_{l-1}, a_l)`; `y = 1` maps to the last layer.
    pub fn sample(&self, y: f64) -> Result<(f64, f64)> {
        Self::check_position(y)?;
        match self {
            MaterialProfile::PiecewiseKv(layers) => {
                let i = Self::layer_index(layers.iter().map(|l| l.length), layers.len(), y);
                Ok((layers[i].modulus, layers[i].viscosity))
            }
            MaterialProfile::AnalyticKv(a) => Ok((a.modulus.eval(y), a.viscosity.eval(y))),
            MaterialProfile::PiecewiseSls(_) => Err(Error::Unsupported(
                "sample() returns Kelvin-Voigt coefficients; use sample_sls".into(),
            )),
        }
    }

    /// SLS coefficients `(E1, E2, nu)` at cell position `y`.
    pub fn sample_sls(&self, y: f64) -> Result<(f64, f64, f64)> {
        Self::check_position(y)?;
        match self {
            MaterialProfile::PiecewiseSls(layers) => {
                let i = Self::layer_index(layers.iter().map(|l| l.length), layers.len(), y);
                Ok((layers[i].e1, layers[i].e2, layers[i].viscosity))
            }
            _ => Err(Error::Unsupported("not an SLS profile".into())),
        }
    }

    /// Upper bounds `(E+, nu+)` of the Kelvin-Voigt coefficients.
    pub fn kv_upper_bounds(&self) -> Result<(f64, f64)> {
        match self {
            MaterialProfile::PiecewiseKv(layers) => Ok(layers.iter().fold((0.0f64, 0.0f64), |acc, l| {
                (acc.0.max(l.modulus), acc.1.max(l.viscosity))
            })),
            MaterialProfile::AnalyticKv(a) => {
                let mut bounds = (0.0f64, 0.0f64);
                for i in 0..=10_000 {
                    let y = i as f64 / 10_000.0;
                    bounds.0 = bounds.0.max(a.modulus.eval(y));
                    bounds.1 = bounds.1.max(a.viscosity.eval(y));
                }
                Ok(bounds)
            }
            MaterialProfile::PiecewiseSls(_) => {
                Err(Error::Unsupported("Kelvin-Voigt bounds requested for an SLS profile".into()))
            }
        }
    }

    /// Adds `delta` to every modulus and viscosity (Kelvin-Voigt profiles only).
    pub fn shifted(&self, delta: f64) -> Result<Self> {
        match self {
            MaterialProfile::PiecewiseKv(layers) => Self::piecewise_kv(
                &layers
                    .iter()
                    .map(|l| KvLayer::new(l.length, l.modulus + delta, l.viscosity + delta))
                    .collect::<Vec<_>>(),
            ),
            MaterialProfile::AnalyticKv(a) => {
                let (m, v) = (a.modulus.clone(), a.viscosity.clone());
                let fields = AnalyticKv {
                    modulus: ScalarField::custom(move |y| m.eval(y) + delta),
                    viscosity: ScalarField::custom(move |y| v.eval(y) + delta),
                    breakpoints: a.breakpoints.clone(),
                };
                Self::analytic_kv(fields)
            }
            MaterialProfile::PiecewiseSls(_) => {
                Err(Error::Unsupported("shifting is defined for Kelvin-Voigt profiles".into()))
            }
        }
    }

    /// Canonical text description, stable across runs.
    pub fn describe(&self) -> String {
        match self {
            MaterialProfile::PiecewiseKv(layers) => {
                let body: Vec<String> = layers
                    .iter()
                    .map(|l| format!("({:e},{:e},{:e})", l.length, l.modulus, l.viscosity))
                    .collect();
                format!("kv[{}]", body.join(";"))
            }
            MaterialProfile::PiecewiseSls(layers) => {
                let body: Vec<String> = layers
                    .iter()
                    .map(|l| format!("({:e},{:e},{:e},{:e})", l.length, l.e1, l.e2, l.viscosity))
                    .collect();
                format!("sls[{}]", body.join(";"))
            }
            MaterialProfile::AnalyticKv(a) => format!(
                "analytic[E={},nu={},breaks={:?}]",
                a.modulus.describe(),
                a.viscosity.describe(),
                a.breakpoints
            ),
        }
    }

    /// Hex SHA-256 of [`describe`](Self::describe).
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.describe().as_bytes()))
    }
}

/// Midpoint piecewise-constant approximation of an analytic profile.
///
/// Each continuous sub-interval (delimited by the declared breakpoints) is cut
/// into `n_pieces` equal pieces; each piece takes the coefficient values at its
/// midpoint. The result is canonicalised, so a constant field collapses to one layer.
pub fn piecewise_approximate(profile: &AnalyticKv, n_pieces: usize) -> Result<MaterialProfile> {
    if n_pieces == 0 {
        return Err(Error::Argument("n_pieces must be at least 1".into()));
    }
    let mut edges = vec![0.0];
    edges.extend(profile.breakpoints.iter().copied());
    edges.push(1.0);
    let mut layers = Vec::with_capacity(n_pieces * (edges.len() - 1));
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        let width = (b - a) / n_pieces as f64;
        for k in 0..n_pieces {
            let mid = a + (k as f64 + 0.5) * width;
            layers.push(KvLayer::new(width, profile.modulus.eval(mid), profile.viscosity.eval(mid)));
        }
    }
    MaterialProfile::piecewise_kv(&layers)
}
