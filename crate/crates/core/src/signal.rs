//! Scalar time signals with exact derivatives: prescribed strains for cell
//! problems and boundary displacements for the dynamic solvers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Monotone piecewise-cubic Hermite interpolant (Fritsch-Carlson slopes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pchip {
    t: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    /// Knots must be strictly increasing; at least two are required.
    pub fn new(t: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if t.len() != y.len() {
            return Err(Error::Dimension { expected: t.len(), got: y.len() });
        }
        if t.len() < 2 {
            return Err(Error::Argument("interpolation needs at least two knots".into()));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Argument("knot times must be strictly increasing".into()));
        }
        if t.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("interpolation knots".into()));
        }
        let d = slopes(&t, &y);
        Ok(Self { t, y, d })
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.t, &self.y)
    }

    pub fn knot_slopes(&self) -> &[f64] {
        &self.d
    }

    /// Value and derivative; outside the knot range the end cubic is extended.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        let n = self.t.len();
        let k = match self.t.partition_point(|&ti| ti <= x) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        };
        let h = self.t[k + 1] - self.t[k];
        let s = (x - self.t[k]) / h;
        let (y0, y1, d0, d1) = (self.y[k], self.y[k + 1], self.d[k], self.d[k + 1]);
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let value = h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1;
        let dh00 = 6.0 * s2 - 6.0 * s;
        let dh10 = 3.0 * s2 - 4.0 * s + 1.0;
        let dh01 = -dh00;
        let dh11 = 3.0 * s2 - 2.0 * s;
        let rate = (dh00 * y0 + dh01 * y1) / h + dh10 * d0 + dh11 * d1;
        (value, rate)
    }
}

fn slopes(t: &[f64], y: &[f64]) -> Vec<f64> {
    let n = t.len();
    let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    if n == 2 {
        return vec![delta[0]; 2];
    }
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        let (a, b) = (delta[k - 1], delta[k]);
        if a * b > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / a + w2 / b);
        }
    }
    d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

// One-sided three-point estimate, limited to keep the end piece monotone.
fn end_slope(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() || m0 == 0.0 {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}

/// Time integral of a piecewise-linear Brownian path, scaled by `amplitude`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratedPath {
    pub amplitude: f64,
    pub step: f64,
    /// Path values at `k * step`, starting from 0.
    pub path: Vec<f64>,
    integral: Vec<f64>,
}

impl IntegratedPath {
    pub fn brownian(amplitude: f64, horizon: f64, step: f64, seed: u64) -> Result<Self> {
        if !(step > 0.0) || !(horizon > 0.0) {
            return Err(Error::Argument("brownian path needs positive horizon and step".into()));
        }
        let n = (horizon / step).ceil() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut path = Vec::with_capacity(n + 1);
        path.push(0.0);
        for k in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            path.push(path[k] + step.sqrt() * z);
        }
        Ok(Self::from_path(amplitude, step, path))
    }

    pub fn from_path(amplitude: f64, step: f64, path: Vec<f64>) -> Self {
        let mut integral = vec![0.0; path.len()];
        for k in 1..path.len() {
            integral[k] = integral[k - 1] + 0.5 * step * (path[k - 1] + path[k]);
        }
        Self { amplitude, step, path, integral }
    }

    fn eval(&self, t: f64) -> (f64, f64) {
        let last = self.path.len() - 1;
        let k = ((t / self.step).floor().max(0.0) as usize).min(last);
        let tau = t - k as f64 * self.step;
        let slope = if k < last { (self.path[k + 1] - self.path[k]) / self.step } else { 0.0 };
        let w = self.path[k] + slope * tau;
        let int = self.integral[k] + self.path[k] * tau + 0.5 * slope * tau * tau;
        (self.amplitude * int, self.amplitude * w)
    }
}

/// A scalar signal `b(t)` with exact derivative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Signal {
    Zero,
    /// `rate * t`.
    Ramp { rate: f64 },
    /// `amplitude * sin(2 pi frequency t)`.
    Sine { amplitude: f64, frequency: f64 },
    /// `amplitude * (1 - exp(-rate t))`.
    Relaxation { amplitude: f64, rate: f64 },
    Pchip(Pchip),
    IntegratedNoise(IntegratedPath),
}

impl Signal {
    pub fn value(&self, t: f64) -> f64 {
        self.eval(t).0
    }

    pub fn rate(&self, t: f64) -> f64 {
        self.eval(t).1
    }

    pub fn eval(&self, t: f64) -> (f64, f64) {
        use std::f64::consts::TAU;
        match self {
            Signal::Zero => (0.0, 0.0),
            Signal::Ramp { rate } => (rate * t, *rate),
            Signal::Sine { amplitude, frequency } => {
                let w = TAU * frequency;
                (amplitude * (w * t).sin(), amplitude * w * (w * t).cos())
            }
            Signal::Relaxation { amplitude, rate } => {
                let e = (-rate * t).exp();
                (amplitude * (1.0 - e), amplitude * rate * e)
            }
            Signal::Pchip(p) => p.eval(t),
            Signal::IntegratedNoise(p) => p.eval(t),
        }
    }

    /// Values and rates at `k * dt`, `k = 0..n`.
    pub fn sample(&self, dt: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
        (0..n).map(|k| self.eval(k as f64 * dt)).unzip()
    }

    pub fn describe(&self) -> String {
        match self {
            Signal::Zero => "zero".into(),
            Signal::Ramp { rate } => format!("ramp(rate={rate})"),
            Signal::Sine { amplitude, frequency } => format!("sine(amplitude={amplitude}, frequency={frequency})"),
            Signal::Relaxation { amplitude, rate } => format!("relaxation(amplitude={amplitude}, rate={rate})"),
            Signal::Pchip(p) => format!("pchip({} knots)", p.t.len()),
            Signal::IntegratedNoise(p) => {
                format!("integrated_brownian(amplitude={}, step={}, {} samples)", p.amplitude, p.step, p.path.len())
            }
        }
    }
}

/// Number of samples on `[0, t_final]` with step `dt`, endpoints included.
pub(crate) fn sample_count(dt: f64, t_final: f64) -> Result<usize> {
    if !(dt > 0.0) || !(t_final > 0.0) {
        return Err(Error::Argument(format!("need dt > 0 and T > 0, got dt={dt}, T={t_final}")));
    }
    let steps = t_final / dt;
    let rounded = steps.round();
    if (steps - rounded).abs() > 1e-6 * steps.max(1.0) || rounded < 1.0 {
        return Err(Error::Argument(format!("dt={dt} does not divide T={t_final}")));
    }
    Ok(rounded as usize + 1)
}
