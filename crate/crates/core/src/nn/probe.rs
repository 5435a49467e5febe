use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::constitutive::{analytic_stress, analytic_xi_rate, ConstitutiveModel};
use crate::error::{Error, Result};
use crate::homogenize::HomogenizedParams;

/// Input ranges for the linearity probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeGrid {
    pub b_range: (f64, f64),
    pub c_range: (f64, f64),
    pub xi_range: (f64, f64),
    /// Samples along the swept input.
    pub points: usize,
    /// Curves per family, one per value of the held input.
    pub fixed: usize,
}

impl Default for ProbeGrid {
    fn default() -> Self {
        Self { b_range: (-0.5, 0.5), c_range: (-2.0, 2.0), xi_range: (-0.03, 0.03), points: 41, fixed: 5 }
    }
}

impl ProbeGrid {
    fn validate(&self) -> Result<()> {
        if self.points < 3 || self.fixed == 0 {
            return Err(Error::Configuration("probe needs at least 3 points and 1 curve".into()));
        }
        for (lo, hi) in [self.b_range, self.c_range, self.xi_range] {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Configuration(format!("bad probe range ({lo}, {hi})")));
            }
        }
        Ok(())
    }
}

fn linspace((lo, hi): (f64, f64), n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeCurve {
    pub fixed_value: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Analytic values at the same inputs, when requested.
    pub truth: Option<Vec<f64>>,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeFamily {
    pub name: String,
    pub swept: String,
    pub held: String,
    pub curves: Vec<ProbeCurve>,
}

impl ProbeFamily {
    pub fn min_r_squared(&self) -> f64 {
        self.curves.iter().map(|c| c.r_squared).fold(f64::INFINITY, f64::min)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{},{},output,truth", self.held, self.swept)?;
        for c in &self.curves {
            for (i, (x, y)) in c.x.iter().zip(&c.y).enumerate() {
                let t = c.truth.as_ref().map(|t| format!("{:.16e}", t[i])).unwrap_or_default();
                writeln!(out, "{:.16e},{x:.16e},{y:.16e},{t}", c.fixed_value)?;
            }
        }
        Ok(())
    }
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
///
/// A curve with no spread in `y` counts as perfectly linear.
pub fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    if syy <= (1e-14 * scale).powi(2) * n {
        return 1.0;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
    1.0 - ss_res / syy
}

#[derive(Clone, Copy)]
enum Var {
    B,
    C,
    Xi,
}

impl Var {
    fn label(self) -> &'static str {
        match self {
            Var::B => "b",
            Var::C => "c",
            Var::Xi => "xi",
        }
    }
}

#[derive(Clone, Copy)]
enum Output {
    Stress,
    Rate,
}

/// Inputs `(b, c, xi)` with the first internal channel set, the rest zero.
fn inputs(swept: Var, x: f64, held: Var, h: f64) -> (f64, f64, f64) {
    let mut v = [0.0; 3];
    v[swept as usize] = x;
    v[held as usize] = h;
    (v[0], v[1], v[2])
}

fn eval_point(
    model: &dyn ConstitutiveModel,
    out: Output,
    (b, c, xi1): (f64, f64, f64),
    xi: &mut [f64],
) -> Result<f64> {
    if let Some(first) = xi.first_mut() {
        *first = xi1;
    }
    match out {
        Output::Stress => model.stress(b, c, xi),
        Output::Rate => Ok(model.xi_rate(xi, b)?[0]),
    }
}

fn eval_truth(params: &HomogenizedParams, out: Output, (b, c, xi1): (f64, f64, f64)) -> Result<f64> {
    let mut xi = vec![0.0; params.dim()];
    if let Some(first) = xi.first_mut() {
        *first = xi1;
    }
    match out {
        Output::Stress => analytic_stress(params, b, c, &xi),
        Output::Rate => Ok(analytic_xi_rate(params, &xi, b)?[0]),
    }
}

/// Sweeps each input of the constitutive maps with another held at a few
/// values and scores how straight each response is.
///
/// Internal-variable families use the first channel with the others at zero,
/// and are omitted for memoryless models.
pub fn probe_linearity(
    model: &dyn ConstitutiveModel,
    grid: &ProbeGrid,
    truth: Option<&HomogenizedParams>,
) -> Result<Vec<ProbeFamily>> {
    grid.validate()?;
    let has_xi = model.dim() > 0;
    let truth_has_xi = truth.map(|p| p.dim() > 0).unwrap_or(false);
    let mut specs = vec![
        ("sigma_vs_b", Output::Stress, Var::B, if has_xi { Var::Xi } else { Var::C }),
        ("sigma_vs_c", Output::Stress, Var::C, Var::B),
    ];
    if has_xi {
        specs.push(("sigma_vs_xi", Output::Stress, Var::Xi, Var::B));
        specs.push(("xidot_vs_b", Output::Rate, Var::B, Var::Xi));
        specs.push(("xidot_vs_xi", Output::Rate, Var::Xi, Var::B));
    }
    let range = |v: Var| match v {
        Var::B => grid.b_range,
        Var::C => grid.c_range,
        Var::Xi => grid.xi_range,
    };
    let mut xi = vec![0.0; model.dim()];
    let mut families = Vec::with_capacity(specs.len());
    for (name, out, swept, held) in specs {
        let xs = linspace(range(swept), grid.points);
        let mut curves = Vec::with_capacity(grid.fixed);
        for h in linspace(range(held), grid.fixed) {
            let y = xs
                .iter()
                .map(|&x| eval_point(model, out, inputs(swept, x, held, h), &mut xi))
                .collect::<Result<Vec<_>>>()?;
            let needs_xi = matches!(out, Output::Rate) || matches!(swept, Var::Xi) || matches!(held, Var::Xi);
            let t = match truth {
                Some(p) if truth_has_xi || !needs_xi => Some(
                    xs.iter()
                        .map(|&x| eval_truth(p, out, inputs(swept, x, held, h)))
                        .collect::<Result<Vec<_>>>()?,
                ),
                _ => None,
            };
            curves.push(ProbeCurve { fixed_value: h, r_squared: r_squared(&xs, &y), x: xs.clone(), y, truth: t });
        }
        families.push(ProbeFamily { name: name.into(), swept: swept.label().into(), held: held.label().into(), curves });
    }
    Ok(families)
}
