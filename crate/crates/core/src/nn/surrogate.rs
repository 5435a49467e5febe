use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::constitutive::{ConstitutiveModel, StabilityHint};
use crate::error::{check_dim, Error, Result};
use crate::homogenize::HomogenizedParams;

use super::mlp::MlpParams;

/// Width of each hidden layer in the default architecture.
pub const DEFAULT_HIDDEN: [usize; 3] = [100, 100, 100];

/// Inputs of the exact affine embedding must stay above `-EXACT_SHIFT`.
pub const EXACT_SHIFT: f64 = 100.0;

const MAGIC: [u8; 8] = *b"VHSURROG";
const VERSION: u32 = 1;

/// Recurrent surrogate: stress `F(b, c, xi)` and internal rate `G(xi, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogatePair {
    pub f: MlpParams,
    pub g: MlpParams,
    pub l0: usize,
    /// When false, `F` sees `(b, xi)` only.
    pub use_strain_rate: bool,
}

/// Output of [`rnn_forward`]; matrices are time x hidden.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnOutput {
    pub sigma: Vec<f64>,
    pub xi: Array2<f64>,
    pub xi_rate: Array2<f64>,
}

impl SurrogatePair {
    pub fn new(f: MlpParams, g: MlpParams, l0: usize, use_strain_rate: bool) -> Result<Self> {
        let f_in = if use_strain_rate { 2 + l0 } else { 1 + l0 };
        check_dim(f_in, f.input_dim())?;
        check_dim(1, f.output_dim())?;
        check_dim(l0 + 1, g.input_dim())?;
        check_dim(l0, g.output_dim())?;
        Ok(Self { f, g, l0, use_strain_rate })
    }

    pub fn f_sizes(l0: usize, hidden: &[usize], use_strain_rate: bool) -> Vec<usize> {
        let mut s = vec![if use_strain_rate { 2 + l0 } else { 1 + l0 }];
        s.extend_from_slice(hidden);
        s.push(1);
        s
    }

    pub fn g_sizes(l0: usize, hidden: &[usize]) -> Vec<usize> {
        let mut s = vec![l0 + 1];
        s.extend_from_slice(hidden);
        s.push(l0);
        s
    }

    /// LeCun-normal initialization from `seed`.
    pub fn random(l0: usize, hidden: &[usize], use_strain_rate: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = MlpParams::lecun_normal(&Self::f_sizes(l0, hidden, use_strain_rate), &mut rng);
        let g = MlpParams::lecun_normal(&Self::g_sizes(l0, hidden), &mut rng);
        Self { f, g, l0, use_strain_rate }
    }

    /// Same architecture, fresh random weights.
    pub fn reinitialized(&self, seed: u64) -> Self {
        let hidden = self.hidden_widths();
        Self::random(self.l0, &hidden, self.use_strain_rate, seed)
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        let s = self.f.sizes();
        s[1..s.len() - 1].to_vec()
    }

    /// Networks computing the homogenized law exactly:
    /// `F = E' b + nu' c - sum xi`, `G = beta b - alpha xi`.
    pub fn exact_linear(params: &HomogenizedParams, hidden: &[usize], use_strain_rate: bool) -> Result<Self> {
        let l0 = params.dim();
        if !use_strain_rate && params.nu_prime != 0.0 {
            return Err(Error::Argument(
                "a rate-free surrogate cannot represent a law with nu' != 0".into(),
            ));
        }
        let mut fm = vec![params.e_prime];
        if use_strain_rate {
            fm.push(params.nu_prime);
        }
        fm.extend(std::iter::repeat_n(-1.0, l0));
        let fm = Array2::from_shape_vec((1, fm.len()), fm).expect("row vector");
        let gm = Array2::from_shape_fn((l0, l0 + 1), |(i, j)| {
            if j == l0 {
                params.beta[i]
            } else if i == j {
                -params.alpha[i]
            } else {
                0.0
            }
        });
        let f = MlpParams::embed_affine(&fm, &Array1::zeros(1), hidden, EXACT_SHIFT)?;
        let g = MlpParams::embed_affine(&gm, &Array1::zeros(l0), hidden, EXACT_SHIFT)?;
        Self::new(f, g, l0, use_strain_rate)
    }

    pub fn n_params(&self) -> usize {
        self.f.n_params() + self.g.n_params()
    }

    /// `F` parameters followed by `G` parameters.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        self.f.flatten_into(&mut v);
        self.g.flatten_into(&mut v);
        v
    }

    pub fn assign_from(&mut self, values: &[f64]) {
        let k = self.f.assign_from(values);
        self.g.assign_from(&values[k..]);
    }

    pub(crate) fn f_features(&self, b: f64, c: f64, xi: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(b);
        if self.use_strain_rate {
            out.push(c);
        }
        out.extend_from_slice(xi);
    }

    /// Binary weight file: header then little-endian `f64` parameters.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        for v in [VERSION, self.l0 as u32, u32::from(self.use_strain_rate)] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for net in [&self.f, &self.g] {
            let sizes = net.sizes();
            out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
            for s in sizes {
                out.extend_from_slice(&(s as u32).to_le_bytes());
            }
        }
        for v in self.flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut take = |n: usize| -> Result<&[u8]> {
            let chunk = bytes.get(pos..pos + n).ok_or_else(|| Error::Format("weight file is truncated".into()))?;
            pos += n;
            Ok(chunk)
        };
        if take(8)? != MAGIC {
            return Err(Error::Format("not a surrogate weight file".into()));
        }
        let mut word = || -> Result<u32> { Ok(u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"))) };
        let version = word()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported weight file version {version}")));
        }
        let l0 = word()? as usize;
        let flags = word()?;
        let mut sizes = Vec::new();
        for _ in 0..2 {
            let n = word()? as usize;
            if !(2..=64).contains(&n) {
                return Err(Error::Format(format!("implausible layer count {n}")));
            }
            sizes.push((0..n).map(|_| word().map(|v| v as usize)).collect::<Result<Vec<_>>>()?);
        }
        let mut f = MlpParams::zeros(&sizes[0]);
        let mut g = MlpParams::zeros(&sizes[1]);
        let total = f.n_params() + g.n_params();
        let body = take(8 * total)?;
        let values: Vec<f64> =
            body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let k = f.assign_from(&values);
        g.assign_from(&values[k..]);
        if take(1).is_ok() {
            return Err(Error::Format("trailing bytes after weights".into()));
        }
        if !f.is_finite() || !g.is_finite() {
            return Err(Error::Format("weight file holds non-finite values".into()));
        }
        Self::new(f, g, l0, flags & 1 == 1)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    fn jacobian_bounds(&self) -> Result<StabilityHint> {
        let h = 1e-6;
        let xi0 = vec![0.0; self.l0];
        let mut hint = StabilityHint { stiffness: 0.0, viscosity: 0.0, max_rate: 0.0 };
        for b in [-0.5, 0.0, 0.5] {
            let ds_db = (self.stress(b + h, 0.0, &xi0)? - self.stress(b - h, 0.0, &xi0)?) / (2.0 * h);
            let ds_dc = (self.stress(b, h, &xi0)? - self.stress(b, -h, &xi0)?) / (2.0 * h);
            hint.stiffness = hint.stiffness.max(ds_db.abs());
            hint.viscosity = hint.viscosity.max(ds_dc.abs());
            // Gershgorin bound on the internal Jacobian
            let mut rows = vec![0.0; self.l0];
            for j in 0..self.l0 {
                let mut up = xi0.clone();
                up[j] = h;
                let mut down = xi0.clone();
                down[j] = -h;
                let (gu, gd) = (self.xi_rate(&up, b)?, self.xi_rate(&down, b)?);
                for i in 0..self.l0 {
                    rows[i] += ((gu[i] - gd[i]) / (2.0 * h)).abs();
                }
            }
            hint.max_rate = rows.into_iter().fold(hint.max_rate, f64::max);
        }
        Ok(hint)
    }
}

impl ConstitutiveModel for SurrogatePair {
    fn dim(&self) -> usize {
        self.l0
    }

    fn stress(&self, b: f64, c: f64, xi: &[f64]) -> Result<f64> {
        check_dim(self.l0, xi.len())?;
        let mut x = Vec::with_capacity(2 + self.l0);
        self.f_features(b, c, xi, &mut x);
        Ok(self.f.forward(&x)?[0])
    }

    fn xi_rate(&self, xi: &[f64], b: f64) -> Result<Vec<f64>> {
        check_dim(self.l0, xi.len())?;
        let mut x = xi.to_vec();
        x.push(b);
        self.g.forward(&x)
    }

    fn stability_hint(&self) -> StabilityHint {
        self.jacobian_bounds().unwrap_or(StabilityHint {
            stiffness: f64::INFINITY,
            viscosity: f64::INFINITY,
            max_rate: f64::INFINITY,
        })
    }

    fn stress_batch(&self, b: &[f64], c: &[f64], xi: &[f64], out: &mut [f64]) -> Result<()> {
        let n = b.len();
        check_dim(n * self.l0, xi.len())?;
        let width = self.f.input_dim();
        let mut x = Array2::zeros((n, width));
        let mut row = Vec::with_capacity(width);
        for i in 0..n {
            self.f_features(b[i], c[i], &xi[i * self.l0..(i + 1) * self.l0], &mut row);
            x.row_mut(i).iter_mut().zip(&row).for_each(|(d, s)| *d = *s);
        }
        let y = self.f.forward_batch(x.view())?;
        out.iter_mut().zip(y.column(0)).for_each(|(o, v)| *o = *v);
        Ok(())
    }

    fn xi_rate_batch(&self, xi: &[f64], b: &[f64], out: &mut [f64]) -> Result<()> {
        let n = b.len();
        let l0 = self.l0;
        check_dim(n * l0, xi.len())?;
        let x = Array2::from_shape_fn((n, l0 + 1), |(i, j)| if j < l0 { xi[i * l0 + j] } else { b[i] });
        let y = self.g.forward_batch(x.view())?;
        out.iter_mut().zip(y.iter()).for_each(|(o, v)| *o = *v);
        Ok(())
    }
}

/// Runs the surrogate along one strain history.
///
/// `xi_0 = 0`; at each sample `xi_rate_k = G(xi_k, b_k)`,
/// `sigma_k = F(b_k, c_k, xi_k)` and `xi_{k+1} = xi_k + dt xi_rate_k`.
pub fn rnn_forward(sur: &SurrogatePair, b: &[f64], c: &[f64], dt: f64) -> Result<RnnOutput> {
    check_dim(b.len(), c.len())?;
    if !(dt > 0.0) {
        return Err(Error::Argument(format!("time step must be positive, got {dt}")));
    }
    let n = b.len();
    let l0 = sur.l0;
    let mut xi = Array2::zeros((n, l0));
    let mut xi_rate = Array2::zeros((n, l0));
    let mut state = vec![0.0; l0];
    let mut g_in = vec![0.0; l0 + 1];
    for k in 0..n {
        g_in[..l0].copy_from_slice(&state);
        g_in[l0] = b[k];
        let r = if l0 > 0 { sur.g.forward(&g_in)? } else { vec![] };
        for j in 0..l0 {
            xi[[k, j]] = state[j];
            xi_rate[[k, j]] = r[j];
            state[j] += dt * r[j];
        }
    }
    let width = sur.f.input_dim();
    let mut f_in = Array2::zeros((n, width));
    let mut row = Vec::with_capacity(width);
    for k in 0..n {
        sur.f_features(b[k], c[k], xi.row(k).as_slice().expect("contiguous"), &mut row);
        f_in.row_mut(k).iter_mut().zip(&row).for_each(|(d, s)| *d = *s);
    }
    let sigma = sur.f.forward_batch(f_in.view())?.column(0).to_vec();
    Ok(RnnOutput { sigma, xi, xi_rate })
}
