use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{check_dim, Error, Result};

pub const SELU_ALPHA: f64 = 1.67326;
pub const SELU_SCALE: f64 = 1.05070;

#[inline]
pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_SCALE * x
    } else {
        SELU_SCALE * SELU_ALPHA * (x.exp() - 1.0)
    }
}

#[inline]
pub fn selu_grad(x: f64) -> f64 {
    if x > 0.0 {
        SELU_SCALE
    } else {
        SELU_SCALE * SELU_ALPHA * x.exp()
    }
}

/// Fully connected network: affine + SELU on every hidden layer, affine output.
///
/// `weights[l]` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Layer inputs and hidden pre-activations kept for the backward pass.
pub(crate) struct Cache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl MlpParams {
    /// All-zero network with the given layer sizes (input first).
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "a network needs input and output sizes");
        let weights = sizes.windows(2).map(|w| Array2::zeros((w[1], w[0]))).collect();
        let biases = sizes[1..].iter().map(|&n| Array1::zeros(n)).collect();
        Self { weights, biases }
    }

    /// LeCun-normal weights (variance `1 / fan_in`), zero biases.
    pub fn lecun_normal<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        for w in &mut net.weights {
            let normal = Normal::new(0.0, (1.0 / w.ncols() as f64).sqrt()).expect("positive std");
            w.iter_mut().for_each(|v| *v = normal.sample(rng));
        }
        net
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.weights[0].ncols()];
        s.extend(self.weights.iter().map(|w| w.nrows()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().map(|w| w.nrows()).unwrap_or(0)
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Parameters in declaration order: per layer, `W` row-major then bias.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
    }

    /// Inverse of [`MlpParams::flatten_into`]; returns the number of values read.
    pub fn assign_from(&mut self, values: &[f64]) -> usize {
        let mut k = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v = values[k];
                k += 1;
            }
        }
        k
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        let mut a = Array1::from(x.to_vec());
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w.dot(&a) + b;
            if l < last {
                z.mapv_inplace(selu);
            }
            a = z;
        }
        Ok(a.to_vec())
    }

    /// Row-wise forward pass.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim(self.input_dim(), x.ncols())?;
        let last = self.weights.len() - 1;
        let mut a = x.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = a.dot(&w.t()) + b;
            if l < last {
                z.mapv_inplace(selu);
            }
            a = z;
        }
        Ok(a)
    }

    pub(crate) fn forward_cached(&self, x: Array2<f64>) -> (Array2<f64>, Cache) {
        let last = self.weights.len() - 1;
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut pre = Vec::with_capacity(last);
        let mut a = x;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = a.dot(&w.t()) + b;
            inputs.push(a);
            if l < last {
                a = z.mapv(selu);
                pre.push(z);
            } else {
                a = z;
            }
        }
        (a, Cache { inputs, pre })
    }

    /// Accumulates parameter gradients into `grads` and returns `d loss / d input`.
    pub(crate) fn backward(&self, cache: &Cache, d_out: Array2<f64>, grads: &mut MlpParams) -> Array2<f64> {
        let mut g = d_out;
        for l in (0..self.weights.len()).rev() {
            grads.weights[l] += &g.t().dot(&cache.inputs[l]);
            grads.biases[l] += &g.sum_axis(Axis(0));
            let d_in = g.dot(&self.weights[l]);
            if l == 0 {
                return d_in;
            }
            let mut d = d_in;
            d.zip_mut_with(&cache.pre[l - 1], |v, z| *v *= selu_grad(*z));
            g = d;
        }
        unreachable!("network has at least one layer")
    }

    /// Builds a network of the requested widths that computes the affine map
    /// `x |-> m x + c` exactly for inputs above `-shift`: the first layer adds
    /// `shift` so SELU acts as the scaled identity, later layers undo the
    /// scaling and the output layer removes the shift.
    pub fn embed_affine(m: &Array2<f64>, c: &Array1<f64>, hidden: &[usize], shift: f64) -> Result<Self> {
        let (n_out, n_in) = m.dim();
        check_dim(n_out, c.len())?;
        if let Some(w) = hidden.iter().find(|&&w| w < n_in) {
            return Err(Error::Argument(format!("hidden width {w} is smaller than the input dimension {n_in}")));
        }
        let mut sizes = vec![n_in];
        sizes.extend_from_slice(hidden);
        sizes.push(n_out);
        let mut net = Self::zeros(&sizes);
        if hidden.is_empty() {
            net.weights[0].assign(m);
            net.biases[0].assign(c);
            return Ok(net);
        }
        for j in 0..n_in {
            net.weights[0][[j, j]] = 1.0;
            net.biases[0][j] = shift;
        }
        for l in 1..hidden.len() {
            for j in 0..n_in {
                net.weights[l][[j, j]] = 1.0 / SELU_SCALE;
            }
        }
        let last = hidden.len();
        net.weights[last].slice_mut(s![.., ..n_in]).assign(&(m / SELU_SCALE));
        net.biases[last].assign(&(c - &(m.sum_axis(Axis(1)) * shift)));
        Ok(net)
    }
}
