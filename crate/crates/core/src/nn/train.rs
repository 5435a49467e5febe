use std::io::Write;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::microsolver::Trajectory;

use super::loss::{loss_accessible, loss_inaccessible, LossValue};
use super::mlp::MlpParams;
use super::surrogate::{rnn_forward, SurrogatePair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Stress data only.
    Accessible,
    /// Stress plus internal-variable data.
    #[default]
    Inaccessible,
}

/// Which hidden channel the inaccessible loss compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenTarget {
    #[default]
    Rate,
    State,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Fresh LeCun-normal weights from the training seed.
    Random,
    /// Start from the weights passed in.
    #[default]
    FromParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub loss: LossKind,
    pub hidden_target: HiddenTarget,
    pub seed: u64,
    pub init: Init,
    /// Fraction of trajectories held out for testing.
    pub test_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1500,
            batch_size: 50,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            loss: LossKind::Inaccessible,
            hidden_target: HiddenTarget::Rate,
            seed: 0,
            init: Init::Random,
            test_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Configuration("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::Configuration("learning_rate and epsilon must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Configuration("Adam betas must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Configuration("test_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Adds `d ||p - t|| / ||t||` for one trajectory into `grad`; returns the error.
fn relative_error_grad(
    pred: impl Iterator<Item = f64> + Clone,
    truth: impl Iterator<Item = f64> + Clone,
    scale: f64,
    mut grad: impl FnMut(usize, f64),
) -> Option<f64> {
    let t2: f64 = truth.clone().map(|t| t * t).sum();
    if t2 == 0.0 {
        return None;
    }
    let e2: f64 = pred.clone().zip(truth.clone()).map(|(p, t)| (p - t) * (p - t)).sum();
    let (tn, en) = (t2.sqrt(), e2.sqrt());
    if en > 0.0 {
        for (i, (p, t)) in pred.zip(truth).enumerate() {
            grad(i, scale * (p - t) / (en * tn));
        }
    }
    Some(en / tn)
}

/// Batch loss and its gradient by backpropagation through time.
///
/// All trajectories must share length and step. The gradient is laid out as
/// [`SurrogatePair::flatten`].
pub fn loss_and_gradient(
    sur: &SurrogatePair,
    batch: &[&Trajectory],
    kind: LossKind,
    target: HiddenTarget,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let nb = batch.len();
    let len = batch[0].len();
    let dt = batch[0].dt;
    for tr in batch {
        check_dim(len, tr.len())?;
        if (tr.dt - dt).abs() > 1e-12 * dt {
            return Err(Error::Argument("batch trajectories must share dt".into()));
        }
    }
    let l0 = sur.l0;
    if kind == LossKind::Inaccessible {
        for tr in batch {
            match tr.hidden_dim() {
                Some(d) => check_dim(l0, d)?,
                None => return Err(Error::Unsupported("the inaccessible loss needs internal-variable data".into())),
            }
        }
    }

    // forward: G stepped over time, batched across trajectories
    let mut xi = Array2::<f64>::zeros((nb, l0));
    let mut xi_hist = Array2::<f64>::zeros((len * nb, l0));
    let mut rate_hist = Array2::<f64>::zeros((len * nb, l0));
    let mut g_caches = Vec::with_capacity(if l0 > 0 { len } else { 0 });
    if l0 > 0 {
        for k in 0..len {
            let g_in = Array2::from_shape_fn((nb, l0 + 1), |(n, j)| if j < l0 { xi[[n, j]] } else { batch[n].b[k] });
            let (r, cache) = sur.g.forward_cached(g_in);
            xi_hist.slice_mut(s![k * nb..(k + 1) * nb, ..]).assign(&xi);
            rate_hist.slice_mut(s![k * nb..(k + 1) * nb, ..]).assign(&r);
            xi.scaled_add(dt, &r);
            g_caches.push(cache);
        }
    }
    // F is memoryless, so one pass covers every time sample
    let offset = if sur.use_strain_rate { 2 } else { 1 };
    let width = offset + l0;
    let f_in = Array2::from_shape_fn((len * nb, width), |(row, j)| {
        let (k, n) = (row / nb, row % nb);
        match j {
            0 => batch[n].b[k],
            1 if sur.use_strain_rate => batch[n].c[k],
            _ => xi_hist[[row, j - offset]],
        }
    });
    let (sigma, f_cache) = sur.f.forward_cached(f_in);

    // loss and its output sensitivities
    let mut d_sigma = Array2::<f64>::zeros((len * nb, 1));
    let mut d_rate = Array2::<f64>::zeros((len * nb, l0));
    let mut d_xi = Array2::<f64>::zeros((len * nb, l0));
    let included = batch.iter().filter(|tr| tr.sigma.iter().any(|&s| s != 0.0)).count();
    let mut loss = 0.0;
    if included > 0 {
        let scale = 1.0 / included as f64;
        for (n, tr) in batch.iter().enumerate() {
            let pred = (0..len).map(|k| sigma[[k * nb + n, 0]]);
            if let Some(e) = relative_error_grad(pred, tr.sigma.iter().copied(), scale, |k, g| {
                d_sigma[[k * nb + n, 0]] += g
            }) {
                loss += scale * e;
            }
        }
    }
    if kind == LossKind::Inaccessible && l0 > 0 {
        let truth = |tr: &Trajectory| match target {
            HiddenTarget::Rate => tr.xi_rate.clone().expect("checked above"),
            HiddenTarget::State => tr.xi.clone().expect("checked above"),
        };
        let targets: Vec<Array2<f64>> = batch.iter().map(|tr| truth(tr)).collect();
        let hidden_included = targets.iter().filter(|t| t.iter().any(|&v| v != 0.0)).count();
        if hidden_included > 0 {
            let scale = 1.0 / hidden_included as f64;
            let (source, sink) = match target {
                HiddenTarget::Rate => (&rate_hist, &mut d_rate),
                HiddenTarget::State => (&xi_hist, &mut d_xi),
            };
            for (n, t) in targets.iter().enumerate() {
                let pred = (0..len * l0).map(|i| source[[(i / l0) * nb + n, i % l0]]);
                if let Some(e) = relative_error_grad(pred, t.iter().copied(), scale, |i, g| {
                    sink[[(i / l0) * nb + n, i % l0]] += g
                }) {
                    loss += scale * e;
                }
            }
        }
    }

    // backward
    let mut grad_f = MlpParams::zeros(&sur.f.sizes());
    let mut grad_g = MlpParams::zeros(&sur.g.sizes());
    let d_f_in = sur.f.backward(&f_cache, d_sigma, &mut grad_f);
    if l0 > 0 {
        // lambda holds d loss / d xi_{k+1}; xi after the last sample is unused
        let mut lambda = Array2::<f64>::zeros((nb, l0));
        for k in (0..len).rev() {
            let rows = s![k * nb..(k + 1) * nb, ..];
            let mut g_r = &lambda * dt;
            g_r += &d_rate.slice(rows);
            let d_g_in = sur.g.backward(&g_caches[k], g_r, &mut grad_g);
            lambda += &d_f_in.slice(s![k * nb..(k + 1) * nb, offset..]);
            lambda += &d_g_in.slice(s![.., ..l0]);
            lambda += &d_xi.slice(rows);
        }
    }
    let mut grad = Vec::with_capacity(sur.n_params());
    grad_f.flatten_into(&mut grad);
    grad_g.flatten_into(&mut grad);
    Ok((loss, grad))
}

/// Test-set losses of a surrogate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accessible: LossValue,
    pub inaccessible: Option<LossValue>,
}

/// Runs the surrogate over `trajs` and measures both losses.
pub fn evaluate(sur: &SurrogatePair, trajs: &[&Trajectory], target: HiddenTarget) -> Result<Evaluation> {
    let outputs = trajs
        .par_iter()
        .map(|tr| rnn_forward(sur, &tr.b, &tr.c, tr.dt))
        .collect::<Result<Vec<_>>>()?;
    let pred: Vec<Vec<f64>> = outputs.iter().map(|o| o.sigma.clone()).collect();
    let truth: Vec<Vec<f64>> = trajs.iter().map(|t| t.sigma.clone()).collect();
    let accessible = loss_accessible(&pred, &truth)?;
    let has_hidden = !trajs.is_empty() && trajs.iter().all(|t| t.hidden_dim() == Some(sur.l0)) && sur.l0 > 0;
    let inaccessible = if has_hidden {
        let (ph, th): (Vec<Array2<f64>>, Vec<Array2<f64>>) = outputs
            .into_iter()
            .zip(trajs)
            .map(|(o, t)| match target {
                HiddenTarget::Rate => (o.xi_rate, t.xi_rate.clone().expect("hidden data")),
                HiddenTarget::State => (o.xi, t.xi.clone().expect("hidden data")),
            })
            .unzip();
        Some(loss_inaccessible(&pred, &truth, &ph, Some(&th))?)
    } else {
        None
    };
    Ok(Evaluation { accessible, inaccessible })
}

/// Seeded train/test split by trajectory; both index lists sorted.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((test_fraction * n as f64).round() as usize).min(n.saturating_sub(1));
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 0 is the state before training.
    pub epoch: usize,
    /// Mean training loss (of the configured kind) over the epoch's batches.
    pub train_loss: f64,
    pub test_accessible: f64,
    pub test_inaccessible: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub surrogate: SurrogatePair,
    pub history: Vec<EpochRecord>,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

pub fn write_history_csv<W: Write>(history: &[EpochRecord], mut out: W) -> Result<()> {
    writeln!(out, "epoch,train_loss,test_accessible,test_inaccessible")?;
    for r in history {
        let inacc = r.test_inaccessible.map(|v| format!("{v:.16e}")).unwrap_or_default();
        writeln!(out, "{},{:.16e},{:.16e},{}", r.epoch, r.train_loss, r.test_accessible, inacc)?;
    }
    Ok(())
}

fn pick<'a>(data: &'a Dataset, idx: &[usize]) -> Vec<&'a Trajectory> {
    idx.iter().map(|&i| &data.trajectories[i]).collect()
}

fn training_loss(eval: &Evaluation, kind: LossKind) -> f64 {
    match kind {
        LossKind::Accessible => eval.accessible.value,
        LossKind::Inaccessible => eval.inaccessible.map(|l| l.value).unwrap_or(eval.accessible.value),
    }
}

/// Mini-batch Adam with full backpropagation through time.
///
/// The history starts with an epoch-0 record measured before any update.
pub fn train(data: &Dataset, sur: SurrogatePair, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.validate()?;
    if data.n() == 0 {
        return Err(Error::Argument("cannot train on an empty dataset".into()));
    }
    if cfg.loss == LossKind::Inaccessible {
        match data.hidden_dim() {
            Some(d) => check_dim(sur.l0, d)?,
            None => return Err(Error::Unsupported("the inaccessible loss needs internal-variable data".into())),
        }
    }
    let mut sur = match cfg.init {
        Init::Random => sur.reinitialized(cfg.seed),
        Init::FromParams => sur,
    };
    let (train_idx, test_idx) = split_indices(data.n(), cfg.test_fraction, cfg.seed);
    let train_set = pick(data, &train_idx);
    let test_set = pick(data, &test_idx);

    let record = |epoch: usize, train_loss: f64, sur: &SurrogatePair| -> Result<EpochRecord> {
        let test = if test_set.is_empty() { None } else { Some(evaluate(sur, &test_set, cfg.hidden_target)?) };
        Ok(EpochRecord {
            epoch,
            train_loss,
            test_accessible: test.map(|e| e.accessible.value).unwrap_or(f64::NAN),
            test_inaccessible: test.and_then(|e| e.inaccessible.map(|l| l.value)),
        })
    };
    let initial = evaluate(&sur, &train_set, cfg.hidden_target)?;
    let mut history = vec![record(0, training_loss(&initial, cfg.loss), &sur)?];

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut adam = Adam::new(sur.n_params(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
    let mut params = sur.flatten();
    let mut order = train_idx.clone();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = pick(data, chunk);
            let (loss, grad) = loss_and_gradient(&sur, &batch, cfg.loss, cfg.hidden_target)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "training loss diverged at epoch {epoch}; try a learning rate below {}",
                    cfg.learning_rate
                )));
            }
            adam.step(&mut params, &grad);
            sur.assign_from(&params);
            total += loss * chunk.len() as f64;
            count += chunk.len();
        }
        history.push(record(epoch, total / count as f64, &sur)?);
    }
    Ok(TrainOutcome { surrogate: sur, history, train_indices: train_idx, test_indices: test_idx })
}

/// First phase with `first`, then a second run started from its weights.
pub fn train_two_phase(
    data: &Dataset,
    sur: SurrogatePair,
    first: &TrainConfig,
    second: &TrainConfig,
) -> Result<TrainOutcome> {
    let a = train(data, sur, first)?;
    let second = TrainConfig { init: Init::FromParams, ..second.clone() };
    let b = train(data, a.surrogate, &second)?;
    let offset = a.history.last().map(|r| r.epoch).unwrap_or(0);
    let mut history = a.history;
    history.extend(b.history.into_iter().skip(1).map(|r| EpochRecord { epoch: r.epoch + offset, ..r }));
    Ok(TrainOutcome { surrogate: b.surrogate, history, train_indices: b.train_indices, test_indices: b.test_indices })
}
