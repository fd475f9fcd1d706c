//! Feed-forward regressor with a Gaussian (mean, variance) head.
//!
//! Hidden layers use rectifier activations; the output layer is linear with
//! two units (mean and raw variance) for MVE training or one unit (mean) for
//! the dropout-uncertainty variant. Variance is `softplus(raw) + floor`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{GaussianPrediction, ModelKind, NetworkConfig, TrainingReport, HALF_LN_2PI};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Rows predicted per forward chunk. Fixed so stochastic passes do not depend
/// on how work is scheduled.
pub(crate) const PREDICT_CHUNK: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Head {
    Mve { variance_floor: f64 },
    Mse,
}

impl Head {
    fn outputs(self) -> usize {
        match self {
            Head::Mve { .. } => 2,
            Head::Mse => 1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Layer>,
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// softplus⁻¹(1): raw variance bias giving unit initial variance.
const UNIT_VARIANCE_RAW: f64 = 0.541_324_854_612_918_1;

impl Network {
    pub fn new(inputs: usize, width: usize, hidden: usize, head: Head, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(hidden + 1);
        let mut fan_in = inputs;
        for _ in 0..hidden {
            let he = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
            layers.push(Layer {
                weights: Array2::from_shape_fn((fan_in, width), |_| he.sample(rng)),
                bias: Array1::zeros(width),
            });
            fan_in = width;
        }
        let glorot = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("finite std");
        let mut bias = Array1::zeros(head.outputs());
        if let Head::Mve { .. } = head {
            bias[1] = UNIT_VARIANCE_RAW;
        }
        layers.push(Layer {
            weights: Array2::from_shape_fn((fan_in, head.outputs()), |_| glorot.sample(rng)),
            bias,
        });
        Self { layers }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        let mut k = 0;
        for l in &mut self.layers {
            for w in l.weights.iter_mut() {
                *w = flat[k];
                k += 1;
            }
            for b in l.bias.iter_mut() {
                *b = flat[k];
                k += 1;
            }
        }
    }

    /// Forward pass. `keep` optionally supplies an inverted-dropout scale for
    /// each hidden activation (0 for dropped units).
    fn forward(
        &self,
        x: ArrayView2<f64>,
        mut keep: Option<&mut dyn FnMut() -> f64>,
    ) -> (Vec<Array2<f64>>, Vec<Array2<f64>>, Array2<f64>) {
        let hidden = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(hidden + 1);
        let mut gates = Vec::with_capacity(hidden);
        let mut a = x.to_owned();
        for layer in &self.layers[..hidden] {
            let mut z = a.dot(&layer.weights);
            z += &layer.bias;
            let mut gate = Array2::zeros(z.raw_dim());
            Zip::from(&mut z).and(&mut gate).for_each(|z, g| {
                let k = match keep.as_mut() {
                    Some(f) => f(),
                    None => 1.0,
                };
                if *z > 0.0 {
                    *g = k;
                    *z *= k;
                } else {
                    *z = 0.0;
                }
            });
            acts.push(a);
            gates.push(gate);
            a = z;
        }
        let out_layer = &self.layers[hidden];
        let mut out = a.dot(&out_layer.weights);
        out += &out_layer.bias;
        acts.push(a);
        (acts, gates, out)
    }

    pub fn predict_raw(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward(x, None).2
    }

    /// Mean loss over the batch and its gradient with respect to every
    /// parameter, in the same layout as [`Network::params`].
    pub fn loss_and_gradient(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView1<f64>,
        head: Head,
    ) -> (f64, Vec<Layer>) {
        self.loss_and_gradient_with(x, y, head, None)
    }

    fn loss_and_gradient_with(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView1<f64>,
        head: Head,
        keep: Option<&mut dyn FnMut() -> f64>,
    ) -> (f64, Vec<Layer>) {
        let (acts, gates, out) = self.forward(x, keep);
        let n = x.nrows() as f64;
        let mut d = Array2::zeros(out.raw_dim());
        let mut loss = 0.0;
        for (r, &target) in y.iter().enumerate() {
            match head {
                Head::Mve { variance_floor } => {
                    let mu = out[[r, 0]];
                    let raw = out[[r, 1]];
                    let var = softplus(raw) + variance_floor;
                    let resid = target - mu;
                    loss += HALF_LN_2PI + 0.5 * var.ln() + 0.5 * resid * resid / var;
                    d[[r, 0]] = -resid / var / n;
                    let dvar = 0.5 / var - 0.5 * resid * resid / (var * var);
                    d[[r, 1]] = dvar * sigmoid(raw) / n;
                }
                Head::Mse => {
                    let resid = out[[r, 0]] - target;
                    loss += resid * resid;
                    d[[r, 0]] = 2.0 * resid / n;
                }
            }
        }
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let gw = acts[l].t().dot(&d);
            let gb = d.sum_axis(Axis(0));
            if l > 0 {
                let mut prev = d.dot(&self.layers[l].weights.t());
                prev *= &gates[l - 1];
                d = prev;
            }
            grads.push(Layer {
                weights: gw,
                bias: gb,
            });
        }
        grads.reverse();
        (loss / n, grads)
    }
}

struct Adam {
    m: Vec<Layer>,
    v: Vec<Layer>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(net: &Network) -> Self {
        let zeros = |net: &Network| {
            net.layers
                .iter()
                .map(|l| Layer {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect()
        };
        Self {
            m: zeros(net),
            v: zeros(net),
            t: 0,
        }
    }

    fn step(&mut self, net: &mut Network, grads: &[Layer], lr: f64, weight_decay: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: &f64| {
            let g = g + weight_decay * *p;
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        };
        for (((layer, m), v), g) in net.layers.iter_mut().zip(&mut self.m).zip(&mut self.v).zip(grads) {
            Zip::from(&mut layer.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .and(&g.weights)
                .for_each(update);
            Zip::from(&mut layer.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(update);
        }
    }
}

/// Learning rate at optimizer step `step`: linear warmup from the initial to
/// the peak rate over the first epoch, then exponential decay that reaches
/// the final rate at the last scheduled step.
pub fn learning_rate(config: &NetworkConfig, step: usize, steps_per_epoch: usize) -> f64 {
    let warmup = steps_per_epoch.max(1);
    let total = (config.max_epochs * steps_per_epoch).max(warmup + 1);
    if step < warmup {
        config.lr_initial + (config.lr_max - config.lr_initial) * step as f64 / warmup as f64
    } else {
        let frac = (step - warmup) as f64 / (total - warmup) as f64;
        config.lr_max * (config.lr_final / config.lr_max).powf(frac.min(1.0))
    }
}

/// A trained network together with its input/target standardisation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeedForwardModel {
    kind: ModelKind,
    net: Network,
    x_mean: Vec<f64>,
    x_scale: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    variance_floor: f64,
    dropout: f64,
    passes: usize,
    seed: u64,
}

fn column_stats(x: ArrayView2<f64>, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let d = x.ncols();
    let mut mean = vec![0.0; d];
    for &r in rows {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for &r in rows {
        for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale = var
        .into_iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

impl FeedForwardModel {
    /// Trains from scratch with a random holdout split and early stopping on
    /// the holdout loss. The parameters of the best holdout epoch are kept.
    pub fn fit(
        config: &NetworkConfig,
        kind: ModelKind,
        x: ArrayView2<f64>,
        y: &[f64],
        seed: u64,
        stream_path: &[u64],
    ) -> Result<(Self, TrainingReport)> {
        config.validate()?;
        let n = y.len();
        if x.nrows() != n {
            return Err(Error::Model(format!("{} feature rows for {n} targets", x.nrows())));
        }
        if n < 2 {
            return Err(Error::Model(format!(
                "need at least 2 datapoints to split off a holdout set, got {n}"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(seed, Purpose::Holdout, stream_path));
        let n_val = ((n as f64 * config.holdout).round() as usize).clamp(1, n - 1);
        let (val_rows, train_rows) = order.split_at(n_val);
        let mut train_rows = train_rows.to_vec();

        let (x_mean, x_scale) = column_stats(x, &train_rows);
        let y_train: Vec<f64> = train_rows.iter().map(|&r| y[r]).collect();
        let y_mean = y_train.iter().sum::<f64>() / y_train.len() as f64;
        let y_sd = (y_train.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / y_train.len() as f64).sqrt();
        let y_scale = if y_sd > 1e-12 { y_sd } else { 1.0 };

        let mut xs = x.to_owned();
        for mut row in xs.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&x_mean).zip(&x_scale) {
                *v = (*v - m) / s;
            }
        }
        let ys: Array1<f64> = y.iter().map(|v| (v - y_mean) / y_scale).collect();

        let head = match kind {
            ModelKind::Dropout => Head::Mse,
            _ => Head::Mve {
                variance_floor: config.variance_floor,
            },
        };
        let mut init = rng::stream(seed, Purpose::Init, stream_path);
        let mut net = Network::new(x.ncols(), config.hidden_width, config.hidden_layers, head, &mut init);
        let mut adam = Adam::new(&net);

        let x_val = xs.select(Axis(0), val_rows);
        let y_val = ys.select(Axis(0), val_rows);
        let steps_per_epoch = train_rows.len().div_ceil(config.batch_size);
        let mut report = TrainingReport {
            n_train: train_rows.len(),
            n_val: val_rows.len(),
            ..TrainingReport::default()
        };
        let mut best = (f64::INFINITY, net.clone(), 0usize);
        let mut since_best = 0;
        let mut step = 0;
        let mut dropout_rng = rng::stream(seed, Purpose::Dropout, stream_path);
        let keep_scale = 1.0 / (1.0 - config.dropout);

        for epoch in 0..config.max_epochs {
            let mut path = stream_path.to_vec();
            path.push(epoch as u64);
            train_rows.shuffle(&mut rng::stream(seed, Purpose::Shuffle, &path));
            let mut epoch_loss = 0.0;
            for batch in train_rows.chunks(config.batch_size) {
                let xb = xs.select(Axis(0), batch);
                let yb = ys.select(Axis(0), batch);
                let (loss, grads) = if head == Head::Mse && config.dropout > 0.0 {
                    let p = config.dropout;
                    let mut keep = || if dropout_rng.random::<f64>() < p { 0.0 } else { keep_scale };
                    net.loss_and_gradient_with(xb.view(), yb.view(), head, Some(&mut keep))
                } else {
                    net.loss_and_gradient(xb.view(), yb.view(), head)
                };
                epoch_loss += loss * batch.len() as f64;
                let lr = learning_rate(config, step, steps_per_epoch);
                adam.step(&mut net, &grads, lr, config.weight_decay);
                step += 1;
            }
            report.train_loss.push(epoch_loss / train_rows.len() as f64);
            let (val_loss, _) = net.loss_and_gradient(x_val.view(), y_val.view(), head);
            report.val_loss.push(val_loss);
            report.stopped_epoch = epoch + 1;
            if val_loss < best.0 {
                best = (val_loss, net.clone(), epoch + 1);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    break;
                }
            }
        }
        report.best_epoch = best.2;
        let model = Self {
            kind,
            net: best.1,
            x_mean,
            x_scale,
            y_mean,
            y_scale,
            variance_floor: config.variance_floor,
            dropout: config.dropout,
            passes: config.mc_passes,
            seed,
        };
        Ok((model, report))
    }

    pub fn input_dim(&self) -> usize {
        self.x_mean.len()
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    fn standardise(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut xs = x.to_owned();
        for mut row in xs.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.x_mean).zip(&self.x_scale) {
                *v = (*v - m) / s;
            }
        }
        xs
    }

    fn std_floor(&self) -> f64 {
        self.variance_floor.sqrt()
    }

    /// Predictions for the rows of `x` (one item each). `key` selects the
    /// dropout substream for stochastic passes.
    pub fn predict(&self, x: ArrayView2<f64>, key: &[u64]) -> Vec<GaussianPrediction> {
        let mut out = Vec::with_capacity(x.nrows());
        for (chunk_idx, start) in (0..x.nrows()).step_by(PREDICT_CHUNK).enumerate() {
            let end = (start + PREDICT_CHUNK).min(x.nrows());
            let xs = self.standardise(x.slice(s![start..end, ..]));
            match self.kind {
                ModelKind::Dropout => {
                    let passes = self.passes_for(&xs, key, chunk_idx);
                    for r in 0..xs.nrows() {
                        let samples: Vec<f64> = passes.iter().map(|p| p[r]).collect();
                        let (mean, sd) = sample_mean_std(&samples);
                        out.push(GaussianPrediction {
                            mean,
                            std: sd.max(self.std_floor()),
                        });
                    }
                }
                _ => {
                    let raw = self.net.predict_raw(xs.view());
                    for row in raw.rows() {
                        let var = softplus(row[1]) + self.variance_floor;
                        out.push(GaussianPrediction {
                            mean: self.y_mean + self.y_scale * row[0],
                            std: (var.sqrt() * self.y_scale).max(self.std_floor()),
                        });
                    }
                }
            }
        }
        out
    }

    /// The individual stochastic forward passes (dropout kind), one vector
    /// of per-row means per pass, on the original target scale.
    pub fn dropout_passes(&self, x: ArrayView2<f64>, key: &[u64]) -> Vec<Vec<f64>> {
        let mut all = vec![Vec::with_capacity(x.nrows()); self.passes];
        for (chunk_idx, start) in (0..x.nrows()).step_by(PREDICT_CHUNK).enumerate() {
            let end = (start + PREDICT_CHUNK).min(x.nrows());
            let xs = self.standardise(x.slice(s![start..end, ..]));
            for (dst, src) in all.iter_mut().zip(self.passes_for(&xs, key, chunk_idx)) {
                dst.extend(src);
            }
        }
        all
    }

    fn passes_for(&self, xs: &Array2<f64>, key: &[u64], chunk_idx: usize) -> Vec<Vec<f64>> {
        let p = self.dropout;
        let keep_scale = 1.0 / (1.0 - p);
        (0..self.passes)
            .map(|pass| {
                let mut path = key.to_vec();
                path.extend([chunk_idx as u64, pass as u64]);
                let mut r = rng::stream(self.seed, Purpose::Dropout, &path);
                let mut keep = || if r.random::<f64>() < p { 0.0 } else { keep_scale };
                let out = self.net.forward(xs.view(), Some(&mut keep)).2;
                out.column(0).iter().map(|m| self.y_mean + self.y_scale * m).collect()
            })
            .collect()
    }
}

/// Sample mean and unbiased sample standard deviation.
pub fn sample_mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
