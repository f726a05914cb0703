//! Fully connected feed-forward regression network trained on squared error.
//!
//! Layers store weights row-major as `n_out x n_in`. Every layer carries a
//! `trainable` flag; training never writes to a frozen layer, and a frozen
//! prefix of the network is evaluated once up front instead of every epoch.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Warning};
use crate::rng::{self, Key};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => libm::tanh(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }

    /// Variance scale of the uniform initialiser.
    fn init_gain(self) -> f64 {
        match self {
            Activation::Relu => 2.0,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetArchitecture {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for NetArchitecture {
    fn default() -> Self {
        NetArchitecture {
            input: 9,
            hidden: vec![64, 32, 32],
            activation: Activation::Relu,
        }
    }
}

impl NetArchitecture {
    /// Input, hidden and output widths in order.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input);
        w.extend_from_slice(&self.hidden);
        w.push(1);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::param("layer_widths", "every width must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub trainable: bool,
}

impl Layer {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Layer {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
            trainable: true,
        }
    }

    /// Uniform bound `sqrt(3 * gain / fan_in)` of the initialiser.
    pub fn init_bound(n_in: usize, activation: Activation) -> f64 {
        libm::sqrt(3.0 * activation.init_gain() / n_in as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub arch: NetArchitecture,
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn zeros(arch: &NetArchitecture) -> Result<Self> {
        arch.validate()?;
        let w = arch.widths();
        let layers = w.windows(2).map(|p| Layer::zeros(p[0], p[1])).collect();
        Ok(Network {
            arch: arch.clone(),
            layers,
        })
    }

    /// Variance-scaled uniform weights, zero biases.
    pub fn init(arch: &NetArchitecture, seed: u64) -> Result<Self> {
        let mut net = Network::zeros(arch)?;
        let mut stream = rng::derived_stream(seed, &[Key::Label("init")]);
        for layer in &mut net.layers {
            let bound = Layer::init_bound(layer.n_in, arch.activation);
            for w in &mut layer.weights {
                *w = stream.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for l in &mut self.layers {
            l.trainable = trainable;
        }
    }

    /// Freezes every layer except the output layer.
    pub fn freeze_hidden(&mut self) {
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.trainable = i == last;
        }
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn check_arity(&self, found: usize) -> Result<()> {
        let expected = self.n_inputs();
        if found != expected {
            return Err(Error::ArityMismatch { expected, found });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_arity(x.len())?;
        let mut a = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            next.clear();
            for o in 0..l.n_out {
                let w = &l.weights[o * l.n_in..(o + 1) * l.n_in];
                let z = l.bias[o] + w.iter().zip(&a).map(|(w, a)| w * a).sum::<f64>();
                next.push(if li == last { z } else { self.arch.activation.apply(z) });
            }
            core::mem::swap(&mut a, &mut next);
        }
        Ok(a[0])
    }

    /// Predictions for every row of a row-major matrix.
    pub fn predict_rows(&self, x: &[f64]) -> Result<Vec<f64>> {
        let p = self.n_inputs();
        if x.len() % p != 0 {
            return Err(Error::ArityMismatch {
                expected: p,
                found: x.len() % p,
            });
        }
        let n = x.len() / p;
        let mut out = Vec::with_capacity(n);
        let mut ws = Workspace::default();
        for chunk in x.chunks(256 * p) {
            let b = chunk.len() / p;
            forward_batch(self, 0, chunk, b, &mut ws);
            out.extend_from_slice(ws.acts.last().map(|v| &v[..b]).unwrap_or(&[]));
        }
        Ok(out)
    }
}

/// `c = a * b + beta * c` for row-major `c` (`m` x `n`); `a` and `b` are
/// given as (row stride, column stride) views of `m` x `k` and `k` x `n`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), beta: f64, c: &mut [f64]) {
    let last = |rows: usize, cols: usize, (rs, cs): (usize, usize)| (rows - 1) * rs + (cols - 1) * cs;
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!(a.len() > last(m, k, sa) && b.len() > last(k, n, sb));
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Affine map of `b` rows through `l`, then `activation` if given.
fn layer_forward(l: &Layer, a: &[f64], b: usize, out: &mut Vec<f64>, activation: Option<Activation>) {
    out.clear();
    for _ in 0..b {
        out.extend_from_slice(&l.bias);
    }
    gemm(b, l.n_in, l.n_out, a, (l.n_in, 1), &l.weights, (1, l.n_in), 1.0, out);
    if let Some(act) = activation {
        out.iter_mut().for_each(|z| *z = act.apply(*z));
    }
}

/// Per-batch activations; `acts[k]` holds the output of layer `start + k - 1`
/// (with `acts[0]` the batch input).
#[derive(Default)]
struct Workspace {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

fn forward_batch(net: &Network, start: usize, input: &[f64], b: usize, ws: &mut Workspace) {
    let n_layers = net.layers.len() - start;
    ws.acts.resize_with(n_layers + 1, Vec::new);
    ws.acts[0].clear();
    ws.acts[0].extend_from_slice(input);
    let last = net.layers.len() - 1;
    for k in 0..n_layers {
        let li = start + k;
        let (prev, rest) = ws.acts.split_at_mut(k + 1);
        let act = (li != last).then_some(net.arch.activation);
        layer_forward(&net.layers[li], &prev[k], b, &mut rest[0], act);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    fn zeros_like(net: &Network) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    fn clear(&mut self) {
        for g in &mut self.layers {
            g.weights.iter_mut().for_each(|v| *v = 0.0);
            g.bias.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Flattened in the same order as [`Network::params_flat`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.extend_from_slice(&g.weights);
            out.extend_from_slice(&g.bias);
        }
        out
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.flat().iter().map(|v| v * v).sum())
    }
}

fn first_trainable(net: &Network) -> Option<usize> {
    net.layers.iter().position(|l| l.trainable)
}

/// Backpropagates the batch loss; `ws` must hold the forward pass from
/// layer `start`. Returns the mean squared error.
fn backward_batch(net: &Network, start: usize, y: &[f64], ws: &mut Workspace, grads: &mut Gradients) -> f64 {
    let b = y.len();
    let n_layers = net.layers.len() - start;
    let out = &ws.acts[n_layers];
    let mut loss = 0.0;
    ws.delta.clear();
    for s in 0..b {
        let e = out[s] - y[s];
        loss += e * e;
        ws.delta.push(2.0 * e / b as f64);
    }
    let stop = first_trainable(net).unwrap_or(net.layers.len()).max(start);
    for li in (stop..net.layers.len()).rev() {
        let k = li - start;
        let l = &net.layers[li];
        let a_prev = &ws.acts[k];
        if l.trainable {
            let g = &mut grads.layers[li];
            gemm(l.n_out, b, l.n_in, &ws.delta, (1, l.n_out), a_prev, (l.n_in, 1), 1.0, &mut g.weights);
            for d in ws.delta.chunks_exact(l.n_out) {
                for (gb, dv) in g.bias.iter_mut().zip(d) {
                    *gb += dv;
                }
            }
        }
        if li > stop {
            ws.delta_prev.clear();
            ws.delta_prev.resize(b * l.n_in, 0.0);
            gemm(b, l.n_out, l.n_in, &ws.delta, (l.n_out, 1), &l.weights, (l.n_in, 1), 0.0, &mut ws.delta_prev);
            for (dv, &av) in ws.delta_prev.iter_mut().zip(a_prev.iter()) {
                *dv *= net.arch.activation.derivative_from_output(av);
            }
            core::mem::swap(&mut ws.delta, &mut ws.delta_prev);
        }
    }
    loss / b as f64
}

/// Mean squared error of the batch and its exact gradient with respect to
/// the trainable layers. Frozen layers get zero entries.
pub fn grad(net: &Network, x: &[f64], y: &[f64]) -> Result<(f64, Gradients)> {
    if y.is_empty() {
        return Err(Error::EmptyData("gradient needs a non-empty batch"));
    }
    let p = net.n_inputs();
    if x.len() != y.len() * p {
        return Err(Error::ArityMismatch {
            expected: y.len() * p,
            found: x.len(),
        });
    }
    let mut ws = Workspace::default();
    let mut grads = Gradients::zeros_like(net);
    forward_batch(net, 0, x, y.len(), &mut ws);
    let loss = backward_batch(net, 0, y, &mut ws, &mut grads);
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub validation_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub early_stopping: Option<EarlyStopping>,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 500,
            batch_size: 256,
            early_stopping: Some(EarlyStopping {
                patience: 20,
                validation_fraction: 0.1,
            }),
            lr_decay: 0.97,
            optimizer: Optimizer::Sgd,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::param("learning_rate", "must be finite and >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be >= 1"));
        }
        if !(self.lr_decay > 0.0) {
            return Err(Error::param("lr_decay", "must be positive"));
        }
        if let Some(es) = self.early_stopping {
            if !(es.validation_fraction > 0.0 && es.validation_fraction < 1.0) {
                return Err(Error::param("validation_fraction", "must lie in (0, 1)"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    EarlyStopped,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stop: StopReason,
}

impl TrainLog {
    pub fn warning(&self) -> Option<Warning> {
        (self.stop == StopReason::Diverged).then(|| Warning::TrainingDiverged {
            epoch: self.epochs.len(),
        })
    }
}

struct OptState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl OptState {
    fn new(net: &Network) -> Self {
        let sizes = net.layers.iter().map(|l| l.weights.len() + l.bias.len());
        OptState {
            m: sizes.clone().map(|n| vec![0.0; n]).collect(),
            v: sizes.map(|n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, net: &mut Network, grads: &Gradients, lr: f64, opt: Optimizer) {
        self.t += 1;
        for (li, layer) in net.layers.iter_mut().enumerate() {
            if !layer.trainable {
                continue;
            }
            let g = &grads.layers[li];
            let params = layer.weights.iter_mut().chain(layer.bias.iter_mut());
            let gs = g.weights.iter().chain(g.bias.iter());
            match opt {
                Optimizer::Sgd => {
                    for (p, &gv) in params.zip(gs) {
                        *p -= lr * gv;
                    }
                }
                Optimizer::Adam {
                    beta1,
                    beta2,
                    epsilon,
                } => {
                    let lr_t = lr * libm::sqrt(1.0 - libm::pow(beta2, self.t as f64))
                        / (1.0 - libm::pow(beta1, self.t as f64));
                    let (m, v) = (&mut self.m[li], &mut self.v[li]);
                    for (k, (p, &gv)) in params.zip(gs).enumerate() {
                        m[k] = beta1 * m[k] + (1.0 - beta1) * gv;
                        v[k] = beta2 * v[k] + (1.0 - beta2) * gv * gv;
                        *p -= lr_t * m[k] / (libm::sqrt(v[k]) + epsilon);
                    }
                }
            }
        }
    }
}

fn mse_of(net: &Network, start: usize, x: &[f64], y: &[f64], ws: &mut Workspace) -> f64 {
    let p = net.layers[start].n_in;
    let mut sse = 0.0;
    for (xc, yc) in x.chunks(512 * p).zip(y.chunks(512)) {
        forward_batch(net, start, xc, yc.len(), ws);
        let out = ws.acts.last().expect("forward pass ran");
        for (o, t) in out.iter().zip(yc) {
            sse += (o - t) * (o - t);
        }
    }
    sse / y.len().max(1) as f64
}

/// Mini-batch training honouring the trainable flags.
///
/// The learning rate is multiplied by `lr_decay` after every epoch. With
/// early stopping a seeded validation split is held out and training stops
/// after `patience` consecutive epochs without a validation improvement (at
/// the first one when `patience` is zero);
/// the parameters of the best validation epoch are returned. If the loss
/// becomes non-finite, training aborts and the best parameters seen so far
/// are returned with [`StopReason::Diverged`].
pub fn train(net: &Network, x: &[f64], y: &[f64], config: &TrainConfig) -> Result<(Network, TrainLog)> {
    config.validate()?;
    let p = net.n_inputs();
    if y.is_empty() {
        return Err(Error::EmptyData("network training needs at least one row"));
    }
    if x.len() != y.len() * p {
        return Err(Error::ArityMismatch {
            expected: y.len() * p,
            found: x.len(),
        });
    }
    let mut log = TrainLog {
        epochs: Vec::new(),
        best_epoch: None,
        stop: StopReason::Completed,
    };
    let Some(start) = first_trainable(net) else {
        return Ok((net.clone(), log));
    };
    if config.epochs == 0 {
        return Ok((net.clone(), log));
    }

    // Frozen prefix: evaluate once, then train the remaining layers on its output.
    let (xin, width) = if start == 0 {
        (x.to_vec(), p)
    } else {
        let prefix = Network {
            arch: net.arch.clone(),
            layers: net.layers[..start].to_vec(),
        };
        let mut ws = Workspace::default();
        let mut out = Vec::with_capacity(y.len() * net.layers[start].n_in);
        for chunk in x.chunks(512 * p) {
            let b = chunk.len() / p;
            forward_batch_hidden(&prefix, chunk, b, &mut ws);
            out.extend_from_slice(ws.acts.last().expect("forward pass ran"));
        }
        (out, net.layers[start].n_in)
    };

    let n = y.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut split_rng = rng::derived_stream(config.seed, &[Key::Label("validation")]);
    let n_val = match config.early_stopping {
        Some(es) if n >= 2 => {
            order.shuffle(&mut split_rng);
            (libm::round(n as f64 * es.validation_fraction) as usize).clamp(1, n - 1)
        }
        _ => 0,
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let gather = |idx: &[usize]| -> (Vec<f64>, Vec<f64>) {
        let mut xs = Vec::with_capacity(idx.len() * width);
        let mut ys = Vec::with_capacity(idx.len());
        for &i in idx {
            xs.extend_from_slice(&xin[i * width..(i + 1) * width]);
            ys.push(y[i]);
        }
        (xs, ys)
    };
    let (x_val, y_val) = gather(val_idx);
    let mut train_rows: Vec<usize> = train_idx.to_vec();
    train_rows.sort_unstable();

    let mut current = net.clone();
    let mut best = net.clone();
    let mut best_val = f64::INFINITY;
    let mut wait = 0usize;
    let mut ws = Workspace::default();
    let mut grads = Gradients::zeros_like(net);
    let mut opt = OptState::new(net);
    let mut bx = Vec::with_capacity(config.batch_size * width);
    let mut by = Vec::with_capacity(config.batch_size);
    let mut lr = config.learning_rate;

    for epoch in 0..config.epochs {
        let mut epoch_rng =
            rng::derived_stream(config.seed, &[Key::Label("epoch"), Key::Index(epoch as u64)]);
        let mut batch_order = train_rows.clone();
        batch_order.shuffle(&mut epoch_rng);
        let mut sse = 0.0;
        let mut diverged = false;
        for batch in batch_order.chunks(config.batch_size) {
            bx.clear();
            by.clear();
            for &i in batch {
                bx.extend_from_slice(&xin[i * width..(i + 1) * width]);
                by.push(y[i]);
            }
            grads.clear();
            forward_batch(&current, start, &bx, by.len(), &mut ws);
            let loss = backward_batch(&current, start, &by, &mut ws, &mut grads);
            if !loss.is_finite() {
                diverged = true;
                break;
            }
            sse += loss * by.len() as f64;
            opt.step(&mut current, &grads, lr, config.optimizer);
        }
        if diverged || !current.is_finite() {
            log.stop = StopReason::Diverged;
            break;
        }
        let train_mse = sse / train_rows.len() as f64;
        let val_mse = (n_val > 0).then(|| mse_of(&current, start, &x_val, &y_val, &mut ws));
        log.epochs.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
            lr,
        });
        if !train_mse.is_finite() || val_mse.is_some_and(|v| !v.is_finite()) {
            log.stop = StopReason::Diverged;
            break;
        }
        lr *= config.lr_decay;
        match (config.early_stopping, val_mse) {
            (Some(es), Some(v)) => {
                if v < best_val {
                    best_val = v;
                    best.clone_from(&current);
                    log.best_epoch = Some(epoch);
                    wait = 0;
                } else {
                    wait += 1;
                    if wait >= es.patience.max(1) {
                        log.stop = StopReason::EarlyStopped;
                        break;
                    }
                }
            }
            _ => {
                best.clone_from(&current);
                log.best_epoch = Some(epoch);
            }
        }
    }
    Ok((best, log))
}

fn forward_batch_hidden(prefix: &Network, input: &[f64], b: usize, ws: &mut Workspace) {
    // The prefix never contains the output layer, so every layer is activated.
    let n = prefix.layers.len();
    ws.acts.resize_with(n + 1, Vec::new);
    ws.acts[0].clear();
    ws.acts[0].extend_from_slice(input);
    for (k, l) in prefix.layers.iter().enumerate() {
        let (prev, rest) = ws.acts.split_at_mut(k + 1);
        layer_forward(l, &prev[k], b, &mut rest[0], Some(prefix.arch.activation));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_arch() -> NetArchitecture {
        NetArchitecture {
            input: 2,
            hidden: vec![2],
            activation: Activation::Relu,
        }
    }

    #[test]
    fn init_is_seeded_with_zero_bias_and_bounded_weights() {
        let arch = NetArchitecture::default();
        let a = Network::init(&arch, 5).unwrap();
        assert_eq!(a, Network::init(&arch, 5).unwrap());
        assert_ne!(a, Network::init(&arch, 6).unwrap());
        for l in &a.layers {
            assert!(l.bias.iter().all(|&b| b == 0.0));
            let bound = Layer::init_bound(l.n_in, arch.activation);
            assert!(l.weights.iter().all(|w| w.abs() <= bound));
        }
        assert_eq!(a.n_params(), 9 * 64 + 64 + 64 * 32 + 32 + 32 * 32 + 32 + 32 + 1);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Network::zeros(&NetArchitecture::default()).unwrap();
        assert_eq!(net.forward(&[3.0; 9]).unwrap(), 0.0);
        assert!(matches!(net.forward(&[1.0; 8]), Err(Error::ArityMismatch { expected: 9, found: 8 })));
    }

    #[test]
    fn hand_computed_two_layer_output() {
        // h = relu([1 2; -1 1] x + [0.5, 0]), y = [3, -2] h + 1
        let mut net = Network::zeros(&tiny_arch()).unwrap();
        net.layers[0].weights = vec![1.0, 2.0, -1.0, 1.0];
        net.layers[0].bias = vec![0.5, 0.0];
        net.layers[1].weights = vec![3.0, -2.0];
        net.layers[1].bias = vec![1.0];
        // x = (1, 1): h = (3.5, 0) -> y = 11.5
        assert_eq!(net.forward(&[1.0, 1.0]).unwrap(), 11.5);
        // x = (-1, 2): h = (3.5, 3) -> y = 10.5 - 6 + 1
        assert_eq!(net.forward(&[-1.0, 2.0]).unwrap(), 5.5);
        let batch = net.predict_rows(&[1.0, 1.0, -1.0, 2.0]).unwrap();
        assert_eq!(batch, [11.5, 5.5]);
    }

    #[test]
    fn perfect_fit_has_zero_gradient() {
        let mut net = Network::zeros(&tiny_arch()).unwrap();
        net.layers[1].bias = vec![2.0];
        let (loss, g) = grad(&net, &[1.0, 2.0, 3.0, 4.0], &[2.0, 2.0]).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn frozen_layers_get_zero_gradient() {
        let mut net = Network::init(&NetArchitecture::default(), 3).unwrap();
        net.freeze_hidden();
        let x: Vec<f64> = (0..27).map(|v| v as f64 * 0.1).collect();
        let (_, g) = grad(&net, &x, &[1.0, 2.0, 3.0]).unwrap();
        for lg in &g.layers[..3] {
            assert!(lg.weights.iter().chain(&lg.bias).all(|&v| v == 0.0));
        }
        assert!(g.layers[3].weights.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn empty_batch_is_an_error() {
        let net = Network::zeros(&tiny_arch()).unwrap();
        assert!(grad(&net, &[], &[]).is_err());
        assert!(train(&net, &[], &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn zero_epochs_returns_input() {
        let net = Network::init(&tiny_arch(), 1).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let (out, log) = train(&net, &[1.0, 2.0], &[3.0], &cfg).unwrap();
        assert_eq!(out, net);
        assert!(log.epochs.is_empty());
    }

    #[test]
    fn patience_zero_stops_at_first_non_improvement() {
        let net = Network::init(&tiny_arch(), 1).unwrap();
        let x: Vec<f64> = (0..200).map(|v| (v % 17) as f64 / 17.0).collect();
        let y: Vec<f64> = x.chunks(2).map(|r| r[0] - r[1]).collect();
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 8,
            learning_rate: 0.5,
            optimizer: Optimizer::Sgd,
            lr_decay: 1.0,
            early_stopping: Some(EarlyStopping {
                patience: 0,
                validation_fraction: 0.2,
            }),
            seed: 3,
        };
        let (_, log) = train(&net, &x, &y, &cfg).unwrap();
        let vals: Vec<f64> = log.epochs.iter().map(|e| e.val_mse.unwrap()).collect();
        if log.stop == StopReason::EarlyStopped {
            let k = vals.len() - 1;
            assert!(vals[k] >= vals[..k].iter().cloned().fold(f64::INFINITY, f64::min));
            for i in 1..k {
                assert!(vals[i] < vals[..i].iter().cloned().fold(f64::INFINITY, f64::min));
            }
        } else {
            assert_eq!(log.epochs.len(), 200);
        }
    }

    #[test]
    fn huge_learning_rate_diverges_gracefully() {
        let net = Network::init(&NetArchitecture::default(), 2).unwrap();
        let x: Vec<f64> = (0..900).map(|v| (v % 31) as f64).collect();
        let y: Vec<f64> = (0..100).map(|v| (v * 1000) as f64).collect();
        let cfg = TrainConfig {
            learning_rate: 1e6,
            optimizer: Optimizer::Sgd,
            epochs: 50,
            batch_size: 10,
            ..Default::default()
        };
        let (out, log) = train(&net, &x, &y, &cfg).unwrap();
        assert_eq!(log.stop, StopReason::Diverged);
        assert!(out.is_finite());
        assert!(log.warning().is_some());
    }
}
