//! Stacked RNN and LSTM regressors trained by backpropagation through time
//! with Adam on mean squared error.
//!
//! `layer_sizes` lists the recurrent layer widths followed by the final
//! dense output width, which must be 1. The dense layer reads the last time
//! step of the top recurrent layer.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, ModelError};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    Rnn,
    Lstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// Linear units; used to compare against closed-form solutions.
    Identity,
}

impl Activation {
    fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Self::Relu => v.max(T::zero()),
            Self::Identity => v,
        }
    }

    fn derivative<T: Scalar>(self, v: T) -> T {
        match self {
            Self::Relu => {
                if v > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Self::Identity => T::one(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub kind: NetKind,
    pub layer_sizes: Vec<usize>,
    pub dropout: f64,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Adam,
}

impl NetSpec {
    pub fn rnn_default() -> Self {
        Self {
            kind: NetKind::Rnn,
            layer_sizes: vec![1024, 256, 1],
            dropout: 0.02,
            activation: Activation::Relu,
            epochs: 500,
            batch_size: 10,
            optimizer: Adam::default(),
        }
    }

    pub fn lstm_default() -> Self {
        Self { kind: NetKind::Lstm, layer_sizes: vec![200, 100, 50, 1], ..Self::rnn_default() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidSpec(m.to_string()));
        if self.layer_sizes.len() < 2 {
            return bad("need at least one recurrent layer and the output layer");
        }
        if self.layer_sizes.last() != Some(&1) {
            return bad("last layer size must be 1");
        }
        if self.layer_sizes.contains(&0) {
            return bad("zero-sized layer");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.optimizer.lr >= 0.0) {
            return bad("learning rate must be non-negative");
        }
        Ok(())
    }

    fn recurrent(&self) -> &[usize] {
        &self.layer_sizes[..self.layer_sizes.len() - 1]
    }

    fn gates(&self) -> usize {
        match self.kind {
            NetKind::Rnn => 1,
            NetKind::Lstm => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputLayout {
    pub time_steps: usize,
    pub step_features: usize,
}

/// How a windowed feature row becomes a network input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// One time step per window position, oldest first; each step holds
    /// every market's value at that lag.
    Sequence,
    /// A single time step holding the whole row.
    Flattened,
}

/// Samples × time steps × features, stored sample-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequences<T> {
    pub layout: InputLayout,
    data: Vec<T>,
}

impl<T: Scalar> Sequences<T> {
    pub fn new(layout: InputLayout, data: Vec<T>) -> Self {
        let per = layout.time_steps * layout.step_features;
        assert!(per > 0 && data.len() % per == 0, "data length is not a multiple of the sample size");
        Self { layout, data }
    }

    /// Reshapes windowed rows (column `m·window + k` = market `m` at lag
    /// `k`, lag 0 most recent).
    pub fn from_windowed(x: &Matrix<T>, n_markets: usize, window: usize, mode: InputMode) -> Self {
        assert_eq!(x.cols(), n_markets * window, "feature count must be markets × window");
        match mode {
            InputMode::Flattened => {
                Self::new(InputLayout { time_steps: 1, step_features: x.cols() }, x.as_slice().to_vec())
            }
            InputMode::Sequence => {
                let mut data = Vec::with_capacity(x.rows() * x.cols());
                for row in x.iter_rows() {
                    for s in 0..window {
                        let k = window - 1 - s;
                        data.extend((0..n_markets).map(|m| row[m * window + k]));
                    }
                }
                Self::new(InputLayout { time_steps: window, step_features: n_markets }, data)
            }
        }
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.layout.time_steps * self.layout.step_features)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let per = self.layout.time_steps * self.layout.step_features;
        &self.data[i * per..(i + 1) * per]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel<T: Scalar = f64> {
    pub spec: NetSpec,
    pub layout: InputLayout,
    pub parameters: Vec<T>,
    /// Training targets are standardized; predictions are mapped back with
    /// `mean + scale · output`.
    pub target_mean: T,
    pub target_scale: T,
    /// Per step-feature standardization applied to inputs before the
    /// network; empty means inputs are used as given.
    #[serde(default)]
    pub input_mean: Vec<T>,
    #[serde(default)]
    pub input_scale: Vec<T>,
    pub loss_curve: Vec<f64>,
    pub seed: u64,
}

/// Exact parameter count of `spec` on `layout`.
pub fn parameter_count(spec: &NetSpec, layout: &InputLayout) -> usize {
    let g = spec.gates();
    let mut input = layout.step_features;
    let mut total = 0;
    for &h in spec.recurrent() {
        total += g * h * (input + h + 1);
        input = h;
    }
    total + input + 1
}

/// Offsets of one recurrent layer's blocks in the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct LayerShape {
    input: usize,
    hidden: usize,
    wx: usize,
    wh: usize,
    b: usize,
}

fn shapes(spec: &NetSpec, layout: &InputLayout) -> (Vec<LayerShape>, usize) {
    let g = spec.gates();
    let mut input = layout.step_features;
    let mut at = 0;
    let mut out = Vec::new();
    for &h in spec.recurrent() {
        let wx = at;
        let wh = wx + g * h * input;
        let b = wh + g * h * h;
        at = b + g * h;
        out.push(LayerShape { input, hidden: h, wx, wh, b });
        input = h;
    }
    (out, at)
}

pub fn net_init<T: Scalar>(spec: &NetSpec, layout: InputLayout, seed: u64) -> Result<NetworkModel<T>, ModelError> {
    spec.validate()?;
    if layout.time_steps == 0 || layout.step_features == 0 {
        return Err(ModelError::InvalidSpec("empty input layout".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    let (layers, dense) = shapes(spec, &layout);
    let mut p = vec![T::zero(); parameter_count(spec, &layout)];
    let g = spec.gates();
    let mut glorot = |slice: &mut [T], fan_in: usize, fan_out: usize| {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in slice {
            *v = T::lit(rng.random_range(-limit..limit));
        }
    };
    for l in &layers {
        let (i, h) = (l.input, l.hidden);
        glorot(&mut p[l.wx..l.wh], i, g * h);
        glorot(&mut p[l.wh..l.b], h, g * h);
        if spec.kind == NetKind::Lstm {
            // gate order: input, forget, candidate, output
            p[l.b + h..l.b + 2 * h].iter_mut().for_each(|v| *v = T::one());
        }
    }
    let top = layers.last().expect("validated").hidden;
    glorot(&mut p[dense..dense + top], top, 1);
    Ok(NetworkModel {
        spec: spec.clone(),
        layout,
        parameters: p,
        target_mean: T::zero(),
        target_scale: T::one(),
        input_mean: Vec::new(),
        input_scale: Vec::new(),
        loss_curve: Vec::new(),
        seed,
    })
}

fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// Per-layer forward state kept for the backward pass, flattened by time
/// step.
struct LayerCache<T> {
    inputs: Vec<T>,
    /// Pre-activations, `gates·h` per step.
    pre: Vec<T>,
    /// LSTM gate activations (input, forget, candidate, output).
    acts: Vec<T>,
    /// LSTM cell states.
    cells: Vec<T>,
    hidden: Vec<T>,
    /// Inverted-dropout mask applied to `hidden` before it leaves the layer.
    mask: Option<Vec<T>>,
}

impl<T: Scalar> LayerCache<T> {
    fn output(&self, t: usize, h: usize) -> impl Iterator<Item = T> + '_ {
        let hid = &self.hidden[t * h..(t + 1) * h];
        hid.iter().enumerate().map(move |(j, &v)| match &self.mask {
            Some(m) => v * m[j],
            None => v,
        })
    }
}

fn matvec_add<T: Scalar>(out: &mut [T], w: &[T], x: &[T]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = T::zero();
        for (a, b) in row.iter().zip(x) {
            acc += *a * *b;
        }
        *o += acc;
    }
}

/// `grad_w += d ⊗ x`, `dx += wᵀ d`.
fn outer_and_back<T: Scalar>(grad_w: &mut [T], w: &[T], d: &[T], x: &[T], dx: Option<&mut [T]>) {
    let cols = x.len();
    for (r, &dr) in d.iter().enumerate() {
        if dr == T::zero() {
            continue;
        }
        let g = &mut grad_w[r * cols..(r + 1) * cols];
        for (gv, &xv) in g.iter_mut().zip(x) {
            *gv += dr * xv;
        }
    }
    if let Some(dx) = dx {
        for (r, &dr) in d.iter().enumerate() {
            if dr == T::zero() {
                continue;
            }
            let row = &w[r * cols..(r + 1) * cols];
            for (o, &wv) in dx.iter_mut().zip(row) {
                *o += dr * wv;
            }
        }
    }
}

struct Forward<'a> {
    spec: &'a NetSpec,
    layout: InputLayout,
    layers: Vec<LayerShape>,
    dense: usize,
}

impl<'a> Forward<'a> {
    fn new(spec: &'a NetSpec, layout: InputLayout) -> Self {
        let (layers, dense) = shapes(spec, &layout);
        Self { spec, layout, layers, dense }
    }

    fn run<T: Scalar>(&self, p: &[T], x: &[T], masks: Option<Vec<Vec<T>>>) -> (T, Vec<LayerCache<T>>) {
        let steps = self.layout.time_steps;
        let act = self.spec.activation;
        let mut masks = masks.map(|m| m.into_iter());
        let mut input: Vec<T> = x.to_vec();
        let mut caches = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (ni, h) = (l.input, l.hidden);
            let gh = self.spec.gates() * h;
            let mut pre = vec![T::zero(); steps * gh];
            let mut hidden = vec![T::zero(); steps * h];
            let mut acts = Vec::new();
            let mut cells = Vec::new();
            if self.spec.kind == NetKind::Lstm {
                acts = vec![T::zero(); steps * gh];
                cells = vec![T::zero(); steps * h];
            }
            for t in 0..steps {
                let z = &mut pre[t * gh..(t + 1) * gh];
                z.copy_from_slice(&p[l.b..l.b + gh]);
                matvec_add(z, &p[l.wx..l.wh], &input[t * ni..(t + 1) * ni]);
                if t > 0 {
                    matvec_add(z, &p[l.wh..l.b], &hidden[(t - 1) * h..t * h]);
                }
                match self.spec.kind {
                    NetKind::Rnn => {
                        for j in 0..h {
                            hidden[t * h + j] = act.apply(z[j]);
                        }
                    }
                    NetKind::Lstm => {
                        let a = &mut acts[t * gh..(t + 1) * gh];
                        for j in 0..h {
                            a[j] = sigmoid(z[j]);
                            a[h + j] = sigmoid(z[h + j]);
                            a[2 * h + j] = act.apply(z[2 * h + j]);
                            a[3 * h + j] = sigmoid(z[3 * h + j]);
                            let c_prev = if t > 0 { cells[(t - 1) * h + j] } else { T::zero() };
                            let c = a[h + j] * c_prev + a[j] * a[2 * h + j];
                            cells[t * h + j] = c;
                            hidden[t * h + j] = a[3 * h + j] * act.apply(c);
                        }
                    }
                }
            }
            let cache = LayerCache {
                inputs: input,
                pre,
                acts,
                cells,
                hidden,
                mask: masks.as_mut().and_then(|m| m.next()),
            };
            input = (0..steps).flat_map(|t| cache.output(t, h).collect::<Vec<_>>()).collect();
            caches.push(cache);
        }
        let top = self.layers.last().expect("validated").hidden;
        let last = &input[(steps - 1) * top..steps * top];
        let w = &p[self.dense..self.dense + top];
        let y = last.iter().zip(w).map(|(&a, &b)| a * b).sum::<T>() + p[self.dense + top];
        (y, caches)
    }

    /// Accumulates `dout · ∂y/∂θ` into `grad`.
    fn backward<T: Scalar>(&self, p: &[T], caches: &[LayerCache<T>], dout: T, grad: &mut [T]) {
        let steps = self.layout.time_steps;
        let act = self.spec.activation;
        let top = self.layers.last().expect("validated").hidden;
        let top_cache = caches.last().expect("validated");
        let last_out: Vec<T> = top_cache.output(steps - 1, top).collect();
        for (j, &v) in last_out.iter().enumerate() {
            grad[self.dense + j] += dout * v;
        }
        grad[self.dense + top] += dout;
        // gradient w.r.t. the current layer's output sequence
        let mut d_out = vec![T::zero(); steps * top];
        for j in 0..top {
            d_out[(steps - 1) * top + j] = dout * p[self.dense + j];
        }
        for (li, l) in self.layers.iter().enumerate().rev() {
            let c = &caches[li];
            let (ni, h) = (l.input, l.hidden);
            let gh = self.spec.gates() * h;
            let mut d_in = vec![T::zero(); steps * ni];
            let mut dh_next = vec![T::zero(); h];
            let mut dc_next = vec![T::zero(); h];
            let mut dz = vec![T::zero(); gh];
            for t in (0..steps).rev() {
                let mut dh: Vec<T> = (0..h)
                    .map(|j| {
                        let m = c.mask.as_ref().map_or(T::one(), |m| m[j]);
                        d_out[t * h + j] * m + dh_next[j]
                    })
                    .collect();
                match self.spec.kind {
                    NetKind::Rnn => {
                        for j in 0..h {
                            dz[j] = dh[j] * act.derivative(c.pre[t * gh + j]);
                        }
                    }
                    NetKind::Lstm => {
                        let a = &c.acts[t * gh..(t + 1) * gh];
                        let z = &c.pre[t * gh..(t + 1) * gh];
                        for j in 0..h {
                            let cell = c.cells[t * h + j];
                            let c_prev = if t > 0 { c.cells[(t - 1) * h + j] } else { T::zero() };
                            let (i, f, g, o) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j]);
                            let d_o = dh[j] * act.apply(cell);
                            let dc = dh[j] * o * act.derivative(cell) + dc_next[j];
                            dz[j] = dc * g * i * (T::one() - i);
                            dz[h + j] = dc * c_prev * f * (T::one() - f);
                            dz[2 * h + j] = dc * i * act.derivative(z[2 * h + j]);
                            dz[3 * h + j] = d_o * o * (T::one() - o);
                            dc_next[j] = dc * f;
                        }
                    }
                }
                for (g, &d) in grad[l.b..l.b + gh].iter_mut().zip(&dz) {
                    *g += d;
                }
                let (gx, rest) = grad[l.wx..l.b].split_at_mut(l.wh - l.wx);
                outer_and_back(gx, &p[l.wx..l.wh], &dz, &c.inputs[t * ni..(t + 1) * ni], Some(&mut d_in[t * ni..(t + 1) * ni]));
                dh.iter_mut().for_each(|v| *v = T::zero());
                if t > 0 {
                    outer_and_back(rest, &p[l.wh..l.b], &dz, &c.hidden[(t - 1) * h..t * h], Some(&mut dh));
                }
                dh_next = dh;
            }
            d_out = d_in;
        }
    }
}

fn dropout_masks<T: Scalar>(spec: &NetSpec, rng: &mut ChaCha8Rng) -> Option<Vec<Vec<T>>> {
    if spec.dropout <= 0.0 {
        return None;
    }
    let keep = 1.0 - spec.dropout;
    let scale = T::lit(1.0 / keep);
    Some(
        spec.recurrent()
            .iter()
            .map(|&h| (0..h).map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() }).collect())
            .collect(),
    )
}

/// Squared error `(f(x) − target)²` of the raw network output and its
/// gradient with respect to every parameter (dropout off).
pub fn loss_and_gradient<T: Scalar>(m: &NetworkModel<T>, sample: &[T], target: T) -> (T, Vec<T>) {
    let fw = Forward::new(&m.spec, m.layout);
    let (y, caches) = fw.run(&m.parameters, sample, None);
    let mut grad = vec![T::zero(); m.parameters.len()];
    fw.backward(&m.parameters, &caches, T::lit(2.0) * (y - target), &mut grad);
    ((y - target) * (y - target), grad)
}

/// Largest relative difference between the analytic gradient and central
/// differences with step `h`. The denominator is floored at `1e-6` so
/// parameters with vanishing gradients compare on an absolute scale.
pub fn gradient_check(m: &NetworkModel<f64>, sample: &[f64], target: f64, h: f64) -> f64 {
    let (_, analytic) = loss_and_gradient(m, sample, target);
    let fw = Forward::new(&m.spec, m.layout);
    let mut p = m.parameters.clone();
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = (fw.run(&p, sample, None).0 - target).powi(2);
        p[i] = orig - h;
        let down = (fw.run(&p, sample, None).0 - target).powi(2);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

fn check_layout<T: Scalar>(m: &NetworkModel<T>, x: &Sequences<T>) -> Result<(), ModelError> {
    if x.layout != m.layout {
        return Err(ModelError::Dimension {
            expected: m.layout.time_steps * m.layout.step_features,
            got: x.layout.time_steps * x.layout.step_features,
        });
    }
    Ok(())
}

/// Trains from a fresh initialization. Inputs and targets are standardized
/// internally.
pub fn net_fit<T: Scalar>(x: &Sequences<T>, y: &[T], spec: &NetSpec, seed: u64) -> Result<NetworkModel<T>, ModelError> {
    let m = net_init(spec, x.layout, seed)?;
    net_train(m, x, y)
}

/// Continues training `m` for `m.spec.epochs` epochs.
pub fn net_train<T: Scalar>(mut m: NetworkModel<T>, x: &Sequences<T>, y: &[T]) -> Result<NetworkModel<T>, ModelError> {
    check_layout(&m, x)?;
    let n = x.len();
    if n == 0 {
        return Err(ModelError::EmptyInput);
    }
    if y.len() != n {
        return Err(ModelError::Dimension { expected: n, got: y.len() });
    }
    if n < m.spec.batch_size {
        return Err(ModelError::InsufficientData { needed: m.spec.batch_size, got: n });
    }
    if y.iter().any(|v| !v.is_finite()) || x.data.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("training data".into()));
    }
    let mean = y.iter().copied().sum::<T>() / T::from_usize_lossy(n);
    let var = y.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / T::from_usize_lossy(n);
    let scale = if var > T::zero() { var.sqrt() } else { T::one() };
    let z: Vec<T> = y.iter().map(|&v| (v - mean) / scale).collect();
    m.target_mean = mean;
    m.target_scale = scale;
    if m.input_mean.is_empty() {
        let (input_mean, input_scale) = feature_moments(x);
        m.input_mean = input_mean;
        m.input_scale = input_scale;
    }
    let xs = standardize(&m, x);
    let x = &xs;

    let spec = m.spec.clone();
    let fw = Forward::new(&spec, m.layout);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(m.seed, 1));
    let opt = spec.optimizer;
    let (b1, b2) = (T::lit(opt.beta1), T::lit(opt.beta2));
    let mut mom = vec![T::zero(); m.parameters.len()];
    let mut vel = vec![T::zero(); m.parameters.len()];
    let mut grad = vec![T::zero(); m.parameters.len()];
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0i32;
    for epoch in 0..spec.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for batch in order.chunks(spec.batch_size) {
            grad.iter_mut().for_each(|g| *g = T::zero());
            let bn = T::from_usize_lossy(batch.len());
            for &i in batch {
                let masks = dropout_masks(&spec, &mut rng);
                let (out, caches) = fw.run(&m.parameters, x.sample(i), masks);
                let err = out - z[i];
                total += (err * err).to_f64_lossy();
                fw.backward(&m.parameters, &caches, T::lit(2.0) * err / bn, &mut grad);
            }
            step += 1;
            let lr_t = T::lit(opt.lr * (1.0 - opt.beta2.powi(step)).sqrt() / (1.0 - opt.beta1.powi(step)));
            let eps = T::lit(opt.eps);
            for ((p, g), (mo, ve)) in m.parameters.iter_mut().zip(&grad).zip(mom.iter_mut().zip(vel.iter_mut())) {
                *mo = b1 * *mo + (T::one() - b1) * *g;
                *ve = b2 * *ve + (T::one() - b2) * *g * *g;
                *p -= lr_t * *mo / (ve.sqrt() + eps);
            }
        }
        let loss = total / n as f64;
        if !loss.is_finite() || m.parameters.iter().any(|p| !p.is_finite()) {
            return Err(ModelError::Diverged { epoch, loss });
        }
        m.loss_curve.push(loss);
    }
    Ok(m)
}

fn feature_moments<T: Scalar>(x: &Sequences<T>) -> (Vec<T>, Vec<T>) {
    let f = x.layout.step_features;
    let count = T::from_usize_lossy(x.data.len() / f);
    let mut mean = vec![T::zero(); f];
    for (i, &v) in x.data.iter().enumerate() {
        mean[i % f] += v;
    }
    mean.iter_mut().for_each(|v| *v = *v / count);
    let mut var = vec![T::zero(); f];
    for (i, &v) in x.data.iter().enumerate() {
        let d = v - mean[i % f];
        var[i % f] += d * d;
    }
    let scale = var.into_iter().map(|v| if v > T::zero() { (v / count).sqrt() } else { T::one() }).collect();
    (mean, scale)
}

fn standardize<T: Scalar>(m: &NetworkModel<T>, x: &Sequences<T>) -> Sequences<T> {
    if m.input_mean.is_empty() {
        return x.clone();
    }
    let f = x.layout.step_features;
    let data = x.data.iter().enumerate().map(|(i, &v)| (v - m.input_mean[i % f]) / m.input_scale[i % f]).collect();
    Sequences { layout: x.layout, data }
}

pub fn net_predict<T: Scalar>(m: &NetworkModel<T>, x: &Sequences<T>) -> Result<Vec<T>, ModelError> {
    check_layout(m, x)?;
    let x = &standardize(m, x);
    let fw = Forward::new(&m.spec, m.layout);
    Ok((0..x.len()).map(|i| m.target_mean + m.target_scale * fw.run(&m.parameters, x.sample(i), None).0).collect())
}
