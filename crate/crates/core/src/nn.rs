//! The discriminator: a small 1-D convolutional classifier over
//! [`MotionRepr`] grids, trained from scratch with backpropagation and Adam.
//!
//! Convolutions run along the 30 resampled steps with the 6 direction
//! components as input channels, valid padding, ReLU after every conv layer
//! and a single logistic output unit. All arithmetic is `f64`.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::motion::{Label, LabeledDataset, MotionRepr, REPR_CHANNELS, REPR_STEPS};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"IDSC";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_len: usize,
    pub input_channels: usize,
    pub convs: Vec<ConvSpec>,
}

impl Default for Architecture {
    /// 6 -> 16 (k5 s2) -> 32 (k5 s2) -> 64 (k3 s1) -> dense 192 -> 1.
    fn default() -> Self {
        let conv = |i, o, k, s| ConvSpec {
            in_channels: i,
            out_channels: o,
            kernel: k,
            stride: s,
        };
        Self {
            input_len: REPR_STEPS,
            input_channels: REPR_CHANNELS,
            convs: vec![conv(6, 16, 5, 2), conv(16, 32, 5, 2), conv(32, 64, 3, 1)],
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        let mut channels = self.input_channels;
        let mut len = self.input_len;
        if self.convs.is_empty() {
            return Err(Error::ShapeMismatch("no convolution layers".into()));
        }
        for (i, c) in self.convs.iter().enumerate() {
            if c.in_channels != channels || c.kernel == 0 || c.stride == 0 || c.out_channels == 0
            {
                return Err(Error::ShapeMismatch(format!("conv {i} does not chain: {c:?}")));
            }
            if c.kernel > len {
                return Err(Error::ShapeMismatch(format!(
                    "conv {i} kernel {} exceeds input length {len}",
                    c.kernel
                )));
            }
            len = (len - c.kernel) / c.stride + 1;
            channels = c.out_channels;
        }
        Ok(())
    }

    /// Output length of every conv layer.
    pub fn layer_lengths(&self) -> Vec<usize> {
        let mut len = self.input_len;
        self.convs
            .iter()
            .map(|c| {
                len = (len - c.kernel) / c.stride + 1;
                len
            })
            .collect()
    }

    pub fn flatten_dim(&self) -> usize {
        let last = self.convs.last().expect("validated");
        last.out_channels * self.layer_lengths().last().copied().unwrap_or(0)
    }

    fn conv_param_count(c: &ConvSpec) -> usize {
        c.out_channels * c.in_channels * c.kernel + c.out_channels
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(Self::conv_param_count).sum::<usize>() + self.flatten_dim() + 1
    }

    /// Offset of each conv layer's weights in the flat parameter vector,
    /// followed by the dense layer's offset.
    fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.convs.len() + 1);
        let mut off = 0;
        for c in &self.convs {
            out.push(off);
            off += Self::conv_param_count(c);
        }
        out.push(off);
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Binary cross-entropy, real = 1.
    #[default]
    Bce,
    /// Mean log-score of generated minus mean log-score of real entries.
    LogRatio,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub loss_mode: LossMode,
    pub clamp_eps: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 64,
            loss_mode: LossMode::Bce,
            clamp_eps: 1e-7,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig("learning rate must be >= 0".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return Err(Error::InvalidConfig("clamp epsilon must be in (0, 0.5)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    arch: Architecture,
    params: Vec<f64>,
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Activations kept for the backward pass.
struct Trace {
    /// Input followed by every conv layer's post-ReLU output, channel-major.
    acts: Vec<Vec<f64>>,
    logit: f64,
}

impl Discriminator {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let n = arch.param_count();
        Ok(Self {
            arch,
            params: vec![0.0; n],
        })
    }

    /// Scaled-normal initialisation: conv weights with variance 2/fan_in,
    /// dense weights with variance 1/fan_in, zero biases.
    pub fn new_random(arch: Architecture, seed: u64) -> Result<Self> {
        let mut d = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let offsets = d.arch.offsets();
        for (c, off) in d.arch.convs.clone().iter().zip(&offsets) {
            let fan_in = (c.in_channels * c.kernel) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
            let n = c.out_channels * c.in_channels * c.kernel;
            for w in &mut d.params[*off..off + n] {
                *w = normal.sample(&mut rng);
            }
        }
        let flat = d.arch.flatten_dim();
        let normal = Normal::new(0.0, (1.0 / flat as f64).sqrt()).expect("finite std");
        let off = *offsets.last().unwrap();
        for w in &mut d.params[off..off + flat] {
            *w = normal.sample(&mut rng);
        }
        Ok(d)
    }

    pub fn default_random(seed: u64) -> Self {
        Self::new_random(Architecture::default(), seed).expect("default architecture is valid")
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_input(&self) -> Result<()> {
        if self.arch.input_len != REPR_STEPS || self.arch.input_channels != REPR_CHANNELS {
            return Err(Error::MalformedInput(format!(
                "network expects {}x{} input, representation is {}x{}",
                self.arch.input_len, self.arch.input_channels, REPR_STEPS, REPR_CHANNELS
            )));
        }
        Ok(())
    }

    fn forward(&self, params: &[f64], m: &MotionRepr, keep: bool) -> Trace {
        let len0 = self.arch.input_len;
        let ch0 = self.arch.input_channels;
        let mut input = vec![0.0; ch0 * len0];
        for (t, row) in m.rows().iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                input[c * len0 + t] = *v;
            }
        }
        let offsets = self.arch.offsets();
        let mut acts = Vec::with_capacity(self.arch.convs.len() + 1);
        let mut cur = input;
        let mut len = len0;
        for (spec, off) in self.arch.convs.iter().zip(&offsets) {
            let out_len = (len - spec.kernel) / spec.stride + 1;
            let w = &params[*off..];
            let bias = &params[off + spec.out_channels * spec.in_channels * spec.kernel..];
            let mut out = vec![0.0; spec.out_channels * out_len];
            for o in 0..spec.out_channels {
                let dst = &mut out[o * out_len..(o + 1) * out_len];
                dst.iter_mut().for_each(|v| *v = bias[o]);
                for c in 0..spec.in_channels {
                    let src = &cur[c * len..(c + 1) * len];
                    let wk = &w[(o * spec.in_channels + c) * spec.kernel..][..spec.kernel];
                    for (t, v) in dst.iter_mut().enumerate() {
                        let base = t * spec.stride;
                        let mut acc = 0.0;
                        for (k, wv) in wk.iter().enumerate() {
                            acc += wv * src[base + k];
                        }
                        *v += acc;
                    }
                }
                dst.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            if keep {
                acts.push(std::mem::replace(&mut cur, out));
            } else {
                cur = out;
            }
            len = out_len;
        }
        let dense_off = *offsets.last().unwrap();
        let flat = cur.len();
        let mut logit = params[dense_off + flat];
        for (a, w) in cur.iter().zip(&params[dense_off..dense_off + flat]) {
            logit += a * w;
        }
        acts.push(cur);
        Trace { acts, logit }
    }

    /// Accumulates `dlogit * d(logit)/d(params)` into `grad`.
    fn backward(&self, params: &[f64], trace: &Trace, dlogit: f64, grad: &mut [f64]) {
        let offsets = self.arch.offsets();
        let dense_off = *offsets.last().unwrap();
        let last = trace.acts.last().unwrap();
        let flat = last.len();
        let mut d_act: Vec<f64> = params[dense_off..dense_off + flat]
            .iter()
            .map(|w| w * dlogit)
            .collect();
        for (g, a) in grad[dense_off..dense_off + flat].iter_mut().zip(last) {
            *g += dlogit * a;
        }
        grad[dense_off + flat] += dlogit;

        let lens = {
            let mut v = vec![self.arch.input_len];
            v.extend(self.arch.layer_lengths());
            v
        };
        for (li, spec) in self.arch.convs.iter().enumerate().rev() {
            let out = &trace.acts[li + 1];
            let input = &trace.acts[li];
            let in_len = lens[li];
            let out_len = lens[li + 1];
            let off = offsets[li];
            let bias_off = off + spec.out_channels * spec.in_channels * spec.kernel;
            // ReLU gate.
            for (d, a) in d_act.iter_mut().zip(out) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
            let mut d_in = if li > 0 {
                vec![0.0; spec.in_channels * in_len]
            } else {
                Vec::new()
            };
            for o in 0..spec.out_channels {
                let d_out = &d_act[o * out_len..(o + 1) * out_len];
                grad[bias_off + o] += d_out.iter().sum::<f64>();
                for c in 0..spec.in_channels {
                    let src = &input[c * in_len..(c + 1) * in_len];
                    let widx = off + (o * spec.in_channels + c) * spec.kernel;
                    for k in 0..spec.kernel {
                        let mut acc = 0.0;
                        for (t, d) in d_out.iter().enumerate() {
                            acc += d * src[t * spec.stride + k];
                        }
                        grad[widx + k] += acc;
                    }
                    if li > 0 {
                        let wk = &params[widx..widx + spec.kernel];
                        let dst = &mut d_in[c * in_len..(c + 1) * in_len];
                        for (t, d) in d_out.iter().enumerate() {
                            if *d == 0.0 {
                                continue;
                            }
                            for (k, w) in wk.iter().enumerate() {
                                dst[t * spec.stride + k] += d * w;
                            }
                        }
                    }
                }
            }
            d_act = d_in;
        }
    }

    /// Probability that `m` comes from the real set.
    pub fn score(&self, m: &MotionRepr) -> Result<f64> {
        self.check_input()?;
        Ok(logistic(self.forward(&self.params, m, false).logit))
    }

    /// Elementwise identical to calling [`Self::score`] on each entry.
    pub fn score_batch(&self, ms: &[MotionRepr]) -> Result<Vec<f64>> {
        self.check_input()?;
        Ok(ms
            .iter()
            .map(|m| logistic(self.forward(&self.params, m, false).logit))
            .collect())
    }

    pub fn logit(&self, m: &MotionRepr) -> Result<f64> {
        self.check_input()?;
        Ok(self.forward(&self.params, m, false).logit)
    }

    pub fn loss(&self, dataset: &LabeledDataset, mode: LossMode, clamp_eps: f64) -> Result<f64> {
        self.check_input()?;
        if !dataset.has_both_labels() {
            return Err(Error::SingleLabel);
        }
        let scores = self.score_batch(
            &dataset
                .entries
                .iter()
                .map(|e| e.repr.clone())
                .collect::<Vec<_>>(),
        )?;
        let labels: Vec<Label> = dataset.entries.iter().map(|e| e.label).collect();
        loss_from_scores(&scores, &labels, mode, clamp_eps)
    }

    /// Loss and gradient over `entries` of `dataset`.
    fn loss_and_grad(
        &self,
        params: &[f64],
        dataset: &LabeledDataset,
        indices: &[usize],
        mode: LossMode,
        clamp_eps: f64,
        grad: &mut [f64],
    ) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let n = indices.len() as f64;
        let n_real = indices
            .iter()
            .filter(|i| dataset.entries[**i].label == Label::Real)
            .count() as f64;
        let n_gen = n - n_real;
        let mut loss = 0.0;
        for &i in indices {
            let e = &dataset.entries[i];
            let trace = self.forward(params, &e.repr, true);
            let d = logistic(trace.logit);
            let inside = d > clamp_eps && d < 1.0 - clamp_eps;
            let dc = d.clamp(clamp_eps, 1.0 - clamp_eps);
            let dlogit = match mode {
                LossMode::Bce => {
                    let y = e.label.target();
                    loss -= (y * dc.ln() + (1.0 - y) * (1.0 - dc).ln()) / n;
                    if inside {
                        (d - y) / n
                    } else {
                        0.0
                    }
                }
                LossMode::LogRatio => {
                    let (sign, count) = match e.label {
                        Label::Generated => (1.0, n_gen),
                        Label::Real => (-1.0, n_real),
                    };
                    loss += sign * dc.ln() / count;
                    if inside {
                        sign * (1.0 - d) / count
                    } else {
                        0.0
                    }
                }
            };
            if dlogit != 0.0 {
                self.backward(params, &trace, dlogit, grad);
            }
        }
        loss
    }

    /// Analytic gradient of the full-dataset loss.
    pub fn gradient(&self, dataset: &LabeledDataset, mode: LossMode, clamp_eps: f64) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        let idx: Vec<usize> = (0..dataset.len()).collect();
        self.loss_and_grad(&self.params, dataset, &idx, mode, clamp_eps, &mut grad);
        grad
    }

    /// Trains in place with seeded shuffling and Adam. Returns the
    /// full-dataset loss after each epoch.
    pub fn train(&mut self, dataset: &LabeledDataset, config: &TrainConfig) -> Result<Vec<f64>> {
        config.validate()?;
        self.check_input()?;
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if !dataset.has_both_labels() {
            return Err(Error::SingleLabel);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let n = self.params.len();
        let mut m = vec![0.0; n];
        let mut v = vec![0.0; n];
        let mut grad = vec![0.0; n];
        let mut step = 0i32;
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut trace = Vec::with_capacity(config.epochs);
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(config.batch_size) {
                let params = std::mem::take(&mut self.params);
                self.loss_and_grad(
                    &params,
                    dataset,
                    batch,
                    config.loss_mode,
                    config.clamp_eps,
                    &mut grad,
                );
                self.params = params;
                step += 1;
                let bc1 = 1.0 - config.beta1.powi(step);
                let bc2 = 1.0 - config.beta2.powi(step);
                for i in 0..n {
                    m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
                    v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
                    let mh = m[i] / bc1;
                    let vh = v[i] / bc2;
                    self.params[i] -= config.learning_rate * mh / (vh.sqrt() + config.epsilon);
                }
            }
            trace.push(self.loss(dataset, config.loss_mode, config.clamp_eps)?);
        }
        Ok(trace)
    }

    /// Fraction of entries classified correctly at threshold 0.5.
    pub fn accuracy(&self, dataset: &LabeledDataset) -> Result<f64> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut correct = 0usize;
        for e in &dataset.entries {
            let s = self.score(&e.repr)?;
            if (s >= 0.5) == (e.label == Label::Real) {
                correct += 1;
            }
        }
        Ok(correct as f64 / dataset.len() as f64)
    }

    /// Largest relative difference between the analytic gradient and central
    /// finite differences (h = 1e-5) over every parameter.
    pub fn gradient_check(&self, dataset: &LabeledDataset, mode: LossMode) -> Result<f64> {
        const H: f64 = 1e-5;
        const CLAMP: f64 = 1e-7;
        self.check_input()?;
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let analytic = self.gradient(dataset, mode, CLAMP);
        let idx: Vec<usize> = (0..dataset.len()).collect();
        let mut params = self.params.clone();
        let mut worst: f64 = 0.0;
        for (i, ga) in analytic.iter().enumerate() {
            let orig = params[i];
            params[i] = orig + H;
            let lp = self.loss_value(&params, dataset, &idx, mode, CLAMP);
            params[i] = orig - H;
            let lm = self.loss_value(&params, dataset, &idx, mode, CLAMP);
            params[i] = orig;
            let gn = (lp - lm) / (2.0 * H);
            let rel = (ga - gn).abs() / 1f64.max(ga.abs() + gn.abs());
            worst = worst.max(rel);
        }
        Ok(worst)
    }

    fn loss_value(
        &self,
        params: &[f64],
        dataset: &LabeledDataset,
        idx: &[usize],
        mode: LossMode,
        clamp: f64,
    ) -> f64 {
        let n = idx.len() as f64;
        let n_real = idx
            .iter()
            .filter(|i| dataset.entries[**i].label == Label::Real)
            .count() as f64;
        let n_gen = n - n_real;
        let mut loss = 0.0;
        for &i in idx {
            let e = &dataset.entries[i];
            let d = logistic(self.forward(params, &e.repr, false).logit).clamp(clamp, 1.0 - clamp);
            match mode {
                LossMode::Bce => {
                    let y = e.label.target();
                    loss -= (y * d.ln() + (1.0 - y) * (1.0 - d).ln()) / n;
                }
                LossMode::LogRatio => match e.label {
                    Label::Generated => loss += d.ln() / n_gen,
                    Label::Real => loss -= d.ln() / n_real,
                },
            }
        }
        loss
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(64 + self.params.len() * 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let put = |buf: &mut Vec<u8>, v: usize| buf.extend_from_slice(&(v as u32).to_le_bytes());
        put(&mut buf, self.arch.input_len);
        put(&mut buf, self.arch.input_channels);
        put(&mut buf, self.arch.convs.len());
        for c in &self.arch.convs {
            put(&mut buf, c.in_channels);
            put(&mut buf, c.out_channels);
            put(&mut buf, c.kernel);
            put(&mut buf, c.stride);
        }
        put(&mut buf, self.arch.flatten_dim());
        put(&mut buf, 1);
        buf.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            buf.extend_from_slice(&p.to_le_bytes());
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Checksum);
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(Error::Checksum);
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::MalformedInput("not a discriminator checkpoint".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::MalformedInput(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let input_len = r.u32()? as usize;
        let input_channels = r.u32()? as usize;
        let n_conv = r.u32()? as usize;
        let mut convs = Vec::with_capacity(n_conv);
        for _ in 0..n_conv {
            convs.push(ConvSpec {
                in_channels: r.u32()? as usize,
                out_channels: r.u32()? as usize,
                kernel: r.u32()? as usize,
                stride: r.u32()? as usize,
            });
        }
        let arch = Architecture {
            input_len,
            input_channels,
            convs,
        };
        arch.validate()?;
        let dense_in = r.u32()? as usize;
        let dense_out = r.u32()? as usize;
        if dense_in != arch.flatten_dim() || dense_out != 1 {
            return Err(Error::ShapeMismatch(format!(
                "dense layer {dense_in}x{dense_out} does not match conv stack output {}",
                arch.flatten_dim()
            )));
        }
        let count = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
        if count != arch.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "{count} parameters stored, architecture needs {}",
                arch.param_count()
            )));
        }
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            params.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
        }
        if r.pos != body.len() {
            return Err(Error::MalformedInput("trailing bytes in checkpoint".into()));
        }
        Ok(Self { arch, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads a checkpoint and insists on a specific architecture.
    pub fn load_expecting(path: &Path, arch: &Architecture) -> Result<Self> {
        let d = Self::load(path)?;
        if &d.arch != arch {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint architecture {:?} differs from expected {:?}",
                d.arch, arch
            )));
        }
        Ok(d)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::MalformedInput("checkpoint ends early".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Loss of precomputed scores.
pub fn loss_from_scores(
    scores: &[f64],
    labels: &[Label],
    mode: LossMode,
    clamp_eps: f64,
) -> Result<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_real = labels.iter().filter(|l| **l == Label::Real).count();
    let n_gen = labels.len() - n_real;
    if n_real == 0 || n_gen == 0 {
        return Err(Error::SingleLabel);
    }
    let clamp = |d: f64| d.clamp(clamp_eps, 1.0 - clamp_eps);
    Ok(match mode {
        LossMode::Bce => {
            scores
                .iter()
                .zip(labels)
                .map(|(d, l)| {
                    let (d, y) = (clamp(*d), l.target());
                    -(y * d.ln() + (1.0 - y) * (1.0 - d).ln())
                })
                .sum::<f64>()
                / scores.len() as f64
        }
        LossMode::LogRatio => {
            let mean = |want: Label, count: usize| {
                scores
                    .iter()
                    .zip(labels)
                    .filter(|(_, l)| **l == want)
                    .map(|(d, _)| clamp(*d).ln())
                    .sum::<f64>()
                    / count as f64
            };
            mean(Label::Generated, n_gen) - mean(Label::Real, n_real)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::LabeledEntry;
    use rand::Rng;

    fn random_repr(rng: &mut ChaCha8Rng) -> MotionRepr {
        let mut m = MotionRepr::zeros();
        for row in m.0.iter_mut() {
            for half in row.chunks_exact_mut(3) {
                let v = nalgebra::Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
                .normalize();
                half.copy_from_slice(v.as_slice());
            }
        }
        m
    }

    fn small_dataset(seed: u64, n: usize) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ds = LabeledDataset::new();
        for i in 0..n {
            let label = if i % 2 == 0 { Label::Real } else { Label::Generated };
            ds.push(random_repr(&mut rng), label);
        }
        ds
    }

    /// Plain re-implementation of the forward pass on nested arrays.
    fn reference_forward(d: &Discriminator, m: &MotionRepr) -> f64 {
        let arch = d.architecture();
        let p = d.params();
        // x[c][t]
        let mut x: Vec<Vec<f64>> = (0..6).map(|c| (0..30).map(|t| m.0[t][c]).collect()).collect();
        let mut off = 0;
        for spec in &arch.convs {
            let out_len = (x[0].len() - spec.kernel) / spec.stride + 1;
            let wlen = spec.out_channels * spec.in_channels * spec.kernel;
            let mut y = vec![vec![0.0; out_len]; spec.out_channels];
            for (o, yo) in y.iter_mut().enumerate() {
                for (t, yot) in yo.iter_mut().enumerate() {
                    let mut s = p[off + wlen + o];
                    for (c, xc) in x.iter().enumerate() {
                        for k in 0..spec.kernel {
                            let w = p[off + o * spec.in_channels * spec.kernel + c * spec.kernel + k];
                            s += w * xc[t * spec.stride + k];
                        }
                    }
                    *yot = if s > 0.0 { s } else { 0.0 };
                }
            }
            off += wlen + spec.out_channels;
            x = y;
        }
        let flat: Vec<f64> = x.into_iter().flatten().collect();
        let mut z = p[off + flat.len()];
        for (i, a) in flat.iter().enumerate() {
            z += p[off + i] * a;
        }
        1.0 / (1.0 + (-z).exp())
    }

    #[test]
    fn default_shapes() {
        let arch = Architecture::default();
        assert_eq!(arch.layer_lengths(), vec![13, 5, 3]);
        assert_eq!(arch.flatten_dim(), 192);
        assert_eq!(arch.param_count(), 496 + 2592 + 6208 + 193);
    }

    #[test]
    fn zero_params_score_half() {
        let d = Discriminator::zeros(Architecture::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(d.score(&random_repr(&mut rng)).unwrap(), 0.5);
    }

    #[test]
    fn score_in_open_unit_interval_and_batch_consistent() {
        let d = Discriminator::default_random(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ms: Vec<MotionRepr> = (0..20).map(|_| random_repr(&mut rng)).collect();
        let batch = d.score_batch(&ms).unwrap();
        for (m, b) in ms.iter().zip(&batch) {
            let s = d.score(m).unwrap();
            assert!(s > 0.0 && s < 1.0);
            assert_eq!(s.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn forward_matches_reference() {
        let d = Discriminator::default_random(42);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let m = random_repr(&mut rng);
            assert!((d.score(&m).unwrap() - reference_forward(&d, &m)).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_examples() {
        let labels = [Label::Real, Label::Generated];
        let bce = loss_from_scores(&[0.5, 0.5], &labels, LossMode::Bce, 1e-7).unwrap();
        assert!((bce - std::f64::consts::LN_2).abs() < 1e-12);
        let perfect = loss_from_scores(&[1.0, 0.0], &labels, LossMode::Bce, 1e-7).unwrap();
        assert!((perfect + (1.0f64 - 1e-7).ln()).abs() < 1e-15);
        let lr = loss_from_scores(&[0.8, 0.3], &labels, LossMode::LogRatio, 1e-7).unwrap();
        assert!((lr - (0.3f64.ln() - 0.8f64.ln())).abs() < 1e-12);
        assert!((lr + 0.9808).abs() < 1e-4);
        assert!(matches!(
            loss_from_scores(&[0.5], &[Label::Real], LossMode::Bce, 1e-7),
            Err(Error::SingleLabel)
        ));
    }

    #[test]
    fn gradient_check_small() {
        let d = Discriminator::default_random(0);
        let ds = small_dataset(0, 4);
        assert!(d.gradient_check(&ds, LossMode::Bce).unwrap() < 1e-5);
        assert!(d.gradient_check(&ds, LossMode::LogRatio).unwrap() < 1e-5);
    }

    #[test]
    fn symmetric_dataset_cancels_dense_bias() {
        let d = Discriminator::zeros(Architecture::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_repr(&mut rng);
        let mut ds = LabeledDataset::new();
        ds.push(m.clone(), Label::Real);
        ds.push(m, Label::Generated);
        let g = d.gradient(&ds, LossMode::Bce, 1e-7);
        assert!(g.last().unwrap().abs() < 1e-12);
    }

    #[test]
    fn bce_and_log_ratio_agree_on_real_direction() {
        // Gradient w.r.t. the dense bias from a single real entry: both
        // losses push its score up, so both gradients are negative.
        let d = Discriminator::default_random(9);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ds = LabeledDataset::new();
        ds.entries.push(LabeledEntry {
            repr: random_repr(&mut rng),
            label: Label::Real,
            iteration: None,
            query: None,
        });
        let gb = d.gradient(&ds, LossMode::Bce, 1e-7);
        let ge = d.gradient(&ds, LossMode::LogRatio, 1e-7);
        assert!(gb.last().unwrap() < &0.0);
        assert!(ge.last().unwrap() < &0.0);
        for (a, b) in gb.iter().zip(&ge) {
            assert!(a * b >= 0.0);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let mut d = Discriminator::default_random(1);
        let before = d.params().to_vec();
        let ds = small_dataset(3, 10);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let trace = d.train(&ds, &cfg).unwrap();
        assert_eq!(d.params(), &before[..]);
        assert!(trace.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn training_is_deterministic() {
        let ds = small_dataset(6, 20);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            rng_seed: 5,
            ..TrainConfig::default()
        };
        let mut a = Discriminator::default_random(2);
        let mut b = a.clone();
        assert_eq!(a.train(&ds, &cfg).unwrap(), b.train(&ds, &cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn duplicated_dataset_full_batch_equivalence() {
        let ds = small_dataset(7, 6);
        let mut dup = ds.clone();
        dup.entries.extend(ds.entries.clone());
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 6,
            rng_seed: 1,
            ..TrainConfig::default()
        };
        let cfg_dup = TrainConfig {
            batch_size: 12,
            ..cfg.clone()
        };
        let mut a = Discriminator::default_random(4);
        let mut b = a.clone();
        a.train(&ds, &cfg).unwrap();
        b.train(&dup, &cfg_dup).unwrap();
        for (x, y) in a.params().iter().zip(b.params()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn train_errors() {
        let mut d = Discriminator::default_random(1);
        assert!(matches!(
            d.train(&LabeledDataset::new(), &TrainConfig::default()),
            Err(Error::EmptyDataset)
        ));
        let mut single = LabeledDataset::new();
        single.push(MotionRepr::zeros(), Label::Real);
        assert!(matches!(
            d.train(&single, &TrainConfig::default()),
            Err(Error::SingleLabel)
        ));
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.idsc");
        let d = Discriminator::default_random(11);
        d.save(&path).unwrap();
        let back = Discriminator::load(&path).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let m = random_repr(&mut rng);
            assert_eq!(d.score(&m).unwrap().to_bits(), back.score(&m).unwrap().to_bits());
        }
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
        assert!(matches!(Discriminator::load(&path), Err(Error::Checksum)));

        let other = Architecture {
            convs: vec![
                ConvSpec {
                    in_channels: 6,
                    out_channels: 8,
                    kernel: 5,
                    stride: 2,
                },
                ConvSpec {
                    in_channels: 8,
                    out_channels: 8,
                    kernel: 3,
                    stride: 1,
                },
            ],
            ..Architecture::default()
        };
        let small = Discriminator::new_random(other, 1).unwrap();
        small.save(&path).unwrap();
        assert!(matches!(
            Discriminator::load_expecting(&path, &Architecture::default()),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
