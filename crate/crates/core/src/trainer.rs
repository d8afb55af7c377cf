//! Quantization-aware training of the 98-10-1 network.
//!
//! The quantized forward pass is [`forward_codes`] on the quantized shadow
//! weights, so a trained model and the inference engine agree bit for bit.
//! Backward treats every quantizer as identity (straight-through) inside its
//! clamp range and as zero outside.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::auc_score;
use crate::events::{Event, SensorGeometry};
use crate::exec::Exec;
use crate::mlpf::{
    float_logit, forward_codes, sigmoid, FloatWeights, MlpfWeights, ModelFormats, HIDDEN,
    PARAM_COUNT,
};
use crate::tpi::{AgeWindow, InputVector, TpiMemory, INPUT_LEN};

const B1: usize = INPUT_LEN * HIDDEN;
const W2: usize = B1 + HIDDEN;
const B2: usize = W2 + HIDDEN;
/// Samples per gradient chunk; fixed so the summation order never depends on threads.
const CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Fraction bits of weights, biases, inputs and hidden units.
    pub bits: u8,
    /// False trains the plain real-valued network (no quantizers).
    pub quantized: bool,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Learning rate multiplier applied after every epoch.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    /// Share of each batch drawn from signal samples.
    pub signal_fraction: f64,
    pub l1: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            bits: 4,
            quantized: true,
            learning_rate: 0.05,
            momentum: 0.9,
            lr_decay: 0.9,
            batch_size: 256,
            epochs: 30,
            batches_per_epoch: 100,
            signal_fraction: 0.5,
            l1: 1e-5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn formats(&self) -> ModelFormats {
        ModelFormats::with_bits(self.bits)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=8).contains(&self.bits) {
            return Err(Error::Config(format!(
                "bit width must be 2..=8, got {}",
                self.bits
            )));
        }
        if self.learning_rate.is_nan()
            || self.learning_rate <= 0.0
            || !(0.0..1.0).contains(&self.momentum)
        {
            return Err(Error::Config(
                "learning rate must be positive and momentum in [0, 1)".into(),
            ));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(
                "learning rate decay must be in (0, 1]".into(),
            ));
        }
        if self.batch_size < 2 || self.epochs == 0 || self.batches_per_epoch == 0 {
            return Err(Error::Config(
                "batch size >= 2, epochs and batches per epoch >= 1".into(),
            ));
        }
        if !(self.signal_fraction > 0.0 && self.signal_fraction < 1.0)
            || self.l1.is_nan()
            || self.l1 < 0.0
        {
            return Err(Error::Config(
                "signal fraction must be in (0, 1) and l1 >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingSample {
    pub input: InputVector,
    pub label: bool,
}

/// Replay a labeled stream through the TPI exactly as the denoiser does and
/// capture one sample per event.
pub fn build_dataset(
    events: &[Event],
    geometry: SensorGeometry,
    tau: AgeWindow,
) -> Result<Vec<TrainingSample>> {
    let mut tpi = TpiMemory::new(geometry);
    let mut prev = 0;
    let mut out = Vec::with_capacity(events.len());
    for (i, e) in events.iter().enumerate() {
        let label = e.label.ok_or(Error::MissingLabel(i + 2))?;
        if e.t_us < prev {
            return Err(Error::Ordering {
                line: i as u64 + 2,
                t_us: e.t_us,
                prev_us: prev,
            });
        }
        prev = e.t_us;
        geometry.check(u32::from(e.x), u32::from(e.y))?;
        out.push(TrainingSample {
            input: tpi.extract_features(e, tau),
            label: label.is_signal(),
        });
        tpi.update(e)?;
    }
    Ok(out)
}

pub fn flatten(w: &FloatWeights) -> Vec<f64> {
    let mut v: Vec<f64> = w.w1.iter().flatten().copied().collect();
    v.extend_from_slice(&w.b1);
    v.extend_from_slice(&w.w2);
    v.push(w.b2);
    v
}

pub fn unflatten(v: &[f64]) -> FloatWeights {
    assert_eq!(v.len(), PARAM_COUNT);
    let arr = |s: &[f64]| -> [f64; HIDDEN] { s.try_into().expect("slice of HIDDEN") };
    FloatWeights {
        w1: v[..B1].chunks(HIDDEN).map(arr).collect(),
        b1: arr(&v[B1..W2]),
        w2: arr(&v[W2..B2]),
        b2: v[B2],
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Binary cross-entropy on the sigmoid of `z`.
fn bce(z: f64, y: bool) -> f64 {
    softplus(z) - if y { z } else { 0.0 }
}

/// Everything one forward pass needs, prepared once per parameter update.
struct Model {
    params: Vec<f64>,
    float: FloatWeights,
    /// Quantized view of `params`; `None` in float mode.
    q: Option<MlpfWeights>,
}

impl Model {
    fn new(params: &[f64], cfg: &TrainConfig) -> Self {
        let q = cfg
            .quantized
            .then(|| unflatten(params).quantize(cfg.formats()));
        let params = match &q {
            // the forward pass sees the quantized values
            Some(q) => flatten(&q.dequantize()),
            None => params.to_vec(),
        };
        Model {
            float: unflatten(&params),
            params,
            q,
        }
    }

    fn logit(&self, x: &InputVector) -> f64 {
        match &self.q {
            Some(q) => forward_codes(q, &x.quantized(q.formats.weight))
                .logit
                .value(),
            None => float_logit(&self.float, &x.real()),
        }
    }

    /// Adds this sample's loss gradient into `g` and returns its loss.
    fn accumulate(&self, s: &TrainingSample, g: &mut [f64]) -> f64 {
        let p = &self.params;
        let y = if s.label { 1.0 } else { 0.0 };
        let mut x = [0.0; INPUT_LEN];
        let mut a = [0.0; HIDDEN];
        let mut h = [0.0; HIDDEN];
        let mut pass = [false; HIDDEN];
        let z = match &self.q {
            Some(q) => {
                let f = q.formats;
                let codes = s.input.quantized(f.weight);
                for (xi, &c) in x.iter_mut().zip(&codes) {
                    *xi = f.weight.value(c);
                }
                let fw = forward_codes(q, &codes);
                for j in 0..HIDDEN {
                    a[j] = f.acc.value(fw.pre_activation[j]);
                    h[j] = f.hidden.value(fw.hidden[j]);
                    pass[j] = a[j] > 0.0 && a[j] < f.hidden.max_value();
                }
                fw.logit.value()
            }
            None => {
                x = s.input.real();
                let mut z = p[B2];
                for j in 0..HIDDEN {
                    let mut acc = p[B1 + j];
                    for (i, xi) in x.iter().enumerate() {
                        acc += p[i * HIDDEN + j] * xi;
                    }
                    a[j] = acc;
                    h[j] = acc.max(0.0);
                    pass[j] = acc > 0.0;
                    z += p[W2 + j] * h[j];
                }
                z
            }
        };
        let dz = sigmoid(z) - y;
        g[B2] += dz;
        for j in 0..HIDDEN {
            g[W2 + j] += dz * h[j];
            if !pass[j] {
                continue;
            }
            let da = dz * p[W2 + j];
            g[B1 + j] += da;
            for (i, &xi) in x.iter().enumerate() {
                if xi != 0.0 {
                    g[i * HIDDEN + j] += da * xi;
                }
            }
        }
        bce(z, s.label)
    }
}

/// Mean loss and gradient over `batch` at parameters `w`, including the L1 term.
/// In quantized mode the gradient is taken with respect to the shadow weights.
pub fn loss_and_gradient(
    w: &FloatWeights,
    batch: &[TrainingSample],
    cfg: &TrainConfig,
    exec: Exec,
) -> (f64, FloatWeights) {
    let shadow = flatten(w);
    let (loss, grad) = batch_gradient(&shadow, batch, cfg, exec);
    (loss, unflatten(&grad))
}

fn batch_gradient(
    shadow: &[f64],
    batch: &[TrainingSample],
    cfg: &TrainConfig,
    exec: Exec,
) -> (f64, Vec<f64>) {
    let model = Model::new(shadow, cfg);
    let parts = exec.map_chunks(batch, CHUNK, |chunk| {
        let mut g = vec![0.0; PARAM_COUNT];
        let loss: f64 = chunk.iter().map(|s| model.accumulate(s, &mut g)).sum();
        (loss, g)
    });
    let mut loss = 0.0;
    let mut grad = vec![0.0; PARAM_COUNT];
    for (l, g) in parts {
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let n = batch.len().max(1) as f64;
    loss /= n;
    grad.iter_mut().for_each(|v| *v /= n);
    if cfg.quantized {
        // straight-through only inside the weight quantizer's range
        let fmt = cfg.formats().weight;
        for (gk, wk) in grad.iter_mut().zip(shadow) {
            if *wk < fmt.min_value() || *wk > fmt.max_value() {
                *gk = 0.0;
            }
        }
    }
    for (gk, wk) in grad.iter_mut().zip(shadow) {
        loss += cfg.l1 * wk.abs();
        if *wk != 0.0 {
            *gk += cfg.l1 * wk.signum();
        }
    }
    (loss, grad)
}

/// Logits as the trainer sees them: quantized forward in QAT mode, real-valued otherwise.
pub fn trainer_logits(
    w: &FloatWeights,
    samples: &[TrainingSample],
    cfg: &TrainConfig,
    exec: Exec,
) -> Vec<f64> {
    let model = Model::new(&flatten(w), cfg);
    exec.map(samples, |s| model.logit(&s.input))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Class-balanced cross-entropy over the whole training set plus the L1 term.
    pub loss: f64,
    pub train_auc: f64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub weights: MlpfWeights,
    pub shadow: FloatWeights,
    pub history: Vec<EpochStats>,
}

fn epoch_stats(
    epoch: usize,
    shadow: &[f64],
    samples: &[TrainingSample],
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<EpochStats> {
    let logits = trainer_logits(&unflatten(shadow), samples, cfg, exec);
    let labels: Vec<bool> = samples.iter().map(|s| s.label).collect();
    let (mut sig, mut noise, mut n_sig) = (0.0, 0.0, 0usize);
    for (&z, &y) in logits.iter().zip(&labels) {
        if y {
            sig += bce(z, true);
            n_sig += 1;
        } else {
            noise += bce(z, false);
        }
    }
    let n_noise = samples.len() - n_sig;
    let l1: f64 = shadow.iter().map(|w| w.abs()).sum::<f64>() * cfg.l1;
    Ok(EpochStats {
        epoch,
        loss: 0.5 * sig / n_sig as f64 + 0.5 * noise / n_noise as f64 + l1,
        train_auc: auc_score(&logits, &labels)?,
    })
}

fn init_params(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut p = vec![0.0; PARAM_COUNT];
    let a1 = (6.0 / (INPUT_LEN + HIDDEN) as f64).sqrt();
    let a2 = (6.0 / (HIDDEN + 1) as f64).sqrt();
    for v in &mut p[..B1] {
        *v = rng.random_range(-a1..a1);
    }
    for v in &mut p[W2..B2] {
        *v = rng.random_range(-a2..a2);
    }
    // small positive hidden bias keeps units alive under the ReLU at start
    for v in &mut p[B1..W2] {
        *v = 0.1;
    }
    p
}

/// Minibatch SGD with momentum on class-balanced batches.
pub fn train(samples: &[TrainingSample], cfg: &TrainConfig, exec: Exec) -> Result<Trained> {
    cfg.validate()?;
    let signal: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label).collect();
    let noise: Vec<usize> = (0..samples.len()).filter(|&i| !samples[i].label).collect();
    if signal.is_empty() || noise.is_empty() {
        return Err(Error::Training(format!(
            "need both classes, got {} signal and {} noise samples",
            signal.len(),
            noise.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = init_params(&mut rng);
    let mut velocity = vec![0.0; PARAM_COUNT];
    let n_sig = ((cfg.batch_size as f64 * cfg.signal_fraction).round() as usize)
        .clamp(1, cfg.batch_size - 1);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut history = Vec::with_capacity(cfg.epochs);

    let mut lr = cfg.learning_rate;
    for epoch in 1..=cfg.epochs {
        for _ in 0..cfg.batches_per_epoch {
            batch.clear();
            for k in 0..cfg.batch_size {
                let pool = if k < n_sig { &signal } else { &noise };
                batch.push(samples[pool[rng.random_range(0..pool.len())]].clone());
            }
            let (_, grad) = batch_gradient(&params, &batch, cfg, exec);
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v - lr * g;
                *p += *v;
            }
        }
        history.push(epoch_stats(epoch, &params, samples, cfg, exec)?);
        lr *= cfg.lr_decay;
    }
    let shadow = unflatten(&params);
    Ok(Trained {
        weights: shadow.quantize(cfg.formats()),
        shadow,
        history,
    })
}

pub fn write_history<W: Write>(sink: W, history: &[EpochStats]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["epoch", "loss", "train_auc"])?;
    for h in history {
        w.write_record([
            h.epoch.to_string(),
            format!("{:.6}", h.loss),
            format!("{:.6}", h.train_auc),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
