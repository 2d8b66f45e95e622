//! Bounded-output affordance regressor: a small convolutional network with
//! eight hyperbolic-tangent outputs, trained by Adam on mean-squared error
//! against encoded labels (inactive targets stay at 1.1).
//!
//! Gradients are computed by hand-written reverse-mode accumulation.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affordance::{Affordance, NormalizationRanges, INACTIVE_THRESHOLD};
use crate::raster::Frame;
use crate::rng;

pub const OUTPUTS: usize = 8;
const CHECKPOINT_MAGIC: &[u8; 8] = b"AFFNET\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite prediction at entry {0}")]
    NonFinite(usize),
    #[error("training diverged at epoch {epoch}: loss {loss:.6} exceeds 10x the initial {initial:.6}")]
    Diverged { epoch: usize, loss: f64, initial: f64 },
    #[error("empty split")]
    Empty,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegressorSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Valid-padding convolutions, each followed by a rectifier.
    pub convs: Vec<ConvSpec>,
    /// Hidden fully connected widths, each followed by a rectifier.
    pub hidden: Vec<usize>,
}

impl Default for RegressorSpec {
    fn default() -> Self {
        RegressorSpec {
            channels: 3,
            height: 52,
            width: 70,
            convs: vec![
                ConvSpec { filters: 8, kernel: 5, stride: 2 },
                ConvSpec { filters: 16, kernel: 3, stride: 2 },
            ],
            hidden: vec![64],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Act {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Layer {
    Conv {
        in_c: usize,
        in_h: usize,
        in_w: usize,
        out_c: usize,
        out_h: usize,
        out_w: usize,
        k: usize,
        s: usize,
        offset: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
        act: Act,
        offset: usize,
    },
}

impl Layer {
    fn output_len(&self) -> usize {
        match *self {
            Layer::Conv { out_c, out_h, out_w, .. } => out_c * out_h * out_w,
            Layer::Dense { outputs, .. } => outputs,
        }
    }

    fn param_len(&self) -> usize {
        match *self {
            Layer::Conv { in_c, out_c, k, .. } => out_c * in_c * k * k + out_c,
            Layer::Dense { inputs, outputs, .. } => inputs * outputs + outputs,
        }
    }
}

impl RegressorSpec {
    fn layers(&self) -> Result<Vec<Layer>, LearnError> {
        let mut layers = Vec::new();
        let (mut c, mut h, mut w) = (self.channels, self.height, self.width);
        if c == 0 || h == 0 || w == 0 {
            return Err(LearnError::Spec("input dimensions must be positive".into()));
        }
        let mut offset = 0;
        for conv in &self.convs {
            if conv.kernel == 0 || conv.stride == 0 || conv.filters == 0 || conv.kernel > h || conv.kernel > w {
                return Err(LearnError::Spec(format!("convolution {conv:?} does not fit a {h}x{w} input")));
            }
            let layer = Layer::Conv {
                in_c: c,
                in_h: h,
                in_w: w,
                out_c: conv.filters,
                out_h: (h - conv.kernel) / conv.stride + 1,
                out_w: (w - conv.kernel) / conv.stride + 1,
                k: conv.kernel,
                s: conv.stride,
                offset,
            };
            offset += layer.param_len();
            if let Layer::Conv { out_c, out_h, out_w, .. } = layer {
                (c, h, w) = (out_c, out_h, out_w);
            }
            layers.push(layer);
        }
        let mut n = c * h * w;
        let widths = self.hidden.iter().map(|&h| (h, Act::Relu)).chain([(OUTPUTS, Act::Tanh)]);
        for (width, act) in widths {
            if width == 0 {
                return Err(LearnError::Spec("dense widths must be positive".into()));
            }
            let layer = Layer::Dense {
                inputs: n,
                outputs: width,
                act,
                offset,
            };
            offset += layer.param_len();
            layers.push(layer);
            n = width;
        }
        Ok(layers)
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn parameter_count(&self) -> Result<usize, LearnError> {
        Ok(self.layers()?.iter().map(Layer::param_len).sum())
    }
}

/// How frames become network inputs: per-channel mean removal, then scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputTransform {
    pub means: [f64; 3],
    pub scale: f64,
}

impl Default for InputTransform {
    fn default() -> Self {
        InputTransform {
            means: [0.0; 3],
            scale: 1.0 / 128.0,
        }
    }
}

impl InputTransform {
    /// Interleaved RGB frame to channel-major network input.
    pub fn apply(&self, frame: &Frame, out: &mut [f64]) {
        let plane = frame.width * frame.height;
        for (i, px) in frame.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = (px[c] as f64 - self.means[c]) * self.scale;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: RegressorSpec,
    pub transform: InputTransform,
    pub params: Vec<f64>,
    layers: Vec<Layer>,
}

/// Per-layer activations of one forward pass.
pub struct Workspace {
    acts: Vec<Vec<f64>>,
    grads: Vec<Vec<f64>>,
}

impl Model {
    /// He-uniform weights from `seed`, zero biases.
    pub fn new(spec: RegressorSpec, transform: InputTransform, seed: u64) -> Result<Self, LearnError> {
        let layers = spec.layers()?;
        let total = layers.iter().map(Layer::param_len).sum();
        let mut params = vec![0.0; total];
        let mut r = rng::seeded(seed);
        for layer in &layers {
            let (fan_in, weights, offset) = match *layer {
                Layer::Conv { in_c, out_c, k, offset, .. } => (in_c * k * k, out_c * in_c * k * k, offset),
                Layer::Dense { inputs, outputs, offset, .. } => (inputs, inputs * outputs, offset),
            };
            let bound = (6.0 / fan_in as f64).sqrt();
            for p in &mut params[offset..offset + weights] {
                *p = rng::uniform(&mut r, -bound, bound);
            }
        }
        Ok(Model {
            spec,
            transform,
            params,
            layers,
        })
    }

    pub fn from_params(spec: RegressorSpec, transform: InputTransform, params: Vec<f64>) -> Result<Self, LearnError> {
        let layers = spec.layers()?;
        let total: usize = layers.iter().map(Layer::param_len).sum();
        if params.len() != total {
            return Err(LearnError::Shape(format!("{} parameters for a spec needing {total}", params.len())));
        }
        Ok(Model {
            spec,
            transform,
            params,
            layers,
        })
    }

    pub fn workspace(&self) -> Workspace {
        let mut sizes = vec![self.spec.input_len()];
        sizes.extend(self.layers.iter().map(Layer::output_len));
        Workspace {
            acts: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            grads: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Forward pass over a prepared input; returns the eight outputs.
    pub fn forward(&self, input: &[f64], ws: &mut Workspace) -> [f64; OUTPUTS] {
        ws.acts[0].copy_from_slice(input);
        for (li, layer) in self.layers.iter().enumerate() {
            let (head, tail) = ws.acts.split_at_mut(li + 1);
            let x = &head[li];
            let y = &mut tail[0];
            match *layer {
                Layer::Conv {
                    in_c,
                    in_h,
                    in_w,
                    out_c,
                    out_h,
                    out_w,
                    k,
                    s,
                    offset,
                } => {
                    let wlen = in_c * k * k;
                    let bias = offset + out_c * wlen;
                    for oc in 0..out_c {
                        let w = &self.params[offset + oc * wlen..offset + (oc + 1) * wlen];
                        for oy in 0..out_h {
                            for ox in 0..out_w {
                                let mut acc = self.params[bias + oc];
                                for ic in 0..in_c {
                                    for ky in 0..k {
                                        let row = (ic * in_h + oy * s + ky) * in_w + ox * s;
                                        let wr = &w[(ic * k + ky) * k..(ic * k + ky + 1) * k];
                                        for kx in 0..k {
                                            acc += wr[kx] * x[row + kx];
                                        }
                                    }
                                }
                                y[(oc * out_h + oy) * out_w + ox] = acc.max(0.0);
                            }
                        }
                    }
                }
                Layer::Dense {
                    inputs,
                    outputs,
                    act,
                    offset,
                } => {
                    let bias = offset + inputs * outputs;
                    for o in 0..outputs {
                        let w = &self.params[offset + o * inputs..offset + (o + 1) * inputs];
                        let z = self.params[bias + o] + w.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>();
                        y[o] = match act {
                            Act::Relu => z.max(0.0),
                            Act::Tanh => z.tanh(),
                        };
                    }
                }
            }
        }
        let out = ws.acts.last().expect("at least the output layer");
        std::array::from_fn(|i| out[i])
    }

    /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(outputs)
    /// for the forward pass held in `ws`.
    pub fn backward(&self, d_out: &[f64; OUTPUTS], ws: &mut Workspace, grad: &mut [f64]) {
        let n = self.layers.len();
        ws.grads[n].copy_from_slice(d_out);
        for li in (0..n).rev() {
            let x = &ws.acts[li];
            let y = &ws.acts[li + 1];
            let (head, tail) = ws.grads.split_at_mut(li + 1);
            let gx = &mut head[li];
            let gy = &tail[0];
            gx.iter_mut().for_each(|g| *g = 0.0);
            match self.layers[li] {
                Layer::Conv {
                    in_c,
                    in_h,
                    in_w,
                    out_c,
                    out_h,
                    out_w,
                    k,
                    s,
                    offset,
                } => {
                    let wlen = in_c * k * k;
                    let bias = offset + out_c * wlen;
                    for oc in 0..out_c {
                        for oy in 0..out_h {
                            for ox in 0..out_w {
                                let o = (oc * out_h + oy) * out_w + ox;
                                if y[o] <= 0.0 {
                                    continue;
                                }
                                let g = gy[o];
                                grad[bias + oc] += g;
                                for ic in 0..in_c {
                                    for ky in 0..k {
                                        let row = (ic * in_h + oy * s + ky) * in_w + ox * s;
                                        let wi = offset + oc * wlen + (ic * k + ky) * k;
                                        for kx in 0..k {
                                            grad[wi + kx] += g * x[row + kx];
                                            gx[row + kx] += g * self.params[wi + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Layer::Dense {
                    inputs,
                    outputs,
                    act,
                    offset,
                } => {
                    let bias = offset + inputs * outputs;
                    for o in 0..outputs {
                        let g = match act {
                            Act::Relu if y[o] <= 0.0 => continue,
                            Act::Relu => gy[o],
                            Act::Tanh => gy[o] * (1.0 - y[o] * y[o]),
                        };
                        grad[bias + o] += g;
                        let row = offset + o * inputs;
                        for i in 0..inputs {
                            grad[row + i] += g * x[i];
                            gx[i] += g * self.params[row + i];
                        }
                    }
                }
            }
        }
    }

    pub fn check_frames(&self, frames: &[Frame]) -> Result<(), LearnError> {
        let spec = &self.spec;
        match frames.iter().find(|f| f.width != spec.width || f.height != spec.height || spec.channels != 3) {
            Some(f) => Err(LearnError::Shape(format!(
                "{}x{} frame for a {}x{}x{} input",
                f.width, f.height, spec.width, spec.height, spec.channels
            ))),
            None => Ok(()),
        }
    }

    pub fn predict(&self, frame: &Frame, ws: &mut Workspace, buf: &mut [f64]) -> [f64; OUTPUTS] {
        self.transform.apply(frame, buf);
        self.forward(buf, ws)
    }

    pub fn save(&self, path: &Path, epoch: usize) -> Result<(), LearnError> {
        let header = serde_json::to_vec(&CheckpointHeader {
            spec: self.spec.clone(),
            transform: self.transform,
            epoch,
            parameters: self.params.len(),
        })
        .map_err(|e| LearnError::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(24 + header.len() + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        std::fs::File::create(path)?.write_all(&out)?;
        Ok(())
    }

    /// Loads a checkpoint; returns the model and the epoch it was saved at.
    pub fn load(path: &Path) -> Result<(Model, usize), LearnError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let bad = |m: &str| LearnError::Checkpoint(m.into());
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(LearnError::Checkpoint(format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let header: CheckpointHeader = serde_json::from_slice(bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?)
            .map_err(|e| LearnError::Checkpoint(e.to_string()))?;
        let body = &bytes[16 + hlen..];
        if body.len() != 8 * header.parameters {
            return Err(bad("parameter block length mismatch"));
        }
        let params = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok((Model::from_params(header.spec, header.transform, params)?, header.epoch))
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    spec: RegressorSpec,
    transform: InputTransform,
    epoch: usize,
    parameters: usize,
}

/// Mean over batch x 8 of squared error; inactive targets count as-is.
pub fn loss(pred: &[[f64; OUTPUTS]], target: &[[f64; OUTPUTS]]) -> Result<f64, LearnError> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(LearnError::Shape(format!("{} predictions for {} targets", pred.len(), target.len())));
    }
    let mut sum = 0.0;
    for (i, (p, t)) in pred.iter().zip(target).enumerate() {
        for k in 0..OUTPUTS {
            if !p[k].is_finite() {
                return Err(LearnError::NonFinite(i * OUTPUTS + k));
            }
            sum += (p[k] - t[k]).powi(2);
        }
    }
    Ok(sum / (pred.len() * OUTPUTS) as f64)
}

/// Training inputs: frames with their encoded targets.
pub struct TrainSet<'a> {
    pub frames: &'a [Frame],
    pub targets: Vec<[f64; OUTPUTS]>,
}

impl TrainSet<'_> {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(LearnError::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(LearnError::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mean loss of `model` over a whole set.
pub fn dataset_loss(model: &Model, set: &TrainSet) -> Result<f64, LearnError> {
    if set.is_empty() {
        return Err(LearnError::Empty);
    }
    let mut ws = model.workspace();
    let mut buf = vec![0.0; model.spec.input_len()];
    let mut sum = 0.0;
    for (f, t) in set.frames.iter().zip(&set.targets) {
        let p = model.predict(f, &mut ws, &mut buf);
        sum += loss(&[p], &[*t])?;
    }
    Ok(sum / set.len() as f64)
}

/// Per-epoch record; epoch 0 is the untrained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Option<EvalReport>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            params[i] -= cfg.learning_rate * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + cfg.epsilon);
        }
    }
}

/// Hook called after every epoch with the current model.
pub type EpochHook<'a> = dyn FnMut(&Model, &EpochStats) -> Result<(), LearnError> + 'a;

/// Minibatch Adam over a seeded per-epoch shuffle. Aborts when the training
/// loss exceeds ten times its initial value.
pub fn train(
    model: &mut Model,
    set: &TrainSet,
    val: Option<(&TrainSet, &NormalizationRanges)>,
    cfg: &TrainConfig,
    on_epoch: &mut EpochHook,
) -> Result<Vec<EpochStats>, LearnError> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(LearnError::Empty);
    }
    if set.targets.len() != set.len() {
        return Err(LearnError::Shape("one target per frame required".into()));
    }
    model.check_frames(set.frames)?;
    if let Some((v, _)) = val {
        model.check_frames(v.frames)?;
    }
    let evaluate_val = |m: &Model| -> Result<Option<EvalReport>, LearnError> {
        val.map(|(v, r)| evaluate(&predict_all(m, v.frames), &v.targets, r)).transpose()
    };
    let initial = dataset_loss(model, set)?;
    let mut history = vec![EpochStats {
        epoch: 0,
        train_loss: initial,
        val: evaluate_val(model)?,
    }];
    on_epoch(model, &history[0])?;

    let mut adam = Adam {
        m: vec![0.0; model.params.len()],
        v: vec![0.0; model.params.len()],
        t: 0,
    };
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut shuffle_rng = rng::seeded(cfg.seed);
    let mut ws = model.workspace();
    let mut buf = vec![0.0; model.spec.input_len()];
    let mut grad = vec![0.0; model.params.len()];
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let norm = 2.0 / (batch.len() * OUTPUTS) as f64;
            for &i in batch {
                let p = model.predict(&set.frames[i], &mut ws, &mut buf);
                let t = &set.targets[i];
                let d: [f64; OUTPUTS] = std::array::from_fn(|k| norm * (p[k] - t[k]));
                model.backward(&d, &mut ws, &mut grad);
            }
            adam.step(&mut model.params, &grad, cfg);
        }
        let train_loss = dataset_loss(model, set)?;
        if !train_loss.is_finite() || train_loss > 10.0 * initial {
            return Err(LearnError::Diverged {
                epoch,
                loss: train_loss,
                initial,
            });
        }
        let stats = EpochStats {
            epoch,
            train_loss,
            val: evaluate_val(model)?,
        };
        on_epoch(model, &stats)?;
        history.push(stats);
    }
    Ok(history)
}

pub fn predict_all(model: &Model, frames: &[Frame]) -> Vec<[f64; OUTPUTS]> {
    let mut ws = model.workspace();
    let mut buf = vec![0.0; model.spec.input_len()];
    frames.iter().map(|f| model.predict(f, &mut ws, &mut buf)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariableError {
    /// Records where the true value is active.
    pub active: usize,
    pub mse: f64,
    pub mse_physical: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InactiveDetection {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_negative: usize,
    /// 1 when nothing was predicted inactive.
    pub precision: f64,
    /// 1 when nothing was inactive.
    pub recall: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: usize,
    /// Indexed by [`Affordance::index`].
    pub variables: Vec<VariableError>,
    pub inactive: Vec<InactiveDetection>,
}

impl EvalReport {
    pub fn mse(&self, a: Affordance) -> f64 {
        self.variables[a.index()].mse
    }
}

/// Per-variable MSE over active ground truth (normalized and physical
/// units) and inactive detection at the 0.99 threshold.
pub fn evaluate(pred: &[[f64; OUTPUTS]], target: &[[f64; OUTPUTS]], ranges: &NormalizationRanges) -> Result<EvalReport, LearnError> {
    if pred.len() != target.len() {
        return Err(LearnError::Shape(format!("{} predictions for {} targets", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Err(LearnError::Empty);
    }
    let mut variables = Vec::with_capacity(OUTPUTS);
    let mut inactive = Vec::with_capacity(OUTPUTS);
    for var in Affordance::ALL {
        let k = var.index();
        let (mut n, mut se, mut se_phys) = (0usize, 0.0, 0.0);
        let (mut tp, mut fp, mut fnn, mut tn) = (0, 0, 0, 0);
        for (p, t) in pred.iter().zip(target) {
            let truly_inactive = t[k] > INACTIVE_THRESHOLD;
            let said_inactive = p[k] > INACTIVE_THRESHOLD;
            match (truly_inactive, said_inactive) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fnn += 1,
                (false, false) => tn += 1,
            }
            if !truly_inactive {
                n += 1;
                se += (p[k] - t[k]).powi(2);
                se_phys += (ranges.unscale(var, p[k]) - ranges.unscale(var, t[k])).powi(2);
            }
        }
        let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
        variables.push(VariableError {
            active: n,
            mse: if n == 0 { 0.0 } else { se / n as f64 },
            mse_physical: if n == 0 { 0.0 } else { se_phys / n as f64 },
        });
        inactive.push(InactiveDetection {
            true_positive: tp,
            false_positive: fp,
            false_negative: fnn,
            true_negative: tn,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fnn),
            accuracy: ratio(tp + tn, pred.len()),
        });
    }
    Ok(EvalReport {
        records: pred.len(),
        variables,
        inactive,
    })
}

/// Epoch-by-variable validation MSE table.
pub fn format_mse_table(history: &[EpochStats], physical: bool) -> String {
    let mut out = format!("{:>6}", "epoch");
    for var in Affordance::ALL {
        out.push_str(&format!(" {:>9}", var.name()));
    }
    out.push('\n');
    for stats in history {
        let Some(report) = &stats.val else { continue };
        out.push_str(&format!("{:>6}", stats.epoch));
        for v in &report.variables {
            out.push_str(&format!(" {:>9.4}", if physical { v.mse_physical } else { v.mse }));
        }
        out.push('\n');
    }
    out
}
