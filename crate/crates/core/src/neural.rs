//! Dense feed-forward networks trained with plain SGD.
//!
//! Parameters live in one flat vector so that federated aggregation and
//! gradient-divergence measurements are simple vector arithmetic. Layer `l`
//! occupies a row-major `out x in` weight block followed by `out` biases.
//! Hidden layers use ReLU. The output layer is the identity for position
//! regression and a softmax for floor classification.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::geometry::Point2;
use crate::rng::Rng;
use crate::scenario::{FingerprintDatabase, FingerprintRecord};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// Identity output, Euclidean-norm loss against the 2-D position.
    Regression,
    /// Softmax output, cross-entropy loss against the floor label.
    Classification,
}

/// Affine input transform `(x - shift) * scale` applied before the first
/// layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub shift: f64,
    pub scale: f64,
}

impl InputScaling {
    pub const IDENTITY: InputScaling = InputScaling { shift: 0.0, scale: 1.0 };

    fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

impl Default for InputScaling {
    fn default() -> Self {
        Self::IDENTITY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    sizes: Vec<usize>,
    head: Head,
    scaling: InputScaling,
    params: Vec<f64>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl MlpModel {
    pub fn zeros(sizes: &[usize], head: Head) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::param("layer_sizes", format!("need >= 2 non-zero layers, got {sizes:?}")));
        }
        Ok(MlpModel {
            sizes: sizes.to_vec(),
            head,
            scaling: InputScaling::IDENTITY,
            params: vec![0.0; param_count(sizes)],
        })
    }

    /// Weights uniform in `+-sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(sizes: &[usize], head: Head, rng: &mut Rng) -> Result<Self> {
        let mut model = Self::zeros(sizes, head)?;
        for l in 0..model.n_layers() {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let (w, _) = model.layer_mut(l);
            w.iter_mut().for_each(|v| *v = rng.random_range(-limit..=limit));
        }
        Ok(model)
    }

    pub fn from_params(sizes: &[usize], head: Head, scaling: InputScaling, params: Vec<f64>) -> Result<Self> {
        let mut model = Self::zeros(sizes, head)?;
        if params.len() != model.params.len() {
            return Err(Error::DimensionMismatch { expected: model.params.len(), actual: params.len() });
        }
        model.params = params;
        model.scaling = scaling;
        Ok(model)
    }

    pub fn with_scaling(mut self, scaling: InputScaling) -> Self {
        self.scaling = scaling;
        self
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn scaling(&self) -> InputScaling {
        self.scaling
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Same architecture, head and input scaling.
    pub fn same_shape(&self, other: &MlpModel) -> bool {
        self.sizes == other.sizes && self.head == other.head && self.scaling == other.scaling
    }

    fn offset(&self, layer: usize) -> usize {
        param_count(&self.sizes[..=layer])
    }

    /// Weight block and bias vector of `layer`.
    pub fn layer(&self, layer: usize) -> (&[f64], &[f64]) {
        let start = self.offset(layer);
        let (i, o) = (self.sizes[layer], self.sizes[layer + 1]);
        let (w, rest) = self.params[start..].split_at(i * o);
        (w, &rest[..o])
    }

    pub fn layer_mut(&mut self, layer: usize) -> (&mut [f64], &mut [f64]) {
        let start = self.offset(layer);
        let (i, o) = (self.sizes[layer], self.sizes[layer + 1]);
        let (w, rest) = self.params[start..].split_at_mut(i * o);
        (w, &mut rest[..o])
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_inputs() {
            return Err(Error::DimensionMismatch { expected: self.n_inputs(), actual: x.len() });
        }
        Ok(())
    }
}

/// Output of a forward pass: positions for regression, class
/// probabilities for classification.
pub fn forward(model: &MlpModel, x: &[f64]) -> Result<Vec<f64>> {
    model.check_input(x)?;
    let mut ws = Workspace::new(model);
    ws.forward(model, x);
    let out = ws.output().to_vec();
    Ok(match model.head {
        Head::Regression => out,
        Head::Classification => softmax(&out),
    })
}

pub fn predict_position(model: &MlpModel, x: &[f64]) -> Result<Point2> {
    if model.head != Head::Regression || model.n_outputs() != 2 {
        return Err(Error::param("model", "position prediction needs a 2-output regression model"));
    }
    let out = forward(model, x)?;
    Ok(Point2::new(out[0], out[1]))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Scratch buffers for one sample's forward and backward pass.
struct Workspace {
    /// `acts[0]` is the scaled input, `acts[l + 1]` the output of layer `l`
    /// (pre-softmax for the last layer).
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Workspace {
    fn new(model: &MlpModel) -> Self {
        let widest = *model.sizes.iter().max().unwrap();
        Workspace {
            acts: model.sizes.iter().map(|&n| vec![0.0; n]).collect(),
            delta: Vec::with_capacity(widest),
            delta_prev: Vec::with_capacity(widest),
        }
    }

    fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }

    fn forward(&mut self, model: &MlpModel, x: &[f64]) {
        let s = model.scaling;
        if s.is_identity() {
            self.acts[0].copy_from_slice(x);
        } else {
            self.acts[0].iter_mut().zip(x).for_each(|(a, v)| *a = (v - s.shift) * s.scale);
        }
        let last = model.n_layers() - 1;
        for l in 0..=last {
            let (w, b) = model.layer(l);
            let (inputs, outputs) = self.acts.split_at_mut(l + 1);
            let a = &inputs[l];
            for (j, out) in outputs[0].iter_mut().enumerate() {
                let row = &w[j * a.len()..(j + 1) * a.len()];
                let z = b[j] + row.iter().zip(a).map(|(wi, ai)| wi * ai).sum::<f64>();
                *out = if l < last { z.max(0.0) } else { z };
            }
        }
    }

    /// Loss of the current forward pass against `target`; leaves
    /// d(loss)/d(output) in `self.delta`.
    fn loss_and_output_grad(&mut self, head: Head, target: Target) -> f64 {
        let out = self.acts.last().unwrap();
        self.delta.clear();
        match (head, target) {
            (Head::Regression, Target::Position(y)) => {
                let (ex, ey) = (out[0] - y.x, out[1] - y.y);
                let norm = ex.hypot(ey);
                if norm > 0.0 {
                    self.delta.extend([ex / norm, ey / norm]);
                } else {
                    self.delta.extend([0.0, 0.0]);
                }
                norm
            }
            (Head::Classification, Target::Class(c)) => {
                let p = softmax(out);
                let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let log_sum = out.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
                self.delta.extend(p.iter().enumerate().map(|(k, pk)| pk - if k == c { 1.0 } else { 0.0 }));
                log_sum - out[c]
            }
            _ => unreachable!("target kind checked by caller"),
        }
    }

    /// Accumulates this sample's parameter gradient into `grad`.
    fn backward(&mut self, model: &MlpModel, grad: &mut [f64]) {
        for l in (0..model.n_layers()).rev() {
            let start = model.offset(l);
            let (n_in, n_out) = (model.sizes[l], model.sizes[l + 1]);
            let a = &self.acts[l];
            let (gw, rest) = grad[start..].split_at_mut(n_in * n_out);
            for j in 0..n_out {
                let d = self.delta[j];
                if d != 0.0 {
                    gw[j * n_in..(j + 1) * n_in].iter_mut().zip(a).for_each(|(g, ai)| *g += d * ai);
                }
                rest[j] += d;
            }
            if l == 0 {
                break;
            }
            let (w, _) = model.layer(l);
            self.delta_prev.clear();
            self.delta_prev.resize(n_in, 0.0);
            for j in 0..n_out {
                let d = self.delta[j];
                if d != 0.0 {
                    self.delta_prev.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]).for_each(|(p, wi)| *p += d * wi);
                }
            }
            // ReLU derivative: hidden activations are zero exactly where inactive
            self.delta_prev.iter_mut().zip(a).for_each(|(p, ai)| {
                if *ai <= 0.0 {
                    *p = 0.0;
                }
            });
            std::mem::swap(&mut self.delta, &mut self.delta_prev);
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Target {
    Position(Point2),
    Class(usize),
}

fn target_of(model: &MlpModel, index: usize, record: &FingerprintRecord) -> Result<Target> {
    match model.head {
        Head::Regression => Ok(Target::Position(record.position)),
        Head::Classification => match record.floor {
            Some(f) if f >= 0 && (f as usize) < model.n_outputs() => Ok(Target::Class(f as usize)),
            Some(f) => Err(Error::param("floor", format!("label {f} outside 0..{}", model.n_outputs()))),
            None => Err(Error::MissingFloorLabel { index }),
        },
    }
}

/// Parameter gradient, laid out like [`MlpModel::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient(pub Vec<f64>);

impl Gradient {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn loss_and_gradient<'a, I>(model: &MlpModel, batch: I, want_grad: bool) -> Result<(f64, Option<Gradient>)>
where
    I: IntoIterator<Item = &'a FingerprintRecord>,
{
    let mut ws = Workspace::new(model);
    let mut grad = if want_grad { vec![0.0; model.params.len()] } else { Vec::new() };
    let mut total = 0.0;
    let mut n = 0usize;
    for record in batch {
        model.check_input(record.rss.values())?;
        let target = target_of(model, n, record)?;
        ws.forward(model, record.rss.values());
        total += ws.loss_and_output_grad(model.head, target);
        if want_grad {
            ws.backward(model, &mut grad);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let inv = 1.0 / n as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((total * inv, want_grad.then_some(Gradient(grad))))
}

/// Mean per-record loss: Euclidean error norm for regression, cross-entropy
/// for classification.
pub fn loss(model: &MlpModel, batch: &[FingerprintRecord]) -> Result<f64> {
    Ok(loss_and_gradient(model, batch, false)?.0)
}

/// Exact gradient of [`loss`]. Records with zero regression error contribute
/// nothing.
pub fn gradient(model: &MlpModel, batch: &[FingerprintRecord]) -> Result<Gradient> {
    Ok(loss_and_gradient(model, batch, true)?.1.unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// SGD steps per call to [`train_local`].
    pub local_steps: usize,
    pub batch_size: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::param("learning_rate", "must be finite and non-negative"));
        }
        if self.local_steps == 0 {
            return Err(Error::param("local_steps", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be at least 1"));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 1e-5, local_steps: 40, batch_size: 32 }
    }
}

/// Per-step mini-batch losses, evaluated before each update.
pub type LossTrace = Vec<f64>;

/// `local_steps` SGD steps over mini-batches drawn without replacement. The
/// record order is reshuffled at the start of every pass; a batch that
/// covers the whole database keeps the stored order.
pub fn train_local(model: &MlpModel, db: &FingerprintDatabase, cfg: &TrainConfig, rng: &mut Rng) -> Result<MlpModel> {
    Ok(train_local_traced(model, db.records(), cfg, rng)?.0)
}

pub fn train_local_traced(
    model: &MlpModel,
    records: &[FingerprintRecord],
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<(MlpModel, LossTrace)> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut current = model.clone();
    let mut order: Vec<usize> = (0..records.len()).collect();
    let full_batch = cfg.batch_size >= records.len();
    let mut cursor = records.len();
    let mut trace = Vec::with_capacity(cfg.local_steps);
    for _ in 0..cfg.local_steps {
        if cursor >= records.len() {
            if !full_batch {
                order.shuffle(rng);
            }
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(records.len());
        let batch = order[cursor..end].iter().map(|&i| &records[i]);
        cursor = end;
        let (l, g) = loss_and_gradient(&current, batch, true)?;
        trace.push(l);
        let lr = cfg.learning_rate;
        current.params.iter_mut().zip(g.unwrap().0).for_each(|(p, g)| *p -= lr * g);
    }
    Ok((current, trace))
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"FLMC";
const CHECKPOINT_VERSION: u32 = 1;
const ACTIVATION_RELU: u8 = 0;

impl MlpModel {
    /// Binary checkpoint, little-endian throughout:
    ///
    /// ```text
    /// "FLMC" | version: u32 | head: u8 (0 regression, 1 classification)
    /// | hidden activation: u8 (0 relu) | n_sizes: u32 | sizes: u32 * n_sizes
    /// | shift: f64 | scale: f64 | n_params: u64 | params: f64 * n_params
    /// ```
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&[matches!(self.head, Head::Classification) as u8, ACTIVATION_RELU])?;
        out.write_all(&(self.sizes.len() as u32).to_le_bytes())?;
        for &s in &self.sizes {
            out.write_all(&(s as u32).to_le_bytes())?;
        }
        out.write_all(&self.scaling.shift.to_le_bytes())?;
        out.write_all(&self.scaling.scale.to_le_bytes())?;
        out.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            out.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self> {
        fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
            let mut buf = [0u8; N];
            r.read_exact(&mut buf).map_err(|e| Error::Checkpoint(format!("truncated: {e}")))?;
            Ok(buf)
        }
        if &take::<4, _>(&mut input)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(&mut input)?);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let [head, act] = take::<2, _>(&mut input)?;
        let head = match head {
            0 => Head::Regression,
            1 => Head::Classification,
            h => return Err(Error::Checkpoint(format!("unknown head tag {h}"))),
        };
        if act != ACTIVATION_RELU {
            return Err(Error::Checkpoint(format!("unknown activation tag {act}")));
        }
        let n_sizes = u32::from_le_bytes(take(&mut input)?) as usize;
        if n_sizes > 64 {
            return Err(Error::Checkpoint(format!("implausible layer count {n_sizes}")));
        }
        let sizes = (0..n_sizes)
            .map(|_| Ok(u32::from_le_bytes(take(&mut input)?) as usize))
            .collect::<Result<Vec<_>>>()?;
        let shift = f64::from_le_bytes(take(&mut input)?);
        let scale = f64::from_le_bytes(take(&mut input)?);
        let n_params = u64::from_le_bytes(take(&mut input)?) as usize;
        if sizes.len() < 2 || n_params != param_count(&sizes) {
            return Err(Error::Checkpoint("parameter count does not match layer sizes".into()));
        }
        let params = (0..n_params)
            .map(|_| Ok(f64::from_le_bytes(take(&mut input)?)))
            .collect::<Result<Vec<_>>>()?;
        MlpModel::from_params(&sizes, head, InputScaling { shift, scale }, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_checkpoint(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
