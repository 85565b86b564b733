//! A small dense multilayer perceptron with sigmoid hidden units, trained by
//! minibatch backpropagation.
//!
//! Both the disaster detector (sigmoid output, cross-entropy) and the spectrum
//! scorer (identity output, squared error) use this model. Inputs are
//! z-scored with statistics fitted on the first training set the model sees.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::RandomStream;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MlpError {
    #[error("expected {expected} features, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("input feature {0} is not finite")]
    NonFiniteInput(usize),
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("target has {got} values but the output layer has {expected}")]
    TargetShape { expected: usize, got: usize },
    #[error("training diverged: loss is not finite at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("invalid layer sizes {0:?}")]
    BadLayers(Vec<usize>),
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("binary classification needs a single sigmoid output")]
    NotBinary,
    #[error("model file line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, MlpError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    Sigmoid,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Loss {
    CrossEntropy,
    SquaredError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: Loss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 0.5, epochs: 200, batch_size: 16, seed: 0, loss: Loss::CrossEntropy }
    }
}

/// Two-way decision codes of the polling detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u16)]
pub enum Decision {
    Happened = 101,
    NotHappened = 102,
}

impl Decision {
    pub fn code(self) -> u16 {
        self as u16
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layer {
    inputs: usize,
    outputs: usize,
    /// Row-major, `outputs x inputs`.
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Layer {
    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (o, b) in self.biases.iter().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            out.push(b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
        }
    }
}

/// Per-feature z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    fn fit<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, dim: usize) -> Self {
        let n = rows.clone().count() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows.clone() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        // Constant features pass through centred but unscaled.
        let std = var.into_iter().map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
        Scaler { mean, std }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layers: Vec<Layer>,
    output: OutputActivation,
    scaler: Option<Scaler>,
}

impl MlpModel {
    fn check_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(MlpError::BadLayers(sizes.to_vec()));
        }
        Ok(())
    }

    /// Weights and biases uniform in `[-0.5, 0.5]`.
    pub fn new(sizes: &[usize], output: OutputActivation, rng: &mut RandomStream) -> Result<Self> {
        Self::check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                inputs: w[0],
                outputs: w[1],
                weights: (0..w[0] * w[1]).map(|_| rng.uniform(-0.5, 0.5)).collect(),
                biases: (0..w[1]).map(|_| rng.uniform(-0.5, 0.5)).collect(),
            })
            .collect();
        Ok(MlpModel { layers, output, scaler: None })
    }

    pub fn zeros(sizes: &[usize], output: OutputActivation) -> Result<Self> {
        Self::check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| Layer { inputs: w[0], outputs: w[1], weights: vec![0.0; w[0] * w[1]], biases: vec![0.0; w[1]] })
            .collect();
        Ok(MlpModel { layers, output, scaler: None })
    }

    /// Build from explicit per-layer `(weights, biases)`, weights row-major.
    pub fn from_parts(sizes: &[usize], output: OutputActivation, parts: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        Self::check_sizes(sizes)?;
        if parts.len() != sizes.len() - 1 {
            return Err(MlpError::BadLayers(sizes.to_vec()));
        }
        let mut layers = Vec::with_capacity(parts.len());
        for (w, (weights, biases)) in sizes.windows(2).zip(parts) {
            if weights.len() != w[0] * w[1] || biases.len() != w[1] {
                return Err(MlpError::BadLayers(sizes.to_vec()));
            }
            layers.push(Layer { inputs: w[0], outputs: w[1], weights, biases });
        }
        Ok(MlpModel { layers, output, scaler: None })
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(|l| l.outputs)).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn scaler(&self) -> Option<&Scaler> {
        self.scaler.as_ref()
    }

    pub fn set_scaler(&mut self, scaler: Option<Scaler>) {
        self.scaler = scaler;
    }

    /// All weights then biases, layer by layer.
    pub fn params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases).copied()).collect()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let total: usize = self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum();
        if params.len() != total {
            return Err(MlpError::Shape { expected: total, got: params.len() });
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.biases.iter_mut()).for_each(|p| *p = it.next().unwrap());
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }

    fn prepare(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.input_dim() {
            return Err(MlpError::Shape { expected: self.input_dim(), got: features.len() });
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(MlpError::NonFiniteInput(i));
        }
        Ok(match &self.scaler {
            Some(s) => s.apply(features),
            None => features.to_vec(),
        })
    }

    /// Activations of every layer for an already-scaled input; the last entry
    /// holds the output-layer pre-activations.
    fn activations(&self, x: Vec<f64>) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.outputs);
            layer.apply(acts.last().unwrap(), &mut z);
            if i < last {
                z.iter_mut().for_each(|v| *v = sigmoid(*v));
            }
            acts.push(z);
        }
        acts
    }

    fn finish(&self, logits: &[f64]) -> Vec<f64> {
        match self.output {
            OutputActivation::Sigmoid => logits.iter().map(|&z| sigmoid(z)).collect(),
            OutputActivation::Identity => logits.to_vec(),
        }
    }

    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        let x = self.prepare(features)?;
        let acts = self.activations(x);
        Ok(self.finish(acts.last().unwrap()))
    }

    fn check_config(&self, loss: Loss) -> Result<()> {
        if loss == Loss::CrossEntropy && self.output != OutputActivation::Sigmoid {
            return Err(MlpError::BadConfig("cross-entropy needs a sigmoid output".into()));
        }
        Ok(())
    }

    fn check_targets(&self, data: &[(Vec<f64>, Vec<f64>)]) -> Result<()> {
        if data.is_empty() {
            return Err(MlpError::EmptyDataset);
        }
        for (x, t) in data {
            if x.len() != self.input_dim() {
                return Err(MlpError::Shape { expected: self.input_dim(), got: x.len() });
            }
            if t.len() != self.output_dim() {
                return Err(MlpError::TargetShape { expected: self.output_dim(), got: t.len() });
            }
        }
        Ok(())
    }

    fn sample_loss(&self, logits: &[f64], target: &[f64], loss: Loss) -> f64 {
        match loss {
            Loss::CrossEntropy => logits.iter().zip(target).map(|(&z, &t)| softplus(z) - t * z).sum(),
            Loss::SquaredError => {
                let y = self.finish(logits);
                0.5 * y.iter().zip(target).map(|(y, t)| (y - t).powi(2)).sum::<f64>()
            }
        }
    }

    /// Mean per-sample loss over `data`.
    pub fn loss(&self, data: &[(Vec<f64>, Vec<f64>)], loss: Loss) -> Result<f64> {
        self.check_config(loss)?;
        self.check_targets(data)?;
        let mut total = 0.0;
        for (x, t) in data {
            let acts = self.activations(self.prepare(x)?);
            total += self.sample_loss(acts.last().unwrap(), t, loss);
        }
        Ok(total / data.len() as f64)
    }

    /// Accumulate the gradient of one sample's loss into `grad` (laid out
    /// like [`MlpModel::params`]).
    fn backprop(&self, x: Vec<f64>, target: &[f64], loss: Loss, grad: &mut [f64]) {
        let acts = self.activations(x);
        let logits = acts.last().unwrap();
        let y = self.finish(logits);
        // dL/dz at the output layer.
        let mut delta: Vec<f64> = match (loss, self.output) {
            (Loss::CrossEntropy, _) => y.iter().zip(target).map(|(y, t)| y - t).collect(),
            (Loss::SquaredError, OutputActivation::Identity) => y.iter().zip(target).map(|(y, t)| y - t).collect(),
            (Loss::SquaredError, OutputActivation::Sigmoid) => {
                y.iter().zip(target).map(|(y, t)| (y - t) * y * (1.0 - y)).collect()
            }
        };
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |acc, l| {
                let start = *acc;
                *acc += l.weights.len() + l.biases.len();
                Some(start)
            })
            .collect();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &acts[li];
            let off = offsets[li];
            for (o, d) in delta.iter().enumerate() {
                let row = off + o * layer.inputs;
                for (i, a) in input.iter().enumerate() {
                    grad[row + i] += d * a;
                }
                grad[off + layer.weights.len() + o] += d;
            }
            if li > 0 {
                let mut prev = vec![0.0; layer.inputs];
                for (o, d) in delta.iter().enumerate() {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                for (p, a) in prev.iter_mut().zip(input) {
                    *p *= a * (1.0 - a);
                }
                delta = prev;
            }
        }
    }

    /// Gradient of [`MlpModel::loss`] with respect to [`MlpModel::params`].
    pub fn gradient(&self, data: &[(Vec<f64>, Vec<f64>)], loss: Loss) -> Result<Vec<f64>> {
        self.check_config(loss)?;
        self.check_targets(data)?;
        let mut grad = vec![0.0; self.params().len()];
        for (x, t) in data {
            self.backprop(self.prepare(x)?, t, loss, &mut grad);
        }
        let n = data.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok(grad)
    }

    /// Minibatch gradient descent. Fits the input scaler on `data` if the
    /// model does not have one yet. Returns the mean training loss after each
    /// epoch; on error the model is left untouched.
    pub fn train(&mut self, data: &[(Vec<f64>, Vec<f64>)], cfg: &TrainConfig) -> Result<Vec<f64>> {
        if !(cfg.learning_rate > 0.0) || cfg.epochs == 0 || cfg.batch_size == 0 {
            return Err(MlpError::BadConfig(format!(
                "learning_rate={} epochs={} batch_size={}",
                cfg.learning_rate, cfg.epochs, cfg.batch_size
            )));
        }
        self.check_config(cfg.loss)?;
        self.check_targets(data)?;
        let mut model = self.clone();
        if model.scaler.is_none() {
            model.scaler = Some(Scaler::fit(data.iter().map(|(x, _)| x.as_slice()), model.input_dim()));
        }
        let prepared: Vec<(Vec<f64>, &[f64])> =
            data.iter().map(|(x, t)| Ok((model.prepare(x)?, t.as_slice()))).collect::<Result<_>>()?;

        let mut rng = RandomStream::new(cfg.seed, "mlp-train");
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        let mut params = model.params();
        let mut grad = vec![0.0; params.len()];
        let mut curve = Vec::with_capacity(cfg.epochs);
        for epoch in 1..=cfg.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                for &i in batch {
                    let (x, t) = &prepared[i];
                    model.backprop(x.clone(), t, cfg.loss, &mut grad);
                }
                let step = cfg.learning_rate / batch.len() as f64;
                params.iter_mut().zip(&grad).for_each(|(p, g)| *p -= step * g);
                model.set_params(&params)?;
            }
            let epoch_loss = prepared
                .iter()
                .map(|(x, t)| {
                    let acts = model.activations(x.clone());
                    model.sample_loss(acts.last().unwrap(), t, cfg.loss)
                })
                .sum::<f64>()
                / prepared.len() as f64;
            if !epoch_loss.is_finite() || !model.all_finite() {
                return Err(MlpError::Divergence { epoch });
            }
            curve.push(epoch_loss);
        }
        *self = model;
        Ok(curve)
    }

    /// Plain-text form: layer sizes, output activation, then one line of
    /// row-major weights and one line of biases per layer, then the scaler.
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        let mut s = String::new();
        let sizes: Vec<String> = self.layer_sizes().iter().map(ToString::to_string).collect();
        writeln!(s, "{}", sizes.join(" ")).unwrap();
        writeln!(
            s,
            "{}",
            match self.output {
                OutputActivation::Sigmoid => "sigmoid",
                OutputActivation::Identity => "identity",
            }
        )
        .unwrap();
        for l in &self.layers {
            writeln!(s, "{}", join(&l.weights)).unwrap();
            writeln!(s, "{}", join(&l.biases)).unwrap();
        }
        match &self.scaler {
            Some(sc) => {
                writeln!(s, "scale {}", join(&sc.mean)).unwrap();
                writeln!(s, "scale {}", join(&sc.std)).unwrap();
            }
            None => writeln!(s, "noscale").unwrap(),
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| MlpError::Parse { line: 0, msg: format!("missing {what}") })
        };
        let parse_f = |line: usize, s: &str| -> Result<Vec<f64>> {
            s.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| MlpError::Parse { line, msg: format!("{t:?}: {e}") }))
                .collect()
        };
        let (ln, sizes_line) = next("layer sizes")?;
        let sizes: Vec<usize> = sizes_line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| MlpError::Parse { line: ln, msg: format!("bad layer size {t:?}") }))
            .collect::<Result<_>>()?;
        Self::check_sizes(&sizes)?;
        let (ln, act) = next("output activation")?;
        let output = match act {
            "sigmoid" => OutputActivation::Sigmoid,
            "identity" => OutputActivation::Identity,
            other => return Err(MlpError::Parse { line: ln, msg: format!("unknown activation {other:?}") }),
        };
        let mut parts = Vec::new();
        for _ in 1..sizes.len() {
            let (lw, w) = next("weights")?;
            let (lb, b) = next("biases")?;
            parts.push((parse_f(lw, w)?, parse_f(lb, b)?));
        }
        let mut model = Self::from_parts(&sizes, output, parts)
            .map_err(|e| MlpError::Parse { line: 0, msg: e.to_string() })?;
        let (ln, sc) = next("scaler")?;
        if let Some(mean) = sc.strip_prefix("scale") {
            let mean = parse_f(ln, mean)?;
            let (ls, std) = next("scaler std")?;
            let std = std
                .strip_prefix("scale")
                .ok_or_else(|| MlpError::Parse { line: ls, msg: "expected scale line".into() })?;
            let std = parse_f(ls, std)?;
            if mean.len() != sizes[0] || std.len() != sizes[0] {
                return Err(MlpError::Parse { line: ls, msg: "scaler width differs from input layer".into() });
            }
            model.scaler = Some(Scaler { mean, std });
        } else if sc != "noscale" {
            return Err(MlpError::Parse { line: ln, msg: format!("unexpected {sc:?}") });
        }
        Ok(model)
    }
}

/// 101 when the single sigmoid output is strictly above 0.5, else 102.
pub fn classify_binary(model: &MlpModel, features: &[f64]) -> Result<Decision> {
    if model.output_dim() != 1 || model.output != OutputActivation::Sigmoid {
        return Err(MlpError::NotBinary);
    }
    let y = model.forward(features)?[0];
    Ok(if y > 0.5 { Decision::Happened } else { Decision::NotHappened })
}
