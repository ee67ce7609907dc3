//! Differentiable classifiers with exact input gradients.
//!
//! Three families share one interface: linear-softmax, fully connected MLPs
//! and prototype-softmax (logits `−‖x − c_k‖² / 2τ`). Gradients are hand
//! derived backprop; the finite-difference tests at the bottom pin them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::spec::{Activation, Architecture, ModelSpec};
use crate::rng::RngStream;
use crate::tensor::{ImageTensor, Shape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weight
                .chunks_exact(self.inputs)
                .zip(&self.bias)
                .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b),
        );
    }

    /// `dx = Wᵀ · dout`.
    fn backward_input(&self, dout: &[f64], dx: &mut Vec<f64>) {
        dx.clear();
        dx.resize(self.inputs, 0.0);
        for (row, &d) in self.weight.chunks_exact(self.inputs).zip(dout) {
            if d == 0.0 {
                continue;
            }
            for (acc, w) in dx.iter_mut().zip(row) {
                *acc += d * w;
            }
        }
    }

    fn accumulate_param_grad(&self, x: &[f64], dout: &[f64], grad: &mut Dense, scale: f64) {
        for ((row, gb), &d) in grad
            .weight
            .chunks_exact_mut(self.inputs)
            .zip(grad.bias.iter_mut())
            .zip(dout)
        {
            let d = d * scale;
            *gb += d;
            for (g, v) in row.iter_mut().zip(x) {
                *g += d * v;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Weights {
    Linear {
        layer: Dense,
    },
    Mlp {
        layers: Vec<Dense>,
    },
    Prototype {
        num_classes: usize,
        dim: usize,
        prototypes: Vec<f64>,
    },
}

impl Weights {
    pub fn zeros(arch: &Architecture, input_len: usize, num_classes: usize) -> Self {
        match arch {
            Architecture::LinearSoftmax => Weights::Linear {
                layer: Dense::zeros(input_len, num_classes),
            },
            Architecture::Mlp { hidden_widths, .. } => {
                let mut layers = Vec::with_capacity(hidden_widths.len() + 1);
                let mut fan_in = input_len;
                for &w in hidden_widths {
                    layers.push(Dense::zeros(fan_in, w));
                    fan_in = w;
                }
                layers.push(Dense::zeros(fan_in, num_classes));
                Weights::Mlp { layers }
            }
            Architecture::PrototypeSoftmax { .. } => Weights::Prototype {
                num_classes,
                dim: input_len,
                prototypes: vec![0.0; num_classes * input_len],
            },
        }
    }

    /// Seeded initialization: fan-in scaled Gaussians (He for relu,
    /// LeCun otherwise), the input layer multiplied by `gain`; prototypes
    /// start near mid-gray.
    pub fn init(arch: &Architecture, input_len: usize, num_classes: usize, stream: RngStream, gain: f64) -> Self {
        let mut rng = stream.rng();
        let mut w = Self::zeros(arch, input_len, num_classes);
        match (&mut w, arch) {
            (Weights::Linear { layer }, _) => {
                let s = gain / (layer.inputs as f64).sqrt();
                layer.weight.iter_mut().for_each(|v| *v = s * rng.normal());
            }
            (Weights::Mlp { layers }, Architecture::Mlp { activation, .. }) => {
                let n = layers.len();
                for (i, layer) in layers.iter_mut().enumerate() {
                    let relu_in = *activation == Activation::Relu && i < n - 1;
                    let var = if relu_in { 2.0 } else { 1.0 } / layer.inputs as f64;
                    let s = if i == 0 { gain } else { 1.0 } * var.sqrt();
                    layer.weight.iter_mut().for_each(|v| *v = s * rng.normal());
                }
            }
            (Weights::Prototype { prototypes, .. }, _) => {
                prototypes
                    .iter_mut()
                    .for_each(|v| *v = 0.5 + 0.01 * gain * rng.normal());
            }
            _ => unreachable!("weights built from the same architecture"),
        }
        w
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            Weights::Linear { layer } => Weights::Linear {
                layer: Dense::zeros(layer.inputs, layer.outputs),
            },
            Weights::Mlp { layers } => Weights::Mlp {
                layers: layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect(),
            },
            Weights::Prototype { num_classes, dim, .. } => Weights::Prototype {
                num_classes: *num_classes,
                dim: *dim,
                prototypes: vec![0.0; num_classes * dim],
            },
        }
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut f64> {
        match self {
            Weights::Linear { layer } => layer.weight.iter_mut().chain(layer.bias.iter_mut()).collect(),
            Weights::Mlp { layers } => layers
                .iter_mut()
                .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
                .collect(),
            Weights::Prototype { prototypes, .. } => prototypes.iter_mut().collect(),
        }
    }

    pub(crate) fn params(&self) -> Vec<f64> {
        match self {
            Weights::Linear { layer } => layer.weight.iter().chain(&layer.bias).copied().collect(),
            Weights::Mlp { layers } => layers
                .iter()
                .flat_map(|l| l.weight.iter().chain(&l.bias))
                .copied()
                .collect(),
            Weights::Prototype { prototypes, .. } => prototypes.clone(),
        }
    }

    /// `self ← self − lr · grad`.
    pub(crate) fn sgd_step(&mut self, grad: &Weights, lr: f64) {
        let g = grad.params();
        for (p, d) in self.params_mut().into_iter().zip(g) {
            *p -= lr * d;
        }
    }

    pub(crate) fn all_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub dataset_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub input_shape: Shape,
    pub num_classes: usize,
    pub weights: Weights,
    pub meta: ModelMeta,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Default)]
struct Trace {
    /// Input to each dense layer (mlp); `inputs[0]` is the image itself.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

/// `(loss, p − onehot(y))` with the max-shift log-sum-exp.
/// Linear and mlp models see `(x − INPUT_MEAN) · INPUT_SCALE`.
pub const INPUT_MEAN: f64 = 0.5;
pub const INPUT_SCALE: f64 = 4.0;

fn standardize(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| (v - INPUT_MEAN) * INPUT_SCALE).collect()
}

pub(crate) fn softmax_ce(logits: &[f64], y: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = m + sum.ln() - logits[y];
    let mut d: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    d[y] -= 1.0;
    // clamp rounding negatives but keep NaN visible
    (if loss < 0.0 { 0.0 } else { loss }, d)
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl TrainedModel {
    /// Untrained model with the given weights and empty metadata.
    pub fn from_weights(spec: ModelSpec, input_shape: Shape, num_classes: usize, weights: Weights) -> Self {
        Self {
            spec,
            input_shape,
            num_classes,
            weights,
            meta: ModelMeta {
                train_accuracy: f64::NAN,
                test_accuracy: f64::NAN,
                dataset_fingerprint: String::new(),
            },
        }
    }

    fn activation(&self) -> Activation {
        match &self.spec.architecture {
            Architecture::Mlp { activation, .. } => *activation,
            _ => Activation::Tanh,
        }
    }

    fn temperature(&self) -> f64 {
        match &self.spec.architecture {
            Architecture::PrototypeSoftmax { temperature } => *temperature,
            _ => 1.0,
        }
    }

    fn forward(&self, x: &[f64]) -> Trace {
        let mut t = Trace::default();
        match &self.weights {
            Weights::Linear { layer } => {
                let z = standardize(x);
                layer.forward(&z, &mut t.logits);
                t.inputs.push(z);
            }
            Weights::Mlp { layers } => {
                let act = self.activation();
                let mut h = standardize(x);
                let n = layers.len();
                for (i, layer) in layers.iter().enumerate() {
                    let mut pre = Vec::with_capacity(layer.outputs);
                    layer.forward(&h, &mut pre);
                    t.inputs.push(h);
                    if i == n - 1 {
                        t.logits = pre;
                        break;
                    }
                    h = pre.iter().map(|&v| act.apply(v)).collect();
                    t.pre.push(pre);
                }
            }
            Weights::Prototype {
                num_classes,
                dim,
                prototypes,
            } => {
                let tau = self.temperature();
                t.logits = (0..*num_classes)
                    .map(|k| {
                        let c = &prototypes[k * dim..(k + 1) * dim];
                        -c.iter().zip(x).map(|(a, b)| (b - a) * (b - a)).sum::<f64>() / (2.0 * tau)
                    })
                    .collect();
            }
        }
        t
    }

    /// Pulls `dlogits` back to the input. For mlps, `from_embedding` starts
    /// the pullback at the last hidden activation instead of the logits.
    fn pullback(&self, x: &[f64], t: &Trace, upstream: &[f64], from_embedding: bool) -> Vec<f64> {
        match &self.weights {
            Weights::Linear { layer } => {
                let mut dx = Vec::new();
                layer.backward_input(upstream, &mut dx);
                dx.iter_mut().for_each(|v| *v *= INPUT_SCALE);
                dx
            }
            Weights::Mlp { layers } => {
                let act = self.activation();
                let n = layers.len();
                let mut dh = Vec::new();
                if from_embedding {
                    dh.extend_from_slice(upstream);
                } else {
                    layers[n - 1].backward_input(upstream, &mut dh);
                }
                let mut next = Vec::new();
                for i in (0..n - 1).rev() {
                    let post = &t.inputs[i + 1];
                    let da: Vec<f64> = dh
                        .iter()
                        .zip(&t.pre[i])
                        .zip(post)
                        .map(|((d, &pre), &p)| d * act.derivative(pre, p))
                        .collect();
                    layers[i].backward_input(&da, &mut next);
                    std::mem::swap(&mut dh, &mut next);
                }
                dh.iter_mut().for_each(|v| *v *= INPUT_SCALE);
                dh
            }
            Weights::Prototype {
                num_classes,
                dim,
                prototypes,
            } => {
                let tau = self.temperature();
                let mut dx = vec![0.0; *dim];
                for k in 0..*num_classes {
                    let d = upstream[k];
                    if d == 0.0 {
                        continue;
                    }
                    let c = &prototypes[k * dim..(k + 1) * dim];
                    for ((g, ck), xv) in dx.iter_mut().zip(c).zip(x) {
                        *g += d * (ck - xv) / tau;
                    }
                }
                dx
            }
        }
    }

    fn check_input(&self, x: &ImageTensor) {
        assert_eq!(x.shape(), self.input_shape, "input shape does not match model");
    }

    pub fn logits(&self, x: &ImageTensor) -> Vec<f64> {
        self.check_input(x);
        self.forward(x.as_slice()).logits
    }

    pub fn predict(&self, x: &ImageTensor) -> usize {
        argmax(&self.logits(x))
    }

    pub fn loss_ce(&self, x: &ImageTensor, y: usize) -> f64 {
        assert!(y < self.num_classes, "label out of range");
        softmax_ce(&self.logits(x), y).0
    }

    pub fn grad_input(&self, x: &ImageTensor, y: usize) -> ImageTensor {
        self.loss_and_grad(x, y).1
    }

    /// Cross-entropy and its exact gradient with respect to the input.
    pub fn loss_and_grad(&self, x: &ImageTensor, y: usize) -> (f64, ImageTensor) {
        self.check_input(x);
        assert!(y < self.num_classes, "label out of range");
        let t = self.forward(x.as_slice());
        let (loss, d) = softmax_ce(&t.logits, y);
        let g = self.pullback(x.as_slice(), &t, &d, false);
        (
            loss,
            ImageTensor::from_vec(self.input_shape, g).expect("gradient has input shape"),
        )
    }

    pub fn supports_embedding(&self) -> bool {
        matches!(self.weights, Weights::Mlp { .. })
    }

    fn require_embedding(&self) -> Result<()> {
        if self.supports_embedding() {
            Ok(())
        } else {
            Err(Error::Capability(format!(
                "{} has no embedding layer",
                self.spec.architecture.label()
            )))
        }
    }

    /// Last hidden activation of an mlp.
    pub fn embed(&self, x: &ImageTensor) -> Result<Vec<f64>> {
        self.require_embedding()?;
        self.check_input(x);
        let t = self.forward(x.as_slice());
        Ok(t.inputs.last().cloned().expect("mlp has a hidden layer"))
    }

    /// Embedding together with a pullback closure for vector–Jacobian products.
    pub fn embed_with_pullback(&self, x: &ImageTensor) -> Result<(Vec<f64>, EmbeddingPullback<'_>)> {
        self.require_embedding()?;
        self.check_input(x);
        let t = self.forward(x.as_slice());
        let e = t.inputs.last().cloned().expect("mlp has a hidden layer");
        Ok((
            e,
            EmbeddingPullback {
                model: self,
                x: x.as_slice().to_vec(),
                trace: t,
            },
        ))
    }

    /// Adds `scale · ∂CE/∂θ` into `grad`; returns `(loss, logits)`.
    pub(crate) fn accumulate_param_grad(&self, x: &[f64], y: usize, grad: &mut Weights, scale: f64) -> (f64, Vec<f64>) {
        let t = self.forward(x);
        let (loss, d) = softmax_ce(&t.logits, y);
        match (&self.weights, grad) {
            (Weights::Linear { layer }, Weights::Linear { layer: g }) => {
                layer.accumulate_param_grad(&t.inputs[0], &d, g, scale);
            }
            (Weights::Mlp { layers }, Weights::Mlp { layers: gl }) => {
                let act = self.activation();
                let n = layers.len();
                layers[n - 1].accumulate_param_grad(&t.inputs[n - 1], &d, &mut gl[n - 1], scale);
                let mut dh = Vec::new();
                layers[n - 1].backward_input(&d, &mut dh);
                let mut next = Vec::new();
                for i in (0..n - 1).rev() {
                    let da: Vec<f64> = dh
                        .iter()
                        .zip(&t.pre[i])
                        .zip(&t.inputs[i + 1])
                        .map(|((d, &pre), &p)| d * act.derivative(pre, p))
                        .collect();
                    layers[i].accumulate_param_grad(&t.inputs[i], &da, &mut gl[i], scale);
                    if i > 0 {
                        layers[i].backward_input(&da, &mut next);
                        std::mem::swap(&mut dh, &mut next);
                    }
                }
            }
            (
                Weights::Prototype {
                    num_classes,
                    dim,
                    prototypes,
                },
                Weights::Prototype { prototypes: gp, .. },
            ) => {
                let tau = self.temperature();
                for k in 0..*num_classes {
                    let dk = d[k] * scale / tau;
                    let c = &prototypes[k * dim..(k + 1) * dim];
                    let g = &mut gp[k * dim..(k + 1) * dim];
                    for ((gv, cv), xv) in g.iter_mut().zip(c).zip(x) {
                        *gv += dk * (xv - cv);
                    }
                }
            }
            _ => unreachable!("gradient buffer built with zeros_like"),
        }
        (loss, t.logits)
    }

    /// Stable identity used in reports and fingerprints.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.spec.init_seed.to_le_bytes());
        h.update(self.spec.architecture.label().as_bytes());
        for v in self.weights.params() {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Vector–Jacobian product of `embed` at a fixed input.
pub struct EmbeddingPullback<'a> {
    model: &'a TrainedModel,
    x: Vec<f64>,
    trace: Trace,
}

impl EmbeddingPullback<'_> {
    pub fn apply(&self, upstream: &[f64]) -> ImageTensor {
        let g = self.model.pullback(&self.x, &self.trace, upstream, true);
        ImageTensor::from_vec(self.model.input_shape, g).expect("gradient has input shape")
    }
}
