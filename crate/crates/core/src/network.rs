//! Layer stacks for spiking and conventional classifiers.
//!
//! Both network kinds share [`Layer`] and therefore the checkpoint layout.
//! A spiking network runs every hidden layer through integrate-and-fire
//! dynamics for `latency` steps; its last layer only accumulates membrane
//! potential, and that final potential is returned as the logits.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::snn::{constant_encode, EncodedInput, NeuronConfig};
use crate::tape::{GradTape, NodeId};
use crate::tensor::{Activation, ConvGeometry, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Linear { inputs: usize, outputs: usize },
    Conv2d(ConvGeometry),
}

impl LayerSpec {
    pub fn in_features(&self) -> usize {
        match self {
            LayerSpec::Linear { inputs, .. } => *inputs,
            LayerSpec::Conv2d(g) => g.in_features(),
        }
    }

    pub fn out_features(&self) -> usize {
        match self {
            LayerSpec::Linear { outputs, .. } => *outputs,
            LayerSpec::Conv2d(g) => g.out_features(),
        }
    }

    fn weight_shape(&self) -> Vec<usize> {
        match self {
            LayerSpec::Linear { inputs, outputs } => vec![*inputs, *outputs],
            LayerSpec::Conv2d(g) => g.weight_shape(),
        }
    }

    fn bias_len(&self) -> usize {
        match self {
            LayerSpec::Linear { outputs, .. } => *outputs,
            LayerSpec::Conv2d(g) => g.out_channels,
        }
    }

    fn fan_in(&self) -> usize {
        match self {
            LayerSpec::Linear { inputs, .. } => *inputs,
            LayerSpec::Conv2d(g) => g.in_channels * g.kernel * g.kernel,
        }
    }
}

/// Validates that consecutive layers connect and builds the spec list.
pub fn stack_specs(specs: Vec<LayerSpec>) -> Result<Vec<LayerSpec>> {
    if specs.is_empty() {
        return Err(Error::invalid("a network needs at least one layer"));
    }
    for spec in &specs {
        if let LayerSpec::Conv2d(g) = spec {
            g.validate()?;
        }
        if spec.in_features() == 0 || spec.out_features() == 0 {
            return Err(Error::invalid(format!("degenerate layer {spec:?}")));
        }
    }
    for pair in specs.windows(2) {
        if pair[0].out_features() != pair[1].in_features() {
            return Err(Error::invalid(format!(
                "layer output {} does not feed next layer input {}",
                pair[0].out_features(),
                pair[1].in_features()
            )));
        }
    }
    Ok(specs)
}

/// Multilayer perceptron shape: `inputs → hidden… → classes`.
pub fn mlp(inputs: usize, hidden: &[usize], classes: usize) -> Result<Vec<LayerSpec>> {
    let mut widths = vec![inputs];
    widths.extend_from_slice(hidden);
    widths.push(classes);
    stack_specs(
        widths
            .windows(2)
            .map(|w| LayerSpec::Linear {
                inputs: w[0],
                outputs: w[1],
            })
            .collect(),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Layer {
    /// He-uniform weights, zero bias.
    pub fn init<R: Rng>(spec: LayerSpec, rng: &mut R) -> Self {
        let bound = (6.0 / spec.fan_in() as f32).sqrt();
        let shape = spec.weight_shape();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            spec,
            weight: Tensor::new(shape, data).expect("weight shape"),
            bias: Tensor::zeros(&[spec.bias_len()]),
        }
    }

    pub fn zeroed(spec: LayerSpec) -> Self {
        Self {
            spec,
            weight: Tensor::zeros(&spec.weight_shape()),
            bias: Tensor::zeros(&[spec.bias_len()]),
        }
    }

    pub fn from_parts(spec: LayerSpec, weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape() != spec.weight_shape().as_slice() || bias.numel() != spec.bias_len() {
            return Err(Error::Shape {
                op: "layer",
                lhs: weight.shape().to_vec(),
                rhs: spec.weight_shape(),
            });
        }
        Ok(Self { spec, weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match &self.spec {
            LayerSpec::Linear { .. } => x.matmul(&self.weight)?.add_row(&self.bias),
            LayerSpec::Conv2d(g) => g.forward(x, &self.weight, &self.bias),
        }
    }

    fn forward_taped(
        &self,
        tape: &mut GradTape,
        weight: NodeId,
        bias: NodeId,
        x: NodeId,
    ) -> Result<NodeId> {
        match &self.spec {
            LayerSpec::Linear { .. } => {
                let z = tape.matmul(x, weight)?;
                tape.add_row(z, bias)
            }
            LayerSpec::Conv2d(g) => tape.conv2d(x, weight, bias, *g),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Snn,
    Ann,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Snn => "snn",
            ModelKind::Ann => "ann",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "snn" => Ok(ModelKind::Snn),
            "ann" => Ok(ModelKind::Ann),
            other => Err(Error::invalid(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpikingNetwork {
    pub layers: Vec<Layer>,
    pub latency: usize,
    pub decay: f32,
    /// One firing threshold per hidden layer.
    pub thresholds: Vec<f32>,
    pub reset: f32,
    pub surrogate_width: f32,
}

impl SpikingNetwork {
    pub fn new<R: Rng>(
        specs: Vec<LayerSpec>,
        latency: usize,
        neuron: NeuronConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let specs = stack_specs(specs)?;
        let layers = specs.into_iter().map(|s| Layer::init(s, rng)).collect();
        Self::from_layers(layers, latency, neuron)
    }

    pub fn from_layers(layers: Vec<Layer>, latency: usize, neuron: NeuronConfig) -> Result<Self> {
        neuron.validate()?;
        if latency < 1 {
            return Err(Error::invalid("latency must be at least 1"));
        }
        let hidden = layers.len().saturating_sub(1);
        Ok(Self {
            layers,
            latency,
            decay: neuron.decay,
            thresholds: vec![neuron.threshold; hidden],
            reset: neuron.reset,
            surrogate_width: neuron.surrogate_width,
        })
    }

    pub fn neuron(&self, hidden_layer: usize) -> NeuronConfig {
        NeuronConfig {
            decay: self.decay,
            threshold: self.thresholds[hidden_layer],
            reset: self.reset,
            surrogate_width: self.surrogate_width,
        }
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.spec.out_features())
    }

    /// Final-layer membrane potential after `latency` steps.
    pub fn forward(&self, enc: &EncodedInput) -> Result<Tensor> {
        self.forward_traced(enc, |_, _, _| {})
    }

    /// Like [`forward`](Self::forward), reporting every hidden spike tensor
    /// as `(t, layer, spikes)`.
    pub fn forward_traced(
        &self,
        enc: &EncodedInput,
        mut on_spikes: impl FnMut(usize, usize, &Tensor),
    ) -> Result<Tensor> {
        if enc.latency() != self.latency {
            return Err(Error::invalid(format!(
                "encoded latency {} does not match network latency {}",
                enc.latency(),
                self.latency
            )));
        }
        let (hidden, last) = self.layers.split_at(self.layers.len() - 1);
        let last = &last[0];
        // Constant encoding: the first layer sees the same input at every step.
        let first_current = match hidden.first() {
            Some(layer) => Some(layer.forward(enc.source())?),
            None => None,
        };
        let mut potentials: Vec<Option<Tensor>> = vec![None; hidden.len()];
        let mut output: Option<Tensor> = None;
        for t in 0..self.latency {
            let mut signal: Option<Tensor> = None;
            for (l, layer) in hidden.iter().enumerate() {
                let current = match (l, &first_current, &signal) {
                    (0, Some(c), _) => c.clone(),
                    (_, _, Some(s)) => layer.forward(s)?,
                    _ => unreachable!("hidden layer without input"),
                };
                let cfg = self.neuron(l);
                let u = integrate(potentials[l].as_ref(), &current, cfg.decay)?;
                let spikes = u.map(|v| if v >= cfg.threshold { 1.0 } else { 0.0 });
                let next = u.map(|v| if v >= cfg.threshold { cfg.reset } else { v });
                on_spikes(t, l, &spikes);
                potentials[l] = Some(next);
                signal = Some(spikes);
            }
            let step = last.forward(signal.as_ref().unwrap_or(enc.source()))?;
            output = Some(integrate(output.as_ref(), &step, self.decay)?);
        }
        output
            .expect("latency >= 1")
            .ensure_finite("snn_forward")
    }

    fn forward_taped(
        &self,
        tape: &mut GradTape,
        params: &[NodeId],
        x: NodeId,
        surrogate_width: f32,
    ) -> Result<NodeId> {
        let n = self.layers.len();
        let first_current = if n > 1 {
            Some(self.layers[0].forward_taped(tape, params[0], params[1], x)?)
        } else {
            None
        };
        let mut potentials: Vec<Option<NodeId>> = vec![None; n - 1];
        let mut output: Option<NodeId> = None;
        for _ in 0..self.latency {
            let mut signal = x;
            for l in 0..n - 1 {
                let current = match (l, first_current) {
                    (0, Some(c)) => c,
                    _ => self.layers[l].forward_taped(tape, params[2 * l], params[2 * l + 1], signal)?,
                };
                let cfg = self.neuron(l);
                let u = match potentials[l] {
                    None => current,
                    Some(prev) => {
                        let decayed = tape.scale(prev, cfg.decay);
                        tape.add(decayed, current)?
                    }
                };
                let spikes = tape.spike(u, cfg.threshold, surrogate_width);
                potentials[l] = Some(tape.reset(u, spikes, cfg.reset)?);
                signal = spikes;
            }
            let step =
                self.layers[n - 1].forward_taped(tape, params[2 * n - 2], params[2 * n - 1], signal)?;
            output = Some(match output {
                None => step,
                Some(prev) => {
                    let decayed = tape.scale(prev, self.decay);
                    tape.add(decayed, step)?
                }
            });
        }
        Ok(output.expect("latency >= 1"))
    }
}

fn integrate(previous: Option<&Tensor>, current: &Tensor, decay: f32) -> Result<Tensor> {
    match previous {
        None => Ok(current.clone()),
        Some(p) => p.scale(decay).add(current),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnNetwork {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

impl AnnNetwork {
    pub fn new<R: Rng>(specs: Vec<LayerSpec>, activation: Activation, rng: &mut R) -> Result<Self> {
        let specs = stack_specs(specs)?;
        Ok(Self {
            layers: specs.into_iter().map(|s| Layer::init(s, rng)).collect(),
            activation,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if l < last {
                h = h.map(|v| self.activation.apply(v));
            }
        }
        h.ensure_finite("ann_forward")
    }

    fn forward_taped(&self, tape: &mut GradTape, params: &[NodeId], x: NodeId) -> Result<NodeId> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            h = layer.forward_taped(tape, params[2 * l], params[2 * l + 1], h)?;
            if l < last {
                h = tape.activation(h, self.activation);
            }
        }
        Ok(h)
    }
}

/// A trained or trainable classifier of either kind.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Snn(SpikingNetwork),
    Ann(AnnNetwork),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Snn(_) => ModelKind::Snn,
            Model::Ann(_) => ModelKind::Ann,
        }
    }

    pub fn layers(&self) -> &[Layer] {
        match self {
            Model::Snn(n) => &n.layers,
            Model::Ann(n) => &n.layers,
        }
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        match self {
            Model::Snn(n) => &mut n.layers,
            Model::Ann(n) => &mut n.layers,
        }
    }

    /// Latency for spiking models, `None` for conventional ones.
    pub fn latency(&self) -> Option<usize> {
        match self {
            Model::Snn(n) => Some(n.latency),
            Model::Ann(_) => None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.layers().first().map_or(0, |l| l.spec.in_features())
    }

    pub fn classes(&self) -> usize {
        self.layers().last().map_or(0, |l| l.spec.out_features())
    }

    /// Logits for a `[batch, features]` input.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.in_features() {
            return Err(Error::Shape {
                op: "model_input",
                lhs: x.shape().to_vec(),
                rhs: vec![self.in_features()],
            });
        }
        match self {
            Model::Snn(n) => n.forward(&constant_encode(x, n.latency)?),
            Model::Ann(n) => n.forward(x),
        }
    }

    /// Records the forward pass on `tape`. `params` holds `(weight, bias)`
    /// node pairs in layer order.
    pub fn forward_taped(
        &self,
        tape: &mut GradTape,
        params: &[NodeId],
        x: NodeId,
        surrogate_width: f32,
    ) -> Result<NodeId> {
        if params.len() != 2 * self.layers().len() {
            return Err(Error::invalid("parameter node count does not match layers"));
        }
        match self {
            Model::Snn(n) => n.forward_taped(tape, params, x, surrogate_width),
            Model::Ann(n) => n.forward_taped(tape, params, x),
        }
    }

    /// True-label softmax confidence for every row of `x`.
    pub fn confidences(&self, x: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
        if labels.len() != x.rows() {
            return Err(Error::invalid("one label per input row required"));
        }
        let logits = self.logits(x)?;
        labels
            .iter()
            .enumerate()
            .map(|(i, &y)| true_label_confidence(logits.row(i), y))
            .collect()
    }

    /// `argmax` predictions (lowest index wins ties).
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
    }

    pub fn same_architecture(&self, other: &Model) -> bool {
        self.kind() == other.kind()
            && self.layers().len() == other.layers().len()
            && self
                .layers()
                .iter()
                .zip(other.layers())
                .all(|(a, b)| a.spec == b.spec)
    }
}

pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Softmax probability of `label`, evaluated in `f64` from `f32` logits.
///
/// Underflow is clamped to the smallest positive normal so the value stays
/// strictly positive.
pub fn true_label_confidence(logits: &[f32], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} outside {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().map(|&v| v as f64).fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|&v| (v as f64 - max).exp()).sum();
    let p = (logits[label] as f64 - max).exp() / total;
    Ok(p.max(f64::MIN_POSITIVE))
}

/// Single-sample confidence `Pr(x | θ)`.
pub fn confidence(model: &Model, x: &Tensor, label: usize) -> Result<f64> {
    let row = x.clone().reshape(vec![1, x.numel()])?;
    Ok(model.confidences(&row, &[label])?[0])
}
