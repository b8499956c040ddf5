//! Constant encoding and integrate-and-fire membrane dynamics.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-layer neuron parameters.
///
/// `decay == 1` gives integrate-and-fire, `decay < 1` leaky integrate-and-fire.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeuronConfig {
    pub decay: f32,
    pub threshold: f32,
    pub reset: f32,
    pub surrogate_width: f32,
}

impl Default for NeuronConfig {
    fn default() -> Self {
        Self {
            decay: 1.0,
            threshold: 1.0,
            reset: 0.0,
            surrogate_width: 1.0,
        }
    }
}

impl NeuronConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::invalid(format!("decay {} not in (0, 1]", self.decay)));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::invalid(format!(
                "threshold {} must be positive",
                self.threshold
            )));
        }
        if !(self.threshold > self.reset) {
            return Err(Error::invalid(format!(
                "threshold {} must exceed reset value {}",
                self.threshold, self.reset
            )));
        }
        if !(self.surrogate_width > 0.0) {
            return Err(Error::invalid("surrogate width must be positive"));
        }
        Ok(())
    }

    pub fn is_leaky(&self) -> bool {
        self.decay < 1.0
    }
}

/// `latency` identical time slices of one static input.
///
/// The replicas are never materialised; [`EncodedInput::slice`] hands out
/// the shared source for every time step.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedInput {
    source: Tensor,
    latency: usize,
}

impl EncodedInput {
    pub fn latency(&self) -> usize {
        self.latency
    }

    pub fn source(&self) -> &Tensor {
        &self.source
    }

    pub fn slice(&self, t: usize) -> Option<&Tensor> {
        (t < self.latency).then_some(&self.source)
    }

    /// Stacks the replicas into a `[T, ...]` tensor.
    pub fn materialize(&self) -> Tensor {
        let mut shape = vec![self.latency];
        shape.extend_from_slice(self.source.shape());
        let mut data = Vec::with_capacity(self.latency * self.source.numel());
        for _ in 0..self.latency {
            data.extend_from_slice(self.source.data());
        }
        Tensor::new(shape, data).expect("replicated shape")
    }
}

pub fn constant_encode(x: &Tensor, latency: usize) -> Result<EncodedInput> {
    if latency < 1 {
        return Err(Error::invalid("latency must be at least 1"));
    }
    Ok(EncodedInput {
        source: x.clone(),
        latency,
    })
}

/// One membrane update: integrate, fire where `U ≥ θ`, hard-reset fired units.
///
/// Returns `(U_next, spikes)`.
pub fn lif_step(
    previous: &Tensor,
    current: &Tensor,
    cfg: &NeuronConfig,
) -> Result<(Tensor, Tensor)> {
    let integrated = previous.scale(cfg.decay).add(current)?;
    let spikes = integrated.map(|u| if u >= cfg.threshold { 1.0 } else { 0.0 });
    let next = integrated.map(|u| if u >= cfg.threshold { cfg.reset } else { u });
    Ok((next, spikes))
}
