//! Reverse-mode gradient tape.
//!
//! Nodes are appended in evaluation order, so walking the node list
//! backwards is a reverse topological traversal.

use crate::error::{Error, Result};
use crate::surrogate;
use crate::tensor::{Activation, ConvGeometry, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// Leaf that never receives a gradient (inputs, masks).
    Constant,
    MatMul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f32),
    Activation(NodeId, Activation),
    /// Heaviside firing with a triangular surrogate derivative.
    Spike {
        input: NodeId,
        threshold: f32,
        width: f32,
    },
    /// Hard reset: where `spikes` is 1 the potential becomes a constant.
    /// The spike mask is treated as a constant in the backward pass.
    Reset { input: NodeId, keep: Tensor },
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        geometry: ConvGeometry,
    },
    Sum(NodeId),
    /// Mean softmax cross-entropy; caches the softmax for the backward pass.
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct GradTape {
    nodes: Vec<Node>,
}

/// Gradients indexed by node; `None` where no gradient flowed.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Constant)
    }

    fn wants_grad(&self, id: NodeId) -> bool {
        !matches!(self.nodes[id.0].op, Op::Constant)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let v = self.value(x).add_row(self.value(bias))?;
        Ok(self.push(v, Op::AddRow(x, bias)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, factor: f32) -> NodeId {
        let v = self.value(a).scale(factor);
        self.push(v, Op::Scale(a, factor))
    }

    pub fn activation(&mut self, a: NodeId, act: Activation) -> NodeId {
        let v = self.value(a).map(|x| act.apply(x));
        self.push(v, Op::Activation(a, act))
    }

    pub fn spike(&mut self, input: NodeId, threshold: f32, width: f32) -> NodeId {
        let v = self
            .value(input)
            .map(|u| if u >= threshold { 1.0 } else { 0.0 });
        self.push(
            v,
            Op::Spike {
                input,
                threshold,
                width,
            },
        )
    }

    /// `u` where `spikes` is 0, `reset_value` where it is 1.
    pub fn reset(&mut self, input: NodeId, spikes: NodeId, reset_value: f32) -> Result<NodeId> {
        let u = self.value(input);
        let s = self.value(spikes);
        if u.shape() != s.shape() {
            return Err(Error::Shape {
                op: "reset",
                lhs: u.shape().to_vec(),
                rhs: s.shape().to_vec(),
            });
        }
        let keep = s.map(|v| 1.0 - v);
        let value = u.zip_reset(s, reset_value);
        Ok(self.push(value, Op::Reset { input, keep }))
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        geometry: ConvGeometry,
    ) -> Result<NodeId> {
        let v = geometry.forward(self.value(input), self.value(weight), self.value(bias))?;
        Ok(self.push(
            v,
            Op::Conv2d {
                input,
                weight,
                bias,
                geometry,
            },
        ))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    /// Mean cross-entropy of row-wise softmax against integer labels.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let z = self.value(logits);
        if z.shape().len() != 2 || z.rows() != labels.len() {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: z.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let classes = z.cols();
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::invalid(format!(
                "label {bad} outside {classes} classes"
            )));
        }
        let probs = z.softmax(1)?;
        let mut loss = 0.0f32;
        for (i, &y) in labels.iter().enumerate() {
            let row = z.row(i);
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<f32>().ln() + max;
            loss += lse - row[y];
        }
        loss /= labels.len().max(1) as f32;
        if !loss.is_finite() {
            return Err(Error::NonFinite { op: "cross_entropy" });
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Propagates d(loss)/d(node) for every node reachable from `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Constant => {}
                Op::MatMul(a, b) => {
                    if self.wants_grad(*a) {
                        let ga = g.matmul_nt(self.value(*b))?;
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.wants_grad(*b) {
                        let gb = self.value(*a).matmul_tn(&g)?;
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::AddRow(x, bias) => {
                    let gb = g.sum_rows().reshape(self.value(*bias).shape().to_vec())?;
                    accumulate(&mut grads, *bias, gb);
                    accumulate(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.mul(self.value(*b))?;
                    let gb = g.mul(self.value(*a))?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, factor) => accumulate(&mut grads, *a, g.scale(*factor)),
                Op::Activation(a, act) => {
                    let d = self.value(*a).map(|x| act.derivative(x));
                    accumulate(&mut grads, *a, g.mul(&d)?);
                }
                Op::Spike {
                    input,
                    threshold,
                    width,
                } => {
                    let d = self
                        .value(*input)
                        .map(|u| surrogate::triangular(u, *threshold, *width));
                    accumulate(&mut grads, *input, g.mul(&d)?);
                }
                Op::Reset { input, keep } => accumulate(&mut grads, *input, g.mul(keep)?),
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    geometry,
                } => {
                    let (gx, gw, gb) =
                        geometry.backward(self.value(*input), self.value(*weight), &g);
                    accumulate(&mut grads, *input, gx);
                    accumulate(&mut grads, *weight, gw);
                    accumulate(&mut grads, *bias, gb.reshape(self.value(*bias).shape().to_vec())?);
                }
                Op::Sum(a) => {
                    let v = g.data()[0];
                    accumulate(&mut grads, *a, Tensor::full(self.value(*a).shape(), v));
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let upstream = g.data()[0];
                    let n = labels.len().max(1) as f32;
                    let mut d = probs.clone();
                    let c = d.cols();
                    for (i, &y) in labels.iter().enumerate() {
                        d.data_mut()[i * c + y] -= 1.0;
                    }
                    accumulate(&mut grads, *logits, d.scale(upstream / n));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

impl Tensor {
    fn zip_reset(&self, spikes: &Tensor, reset_value: f32) -> Tensor {
        let data = self
            .data()
            .iter()
            .zip(spikes.data())
            .map(|(&u, &s)| if s > 0.5 { reset_value } else { u })
            .collect();
        Tensor::new(self.shape().to_vec(), data).expect("shape preserved")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
    }

    /// Compares tape gradients of `build` against central differences
    /// (h = 1e-3) for every entry of every input.
    fn check(inputs: Vec<Tensor>, build: impl Fn(&mut GradTape, &[NodeId]) -> NodeId) {
        let mut tape = GradTape::new();
        let ids: Vec<NodeId> = inputs.iter().cloned().map(|t| tape.leaf(t)).collect();
        let loss = build(&mut tape, &ids);
        let grads = tape.backward(loss).unwrap();

        let eval = |perturbed: &[Tensor]| -> f64 {
            let mut tape = GradTape::new();
            let ids: Vec<NodeId> = perturbed.iter().cloned().map(|t| tape.leaf(t)).collect();
            let loss = build(&mut tape, &ids);
            tape.value(loss).data()[0] as f64
        };
        let h = 1e-3f32;
        for (k, input) in inputs.iter().enumerate() {
            let analytic = grads
                .get(ids[k])
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(input.shape()));
            for i in 0..input.numel() {
                let mut plus = inputs.clone();
                plus[k].data_mut()[i] += h;
                let mut minus = inputs.clone();
                minus[k].data_mut()[i] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h as f64);
                let a = analytic.data()[i] as f64;
                // Relative error, floored at 0.1 to absorb f32 rounding in the loss.
                let scale = a.abs().max(numeric.abs()).max(0.1);
                assert!(
                    (a - numeric).abs() / scale <= 1e-2,
                    "input {k}[{i}]: analytic {a} vs numeric {numeric}"
                );
            }
        }
    }

    /// Reduces a node to a scalar with fixed random weights so every output
    /// entry contributes a distinct gradient.
    fn weighted_sum(tape: &mut GradTape, node: NodeId, seed: u64) -> NodeId {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random(tape.value(node).shape(), &mut rng);
        let w = tape.constant(w);
        let prod = tape.mul(node, w).unwrap();
        tape.sum(prod)
    }

    #[test]
    fn gradcheck_matmul_and_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        check(
            vec![random(&[3, 4], &mut rng), random(&[4, 2], &mut rng), random(&[2], &mut rng)],
            |t, ids| {
                let z = t.matmul(ids[0], ids[1]).unwrap();
                let z = t.add_row(z, ids[2]).unwrap();
                weighted_sum(t, z, 10)
            },
        );
    }

    #[test]
    fn gradcheck_elementwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        check(
            vec![random(&[2, 3], &mut rng), random(&[2, 3], &mut rng)],
            |t, ids| {
                let a = t.add(ids[0], ids[1]).unwrap();
                let m = t.mul(a, ids[1]).unwrap();
                let s = t.scale(m, 0.7);
                weighted_sum(t, s, 11)
            },
        );
    }

    #[test]
    fn gradcheck_activations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for act in [Activation::Sigmoid, Activation::Softplus, Activation::Relu] {
            // Keep rectifier inputs away from the kink.
            let x = random(&[3, 3], &mut rng).map(|v| if v.abs() < 0.05 { v + 0.2 } else { v });
            check(vec![x], |t, ids| {
                let y = t.activation(ids[0], act);
                weighted_sum(t, y, 12)
            });
        }
    }

    #[test]
    fn gradcheck_conv2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let geometry = ConvGeometry {
            in_channels: 2,
            out_channels: 2,
            height: 4,
            width: 3,
            kernel: 2,
        };
        check(
            vec![
                random(&[2, geometry.in_features()], &mut rng),
                random(&geometry.weight_shape(), &mut rng),
                random(&[2], &mut rng),
            ],
            |t, ids| {
                let y = t.conv2d(ids[0], ids[1], ids[2], geometry).unwrap();
                weighted_sum(t, y, 13)
            },
        );
    }

    #[test]
    fn gradcheck_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        check(vec![random(&[4, 3], &mut rng)], |t, ids| {
            t.cross_entropy(ids[0], &[0, 2, 1, 2]).unwrap()
        });
    }

    #[test]
    fn spike_uses_triangular_surrogate() {
        let mut tape = GradTape::new();
        let u = tape.leaf(Tensor::new(vec![4], vec![1.0, 1.5, 0.2, 3.0]).unwrap());
        let s = tape.spike(u, 1.0, 1.0);
        assert_eq!(tape.value(s).data(), &[1.0, 1.0, 0.0, 1.0]);
        let loss = tape.sum(s);
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(u).unwrap().data();
        assert!((g[0] - 1.0).abs() < 1e-6);
        assert!((g[1] - 0.5).abs() < 1e-6);
        assert!((g[2] - 0.2).abs() < 1e-6);
        assert_eq!(g[3], 0.0);
    }

    #[test]
    fn reset_blocks_gradient_where_fired() {
        let mut tape = GradTape::new();
        let u = tape.leaf(Tensor::new(vec![2], vec![1.2, 0.4]).unwrap());
        let s = tape.constant(Tensor::new(vec![2], vec![1.0, 0.0]).unwrap());
        let r = tape.reset(u, s, 0.0).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 0.4]);
        let loss = tape.sum(r);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(u).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = GradTape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 2]));
        assert!(tape.backward(a).is_err());
    }

    #[test]
    fn shared_node_gradients_accumulate() {
        let mut tape = GradTape::new();
        let a = tape.leaf(Tensor::new(vec![1], vec![3.0]).unwrap());
        let b = tape.mul(a, a).unwrap();
        let loss = tape.sum(b);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[6.0]);
        assert!(!tape.is_empty());
    }
}
