//! Dense row-major `f32` tensors and the handful of kernels the networks need.
//!
//! Every kernel accumulates in a fixed order, so identical inputs give
//! bit-identical outputs on a given machine.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::invalid(format!(
                "tensor of shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a `[rows.len(), width]` matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::invalid("ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), width], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Width of a 2-D tensor (product of all trailing dimensions otherwise).
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(self, op: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite { op })
        }
    }

    /// Picks rows by index into a new `[indices.len(), cols]` tensor.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let c = self.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        if shape.is_empty() {
            shape.push(0);
        }
        shape[0] = indices.len();
        Self { shape, data }
    }

    fn check_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(())
    }

    fn matrix_dims(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::Shape {
                op,
                lhs: other.to_vec(),
                rhs: vec![],
            }),
        }
    }

    /// `self @ other` for 2-D operands.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.matrix_dims("matmul")?;
        let (k2, n) = other.matrix_dims("matmul")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut out = vec![0.0f32; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                // Spike trains are mostly zeros.
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Tensor::new(vec![m, n], out)?.ensure_finite("matmul")
    }

    /// `selfᵀ @ other`.
    pub fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        let (k, m) = self.matrix_dims("matmul_tn")?;
        let (k2, n) = other.matrix_dims("matmul_tn")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul_tn",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut out = vec![0.0f32; m * n];
        for p in 0..k {
            let a_row = &self.data[p * m..(p + 1) * m];
            let b_row = &other.data[p * n..(p + 1) * n];
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o_row = &mut out[i * n..(i + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Tensor::new(vec![m, n], out)?.ensure_finite("matmul_tn")
    }

    /// `self @ otherᵀ`.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.matrix_dims("matmul_nt")?;
        let (n, k2) = other.matrix_dims("matmul_nt")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul_nt",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut out = vec![0.0f32; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let b_row = &other.data[j * k..(j + 1) * k];
                let mut acc = 0.0f32;
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                out[i * n + j] = acc;
            }
        }
        Tensor::new(vec![m, n], out)?.ensure_finite("matmul_nt")
    }

    /// Adds a length-`cols` bias to every row.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        let c = self.cols();
        if bias.numel() != c {
            return Err(Error::Shape {
                op: "add_row",
                lhs: self.shape.clone(),
                rhs: bias.shape.clone(),
            });
        }
        let mut out = self.clone();
        for row in out.data.chunks_mut(c.max(1)) {
            for (o, &b) in row.iter_mut().zip(&bias.data) {
                *o += b;
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "add")?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "mul")?;
        Ok(self.zip_map(other, |a, b| a * b))
    }

    pub fn scale(&self, factor: f32) -> Tensor {
        self.map(|v| v * factor)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn sum(&self) -> f32 {
        self.data.iter().sum()
    }

    /// Column sums of a 2-D tensor.
    pub fn sum_rows(&self) -> Tensor {
        let c = self.cols();
        let mut out = vec![0.0f32; c];
        for row in self.data.chunks(c.max(1)) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        Tensor {
            shape: vec![c],
            data: out,
        }
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.shape.len() {
            return Err(Error::invalid(format!(
                "softmax axis {axis} out of range for shape {:?}",
                self.shape
            )));
        }
        let len = self.shape[axis];
        if len == 0 {
            return Err(Error::invalid("softmax over an empty axis"));
        }
        let inner: usize = self.shape[axis + 1..].iter().product();
        let outer: usize = self.shape[..axis].iter().product();
        let mut out = self.data.clone();
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| o * len * inner + k * inner + i;
                let max = (0..len)
                    .map(|k| self.data[at(k)])
                    .fold(f32::NEG_INFINITY, f32::max);
                let mut total = 0.0f32;
                for k in 0..len {
                    let e = (self.data[at(k)] - max).exp();
                    out[at(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    out[at(k)] /= total;
                }
            }
        }
        Tensor::new(self.shape.clone(), out)?.ensure_finite("softmax")
    }
}

/// Fixed nonlinearities for the non-spiking networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Relu,
    Softplus,
}

impl Activation {
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Relu => x.max(0.0),
            Activation::Softplus => {
                if x > 20.0 {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
        }
    }

    /// Derivative at pre-activation `x`.
    pub fn derivative(self, x: f32) -> f32 {
        match self {
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => 1.0 / (1.0 + (-x).exp()),
        }
    }

    pub fn apply_f64(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Relu => x.max(0.0),
            Activation::Softplus => {
                if x > 30.0 {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Sigmoid => 0,
            Activation::Relu => 1,
            Activation::Softplus => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Sigmoid),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Softplus),
            _ => None,
        }
    }
}

/// Geometry of a stride-1, unpadded 2-D convolution over flattened images.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        self.height + 1 - self.kernel
    }

    pub fn out_width(&self) -> usize {
        self.width + 1 - self.kernel
    }

    pub fn in_features(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    pub fn out_features(&self) -> usize {
        self.out_channels * self.out_height() * self.out_width()
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.kernel > self.height || self.kernel > self.width {
            return Err(Error::invalid(format!(
                "kernel {} does not fit a {}x{} image",
                self.kernel, self.height, self.width
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid("convolution needs at least one channel"));
        }
        Ok(())
    }

    fn check(&self, input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<()> {
        if input.cols() != self.in_features() {
            return Err(Error::Shape {
                op: "conv2d",
                lhs: input.shape.clone(),
                rhs: vec![self.in_channels, self.height, self.width],
            });
        }
        if weight.shape != self.weight_shape() || bias.numel() != self.out_channels {
            return Err(Error::Shape {
                op: "conv2d",
                lhs: weight.shape.clone(),
                rhs: self.weight_shape(),
            });
        }
        Ok(())
    }

    /// Input `[batch, C*H*W]` → output `[batch, OC*OH*OW]`.
    pub fn forward(&self, input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
        self.check(input, weight, bias)?;
        let (oh, ow, k) = (self.out_height(), self.out_width(), self.kernel);
        let batch = input.rows();
        let mut out = vec![0.0f32; batch * self.out_features()];
        for b in 0..batch {
            let x = input.row(b);
            let y = &mut out[b * self.out_features()..(b + 1) * self.out_features()];
            for oc in 0..self.out_channels {
                for r in 0..oh {
                    for c in 0..ow {
                        let mut acc = bias.data[oc];
                        for ic in 0..self.in_channels {
                            for dr in 0..k {
                                for dc in 0..k {
                                    let w = weight.data[((oc * self.in_channels + ic) * k + dr) * k + dc];
                                    let v = x[(ic * self.height + r + dr) * self.width + c + dc];
                                    acc += w * v;
                                }
                            }
                        }
                        y[(oc * oh + r) * ow + c] = acc;
                    }
                }
            }
        }
        Tensor::new(vec![batch, self.out_features()], out)?.ensure_finite("conv2d")
    }

    /// Gradients `(d_input, d_weight, d_bias)` given the upstream gradient.
    pub fn backward(
        &self,
        input: &Tensor,
        weight: &Tensor,
        grad_out: &Tensor,
    ) -> (Tensor, Tensor, Tensor) {
        let (oh, ow, k) = (self.out_height(), self.out_width(), self.kernel);
        let batch = input.rows();
        let mut gx = vec![0.0f32; input.numel()];
        let mut gw = vec![0.0f32; weight.numel()];
        let mut gb = vec![0.0f32; self.out_channels];
        for b in 0..batch {
            let x = input.row(b);
            let gy = grad_out.row(b);
            let gxb = &mut gx[b * self.in_features()..(b + 1) * self.in_features()];
            for oc in 0..self.out_channels {
                for r in 0..oh {
                    for c in 0..ow {
                        let g = gy[(oc * oh + r) * ow + c];
                        if g == 0.0 {
                            continue;
                        }
                        gb[oc] += g;
                        for ic in 0..self.in_channels {
                            for dr in 0..k {
                                for dc in 0..k {
                                    let wi = ((oc * self.in_channels + ic) * k + dr) * k + dc;
                                    let xi = (ic * self.height + r + dr) * self.width + c + dc;
                                    gw[wi] += g * x[xi];
                                    gxb[xi] += g * weight.data[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
        (
            Tensor {
                shape: input.shape.clone(),
                data: gx,
            },
            Tensor {
                shape: weight.shape.clone(),
                data: gw,
            },
            Tensor {
                shape: vec![self.out_channels],
                data: gb,
            },
        )
    }
}
