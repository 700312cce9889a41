//! Forward-only numeric kernel: dense `f32` tensors plus the layer
//! operations a plain convolutional classifier needs.
//!
//! Inner products accumulate in `f64` and round once on output.

use crate::error::{Error, Result};

/// Dense row-major tensor of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidTensor(format!(
                "zero-sized dimension in shape {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len = shape.iter().product();
        Tensor::new(shape, vec![0.0; len])
    }

    /// Rank-1 tensor; `values` must be nonempty.
    pub fn vector(values: Vec<f32>) -> Result<Self> {
        Tensor::new(vec![values.len()], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Same data under a new shape of equal element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn into_reshaped(self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

/// Output spatial extent of a strided, padded window of size `kernel`.
/// `None` when the window does not fit even once.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Weights of one 2-D convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dParams {
    kernels: Tensor,
    biases: Tensor,
    stride: usize,
    padding: usize,
}

impl Conv2dParams {
    /// `kernels` is `[out_channels, in_channels, kh, kw]`, `biases` is `[out_channels]`.
    pub fn new(kernels: Tensor, biases: Tensor, stride: usize, padding: usize) -> Result<Self> {
        if kernels.rank() != 4 {
            return Err(Error::shape("conv kernels rank", 4, kernels.rank()));
        }
        if biases.shape() != [kernels.shape()[0]] {
            return Err(Error::shape(
                "conv biases",
                format!("[{}]", kernels.shape()[0]),
                format!("{:?}", biases.shape()),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidTensor("conv stride must be >= 1".into()));
        }
        Ok(Conv2dParams {
            kernels,
            biases,
            stride,
            padding,
        })
    }

    pub fn kernels(&self) -> &Tensor {
        &self.kernels
    }

    pub fn biases(&self) -> &Tensor {
        &self.biases
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.kernels.shape()[2], self.kernels.shape()[3])
    }
}

/// Weights of one affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    weights: Tensor,
    biases: Tensor,
}

impl LinearParams {
    /// `weights` is `[out_features, in_features]`, `biases` is `[out_features]`.
    pub fn new(weights: Tensor, biases: Tensor) -> Result<Self> {
        if weights.rank() != 2 {
            return Err(Error::shape("linear weights rank", 2, weights.rank()));
        }
        if biases.shape() != [weights.shape()[0]] {
            return Err(Error::shape(
                "linear biases",
                format!("[{}]", weights.shape()[0]),
                format!("{:?}", biases.shape()),
            ));
        }
        Ok(LinearParams { weights, biases })
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn biases(&self) -> &Tensor {
        &self.biases
    }

    pub fn out_features(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_features(&self) -> usize {
        self.weights.shape()[1]
    }
}

/// Zero-padded 2-D cross-correlation of a `[C_in, H, W]` input.
pub fn conv2d_forward(input: &Tensor, params: &Conv2dParams) -> Result<Tensor> {
    if input.rank() != 3 {
        return Err(Error::shape("conv input rank", 3, input.rank()));
    }
    let (c_in, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    if c_in != params.in_channels() {
        return Err(Error::shape("conv input channels", params.in_channels(), c_in));
    }
    let (kh, kw) = params.kernel_size();
    let (stride, pad) = (params.stride, params.padding);
    let h_out = conv_output_size(h, kh, stride, pad)
        .ok_or_else(|| Error::shape("conv input height", format!(">= {}", kh.saturating_sub(2 * pad).max(1)), h))?;
    let w_out = conv_output_size(w, kw, stride, pad)
        .ok_or_else(|| Error::shape("conv input width", format!(">= {}", kw.saturating_sub(2 * pad).max(1)), w))?;
    let c_out = params.out_channels();

    // Column matrix `[C_in * kh * kw, H' * W']` in f64, so each output
    // channel is a run of contiguous axpy updates.
    let plane = h_out * w_out;
    let taps = c_in * kh * kw;
    let mut cols = vec![0.0f64; taps * plane];
    for c in 0..c_in {
        let chan = &input.data[c * h * w..(c + 1) * h * w];
        for u in 0..kh {
            for v in 0..kw {
                let row_base = ((c * kh + u) * kw + v) * plane;
                for i in 0..h_out {
                    let y = (i * stride + u) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let src = &chan[y as usize * w..(y as usize + 1) * w];
                    let dst = &mut cols[row_base + i * w_out..row_base + (i + 1) * w_out];
                    for (j, d) in dst.iter_mut().enumerate() {
                        let x = (j * stride + v) as isize - pad as isize;
                        if x >= 0 && x < w as isize {
                            *d = src[x as usize] as f64;
                        }
                    }
                }
            }
        }
    }

    let kernels = params.kernels.data();
    let biases = params.biases.data();
    let mut acc = vec![0.0f64; plane];
    let mut out = Vec::with_capacity(c_out * plane);
    for o in 0..c_out {
        acc.fill(biases[o] as f64);
        let weights = &kernels[o * taps..(o + 1) * taps];
        for (t, &k) in weights.iter().enumerate() {
            if k == 0.0 {
                continue;
            }
            let k = k as f64;
            for (a, &x) in acc.iter_mut().zip(&cols[t * plane..(t + 1) * plane]) {
                *a += k * x;
            }
        }
        out.extend(acc.iter().map(|&a| a as f32));
    }
    Tensor::new(vec![c_out, h_out, w_out], out)
}

/// f64 dot product with four interleaved partial sums.
#[inline]
fn dot_f64(weights: &[f32], x: &[f64]) -> f64 {
    let mut partial = [0.0f64; 4];
    let mut w_chunks = weights.chunks_exact(4);
    let mut x_chunks = x.chunks_exact(4);
    for (wc, xc) in (&mut w_chunks).zip(&mut x_chunks) {
        for l in 0..4 {
            partial[l] += wc[l] as f64 * xc[l];
        }
    }
    let tail: f64 = w_chunks
        .remainder()
        .iter()
        .zip(x_chunks.remainder())
        .map(|(&w, &xi)| w as f64 * xi)
        .sum();
    (partial[0] + partial[1]) + (partial[2] + partial[3]) + tail
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|x| x.max(0.0))
}

pub(crate) fn relu_in_place(t: &mut Tensor) {
    for x in &mut t.data {
        *x = x.max(0.0);
    }
}

/// Affine map of a flat input; any input shape with the right element
/// count is accepted (flattening is implicit).
pub fn linear_forward(input: &Tensor, params: &LinearParams) -> Result<Tensor> {
    let n_in = params.in_features();
    if input.len() != n_in {
        return Err(Error::shape("linear input length", n_in, input.len()));
    }
    let x: Vec<f64> = input.data.iter().map(|&v| v as f64).collect();
    let out = params
        .weights
        .data()
        .chunks_exact(n_in)
        .zip(params.biases.data())
        .map(|(row, &b)| (b as f64 + dot_f64(row, &x)) as f32)
        .collect();
    Tensor::vector(out)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(input: &Tensor) -> Result<usize> {
    argmax_slice(input.data())
}

pub(crate) fn argmax_slice(values: &[f32]) -> Result<usize> {
    let (first, rest) = values.split_first().ok_or(Error::EmptyTensor)?;
    let mut best = (0, *first);
    for (i, &v) in rest.iter().enumerate() {
        if v > best.1 {
            best = (i + 1, v);
        }
    }
    Ok(best.0)
}
