use super::kernels::{self, ConvGeometry};
use super::Tensor;
use crate::error::{Error, Result};

/// Matrix product of a rank-2 `m x k` tensor with a rank-2 `k x n` tensor.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, n) = matmul_dims(a.shape(), b.shape())?;
    let mut out = vec![0.0; m * n];
    kernels::gemm(m, k, n, 1.0, a.data(), false, b.data(), false, 0.0, &mut out);
    Tensor::new(vec![m, n], out)
}

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    match (a, b) {
        ([m, k], [k2, n]) if k == k2 => Ok((*m, *k, *n)),
        _ => Err(Error::Shape(format!("matmul of {a:?} by {b:?}"))),
    }
}

/// Output length of a valid (unpadded) convolution along one axis.
pub fn conv_output_dim(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || kernel > input {
        None
    } else {
        Some((input - kernel) / stride + 1)
    }
}

pub(crate) fn conv_geometry(input: &[usize], kernels: &[usize], stride: usize) -> Result<ConvGeometry> {
    let ([cin, h, w], [_cout, kcin, kh, kw]) = (input, kernels) else {
        return Err(Error::Shape(format!(
            "conv2d expects input [C,H,W] and kernels [O,C,kh,kw], got {input:?} and {kernels:?}"
        )));
    };
    if cin != kcin {
        return Err(Error::Shape(format!(
            "conv2d input has {cin} channels but kernels {kernels:?} expect {kcin}"
        )));
    }
    let out_h = conv_output_dim(*h, *kh, stride);
    let out_w = conv_output_dim(*w, *kw, stride);
    match (out_h, out_w) {
        (Some(out_h), Some(out_w)) => Ok(ConvGeometry {
            in_channels: *cin,
            height: *h,
            width: *w,
            kernel_h: *kh,
            kernel_w: *kw,
            stride,
            out_h,
            out_w,
        }),
        _ => Err(Error::Shape(format!(
            "conv2d kernel {kh}x{kw} (stride {stride}) does not fit input {h}x{w}"
        ))),
    }
}

/// Valid cross-correlation of a `cin x h x w` input with `cout x cin x kh x kw` kernels.
pub fn conv2d(input: &Tensor, kernels: &Tensor, stride: usize) -> Result<Tensor> {
    let g = conv_geometry(input.shape(), kernels.shape(), stride)?;
    let cout = kernels.shape()[0];
    let mut cols = vec![0.0; g.patch_len() * g.positions()];
    kernels::im2col(input.data(), &g, &mut cols);
    let mut out = vec![0.0; cout * g.positions()];
    kernels::gemm(
        cout,
        g.patch_len(),
        g.positions(),
        1.0,
        kernels.data(),
        false,
        &cols,
        false,
        0.0,
        &mut out,
    );
    Tensor::new(vec![cout, g.out_h, g.out_w], out)
}

pub fn relu(t: &Tensor) -> Tensor {
    map(t, |x| x.max(0.0))
}

pub fn sigmoid(t: &Tensor) -> Tensor {
    map(t, kernels::sigmoid)
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: t.shape().to_vec(),
        data: t.data().iter().map(|&x| f(x)).collect(),
        grad: None,
    }
}

/// Softmax of a non-empty rank-1 tensor, computed with max subtraction.
pub fn softmax(t: &Tensor) -> Result<Tensor> {
    if t.rank() != 1 || t.is_empty() {
        return Err(Error::Shape(format!(
            "softmax expects a non-empty vector, got shape {:?}",
            t.shape()
        )));
    }
    let mut out = vec![0.0; t.len()];
    kernels::softmax_into(t.data(), &mut out);
    Ok(Tensor::from_vec(out))
}

pub fn l2_norm(t: &Tensor) -> f64 {
    kernels::norm(t.data())
}
