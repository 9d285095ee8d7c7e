//! Slice-level numeric kernels shared by the functional ops and the tape.

/// `c = alpha * op(a) * op(b) + beta * c` with `op(a)` of shape `m x k` and
/// `op(b)` of shape `k x n`. A transposed operand is stored in its untransposed
/// row-major layout and read through strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: lengths asserted above; strides describe in-bounds row-major
    // layouts of exactly those lengths and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds `input` (`cin x h x w`) into a `(cin*kh*kw) x (oh*ow)` patch matrix.
pub(crate) fn im2col(input: &[f64], g: &ConvGeometry, cols: &mut [f64]) {
    let positions = g.positions();
    debug_assert_eq!(cols.len(), g.patch_len() * positions);
    for ci in 0..g.in_channels {
        let plane = &input[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (ci * g.kernel_h + ky) * g.kernel_w + kx;
                let dst = &mut cols[row * positions..(row + 1) * positions];
                for oy in 0..g.out_h {
                    let src_row = &plane[(oy * g.stride + ky) * g.width..];
                    let dst_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if g.stride == 1 {
                        dst_row.copy_from_slice(&src_row[kx..kx + g.out_w]);
                    } else {
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            *d = src_row[ox * g.stride + kx];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch-matrix gradients back onto the input.
pub(crate) fn col2im_add(cols: &[f64], g: &ConvGeometry, input_grad: &mut [f64]) {
    let positions = g.positions();
    for ci in 0..g.in_channels {
        let plane = &mut input_grad[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (ci * g.kernel_h + ky) * g.kernel_w + kx;
                let src = &cols[row * positions..(row + 1) * positions];
                for oy in 0..g.out_h {
                    let base = (oy * g.stride + ky) * g.width + kx;
                    for ox in 0..g.out_w {
                        plane[base + ox * g.stride] += src[oy * g.out_w + ox];
                    }
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of `src` into `dst`.
pub(crate) fn softmax_into(src: &[f64], dst: &mut [f64]) {
    let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = (s - max).exp();
        total += *d;
    }
    for d in dst.iter_mut() {
        *d /= total;
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Guard on the unit-vector division inside squash.
pub(crate) const SQUASH_EPS: f64 = 1e-12;

/// Writes `squash(s) = |s|^2 / (1 + |s|^2) * s / (|s| + eps)` into `out`.
pub(crate) fn squash_into(s: &[f64], out: &mut [f64]) {
    let n = norm(s);
    let n2 = n * n;
    let scale = n2 / (1.0 + n2) / (n + SQUASH_EPS);
    for (o, &x) in out.iter_mut().zip(s) {
        *o = scale * x;
    }
}

/// Vector-Jacobian product of [`squash_into`]: accumulates `J^T upstream` into `grad_s`.
pub(crate) fn squash_backward(s: &[f64], upstream: &[f64], grad_s: &mut [f64]) {
    let n = norm(s);
    let n2 = n * n;
    let denom = n + SQUASH_EPS;
    let a = n2 / (1.0 + n2);
    let q = a / denom;
    let projected = if n > 0.0 {
        let da = 2.0 * n / ((1.0 + n2) * (1.0 + n2));
        let dq = da / denom - a / (denom * denom);
        dq * dot(s, upstream) / n
    } else {
        0.0
    };
    for ((g, &u), &x) in grad_s.iter_mut().zip(upstream).zip(s) {
        *g += q * u + projected * x;
    }
}
