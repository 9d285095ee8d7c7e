use std::borrow::Cow;
use std::collections::BTreeMap;

use super::kernels::{self, ConvGeometry};
use super::ops::{conv_geometry, matmul_dims};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Index of a learnable tensor inside its owner's parameter list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Matmul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Conv2d {
        input: Var,
        kernels: Var,
        geometry: ConvGeometry,
        out_channels: usize,
        // im2col patches, kept only when gradients are recorded
        cols: Vec<f64>,
    },
    AddRowBias {
        input: Var,
        bias: Var,
        cols: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows {
        input: Var,
        cols: usize,
    },
    SquashRows {
        input: Var,
        dim: usize,
    },
    RowNorms {
        input: Var,
        dim: usize,
    },
    Sum(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gather {
        input: Var,
        index: Vec<usize>,
    },
    Reshape(Var),
    PoseTransform {
        poses: Var,
        weights: Var,
        parents: usize,
        out_dim: usize,
        in_dim: usize,
    },
    WeightedSum {
        couplings: Var,
        predictions: Var,
        children: usize,
        parents: usize,
        dim: usize,
    },
    Agreement {
        outputs: Var,
        predictions: Var,
        children: usize,
        parents: usize,
        dim: usize,
    },
    MarginLoss {
        norms: Var,
        label: usize,
        m_plus: f64,
        m_minus: f64,
        lambda: f64,
    },
    SquaredError {
        input: Var,
        target: Vec<f64>,
    },
    MaskRows {
        input: Var,
        keep: usize,
        dim: usize,
    },
}

struct Node<'p> {
    value: Cow<'p, [f64]>,
    shape: Vec<usize>,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation so that [`Tape::backward`] can replay it in
/// reverse. Parameters are borrowed, not copied, for the lifetime `'p`.
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    record_grad: bool,
}

/// Parameter gradients produced by one backward pass.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    by_param: BTreeMap<ParamId, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.by_param.get(&id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.by_param.iter().map(|(id, g)| (*id, g.as_slice()))
    }

    /// Adds every gradient into `params[id].grad`.
    pub fn accumulate_into(&self, params: &mut [Tensor]) -> Result<()> {
        for (id, g) in &self.by_param {
            let p = params
                .get_mut(id.0)
                .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter {}", id.0)))?;
            p.accumulate_grad(g)?;
        }
        Ok(())
    }
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    /// A tape that records everything needed for `backward`.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            record_grad: true,
        }
    }

    /// A tape for inference only: nothing requires gradients and no
    /// backward-only buffers are kept.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            record_grad: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, [f64]>, shape: Vec<usize>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        self.nodes.push(Node {
            value,
            shape,
            op,
            requires_grad: requires_grad && self.record_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_derived(&mut self, value: Vec<f64>, shape: Vec<usize>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), shape, op, requires_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(Cow::Owned(t.into_data()), shape, Op::Leaf, false)
    }

    pub fn param(&mut self, t: &'p Tensor, id: ParamId) -> Var {
        self.push(Cow::Borrowed(t.data()), t.shape().to_vec(), Op::Param(id), true)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("tape nodes always hold consistent shapes")
    }

    /// The value of a single-element node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        match self.value(v) {
            [x] => Ok(*x),
            other => Err(Error::Contract(format!(
                "expected a scalar, found {} elements",
                other.len()
            ))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n) = matmul_dims(self.shape(a), self.shape(b))?;
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, 1.0, self.value(a), false, self.value(b), false, 0.0, &mut out);
        Ok(self.push_derived(out, vec![m, n], Op::Matmul { a, b, m, k, n }, &[a, b]))
    }

    pub fn conv2d(&mut self, input: Var, kernels: Var, stride: usize) -> Result<Var> {
        let geometry = conv_geometry(self.shape(input), self.shape(kernels), stride)?;
        let out_channels = self.shape(kernels)[0];
        let mut cols = vec![0.0; geometry.patch_len() * geometry.positions()];
        kernels::im2col(self.value(input), &geometry, &mut cols);
        let mut out = vec![0.0; out_channels * geometry.positions()];
        kernels::gemm(
            out_channels,
            geometry.patch_len(),
            geometry.positions(),
            1.0,
            self.value(kernels),
            false,
            &cols,
            false,
            0.0,
            &mut out,
        );
        let needs_grad = self.nodes[input.0].requires_grad || self.nodes[kernels.0].requires_grad;
        if !needs_grad {
            cols = Vec::new();
        }
        let shape = vec![out_channels, geometry.out_h, geometry.out_w];
        let op = Op::Conv2d {
            input,
            kernels,
            geometry,
            out_channels,
            cols,
        };
        Ok(self.push_derived(out, shape, op, &[input, kernels]))
    }

    /// Adds `bias[r]` to every element of row `r`, where rows run along the
    /// first axis of `input`.
    pub fn add_row_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let rows = shape[0];
        if self.shape(bias) != [rows] {
            return Err(Error::Shape(format!(
                "bias {:?} does not match leading dimension of {shape:?}",
                self.shape(bias)
            )));
        }
        let cols = self.value(input).len() / rows;
        let mut out = self.value(input).to_vec();
        for (row, &b) in out.chunks_mut(cols).zip(self.value(bias)) {
            row.iter_mut().for_each(|x| *x += b);
        }
        Ok(self.push_derived(out, shape, Op::AddRowBias { input, bias, cols }, &[input, bias]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        self.push_derived(out, shape, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| kernels::sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push_derived(out, shape, Op::Sigmoid(x), &[x])
    }

    /// Softmax of a non-empty vector.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        match *self.shape(x) {
            [n] if n > 0 => self.softmax_impl(x, n),
            ref s => Err(Error::Shape(format!("softmax expects a vector, got {s:?}"))),
        }
    }

    /// Softmax over the last axis of a matrix, row by row.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        match *self.shape(x) {
            [_, n] => self.softmax_impl(x, n),
            ref s => Err(Error::Shape(format!("softmax_rows expects a matrix, got {s:?}"))),
        }
    }

    fn softmax_impl(&mut self, x: Var, cols: usize) -> Result<Var> {
        let src = self.value(x);
        let mut out = vec![0.0; src.len()];
        for (s, d) in src.chunks(cols).zip(out.chunks_mut(cols)) {
            kernels::softmax_into(s, d);
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push_derived(out, shape, Op::SoftmaxRows { input: x, cols }, &[x]))
    }

    /// Applies squash to each row of a matrix.
    pub fn squash_rows(&mut self, x: Var) -> Result<Var> {
        let [_, dim] = *self.shape(x) else {
            return Err(Error::Shape(format!(
                "squash_rows expects a matrix, got {:?}",
                self.shape(x)
            )));
        };
        let src = self.value(x);
        let mut out = vec![0.0; src.len()];
        for (s, d) in src.chunks(dim).zip(out.chunks_mut(dim)) {
            kernels::squash_into(s, d);
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push_derived(out, shape, Op::SquashRows { input: x, dim }, &[x]))
    }

    /// Euclidean length of each row of a matrix.
    pub fn row_norms(&mut self, x: Var) -> Result<Var> {
        let [rows, dim] = *self.shape(x) else {
            return Err(Error::Shape(format!(
                "row_norms expects a matrix, got {:?}",
                self.shape(x)
            )));
        };
        let out = self.value(x).chunks(dim).map(kernels::norm).collect();
        Ok(self.push_derived(out, vec![rows], Op::RowNorms { input: x, dim }, &[x]))
    }

    /// Euclidean length of the whole tensor, as a scalar node.
    pub fn l2_norm(&mut self, x: Var) -> Var {
        let dim = self.value(x).len();
        let out = vec![kernels::norm(self.value(x))];
        self.push_derived(out, vec![1], Op::RowNorms { input: x, dim }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push_derived(vec![s], vec![1], Op::Sum(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "add")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push_derived(out, shape, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "mul")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push_derived(out, shape, Op::Mul(a, b), &[a, b]))
    }

    fn same_len(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).len() == self.value(b).len() {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what} of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )))
        }
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        self.push_derived(out, shape, Op::Scale(x, factor), &[x])
    }

    /// `out[k] = input[index[k]]`, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let src = self.value(x);
        if index.len() != shape.iter().product::<usize>() || index.iter().any(|&i| i >= src.len()) {
            return Err(Error::Shape(format!(
                "gather of {} indices into {shape:?} from {:?}",
                index.len(),
                self.shape(x)
            )));
        }
        let out = index.iter().map(|&i| src[i]).collect();
        Ok(self.push_derived(out, shape, Op::Gather { input: x, index }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape(x)
            )));
        }
        let out = self.value(x).to_vec();
        Ok(self.push_derived(out, shape, Op::Reshape(x), &[x]))
    }

    /// Per-pair pose predictions: `out[i, j] = weights[i, j] . poses[i]` for
    /// poses `[K x d_in]` and weights `[K x C x d_out x d_in]`.
    pub fn pose_transform(&mut self, poses: Var, weights: Var) -> Result<Var> {
        let (&[children, in_dim], &[wc, parents, out_dim, win]) = (self.shape(poses), self.shape(weights)) else {
            return Err(Error::Shape(format!(
                "pose_transform expects poses [K,d_in] and weights [K,C,d_out,d_in], got {:?} and {:?}",
                self.shape(poses),
                self.shape(weights)
            )));
        };
        if wc != children || win != in_dim {
            return Err(Error::Shape(format!(
                "pose_transform weights {:?} do not match poses {:?}",
                self.shape(weights),
                self.shape(poses)
            )));
        }
        let u = self.value(poses);
        let w = self.value(weights);
        let mut out = vec![0.0; children * parents * out_dim];
        for i in 0..children {
            let ui = &u[i * in_dim..(i + 1) * in_dim];
            for j in 0..parents {
                let wij = &w[(i * parents + j) * out_dim * in_dim..][..out_dim * in_dim];
                let dst = &mut out[(i * parents + j) * out_dim..][..out_dim];
                for (o, d) in dst.iter_mut().enumerate() {
                    *d = kernels::dot(&wij[o * in_dim..(o + 1) * in_dim], ui);
                }
            }
        }
        let op = Op::PoseTransform {
            poses,
            weights,
            parents,
            out_dim,
            in_dim,
        };
        Ok(self.push_derived(out, vec![children, parents, out_dim], op, &[poses, weights]))
    }

    /// `out[j] = sum_i couplings[i, j] * predictions[i, j]`.
    pub fn weighted_sum(&mut self, couplings: Var, predictions: Var) -> Result<Var> {
        let (children, parents, dim) = self.routing_dims(couplings, predictions)?;
        let c = self.value(couplings);
        let p = self.value(predictions);
        let mut out = vec![0.0; parents * dim];
        for i in 0..children {
            for j in 0..parents {
                let cij = c[i * parents + j];
                let pij = &p[(i * parents + j) * dim..][..dim];
                for (o, &x) in out[j * dim..(j + 1) * dim].iter_mut().zip(pij) {
                    *o += cij * x;
                }
            }
        }
        let op = Op::WeightedSum {
            couplings,
            predictions,
            children,
            parents,
            dim,
        };
        Ok(self.push_derived(out, vec![parents, dim], op, &[couplings, predictions]))
    }

    /// `out[i, j] = <outputs[j], predictions[i, j]>`.
    pub fn agreement(&mut self, outputs: Var, predictions: Var) -> Result<Var> {
        let [children, parents, dim] = *self.shape(predictions) else {
            return Err(Error::Shape(format!(
                "agreement expects predictions [K,C,d], got {:?}",
                self.shape(predictions)
            )));
        };
        if self.shape(outputs) != [parents, dim] {
            return Err(Error::Shape(format!(
                "agreement outputs {:?} do not match predictions {:?}",
                self.shape(outputs),
                self.shape(predictions)
            )));
        }
        let h = self.value(outputs);
        let p = self.value(predictions);
        let mut out = vec![0.0; children * parents];
        for i in 0..children {
            for j in 0..parents {
                out[i * parents + j] = kernels::dot(&h[j * dim..(j + 1) * dim], &p[(i * parents + j) * dim..][..dim]);
            }
        }
        let op = Op::Agreement {
            outputs,
            predictions,
            children,
            parents,
            dim,
        };
        Ok(self.push_derived(out, vec![children, parents], op, &[outputs, predictions]))
    }

    fn routing_dims(&self, couplings: Var, predictions: Var) -> Result<(usize, usize, usize)> {
        match (self.shape(couplings), self.shape(predictions)) {
            (&[k, c], &[k2, c2, d]) if k == k2 && c == c2 => Ok((k, c, d)),
            (a, b) => Err(Error::Shape(format!("couplings {a:?} do not match predictions {b:?}"))),
        }
    }

    /// Margin loss over capsule lengths `norms` for the true class `label`.
    pub fn margin_loss(&mut self, norms: Var, label: usize, m_plus: f64, m_minus: f64, lambda: f64) -> Result<Var> {
        let v = self.value(norms);
        if label >= v.len() {
            return Err(Error::Contract(format!(
                "label {label} out of range for {} classes",
                v.len()
            )));
        }
        let loss = v
            .iter()
            .enumerate()
            .map(|(c, &n)| {
                if c == label {
                    (m_plus - n).max(0.0).powi(2)
                } else {
                    lambda * (n - m_minus).max(0.0).powi(2)
                }
            })
            .sum();
        let op = Op::MarginLoss {
            norms,
            label,
            m_plus,
            m_minus,
            lambda,
        };
        Ok(self.push_derived(vec![loss], vec![1], op, &[norms]))
    }

    /// Sum of squared differences between `x` and a fixed target.
    pub fn squared_error(&mut self, x: Var, target: &[f64]) -> Result<Var> {
        if target.len() != self.value(x).len() {
            return Err(Error::Shape(format!(
                "squared_error target of length {} for {:?}",
                target.len(),
                self.shape(x)
            )));
        }
        let sse = self.value(x).iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
        let op = Op::SquaredError {
            input: x,
            target: target.to_vec(),
        };
        Ok(self.push_derived(vec![sse], vec![1], op, &[x]))
    }

    /// Flattens a `[C x d]` matrix with every row except `keep` zeroed.
    pub fn mask_rows(&mut self, x: Var, keep: usize) -> Result<Var> {
        let [rows, dim] = *self.shape(x) else {
            return Err(Error::Shape(format!(
                "mask_rows expects a matrix, got {:?}",
                self.shape(x)
            )));
        };
        if keep >= rows {
            return Err(Error::Contract(format!(
                "mask index {keep} out of range for {rows} rows"
            )));
        }
        let mut out = vec![0.0; rows * dim];
        out[keep * dim..(keep + 1) * dim].copy_from_slice(&self.value(x)[keep * dim..(keep + 1) * dim]);
        Ok(self.push_derived(out, vec![rows * dim], Op::MaskRows { input: x, keep, dim }, &[x]))
    }

    /// Reverse pass from a scalar node. Returns the gradient of `loss` with
    /// respect to every parameter that contributed to it.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let mut params: Vec<Vec<f64>> = Vec::new();
        for node in &self.nodes[..=loss.0.min(self.nodes.len().saturating_sub(1))] {
            if let Op::Param(id) = node.op {
                if params.len() <= id.0 {
                    params.resize_with(id.0 + 1, Vec::new);
                }
                params[id.0] = vec![0.0; node.value.len()];
            }
        }
        self.backward_into(loss, &mut params)?;
        let by_param = params
            .into_iter()
            .enumerate()
            .filter(|(_, g)| !g.is_empty())
            .map(|(i, g)| (ParamId(i), g))
            .collect();
        Ok(Gradients { by_param })
    }

    /// Reverse pass that adds parameter gradients straight into
    /// `params[id]`, which must be sized like the parameter. Avoids
    /// allocating per-call gradient buffers for large weights.
    pub fn backward_into(&self, loss: Var, params: &mut [Vec<f64>]) -> Result<()> {
        if loss.0 >= self.nodes.len() || self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes.get(loss.0).map(|n| n.shape.as_slice())
            )));
        }
        if !self.record_grad {
            return Err(Error::Contract("backward on an inference-only tape".into()));
        }
        for node in &self.nodes[..=loss.0] {
            if let Op::Param(id) = node.op {
                match params.get(id.0) {
                    Some(buf) if buf.len() == node.value.len() => {}
                    _ => {
                        return Err(Error::Contract(format!(
                            "no gradient buffer of length {} for parameter {}",
                            node.value.len(),
                            id.0
                        )))
                    }
                }
            }
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);
        if let Op::Param(id) = self.nodes[loss.0].op {
            params[id.0][0] += 1.0;
        }

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads, params);
        }
        Ok(())
    }

    fn grad_slot<'g>(
        &self,
        grads: &'g mut [Option<Vec<f64>>],
        params: &'g mut [Vec<f64>],
        v: Var,
    ) -> Option<&'g mut [f64]> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        if let Op::Param(id) = node.op {
            return Some(&mut params[id.0]);
        }
        let len = node.value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn propagate(&self, node: &Node<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>], params: &mut [Vec<f64>]) {
        let y = &node.value[..];
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            &Op::Matmul { a, b, m, k, n } => {
                if let Some(da) = self.grad_slot(grads, params, a) {
                    kernels::gemm(m, n, k, 1.0, g, false, self.value(b), true, 1.0, da);
                }
                if let Some(db) = self.grad_slot(grads, params, b) {
                    kernels::gemm(k, m, n, 1.0, self.value(a), true, g, false, 1.0, db);
                }
            }
            Op::Conv2d {
                input,
                kernels: kern,
                geometry,
                out_channels,
                cols,
            } => {
                let (q, p) = (geometry.patch_len(), geometry.positions());
                if let Some(dk) = self.grad_slot(grads, params, *kern) {
                    kernels::gemm(*out_channels, p, q, 1.0, g, false, cols, true, 1.0, dk);
                }
                if self.nodes[input.0].requires_grad {
                    let mut dcols = vec![0.0; q * p];
                    kernels::gemm(
                        q,
                        *out_channels,
                        p,
                        1.0,
                        self.value(*kern),
                        true,
                        g,
                        false,
                        0.0,
                        &mut dcols,
                    );
                    let dx = self.grad_slot(grads, params, *input).expect("requires_grad checked");
                    kernels::col2im_add(&dcols, geometry, dx);
                }
            }
            &Op::AddRowBias { input, bias, cols } => {
                if let Some(dx) = self.grad_slot(grads, params, input) {
                    dx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
                if let Some(db) = self.grad_slot(grads, params, bias) {
                    for (d, row) in db.iter_mut().zip(g.chunks(cols)) {
                        *d += row.iter().sum::<f64>();
                    }
                }
            }
            &Op::Relu(x) => {
                if let Some(dx) = self.grad_slot(grads, params, x) {
                    for ((d, &gi), &yi) in dx.iter_mut().zip(g).zip(y) {
                        if yi > 0.0 {
                            *d += gi;
                        }
                    }
                }
            }
            &Op::Sigmoid(x) => {
                if let Some(dx) = self.grad_slot(grads, params, x) {
                    for ((d, &gi), &yi) in dx.iter_mut().zip(g).zip(y) {
                        *d += gi * yi * (1.0 - yi);
                    }
                }
            }
            &Op::SoftmaxRows { input, cols } => {
                if let Some(dx) = self.grad_slot(grads, params, input) {
                    for ((drow, grow), yrow) in dx.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                        let inner = kernels::dot(grow, yrow);
                        for ((d, &gi), &yi) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += yi * (gi - inner);
                        }
                    }
                }
            }
            &Op::SquashRows { input, dim } => {
                let s = self.value(input);
                if let Some(dx) = self.grad_slot(grads, params, input) {
                    for ((drow, grow), srow) in dx.chunks_mut(dim).zip(g.chunks(dim)).zip(s.chunks(dim)) {
                        kernels::squash_backward(srow, grow, drow);
                    }
                }
            }
            &Op::RowNorms { input, dim } => {
                let s = self.value(input);
                if let Some(dx) = self.grad_slot(grads, params, input) {
                    for (((drow, &gi), srow), &n) in dx.chunks_mut(dim).zip(g).zip(s.chunks(dim)).zip(y) {
                        if n > 0.0 {
                            for (d, &x) in drow.iter_mut().zip(srow) {
                                *d += gi * x / n;
                            }
                        }
                    }
                }
            }
            &Op::Sum(x) => {
                if let Some(dx) = self.grad_slot(grads, params, x) {
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(dv) = self.grad_slot(grads, params, v) {
                        dv.iter_mut().zip(g).for_each(|(d, gi)| *d += gi);
                    }
                }
            }
            &Op::Mul(a, b) => {
                for (v, other) in [(a, b), (b, a)] {
                    let o = self.value(other);
                    if let Some(dv) = self.grad_slot(grads, params, v) {
                        for ((d, gi), oi) in dv.iter_mut().zip(g).zip(o) {
                            *d += gi * oi;
                        }
                    }
                }
            }
            &Op::Scale(x, factor) => {
                if let Some(dx) = self.grad_slot(grads, params, x) {
                    dx.iter_mut().zip(g).for_each(|(d, gi)| *d += gi * factor);
                }
            }
            Op::Gather { input, index } => {
                if let Some(dx) = self.grad_slot(grads, params, *input) {
                    for (&i, gi) in index.iter().zip(g) {
                        dx[i] += gi;
                    }
                }
            }
            &Op::Reshape(x) => {
                if let Some(dx) = self.grad_slot(grads, params, x) {
                    dx.iter_mut().zip(g).for_each(|(d, gi)| *d += gi);
                }
            }
            &Op::PoseTransform {
                poses,
                weights,
                parents,
                out_dim,
                in_dim,
            } => {
                let u = self.value(poses);
                let w = self.value(weights);
                let children = u.len() / in_dim;
                if let Some(dw) = self.grad_slot(grads, params, weights) {
                    for i in 0..children {
                        let ui = &u[i * in_dim..(i + 1) * in_dim];
                        for j in 0..parents {
                            let gij = &g[(i * parents + j) * out_dim..][..out_dim];
                            let dwij = &mut dw[(i * parents + j) * out_dim * in_dim..][..out_dim * in_dim];
                            for (o, &go) in gij.iter().enumerate() {
                                for (d, &x) in dwij[o * in_dim..(o + 1) * in_dim].iter_mut().zip(ui) {
                                    *d += go * x;
                                }
                            }
                        }
                    }
                }
                if let Some(du) = self.grad_slot(grads, params, poses) {
                    for i in 0..children {
                        let dui = &mut du[i * in_dim..(i + 1) * in_dim];
                        for j in 0..parents {
                            let gij = &g[(i * parents + j) * out_dim..][..out_dim];
                            let wij = &w[(i * parents + j) * out_dim * in_dim..][..out_dim * in_dim];
                            for (o, &go) in gij.iter().enumerate() {
                                for (d, &x) in dui.iter_mut().zip(&wij[o * in_dim..(o + 1) * in_dim]) {
                                    *d += go * x;
                                }
                            }
                        }
                    }
                }
            }
            &Op::WeightedSum {
                couplings,
                predictions,
                children,
                parents,
                dim,
            } => {
                let c = self.value(couplings);
                let p = self.value(predictions);
                if let Some(dc) = self.grad_slot(grads, params, couplings) {
                    for i in 0..children {
                        for j in 0..parents {
                            dc[i * parents + j] +=
                                kernels::dot(&g[j * dim..(j + 1) * dim], &p[(i * parents + j) * dim..][..dim]);
                        }
                    }
                }
                if let Some(dp) = self.grad_slot(grads, params, predictions) {
                    for i in 0..children {
                        for j in 0..parents {
                            let cij = c[i * parents + j];
                            for (d, &gj) in dp[(i * parents + j) * dim..][..dim]
                                .iter_mut()
                                .zip(&g[j * dim..(j + 1) * dim])
                            {
                                *d += cij * gj;
                            }
                        }
                    }
                }
            }
            &Op::Agreement {
                outputs,
                predictions,
                children,
                parents,
                dim,
            } => {
                let h = self.value(outputs);
                let p = self.value(predictions);
                if let Some(dh) = self.grad_slot(grads, params, outputs) {
                    for i in 0..children {
                        for j in 0..parents {
                            let gij = g[i * parents + j];
                            for (d, &x) in dh[j * dim..(j + 1) * dim]
                                .iter_mut()
                                .zip(&p[(i * parents + j) * dim..][..dim])
                            {
                                *d += gij * x;
                            }
                        }
                    }
                }
                if let Some(dp) = self.grad_slot(grads, params, predictions) {
                    for i in 0..children {
                        for j in 0..parents {
                            let gij = g[i * parents + j];
                            for (d, &x) in dp[(i * parents + j) * dim..][..dim]
                                .iter_mut()
                                .zip(&h[j * dim..(j + 1) * dim])
                            {
                                *d += gij * x;
                            }
                        }
                    }
                }
            }
            &Op::MarginLoss {
                norms,
                label,
                m_plus,
                m_minus,
                lambda,
            } => {
                let v = self.value(norms);
                if let Some(dn) = self.grad_slot(grads, params, norms) {
                    for (c, (d, &n)) in dn.iter_mut().zip(v).enumerate() {
                        *d += g[0]
                            * if c == label {
                                -2.0 * (m_plus - n).max(0.0)
                            } else {
                                2.0 * lambda * (n - m_minus).max(0.0)
                            };
                    }
                }
            }
            Op::SquaredError { input, target } => {
                let x = self.value(*input);
                if let Some(dx) = self.grad_slot(grads, params, *input) {
                    for ((d, &xi), &ti) in dx.iter_mut().zip(x).zip(target) {
                        *d += 2.0 * g[0] * (xi - ti);
                    }
                }
            }
            &Op::MaskRows { input, keep, dim } => {
                if let Some(dx) = self.grad_slot(grads, params, input) {
                    for (d, &gi) in dx[keep * dim..(keep + 1) * dim]
                        .iter_mut()
                        .zip(&g[keep * dim..(keep + 1) * dim])
                    {
                        *d += gi;
                    }
                }
            }
        }
    }
}
