use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

pub(crate) enum Op<T> {
    Leaf {
        param: Option<ParamId>,
    },
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Conv2d {
        x: Var,
        kernel: Var,
        stride: usize,
        padding: usize,
        cols: Vec<T>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    GlobalAvgPool(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    CausalMask(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        ignore_index: usize,
        probs: Vec<T>,
        count: usize,
    },
    Sum(Var),
    Mean(Var),
}

pub(crate) struct Node<T> {
    pub(crate) tensor: Tensor<T>,
    pub(crate) op: Op<T>,
}

/// Records forward computation for reverse-mode differentiation.
///
/// Execution is single-threaded and deterministic: identical inputs give
/// bit-identical values and gradients.
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input; it participates in backward iff `requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        self.push(tensor, Op::Leaf { param: None })
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.push(tensor.with_requires_grad(false), Op::Leaf { param: None })
    }

    /// Binds a stored parameter as a leaf; its gradient can later be flushed
    /// back with [`Tape::flush_param_grads`].
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = &store.param(id).tensor;
        let mut t = Tensor::new(p.shape(), p.values().to_vec()).expect("stored tensor is valid");
        t.set_requires_grad(p.requires_grad());
        self.push(t, Op::Leaf { param: Some(id) })
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].tensor
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].tensor.shape()
    }

    pub fn values(&self, v: Var) -> &[T] {
        self.nodes[v.0].tensor.values()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].tensor.grad()
    }

    /// Sign pattern of every ReLU input on the tape, in recording order.
    /// Two evaluations with equal patterns lie on the same linear piece.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                out.extend(self.values(x).iter().map(|&v| v > T::zero()));
            }
        }
        out
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].tensor.requires_grad()
    }

    pub fn reset_grads(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.tensor.reset_grad());
    }

    pub(crate) fn push(&mut self, tensor: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { tensor, op });
        Var(self.nodes.len() - 1)
    }

    /// Pushes a computed result whose gradient requirement is inherited from `inputs`.
    pub(crate) fn push_result(
        &mut self,
        shape: &[usize],
        values: Vec<T>,
        inputs: &[Var],
        op: Op<T>,
    ) -> Result<Var> {
        let rg = inputs.iter().any(|&v| self.requires_grad(v));
        let t = Tensor::new(shape, values)?.with_requires_grad(rg);
        Ok(self.push(t, op))
    }

    /// Backpropagates from a scalar `loss`, adding into every reachable
    /// gradient buffer. Repeated calls accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let numel = self.value(loss).numel();
        if numel != 1 {
            return Err(Error::dim(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].tensor.requires_grad() {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            self.nodes[i].tensor.accumulate_grad(&g);
        }
        Ok(())
    }

    /// Moves gradients of parameter leaves into `store`, leaving the leaves cleared.
    pub fn flush_param_grads(&mut self, store: &mut ParamStore<T>) {
        for node in &mut self.nodes {
            if let Op::Leaf { param: Some(id) } = node.op {
                if let Some(g) = node.tensor.grad() {
                    store.param_mut(id).tensor.accumulate_grad(g);
                }
                node.tensor.reset_grad();
            }
        }
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &self.nodes[i].op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, |d| add_into(d, g));
                self.acc(grads, *b, |d| add_into(d, g));
            }
            Op::AddBias(x, b) => {
                self.acc(grads, *x, |d| add_into(d, g));
                let n = self.value(*b).numel();
                self.acc(grads, *b, |d| {
                    for row in g.chunks_exact(n) {
                        add_into(d, row);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.values(*a), self.values(*b));
                self.acc(grads, *a, |d| {
                    d.iter_mut().zip(g).zip(bv).for_each(|((d, &g), &b)| *d += g * b)
                });
                self.acc(grads, *b, |d| {
                    d.iter_mut().zip(g).zip(av).for_each(|((d, &g), &a)| *d += g * a)
                });
            }
            Op::Scale(x, s) => {
                let s = *s;
                self.acc(grads, *x, |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * s));
            }
            Op::Relu(x) => {
                let xv = self.values(*x);
                self.acc(grads, *x, |d| {
                    for ((d, &g), &x) in d.iter_mut().zip(g).zip(xv) {
                        if x > T::zero() {
                            *d += g;
                        }
                    }
                });
            }
            Op::MatMul(a, b) => self.matmul_backward(*a, *b, g, grads),
            Op::Transpose(x) => {
                let (r, c) = self.value(*x).dims2().expect("2-D");
                self.acc(grads, *x, |d| {
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Reshape(x) => self.acc(grads, *x, |d| add_into(d, g)),
            Op::SliceCols { x, start } => {
                let (r, c) = self.value(*x).dims2().expect("2-D");
                let w = g.len() / r;
                self.acc(grads, *x, |d| {
                    for i in 0..r {
                        add_into(&mut d[i * c + start..i * c + start + w], &g[i * w..(i + 1) * w]);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total: usize = self.nodes[i].tensor.shape()[1];
                let mut off = 0;
                for &p in parts {
                    let (r, w) = self.value(p).dims2().expect("2-D");
                    self.acc(grads, p, |d| {
                        for row in 0..r {
                            add_into(
                                &mut d[row * w..(row + 1) * w],
                                &g[row * total + off..row * total + off + w],
                            );
                        }
                    });
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    self.acc(grads, p, |d| add_into(d, &g[off..off + n]));
                    off += n;
                }
            }
            Op::Gather { table, ids } => {
                let width = self.value(*table).shape()[1];
                self.acc(grads, *table, |d| {
                    for (row, &id) in ids.iter().enumerate() {
                        add_into(&mut d[id * width..(id + 1) * width], &g[row * width..(row + 1) * width]);
                    }
                });
            }
            Op::Conv2d {
                x,
                kernel,
                stride,
                padding,
                cols,
            } => self.conv2d_backward(*x, *kernel, *stride, *padding, cols, g, grads),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => self.batch_norm_backward(*x, *gamma, *beta, xhat, inv_std, *train, g, grads),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => self.layer_norm_backward(*x, *gamma, *beta, xhat, inv_std, g, grads),
            Op::GlobalAvgPool(x) => {
                let (_, _, h, w) = self.value(*x).dims4().expect("4-D");
                let hw = h * w;
                let inv = T::one() / T::from_usize(hw).expect("usize");
                self.acc(grads, *x, |d| {
                    for (plane, &g) in d.chunks_exact_mut(hw).zip(g) {
                        plane.iter_mut().for_each(|d| *d += g * inv);
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let y = self.nodes[i].tensor.values();
                let (outer, len, inner) = axis_layout(self.value(*x).shape(), *axis);
                self.acc(grads, *x, |d| {
                    for o in 0..outer {
                        for k in 0..inner {
                            let base = o * len * inner + k;
                            let mut dot = T::zero();
                            for a in 0..len {
                                let idx = base + a * inner;
                                dot += g[idx] * y[idx];
                            }
                            for a in 0..len {
                                let idx = base + a * inner;
                                d[idx] += y[idx] * (g[idx] - dot);
                            }
                        }
                    }
                });
            }
            Op::CausalMask(x) => {
                let (r, c) = self.value(*x).dims2().expect("2-D");
                self.acc(grads, *x, |d| {
                    for row in 0..r {
                        let keep = (row + 1).min(c);
                        add_into(&mut d[row * c..row * c + keep], &g[row * c..row * c + keep]);
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                ignore_index,
                probs,
                count,
            } => {
                let v = self.value(*logits).shape()[1];
                let scale = g[0] / T::from_usize(*count).expect("usize");
                self.acc(grads, *logits, |d| {
                    for (row, &t) in targets.iter().enumerate() {
                        if t == *ignore_index {
                            continue;
                        }
                        let p = &probs[row * v..(row + 1) * v];
                        let dr = &mut d[row * v..(row + 1) * v];
                        for (d, &p) in dr.iter_mut().zip(p) {
                            *d += p * scale;
                        }
                        dr[t] -= scale;
                    }
                });
            }
            Op::Sum(x) => {
                let g0 = g[0];
                self.acc(grads, *x, |d| d.iter_mut().for_each(|d| *d += g0));
            }
            Op::Mean(x) => {
                let n = T::from_usize(self.value(*x).numel()).expect("usize");
                let g0 = g[0] / n;
                self.acc(grads, *x, |d| d.iter_mut().for_each(|d| *d += g0));
            }
        }
    }

    /// Runs `f` on the gradient slot of `v`, allocating zeros first; skipped
    /// when `v` does not require a gradient.
    pub(crate) fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.requires_grad(v) {
            return;
        }
        let n = self.value(v).numel();
        let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
        f(slot);
    }
}

pub(crate) fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

/// `(outer, axis_len, inner)` strides for reducing along `axis`.
pub(crate) fn axis_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
