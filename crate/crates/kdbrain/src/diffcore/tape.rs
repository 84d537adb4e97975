//! Recording tape for reverse-mode differentiation.
//!
//! Every forward operation appends one record; records only ever reference
//! earlier records, so the tape is a topologically sorted DAG and a single
//! reverse sweep propagates adjoints with each record visited exactly once.

use crate::diffcore::tensor::Tensor;
use crate::error::{KdError, Result};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ValueId(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul {
        lhs: ValueId,
        rhs: ValueId,
    },
    Transpose {
        input: ValueId,
    },
    Add {
        lhs: ValueId,
        rhs: ValueId,
    },
    Mul {
        lhs: ValueId,
        rhs: ValueId,
    },
    Scale {
        input: ValueId,
        factor: T,
    },
    LeakyRelu {
        input: ValueId,
        slope: T,
    },
    SoftmaxRows {
        input: ValueId,
    },
    MeanRows {
        input: ValueId,
    },
    SumAll {
        input: ValueId,
    },
    LogClamped {
        input: ValueId,
        eps: T,
    },
    ConcatRows {
        inputs: Vec<ValueId>,
    },
    Reshape {
        input: ValueId,
    },
    Select {
        input: ValueId,
        row: usize,
        col: usize,
    },
    CrossEntropyLogits {
        logits: ValueId,
        label: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Single-context recording tape. One tape per forward/backward pass;
/// values are immutable once recorded.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> ValueId {
        self.nodes.push(Node { value, op });
        ValueId(self.nodes.len() - 1)
    }

    /// Record an input value (parameter, data, or constant).
    pub fn leaf(&mut self, value: Tensor<T>) -> ValueId {
        self.push(value, Op::Leaf)
    }

    /// Value held at `id`.
    pub fn value(&self, id: ValueId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn matmul(&mut self, lhs: ValueId, rhs: ValueId) -> Result<ValueId> {
        let value = self.value(lhs).matmul(self.value(rhs))?;
        Ok(self.push(value, Op::MatMul { lhs, rhs }))
    }

    pub fn transpose(&mut self, input: ValueId) -> ValueId {
        let value = self.value(input).transpose();
        self.push(value, Op::Transpose { input })
    }

    pub fn add(&mut self, lhs: ValueId, rhs: ValueId) -> Result<ValueId> {
        let value = self.value(lhs).add(self.value(rhs))?;
        Ok(self.push(value, Op::Add { lhs, rhs }))
    }

    pub fn mul(&mut self, lhs: ValueId, rhs: ValueId) -> Result<ValueId> {
        let value = self.value(lhs).mul(self.value(rhs))?;
        Ok(self.push(value, Op::Mul { lhs, rhs }))
    }

    pub fn scale(&mut self, input: ValueId, factor: T) -> ValueId {
        let value = self.value(input).scale(factor);
        self.push(value, Op::Scale { input, factor })
    }

    /// Pointwise `x if x >= 0 else slope * x`. The derivative at exactly 0
    /// is taken as 1.
    pub fn leaky_relu(&mut self, input: ValueId, slope: T) -> ValueId {
        let value = self
            .value(input)
            .map(|v| if v >= T::zero() { v } else { slope * v });
        self.push(value, Op::LeakyRelu { input, slope })
    }

    /// Row-wise softmax, stabilized by subtracting the row maximum.
    pub fn softmax_rows(&mut self, input: ValueId) -> ValueId {
        let value = softmax_rows_value(self.value(input));
        self.push(value, Op::SoftmaxRows { input })
    }

    /// Column-wise mean over rows: m×n → 1×n.
    pub fn mean_rows(&mut self, input: ValueId) -> Result<ValueId> {
        let x = self.value(input);
        if x.rows() == 0 {
            return Err(KdError::validation("mean_rows on an empty tensor"));
        }
        let m = T::from_f64_lossy(x.rows() as f64);
        let mut out = Tensor::zeros(1, x.cols());
        for r in 0..x.rows() {
            for c in 0..x.cols() {
                out.set(0, c, out.get(0, c) + x.get(r, c));
            }
        }
        let value = out.scale(T::one() / m);
        Ok(self.push(value, Op::MeanRows { input }))
    }

    /// Sum of every entry, as a 1×1 tensor.
    pub fn sum(&mut self, input: ValueId) -> ValueId {
        let total = self.value(input).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::SumAll { input })
    }

    /// Pointwise `ln(max(x, eps))`; gradient is 1/x where x >= eps, 0 below.
    pub fn log_clamped(&mut self, input: ValueId, eps: T) -> ValueId {
        let value = self
            .value(input)
            .map(|v| if v >= eps { v.ln() } else { eps.ln() });
        self.push(value, Op::LogClamped { input, eps })
    }

    /// Stack tensors with equal column counts, in order, along the row axis.
    pub fn concat_rows(&mut self, inputs: &[ValueId]) -> Result<ValueId> {
        if inputs.is_empty() {
            return Err(KdError::validation("concat_rows needs at least one input"));
        }
        let cols = self.value(inputs[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &id in inputs {
            let t = self.value(id);
            if t.cols() != cols {
                return Err(KdError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: format!("{}x{}", rows, cols),
                    rhs: t.shape_string(),
                });
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push(
            value,
            Op::ConcatRows {
                inputs: inputs.to_vec(),
            },
        ))
    }

    /// Row-major reinterpretation to a new rectangular shape.
    pub fn reshape(&mut self, input: ValueId, rows: usize, cols: usize) -> Result<ValueId> {
        let value = self.value(input).reshaped(rows, cols)?;
        Ok(self.push(value, Op::Reshape { input }))
    }

    /// Extract one entry as a 1×1 tensor.
    pub fn select(&mut self, input: ValueId, row: usize, col: usize) -> Result<ValueId> {
        let x = self.value(input);
        if row >= x.rows() || col >= x.cols() {
            return Err(KdError::validation(format!(
                "select ({},{}) out of bounds for {}",
                row,
                col,
                x.shape_string()
            )));
        }
        let value = Tensor::scalar(x.get(row, col));
        Ok(self.push(value, Op::Select { input, row, col }))
    }

    /// `-log softmax(logits)[label]` for a 1×n logits row, stabilized with
    /// log-sum-exp.
    pub fn cross_entropy_logits(&mut self, logits: ValueId, label: usize) -> Result<ValueId> {
        let x = self.value(logits);
        if x.rows() != 1 {
            return Err(KdError::ShapeMismatch {
                op: "cross_entropy_logits",
                lhs: x.shape_string(),
                rhs: "1xn".to_string(),
            });
        }
        if label >= x.cols() {
            return Err(KdError::validation(format!(
                "label {} out of range for {} logits",
                label,
                x.cols()
            )));
        }
        let row = x.row_slice(0);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum_exp: T = row.iter().map(|&v| (v - max).exp()).sum();
        let loss = max + sum_exp.ln() - row[label];
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropyLogits { logits, label },
        ))
    }

    /// Reverse sweep from a scalar output. Returns one adjoint slot per
    /// recorded value; slots not reachable from the output stay empty.
    pub fn backward(&self, output: ValueId) -> Result<Gradients<T>> {
        let out_val = self.value(output);
        if out_val.shape() != (1, 1) {
            return Err(KdError::validation(format!(
                "backward requires a scalar output, got {}",
                out_val.shape_string()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul { lhs, rhs } => {
                    let a = self.value(*lhs);
                    let b = self.value(*rhs);
                    let da = g.matmul(&b.transpose())?;
                    let db = a.transpose().matmul(&g)?;
                    accumulate(&mut grads, *lhs, da);
                    accumulate(&mut grads, *rhs, db);
                }
                Op::Transpose { input } => {
                    accumulate(&mut grads, *input, g.transpose());
                }
                Op::Add { lhs, rhs } => {
                    accumulate(&mut grads, *lhs, g.clone());
                    accumulate(&mut grads, *rhs, g);
                }
                Op::Mul { lhs, rhs } => {
                    let da = g.mul(self.value(*rhs))?;
                    let db = g.mul(self.value(*lhs))?;
                    accumulate(&mut grads, *lhs, da);
                    accumulate(&mut grads, *rhs, db);
                }
                Op::Scale { input, factor } => {
                    accumulate(&mut grads, *input, g.scale(*factor));
                }
                Op::LeakyRelu { input, slope } => {
                    let x = self.value(*input);
                    let mut dx = g;
                    for (d, &v) in dx.data_mut().iter_mut().zip(x.data().iter()) {
                        if v < T::zero() {
                            *d = *d * *slope;
                        }
                    }
                    accumulate(&mut grads, *input, dx);
                }
                Op::SoftmaxRows { input } => {
                    // dX[r,:] = S[r,:] ⊙ (g[r,:] - <g[r,:], S[r,:]>)
                    let s = &self.nodes[i].value;
                    let mut dx = Tensor::zeros(s.rows(), s.cols());
                    for r in 0..s.rows() {
                        let dot: T = (0..s.cols()).map(|c| g.get(r, c) * s.get(r, c)).sum();
                        for c in 0..s.cols() {
                            dx.set(r, c, s.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    accumulate(&mut grads, *input, dx);
                }
                Op::MeanRows { input } => {
                    let x = self.value(*input);
                    let inv_m = T::one() / T::from_f64_lossy(x.rows() as f64);
                    let mut dx = Tensor::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        for c in 0..x.cols() {
                            dx.set(r, c, g.get(0, c) * inv_m);
                        }
                    }
                    accumulate(&mut grads, *input, dx);
                }
                Op::SumAll { input } => {
                    let x = self.value(*input);
                    accumulate(
                        &mut grads,
                        *input,
                        Tensor::filled(x.rows(), x.cols(), g.item()),
                    );
                }
                Op::LogClamped { input, eps } => {
                    let x = self.value(*input);
                    let mut dx = g;
                    for (d, &v) in dx.data_mut().iter_mut().zip(x.data().iter()) {
                        *d = if v >= *eps { *d / v } else { T::zero() };
                    }
                    accumulate(&mut grads, *input, dx);
                }
                Op::ConcatRows { inputs } => {
                    let mut offset = 0;
                    for &id in inputs {
                        let part_rows = self.value(id).rows();
                        let cols = g.cols();
                        let mut dx = Tensor::zeros(part_rows, cols);
                        for r in 0..part_rows {
                            for c in 0..cols {
                                dx.set(r, c, g.get(offset + r, c));
                            }
                        }
                        accumulate(&mut grads, id, dx);
                        offset += part_rows;
                    }
                }
                Op::Reshape { input } => {
                    let (r, c) = self.value(*input).shape();
                    accumulate(&mut grads, *input, g.reshaped(r, c)?);
                }
                Op::Select { input, row, col } => {
                    let x = self.value(*input);
                    let mut dx = Tensor::zeros(x.rows(), x.cols());
                    dx.set(*row, *col, g.item());
                    accumulate(&mut grads, *input, dx);
                }
                Op::CrossEntropyLogits { logits, label } => {
                    let p = softmax_rows_value(self.value(*logits));
                    let mut dx = p;
                    dx.set(0, *label, dx.get(0, *label) - T::one());
                    accumulate(&mut grads, *logits, dx.scale(g.item()));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: ValueId, delta: Tensor<T>) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}

/// Plain stabilized row softmax on a tensor value.
pub(crate) fn softmax_rows_value<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let row = x.row_slice(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for c in 0..x.cols() {
            let e = (x.get(r, c) - max).exp();
            out.set(r, c, e);
            sum = sum + e;
        }
        for c in 0..x.cols() {
            out.set(r, c, out.get(r, c) / sum);
        }
    }
    out
}

/// Adjoints produced by [`Tape::backward`], indexed by [`ValueId`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to the value at `id`; `None` if the output does
    /// not depend on it.
    pub fn wrt(&self, id: ValueId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `id`, densified to the value's shape.
    pub fn wrt_or_zeros(&self, id: ValueId, like: &Tensor<T>) -> Tensor<T> {
        self.wrt(id).cloned().unwrap_or_else(|| like.zeros_like())
    }
}
