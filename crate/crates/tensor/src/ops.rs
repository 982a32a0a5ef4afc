use std::sync::Arc;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::gemm::matmul_into;
use crate::tape::{NodeId, Tape, TapeOp};
use crate::tensor::{broadcast_binary, contiguous_strides, reduce_to_shape, Tensor};

struct AddOp;
struct SubOp;
struct MulOp;
struct ReluOp;
struct SquareOp;
struct ScaleOp<E: Element> {
    factor: E,
}
struct MatMulOp;
struct ReshapeOp {
    shape: Vec<usize>,
}

fn two<'t, E: Element>(
    op: &'static str,
    inputs: &[&'t Tensor<E>],
) -> Result<(&'t Tensor<E>, &'t Tensor<E>)> {
    if inputs.len() == 2 {
        Ok((inputs[0], inputs[1]))
    } else {
        Err(TensorError::op(
            op,
            format!("expected 2 inputs, got {}", inputs.len()),
        ))
    }
}

fn one<'t, E: Element>(op: &'static str, inputs: &[&'t Tensor<E>]) -> Result<&'t Tensor<E>> {
    if inputs.len() == 1 {
        Ok(inputs[0])
    } else {
        Err(TensorError::op(
            op,
            format!("expected 1 input, got {}", inputs.len()),
        ))
    }
}

impl<E: Element> TapeOp<E> for AddOp {
    fn name(&self) -> &'static str {
        "add"
    }

    fn forward(&self, inputs: &[&Tensor<E>]) -> Result<Tensor<E>> {
        let (a, b) = two("add", inputs)?;
        broadcast_binary(a, b, |x, y| x + y)
    }

    fn backward(
        &self,
        inputs: &[&Tensor<E>],
        _output: &Tensor<E>,
        grad: &Tensor<E>,
    ) -> Result<Vec<Option<Tensor<E>>>> {
        let (a, b) = two("add", inputs)?;
        Ok(vec![
            Some(reduce_to_shape(grad, a.shape())?),
            Some(reduce_to_shape(grad, b.shape())?),
        ])
    }
}

impl<E: Element> TapeOp<E> for SubOp {
    fn name(&self) -> &'static str {
        "sub"
    }

    fn forward(&self, inputs: &[&Tensor<E>]) -> Result<Tensor<E>> {
        let (a, b) = two("sub", inputs)?;
        broadcast_binary(a, b, |x, y| x - y)
    }

    fn backward(
        &self,
        inputs: &[&Tensor<E>],
        _output: &Tensor<E>,
        grad: &Tensor<E>,
    ) -> Result<Vec<Option<Tensor<E>>>> {
        let (a, b) = two("sub", inputs)?;
        let neg = grad.map(|v| -v);
        Ok(vec![
            Some(reduce_to_shape(grad, a.shape())?),
            Some(reduce_to_shape(&neg, b.shape())?),
        ])
    }
}

impl<E: Element> TapeOp<E> for MulOp {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn forward(&self, inputs: &[&Tensor<E>]) -> Result<Tensor<E>> {
        let (a, b) = two("mul", inputs)?;
        broadcast_binary(a, b, |x, y| x * y)
    }

    fn backward(
        &self,
        inputs: &[&Tensor<E>],
        _output: &Tensor<E>,
        grad: &Tensor<E>,
    ) -> Result<Vec<Option<Tensor<E>>>> {
        let (a, b) = two("mul", inputs)?;
        let da = broadcast_binary(grad, b, |g, y| g * y)?;
        let db = broadcast_binary(grad, a, |g, x| g * x)?;
        Ok(vec![
            Some(reduce_to_shape(&da, a.shape())?),
            Some(reduce_to_shape(&db, b.shape())?),
        ])
    }
}

impl<E: Element> TapeOp<E> for ReluOp {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn forward(&self, inputs: &[&Tensor<E>]) -> Result<Tensor<E>> {
        let a = one("relu", inputs)?;
        Ok(a.map(|v| if v > E::zero() { v } else { E::zero() }))
    }

    fn backward(
        &self,
        inputs: &[&Tensor<E>],
        _output: &Tensor<E>,
        grad: &Tensor<E>,
    ) -> Result<Vec<Option<Tensor<E>>>> {
        let a = one("relu", inputs)?;
        // Subgradient at zero is taken as zero.
        let data = a
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&x, &g)| if x > E::zero() { g } else { E::zero() })
            .collect();
        Ok(vec![Some(Tensor::new(a.shape().to_vec(), data)?)])
    }
}

impl<E: Element> TapeOp<E> for SquareOp {
    fn name(&self) -> &'static str {
        "square"
    }

    fn forward(&self, inputs: &[&Tensor<E>]) -> Result<Tensor<E>> {
        let a = one("square", inputs)?;
        Ok(a.map(|v| v * v))
    }

    fn backward(
        &self,
        inputs: &[&Tensor<E>],
        _output: &Tensor<E>,
        grad: &Tensor<E>,
    ) -> Result<Vec<Option<Tensor<E>>>> {
        let a = one("square", inputs)?;
        let double = E::from_f64(2.0);
        let data = a
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&x, &g)| g * double * x)
            .collect();
        Ok(vec![Some(Tensor::new(a.shape().to_vec(), data)?)])
    }
}

impl<E: Element> TapeOp<E> for ScaleOp<E> {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn forward(&self, inputs: &[&Tensor<E>]) -> Result<Tensor<E>> {
        let a = one("scale", inputs)?;
        let c = self.factor;
        Ok(a.map(|v| v * c))
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<E>],
        _output: &Tensor<E>,
        grad: &Tensor<E>,
    ) -> Result<Vec<Option<Tensor<E>>>> {
        let c = self.factor;
        Ok(vec![Some(grad.map(|g| g * c))])
    }
}

impl<E: Element> TapeOp<E> for MatMulOp {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn forward(&self, inputs: &[&Tensor<E>]) -> Result<Tensor<E>> {
        let (a, b) = two("matmul", inputs)?;
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let mut out = Tensor::zeros(vec![m, n]);
        matmul_into(out.data_mut(), a.data(), b.data(), m, k, n, false, false);
        Ok(out)
    }

    fn backward(
        &self,
        inputs: &[&Tensor<E>],
        _output: &Tensor<E>,
        grad: &Tensor<E>,
    ) -> Result<Vec<Option<Tensor<E>>>> {
        let (a, b) = two("matmul", inputs)?;
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let da = if a.requires_grad() {
            let mut da = Tensor::zeros(vec![m, k]);
            matmul_into(da.data_mut(), grad.data(), b.data(), m, n, k, false, true);
            Some(da)
        } else {
            None
        };
        let db = if b.requires_grad() {
            let mut db = Tensor::zeros(vec![k, n]);
            matmul_into(db.data_mut(), a.data(), grad.data(), k, m, n, true, false);
            Some(db)
        } else {
            None
        };
        Ok(vec![da, db])
    }
}

impl<E: Element> TapeOp<E> for ReshapeOp {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn forward(&self, inputs: &[&Tensor<E>]) -> Result<Tensor<E>> {
        let a = one("reshape", inputs)?;
        a.reshape(self.shape.clone())
    }

    fn backward(
        &self,
        inputs: &[&Tensor<E>],
        _output: &Tensor<E>,
        grad: &Tensor<E>,
    ) -> Result<Vec<Option<Tensor<E>>>> {
        let a = one("reshape", inputs)?;
        Ok(vec![Some(grad.reshape(a.shape().to_vec())?)])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

impl ReduceKind {
    fn name(self) -> &'static str {
        match self {
            ReduceKind::Sum => "sum",
            ReduceKind::Mean => "mean",
            ReduceKind::Max => "max",
        }
    }
}

struct ReduceOp {
    kind: ReduceKind,
    axes: Option<Vec<usize>>,
}

impl ReduceOp {
    /// Per-axis reduction mask, the kept output shape, and the element
    /// count folded into each output cell.
    fn plan(&self, shape: &[usize]) -> Result<(Vec<bool>, Vec<usize>, usize)> {
        let rank = shape.len();
        let mut reduced = vec![false; rank];
        match &self.axes {
            None => reduced.fill(true),
            Some(axes) => {
                for &axis in axes {
                    if axis >= rank {
                        return Err(TensorError::InvalidAxis { axis, rank });
                    }
                    if reduced[axis] {
                        return Err(TensorError::op(
                            self.kind.name(),
                            format!("duplicate axis {axis}"),
                        ));
                    }
                    reduced[axis] = true;
                }
            }
        }
        let out_shape: Vec<usize> = shape
            .iter()
            .zip(reduced.iter())
            .filter(|(_, &r)| !r)
            .map(|(&e, _)| e)
            .collect();
        let count: usize = shape
            .iter()
            .zip(reduced.iter())
            .filter(|(_, &r)| r)
            .map(|(&e, _)| e)
            .product();
        Ok((reduced, out_shape, count))
    }
}

/// Walks the input linearly, handing each element's offset in the reduced
/// output to `f`. Reduced axes contribute stride zero.
fn walk_reduced(shape: &[usize], reduced: &[bool], mut f: impl FnMut(usize, usize)) {
    let rank = shape.len();
    let out_shape: Vec<usize> = shape
        .iter()
        .zip(reduced.iter())
        .filter(|(_, &r)| !r)
        .map(|(&e, _)| e)
        .collect();
    let out_strides = contiguous_strides(&out_shape);
    let mut eff = vec![0usize; rank];
    let mut kept = 0usize;
    for axis in 0..rank {
        if !reduced[axis] {
            eff[axis] = out_strides[kept];
            kept += 1;
        }
    }
    let total: usize = shape.iter().product();
    let mut counter = vec![0usize; rank];
    let mut out_off = 0usize;
    for lin in 0..total {
        f(lin, out_off);
        for axis in (0..rank).rev() {
            counter[axis] += 1;
            out_off += eff[axis];
            if counter[axis] < shape[axis] {
                break;
            }
            counter[axis] = 0;
            out_off -= eff[axis] * shape[axis];
        }
    }
}

impl<E: Element> TapeOp<E> for ReduceOp {
    fn name(&self) -> &'static str {
        self.kind.name()
    }

    fn forward(&self, inputs: &[&Tensor<E>]) -> Result<Tensor<E>> {
        let a = one(self.kind.name(), inputs)?;
        let (reduced, out_shape, count) = self.plan(a.shape())?;
        if count == 0 && self.kind != ReduceKind::Sum {
            return Err(TensorError::EmptyReduction {
                op: self.kind.name(),
                shape: a.shape().to_vec(),
            });
        }
        let mut out = match self.kind {
            ReduceKind::Max => Tensor::full(out_shape, E::neg_infinity()),
            _ => Tensor::zeros(out_shape),
        };
        let data = a.data();
        let out_data = out.data_mut();
        match self.kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                walk_reduced(a.shape(), &reduced, |lin, off| out_data[off] += data[lin]);
                if self.kind == ReduceKind::Mean {
                    let inv = E::one() / E::from_f64(count as f64);
                    for v in out_data.iter_mut() {
                        *v *= inv;
                    }
                }
            }
            ReduceKind::Max => {
                // Strict comparison in linear order keeps the first (lowest
                // index) occurrence on ties.
                walk_reduced(a.shape(), &reduced, |lin, off| {
                    if data[lin] > out_data[off] {
                        out_data[off] = data[lin];
                    }
                });
            }
        }
        Ok(out)
    }

    fn backward(
        &self,
        inputs: &[&Tensor<E>],
        _output: &Tensor<E>,
        grad: &Tensor<E>,
    ) -> Result<Vec<Option<Tensor<E>>>> {
        let a = one(self.kind.name(), inputs)?;
        let (reduced, _, count) = self.plan(a.shape())?;
        let mut din = Tensor::zeros(a.shape().to_vec());
        let g = grad.data();
        match self.kind {
            ReduceKind::Sum => {
                let d = din.data_mut();
                walk_reduced(a.shape(), &reduced, |lin, off| d[lin] = g[off]);
            }
            ReduceKind::Mean => {
                let inv = E::one() / E::from_f64(count as f64);
                let d = din.data_mut();
                walk_reduced(a.shape(), &reduced, |lin, off| d[lin] = g[off] * inv);
            }
            ReduceKind::Max => {
                let n_out = grad.numel();
                let mut best = vec![E::neg_infinity(); n_out];
                let mut arg = vec![usize::MAX; n_out];
                let data = a.data();
                walk_reduced(a.shape(), &reduced, |lin, off| {
                    if data[lin] > best[off] {
                        best[off] = data[lin];
                        arg[off] = lin;
                    }
                });
                let d = din.data_mut();
                for (off, &lin) in arg.iter().enumerate() {
                    if lin != usize::MAX {
                        d[lin] += g[off];
                    }
                }
            }
        }
        Ok(vec![Some(din)])
    }
}

impl<E: Element> Tape<E> {
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Arc::new(AddOp), &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Arc::new(SubOp), &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Arc::new(MulOp), &[a, b])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Arc::new(ReluOp), &[a])
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Arc::new(SquareOp), &[a])
    }

    pub fn scale(&mut self, a: NodeId, factor: E) -> Result<NodeId> {
        self.apply(Arc::new(ScaleOp { factor }), &[a])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Arc::new(MatMulOp), &[a, b])
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        self.apply(Arc::new(ReshapeOp { shape }), &[a])
    }

    /// Reduces over `axes`, or over every axis when `axes` is `None`;
    /// reduced axes are removed from the shape.
    pub fn reduce(
        &mut self,
        kind: ReduceKind,
        a: NodeId,
        axes: Option<&[usize]>,
    ) -> Result<NodeId> {
        self.apply(
            Arc::new(ReduceOp {
                kind,
                axes: axes.map(|s| s.to_vec()),
            }),
            &[a],
        )
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.reduce(ReduceKind::Sum, a, None)
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.reduce(ReduceKind::Mean, a, None)
    }

    pub fn max(&mut self, a: NodeId) -> Result<NodeId> {
        self.reduce(ReduceKind::Max, a, None)
    }
}
