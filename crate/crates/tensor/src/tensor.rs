use crate::element::Element;
use crate::error::{Result, TensorError};

/// Dense row-major tensor. The buffer is always contiguous; `strides` is
/// derived from `shape` and kept only as metadata for offset arithmetic.
/// Rank 0 (empty shape, one element) is the scalar case.
#[derive(Debug, Clone)]
pub struct Tensor<E: Element> {
    shape: Vec<usize>,
    strides: Vec<usize>,
    data: Vec<E>,
    requires_grad: bool,
    grad: Option<Vec<E>>,
}

pub(crate) fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0usize; shape.len()];
    let mut acc = 1usize;
    for (s, &extent) in strides.iter_mut().zip(shape.iter()).rev() {
        *s = acc;
        acc = acc.saturating_mul(extent.max(1));
    }
    strides
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<E: Element> Tensor<E> {
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        let expected = numel_of(&shape);
        if data.len() != expected {
            return Err(TensorError::DataLength {
                expected,
                got: data.len(),
            });
        }
        let strides = contiguous_strides(&shape);
        Ok(Tensor {
            shape,
            strides,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn full(shape: Vec<usize>, value: E) -> Self {
        let n = numel_of(&shape);
        Tensor::new(shape, vec![value; n]).unwrap()
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        Tensor::full(shape, E::zero())
    }

    pub fn ones(shape: Vec<usize>) -> Self {
        Tensor::full(shape, E::one())
    }

    pub fn scalar(value: E) -> Self {
        Tensor::new(Vec::new(), vec![value]).unwrap()
    }

    /// Builds a tensor from `f64` literals, converting to the element type.
    /// Mostly a convenience for tests and small fixture data.
    pub fn from_f64(shape: Vec<usize>, values: &[f64]) -> Result<Self> {
        let data = values.iter().map(|&v| E::from_f64(v)).collect();
        Tensor::new(shape, data)
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> E) -> Self {
        let n = numel_of(&shape);
        let data = (0..n).map(&mut f).collect();
        Tensor::new(shape, data).unwrap()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    /// Single-element value, regardless of rank.
    pub fn item(&self) -> Result<E> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(TensorError::NonScalarLoss {
                shape: self.shape.clone(),
            })
        }
    }

    pub fn at(&self, index: &[usize]) -> E {
        self.data[self.offset_of(index)]
    }

    pub fn offset_of(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.rank());
        index
            .iter()
            .zip(self.strides.iter())
            .map(|(&i, &s)| i * s)
            .sum()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn grad(&self) -> Option<&[E]> {
        self.grad.as_deref()
    }

    /// Gradient copied out as a tensor of the same shape.
    pub fn grad_tensor(&self) -> Option<Tensor<E>> {
        self.grad
            .as_ref()
            .map(|g| Tensor::new(self.shape.clone(), g.clone()).unwrap())
    }

    pub(crate) fn set_grad(&mut self, grad: Vec<E>) {
        debug_assert_eq!(grad.len(), self.data.len());
        self.grad = Some(grad);
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Same buffer under a new shape with an equal element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor<E>> {
        let expected = numel_of(&shape);
        if expected != self.data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape,
            });
        }
        let mut out = Tensor::new(shape, self.data.clone())?;
        out.requires_grad = self.requires_grad;
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Tensor<E> {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Tensor::new(self.shape.clone(), data).unwrap()
    }

    /// Converts the element type, used to rerun f32 models at f64 for
    /// gradient verification.
    pub fn cast<T: Element>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| T::from_f64(v.to_f64())).collect();
        let mut out = Tensor::new(self.shape.clone(), data).unwrap();
        out.requires_grad = self.requires_grad;
        out
    }
}

/// Resulting shape of aligning `lhs` and `rhs` by their trailing axes.
/// Each aligned pair must match or one side must be extent 1; the shorter
/// shape is padded with leading 1s.
pub fn broadcast_shape(lhs: &[usize], rhs: &[usize]) -> Result<Vec<usize>> {
    let rank = lhs.len().max(rhs.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let a = if i < rank - lhs.len() {
            1
        } else {
            lhs[i - (rank - lhs.len())]
        };
        let b = if i < rank - rhs.len() {
            1
        } else {
            rhs[i - (rank - rhs.len())]
        };
        out[i] = if a == b {
            a
        } else if a == 1 {
            b
        } else if b == 1 {
            a
        } else {
            return Err(TensorError::IncompatibleBroadcast {
                lhs: lhs.to_vec(),
                rhs: rhs.to_vec(),
            });
        };
    }
    Ok(out)
}

/// Strides for reading a tensor of shape `src` as if broadcast to `out`:
/// broadcast axes get stride 0, missing leading axes get stride 0.
pub(crate) fn broadcast_strides(src: &[usize], out_rank: usize) -> Vec<usize> {
    let src_strides = contiguous_strides(src);
    let mut eff = vec![0usize; out_rank];
    let offset = out_rank - src.len();
    for (i, (&extent, &stride)) in src.iter().zip(src_strides.iter()).enumerate() {
        eff[offset + i] = if extent == 1 { 0 } else { stride };
    }
    eff
}

/// Applies `f` pairwise over broadcast-aligned operands.
pub(crate) fn broadcast_binary<E: Element>(
    a: &Tensor<E>,
    b: &Tensor<E>,
    f: impl Fn(E, E) -> E,
) -> Result<Tensor<E>> {
    if a.shape == b.shape {
        let data = a
            .data
            .iter()
            .zip(b.data.iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor::new(a.shape.clone(), data);
    }
    let out_shape = broadcast_shape(&a.shape, &b.shape)?;
    let rank = out_shape.len();
    let n = numel_of(&out_shape);
    let sa = broadcast_strides(&a.shape, rank);
    let sb = broadcast_strides(&b.shape, rank);
    let mut data = Vec::with_capacity(n);
    let mut counter = vec![0usize; rank];
    let mut off_a = 0usize;
    let mut off_b = 0usize;
    for _ in 0..n {
        data.push(f(a.data[off_a], b.data[off_b]));
        for axis in (0..rank).rev() {
            counter[axis] += 1;
            off_a += sa[axis];
            off_b += sb[axis];
            if counter[axis] < out_shape[axis] {
                break;
            }
            counter[axis] = 0;
            off_a -= sa[axis] * out_shape[axis];
            off_b -= sb[axis] * out_shape[axis];
        }
    }
    Tensor::new(out_shape, data)
}

/// Sums `t` down to `target`, the inverse of broadcasting. Gradients of a
/// broadcast operand flow back through this.
pub fn reduce_to_shape<E: Element>(t: &Tensor<E>, target: &[usize]) -> Result<Tensor<E>> {
    if t.shape() == target {
        return Ok(t.clone());
    }
    // Every axis of target must align with the trailing axes of t.
    let rank = t.rank();
    if target.len() > rank {
        return Err(TensorError::IncompatibleBroadcast {
            lhs: t.shape().to_vec(),
            rhs: target.to_vec(),
        });
    }
    let offset = rank - target.len();
    for (i, &te) in target.iter().enumerate() {
        let se = t.shape()[offset + i];
        if te != se && te != 1 {
            return Err(TensorError::IncompatibleBroadcast {
                lhs: t.shape().to_vec(),
                rhs: target.to_vec(),
            });
        }
    }
    let eff = broadcast_strides(target, rank);
    let mut out = vec![E::zero(); numel_of(target)];
    let mut counter = vec![0usize; rank];
    let mut off_t = 0usize;
    for &v in t.data().iter() {
        out[off_t] += v;
        for axis in (0..rank).rev() {
            counter[axis] += 1;
            off_t += eff[axis];
            if counter[axis] < t.shape()[axis] {
                break;
            }
            counter[axis] = 0;
            off_t -= eff[axis] * t.shape()[axis];
        }
    }
    Tensor::new(target.to_vec(), out)
}
