//! Strided dense tensors and a reverse-mode differentiation tape.
//!
//! The tensor type is a flat row-major buffer plus shape/stride metadata,
//! generic over the scalar type: `f32` for training runs, `f64` for
//! verification runs (finite-difference gradient checks want the extra
//! precision). The tape records every primitive applied to its nodes and
//! replays them in reverse to accumulate gradients; it is single-use, one
//! backward pass per forward pass.
//!
//! Operations beyond the built-in primitives (convolutions and the like)
//! plug in through the [`TapeOp`] trait.

mod check;
mod element;
mod error;
mod gemm;
mod ops;
mod tape;
mod tensor;

pub use check::{check_gradients, GradCheckReport};
pub use element::{DType, Element};
pub use error::{Result, TensorError};
pub use gemm::matmul_into;
pub use ops::ReduceKind;
pub use tape::{NodeId, Tape, TapeOp};
pub use tensor::{broadcast_shape, reduce_to_shape, Tensor};
