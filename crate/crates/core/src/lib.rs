//! Polynomial classifiers built from coarse-graining operations.
//!
//! Three strands share this crate:
//!
//! * the direct Taylor-expansion classifier, which enumerates every
//!   monomial of a small image up to a fixed order and trains one linear
//!   layer over them ([`monomial`], [`taylor`]);
//! * activation-free networks whose nonlinearity comes from polynomial
//!   coarse-graining layers interleaved with convolutions ([`layers`],
//!   [`arch`], [`train`]), with an exact symbolic engine to expand small
//!   stacks and verify what polynomial they compute ([`sympoly`]);
//! * hierarchical data distillation, which compresses a labeled dataset
//!   level by level into a handful of synthetic images per class
//!   ([`distill`]).
//!
//! [`data`] handles dataset download, parsing, caching, and batching;
//! [`checkpoint`] persists trained parameters.

pub mod arch;
pub mod checkpoint;
pub mod data;
pub mod distill;
pub mod error;
pub mod layers;
pub mod monomial;
pub mod sympoly;
pub mod taylor;
pub mod train;

pub use error::{CoreError, Result};
