//! Reverse-mode automatic differentiation over dense tensors.
//!
//! Values live on a [`Graph`] (a Wengert tape). Every primitive appends one
//! node holding its output; [`Graph::backward`] walks the tape once in reverse
//! and returns gradients for every leaf created with `requires_grad`.
//!
//! Storage is row-major and flat: element `(i0, .., in)` of a tensor with
//! shape `[d0, .., dn]` sits at `((i0 * d1 + i1) * d2 + ..) * dn + in`.

mod error;
mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use error::{AutodiffError, Result};
pub use gradcheck::{grad_check, numeric_gradient, relative_error};
pub use graph::{Gradients, Graph, Var};
pub use tensor::{Real, Tensor};
