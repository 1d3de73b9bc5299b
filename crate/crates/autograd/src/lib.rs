//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Every op's backward rule is itself written in terms of differentiable
//! ops, so gradients taken with `create_graph = true` can be differentiated
//! again (needed for input-gradient penalties).
//!
//! ```
//! use autograd::{grad, Tensor};
//!
//! let x = Tensor::from_vec(vec![1.0, 2.0], &[2]).leaf_requiring_grad();
//! let y = x.square().sum();
//! let g = grad(&y, &[x.clone()], true).remove(0);
//! assert_eq!(g.to_vec(), vec![2.0, 4.0]);
//! let gg = grad(&g.sum(), &[x], false).remove(0);
//! assert_eq!(gg.to_vec(), vec![2.0, 2.0]);
//! ```

mod backprop;
mod ops;
mod optim;
mod store;
mod tensor;

pub use backprop::{grad, grad_with_seed};
pub use optim::{Adam, AdamState};
pub use store::{NamedTensor, Param, VarStore};
pub use tensor::{is_grad_enabled, no_grad, numel, strides, Tensor};
