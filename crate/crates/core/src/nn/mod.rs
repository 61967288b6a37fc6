//! A small reverse-mode autodiff engine sized for the codec: dense tensors,
//! convolutions and the differentiable optics used by the training losses.

mod conv;
mod graph;
mod ops;
mod params;
mod spectral;
mod tensor;
#[cfg(test)]
pub(crate) mod testing;

pub use graph::{BackwardArgs, BackwardFn, Gradients, Graph, Var};
pub use params::{clip_grad_norm, Adam, ParamStore};
pub use spectral::gaussian_taps;
pub use tensor::Tensor;
