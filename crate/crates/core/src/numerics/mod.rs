//! Dense tensors and the small linear-algebra kernels the rest of the crate
//! is built on.

pub mod conv;
pub mod eigen;
pub mod logistic;
mod tensor;

pub use conv::conv2d;
pub use eigen::{sym_eigendecomp, sym_eigendecomp_with, EigenOptions, SymEigen};
pub use logistic::{logistic_fit, logistic_loss, sigmoid, LogisticConfig, LogisticModel};
pub use tensor::Tensor;
