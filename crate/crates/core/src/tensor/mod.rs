//! Dense tensors and the mode-product algebra used by the attention kernels.

mod field;
mod matrix;

pub use field::{mean_over_axes, mode_product, relative_l2, relative_l2_with_grad, FieldTensor, Mode};
pub use matrix::{matmul, transpose, Matrix};

pub(crate) use field::{broadcast_mean_grad, split_at_mode, unravel};
pub(crate) use matrix::{matmul_acc, matmul_acc_as, matmul_nt, matmul_tn_acc, matmul_tn_acc_as, matmul_unchecked};
