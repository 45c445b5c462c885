//! Factorized axial attention, the linear-attention baseline and their oracles.

mod block;
mod export;
mod factorized;
mod kernels;
mod linear;
mod projector;

pub use block::{Attention, AttentionBlock, AttentionCache, BlockCache, Mechanism};
pub use export::{decode_kernel_dump, encode_kernel_dump, read_kernel_dump, write_kernel_dump, KernelRecord};
pub use factorized::{
    brute_force_kernel_integral, head_mode_product, FactorizedAttention, FactorizedCache, ORACLE_MAX_POINTS,
};
pub use kernels::{axial_kernels_backward, build_axial_kernels, head_kernels, AxialKernelSet, AxisKernelCache};
pub use linear::{
    full_kernel, full_kernel_budget_check, linear_attention_core, linear_attention_direct, LinearAttention, LinearAttnCache,
    DEFAULT_MEMORY_BUDGET, FULL_KERNEL_BUDGET,
};
pub use projector::{AxialProjector, ProjectCache};


