//! f64 numeric kernels, the tensor container, and the gradient checker.
//!
//! Training runs entirely in f64; the only 32-bit arithmetic in the crate
//! lives inside the quantized serving fast path.

pub mod gradcheck;
pub mod ops;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use ops::{
    argmax, assert_all_finite, dot, layer_norm_backward, layer_norm_forward, linear_row,
    log_sum_exp, matmul, matmul_acc, matmul_nt_acc, matmul_tn_acc, sigmoid, silu, silu_prime,
    softmax_in_place, LnCache, LN_EPS,
};
pub use tensor::Tensor;
