"""Float32 tensor core: autodiff tape, layer ops, and gradient checking."""

from irisauth.nn.tensor import GradTape, ParamSet, Tensor, astensor
from irisauth.nn.ops import (
    PadMode, adaptive_avg_pool1d, adaptive_avg_pool2d, add, add_const,
    binary_cross_entropy_with_logits, concat_rows, conv2d, cross_entropy,
    gather_rows, interp_matrix, linear, log_softmax, mul_const, pool_matrix,
    relu, reshape, roi_crop, smooth_l1, softmax_np, transpose, tsum,
    upsample_bilinear,
)
from irisauth.nn.gradcheck import (
    GradCheckResult, finite_difference_check, make_projection, project,
)

__all__ = [
    "GradTape", "ParamSet", "Tensor", "astensor",
    "PadMode", "adaptive_avg_pool1d", "adaptive_avg_pool2d", "add",
    "add_const", "binary_cross_entropy_with_logits", "concat_rows", "conv2d",
    "cross_entropy", "gather_rows", "interp_matrix", "linear",
    "log_softmax", "mul_const", "pool_matrix", "relu", "reshape",
    "roi_crop", "smooth_l1", "softmax_np", "transpose", "tsum",
    "upsample_bilinear",
    "GradCheckResult", "finite_difference_check", "make_projection",
    "project",
]
