"""SparseFormer depth completion: cross-attention interpolation of sparse
landmark depths into dense depth maps, with an outlier-filtering refinement
stage. Thin wrapper over the C++ core."""

from ._core import (
    DepthModel,
    compute_metrics,
    generate_scene,
    grad_check,
    matmul,
    positional_encoding,
    read_scene,
    softmax_masked,
)

__all__ = [
    "DepthModel",
    "compute_metrics",
    "generate_scene",
    "grad_check",
    "matmul",
    "positional_encoding",
    "read_scene",
    "softmax_masked",
]
