"""Attention-kernel laboratory.

Numerical experiments on patchified images and single-head attention read
as a normalized integral kernel: graph total-variation geometry, block
low-rank recovery, kernel spectra, propagation stability, Fredholm
regularization, and mask-token interpolation.
"""

__version__ = "0.1.0"

from .attention import (
    AttentionWeights,
    TokenMatrix,
    attention_block,
    dot_product_shift_identity,
    effective_rank,
    positional_embedding,
    scaled_dot_product,
    symmetrized_attention,
)
from .grid import (
    ImageGrid,
    Patchification,
    bv_seminorm,
    extension_sum,
    patchify,
    select_patches,
)
from .kernels import DiscreteKernel, check_decay, check_normalization, extract_kernel, mercer_spectrum
from .lowrank import best_rank_r, embed_selected, reconstruct, verify_prop31
from .synthetic import gen_synthetic

__all__ = [
    "AttentionWeights",
    "DiscreteKernel",
    "ImageGrid",
    "Patchification",
    "TokenMatrix",
    "attention_block",
    "best_rank_r",
    "bv_seminorm",
    "check_decay",
    "check_normalization",
    "dot_product_shift_identity",
    "effective_rank",
    "embed_selected",
    "extension_sum",
    "extract_kernel",
    "gen_synthetic",
    "mercer_spectrum",
    "patchify",
    "positional_embedding",
    "reconstruct",
    "scaled_dot_product",
    "select_patches",
    "symmetrized_attention",
    "verify_prop31",
]
