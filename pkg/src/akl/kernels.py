"""Discrete integral-kernel view of attention: normalization, spectra, decay.

A discrete kernel holds the p x p value matrix, positive normalization
weights alpha, and quadrature weights mu (uniform 1/p by default).
Three extraction variants are kept strictly apart:

- ``asymmetric``: exp(<q_i, k_j>/sqrt(d)); its alpha-normalization
  reproduces the softmax attention matrix exactly.
- ``bilinear``: gamma <q_i - k_i, q_j - k_j>, the symmetric bilinear
  form the difference logits use (entries may be negative).
- ``rbf``: exp(-gamma ||delta_i - delta_j||^2) on the same difference
  vectors, a Gaussian radial-basis Gram matrix (symmetric PSD).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionWeights, TokenMatrix
from .errors import InvalidInputError, UnsupportedVariantError

# exp() overflows float64 near 709; shift logits only when they approach it
_LOGIT_GUARD = 500.0


@dataclass
class DiscreteKernel:
    """Kernel matrix with normalization and quadrature weights.

    For the asymmetric variant large logits are handled in the log domain:
    the stored matrix is exp(logits - logit_shift), which leaves every
    alpha-normalized quantity unchanged.
    """

    matrix: np.ndarray
    alpha: np.ndarray
    measure: np.ndarray
    symmetric: bool
    variant: str
    logit_shift: float = 0.0

    def __post_init__(self) -> None:
        self.matrix = np.asarray(self.matrix, dtype=float)
        p = self.matrix.shape[0]
        if self.matrix.shape != (p, p):
            raise InvalidInputError(f"kernel matrix must be square, got {self.matrix.shape}")
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.measure = np.asarray(self.measure, dtype=float)
        if self.alpha.shape != (p,) or self.measure.shape != (p,):
            raise InvalidInputError("alpha and measure must be p-vectors")
        if not np.all(np.isfinite(self.matrix)):
            raise InvalidInputError("kernel entries must be finite")
        if np.any(self.alpha <= 0):
            raise InvalidInputError("normalization weights must be positive")
        if np.any(self.measure <= 0):
            raise InvalidInputError("quadrature weights must be positive")
        if self.symmetric and np.max(np.abs(self.matrix - self.matrix.T)) > 1e-10:
            raise InvalidInputError("symmetric flag set but matrix is not symmetric")

    @property
    def p(self) -> int:
        return self.matrix.shape[0]


def uniform_measure(p: int) -> np.ndarray:
    return np.full(p, 1.0 / p)


def extract_kernel(tokens: TokenMatrix, w: AttentionWeights, variant: str) -> DiscreteKernel:
    """Build the discrete kernel for one of the three variants."""
    q = tokens.y @ w.wq
    k = tokens.y @ w.wk
    p = tokens.p
    mu = uniform_measure(p)
    if variant == "asymmetric":
        logits = q @ k.T / np.sqrt(tokens.d)
        shift = max(0.0, float(logits.max()) - _LOGIT_GUARD)
        matrix = np.exp(logits - shift)
        alpha = matrix.sum(axis=1)
        return DiscreteKernel(
            matrix=matrix, alpha=alpha, measure=mu, symmetric=False,
            variant=variant, logit_shift=shift,
        )
    delta = q - k
    if variant == "bilinear":
        matrix = w.gamma * (delta @ delta.T)
        # row sums of a bilinear form can vanish or go negative, so no
        # row-integral normalization is defined for this variant
        alpha = np.ones(p)
        return DiscreteKernel(matrix=matrix, alpha=alpha, measure=mu, symmetric=True, variant=variant)
    if variant == "rbf":
        sq_norms = np.sum(delta * delta, axis=1)
        sq_dist = np.maximum(sq_norms[:, None] + sq_norms[None, :] - 2.0 * (delta @ delta.T), 0.0)
        matrix = np.exp(-w.gamma * sq_dist)
        matrix = 0.5 * (matrix + matrix.T)
        alpha = matrix.sum(axis=1)
        return DiscreteKernel(matrix=matrix, alpha=alpha, measure=mu, symmetric=True, variant=variant)
    raise UnsupportedVariantError(f"unknown kernel variant {variant!r}")


def attention_from_kernel(kernel: DiscreteKernel) -> np.ndarray:
    """Row-normalized kernel diag(alpha)^-1 K; row-stochastic when alpha is the row sum."""
    return kernel.matrix / kernel.alpha[:, None]


def check_normalization(kernel: DiscreteKernel) -> float:
    """Largest deviation of the discrete row integral from one.

    Computes max_i | alpha_i^-1 (sum_j K_ij mu_j) p - 1 |, the discrete
    analogue of the unit row integral under uniform quadrature weights.
    """
    row_integral = kernel.matrix @ kernel.measure
    return float(np.max(np.abs(row_integral * kernel.p / kernel.alpha - 1.0)))


@dataclass
class MercerSpectrum:
    """Eigendecomposition of the measure-weighted symmetric kernel.

    Diagonalizes M = diag(mu)^(1/2) K diag(mu)^(1/2); eigenvalues are
    sorted descending with matching eigenvector columns.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    measure: np.ndarray

    def reconstruct_kernel(self) -> np.ndarray:
        """Sum of a_i psi_i psi_i^T mapped back through the measure scaling."""
        m = (self.eigenvectors * self.eigenvalues[None, :]) @ self.eigenvectors.T
        root = np.sqrt(self.measure)
        return m / root[:, None] / root[None, :]


def mercer_spectrum(kernel: DiscreteKernel) -> MercerSpectrum:
    """Full symmetric eigendecomposition; rejects asymmetric kernels."""
    if not kernel.symmetric:
        raise UnsupportedVariantError(
            "eigenfunction expansion needs a symmetric kernel; use singular values instead"
        )
    root = np.sqrt(kernel.measure)
    m = kernel.matrix * root[:, None] * root[None, :]
    values, vectors = np.linalg.eigh(0.5 * (m + m.T))
    order = np.argsort(values)[::-1]
    return MercerSpectrum(
        eigenvalues=values[order], eigenvectors=vectors[:, order], measure=kernel.measure.copy()
    )


def check_decay(kernel: DiscreteKernel, positions: np.ndarray, gamma: float) -> float:
    """Smallest C with K_ij <= C exp(-gamma ||x_i - x_j||) over all pairs.

    ``positions`` are per-token coordinates (2-D grid centers or feature
    vectors); the first-power exponent follows the envelope being fitted.
    """
    positions = np.asarray(positions, dtype=float)
    if positions.shape[0] != kernel.p:
        raise InvalidInputError("need one position per token")
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    envelope = np.exp(-gamma * dist)
    return float(np.max(kernel.matrix / envelope))
