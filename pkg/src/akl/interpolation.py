"""Mask-token mechanics: exact absorption and global interpolation of masked rows.

When every masked row carries the same embedding m, all masked keys and
values coincide, and row-stochasticity turns the full attention output
into an exact shift-plus-restriction form:

    z_i = v_m + sum_{j in N} A_ij (v_j - v_m),       v_m = m WV,

for every row i.  Dropping the masked columns and renormalizing the
unmasked attention mass yields the interpolation-weight view: the output
for a masked row is a convex combination of unmasked values (shifted by
v_m), and the gap between the two forms shrinks as the patch grid
refines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionWeights, TokenMatrix, image_tokens, scaled_dot_product
from .errors import InvalidConfigurationError, InvalidInputError
from .grid import ImageGrid, bv_seminorm, patchify
from .stability import fit_loglog_slope
from .synthetic import gen_lowfreq


@dataclass
class MaskedTokenSet:
    """Token matrix whose masked rows all equal the shared embedding m."""

    tokens: TokenMatrix
    masked: np.ndarray
    unmasked: np.ndarray
    m: np.ndarray

    def __post_init__(self) -> None:
        self.masked = np.asarray(self.masked, dtype=int)
        self.unmasked = np.asarray(self.unmasked, dtype=int)
        self.m = np.asarray(self.m, dtype=float).reshape(-1)
        p = self.tokens.p
        indices = np.concatenate([self.masked, self.unmasked])
        if sorted(indices.tolist()) != list(range(p)):
            raise InvalidInputError("masked and unmasked sets must partition the token indices")
        if self.unmasked.size < 2:
            raise InvalidConfigurationError(
                f"need at least 2 unmasked tokens, got {self.unmasked.size}"
            )
        if self.m.shape != (self.tokens.d,):
            raise InvalidInputError("mask embedding must be a d-vector")
        if self.masked.size and not np.all(self.tokens.y[self.masked] == self.m[None, :]):
            raise InvalidInputError("every masked row must equal the shared mask embedding")


def build_masked_input(
    tokens: TokenMatrix, mask_ratio: float, m: np.ndarray, seed: int
) -> MaskedTokenSet:
    """Mask a uniformly random subset of round(mask_ratio * p) rows with m.

    Positions and patch ids are retained for every row (unshuffled
    layout); the same seed reproduces the same mask set.
    """
    if not 0.0 <= mask_ratio < 1.0:
        raise InvalidInputError(f"mask ratio must be in [0, 1), got {mask_ratio}")
    p = tokens.p
    count = int(round(mask_ratio * p))
    if p - count < 2:
        raise InvalidConfigurationError(
            f"mask ratio {mask_ratio} leaves {p - count} unmasked tokens; need at least 2"
        )
    rng = np.random.default_rng(seed)
    masked = np.sort(rng.choice(p, size=count, replace=False))
    unmasked = np.setdiff1d(np.arange(p), masked)
    y = tokens.y.copy()
    m = np.asarray(m, dtype=float).reshape(-1)
    y[masked] = m[None, :]
    return MaskedTokenSet(tokens=tokens.with_y(y), masked=masked, unmasked=unmasked, m=m)


@dataclass
class AbsorptionResult:
    z_full: np.ndarray
    z_decomposed: np.ndarray
    discrepancy: float


def mask_absorption_decomposition(mt: MaskedTokenSet, w: AttentionWeights) -> AbsorptionResult:
    """Exact shift form of the full attention output.

    Computes z_full over all rows and the decomposition
    v_m + sum_{j in N} A_ij (v_j - v_m); the reported discrepancy is the
    max row L2 gap, which is a pure floating-point residual.
    """
    z_full, attn = scaled_dot_product(mt.tokens, w)
    values = mt.tokens.y @ w.wv
    v_m = mt.m @ w.wv
    shifted = values[mt.unmasked] - v_m[None, :]
    z_dec = v_m[None, :] + attn[:, mt.unmasked] @ shifted
    discrepancy = float(np.max(np.linalg.norm(z_full - z_dec, axis=1)))
    return AbsorptionResult(z_full=z_full, z_decomposed=z_dec, discrepancy=discrepancy)


def restricted_attention(
    mt: MaskedTokenSet, w: AttentionWeights
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unmasked-only attention: rows renormalized over N, values shifted by v_m.

    Returns (z_hat, A_hat over N, unmasked mass s_i).
    """
    z_full, attn = scaled_dot_product(mt.tokens, w)
    if mt.masked.size == 0:
        # renormalizing over every column is the identity
        return z_full, attn, np.ones(mt.tokens.p)
    restricted = attn[:, mt.unmasked]
    mass = restricted.sum(axis=1)
    a_hat = restricted / mass[:, None]
    values = mt.tokens.y @ w.wv
    v_m = mt.m @ w.wv
    z_hat = v_m[None, :] + a_hat @ (values[mt.unmasked] - v_m[None, :])
    return z_hat, a_hat, mass


@dataclass
class RestrictionErrorReport:
    errors: np.ndarray  # per-row L2 gap between full and restricted outputs
    max_error: float
    mean_unmasked_mass: float


def restricted_attention_error(mt: MaskedTokenSet, w: AttentionWeights) -> RestrictionErrorReport:
    """Row-wise gap between the full output and the renormalized restricted one."""
    z_full, _ = scaled_dot_product(mt.tokens, w)
    z_hat, _, mass = restricted_attention(mt, w)
    errors = np.linalg.norm(z_full - z_hat, axis=1)
    return RestrictionErrorReport(
        errors=errors, max_error=float(np.max(errors)), mean_unmasked_mass=float(np.mean(mass))
    )


def interpolation_weights(
    mt: MaskedTokenSet, w: AttentionWeights, i: int
) -> tuple[np.ndarray, float]:
    """Convex weights over the unmasked set for masked row i.

    Returns (weights, error): the weights are the renormalized attention
    row (nonnegative, summing to one), and the error is the L2 gap
    between the weighted reconstruction and the full attention output for
    that row.
    """
    if i not in set(mt.masked.tolist()):
        raise InvalidInputError(f"token {i} is not masked")
    z_full, _ = scaled_dot_product(mt.tokens, w)
    z_hat, a_hat, _ = restricted_attention(mt, w)
    weights = a_hat[i]
    error = float(np.linalg.norm(z_hat[i] - z_full[i]))
    return weights, error


def identity_reprojection(patch_size: int, channels: int):
    """Reshape a d-vector straight into a patch when d = patch_size^2 * channels."""

    def reproject(row: np.ndarray) -> np.ndarray:
        return np.asarray(row, dtype=float).reshape(patch_size, patch_size, channels)

    return reproject


def seeded_reprojection(d_in: int, patch_size: int, channels: int, seed: int):
    """Seeded random linear map from a d_in-vector to a patch (no training)."""
    rng = np.random.default_rng(seed)
    matrix = rng.standard_normal((d_in, patch_size * patch_size * channels)) / np.sqrt(d_in)

    def reproject(row: np.ndarray) -> np.ndarray:
        return (np.asarray(row, dtype=float) @ matrix).reshape(patch_size, patch_size, channels)

    return reproject


def _patch_bv(block: np.ndarray) -> float:
    """Intra-patch total variation of one (s, s, c) block."""
    if block.shape[0] == 1:
        return 0.0
    return bv_seminorm(ImageGrid(block))


@dataclass
class ReconstructionBoundReport:
    masked_errors: np.ndarray
    unmasked_sup: float
    correction: float
    c_hat: float


def reconstruction_error_bound(
    mt: MaskedTokenSet,
    w: AttentionWeights,
    ground_truth: ImageGrid,
    n: int,
    reproject=None,
) -> ReconstructionBoundReport:
    """Per-patch reconstruction errors of masked outputs against ground truth.

    Masked rows are judged by the absorbed layer output, the convex
    interpolation of visible values under renormalized attention (the
    shared mask embedding replaced by zero); unmasked rows by their input
    embeddings (the encoder side of the comparison).  Errors are
    intra-patch total-variation seminorms; ``c_hat`` is the largest
    masked error divided by (unmasked sup + ||u||_F / n).
    """
    patches = patchify(ground_truth, n)
    if patches.count != mt.tokens.p:
        raise InvalidInputError("ground-truth partition does not match the token count")
    if reproject is None:
        expected = patches.patch_size**2 * ground_truth.channels
        if mt.tokens.d != expected:
            raise InvalidInputError(
                f"token width {mt.tokens.d} does not reshape to a patch (need {expected})"
            )
        reproject = identity_reprojection(patches.patch_size, ground_truth.channels)

    _, a_hat, _ = restricted_attention(mt, w)
    values = mt.tokens.y @ w.wv
    interpolated = a_hat @ values[mt.unmasked] if mt.masked.size else values
    masked_errors = np.array(
        [
            _patch_bv(reproject(interpolated[i]) - patches.restrict(ground_truth, int(i)))
            for i in mt.masked
        ]
    )
    unmasked_errors = [
        _patch_bv(reproject(mt.tokens.y[j]) - patches.restrict(ground_truth, int(j)))
        for j in mt.unmasked
    ]
    unmasked_sup = float(np.max(unmasked_errors))
    correction = float(np.linalg.norm(ground_truth.pixels)) / n
    denom = unmasked_sup + correction
    c_hat = float(np.max(masked_errors) / denom) if masked_errors.size and denom > 0 else 0.0
    return ReconstructionBoundReport(
        masked_errors=masked_errors,
        unmasked_sup=unmasked_sup,
        correction=correction,
        c_hat=c_hat,
    )


def restriction_error_scan(
    n_values: tuple[int, ...],
    mask_ratio: float,
    image_side: int,
    seeds: int,
    image_seed: int = 0,
    weight_gamma: float = 1.0,
    map_fn=map,
) -> tuple[list[dict], dict]:
    """Fixed-image scan of the restricted-attention error against patch count.

    Returns per-(n, seed) rows and a summary with the fitted log-log slope
    of the median max-error against n.
    """
    if len(set(n_values)) < 3:
        raise InvalidInputError("need at least 3 distinct patch counts for a slope fit")
    for n in n_values:
        if image_side % n != 0:
            raise InvalidInputError(f"patch count {n} does not divide image side {image_side}")
    image = gen_lowfreq(image_side, seed=image_seed)

    def run_point(point: tuple[int, int]) -> dict:
        n, seed = point
        tokens = image_tokens(image, n, positions="coords")
        w = AttentionWeights.seeded(tokens.d, seed=2000 + seed, gamma=weight_gamma)
        rng = np.random.default_rng(3000 + seed)
        scale = float(np.mean(np.linalg.norm(tokens.y, axis=1)))
        m = rng.standard_normal(tokens.d)
        m *= scale / max(float(np.linalg.norm(m)), 1e-300)
        mt = build_masked_input(tokens, mask_ratio, m, seed=4000 + seed)
        report = restricted_attention_error(mt, w)
        absorption = mask_absorption_decomposition(mt, w)
        return {
            "n": n,
            "seed": seed,
            "max_error": report.max_error,
            "mean_unmasked_mass": report.mean_unmasked_mass,
            "absorption_discrepancy": absorption.discrepancy,
        }

    points = [(n, s) for n in n_values for s in range(seeds)]
    rows = list(map_fn(run_point, points))
    medians = [
        float(np.median([row["max_error"] for row in rows if row["n"] == n])) for n in n_values
    ]
    slope, intercept = fit_loglog_slope(np.array(n_values, dtype=float), np.array(medians))
    summary = {
        "n_values": list(n_values),
        "mask_ratio": mask_ratio,
        "median_max_error_per_n": dict(zip((str(n) for n in n_values), medians)),
        "slope": slope,
        "intercept": intercept,
        "max_absorption_discrepancy": float(max(row["absorption_discrepancy"] for row in rows)),
    }
    return rows, summary
