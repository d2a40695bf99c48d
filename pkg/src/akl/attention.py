"""Single-head scaled dot-product attention and its symmetrized variant.

The block computes Q = yWQ, K = yWK, V = yWV, a row-softmax attention
matrix, and the full residual/LayerNorm/feed-forward composition
LN(y + z + FFN(LN(y + z))).  The symmetrized variant replaces the
logits with the negative scaled Gram matrix of the per-token
difference vectors q_i - k_i, which makes the logit matrix exactly
symmetric.

Tokens carry positional embeddings as explicit coordinate rows; the
patch-ordering map is kept injective (positions pairwise distinct).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidInputError
from .grid import ImageGrid, patchify

LN_EPS = 1e-12


@dataclass
class TokenMatrix:
    """p x d token embeddings with positional rows and an injective patch map."""

    y: np.ndarray
    positions: np.ndarray
    patch_ids: np.ndarray

    def __post_init__(self) -> None:
        self.y = np.asarray(self.y, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        self.patch_ids = np.asarray(self.patch_ids)
        if self.y.ndim != 2 or self.y.shape[0] < 1 or self.y.shape[1] < 1:
            raise InvalidInputError(f"token matrix must be (p, d) with p, d >= 1, got {self.y.shape}")
        if self.positions.shape != self.y.shape:
            raise InvalidInputError(
                f"positions shape {self.positions.shape} must match tokens {self.y.shape}"
            )
        if self.patch_ids.shape != (self.y.shape[0],):
            raise InvalidInputError("patch_ids must have one entry per token")
        if not np.all(np.isfinite(self.y)) or not np.all(np.isfinite(self.positions)):
            raise InvalidInputError("token and position entries must be finite")
        if len(np.unique(self.patch_ids)) != self.patch_ids.size:
            raise InvalidInputError("patch ordering map must be injective")
        if np.unique(self.positions, axis=0).shape[0] != self.positions.shape[0]:
            raise InvalidInputError("positions must be pairwise distinct")

    @property
    def p(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.y.shape[1]

    def with_y(self, y: np.ndarray) -> "TokenMatrix":
        return replace(self, y=y)


def positional_embedding(n: int, d: int) -> np.ndarray:
    """2-D sinusoidal positions on the n x n patch grid, shape (n^2, d).

    The first half of the channels encodes the patch row, the second half
    the patch column, each on a geometric frequency ladder with alternating
    sine/cosine channels.  Rows are pairwise distinct.
    """
    if d % 2 != 0 or d < 4:
        raise InvalidInputError(f"embedding dimension must be even and >= 4, got {d}")
    half = d // 2

    def ladder(coord: np.ndarray) -> np.ndarray:
        j = np.arange(half)
        freq = 1.0 / (10000.0 ** (2.0 * (j // 2) / half))
        angle = coord[:, None] * freq[None, :]
        out = np.where(j[None, :] % 2 == 0, np.sin(angle), np.cos(angle))
        return out

    rows = np.repeat(np.arange(n), n).astype(float)
    cols = np.tile(np.arange(n), n).astype(float)
    return np.concatenate([ladder(rows), ladder(cols)], axis=1)


def grid_coordinate_positions(n: int, d: int) -> np.ndarray:
    """Positions that embed the raw patch-grid coordinates, zero-padded to width d."""
    if d < 2:
        raise InvalidInputError(f"need d >= 2 to embed 2-D coordinates, got {d}")
    out = np.zeros((n * n, d))
    out[:, 0] = np.repeat(np.arange(n), n) / n
    out[:, 1] = np.tile(np.arange(n), n) / n
    return out


def patch_grid_coords(n: int) -> np.ndarray:
    """Patch centers on the unit square, shape (n^2, 2), row-major order."""
    centers = (np.arange(n) + 0.5) / n
    rows = np.repeat(centers, n)
    cols = np.tile(centers, n)
    return np.stack([rows, cols], axis=1)


def image_tokens(
    img: ImageGrid,
    n: int,
    positions: str = "coords",
    center: bool = False,
    add_positions: bool = False,
) -> TokenMatrix:
    """Patch-content tokens for an image: row i is the flattened patch i.

    ``positions`` chooses the positional rows ("coords" or "sinusoidal");
    ``center`` subtracts the token mean (the cheap re-centering used ahead
    of difference-based kernels); ``add_positions`` adds the positional
    rows into the content.
    """
    patches = patchify(img, n)
    y = np.asarray([patches.restrict(img, i).reshape(-1) for i in range(patches.count)])
    d = y.shape[1]
    if positions == "coords":
        pos = grid_coordinate_positions(n, d)
    elif positions == "sinusoidal":
        pos = positional_embedding(n, d)
    else:
        raise InvalidInputError(f"unknown positions kind {positions!r}")
    if center:
        y = y - y.mean(axis=0, keepdims=True)
    if add_positions:
        y = y + pos
    return TokenMatrix(y=y, positions=pos, patch_ids=np.arange(patches.count))


@dataclass
class AttentionWeights:
    """Projection matrices plus LayerNorm and feed-forward parameters."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    gamma: float = 1.0
    ln_scale: np.ndarray = None  # type: ignore[assignment]
    ln_shift: np.ndarray = None  # type: ignore[assignment]
    ffn_w1: np.ndarray = None  # type: ignore[assignment]
    ffn_b1: np.ndarray = None  # type: ignore[assignment]
    ffn_w2: np.ndarray = None  # type: ignore[assignment]
    ffn_b2: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        d = np.asarray(self.wq).shape[0]
        for name in ("wq", "wk", "wv"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.shape != (d, d) or not np.all(np.isfinite(m)):
                raise InvalidInputError(f"{name} must be a finite {d}x{d} matrix")
            setattr(self, name, m)
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise InvalidInputError(f"gamma must be positive, got {self.gamma}")
        hidden = 4 * d
        defaults = {
            "ln_scale": np.ones(d),
            "ln_shift": np.zeros(d),
            "ffn_w1": np.zeros((d, hidden)),
            "ffn_b1": np.zeros(hidden),
            "ffn_w2": np.zeros((hidden, d)),
            "ffn_b2": np.zeros(d),
        }
        for name, default in defaults.items():
            value = getattr(self, name)
            value = default if value is None else np.asarray(value, dtype=float)
            if not np.all(np.isfinite(value)):
                raise InvalidInputError(f"{name} must be finite")
            setattr(self, name, value)
        if self.ffn_w1.shape[0] != d or self.ffn_w2.shape[1] != d:
            raise InvalidInputError("feed-forward shapes must map d -> hidden -> d")
        if (
            self.ffn_w1.shape[1] != self.ffn_w2.shape[0]
            or self.ffn_b1.shape != (self.ffn_w1.shape[1],)
            or self.ffn_b2.shape != (d,)
        ):
            raise InvalidInputError("feed-forward shapes are inconsistent")
        if self.ln_scale.shape != (d,) or self.ln_shift.shape != (d,):
            raise InvalidInputError("LayerNorm parameters must be d-vectors")

    @property
    def d(self) -> int:
        return self.wq.shape[0]

    @property
    def wv_is_identity(self) -> bool:
        return bool(np.array_equal(self.wv, np.eye(self.d)))

    def qk_gap(self) -> float:
        """Spectral norm of WQ - WK."""
        return float(np.linalg.norm(self.wq - self.wk, 2))

    @classmethod
    def seeded(
        cls,
        d: int,
        seed: int,
        gamma: float = 1.0,
        hidden: int | None = None,
        wv_identity: bool = False,
        qk_band: tuple[float, float] | None = None,
        ffn: bool = True,
    ) -> "AttentionWeights":
        """Gaussian initialization scaled by 1/sqrt(fan-in).

        ``qk_band`` clips the spectral norm of WQ - WK into a fixed band by
        rescaling the difference (WK is re-derived from WQ), the knob the
        propagation-stability scans use.
        """
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(d)
        wq = rng.standard_normal((d, d)) * scale
        wk = rng.standard_normal((d, d)) * scale
        if qk_band is not None:
            lo, hi = qk_band
            diff = wq - wk
            norm = np.linalg.norm(diff, 2)
            target = min(max(norm, lo), hi)
            if norm > 0:
                diff = diff * (target / norm)
            wk = wq - diff
        wv = np.eye(d) if wv_identity else rng.standard_normal((d, d)) * scale
        hidden = 4 * d if hidden is None else hidden
        if ffn:
            ffn_w1 = rng.standard_normal((d, hidden)) / np.sqrt(d)
            ffn_b1 = np.zeros(hidden)
            ffn_w2 = rng.standard_normal((hidden, d)) / np.sqrt(hidden)
            ffn_b2 = np.zeros(d)
        else:
            ffn_w1 = np.zeros((d, hidden))
            ffn_b1 = np.zeros(hidden)
            ffn_w2 = np.zeros((hidden, d))
            ffn_b2 = np.zeros(d)
        return cls(
            wq=wq,
            wk=wk,
            wv=wv,
            gamma=gamma,
            ffn_w1=ffn_w1,
            ffn_b1=ffn_b1,
            ffn_w2=ffn_w2,
            ffn_b2=ffn_b2,
        )


def row_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with the standard max-subtraction overflow guard."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=1, keepdims=True)


def scaled_dot_product(tokens: TokenMatrix, w: AttentionWeights) -> tuple[np.ndarray, np.ndarray]:
    """Standard attention: A = row-softmax(QK^T / sqrt(d)), z = AV.

    Returns (z, A).
    """
    if tokens.d != w.d:
        raise InvalidInputError(f"token width {tokens.d} does not match weights d={w.d}")
    q = tokens.y @ w.wq
    k = tokens.y @ w.wk
    v = tokens.y @ w.wv
    attn = row_softmax(q @ k.T / np.sqrt(tokens.d))
    return attn @ v, attn


def symmetrized_logits(tokens: TokenMatrix, w: AttentionWeights) -> np.ndarray:
    """Logit matrix -gamma <q_i - k_i, q_j - k_j>: symmetric by construction."""
    delta = tokens.y @ (w.wq - w.wk)
    return -w.gamma * (delta @ delta.T)


def symmetrized_attention(tokens: TokenMatrix, w: AttentionWeights) -> tuple[np.ndarray, np.ndarray]:
    """Difference-kernel attention: row-softmax of the symmetric logit matrix."""
    if tokens.d != w.d:
        raise InvalidInputError(f"token width {tokens.d} does not match weights d={w.d}")
    attn = row_softmax(symmetrized_logits(tokens, w))
    return attn @ (tokens.y @ w.wv), attn


def dot_product_shift_identity(q: np.ndarray, k: np.ndarray) -> tuple[float, float]:
    """Both sides of qk^T = (qq^T + kk^T - (q-k)(q-k)^T) / 2 for the caller to compare."""
    q = np.asarray(q, dtype=float)
    k = np.asarray(k, dtype=float)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(k))):
        raise InvalidInputError("vectors must be finite")
    lhs = float(q @ k)
    diff = q - k
    rhs = 0.5 * float(q @ q) + 0.5 * float(k @ k) - 0.5 * float(diff @ diff)
    return lhs, rhs


def layer_norm(x: np.ndarray, scale: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """Per-token normalization followed by learnable column scaling with a shift."""
    mean = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    return (x - mean) / np.sqrt(var + LN_EPS) * scale + shift


def gelu(x: np.ndarray) -> np.ndarray:
    """tanh-form Gaussian error linear unit."""
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x**3)))


def feed_forward(x: np.ndarray, w: AttentionWeights) -> np.ndarray:
    return gelu(x @ w.ffn_w1 + w.ffn_b1) @ w.ffn_w2 + w.ffn_b2


def attention_block(
    tokens: TokenMatrix,
    w: AttentionWeights,
    variant: str = "softmax",
    skip: bool = True,
) -> TokenMatrix:
    """Full block: attention, residual (optional), LN, FFN, residual, LN."""
    if variant == "softmax":
        z, _ = scaled_dot_product(tokens, w)
    elif variant == "symmetrized":
        z, _ = symmetrized_attention(tokens, w)
    else:
        raise InvalidInputError(f"unknown attention variant {variant!r}")
    h = tokens.y + z if skip else z
    out = layer_norm(h + feed_forward(layer_norm(h, w.ln_scale, w.ln_shift), w), w.ln_scale, w.ln_shift)
    return tokens.with_y(out)


def effective_rank(m: np.ndarray, tol: float) -> int:
    """Number of singular values above tol times the leading one."""
    if tol <= 0:
        raise InvalidInputError(f"tolerance must be positive, got {tol}")
    m = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(m)):
        raise InvalidInputError("matrix entries must be finite")
    s = np.linalg.svd(m, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))
