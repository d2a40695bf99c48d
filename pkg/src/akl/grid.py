"""Image grids, graph total-variation seminorm, and non-overlapping patch decompositions.

An image is an N x N pixel field (1 or 3 channels) carrying a 4-neighbor
graph with symmetric nonnegative edge weights.  The total-variation
seminorm sums, over every pixel, the square root of the weighted squared
differences to its existing neighbors; boundary pixels simply have fewer
neighbors.  Multi-channel images are reduced channel-wise and summed.

Patchification splits the grid into n x n congruent, pairwise-disjoint
patches in row-major order.  Zero-padded extension of the patches sums
back to the original image exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidInputError, InvalidPartitionError


@dataclass
class ImageGrid:
    """Square pixel field with 4-neighbor edge weights.

    pixels has shape (N, N, c) with c in {1, 3}; a 2-D array is promoted to
    one channel.  Edge weights are stored once per undirected edge:
    ``w_horizontal`` has shape (N, N-1) for edges (i,j)-(i,j+1) and
    ``w_vertical`` has shape (N-1, N) for edges (i,j)-(i+1,j), which makes
    the weight field symmetric by construction.  Intensities are
    conventionally in [0, 1]; only finiteness is enforced.
    """

    pixels: np.ndarray
    w_horizontal: np.ndarray = field(default=None)  # type: ignore[assignment]
    w_vertical: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels, dtype=float)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[0] != px.shape[1]:
            raise InvalidInputError(f"pixels must be square (N, N, c), got shape {px.shape}")
        n = px.shape[0]
        if n < 2:
            raise InvalidInputError(f"grid side must be >= 2, got {n}")
        if px.shape[2] not in (1, 3):
            raise InvalidInputError(f"channel count must be 1 or 3, got {px.shape[2]}")
        if not np.all(np.isfinite(px)):
            raise InvalidInputError("pixel values must be finite")
        self.pixels = px

        if self.w_horizontal is None:
            self.w_horizontal = np.ones((n, n - 1))
        if self.w_vertical is None:
            self.w_vertical = np.ones((n - 1, n))
        self.w_horizontal = np.asarray(self.w_horizontal, dtype=float)
        self.w_vertical = np.asarray(self.w_vertical, dtype=float)
        if self.w_horizontal.shape != (n, n - 1) or self.w_vertical.shape != (n - 1, n):
            raise InvalidInputError(
                f"edge weight shapes must be {(n, n - 1)} and {(n - 1, n)}, "
                f"got {self.w_horizontal.shape} and {self.w_vertical.shape}"
            )
        for w in (self.w_horizontal, self.w_vertical):
            if not np.all(np.isfinite(w)) or np.any(w < 0):
                raise InvalidInputError("edge weights must be finite and nonnegative")

    @property
    def side(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def channel(self, c: int) -> np.ndarray:
        return self.pixels[:, :, c]


def bv_seminorm(img: ImageGrid) -> float:
    """Graph total-variation seminorm of an image.

    Per pixel, sums the weighted squared differences to every neighbor on
    the 4-neighbor grid, takes the square root, and sums over all pixels.
    Each undirected edge therefore contributes to both endpoints' local
    terms.  Channels are handled independently and their seminorms summed.
    Zero exactly iff the image is constant per channel (on the connected
    grid).
    """
    total = 0.0
    for c in range(img.channels):
        u = img.channel(c)
        local = np.zeros_like(u)
        dh = img.w_horizontal * (u[:, 1:] - u[:, :-1]) ** 2
        local[:, :-1] += dh
        local[:, 1:] += dh
        dv = img.w_vertical * (u[1:, :] - u[:-1, :]) ** 2
        local[:-1, :] += dv
        local[1:, :] += dv
        total += float(np.sum(np.sqrt(local)))
    return total


@dataclass(frozen=True)
class Patchification:
    """Equal-sized n x n decomposition of an N x N grid, N = n * patch_size.

    Patches are indexed in row-major order: patch i sits at patch-row
    ``i // n`` and patch-column ``i % n``.  ``selection``, when present,
    lists selected patch indices in patch-row order.
    """

    n: int
    patch_size: int
    selection: tuple[int, ...] | None = None

    @property
    def side(self) -> int:
        return self.n * self.patch_size

    @property
    def count(self) -> int:
        return self.n * self.n

    def bounds(self, i: int) -> tuple[int, int, int, int]:
        """Pixel bounds (row0, row1, col0, col1) of patch i, half-open."""
        if not 0 <= i < self.count:
            raise InvalidInputError(f"patch index {i} out of range [0, {self.count})")
        r, c = divmod(i, self.n)
        s = self.patch_size
        return r * s, (r + 1) * s, c * s, (c + 1) * s

    def restrict(self, img: ImageGrid, i: int) -> np.ndarray:
        """Pixel content of patch i, shape (patch_size, patch_size, channels)."""
        if img.side != self.side:
            raise InvalidInputError(f"image side {img.side} does not match partition side {self.side}")
        r0, r1, c0, c1 = self.bounds(i)
        return img.pixels[r0:r1, c0:c1, :].copy()

    def split(self, img: ImageGrid) -> list[np.ndarray]:
        """All patches in row-major order."""
        return [self.restrict(img, i) for i in range(self.count)]


def patchify(img: ImageGrid, n: int) -> Patchification:
    """Decompose an image into n x n congruent non-overlapping patches."""
    if n < 1 or img.side % n != 0:
        raise InvalidPartitionError(f"patch count {n} does not divide grid side {img.side}")
    return Patchification(n=n, patch_size=img.side // n)


def select_patches(patches: Patchification, seed: int) -> Patchification:
    """Select one patch per patch-row with column indices forming a permutation.

    The selection has exactly n patches; resampling with the same seed
    reproduces it.  Fails if a selection is already present.
    """
    if patches.selection is not None:
        raise InvalidInputError("partition already carries a selection")
    rng = np.random.default_rng(seed)
    columns = rng.permutation(patches.n)
    chosen = tuple(int(row * patches.n + columns[row]) for row in range(patches.n))
    return replace(patches, selection=chosen)


def extension_sum(patches: Patchification, patch_values: list[np.ndarray]) -> ImageGrid:
    """Zero-pad each patch into the full grid and sum.

    Inverse of ``Patchification.split``: feeding the split of an image
    back reproduces that image bit-exactly.
    """
    if len(patch_values) != patches.count:
        raise InvalidInputError(f"expected {patches.count} patch arrays, got {len(patch_values)}")
    s = patches.patch_size
    first = np.asarray(patch_values[0], dtype=float)
    if first.ndim == 2:
        first = first[:, :, None]
    channels = first.shape[2]
    out = np.zeros((patches.side, patches.side, channels))
    for i, values in enumerate(patch_values):
        block = np.asarray(values, dtype=float)
        if block.ndim == 2:
            block = block[:, :, None]
        if block.shape != (s, s, channels):
            raise InvalidInputError(
                f"patch {i} has shape {block.shape}, expected {(s, s, channels)}"
            )
        r0, r1, c0, c1 = patches.bounds(i)
        out[r0:r1, c0:c1, :] += block
    return ImageGrid(out)


def intra_patch_bv_sum(img: ImageGrid, patches: Patchification) -> float:
    """Sum of per-patch seminorms computed with intra-patch edges only.

    Never exceeds the full-image seminorm: dropping the cross-patch edges
    can only shrink each pixel's local difference sum.
    """
    if patches.patch_size == 1:
        return 0.0
    total = 0.0
    for i in range(patches.count):
        r0, r1, c0, c1 = patches.bounds(i)
        piece = ImageGrid(
            img.pixels[r0:r1, c0:c1, :],
            img.w_horizontal[r0:r1, c0 : c1 - 1],
            img.w_vertical[r0 : r1 - 1, c0:c1],
        )
        total += bv_seminorm(piece)
    return total
