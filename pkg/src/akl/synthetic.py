"""Seeded synthetic images for the scan experiments.

``lowfreq`` samples one fixed smooth function (a sum of at most four
low-frequency sinusoids drawn from the seed) on any grid size, so the same
seed yields consistent discretizations of a single underlying image —
the protocol the scaling scans rely on.  ``lowrank`` builds a sum of
seeded smooth outer products, and ``checkerboard`` a binary pattern.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError
from .grid import ImageGrid


def _lowfreq_components(seed: int, terms: int = 4):
    rng = np.random.default_rng(seed)
    amps = rng.uniform(0.4, 1.0, size=terms)
    freq_x = rng.integers(0, 3, size=terms)
    freq_y = rng.integers(0, 3, size=terms)
    # avoid the fully constant term
    freq_x[freq_x + freq_y == 0] = 1
    phases = rng.uniform(0.0, 2.0 * np.pi, size=terms)
    return amps, freq_x, freq_y, phases


def lowfreq_field(seed: int, coords_x: np.ndarray, coords_y: np.ndarray, terms: int = 4) -> np.ndarray:
    """Evaluate the seeded smooth function on arbitrary unit-square coordinates."""
    amps, freq_x, freq_y, phases = _lowfreq_components(seed, terms)
    value = np.zeros(np.broadcast_shapes(coords_x.shape, coords_y.shape))
    for a, fx, fy, ph in zip(amps, freq_x, freq_y, phases):
        value = value + a * np.sin(2.0 * np.pi * (fx * coords_x + fy * coords_y) + ph)
    return value


def gen_lowfreq(side: int, seed: int, terms: int = 4) -> ImageGrid:
    """Smooth seeded image with intensities in [0.05, 0.95].

    Pixel (i, j) samples the continuum function at ((i+1/2)/N, (j+1/2)/N),
    so refining N refines the same underlying image.
    """
    if side < 2:
        raise InvalidInputError(f"side must be >= 2, got {side}")
    centers = (np.arange(side) + 0.5) / side
    xx, yy = np.meshgrid(centers, centers, indexing="ij")
    raw = lowfreq_field(seed, xx, yy, terms)
    raw = raw - raw.mean()
    peak = np.max(np.abs(raw))
    if peak > 0:
        raw = raw / peak
    return ImageGrid(0.5 + 0.45 * raw)


def _smooth_factor(rng: np.random.Generator, side: int) -> np.ndarray:
    """Smooth 1-D profile: seeded low-frequency cosine mixture on [0, 1]."""
    t = (np.arange(side) + 0.5) / side
    out = np.zeros(side)
    for _ in range(3):
        amp = rng.uniform(0.3, 1.0)
        freq = rng.integers(1, 4)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        out += amp * np.cos(2.0 * np.pi * freq * t + phase)
    out += rng.uniform(0.2, 0.8)
    return out


def gen_lowrank(side: int, rank: int, seed: int) -> ImageGrid:
    """Rank-``rank`` image: sum of seeded smooth outer products, scaled to max |value| = 1.

    The normalization is a pure scaling, so the stated rank is exact.
    """
    if side < 2:
        raise InvalidInputError(f"side must be >= 2, got {side}")
    if rank < 1 or rank > side:
        raise InvalidInputError(f"rank must be in [1, {side}], got {rank}")
    rng = np.random.default_rng(seed)
    u = np.zeros((side, side))
    for _ in range(rank):
        u += np.outer(_smooth_factor(rng, side), _smooth_factor(rng, side))
    peak = np.max(np.abs(u))
    if peak > 0:
        u = u / peak
    return ImageGrid(u)


def gen_checkerboard(side: int, cell: int = 1, seed: int = 0) -> ImageGrid:
    """Binary checkerboard with square cells of the given size (seed unused)."""
    if side < 2:
        raise InvalidInputError(f"side must be >= 2, got {side}")
    if cell < 1 or side % cell != 0:
        raise InvalidInputError(f"cell size {cell} must divide side {side}")
    idx = np.arange(side) // cell
    return ImageGrid(((idx[:, None] + idx[None, :]) % 2).astype(float))


def gen_synthetic(kind: str, side: int, seed: int, **params) -> ImageGrid:
    """Dispatch by kind: 'lowfreq' (terms), 'lowrank' (rank), 'checkerboard' (cell)."""
    if kind == "lowfreq":
        img = gen_lowfreq(side, seed, terms=int(params.pop("terms", 4)))
    elif kind == "lowrank":
        img = gen_lowrank(side, rank=int(params.pop("rank", 1)), seed=seed)
    elif kind == "checkerboard":
        img = gen_checkerboard(side, cell=int(params.pop("cell", 1)), seed=seed)
    else:
        raise InvalidInputError(f"unknown synthetic kind {kind!r}")
    if params:
        raise InvalidInputError(f"unknown parameters for kind {kind!r}: {sorted(params)}")
    return img


def fixture_2x2() -> ImageGrid:
    """The bundled 2x2 fixture [[1,0],[0,0]] with unit weights."""
    return ImageGrid(np.array([[1.0, 0.0], [0.0, 0.0]]))
