"""Flat JSON bundles for weights and token matrices, and CSV table output.

JSON numbers are written by Python's shortest round-trip ``repr``, so
arrays reload bit-exactly.  Every bundle carries a ``shapes`` header and
a ``kind`` tag.  CSV tables are plain comma-separated text with one
header row; floats use ``repr`` so identical runs produce identical
bytes.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .attention import AttentionWeights, TokenMatrix
from .errors import InvalidInputError

_WEIGHT_FIELDS = ("wq", "wk", "wv", "ln_scale", "ln_shift", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2")


def _pack(arrays: dict[str, np.ndarray]) -> dict:
    return {
        "shapes": {name: list(a.shape) for name, a in arrays.items()},
        "data": {name: a.reshape(-1).tolist() for name, a in arrays.items()},
    }


def _unpack(bundle: dict) -> dict[str, np.ndarray]:
    out = {}
    for name, shape in bundle["shapes"].items():
        flat = np.asarray(bundle["data"][name], dtype=float)
        out[name] = flat.reshape(shape)
    return out


def save_weights(w: AttentionWeights, path: str | os.PathLike) -> None:
    bundle = _pack({name: getattr(w, name) for name in _WEIGHT_FIELDS})
    bundle["kind"] = "attention-weights"
    bundle["gamma"] = w.gamma
    with open(path, "w", encoding="ascii") as fh:
        json.dump(bundle, fh)


def load_weights(path: str | os.PathLike) -> AttentionWeights:
    with open(path, "r", encoding="ascii") as fh:
        bundle = json.load(fh)
    if bundle.get("kind") != "attention-weights":
        raise InvalidInputError(f"{path}: not an attention-weights bundle")
    arrays = _unpack(bundle)
    return AttentionWeights(gamma=bundle["gamma"], **arrays)


def save_tokens(tokens: TokenMatrix, path: str | os.PathLike) -> None:
    bundle = _pack({"y": tokens.y, "positions": tokens.positions})
    bundle["kind"] = "token-matrix"
    bundle["patch_ids"] = [int(i) for i in tokens.patch_ids]
    with open(path, "w", encoding="ascii") as fh:
        json.dump(bundle, fh)


def load_tokens(path: str | os.PathLike) -> TokenMatrix:
    with open(path, "r", encoding="ascii") as fh:
        bundle = json.load(fh)
    if bundle.get("kind") != "token-matrix":
        raise InvalidInputError(f"{path}: not a token-matrix bundle")
    arrays = _unpack(bundle)
    return TokenMatrix(
        y=arrays["y"], positions=arrays["positions"], patch_ids=np.asarray(bundle["patch_ids"])
    )


def format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path: str | os.PathLike, header: list[str], rows: list[dict]) -> None:
    """One header row, then ``rows`` projected onto ``header`` in order."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format_cell(row[name]) for name in header) + "\n")


def write_matrix_csv(path: str | os.PathLike, matrix: np.ndarray) -> None:
    """Bare numeric matrix dump, one text row per matrix row."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    with open(path, "w", encoding="ascii") as fh:
        for row in matrix:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
