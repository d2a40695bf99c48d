"""Experiment configuration schema and the default structural geometry."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

from .errors import InvalidConfigurationError

EXPERIMENTS = (
    "bv",
    "patchify",
    "lowrank",
    "kernel",
    "stability",
    "fredholm",
    "interpolation",
    "all",
)

# per-experiment parameter whitelist with defaults; unknown keys are rejected
PARAM_SCHEMA: dict[str, dict[str, object]] = {
    "bv": {"image_side": 64, "image_seed": 1},
    "patchify": {"image_side": 224, "n": 14},
    "lowrank": {
        "image_side": 64,
        "n_values": [4],
        "r_values": [1, 2],
        "noise_levels": [0.0, 0.5, 2.0],
        "trials": 60,
        "iters": 60,
        "exact_trials": 100,
    },
    "kernel": {"n": 8, "d": 16, "gamma": 1.0, "scan_n": [4, 8, 16], "image_side": 64},
    "stability": {
        "n_values": [4, 8, 16, 32],
        "seeds": 20,
        "T": 8,
        "gamma": 1.0,
        "image_side": 64,
        "image_seed": 0,
    },
    "fredholm": {"grid_n": 8, "gamma": 1.0, "beta": 0.1, "d": 2, "el_grid_n": 4, "el_ridge": 0.5},
    "interpolation": {
        "n_values": [4, 8, 16, 32],
        "mask_ratio": 0.75,
        "image_side": 64,
        "seeds": 10,
        "weight_cases": 100,
    },
    "all": {},
}


@dataclass(frozen=True)
class DefaultGeometry:
    """Structural defaults for the full-scale configuration."""

    image_side: int = 224
    patches_per_axis: int = 14
    channels: int = 3
    encoder_width: int = 768
    decoder_width: int = 512
    mask_ratio: float = 0.75

    @property
    def patch_count(self) -> int:
        return self.patches_per_axis**2

    @property
    def patch_size(self) -> int:
        return self.image_side // self.patches_per_axis

    @property
    def visible_patches(self) -> int:
        return self.patch_count - int(round(self.mask_ratio * self.patch_count))

    def self_test(self) -> dict[str, bool]:
        """Internal-consistency checks of the default geometry."""
        return {
            "patch_count_196": self.patch_count == 196,
            "patch_size_16": self.patch_size == 16,
            "encoder_width_matches_patch_pixels": self.encoder_width
            == self.patch_size * self.patch_size * self.channels,
            "decoder_width_512": self.decoder_width == 512,
            "visible_patches_49": self.visible_patches == 49,
        }


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    params: dict
    output_dir: str | None = None

    def canonical(self) -> str:
        return json.dumps(
            {"experiment": self.experiment, "seed": self.seed, "params": self.params},
            sort_keys=True,
        )

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode("ascii")).hexdigest()[:16]


def validate_config(raw: dict) -> ExperimentConfig:
    """Strict schema validation: unknown keys anywhere are rejected."""
    if not isinstance(raw, dict):
        raise InvalidConfigurationError("config must be a JSON object")
    allowed_top = {"experiment", "seed", "params", "output_dir"}
    unknown = set(raw) - allowed_top
    if unknown:
        raise InvalidConfigurationError(f"unknown config keys: {sorted(unknown)}")
    experiment = raw.get("experiment")
    if experiment not in EXPERIMENTS:
        raise InvalidConfigurationError(
            f"experiment must be one of {EXPERIMENTS}, got {experiment!r}"
        )
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise InvalidConfigurationError(f"seed must be an integer, got {seed!r}")
    params = raw.get("params", {})
    if not isinstance(params, dict):
        raise InvalidConfigurationError("params must be an object")
    schema = PARAM_SCHEMA[experiment]
    unknown_params = set(params) - set(schema)
    if unknown_params:
        raise InvalidConfigurationError(
            f"unknown params for {experiment!r}: {sorted(unknown_params)}"
        )
    merged = {**schema, **params}
    output_dir = raw.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise InvalidConfigurationError("output_dir must be a string")
    return ExperimentConfig(experiment=experiment, seed=seed, params=merged, output_dir=output_dir)
