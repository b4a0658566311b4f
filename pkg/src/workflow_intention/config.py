"""Run configuration: defaults, strict validation, and loading.

A config is a plain nested dict mirroring DEFAULT_CONFIG. Loading merges
user values over the defaults and rejects unknown keys, wrong value types,
and malformed structures so that every output can embed a trustworthy echo.
"""

from __future__ import annotations

import copy
import json


class ConfigError(ValueError):
    """Bad run configuration."""


DEFAULT_CONFIG: dict = {
    "seed": 0,
    "dims": {
        "unified": 32,
        "text": 32,
        "image": 48,
        "patch_size": 4,
    },
    "stacks": {
        "artefact": {"n_layers": 2, "n_heads": 4, "ffn_inner": 64, "activation": "gelu"},
        "fusion": {"n_layers": 2, "n_heads": 4, "ffn_inner": 64, "activation": "geglu"},
        "decoder": {"n_layers": 2, "n_heads_self": 4, "n_heads_cross": 4,
                    "ffn_inner": 64, "activation": "geglu"},
    },
    "classifier": {"hidden": 64, "activation": "relu"},
    "stop_head": {"hidden": 16},
    "family": {
        "input": ["invoice", "receipt", "order", "claim"],
        "process": ["review", "validation", "extraction", "approval"],
        "output": ["report", "summary", "ledger", "export"],
        "max_exact": 3,
    },
    "stopping": {"similarity_threshold": 0.9, "max_steps": 5},
    "loss": {
        "steepness": 1.0,
        "midpoint": 0.5,
        "alpha_coverage": 0.6,
        "alpha_overlength": 0.2,
        "alpha_underlength": 0.2,
        "match_threshold": 0.6,
        "aux_signal_weight": 1.0,
    },
    "train": {
        "phase1_stage1": {"epochs": 500, "step_size": 0.01, "early_stop": True},
        "phase1_stage2": {"epochs": 500, "step_size": 0.01, "early_stop": True},
        "phase2": {"epochs": 300, "step_size": 0.01, "early_stop": True},
    },
    "corpus": {
        "stage1": {"text": 3, "image": 2, "document": 3},
        "stage2_sets": {"text": 2, "image": 2, "document": 2},
        "set_size_min": 1,
        "set_size_max": 2,
        "phase2_samples": 4,
        "intentions_min": 1,
        "intentions_max": 1,
        "image_height": 16,
        "image_width": 16,
        "page_height": 24,
        "page_width": 24,
    },
    "paths": {
        "corpus_dir": "corpus",
    },
}


def _merge(default, override, path: str):
    if isinstance(default, dict):
        if not isinstance(override, dict):
            raise ConfigError(f"{path or 'config'}: expected an object")
        merged = {}
        for key, dval in default.items():
            if key in override:
                merged[key] = _merge(dval, override[key], f"{path}.{key}" if path else key)
            else:
                merged[key] = copy.deepcopy(dval)
        unknown = set(override) - set(default)
        if unknown:
            raise ConfigError(f"{path or 'config'}: unknown keys {sorted(unknown)}")
        return merged
    if isinstance(default, bool):
        if not isinstance(override, bool):
            raise ConfigError(f"{path}: expected a boolean")
        return override
    if isinstance(default, (int, float)):
        if isinstance(override, bool) or not isinstance(override, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return type(default)(override) if isinstance(default, float) else override
    if isinstance(default, str):
        if not isinstance(override, str):
            raise ConfigError(f"{path}: expected a string")
        return override
    if isinstance(default, list):
        if not isinstance(override, list):
            raise ConfigError(f"{path}: expected a list")
        return copy.deepcopy(override)
    raise ConfigError(f"{path}: unsupported config value")


def make_config(overrides: dict | None = None) -> dict:
    """Defaults merged with overrides; unknown keys rejected."""
    return _merge(DEFAULT_CONFIG, overrides or {}, "")


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    return make_config(raw)
