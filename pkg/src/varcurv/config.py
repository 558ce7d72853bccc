"""Experiment configuration: defaults, validation, overrides, hashing.

A config file is YAML with the top-level keys ``experiment``, ``seed``,
``output_dir``, ``landscape`` and ``params``.  Every key has a default and
unknown keys are rejected with their dotted path.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path

import yaml

from .errors import ParameterError

__all__ = [
    "ConfigError",
    "EXPERIMENTS",
    "DEFAULTS",
    "load_config",
    "resolve_config",
    "apply_override",
    "config_digest",
    "output_dir_for",
    "dump_config",
    "OUTPUT_ROOT_ENV",
]

OUTPUT_ROOT_ENV = "VARCURV_OUTPUT_ROOT"
TOP_KEYS = ("experiment", "seed", "output_dir", "landscape", "params")


class ConfigError(ParameterError):
    """Invalid configuration; ``key`` is the dotted path at fault."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


_TWO_BLOCK = {"kind": "two_block", "D": 128, "d": 16, "lam_hi": 1.0, "lam_lo": 0.05}

EXPERIMENTS = {
    "es_run": "single or replicated ES runs with trajectory CSV and metadata sidecar (smoke default)",
    "ou_compare": "simulated vs closed-form OU reward curves over several N (rise-then-decay figure)",
    "spectroscopy": "exact plateau-gap vs kappa lines and slopes for several curvature ranks",
    "clss": "checkpointed local slope spectroscopy with locality/settling gates",
    "slq_metrics": "stochastic Lanczos quadrature spectral metrics of the landscape curvature",
    "double_well": "double-well hop statistics, histogram and Kramers prediction",
    "best_of_n": "perturbation batches, best-of-N curves, N90, tail quantile, p(improve)",
}

DEFAULTS = {
    "es_run": {
        "landscape": {"kind": "two_block", "D": 16, "d": 4, "lam_hi": 1.0, "lam_lo": 0.05},
        "params": {"alpha": 0.05, "sigma": 0.1, "N": 32, "T": 200, "G": 1, "antithetic": True, "baseline": False,
                   "estimator": "es", "replicates": 4, "x0": None, "x0_stiff": 1.0, "x0_flat": 0.0,
                   "record_every": 1},
    },
    "ou_compare": {
        "landscape": dict(_TWO_BLOCK),
        "params": {"alpha": 0.1, "sigma": 1.0, "Ns": [8, 32, 128], "T": 600, "replicates": 64, "x0_stiff": 1.0,
                   "x0_flat": 0.0, "se_tolerance": 3.0, "min_fraction": 0.95, "tail": 100,
                   "x_axis": "iterations"},
    },
    "spectroscopy": {
        "landscape": dict(_TWO_BLOCK),
        "params": {"alpha": 0.1, "sigma": 1.0, "Ns": [8, 16, 32, 64, 128, 256], "ranks": [4, 16, 64],
                   "rank_D": 128, "rank_lam": 1.0},
    },
    "clss": {
        "landscape": dict(_TWO_BLOCK),
        "params": {"sigma": 1.0, "alphas": [0.1], "Ns": [8, 16, 32, 64, 128], "T": 5000, "w": 2000, "R": 32,
                   "tau_loc": None, "tau_stat": None, "R_min": 8, "fit_count": 4, "r2_min": 0.9,
                   "accept_min": 0.5, "loc_curvature": None, "theta_star": None},
    },
    "slq_metrics": {
        "landscape": {"kind": "quadratic", "eigenvalues": [[1.0, 16], [0.001, 112]]},
        "params": {"theta": None, "sigma_fd": 1e-3, "s": 20, "m": 40, "seeds": 5, "probe": "rademacher",
                   "operator": "curvature"},
    },
    "double_well": {
        "landscape": {"kind": "double_well", "lam_dw": 1.0, "a": 1.0, "D": 1},
        "params": {"alpha": 0.05, "ratio": 5.0, "sigma": None, "N": 1, "T": 10000, "replicates": 500,
                   "hysteresis": 0.5, "start": -1.0, "record_replicates": 4, "record_every": None, "bins": 40,
                   "mfpt": False, "mfpt_max_iters": None},
    },
    "best_of_n": {
        "landscape": {"kind": "quadratic", "eigenvalues": [[1.0, 4], [0.0, 12]]},
        "params": {"theta": [0.5], "sigma": 0.2, "M": 240, "S": 8, "N_list": [5, 10, 20, 30, 50],
                   "subset_samples": 2000, "bootstrap": 1000, "level": 0.95, "group_size": 1, "R0": None},
    },
}

# value checks by parameter name
_POS_INT = {"N", "T", "G", "replicates", "record_every", "R", "R_min", "fit_count", "w", "rank_D", "s", "m",
            "seeds", "M", "S", "bins", "bootstrap", "group_size", "tail",
            "mfpt_max_iters"}
_NONNEG_INT = {"subset_samples", "record_replicates"}
_POS_FLOAT = {"alpha", "sigma", "se_tolerance", "rank_lam", "sigma_fd", "ratio", "tau_loc", "tau_stat",
              "loc_curvature", "hysteresis"}
_POS_INT_LIST = {"Ns", "ranks", "N_list"}
_POS_FLOAT_LIST = {"alphas"}
_CHOICES = {"estimator": ("es", "noisy_gradient"), "x_axis": ("iterations", "evaluations"),
            "probe": ("rademacher", "gaussian"), "operator": ("curvature", "hessian")}


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_value(key, name, v):
    if v is None:
        return
    if name in _POS_INT and not (_is_int(v) and v >= 1):
        raise ConfigError(key, f"must be a positive integer, got {v!r}")
    if name in _NONNEG_INT and not (_is_int(v) and v >= 0):
        raise ConfigError(key, f"must be a nonnegative integer, got {v!r}")
    if name in _POS_FLOAT and not (_is_num(v) and v > 0):
        raise ConfigError(key, f"must be a positive number, got {v!r}")
    if name in _POS_INT_LIST and not (isinstance(v, list) and v and all(_is_int(x) and x >= 1 for x in v)):
        raise ConfigError(key, f"must be a nonempty list of positive integers, got {v!r}")
    if name in _POS_FLOAT_LIST and not (isinstance(v, list) and all(_is_num(x) and x > 0 for x in v)):
        raise ConfigError(key, f"must be a list of positive numbers, got {v!r}")
    if name in _CHOICES and v not in _CHOICES[name]:
        raise ConfigError(key, f"must be one of {list(_CHOICES[name])}, got {v!r}")
    if name in ("antithetic", "baseline", "mfpt") and not isinstance(v, bool):
        raise ConfigError(key, f"must be true or false, got {v!r}")
    if name == "level" and not (_is_num(v) and 0 < v < 1):
        raise ConfigError(key, f"must lie in (0, 1), got {v!r}")
    if name == "min_fraction" and not (_is_num(v) and 0 < v <= 1):
        raise ConfigError(key, f"must lie in (0, 1], got {v!r}")
    if name in ("r2_min", "accept_min") and not (_is_num(v) and 0 <= v <= 1):
        raise ConfigError(key, f"must lie in [0, 1], got {v!r}")
    if name == "start" and v not in (-1, 1, -1.0, 1.0):
        raise ConfigError(key, f"must be -1 or 1, got {v!r}")


def load_config(path) -> dict:
    """Parse a YAML config file; an empty file yields ``{}``."""
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}" if mark is not None else "config"
        raise ConfigError(where, f"YAML syntax error: {getattr(exc, 'problem', exc)}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("", "top level of the config must be a mapping")
    return data


def apply_override(cfg: dict, assignment: str) -> dict:
    """Apply ``dotted.key=value``; the value is parsed as YAML."""
    if "=" not in assignment:
        raise ConfigError(assignment, "override must look like dotted.key=value")
    path, raw = assignment.split("=", 1)
    keys = path.strip().split(".")
    value = yaml.safe_load(raw) if raw.strip() else None
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(path, "cannot descend into a non-mapping value")
    node[keys[-1]] = value
    return cfg


def resolve_config(raw: dict) -> dict:
    """Fill defaults and validate; returns a new dict."""
    raw = copy.deepcopy(raw or {})
    unknown = set(raw) - set(TOP_KEYS)
    if unknown:
        raise ConfigError(sorted(unknown)[0], f"unknown top-level key (allowed: {list(TOP_KEYS)})")
    kind = raw.get("experiment", "es_run")
    if kind not in EXPERIMENTS:
        raise ConfigError("experiment", f"unknown experiment {kind!r}; choose from {sorted(EXPERIMENTS)}")
    seed = raw.get("seed", 0)
    if not _is_int(seed) or not 0 <= seed < 2**64:
        raise ConfigError("seed", f"must be an integer in [0, 2**64), got {seed!r}")
    out_dir = raw.get("output_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        raise ConfigError("output_dir", "must be a path string")

    base = DEFAULTS[kind]
    land_raw = raw.get("landscape") or {}
    if not isinstance(land_raw, dict):
        raise ConfigError("landscape", "must be a mapping")
    if "kind" in land_raw and land_raw["kind"] != base["landscape"]["kind"]:
        landscape = dict(land_raw)
    else:
        landscape = {**base["landscape"], **land_raw}
    from .landscape import landscape_from_config

    try:
        landscape_from_config(landscape)
    except ParameterError as exc:
        raise ConfigError("landscape", str(exc)) from None
    except (KeyError, TypeError) as exc:
        raise ConfigError("landscape", f"missing or malformed field {exc}") from None

    p_raw = raw.get("params") or {}
    if not isinstance(p_raw, dict):
        raise ConfigError("params", "must be a mapping")
    unknown = set(p_raw) - set(base["params"])
    if unknown:
        raise ConfigError(f"params.{sorted(unknown)[0]}", f"unknown parameter for {kind}")
    params = {**copy.deepcopy(base["params"]), **p_raw}
    for name, v in params.items():
        _check_value(f"params.{name}", name, v)
    return {"experiment": kind, "seed": int(seed), "output_dir": out_dir, "landscape": landscape, "params": params}


def config_digest(cfg: dict) -> str:
    """Hash of the resolved config, independent of where outputs go."""
    body = {k: v for k, v in cfg.items() if k != "output_dir"}
    blob = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def output_dir_for(cfg: dict) -> Path:
    if cfg.get("output_dir"):
        return Path(cfg["output_dir"])
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "varcurv_runs"))
    return root / f"{cfg['experiment']}_{config_digest(cfg)}_s{cfg['seed']}"


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=None)
