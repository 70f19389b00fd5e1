"""Strict JSON experiment configuration.

One schema is shared by every subcommand; a config file may carry any subset
of the per-command sections. Unknown fields anywhere are hard errors. The
point is to make a typo in a tolerance or a model parameter fail loudly
instead of silently running a different experiment.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import ValidationError
from .denoiser import EpsilonModel, GaussianFieldModel, GmmPixelModel
from .gridio import read_grid
from .schedule import NoiseSchedule, linear_schedule

__all__ = ["ConfigError", "load_config", "build_schedule", "build_model"]

SCHEMA_VERSION = 1

_MISSING = object()


class ConfigError(Exception):
    """Configuration file problem; the message names the offending path."""


def _type_name(value) -> str:
    return type(value).__name__


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


_CHECKS = {
    "int": (_is_int, "an integer"),
    "number": (_is_number, "a number"),
    "string": (lambda v: isinstance(v, str), "a string"),
    "bool": (lambda v: isinstance(v, bool), "a boolean"),
    "number_array": (
        lambda v: isinstance(v, list) and len(v) > 0 and all(_is_number(x) for x in v),
        "a non-empty array of numbers",
    ),
    "int_array_or_null": (
        lambda v: v is None or (isinstance(v, list) and all(_is_int(x) for x in v)),
        "an array of integers or null",
    ),
    "int_or_null": (lambda v: v is None or _is_int(v), "an integer or null"),
    "string_or_null": (lambda v: v is None or isinstance(v, str), "a string or null"),
    "number_or_string": (
        lambda v: _is_number(v) or isinstance(v, str),
        "a number or a string",
    ),
    "object": (lambda v: isinstance(v, dict), "an object"),
}


def _check_fields(section: dict, fields: dict, path: str) -> dict:
    """Validate types, apply defaults, reject unknown keys. Returns a copy."""
    unknown = set(section) - set(fields)
    if unknown:
        name = sorted(unknown)[0]
        raise ConfigError(f"unknown field '{path}.{name}'")
    out = {}
    for key, (kind, default) in fields.items():
        if key in section:
            value = section[key]
            ok, want = _CHECKS[kind]
            if not ok(value):
                raise ConfigError(
                    f"'{path}.{key}' must be {want}, got {_type_name(value)}"
                )
            out[key] = value
        elif default is _MISSING:
            raise ConfigError(f"missing required field '{path}.{key}'")
        else:
            out[key] = default
    return out


_SCHEDULE_FIELDS = {
    "T": ("int", _MISSING),
    "beta_start": ("number", 1e-4),
    "beta_end": ("number", 0.02),
}

_MODEL_COMMON = {
    "type": ("string", _MISSING),
    "height": ("int", _MISSING),
    "width": ("int", _MISSING),
    "channels": ("int", 1),
}

_MODEL_FIELD_FIELDS = dict(
    _MODEL_COMMON,
    mean=("number", 0.5),
    marginal_variance=("number", 0.04),
    correlation_length=("number", 2.0),
    covariance_file=("string_or_null", None),
)

_MODEL_GMM_FIELDS = dict(
    _MODEL_COMMON,
    weights=("number_array", _MISSING),
    means=("number_array", _MISSING),
    variances=("number_array", _MISSING),
)

_SAMPLE_FIELDS = {"count": ("int", 1)}

_FUZZY_FIELDS = {
    "image": ("string", _MISSING),
    "map": ("number_or_string", _MISSING),
    "count": ("int", 1),
    "J": ("int", 5),
    "clamp_map": ("bool", False),
}

_STATS_FIELDS = {
    "v_count": ("int", 1000),
    "depths": ("int_array_or_null", None),
    "reps": ("int", 1),
}

_ATTEND_FIELDS = {
    "image": ("string", _MISSING),
    "stats_dir": ("string", _MISSING),
    "reps": ("int", 1),
}

_DEGRADE_FIELDS = {
    "image": ("string_or_null", None),
    "side_min": ("int_or_null", None),
    "side_max": ("int_or_null", None),
    "sigma_low": ("number", 4.0),
    "sigma_high": ("number", 8.0),
}

_EVAL_FIELDS = {
    "trials": ("int", 20),
    "J": ("int", 2),
    "depths": ("int_array_or_null", None),
    "reps": ("int", 1),
    "v_count": ("int", 200),
    "baseline_depth": ("int_or_null", None),
    "degrade_enabled": ("bool", True),
    "sigma_low": ("number", 4.0),
    "sigma_high": ("number", 8.0),
    "side_min": ("int_or_null", None),
    "side_max": ("int_or_null", None),
    "record_artifacts": ("bool", False),
}

_SECTION_FIELDS = {
    "sample": _SAMPLE_FIELDS,
    "fuzzy": _FUZZY_FIELDS,
    "stats": _STATS_FIELDS,
    "attend": _ATTEND_FIELDS,
    "degrade": _DEGRADE_FIELDS,
    "eval": _EVAL_FIELDS,
}


def load_config(path) -> dict:
    """Parse and validate a config file; returns the normalized dict.

    The result always carries 'schedule' and 'model' plus whichever command
    sections the file defined (with defaults filled in).
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")

    allowed = {"schema_version", "schedule", "model", *_SECTION_FIELDS}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown field '{sorted(unknown)[0]}'")

    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r}, expected {SCHEMA_VERSION}")

    for required in ("schedule", "model"):
        if required not in raw:
            raise ConfigError(f"missing required section '{required}'")
        if not isinstance(raw[required], dict):
            raise ConfigError(f"'{required}' must be an object")

    out: dict = {"schema_version": SCHEMA_VERSION}
    out["schedule"] = _check_fields(raw["schedule"], _SCHEDULE_FIELDS, "schedule")

    model_raw = raw["model"]
    mtype = model_raw.get("type")
    if mtype == "gaussian_field":
        out["model"] = _check_fields(model_raw, _MODEL_FIELD_FIELDS, "model")
    elif mtype == "gmm_pixel":
        out["model"] = _check_fields(model_raw, _MODEL_GMM_FIELDS, "model")
    elif mtype is None:
        raise ConfigError("missing required field 'model.type'")
    else:
        raise ConfigError(
            f"'model.type' must be 'gaussian_field' or 'gmm_pixel', got {mtype!r}"
        )

    for name, fields in _SECTION_FIELDS.items():
        if name in raw:
            if not isinstance(raw[name], dict):
                raise ConfigError(f"'{name}' must be an object")
            out[name] = _check_fields(raw[name], fields, name)
    return out


def require_section(cfg: dict, name: str) -> dict:
    if name not in cfg:
        raise ConfigError(f"config has no '{name}' section, required by this command")
    return cfg[name]


def section_defaults(name: str) -> dict:
    """Fully-defaulted section for commands that can run without one."""
    fields = _SECTION_FIELDS[name]
    missing = [k for k, (_, d) in fields.items() if d is _MISSING]
    if missing:
        raise ConfigError(
            f"config has no '{name}' section, required by this command"
        )
    return {k: d for k, (_, d) in fields.items()}


def build_schedule(cfg: dict) -> NoiseSchedule:
    sched = cfg["schedule"]
    try:
        return linear_schedule(sched["T"], sched["beta_start"], sched["beta_end"])
    except ValidationError as exc:
        raise ConfigError(f"schedule: {exc}") from exc


def build_model(cfg: dict, base_dir=None) -> EpsilonModel:
    """Construct the oracle named by the config's model section.

    covariance_file paths resolve relative to base_dir (normally the config
    file's directory); the file must hold a DxD single-channel grid.
    """
    spec = cfg["model"]
    shape = (spec["height"], spec["width"], spec["channels"])
    try:
        if spec["type"] == "gaussian_field":
            if spec["covariance_file"] is not None:
                cov_path = Path(spec["covariance_file"])
                if base_dir is not None and not cov_path.is_absolute():
                    cov_path = Path(base_dir) / cov_path
                cov_grid = read_grid(cov_path)
                D = shape[0] * shape[1] * shape[2]
                if cov_grid.shape != (D, D, 1):
                    raise ConfigError(
                        f"covariance grid must be {D}x{D}x1, got "
                        f"{cov_grid.shape[0]}x{cov_grid.shape[1]}x{cov_grid.shape[2]}"
                    )
                cov = cov_grid.values[:, :, 0]
                return GaussianFieldModel(shape, float(spec["mean"]), cov)
            return GaussianFieldModel.exponential(
                height=shape[0],
                width=shape[1],
                channels=shape[2],
                mean=float(spec["mean"]),
                marginal_variance=float(spec["marginal_variance"]),
                correlation_length=float(spec["correlation_length"]),
            )
        return GmmPixelModel(
            shape,
            np.asarray(spec["weights"], dtype=np.float64),
            np.asarray(spec["means"], dtype=np.float64),
            np.asarray(spec["variances"], dtype=np.float64),
        )
    except ValidationError as exc:
        raise ConfigError(f"model: {exc}") from exc
