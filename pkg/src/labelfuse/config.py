"""TOML configuration for the pipeline.

Every section is optional; missing keys keep their defaults.  Unknown
sections or keys, wrong types and out-of-range values raise ``ConfigError``
naming the offending ``section.key``.

    [consistency]  window_size, occlusion_tol
    [cloud]        voxel_size, stride
    [kmeans]       k, max_iters, tol, seed, points_per_cluster
    [projection]   splat_radius, depth_gate
    [match]        tau_new, trim_pct, point_cap, min_segment_px, iou_mode, cost_mode, erode_px,
                   min_half_extent, seed
    [pseudo]       connectivity, min_region_px, joint_regions
    [loss]         lambda_sem, lambda_ins, instance_weight_mode
    [labels]       things, num_classes, max_instances
"""

from __future__ import annotations

import dataclasses
import os
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .consistency import WindowConfig
from .errors import ConfigError, InvalidInputError
from .instance_match import MatchConfig
from .losses import LossConfig
from .pipeline import PipelineConfig, PseudoConfig
from .semantic_cloud import KMeansConfig
from .view_projection import ProjectionConfig

# section -> (PipelineConfig attribute, dataclass, keys owned by the [labels] section)
_NESTED = {
    "consistency": ("window", WindowConfig),
    "kmeans": ("kmeans", KMeansConfig),
    "projection": ("projection", ProjectionConfig),
    "match": ("match", MatchConfig),
    "pseudo": ("pseudo", PseudoConfig),
    "loss": ("loss", LossConfig),
}
_FLAT = {
    "cloud": ("voxel_size", "stride"),
    "labels": ("things", "num_classes", "max_instances"),
}
# filled from [labels] so the two never disagree
_DERIVED = {"match": ("max_instances",), "loss": ("num_classes",)}


def _expected(default: Any, name: str):
    if name == "k":
        return int
    if isinstance(default, bool):
        return bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    if isinstance(default, str):
        return str
    if isinstance(default, tuple):
        return list
    return type(default)


def _check_type(where: str, value: Any, kind):
    if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if kind is list and isinstance(value, list):
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{where}: expected a list of integers")
        return tuple(value)
    if kind in (str, bool) and isinstance(value, kind):
        return value
    raise ConfigError(f"{where}: expected {kind.__name__}, got {type(value).__name__}")


def _section_kwargs(name: str, table: Any, fields: dict) -> dict:
    if not isinstance(table, dict):
        raise ConfigError(f"[{name}] must be a table")
    out = {}
    for key, value in table.items():
        where = f"{name}.{key}"
        if key not in fields or key in _DERIVED.get(name, ()):
            raise ConfigError(f"{where}: unknown key")
        out[key] = _check_type(where, value, _expected(fields[key], key))
    return out


def config_from_dict(doc: dict) -> PipelineConfig:
    base = PipelineConfig()
    for name in doc:
        if name not in _NESTED and name not in _FLAT:
            raise ConfigError(f"[{name}]: unknown section")

    top = {}
    for name, keys in _FLAT.items():
        kw = _section_kwargs(name, doc.get(name, {}), {k: getattr(base, k) for k in keys})
        top.update(kw)
    num_classes = top.get("num_classes", base.num_classes)
    max_instances = top.get("max_instances", base.max_instances)
    things = top.get("things", base.things)
    bad = [t for t in things if not 0 <= t < num_classes]
    if bad:
        raise ConfigError(f"labels.things: classes {bad} outside [0, {num_classes})")
    if num_classes < 1 or max_instances < 1:
        raise ConfigError("labels: num_classes and max_instances must be >= 1")

    nested = {}
    for name, (attr, cls) in _NESTED.items():
        defaults = {f.name: getattr(getattr(base, attr), f.name) for f in dataclasses.fields(cls)}
        kw = _section_kwargs(name, doc.get(name, {}), defaults)
        if name == "match":
            kw["max_instances"] = max_instances
        if name == "loss":
            kw["num_classes"] = num_classes
        try:
            nested[attr] = cls(**{**defaults, **kw})
        except InvalidInputError as exc:
            raise ConfigError(f"[{name}] {exc}") from None
    try:
        return PipelineConfig(**nested, **top)
    except InvalidInputError as exc:
        raise ConfigError(f"[cloud] {exc}") from None


def load_config(path) -> PipelineConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: malformed TOML ({exc})") from None
    try:
        return config_from_dict(doc)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return f'"{value}"'
    if isinstance(value, (tuple, list)):
        return "[" + ", ".join(str(v) for v in value) + "]"
    return repr(value)


def dump_config(cfg: PipelineConfig) -> str:
    """TOML text that loads back to ``cfg``."""
    lines = []
    for name, (attr, cls) in _NESTED.items():
        lines.append(f"[{name}]")
        sub = getattr(cfg, attr)
        for f in dataclasses.fields(cls):
            if f.name in _DERIVED.get(name, ()):
                continue
            value = getattr(sub, f.name)
            if value is None:
                lines.append(f"# {f.name} = <derived from point count>")
            else:
                lines.append(f"{f.name} = {_fmt(value)}")
        lines.append("")
    for name, keys in _FLAT.items():
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {_fmt(getattr(cfg, k))}" for k in keys)
        lines.append("")
    return "\n".join(lines)
