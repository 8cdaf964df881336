"""Strict, versioned experiment configuration.

A config file is JSON with named sections; every field is optional and
falls back to the module defaults, but unknown sections or keys are rejected
with a path diagnostic.  The fully resolved ("effective") configuration is
echoed into every report envelope so any artifact can reproduce its run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

from hpxfer.model import ModelConfig
from hpxfer.scaling import BaseHyperParams, ScaleRatios
from hpxfer.schedules import ScheduleGrid
from hpxfer.search import SearchSpace
from hpxfer.training import TrainConfig

__all__ = ["ConfigError", "ExperimentConfig", "load_config"]

CONFIG_VERSION = 1

_SECTION_DEFAULTS = {
    "scale_ratios": {},
    "base_hps": {"lr": 0.01, "init_var": 0.04, "eps": 1e-8},
    "model": {"width": 64, "depth": 2},
    "train": {"steps": 200, "batch_size": 8, "seq_len": 32},
    "search_space": {"dimension": 2},
    "schedule_grid": {},
}

_SECTION_TYPES = {
    "scale_ratios": ScaleRatios,
    "base_hps": BaseHyperParams,
    "model": ModelConfig,
    "train": TrainConfig,
    "search_space": SearchSpace,
    "schedule_grid": ScheduleGrid,
}


class ConfigError(ValueError):
    """Malformed configuration; the message carries the offending path."""


@dataclass(frozen=True)
class ExperimentConfig:
    scale_ratios: ScaleRatios
    base_hps: BaseHyperParams
    model: ModelConfig
    train: TrainConfig
    search_space: SearchSpace
    schedule_grid: ScheduleGrid

    def effective(self) -> dict:
        """Fully resolved values, suitable for echoing into reports."""
        out: dict = {"version": CONFIG_VERSION}
        for section, cls in _SECTION_TYPES.items():
            value = getattr(self, section)
            doc = {}
            for f in fields(cls):
                v = getattr(value, f.name)
                doc[f.name] = list(v) if isinstance(v, tuple) else v
            out[section] = doc
        return out


def _build_section(section: str, doc: dict) -> object:
    cls = _SECTION_TYPES[section]
    known = {f.name for f in fields(cls)}
    for key in doc:
        if key not in known:
            raise ConfigError(f"unknown key {section}.{key}")
    merged = {**_SECTION_DEFAULTS[section], **doc}
    if section == "search_space" and isinstance(merged.get("initial_point"), list):
        merged["initial_point"] = tuple(merged["initial_point"])
    try:
        return cls(**merged)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid section {section!r}: {exc}") from exc


def load_config(source: str | Path | dict | None = None) -> ExperimentConfig:
    """Parse a config file (or dict); None gives the all-defaults config."""
    if source is None:
        doc: dict = {}
    elif isinstance(source, dict):
        doc = source
    else:
        try:
            doc = json.loads(Path(source).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: line {exc.lineno}: {exc.msg}") from exc
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")

    version = doc.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version!r}")

    for key in doc:
        if key != "version" and key not in _SECTION_TYPES:
            raise ConfigError(f"unknown section {key!r}")

    sections = {
        name: _build_section(name, doc.get(name, {})) for name in _SECTION_TYPES
    }
    return ExperimentConfig(**sections)
