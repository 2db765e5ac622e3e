"""Run configuration: a flat ``key = value`` text file with ``#`` comments.

Keys are namespaced by section (``synth.*``, ``picnn.*``, ``train.*``,
``peec.*``, ``gazelock.*``, ``eval.*``, ``select.*``, ``sweep.*``) plus the
top-level ``seed``. Unknown keys and unparsable values are errors.
"""

from __future__ import annotations

import dataclasses
import os

from .errors import ConfigError
from .picnn.model import PicnnConfig
from .synthface import SynthConfig


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _parse_schedule(text: str) -> tuple:
    """``until:lr`` pairs separated by commas, e.g. ``2500:0.005,5000:0.0005``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        until, lr = part.split(":")
        out.append((int(until), float(lr)))
    return tuple(out)


_PARSERS = {bool: _parse_bool, int: int, float: float, str: str}

# keys outside the two generator/network dataclasses: key -> (parser, default)
_EXTRA = {
    "seed": (int, None),
    "synth.n": (int, 5000),
    "train.rebalance": (_parse_bool, True),
    "train.target_fraction": (float, 0.4),
    "train.log_every": (int, 10),
    "peec.k": (int, 3),
    "peec.n_trees": (int, 100),
    "peec.candidates_per_node": (int, 10),
    "gazelock.pca_dims": (int, 200),
    "gazelock.mda_dims": (int, 6),
    "gazelock.C": (float, 1.0),
    "eval.folds": (int, 5),
    "eval.iou_threshold": (float, 0.5),
    "select.classes": (int, 2),
    "select.learning_rate": (float, 0.05),
    "select.bootstrap_frames": (int, 5),
    "sweep.counts": (_parse_int_list, (5, 15, 30)),
}


def _dataclass_keys(prefix, cls, skip=()):
    keys = {}
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        default = f.default
        if f.name == "lr_schedule":
            keys[f"{prefix}.{f.name}"] = (_parse_schedule, default)
            continue
        parser = _PARSERS.get(type(default), str)
        keys[f"{prefix}.{f.name}"] = (parser, default)
    return keys


def known_keys() -> dict:
    keys = dict(_EXTRA)
    keys.update(_dataclass_keys("synth", SynthConfig))
    keys.update(_dataclass_keys("picnn", PicnnConfig, skip=("pose_branch",)))
    return keys


class RunConfig:
    """Parsed configuration with defaults for every known key."""

    def __init__(self, values: dict | None = None):
        self._keys = known_keys()
        self.values = {k: d for k, (_, d) in self._keys.items()}
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, value) -> None:
        if key not in self._keys:
            raise ConfigError(f"unknown configuration key {key!r}")
        if isinstance(value, str):
            parser = self._keys[key][0]
            try:
                value = parser(value.strip())
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from exc
        self.values[key] = value

    def __getitem__(self, key: str):
        if key not in self.values:
            raise ConfigError(f"unknown configuration key {key!r}")
        return self.values[key]

    def section(self, prefix: str) -> dict:
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.values.items() if k.startswith(p)}

    def synth_config(self) -> SynthConfig:
        return SynthConfig(**{k: v for k, v in self.section("synth").items() if k != "n"})

    def picnn_config(self, pose_branch: bool = True) -> PicnnConfig:
        return PicnnConfig(pose_branch=pose_branch, **self.section("picnn"))


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    cfg = RunConfig()
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            cfg.set(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{n}: {exc}") from exc
    return cfg


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    if not os.path.isfile(path):
        raise ConfigError(f"configuration file not found: {path}")
    with open(path) as fh:
        return parse_config_text(fh.read(), str(path))
