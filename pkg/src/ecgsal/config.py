"""Experiment configuration: flat ``key = value`` text with environment overrides.

Resolution order, later wins: built-in defaults, the config file, environment
variables ``ECGSAL_<KEY>`` (key upper-cased), command-line flags.

Keys
----
seed                  int, required
source                synthetic | csv-dir | physionet-dir
input_dir             directory read by ``ingest`` (csv-dir / physionet-dir)
input_fs              sampling rate of CSV records without a header (Hz)
lead                  lead name or index used by ``ingest``
dataset_dir           dataset location; empty means ``<out>/data``
train_per_class       windows per class in the training split
test_per_class        windows per class in the synthetic test split
model                 classifier | camnet | lstmnet (``train`` / ``eval``)
scale                 desk | paper
lr, momentum, batch_size, epochs
                      training hyperparameters
cam_class             class name for ``cam``/``mask``; empty means every class
top_k                 windows per class exported by ``cam``/``mask``
mask_model            classifier | lstmnet, the network probed by ``mask``
lambda1, lambda2, mask_lr, mask_iterations, mask_k, convention
                      mask optimization settings
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .saliency import Convention

ENV_PREFIX = "ECGSAL_"

SOURCES = ("synthetic", "csv-dir", "physionet-dir")
SCALES = ("desk", "paper")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int | None = None
    source: str = "synthetic"
    input_dir: str = ""
    input_fs: float = 360.0
    lead: str = "0"
    dataset_dir: str = ""
    train_per_class: int = 400
    test_per_class: int = 100
    model: str = "classifier"
    scale: str = "desk"
    lr: float = 0.005
    momentum: float = 0.7
    batch_size: int = 16
    epochs: int = 30
    cam_class: str = ""
    top_k: int = 1
    mask_model: str = "classifier"
    lambda1: float = 1.0
    lambda2: float = 0.001
    mask_lr: float = 0.001
    mask_iterations: int = 500
    mask_k: float = 0.0
    convention: str = "deletion"

    def validate(self) -> "ExperimentConfig":
        if self.seed is None:
            raise ConfigError("seed is required (config file, ECGSAL_SEED or --seed)")
        if self.source not in SOURCES:
            raise ConfigError(f"source must be one of {SOURCES}, got {self.source!r}")
        if self.scale not in SCALES:
            raise ConfigError(f"scale must be one of {SCALES}, got {self.scale!r}")
        if self.model not in ("classifier", "camnet", "lstmnet"):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.mask_model not in ("classifier", "lstmnet"):
            raise ConfigError(f"mask_model must be classifier or lstmnet, got {self.mask_model!r}")
        for key in ("train_per_class", "test_per_class", "top_k"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be >= 0")
        for key in ("batch_size", "epochs", "mask_iterations"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        for key in ("lr", "lambda1", "lambda2", "mask_lr", "input_fs"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be positive")
        try:
            Convention(self.convention)
        except ValueError:
            raise ConfigError(f"convention must be deletion or literal, got {self.convention!r}") from None
        if self.source != "synthetic" and self.input_dir and not Path(self.input_dir).is_dir():
            raise ConfigError(f"input_dir {self.input_dir!r} does not exist")
        return self

    def to_text(self) -> str:
        """Canonical ``key = value`` text, one key per line in field order."""
        return "".join(f"{k} = {'' if v is None else v}\n" for k, v in asdict(self).items())

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key: str, text: str):
    kind = _TYPES[key]
    text = text.strip()
    try:
        if kind in ("int", "int | None"):
            return None if text == "" and kind != "int" else int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind}") from None
    return text


def parse_config_text(text: str, source: str = "<config>") -> dict:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    out = {}
    for key, value in parser["run"].items():
        if key not in _TYPES:
            raise ConfigError(f"{source}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def load_config(path: str | os.PathLike | None = None, env=None, overrides: dict | None = None) -> ExperimentConfig:
    """Resolve defaults, file, environment and explicit overrides, then validate."""
    values: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        values.update(parse_config_text(p.read_text(), str(p)))
    env = os.environ if env is None else env
    for key in _TYPES:
        name = ENV_PREFIX + key.upper()
        if name in env:
            values[key] = _coerce(key, env[name])
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return replace(ExperimentConfig(), **values).validate()
