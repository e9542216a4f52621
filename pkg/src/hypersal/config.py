"""JSON run configuration with strict key checking.

Every section is optional; missing keys take the defaults below. Training
defaults are the reference settings (batch 32, 126 epochs, lr 1e-6, class
weights from the training counts). The data defaults describe the desk-scale
synthetic set.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .data import SynthSpec
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    synth: SynthSpec = field(default_factory=SynthSpec)
    patch_size: tuple[int, int] = (16, 16)
    stride: tuple[int, int] | None = None
    split: tuple[float, float, float] = (0.6, 0.2, 0.2)


@dataclass
class SaliencyConfig:
    bands: list[int] = field(default_factory=list)
    top_k: int = 5


@dataclass
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    input_shape: tuple[int, int, int, int] | None = None  # derived from the data when None
    train: TrainConfig = field(default_factory=TrainConfig)
    saliency: SaliencyConfig = field(default_factory=SaliencyConfig)

    def with_seed(self, seed: int) -> RunConfig:
        self.seed = seed
        self.data.synth.seed = seed
        self.train.seed = seed
        return self


_SYNTH_KEYS = {f.name for f in fields(SynthSpec)} - {"seed"}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"seed"}


def _check_keys(section: dict, allowed: set[str], where: str) -> None:
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key {unknown[0]!r}")


def _int_list(value, n, where):
    if not isinstance(value, (list, tuple)) or len(value) != n or not all(isinstance(v, int) for v in value):
        raise ConfigError(f"{where}: expected a list of {n} integers")
    return tuple(value)


def parse_config(doc: dict[str, Any]) -> RunConfig:
    _check_keys(doc, {"seed", "data", "model", "train", "saliency"}, "config")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed: expected an integer")

    data = doc.get("data", {})
    _check_keys(data, {"synth", "patch_size", "stride", "split"}, "data")
    synth = data.get("synth", {})
    _check_keys(synth, _SYNTH_KEYS, "data.synth")
    synth = dict(synth)
    for key in ("cube_shape",):
        if key in synth:
            synth[key] = _int_list(synth[key], 3, f"data.synth.{key}")
    if "calibration" in synth:
        synth["calibration"] = tuple(float(v) for v in synth["calibration"])
    try:
        spec = SynthSpec(**synth, seed=seed)
    except TypeError as exc:
        raise ConfigError(f"data.synth: {exc}") from None
    dc = DataConfig(spec)
    if "patch_size" in data:
        dc.patch_size = _int_list(data["patch_size"], 2, "data.patch_size")
    if data.get("stride") is not None:
        dc.stride = _int_list(data["stride"], 2, "data.stride")
    if "split" in data:
        split = data["split"]
        if not isinstance(split, list) or len(split) != 3:
            raise ConfigError("data.split: expected three fractions")
        dc.split = tuple(float(v) for v in split)

    model = doc.get("model", {})
    _check_keys(model, {"input_shape"}, "model")
    input_shape = model.get("input_shape")
    if input_shape is not None:
        input_shape = _int_list(input_shape, 4, "model.input_shape")

    train = doc.get("train", {})
    _check_keys(train, _TRAIN_KEYS, "train")
    try:
        tc = TrainConfig(**train, seed=seed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from None

    sal = doc.get("saliency", {})
    _check_keys(sal, {"bands", "top_k"}, "saliency")
    sc = SaliencyConfig(list(sal.get("bands", [])), int(sal.get("top_k", 5)))
    if not all(isinstance(b, int) and b >= 1 for b in sc.bands):
        raise ConfigError("saliency.bands: expected positive integers")

    try:
        spec.validate()
    except ValueError as exc:
        raise ConfigError(f"data.synth: {exc}") from None
    return RunConfig(seed, dc, input_shape, tc, sc)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(doc)
