"""Run configuration: flat key = value files with a typed schema.

Every run serializes its configuration next to its outputs, so the format
stays diff-able; unknown keys are rejected rather than ignored.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields

from .errors import ConfigError


def _parse_bool(s):
    if isinstance(s, bool):
        return s
    low = str(s).strip().lower()
    if low in ("1", "true", "yes"):
        return True
    if low in ("0", "false", "no"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_floats(s):
    if isinstance(s, (list, tuple)):
        return [float(x) for x in s]
    return [float(x) for x in str(s).split(",") if x.strip()]


@dataclass
class RunConfig:
    dataset_dir: str = ""
    dataset_name: str = "synth"
    backbone: str = "gcn"
    layers: int = 3
    hidden: int = 32
    d_h: int = 64
    d_s: int = 16
    tau: float = 0.5
    alpha1: float = 1.0
    alpha2: float = 1.0
    beta1: float = 0.5
    beta2: float = 1.0
    beta3: float = 5e4
    ridge: float = 1e-6
    eps: float = 1e-8
    k1_frac: float = 0.2
    k2_frac: float = 0.2
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 500
    patience: int = 50
    pretrain_epochs: int = 300
    seed: int = 0
    split_ratios: list = field(default_factory=lambda: [0.70, 0.15, 0.15])
    upsample_label: int = -1
    upsample_ratio: int = 1
    warm_start: bool = False

    _PARSERS = {
        "dataset_dir": str, "dataset_name": str, "backbone": str,
        "layers": int, "hidden": int, "d_h": int, "d_s": int,
        "tau": float, "alpha1": float, "alpha2": float,
        "beta1": float, "beta2": float, "beta3": float,
        "ridge": float, "eps": float, "k1_frac": float, "k2_frac": float,
        "lr": float, "batch_size": int, "max_epochs": int, "patience": int,
        "pretrain_epochs": int, "seed": int, "split_ratios": _parse_floats,
        "upsample_label": int, "upsample_ratio": int,
        "warm_start": _parse_bool,
    }

    def __post_init__(self):
        if self.backbone not in ("gcn", "gin"):
            raise ConfigError(f"backbone must be gcn or gin, got {self.backbone!r}")
        if len(self.split_ratios) != 3 or abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split_ratios must be 3 values summing to 1, "
                              f"got {self.split_ratios}")
        for name in ("tau", "eps", "lr"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.ridge < 0:
            raise ConfigError("ridge must be nonnegative")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def config_hash(self, ignore_seed: bool = True) -> str:
        d = self.to_dict()
        if ignore_seed:
            d.pop("seed")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        kwargs = {}
        for key, value in raw.items():
            parser = cls._PARSERS.get(key)
            if parser is None:
                raise ConfigError(f"unknown configuration key {key!r}")
            try:
                kwargs[key] = parser(value)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}") from exc
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        raw = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                stripped = line.split("#", 1)[0].strip()
                if not stripped:
                    continue
                if "=" not in stripped:
                    raise ConfigError(f"{path}:{lineno}: expected key = value, "
                                      f"got {line.rstrip()!r}")
                key, value = stripped.split("=", 1)
                key = key.strip()
                if key in raw:
                    raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
                raw[key] = value.strip()
        return cls.from_dict(raw)
