"""Flat key=value run configuration.

The on-disk format is one ``key = value`` per line with ``#`` comments,
parseable from any language with no dependencies. A parsed config is
resolved: every default is filled in, every seed explicit. The canonical
dump of the resolved config is what gets hashed, and that hash ties
together logs, checkpoints, and reports from one run.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError

TASKS = ("mnist-row", "mnist-pixel", "mnist-permuted", "pianoroll")
MODELS = ("srnn", "gru")
PARAMETERIZATIONS = ("dense", "tt")


def parse_kv(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; later keys override earlier ones."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def _parse_modes(value: str, field: str):
    if value.lower() in ("", "none"):
        return None
    try:
        return tuple(int(tok) for tok in value.replace(",", "x").split("x"))
    except ValueError:
        raise ConfigError(f"field {field}: modes must look like 10x10, "
                          f"got {value!r}") from None


def _fmt_modes(modes) -> str:
    return "none" if modes is None else "x".join(str(m) for m in modes)


@dataclass
class TrainConfig:
    """Everything one training run needs, with explicit defaults.

    TT parameterization requires ``hidden_modes`` (their product is the
    hidden size) and ``input_modes`` (product must equal the cell's input
    width, i.e. the projection width when one is configured).
    """

    task: str = "mnist-row"
    model: str = "gru"
    parameterization: str = "tt"
    hidden: int = 100
    hidden_modes: tuple | None = (10, 10)
    input_modes: tuple | None = (4, 8)
    rank: int = 3
    proj: int = 32  # 0 disables the input projection
    baseline_hidden: int = 0  # 0: compare against a dense cell of same size
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 0.0  # 0 disables clipping
    batch_size: int = 64
    epochs: int = 5
    seed_init: int = 1
    seed_data: int = 2
    seed_permutation: int = 8888
    train_count: int = 0  # 0: use everything left after the validation split
    val_count: int = 10000
    images: str = ""  # IDX paths (mnist tasks)
    labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    train_path: str = ""  # piano-roll text paths (pianoroll task)
    val_path: str = ""
    test_path: str = ""
    out_dir: str = "runs"
    early_stop: bool = False
    patience: int = 10

    _INT = ("hidden", "rank", "proj", "baseline_hidden", "batch_size",
            "epochs", "seed_init", "seed_data", "seed_permutation",
            "train_count", "val_count", "patience")
    _FLOAT = ("lr", "beta1", "beta2", "eps", "clip_norm")
    _BOOL = ("early_stop",)
    _MODES = ("hidden_modes", "input_modes")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = cls.field_names()
        kwargs = {}
        for key, value in raw.items():
            if key not in known:
                raise ConfigError(f"unknown config field {key!r}")
            try:
                if key in cls._INT:
                    kwargs[key] = int(value)
                elif key in cls._FLOAT:
                    kwargs[key] = float(value)
                elif key in cls._BOOL:
                    low = str(value).lower()
                    if low not in ("true", "false"):
                        raise ValueError
                    kwargs[key] = low == "true"
                elif key in cls._MODES:
                    kwargs[key] = _parse_modes(str(value), key)
                else:
                    kwargs[key] = str(value)
            except ValueError:
                raise ConfigError(f"field {key}: cannot parse {value!r}") from None
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(parse_kv(fh.read(), source=str(path)))

    def validate(self):
        if self.task not in TASKS:
            raise ConfigError(f"field task: must be one of {TASKS}, "
                              f"got {self.task!r}")
        if self.model not in MODELS:
            raise ConfigError(f"field model: must be one of {MODELS}")
        if self.parameterization not in PARAMETERIZATIONS:
            raise ConfigError(
                f"field parameterization: must be one of {PARAMETERIZATIONS}")
        for name in self._INT:
            if getattr(self, name) < 0:
                raise ConfigError(f"field {name}: must be >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("field batch_size: must be >= 1")
        if self.parameterization == "tt":
            if self.hidden_modes is None or self.input_modes is None:
                raise ConfigError("tt parameterization needs hidden_modes "
                                  "and input_modes")
            if self.rank < 1:
                raise ConfigError("field rank: must be >= 1 for tt")
            prod = int(np.prod(self.hidden_modes))
            if self.hidden and prod != self.hidden:
                raise ConfigError(
                    f"field hidden: {self.hidden} does not match hidden_modes "
                    f"product {prod}")
            self.hidden = prod
            in_prod = int(np.prod(self.input_modes))
            if self.cell_input_dim() != in_prod:
                raise ConfigError(
                    f"field input_modes: product {in_prod} does not match the "
                    f"cell input width {self.cell_input_dim()}")
        if self.hidden < 1:
            raise ConfigError("field hidden: must be >= 1")

    def frame_dim(self) -> int:
        return {"mnist-row": 28, "mnist-pixel": 1, "mnist-permuted": 1,
                "pianoroll": 88}[self.task]

    def cell_input_dim(self) -> int:
        return self.proj if self.proj else self.frame_dim()

    def is_classification(self) -> bool:
        return self.task != "pianoroll"

    def to_text(self) -> str:
        """Canonical resolved dump: every field, sorted, one per line."""
        lines = []
        for name in sorted(self.field_names()):
            value = getattr(self, name)
            if name in self._MODES:
                value = _fmt_modes(value)
            elif name in self._BOOL:
                value = "true" if value else "false"
            elif name in self._FLOAT:
                value = repr(float(value))
            lines.append(f"{name} = {value}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        """Hash of the resolved config; stamped on every run artifact."""
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:12]
