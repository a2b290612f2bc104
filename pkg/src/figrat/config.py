"""Training configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "fig_n"  # fig_n | fig_vn
    K_hat: float = 0.75
    r: int = 8
    alpha: float = 1.0
    beta_hat: float = 1.0
    lr: float = 0.01
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    lr_decay: float = 0.25
    seed: int = 0
    readout: str = "mean"  # mean | sum
    readout_scope: str = "all"  # all | rationale
    task: str = "binary_classification"  # binary_classification | classification | regression
    d: int = 64
    encoder_layers: int = 3
    layer_norm: bool = False
    update: str = "simultaneous"  # simultaneous | alternating
    n_max: int | None = None  # FIG-VN assignment width; None -> ceil(10 x mean train size)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.variant not in ("fig_n", "fig_vn"):
            raise ConfigError(f"variant must be fig_n or fig_vn, got {self.variant!r}")
        if not 0.0 < self.K_hat < 1.0:
            raise ConfigError(f"K_hat must lie in (0, 1), got {self.K_hat}")
        if self.variant == "fig_vn":
            if self.r < 2:
                raise ConfigError("r must be >= 2")
            k = round(self.K_hat * self.r)
            if not 1 <= min(max(k, 1), self.r - 1) < self.r:
                raise ConfigError(f"K_hat={self.K_hat} leaves an empty side for r={self.r}")
        if self.alpha < 0 or self.beta_hat < 0:
            raise ConfigError("alpha and beta_hat must be >= 0")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ConfigError("batch_size >= 1, max_epochs >= 0, patience >= 1 required")
        if self.readout not in ("mean", "sum"):
            raise ConfigError(f"readout must be mean or sum, got {self.readout!r}")
        if self.readout_scope not in ("all", "rationale"):
            raise ConfigError(f"readout_scope must be all or rationale, got {self.readout_scope!r}")
        if self.task not in ("binary_classification", "classification", "regression"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.d < 1 or self.encoder_layers < 1:
            raise ConfigError("d and encoder_layers must be >= 1")
        if self.update not in ("simultaneous", "alternating"):
            raise ConfigError(f"update must be simultaneous or alternating, got {self.update!r}")

    @property
    def is_classification(self) -> bool:
        return self.task != "regression"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**obj)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(obj)

    def with_(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


# hidden width and learning rate reported for the full-scale molecule runs
FULL_SCALE_PRESET = {"d": 300, "lr": 1e-4}
