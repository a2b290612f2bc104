"""Parameter containers for a full FIG model plus checkpoint I/O.

theta = encoder + augmenter + predictor (minimised); phi = intervener (maximised).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augmenter import AugmenterNParams, AugmenterVNParams
from .autodiff import Tensor
from .config import TrainConfig
from .encoder import EncoderParams
from .errors import ConfigError, ValidationError
from .intervener import IntervenerParams
from .layers import Linear, init_mlp, named_mlp

CHECKPOINT_FORMAT = "figrat-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class PredictorParams:
    layers: list[Linear]

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, c: int) -> "PredictorParams":
        return cls(init_mlp(rng, [d, d, d, c]))

    @property
    def c(self) -> int:
        return self.layers[-1].W.shape[1]

    def named(self, prefix: str = "pred") -> dict[str, Tensor]:
        return named_mlp(self.layers, prefix)


@dataclass
class FIGModel:
    config: TrainConfig
    encoder: EncoderParams
    augmenter: AugmenterNParams | AugmenterVNParams
    intervener: IntervenerParams
    predictor: PredictorParams
    d_x: int
    d_e: int = 0
    num_outputs: int = 2

    @classmethod
    def init(cls, config: TrainConfig, d_x: int, d_e: int = 0, num_outputs: int | None = None,
             n_max: int | None = None) -> "FIGModel":
        if num_outputs is None:
            num_outputs = 1 if config.task == "regression" else 2
        if config.task == "regression" and num_outputs != 1:
            raise ConfigError("regression uses a single output")
        rng = np.random.default_rng(config.seed)
        d = config.d
        encoder = EncoderParams.init(rng, d_x, d, config.encoder_layers, d_e)
        if config.variant == "fig_n":
            augmenter = AugmenterNParams.init(rng, d)
        else:
            n_max = n_max or config.n_max
            if not n_max:
                raise ConfigError("fig_vn needs n_max (set it in the config or derive it from the training set)")
            augmenter = AugmenterVNParams.init(rng, config.r, int(n_max))
        intervener = IntervenerParams.init(rng, d, config.layer_norm)
        predictor = PredictorParams.init(rng, d, num_outputs)
        return cls(config, encoder, augmenter, intervener, predictor, d_x, d_e, num_outputs)

    def theta(self) -> dict[str, Tensor]:
        out = {}
        out.update(self.encoder.named("enc"))
        out.update(self.augmenter.named("aug"))
        out.update(self.predictor.named("pred"))
        return out

    def phi(self) -> dict[str, Tensor]:
        return self.intervener.named("int")

    def parameters(self) -> dict[str, Tensor]:
        return {**self.theta(), **self.phi()}

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(state))
        if missing:
            raise ValidationError(f"checkpoint lacks parameters {missing}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValidationError(f"parameter {k}: shape {arr.shape} != expected {p.data.shape}")
            p.data[...] = arr

    @property
    def n_max(self) -> int | None:
        return self.augmenter.n_max if isinstance(self.augmenter, AugmenterVNParams) else None


def save_checkpoint(model: FIGModel, path, extra: dict | None = None) -> None:
    obj = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "dims": {"d_x": model.d_x, "d_e": model.d_e, "num_outputs": model.num_outputs, "n_max": model.n_max},
        "params": {k: {"shape": list(v.shape), "data": v.data.ravel().tolist()}
                   for k, v in sorted(model.parameters().items())},
    }
    if extra:
        obj["extra"] = extra
    Path(path).write_text(json.dumps(obj), encoding="utf-8")


def load_checkpoint(path) -> FIGModel:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if obj.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if obj.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {obj.get('version')}")
    config = TrainConfig.from_dict(obj["config"])
    dims = obj["dims"]
    model = FIGModel.init(config, dims["d_x"], dims["d_e"], dims["num_outputs"], dims["n_max"])
    state = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in obj["params"].items()}
    model.load_state(state)
    return model
