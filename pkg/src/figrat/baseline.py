"""Plain encoder -> readout -> predictor classifier, no rationale machinery.

Used as the reference point for what the synthetic benchmark allows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, matmul, mul, no_grad, sum_all
from .batched import _per_graph_task_loss
from .config import TrainConfig
from .encoder import EncoderParams, disjoint_union, encode
from .graphs import Dataset
from .metrics import classification_metrics, regression_metrics
from .model import PredictorParams
from .objective import predict
from .trainer import TrainResult, _check_finite, _num_outputs, fit


@dataclass
class BaselineModel:
    config: TrainConfig
    encoder: EncoderParams
    predictor: PredictorParams

    @classmethod
    def init(cls, config: TrainConfig, d_x: int, d_e: int = 0, num_outputs: int = 2) -> "BaselineModel":
        rng = np.random.default_rng(config.seed)
        return cls(config, EncoderParams.init(rng, d_x, config.d, config.encoder_layers, d_e),
                   PredictorParams.init(rng, config.d, num_outputs))

    def parameters(self) -> dict[str, Tensor]:
        return {**self.encoder.named("enc"), **self.predictor.named("pred")}

    def state(self):
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state(self, state):
        for k, p in self.parameters().items():
            p.data[...] = state[k]

    def logits(self, graphs) -> Tensor:
        union, offsets = disjoint_union(graphs)
        H = encode(union, self.encoder)
        sizes = np.diff(offsets)
        pool = (np.repeat(np.arange(len(graphs)), sizes)[None, :] == np.arange(len(graphs))[:, None]).astype(float)
        if self.config.readout == "mean":
            pool /= sizes[:, None]
        return predict(matmul(Tensor(pool), H), self.predictor)


def evaluate_baseline(model: BaselineModel, dataset, batch_size: int = 128) -> dict[str, float]:
    graphs = list(dataset)
    with no_grad():
        out = np.concatenate([model.logits(graphs[i:i + batch_size]).data
                              for i in range(0, len(graphs), batch_size)])
    y = np.array([g.label for g in graphs], dtype=np.float64)
    if model.config.task == "regression":
        return regression_metrics(out[:, 0], y)
    return classification_metrics(out, y.astype(int))


def train_baseline(config: TrainConfig, train_set: Dataset, val_set: Dataset) -> TrainResult:
    model = BaselineModel.init(config, train_set.d_x, train_set.d_e, _num_outputs(config, train_set))
    params = list(model.parameters().values())

    def step(batch, lr):
        for p in params:
            p.zero_grad()
        y = np.array([g.label for g in batch.graphs], dtype=np.float64)
        loss = mul(sum_all(_per_graph_task_loss(model.logits(batch.graphs), y, config.task)), 1.0 / len(batch))
        _check_finite(loss.item(), "in baseline step")
        loss.backward()
        for p in params:
            p.data -= lr * p.grad
        return {"total": loss.item()}

    return fit(model, step, lambda: evaluate_baseline(model, val_set), config, train_set)
