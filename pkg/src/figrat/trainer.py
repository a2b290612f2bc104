"""Simultaneous gradient descent-ascent training loop with plateau LR decay."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import Tensor, no_grad
from .batched import batch_forward
from .config import TrainConfig
from .errors import ConfigError, DivergenceError
from .graphs import Batch, Dataset, Graph, make_batches
from .metrics import classification_metrics, regression_metrics
from .model import FIGModel

log = logging.getLogger(__name__)

REPORT_KEYS = ("l_util_own", "l_util_swapped", "l_reg_own", "l_reg_swapped", "reg_weighted", "total")


@dataclass
class StepResult:
    report: dict[str, float]
    grads_theta: dict[str, np.ndarray]
    grads_phi: dict[str, np.ndarray]


def _check_finite(value: float, where: str) -> None:
    if not math.isfinite(value):
        raise DivergenceError(f"non-finite objective ({value}) {where}")


def minmax_step(batch: Batch, model: FIGModel, lr: float | None = None) -> StepResult:
    """theta <- theta - lr grad_theta, phi <- phi + lr grad_phi, from one shared gradient evaluation.

    With ``update="alternating"`` the phi step uses a fresh gradient taken after the theta step.
    """
    cfg = model.config
    lr = cfg.lr if lr is None else lr
    theta, phi = model.theta(), model.phi()
    model.zero_grad()
    fwd = batch_forward(batch.graphs, model, batch.partner)
    _check_finite(fwd.total.item(), "in minmax_step")
    fwd.total.backward()
    g_theta = {k: p.grad.copy() for k, p in theta.items()}
    for p in theta.values():
        p.data -= lr * p.grad
    if cfg.update == "alternating":
        model.zero_grad()
        fwd2 = batch_forward(batch.graphs, model, batch.partner)
        _check_finite(fwd2.total.item(), "in minmax_step (ascent pass)")
        fwd2.total.backward()
    g_phi = {k: p.grad.copy() for k, p in phi.items()}
    for p in phi.values():
        p.data += lr * p.grad
    return StepResult(fwd.report, g_theta, g_phi)


def predict_dataset(model: FIGModel, graphs, batch_size: int = 128) -> np.ndarray:
    """Test-time outputs (own environment only) for every graph, shape (N, c)."""
    graphs = list(graphs)
    outs = []
    with no_grad():
        for start in range(0, len(graphs), batch_size):
            fwd = batch_forward(graphs[start:start + batch_size], model, with_swapped=False)
            outs.append(fwd.own.logits.data)
    return np.concatenate(outs, axis=0) if outs else np.zeros((0, model.num_outputs))


def evaluate(model: FIGModel, dataset, batch_size: int = 128) -> dict[str, float]:
    out = predict_dataset(model, dataset, batch_size)
    y = np.array([g.label for g in dataset], dtype=np.float64)
    if model.config.task == "regression":
        return regression_metrics(out[:, 0], y)
    return classification_metrics(out, y.astype(int))


def _score(metrics: dict[str, float], task: str) -> tuple[float, float]:
    """Larger is better; second entry breaks ties."""
    if task == "regression":
        return (-metrics["rmse"], -metrics["mae"])
    return (metrics["accuracy"], -metrics["loss"])


@dataclass
class TrainResult:
    model: FIGModel
    log: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val: dict[str, float] = field(default_factory=dict)


def _num_outputs(cfg: TrainConfig, train_set: Dataset) -> int:
    return 1 if cfg.task == "regression" else max(2, train_set.num_classes)


def fit(model, step: Callable[[Batch, float], dict], evaluate_fn: Callable[[], dict],
        cfg: TrainConfig, train_set: Dataset, on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Epoch loop shared by FIG and the plain baseline.

    Keeps the best validation checkpoint and multiplies the LR by ``lr_decay``
    after ``patience`` epochs without validation improvement.
    """
    result = TrainResult(model)
    if cfg.max_epochs == 0:
        return result
    lr = cfg.lr
    best, best_state, stale = None, model.state(), 0
    for epoch in range(1, cfg.max_epochs + 1):
        batches = make_batches(train_set, cfg.batch_size, shuffle_seed=cfg.seed * 100003 + epoch)
        sums = {}
        for b in batches:
            try:
                rep = step(b, lr)
            except DivergenceError as exc:
                raise DivergenceError(f"epoch {epoch}: {exc}") from exc
            for k, v in rep.items():
                sums[k] = sums.get(k, 0.0) + v * len(b)
        entry = {"epoch": epoch, "lr": lr}
        entry.update({f"train_{k}": v / len(train_set) for k, v in sums.items()})
        val = evaluate_fn()
        entry.update({f"val_{k}": v for k, v in val.items()})
        score = _score(val, cfg.task)
        if best is None or score > best:
            best, best_state, stale = score, model.state(), 0
            result.best_epoch, result.best_val = epoch, val
        else:
            stale += 1
            if stale >= cfg.patience:
                lr *= cfg.lr_decay
                stale = 0
        result.log.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
        log.debug("epoch %d %s", epoch, entry)
    model.load_state(best_state)
    return result


def train(config: TrainConfig, train_set: Dataset, val_set: Dataset,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    if len(train_set) == 0 or len(val_set) == 0:
        raise ConfigError("train and validation sets must be non-empty")
    n_max = config.n_max or train_set.n_max
    model = FIGModel.init(config, train_set.d_x, train_set.d_e, _num_outputs(config, train_set), n_max)

    def step(b, lr):
        return minmax_step(b, model, lr).report

    return fit(model, step, lambda: evaluate(model, val_set), config, train_set, on_epoch)
