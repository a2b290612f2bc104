"""Readout, predictor, task/utility/regularisation losses, one graph at a time.

This is the reference path; ``batched`` computes the same quantities for a
whole mini-batch in one tape and is checked against it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .augmenter import (FrozenSelection, choose_k, partition_scores, split_node_level, split_virtual,
                        truncate_rows, virtual_node_embed)
from .autodiff import (Tensor, add, gather, logsumexp_rows, mul, reduce, reshape, square, sub,
                       slice_rows, sum_all)
from .config import TrainConfig
from .encoder import encode
from .errors import DimensionError, ValidationError
from .graphs import Graph
from .intervener import AttentionRecord, cut_regularizer, indicator_vector, intervene  # noqa: F401
from .layers import mlp
from .model import FIGModel, PredictorParams


@dataclass
class LossReport:
    l_util_own: Tensor
    l_util_swapped: Tensor
    l_reg_own: Tensor
    l_reg_swapped: Tensor
    total: Tensor

    def values(self) -> dict[str, float]:
        return {k: getattr(self, k).item() for k in
                ("l_util_own", "l_util_swapped", "l_reg_own", "l_reg_swapped", "total")}


def readout(H: Tensor, kind: str = "mean") -> Tensor:
    if H.ndim != 2 or H.shape[0] == 0:
        raise DimensionError(f"readout needs at least one row, got shape {H.shape}")
    if kind == "mean":
        return reduce(H, "mean_rows")
    if kind == "sum":
        return reduce(H, "sum_rows")
    raise ValueError(f"unknown readout {kind!r}")


def predict(h: Tensor, params: PredictorParams) -> Tensor:
    """Raw logits (classification) or value (regression); no output activation."""
    if h.shape[-1] != params.layers[0].W.shape[0]:
        raise DimensionError(f"predict: embedding width {h.shape[-1]} vs predictor width {params.layers[0].W.shape[0]}")
    return mlp(h, params.layers)


def task_loss(pred: Tensor, y, task: str) -> Tensor:
    """Softmax cross-entropy for classification, squared error for regression.

    ``pred`` is one output vector (c,) or a batch (B, c); batched losses are averaged.
    """
    batched = pred.ndim == 2
    logits = pred if batched else reshape(pred, (1, pred.shape[0]))
    y = np.atleast_1d(np.asarray(y))
    B, c = logits.shape
    if y.shape[0] != B:
        raise DimensionError(f"task_loss: {B} predictions vs {y.shape[0]} targets")
    if task == "regression":
        if c != 1:
            raise DimensionError("regression expects a single output")
        err = sub(reshape(logits, (B,)), Tensor(y.astype(np.float64)))
        return mul(sum_all(square(err)), 1.0 / B)
    labels = y.astype(np.int64)
    if np.any(labels != y) or np.any(labels < 0) or np.any(labels >= c):
        raise ValidationError(f"label out of range for {c} classes: {y.tolist()}")
    picked = gather(logits, np.arange(B) * c + labels)
    return mul(sum_all(sub(logsumexp_rows(logits), picked)), 1.0 / B)


def utility_loss(H_ra: Tensor, H_env: Tensor, y, intervener, predictor: PredictorParams,
                 readout_kind: str = "mean", task: str = "binary_classification",
                 scope: str = "all") -> tuple[Tensor, AttentionRecord]:
    H_inter, record = intervene(H_ra, H_env, intervener)
    pooled = H_inter if scope == "all" else slice_rows(H_inter, 0, H_ra.shape[0])
    return task_loss(predict(readout(pooled, readout_kind), predictor), y, task), record


def beta_for(config: TrainConfig, n: int) -> float:
    """beta = 2 beta_hat / (size (size - 1)), size = n (node level) or r (virtual level)."""
    size = n if config.variant == "fig_n" else config.r
    if size < 2:
        return 0.0
    return 2.0 * config.beta_hat / (size * (size - 1))


@dataclass
class Decomposition:
    H: Tensor
    H_ra: Tensor
    H_env: Tensor
    idx_ra: list[int] | None
    m: Tensor | None


def decompose(graph: Graph, model: FIGModel, frozen: FrozenSelection | None = None) -> Decomposition:
    cfg = model.config
    H = encode(graph, model.encoder)
    if cfg.variant == "fig_n":
        m = partition_scores(H, model.augmenter)
        part = split_node_level(H, m, choose_k(cfg.K_hat, graph.n), frozen)
        return Decomposition(H, part.H_ra, part.H_env, part.idx_ra, m)
    H_vn = virtual_node_embed(truncate_rows(H, model.augmenter.n_max), model.augmenter)
    H_ra, H_env = split_virtual(H_vn, choose_k(cfg.K_hat, cfg.r))
    return Decomposition(H, H_ra, H_env, None, None)


def total_loss(graph: Graph, partner: Graph, model: FIGModel, config: TrainConfig | None = None,
               frozen: FrozenSelection | None = None) -> LossReport:
    """util(own) + alpha util(swapped) + beta (reg(own) + reg(swapped)) for one graph."""
    cfg = config or model.config
    if frozen is not None:
        frozen.begin()
    own = decompose(graph, model, frozen)
    other = own if partner is graph else decompose(partner, model, frozen)
    kw = dict(readout_kind=cfg.readout, task=cfg.task, scope=cfg.readout_scope)
    u_own, rec_own = utility_loss(own.H_ra, own.H_env, graph.label, model.intervener, model.predictor, **kw)
    u_sw, rec_sw = utility_loss(own.H_ra, other.H_env, graph.label, model.intervener, model.predictor, **kw)
    r_own = cut_regularizer(rec_own.P, rec_own.s)
    r_sw = cut_regularizer(rec_sw.P, rec_sw.s)
    beta = beta_for(cfg, graph.n)
    total = add(add(u_own, mul(u_sw, cfg.alpha)), mul(add(r_own, r_sw), beta))
    return LossReport(u_own, u_sw, r_own, r_sw, total)


def predict_graph(graph: Graph, model: FIGModel) -> tuple[np.ndarray, AttentionRecord, Decomposition]:
    """Test-time path: predictor(readout(intervener(H_ra || H_env))) with the graph's own environment."""
    cfg = model.config
    dec = decompose(graph, model)
    H_inter, record = intervene(dec.H_ra, dec.H_env, model.intervener)
    pooled = H_inter if cfg.readout_scope == "all" else slice_rows(H_inter, 0, dec.H_ra.shape[0])
    out = predict(readout(pooled, cfg.readout), model.predictor)
    return out.data.copy(), record, dec
