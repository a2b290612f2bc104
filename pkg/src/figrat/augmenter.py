"""Rationale/environment decomposition.

Node level: a sigmoid-scored MLP partitioner followed by a straight-through
arg-top-K selection. Virtual-node level: a learned softmax assignment of the
n real nodes onto r virtual nodes, with the first K virtual nodes acting as
the rationale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (Tensor, add, concat_rows, detach, matmul, reshape, sigmoid,
                       slice_rows, softmax_rows, sub, take_rows, gather)
from .errors import ConfigError, DimensionError
from .layers import Linear, init_mlp, mlp, named_mlp

MASK_CONSTANT = 1e6


@dataclass
class AugmenterNParams:
    layers: list[Linear]

    @classmethod
    def init(cls, rng: np.random.Generator, d: int) -> "AugmenterNParams":
        return cls(init_mlp(rng, [d, d, d, 1]))

    def named(self, prefix: str = "aug") -> dict[str, Tensor]:
        return named_mlp(self.layers, prefix)


@dataclass
class AugmenterVNParams:
    W: Tensor
    r: int
    n_max: int

    @classmethod
    def init(cls, rng: np.random.Generator, r: int, n_max: int, scale: float = 0.1) -> "AugmenterVNParams":
        if r < 2:
            raise ConfigError("virtual node count r must be >= 2")
        return cls(Tensor(rng.normal(0.0, scale, size=(r, n_max)), requires_grad=True), r, n_max)

    def named(self, prefix: str = "aug") -> dict[str, Tensor]:
        return {f"{prefix}.W_nvn": self.W}


@dataclass
class Partition:
    m: Tensor
    idx_ra: list[int]
    idx_env: list[int]
    H_ra: Tensor
    H_env: Tensor


def choose_k(k_hat: float, size: int) -> int:
    """round(k_hat * size) clamped to [1, size - 1]; a single row gives K = 1."""
    if size <= 1:
        return 1
    return int(min(max(round(k_hat * size), 1), size - 1))


class FrozenSelection:
    """Records the hard one-hots and detached soft rows of each top-K call, then replays them.

    Replaying freezes the straight-through linearisation point, so the loss
    becomes a smooth function whose exact gradient is the straight-through
    gradient; finite differences can then check the analytic backward pass.
    """

    def __init__(self):
        self.calls: list[list[tuple[np.ndarray, np.ndarray]]] = []
        self.replaying = False
        self._cursor = 0

    def begin(self) -> None:
        """Start a loss evaluation: record on the first, replay afterwards."""
        self.replaying = bool(self.calls)
        self._cursor = 0

    def next_call(self) -> list:
        if self.replaying:
            entry = self.calls[self._cursor]
            self._cursor += 1
            return entry
        entry: list = []
        self.calls.append(entry)
        return entry


def partition_scores(H: Tensor, params: AugmenterNParams) -> Tensor:
    if H.ndim != 2 or H.shape[1] != params.layers[0].W.shape[0]:
        raise DimensionError(f"partition_scores: H shape {H.shape} vs augmenter width {params.layers[0].W.shape[0]}")
    logits = mlp(H, params.layers)
    return sigmoid(reshape(logits, (H.shape[0],)))


def soft_arg_top_k(K: int, H: Tensor, m: Tensor,
                   frozen: FrozenSelection | None = None) -> tuple[Tensor, list[int]]:
    """Straight-through top-K row selection: forward picks hard rows, backward uses softmax(m)."""
    n = m.shape[0]
    if not 1 <= K <= n:
        raise ConfigError(f"K={K} outside [1, {n}]")
    record = frozen.next_call() if frozen is not None else None
    replay = frozen is not None and frozen.replaying
    rows, idx = [], []
    work = reshape(m, (1, n))
    for i in range(K):
        soft = softmax_rows(work)
        if replay:
            hard, soft_const = record[i]
        else:
            hard = np.zeros((1, n))
            # argmax on the logits equals argmax of the softmax without its rounding ties
            hard[0, int(np.argmax(work.data[0]))] = 1.0
            soft_const = soft.data.copy()
            if record is not None:
                record.append((hard, soft_const))
        idx.append(int(np.argmax(hard[0])))
        rows.append(add(sub(Tensor(hard), Tensor(soft_const) if replay else detach(soft)), soft))
        work = sub(work, Tensor(hard * MASK_CONSTANT))
    sel = concat_rows(*rows)
    return matmul(sel, H), idx


def split_node_level(H: Tensor, m: Tensor, K: int, frozen: FrozenSelection | None = None) -> Partition:
    H_ra, idx_ra = soft_arg_top_k(K, H, m, frozen)
    chosen = set(idx_ra)
    idx_env = [i for i in range(H.shape[0]) if i not in chosen]
    H_env = take_rows(H, np.asarray(idx_env, dtype=np.intp)) if idx_env else Tensor(np.zeros((0, H.shape[1])))
    return Partition(m, idx_ra, idx_env, H_ra, H_env)


def virtual_node_embed(H: Tensor, params: AugmenterVNParams) -> Tensor:
    """rowsoftmax(W[:, :n]) @ H; columns past n are masked out of the softmax."""
    n = H.shape[0]
    if n > params.n_max:
        raise DimensionError(f"graph with {n} nodes exceeds n_max={params.n_max}; truncate first")
    return matmul(assignment_matrix(params, n), H)


def assignment_matrix(params: AugmenterVNParams, n: int) -> Tensor:
    """r x n row-stochastic assignment; only the first n columns of W take part."""
    cols = np.arange(params.r)[:, None] * params.n_max + np.arange(n)[None, :]
    return softmax_rows(gather(params.W, cols))


def truncate_rows(H: Tensor, n_max: int) -> Tensor:
    return H if H.shape[0] <= n_max else slice_rows(H, 0, n_max)


def split_virtual(H_vn: Tensor, K: int) -> tuple[Tensor, Tensor]:
    r = H_vn.shape[0]
    if not 1 <= K < r:
        raise ConfigError(f"K={K} outside [1, {r - 1}]")
    return slice_rows(H_vn, 0, K), slice_rows(H_vn, K, r)
