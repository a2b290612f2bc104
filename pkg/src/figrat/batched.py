"""Whole-batch forward pass on a single tape.

The batch is encoded as one disjoint union. Top-K selection runs on a padded
(B x n_pad) score matrix, and the intervener runs one padded batched matmul
over all graphs, masking the padding so each graph only sees its own rows.
Values and gradients match the per-graph path in ``objective`` to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .augmenter import MASK_CONSTANT, choose_k, partition_scores
from .autodiff import (Tensor, add, concat_rows, detach, gather, logsumexp_rows, matmul, mul, reshape,
                       softmax_rows, square, sub, sum_all, take_rows)
from .encoder import disjoint_union, encode
from .errors import ValidationError
from .graphs import Graph
from .intervener import attention_blocks, ffn_block
from .model import FIGModel
from .objective import beta_for, predict


@dataclass
class ArmOutput:
    """One intervention arm (own or swapped environment) for every graph in the batch."""

    logits: Tensor
    losses: Tensor
    P: Tensor
    starts: np.ndarray
    sizes: np.ndarray
    K: np.ndarray
    cut: np.ndarray

    def block(self, g: int) -> np.ndarray:
        """Graph g's t x t attention matrix."""
        t = self.sizes[g]
        return self.P.data[g, :t, :t]


@dataclass
class BatchForward:
    total: Tensor | None
    own: ArmOutput
    swapped: ArmOutput | None
    idx_ra: list[list[int]] | None
    scores: list[np.ndarray] | None
    report: dict[str, float] = field(default_factory=dict)


def _labels(graphs: list[Graph], task: str) -> np.ndarray:
    return np.array([g.label for g in graphs], dtype=np.float64)


def _per_graph_task_loss(logits: Tensor, y: np.ndarray, task: str) -> Tensor:
    B, c = logits.shape
    if task == "regression":
        return square(sub(reshape(logits, (B,)), Tensor(y)))
    labels = y.astype(np.int64)
    if np.any(labels != y) or np.any(labels < 0) or np.any(labels >= c):
        raise ValidationError(f"label out of range for {c} classes")
    return sub(logsumexp_rows(logits), gather(logits, np.arange(B) * c + labels))


def _node_level_sources(graphs, H, offsets, model):
    """Rationale rows via straight-through top-K, environment rows gathered hard."""
    cfg = model.config
    B = len(graphs)
    n = np.diff(offsets)
    N = int(offsets[-1])
    m = partition_scores(H, model.augmenter)
    K = np.array([choose_k(cfg.K_hat, int(k)) for k in n])
    npad = int(n.max())
    pad_idx = np.full((B, npad), -1, dtype=np.intp)
    for g in range(B):
        pad_idx[g, :n[g]] = offsets[g] + np.arange(n[g])
    mask = pad_idx >= 0
    work = gather(m, pad_idx)
    kmax = int(K.max())
    rows, picks = [], np.zeros((kmax, B), dtype=np.intp)
    for i in range(kmax):
        soft = softmax_rows(work, mask)
        am = np.argmax(np.where(mask, work.data, -np.inf), axis=1)
        hard = np.zeros((B, npad))
        hard[np.arange(B), am] = 1.0
        rows.append(add(sub(Tensor(hard), detach(soft)), soft))
        picks[i] = am
        work = sub(work, Tensor(hard * MASK_CONSTANT))
    st = concat_rows(*rows)  # row i*B + g holds graph g's i-th one-hot
    ra_off = np.concatenate([[0], np.cumsum(K)])
    sel_idx = np.full((int(ra_off[-1]), N), -1, dtype=np.intp)
    idx_ra, env_global = [], []
    for g in range(B):
        ranks = np.arange(K[g])
        sel_idx[ra_off[g] + ranks[:, None], offsets[g] + np.arange(n[g])[None, :]] = \
            (ranks[:, None] * B + g) * npad + np.arange(n[g])[None, :]
        chosen = picks[:K[g], g]
        idx_ra.append([int(i) for i in chosen])
        keep = np.ones(n[g], dtype=bool)
        keep[chosen] = False
        env_global.append(offsets[g] + np.nonzero(keep)[0])
    H_ra = matmul(gather(st, sel_idx), H)
    env_global = np.concatenate(env_global)
    E = n - K
    env_off = np.concatenate([[0], np.cumsum(E)])
    parts = [H_ra] + ([take_rows(H, env_global)] if env_global.size else [])
    source = concat_rows(*parts)
    ra_rows = [ra_off[g] + np.arange(K[g]) for g in range(B)]
    env_rows = [ra_off[-1] + env_off[g] + np.arange(E[g]) for g in range(B)]
    scores = [m.data[offsets[g]:offsets[g + 1]].copy() for g in range(B)]
    return source, ra_rows, env_rows, K, idx_ra, scores


def _virtual_level_sources(graphs, H, offsets, model):
    cfg = model.config
    aug = model.augmenter
    B, r, n_max = len(graphs), aug.r, aug.n_max
    n = np.minimum(np.diff(offsets), n_max)  # truncate to the first n_max nodes
    N = int(offsets[-1])
    a_idx = np.full((B * r, N), -1, dtype=np.intp)
    for g in range(B):
        a_idx[g * r:(g + 1) * r, offsets[g]:offsets[g] + n[g]] = \
            np.arange(r)[:, None] * n_max + np.arange(n[g])[None, :]
    A = softmax_rows(gather(aug.W, a_idx), a_idx >= 0)
    H_vn = matmul(A, H)
    k = choose_k(cfg.K_hat, r)
    K = np.full(B, k)
    ra_rows = [g * r + np.arange(k) for g in range(B)]
    env_rows = [g * r + np.arange(k, r) for g in range(B)]
    return H_vn, ra_rows, env_rows, K, None, None


def _arm(source: Tensor, ra_rows, env_rows, K, model: FIGModel, y: np.ndarray, betas: np.ndarray) -> tuple[ArmOutput, Tensor]:
    cfg = model.config
    B = len(ra_rows)
    order = np.concatenate([np.concatenate([ra_rows[g], env_rows[g]]) for g in range(B)]).astype(np.intp)
    sizes = np.array([len(ra_rows[g]) + len(env_rows[g]) for g in range(B)])
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    seg = np.repeat(np.arange(B), sizes)
    local = np.arange(order.size) - starts[seg]
    is_ra = local < K[seg]
    Hcat = take_rows(source, order)
    out, P, valid = attention_blocks(Hcat, sizes, model.intervener)
    out = ffn_block(out, model.intervener)
    member = (seg[None, :] == np.arange(B)[:, None])
    if cfg.readout_scope == "rationale":
        member = member & is_ra[None, :]
    pool = member.astype(np.float64)
    if cfg.readout == "mean":
        pool /= pool.sum(axis=1, keepdims=True)
    logits = predict(matmul(Tensor(pool), out), model.predictor)
    losses = _per_graph_task_loss(logits, y, cfg.task)
    ra_pad = np.arange(valid.shape[1])[None, :] < K[:, None]
    cross = valid[:, :, None] & valid[:, None, :] & (ra_pad[:, :, None] != ra_pad[:, None, :])
    cut = (P.data * cross).sum(axis=(1, 2))
    reg = sum_all(mul(P, cross * (betas / B)[:, None, None]))
    return ArmOutput(logits, losses, P, starts, sizes, K.copy(), cut), reg


def batch_forward(graphs: list[Graph], model: FIGModel, partner: np.ndarray | None = None,
                  with_swapped: bool = True) -> BatchForward:
    """Mean total objective over the batch (and per-graph intermediates).

    ``partner[g]`` names the graph whose environment rows graph g is paired with.
    """
    cfg = model.config
    B = len(graphs)
    union, offsets = disjoint_union(graphs)
    H = encode(union, model.encoder)
    if cfg.variant == "fig_n":
        source, ra_rows, env_rows, K, idx_ra, scores = _node_level_sources(graphs, H, offsets, model)
    else:
        source, ra_rows, env_rows, K, idx_ra, scores = _virtual_level_sources(graphs, H, offsets, model)
    y = _labels(graphs, cfg.task)
    betas = np.array([beta_for(cfg, g.n) for g in graphs])
    own, reg_own = _arm(source, ra_rows, env_rows, K, model, y, betas)
    if not with_swapped:
        return BatchForward(None, own, None, idx_ra, scores,
                            {"l_util_own": float(own.losses.data.mean())})
    partner = np.arange(B) if partner is None else np.asarray(partner)
    sw, reg_sw = _arm(source, ra_rows, [env_rows[p] for p in partner], K, model, y, betas)
    util = mul(add(sum_all(own.losses), mul(sum_all(sw.losses), cfg.alpha)), 1.0 / B)
    total = add(util, add(reg_own, reg_sw))
    report = {
        "l_util_own": float(own.losses.data.mean()),
        "l_util_swapped": float(sw.losses.data.mean()),
        "l_reg_own": float(own.cut.mean()),
        "l_reg_swapped": float(sw.cut.mean()),
        "reg_weighted": float(reg_own.item() + reg_sw.item()),
        "total": total.item(),
    }
    return BatchForward(total, own, sw, idx_ra, scores, report)
