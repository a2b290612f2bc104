"""The adversarial intervener: one single-head Transformer block over [rationale; environment] rows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (Tensor, add, bmm, concat_rows, gather, layer_norm, matmul, mul, reshape,
                       softmax_rows, sum_all, swap_last, take_rows, transpose)
from .errors import DimensionError
from .layers import Linear, init_mlp, mlp, named_mlp


@dataclass
class IntervenerParams:
    q: Linear
    k: Linear
    v: Linear
    ffn: list[Linear]
    ln_attn: tuple[Tensor, Tensor] | None = None
    ln_ffn: tuple[Tensor, Tensor] | None = None

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, layer_norm: bool = False) -> "IntervenerParams":
        ln = (lambda: (Tensor(np.ones(d), requires_grad=True), Tensor(np.zeros(d), requires_grad=True)))
        return cls(
            q=Linear.init(rng, d, d),
            k=Linear.init(rng, d, d),
            v=Linear.init(rng, d, d),
            ffn=init_mlp(rng, [d, d, d, d]),
            ln_attn=ln() if layer_norm else None,
            ln_ffn=ln() if layer_norm else None,
        )

    @property
    def d(self) -> int:
        return self.q.W.shape[0]

    def named(self, prefix: str = "int") -> dict[str, Tensor]:
        out = {}
        out.update(self.q.named(f"{prefix}.q"))
        out.update(self.k.named(f"{prefix}.k"))
        out.update(self.v.named(f"{prefix}.v"))
        out.update(named_mlp(self.ffn, f"{prefix}.ffn"))
        for name, ln in (("ln_attn", self.ln_attn), ("ln_ffn", self.ln_ffn)):
            if ln is not None:
                out[f"{prefix}.{name}.gain"], out[f"{prefix}.{name}.bias"] = ln
        return out


@dataclass
class AttentionRecord:
    P: Tensor
    s: np.ndarray
    cut_value: float

    @property
    def K(self) -> int:
        return int(self.s.sum())


def indicator_vector(K: int, t: int) -> np.ndarray:
    """s[i] = 1 for the first K rows (rationale), 0 after."""
    if not 0 <= K <= t:
        raise DimensionError(f"indicator_vector: K={K} outside [0, {t}]")
    s = np.zeros(t)
    s[:K] = 1.0
    return s


def cut_weights(s: np.ndarray) -> np.ndarray:
    """C with sum(P * C) = s'P(1-s) + (1-s)'Ps."""
    s = np.asarray(s, dtype=np.float64)
    return np.outer(s, 1.0 - s) + np.outer(1.0 - s, s)


def cut_regularizer(P: Tensor, s) -> Tensor:
    """Attention mass crossing the rationale/environment boundary, both directions."""
    s = np.asarray(s, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] != s.shape[0]:
        raise DimensionError(f"cut_regularizer: P shape {P.shape} vs s length {s.shape}")
    return sum_all(mul(P, cut_weights(s)))


def key_proj(x: Tensor, params: IntervenerParams) -> Tensor:
    """x W_K. The key bias adds q_i . b_K to every logit of row i, which softmax
    cancels, so it is left out to keep that invariance exact in floating point."""
    return matmul(x, params.k.W)


def attention(Hcat: Tensor, params: IntervenerParams, mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Scaled dot-product self-attention with residual: returns (P V + H, P).

    ``mask`` restricts attention to blocks (used to run many graphs at once).
    """
    if Hcat.ndim != 2 or Hcat.shape[1] != params.d:
        raise DimensionError(f"attention: input shape {Hcat.shape} vs model width {params.d}")
    x = Hcat if params.ln_attn is None else layer_norm(Hcat, *params.ln_attn)
    Q, K, V = params.q(x), key_proj(x, params), params.v(x)
    logits = mul(matmul(Q, transpose(K)), 1.0 / np.sqrt(params.d))
    P = softmax_rows(logits, mask)
    return add(matmul(P, V), Hcat), P


def attention_blocks(Hcat: Tensor, sizes: np.ndarray, params: IntervenerParams) -> tuple[Tensor, Tensor, np.ndarray]:
    """Self-attention run independently on consecutive row blocks of ``Hcat``.

    Blocks are zero-padded to a common length and processed as one batched
    product; padded keys are masked out. Returns (P V + H, P padded to
    (B, t_max, t_max), per-block validity mask of shape (B, t_max)).
    """
    T, d = Hcat.shape
    B, tmax = len(sizes), int(np.max(sizes))
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    valid = np.arange(tmax)[None, :] < np.asarray(sizes)[:, None]
    rows = np.where(valid, starts[:, None] + np.arange(tmax)[None, :], -1).reshape(-1)
    flat = np.where(rows[:, None] >= 0, rows[:, None] * d + np.arange(d)[None, :], -1)
    x = Hcat if params.ln_attn is None else layer_norm(Hcat, *params.ln_attn)
    xp = gather(x, flat)
    Q = reshape(params.q(xp), (B, tmax, d))
    K = reshape(key_proj(xp, params), (B, tmax, d))
    V = reshape(params.v(xp), (B, tmax, d))
    logits = mul(bmm(Q, swap_last(K)), 1.0 / np.sqrt(d))
    P = softmax_rows(logits, valid[:, :, None] & valid[:, None, :])
    pv = reshape(bmm(P, V), (B * tmax, d))
    return add(take_rows(pv, np.nonzero(rows >= 0)[0]), Hcat), P, valid


def ffn_block(H: Tensor, params: IntervenerParams) -> Tensor:
    if H.ndim != 2 or H.shape[1] != params.d:
        raise DimensionError(f"ffn_block: input shape {H.shape} vs model width {params.d}")
    x = H if params.ln_ffn is None else layer_norm(H, *params.ln_ffn)
    return add(mlp(x, params.ffn), H)


def intervene(H_ra: Tensor, H_env: Tensor, params: IntervenerParams) -> tuple[Tensor, AttentionRecord]:
    if H_ra.shape[0] < 1:
        raise DimensionError("intervene needs at least one rationale row")
    Hcat = concat_rows(H_ra, H_env)
    out, P = attention(Hcat, params)
    out = ffn_block(out, params)
    s = indicator_vector(H_ra.shape[0], Hcat.shape[0])
    cut = float((P.data * cut_weights(s)).sum())
    return out, AttentionRecord(P, s, cut)


def intervene_graph_add(h_ra: Tensor, h_env: Tensor) -> Tensor:
    """Graph-level additive intervention baseline."""
    if h_ra.shape != h_env.shape:
        raise DimensionError(f"intervene_graph_add: shapes {h_ra.shape} and {h_env.shape}")
    return add(h_ra, h_env)
