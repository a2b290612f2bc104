"""GIN-style message-passing encoder: graph -> node embeddings H (n x d)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tensor, add, mul, neighbor_sum, relu
from .errors import ConfigError
from .graphs import Graph
from .layers import Linear, init_mlp, mlp, named_mlp


@dataclass
class EncoderParams:
    input_proj: Linear
    layers: list[list[Linear]]
    eps: list[Tensor]
    edge_proj: Linear | None = None

    @classmethod
    def init(cls, rng: np.random.Generator, d_x: int, d: int, num_layers: int = 3, d_e: int = 0) -> "EncoderParams":
        if num_layers < 1:
            raise ConfigError("encoder needs at least one layer")
        return cls(
            input_proj=Linear.init(rng, d_x, d),
            layers=[init_mlp(rng, [d, d, d]) for _ in range(num_layers)],
            eps=[Tensor(np.zeros(1), requires_grad=True) for _ in range(num_layers)],
            edge_proj=Linear.init(rng, d_e, d) if d_e > 0 else None,
        )

    @property
    def d(self) -> int:
        return self.input_proj.W.shape[1]

    def named(self, prefix: str = "enc") -> dict[str, Tensor]:
        out = self.input_proj.named(f"{prefix}.in")
        if self.edge_proj is not None:
            out.update(self.edge_proj.named(f"{prefix}.edge"))
        for i, (layer, eps) in enumerate(zip(self.layers, self.eps)):
            out.update(named_mlp(layer, f"{prefix}.layer{i}"))
            out[f"{prefix}.layer{i}.eps"] = eps
        return out


def neighbor_index(n: int, edges) -> tuple[np.ndarray, np.ndarray]:
    """Padded (n x max_degree) neighbor ids and incident edge ids, -1 padded, neighbors ascending."""
    e = np.asarray(edges, dtype=np.intp).reshape(-1, 2)
    m = e.shape[0]
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    eid = np.concatenate([np.arange(m), np.arange(m)])
    order = np.lexsort((dst, src))
    src, dst, eid = src[order], dst[order], eid[order]
    deg = np.bincount(src, minlength=n)
    width = int(deg.max()) if deg.size and m else 0
    starts = np.concatenate([[0], np.cumsum(deg)[:-1]])
    slot = np.arange(src.size) - starts[src]
    nbr = np.full((n, width), -1, dtype=np.intp)
    inc = np.full((n, width), -1, dtype=np.intp)
    nbr[src, slot] = dst
    inc[src, slot] = eid
    return nbr, inc


def disjoint_union(graphs: Sequence[Graph]) -> tuple[Graph, np.ndarray]:
    """One graph holding all inputs side by side; also returns node offsets (len B+1)."""
    offsets = np.concatenate([[0], np.cumsum([g.n for g in graphs])]).astype(np.intp)
    edges = [(u + o, v + o) for g, o in zip(graphs, offsets) for u, v in g.edges]
    x = np.concatenate([g.node_feat for g in graphs], axis=0)
    ef = None
    if graphs[0].edge_feat is not None:
        ef = np.concatenate([g.edge_feat.reshape(len(g.edges), -1) for g in graphs], axis=0)
    u = Graph(n=int(offsets[-1]), edges=edges, node_feat=x, label=0, edge_feat=ef)
    return u, offsets


def encode(graph: Graph, params: EncoderParams) -> Tensor:
    if graph.d_x != params.input_proj.W.shape[0]:
        raise ConfigError(f"node feature width {graph.d_x} != encoder input width {params.input_proj.W.shape[0]}")
    has_edges = params.edge_proj is not None and graph.edge_feat is not None and len(graph.edges) > 0
    if has_edges and graph.d_e != params.edge_proj.W.shape[0]:
        raise ConfigError(f"edge feature width {graph.d_e} != encoder edge width {params.edge_proj.W.shape[0]}")
    nbr, inc = neighbor_index(graph.n, graph.edges)
    h = params.input_proj(Tensor(graph.node_feat))
    ef = params.edge_proj(Tensor(graph.edge_feat)) if has_edges else None
    last = len(params.layers) - 1
    for i, (layer, eps) in enumerate(zip(params.layers, params.eps)):
        agg = neighbor_sum(h, nbr)
        if ef is not None:
            agg = add(agg, neighbor_sum(ef, inc))
        h = mlp(add(add(h, mul(h, eps)), agg), layer)
        if i < last:
            h = relu(h)
    return h
