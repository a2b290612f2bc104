"""Graphs, JSONL datasets, batching with environment partners, planted-motif benchmark."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, DataParseError, ValidationError

log = logging.getLogger(__name__)

MOTIFS = {
    # 5 nodes / 6 edges: square 0-1-2-3 with roof node 4 on top of 0-1
    "house": [(0, 1), (1, 2), (2, 3), (3, 0), (0, 4), (1, 4)],
    "cycle5": [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)],
}
MOTIF_SIZE = 5


@dataclass
class Graph:
    n: int
    edges: list[tuple[int, int]]
    node_feat: np.ndarray
    label: float | int
    edge_feat: np.ndarray | None = None
    rationale_truth: list[int] | None = None

    def __post_init__(self):
        self.edges = [(int(u), int(v)) for u, v in self.edges]
        x = np.asarray(self.node_feat, dtype=np.float64)
        if x.size == 0:
            x = np.zeros((self.n, 0))
        self.node_feat = x
        if self.edge_feat is not None:
            self.edge_feat = np.asarray(self.edge_feat, dtype=np.float64)
            if self.edge_feat.ndim == 1:
                self.edge_feat = self.edge_feat.reshape(len(self.edges), -1)

    def validate(self, index: int = 0) -> None:
        if self.n < 1:
            raise ValidationError(f"graph must have at least one node, graph {index}")
        seen = set()
        for u, v in self.edges:
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise ValidationError(f"endpoint out of range, graph {index}")
            if u == v:
                raise ValidationError(f"self-loop on node {u}, graph {index}")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise ValidationError(f"duplicate undirected edge {key}, graph {index}")
            seen.add(key)
        if self.node_feat.shape[0] != self.n:
            raise ValidationError(f"node feature rows {self.node_feat.shape[0]} != n={self.n}, graph {index}")
        if self.edge_feat is not None and self.edge_feat.shape[0] != len(self.edges):
            raise ValidationError(
                f"edge feature rows {self.edge_feat.shape[0]} != edge count {len(self.edges)}, graph {index}")
        if self.rationale_truth is not None:
            if any(not 0 <= i < self.n for i in self.rationale_truth):
                raise ValidationError(f"rationale index out of range, graph {index}")

    @property
    def d_x(self) -> int:
        return self.node_feat.shape[1]

    @property
    def d_e(self) -> int:
        return 0 if self.edge_feat is None else self.edge_feat.shape[1]

    @cached_property
    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for u, v in self.edges:
            a[u, v] = a[v, u] = 1.0
        return a

    @cached_property
    def incidence(self) -> np.ndarray:
        """n x |E|: entry (v, e) is 1 when v is an endpoint of edge e."""
        b = np.zeros((self.n, len(self.edges)))
        for k, (u, v) in enumerate(self.edges):
            b[u, k] = b[v, k] = 1.0
        return b

    def to_json(self) -> dict:
        obj = {"n": self.n, "edges": [list(e) for e in self.edges], "x": self.node_feat.tolist()}
        if self.edge_feat is not None:
            obj["e"] = self.edge_feat.tolist()
        obj["y"] = self.label
        if self.rationale_truth is not None:
            obj["rationale"] = list(self.rationale_truth)
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "Graph":
        n = int(obj["n"])
        x = np.asarray(obj["x"], dtype=np.float64)
        if x.size == 0:
            x = np.zeros((n, 0))
        e = obj.get("e")
        return cls(
            n=n,
            edges=[tuple(p) for p in obj["edges"]],
            node_feat=x,
            label=obj["y"],
            edge_feat=None if e is None else np.asarray(e, dtype=np.float64),
            rationale_truth=None if obj.get("rationale") is None else [int(i) for i in obj["rationale"]],
        )

    def permuted(self, perm: Sequence[int]) -> "Graph":
        """Relabel node i as perm[i]."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)
        return Graph(
            n=self.n,
            edges=[(int(perm[u]), int(perm[v])) for u, v in self.edges],
            node_feat=self.node_feat[inv],
            label=self.label,
            edge_feat=self.edge_feat,
            rationale_truth=None if self.rationale_truth is None
            else sorted(int(perm[i]) for i in self.rationale_truth),
        )


@dataclass
class Dataset:
    graphs: list[Graph] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.graphs)

    def __iter__(self) -> Iterator[Graph]:
        return iter(self.graphs)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Dataset(self.graphs[i])
        return self.graphs[i]

    @property
    def d_x(self) -> int:
        return self.graphs[0].d_x if self.graphs else 0

    @property
    def d_e(self) -> int:
        return self.graphs[0].d_e if self.graphs else 0

    @property
    def needs_input_projection(self) -> bool:
        """Node and edge feature widths differ, so both get mapped to a shared width."""
        return self.d_e > 0 and self.d_x != self.d_e

    @property
    def mean_nodes(self) -> float:
        return float(np.mean([g.n for g in self.graphs])) if self.graphs else 0.0

    @property
    def n_max(self) -> int:
        return int(math.ceil(10 * self.mean_nodes))

    @property
    def num_classes(self) -> int:
        return int(max(int(g.label) for g in self.graphs)) + 1 if self.graphs else 0

    def validate(self) -> None:
        for i, g in enumerate(self.graphs):
            g.validate(i)
            if g.d_x != self.d_x:
                raise ValidationError(f"inconsistent node feature dimension, graph {i}")
            if g.d_e != self.d_e:
                raise ValidationError(f"inconsistent edge feature dimension, graph {i}")

    def split(self, sizes: Sequence[int]) -> list["Dataset"]:
        out, start = [], 0
        for s in sizes:
            out.append(Dataset(self.graphs[start:start + s]))
            start += s
        return out


def load_jsonl(path) -> Dataset:
    path = Path(path)
    graphs = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                graphs.append(Graph.from_json(obj))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataParseError(f"{path}:{lineno}: {exc}") from exc
    ds = Dataset(graphs)
    if not graphs:
        log.warning("dataset %s is empty", path)
        return ds
    ds.validate()
    if ds.needs_input_projection:
        log.info("node/edge feature widths differ (%d vs %d); encoder projects both", ds.d_x, ds.d_e)
    return ds


def save_jsonl(dataset: Dataset | Sequence[Graph], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for g in dataset:
            fh.write(json.dumps(g.to_json()) + "\n")


# ---------------------------------------------------------------------------
# planted-motif benchmark

def _env_edges(size: int, model: str, rng: np.random.Generator) -> list[tuple[int, int]]:
    # random recursive tree keeps the environment connected
    edges = [(int(rng.integers(0, i)), i) for i in range(1, size)]
    if model == "random":
        present = {(min(u, v), max(u, v)) for u, v in edges}
        candidates = [(u, v) for u in range(size) for v in range(u + 1, size) if (u, v) not in present]
        extra = min(len(candidates), size // 4)
        if extra:
            pick = rng.choice(len(candidates), size=extra, replace=False)
            edges += [candidates[i] for i in sorted(pick)]
    return edges


def _motif_graph(label: int, motif: str, env_model: str, env_size: int, noise: float,
                 degree_dim: int, rng: np.random.Generator) -> Graph:
    edges = list(MOTIFS[motif])
    edges += [(u + MOTIF_SIZE, v + MOTIF_SIZE) for u, v in _env_edges(env_size, env_model, rng)]
    edges.append((int(rng.integers(0, MOTIF_SIZE)), MOTIF_SIZE + int(rng.integers(0, env_size))))
    n = MOTIF_SIZE + env_size
    deg = np.zeros(n, dtype=int)
    for u, v in edges:
        deg[u] += 1
        deg[v] += 1
    x = np.zeros((n, degree_dim))
    x[np.arange(n), np.minimum(deg, degree_dim - 1)] = 1.0
    if noise > 0:
        x += rng.normal(0.0, noise, size=x.shape)
    g = Graph(n=n, edges=edges, node_feat=x, label=label, rationale_truth=list(range(MOTIF_SIZE)))
    g = g.permuted(rng.permutation(n))
    g.edges = sorted((min(u, v), max(u, v)) for u, v in g.edges)
    return g


def gen_motif_dataset(num_graphs: int, motif_classes: Sequence[str] = ("house", "cycle5"),
                      env_model: str = "tree", env_size_range: Sequence[int] = (3, 15),
                      noise: float = 0.1, seed: int = 0, degree_dim: int = 6) -> Dataset:
    """Each graph: one label-determining motif bridged to a random environment.

    Per-graph generators are spawned from ``seed``, so any index range can be
    generated independently and the result does not depend on chunking.
    """
    lo, hi = (int(v) for v in env_size_range)
    if num_graphs < 1:
        raise ConfigError("num_graphs must be >= 1")
    if lo < 3 or hi < lo:
        raise ConfigError(f"invalid env_size_range {list(env_size_range)}: need 3 <= lo <= hi")
    if env_model not in ("tree", "random"):
        raise ConfigError(f"unknown env_model {env_model!r}")
    unknown = [m for m in motif_classes if m not in MOTIFS]
    if unknown or len(motif_classes) < 1:
        raise ConfigError(f"unknown motif classes {unknown}")
    if noise < 0:
        raise ConfigError("noise must be >= 0")
    seqs = np.random.SeedSequence(seed).spawn(num_graphs)
    graphs = []
    for ss in seqs:
        rng = np.random.default_rng(ss)
        label = int(rng.integers(0, len(motif_classes)))
        env_size = int(rng.integers(lo, hi + 1))
        graphs.append(_motif_graph(label, motif_classes[label], env_model, env_size, noise, degree_dim, rng))
    return Dataset(graphs)


# ---------------------------------------------------------------------------
# batching

@dataclass
class Batch:
    graphs: list[Graph]
    partner: np.ndarray

    def __len__(self) -> int:
        return len(self.graphs)


def random_derangement(size: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform permutation without fixed points (identity for size 1)."""
    if size <= 1:
        return np.arange(size)
    while True:
        p = rng.permutation(size)
        if not np.any(p == np.arange(size)):
            return p


def make_batches(dataset: Dataset | Sequence[Graph], batch_size: int, shuffle_seed: int | None = 0) -> list[Batch]:
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    graphs = list(dataset)
    rng = np.random.default_rng(0 if shuffle_seed is None else shuffle_seed)
    order = rng.permutation(len(graphs)) if shuffle_seed is not None else np.arange(len(graphs))
    batches = []
    for start in range(0, len(graphs), batch_size):
        members = [graphs[i] for i in order[start:start + batch_size]]
        batches.append(Batch(members, random_derangement(len(members), rng)))
    return batches
