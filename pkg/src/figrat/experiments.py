"""Rationale recovery, attention export, the regularization-effect experiment and
a full-objective gradient check."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .augmenter import FrozenSelection
from .autodiff import Tensor, grad_check, no_grad
from .batched import batch_forward
from .config import TrainConfig
from .errors import UnsupportedVariantError, ValidationError
from .graphs import Dataset, Graph, gen_motif_dataset, random_derangement
from .intervener import cut_regularizer
from .model import FIGModel
from .objective import predict_graph, total_loss
from .trainer import TrainResult, evaluate, train

log = logging.getLogger(__name__)

REG_EFFECT_HEADER = ("seed", "beta_hat", "off_block_mass", "test_metric")


@dataclass
class RecoveryReport:
    """Mean overlap between selected and planted rationale nodes.

    ``random_baseline`` is the expected precision of a uniformly random
    K-subset, |truth|/n averaged over graphs.
    """

    precision_at_K: float
    recall: float
    jaccard: float
    random_baseline: float
    n_graphs: int
    per_graph: list[float] = field(default_factory=list, repr=False)

    @property
    def lift(self) -> float:
        return self.precision_at_K - self.random_baseline


def overlap_scores(selected: Sequence[int], truth: Sequence[int]) -> tuple[float, float, float]:
    """(precision, recall, jaccard) of one selected set against the truth set."""
    sel, tru = set(int(i) for i in selected), set(int(i) for i in truth)
    if not sel or not tru:
        raise ValidationError("overlap_scores needs non-empty sets")
    inter = len(sel & tru)
    return inter / len(sel), inter / len(tru), inter / len(sel | tru)


def rationale_recovery(model: FIGModel, dataset, variant: str | None = None,
                       batch_size: int = 128) -> RecoveryReport:
    variant = variant or model.config.variant
    if variant != "fig_n":
        raise UnsupportedVariantError(f"rationale recovery needs node-level indices; {variant} has none")
    graphs = list(dataset)
    if not graphs:
        raise ValueError("rationale_recovery needs at least one graph")
    missing = [i for i, g in enumerate(graphs) if not g.rationale_truth]
    if missing:
        raise ValueError(f"graphs without rationale_truth: {missing[:5]}")
    selected = []
    with no_grad():
        for start in range(0, len(graphs), batch_size):
            selected.extend(batch_forward(graphs[start:start + batch_size], model, with_swapped=False).idx_ra)
    scores = np.array([overlap_scores(sel, g.rationale_truth) for sel, g in zip(selected, graphs)])
    baseline = float(np.mean([len(g.rationale_truth) / g.n for g in graphs]))
    return RecoveryReport(float(scores[:, 0].mean()), float(scores[:, 1].mean()), float(scores[:, 2].mean()),
                          baseline, len(graphs), scores[:, 0].tolist())


def off_block_mass(model: FIGModel, dataset, batch_size: int = 128) -> float:
    """Mean over graphs of cut(P, s) / t at test time (own environment)."""
    vals = []
    with no_grad():
        graphs = list(dataset)
        for start in range(0, len(graphs), batch_size):
            own = batch_forward(graphs[start:start + batch_size], model, with_swapped=False).own
            vals.append(own.cut / own.sizes)
    return float(np.mean(np.concatenate(vals)))


def sidecar_path(out_path) -> Path:
    return Path(out_path).with_suffix(".json")


def export_attention(model: FIGModel, graph: Graph, out_path) -> dict:
    """Write P as CSV (12 significant digits, no header) and a JSON sidecar next to it."""
    out_path = Path(out_path)
    with no_grad():
        _, record, _ = predict_graph(graph, model)
    P = record.P.data
    t = P.shape[0]
    meta = {"s": [int(v) for v in record.s], "K": record.K, "cut_value": float(record.cut_value),
            "off_block_mass": float(record.cut_value) / t}
    try:
        with open(out_path, "w", newline="") as fh:
            for row in P:
                fh.write(",".join(f"{v:.12g}" for v in row) + "\n")
        with open(sidecar_path(out_path), "w") as fh:
            json.dump(meta, fh, indent=1)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"could not write attention export to {out_path}: {exc}") from exc
    return meta


def load_attention(csv_path) -> tuple[np.ndarray, dict]:
    P = np.loadtxt(csv_path, delimiter=",", ndmin=2)
    with open(sidecar_path(csv_path)) as fh:
        meta = json.load(fh)
    return P, meta


def recompute_cut(P: np.ndarray, s) -> float:
    return cut_regularizer(Tensor(P), np.asarray(s, dtype=np.float64)).item()


# ---------------------------------------------------------------------------
# desk-scale benchmark

def motif_splits(seed: int, sizes: Sequence[int] = (500, 100, 100),
                 env_size_range: Sequence[int] = (3, 15), **kw) -> list[Dataset]:
    """Train/val/test splits of one synthetic motif dataset generated from ``seed``."""
    return gen_motif_dataset(int(sum(sizes)), seed=seed, env_size_range=env_size_range, **kw).split(sizes)


def headline_metric(metrics: dict[str, float], task: str) -> float:
    return metrics["rmse"] if task == "regression" else metrics["accuracy"]


@dataclass
class RegEffectRow:
    seed: int
    beta_hat: float
    off_block_mass: float
    test_metric: float


def run_seed(config: TrainConfig, seed: int, sizes=(500, 100, 100)) -> tuple[TrainResult, Dataset]:
    train_set, val_set, test_set = motif_splits(seed, sizes)
    return train(config.with_(seed=seed), train_set, val_set), test_set


def reg_effect_experiment(config: TrainConfig, seeds: Sequence[int], sizes=(500, 100, 100),
                          on_run: Callable[[RegEffectRow], None] | None = None) -> list[RegEffectRow]:
    """Matched pairs per seed: beta_hat=0 against ``config.beta_hat``, same data and init."""
    seeds = [int(s) for s in seeds]
    if len(seeds) < 3:
        raise ValueError("reg_effect_experiment needs at least 3 seeds")
    if config.beta_hat == 0:
        raise ValueError("reg_effect_experiment compares against beta_hat=0; config.beta_hat must be > 0")
    rows = []
    for seed in seeds:
        for beta_hat in (0.0, config.beta_hat):
            res, test_set = run_seed(config.with_(beta_hat=beta_hat), seed, sizes)
            row = RegEffectRow(seed, beta_hat, off_block_mass(res.model, test_set),
                               headline_metric(evaluate(res.model, test_set), config.task))
            log.info("reg-effect %s", row)
            rows.append(row)
            if on_run is not None:
                on_run(row)
    return rows


def write_reg_effect_csv(rows: Sequence[RegEffectRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REG_EFFECT_HEADER)
        for r in rows:
            w.writerow([r.seed, repr(float(r.beta_hat)), repr(r.off_block_mass), repr(r.test_metric)])


def summarize_reg_effect(rows: Sequence[RegEffectRow]) -> dict[str, dict[str, float]]:
    out = {}
    for beta in sorted({r.beta_hat for r in rows}):
        sel = [r for r in rows if r.beta_hat == beta]
        out[repr(beta)] = {"off_block_mass": float(np.mean([r.off_block_mass for r in sel])),
                           "test_metric": float(np.mean([r.test_metric for r in sel])), "runs": len(sel)}
    return out


# ---------------------------------------------------------------------------
# gradient check of the whole objective

def random_graph(rng: np.random.Generator, n: int, d_x: int, d_e: int = 0, label: int | None = None) -> Graph:
    """Random connected graph: a random tree plus a few extra edges."""
    edges = {tuple(sorted((i, int(rng.integers(0, i))))) for i in range(1, n)}
    for _ in range(int(rng.integers(0, n))):
        a, b = rng.choice(n, size=2, replace=False)
        edges.add((int(min(a, b)), int(max(a, b))))
    edges = sorted(edges)
    return Graph(n=n, edges=np.array(edges, dtype=np.int64).reshape(-1, 2),
                 node_feat=rng.normal(scale=0.5, size=(n, d_x)),
                 label=int(rng.integers(0, 2)) if label is None else label,
                 edge_feat=rng.normal(scale=0.5, size=(len(edges), d_e)) if d_e else None)


def full_grad_check(variant: str = "fig_n", seed: int = 0, d: int = 4, r: int = 4,
                    n_range: tuple[int, int] = (5, 8), h: float = 1e-4) -> float:
    """Max relative error of the whole objective's gradient over every parameter.

    The top-K selection is recorded at the analytic pass and replayed during the
    finite-difference probes, so both sides see the same straight-through path.
    """
    rng = np.random.default_rng(seed)
    d_x, d_e = 3, 2
    g = random_graph(rng, int(rng.integers(n_range[0], n_range[1] + 1)), d_x, d_e)
    partner = random_graph(rng, int(rng.integers(n_range[0], n_range[1] + 1)), d_x, d_e)
    cfg = TrainConfig(variant=variant, d=d, r=r, encoder_layers=2, alpha=0.7, beta_hat=1.3,
                      n_max=n_range[1], seed=seed)
    model = FIGModel.init(cfg, d_x, d_e, 2, n_range[1])
    # zero biases put any row whose ReLUs are all dead exactly on a kink
    for p in model.parameters().values():
        if p.ndim == 1:
            p.data += rng.normal(scale=0.1, size=p.shape)
    frozen = FrozenSelection()
    worst = 0.0
    for p in model.parameters().values():
        model.zero_grad()
        worst = max(worst, grad_check(lambda _: total_loss(g, partner, model, frozen=frozen).total, p, h))
    return worst


@dataclass
class DirectionCheck:
    before: float
    after_theta: float
    after_phi: float

    @property
    def theta_decreases(self) -> bool:
        return self.after_theta < self.before

    @property
    def phi_increases(self) -> bool:
        return self.after_phi > self.before


def step_directions(seed: int, lr: float = 1e-6, variant: str = "fig_n", batch: int = 4) -> DirectionCheck:
    """Objective before and after a lone theta descent step and a lone phi ascent step.

    The batch and its partner assignment stay fixed; each step starts from the
    same parameters.
    """
    rng = np.random.default_rng(seed)
    graphs = gen_motif_dataset(batch, seed=seed).graphs
    partner = random_derangement(batch, rng)
    cfg = TrainConfig(variant=variant, d=8, r=4, encoder_layers=2, n_max=20, seed=seed)
    model = FIGModel.init(cfg, graphs[0].d_x, 0, 2, 20)
    model.zero_grad()
    fwd = batch_forward(graphs, model, partner)
    fwd.total.backward()
    start = model.state()

    def objective() -> float:
        with no_grad():
            return batch_forward(graphs, model, partner).total.item()

    for p in model.theta().values():
        p.data -= lr * p.grad
    after_theta = objective()
    model.load_state(start)
    for p in model.phi().values():
        p.data += lr * p.grad
    after_phi = objective()
    model.load_state(start)
    return DirectionCheck(fwd.total.item(), after_theta, after_phi)
