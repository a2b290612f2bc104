"""Train FIG-N and the plain encoder+predictor baseline on the synthetic motif
benchmark and print test accuracy, rationale recovery and off-block attention mass.

    python scripts/desk_benchmark.py --seeds 0,1,2,3,4 --out results/desk.json
"""

import argparse
import json
import logging
import time
from pathlib import Path

import numpy as np

from figrat.augmenter import choose_k
from figrat.baseline import evaluate_baseline, train_baseline
from figrat.config import TrainConfig
from figrat.experiments import motif_splits, off_block_mass, rationale_recovery
from figrat.trainer import evaluate, train


def run(cfg: TrainConfig, seed: int, with_baseline: bool) -> dict:
    train_set, val_set, test_set = motif_splits(seed)
    t0 = time.perf_counter()
    res = train(cfg.with_(seed=seed), train_set, val_set)
    row = {"seed": seed, "seconds": time.perf_counter() - t0, "best_epoch": res.best_epoch}
    row.update(evaluate(res.model, test_set))
    row["off_block_mass"] = off_block_mass(res.model, test_set)
    if cfg.variant == "fig_n":
        rec = rationale_recovery(res.model, test_set)
        ceiling = [min(choose_k(cfg.K_hat, g.n), len(g.rationale_truth)) / choose_k(cfg.K_hat, g.n)
                   for g in test_set]
        row.update(precision_at_K=rec.precision_at_K, recall=rec.recall, random_baseline=rec.random_baseline,
                   precision_ceiling=float(np.mean(ceiling)))
    if with_baseline:
        base = train_baseline(cfg.with_(seed=seed), train_set, val_set)
        row["baseline_accuracy"] = evaluate_baseline(base.model, test_set)["accuracy"]
    return row


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--config", type=Path, default=None, help="JSON file with TrainConfig fields")
    p.add_argument("--no-baseline", action="store_true")
    p.add_argument("--out", type=Path, default=None)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    rows = []
    for seed in (int(s) for s in args.seeds.split(",")):
        row = run(cfg, seed, not args.no_baseline)
        logging.info(json.dumps(row, sort_keys=True))
        rows.append(row)
    summary = {k: float(np.mean([r[k] for r in rows])) for k in rows[0] if k != "seed"}
    logging.info("mean over %d seeds: %s", len(rows), json.dumps(summary, sort_keys=True))
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps({"config": cfg.to_dict(), "runs": rows, "mean": summary}, indent=1))


if __name__ == "__main__":
    main()
