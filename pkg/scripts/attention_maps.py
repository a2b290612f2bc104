"""Train one seed with and without the cut regularizer and export the
intervener's attention matrix for the first few test graphs of each.

    python scripts/attention_maps.py --seed 0 --count 5 --out-dir results/attention
"""

import argparse
import json
from pathlib import Path

from figrat.config import TrainConfig
from figrat.experiments import export_attention, motif_splits
from figrat.trainer import train


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--out-dir", type=Path, default=Path("results/attention"))
    args = p.parse_args()

    train_set, val_set, test_set = motif_splits(args.seed)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for beta_hat in (0.0, 1.0):
        res = train(TrainConfig(seed=args.seed, beta_hat=beta_hat), train_set, val_set)
        for i in range(min(args.count, len(test_set))):
            out = args.out_dir / f"beta{beta_hat:g}_graph{i}.csv"
            meta = export_attention(res.model, test_set[i], out)
            print(out, json.dumps({k: meta[k] for k in ("K", "off_block_mass")}))


if __name__ == "__main__":
    main()
