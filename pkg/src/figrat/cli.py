"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 invalid config or data, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import TrainConfig
from .errors import ConfigError, DataParseError, DivergenceError, FigError, UnsupportedVariantError, ValidationError
from .graphs import gen_motif_dataset, load_jsonl, save_jsonl

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting with status 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _load_config(args) -> TrainConfig:
    cfg = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = cfg.with_(seed=args.seed)
    return cfg


def _print(obj) -> None:
    print(json.dumps(obj, indent=1, sort_keys=True))


def cmd_gen_data(args) -> int:
    ds = gen_motif_dataset(args.num_graphs, motif_classes=args.motifs.split(","), env_model=args.env_model,
                           env_size_range=(args.env_min, args.env_max), noise=args.noise,
                           seed=0 if args.seed is None else args.seed)
    save_jsonl(ds, args.out)
    print(f"wrote {len(ds)} graphs to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .model import save_checkpoint
    from .trainer import train

    cfg = _load_config(args)
    train_set, val_set = load_jsonl(args.train), load_jsonl(args.val)
    log_fh = open(args.log, "w") if args.log else None
    try:
        def on_epoch(entry):
            if log_fh is not None:
                log_fh.write(json.dumps(entry, sort_keys=True) + "\n")
            if args.verbose:
                print(json.dumps(entry, sort_keys=True), flush=True)

        res = train(cfg, train_set, val_set, on_epoch)
    finally:
        if log_fh is not None:
            log_fh.close()
    save_checkpoint(res.model, args.out, extra={"best_epoch": res.best_epoch, "best_val": res.best_val})
    _print({"checkpoint": str(args.out), "best_epoch": res.best_epoch, "best_val": res.best_val})
    return EXIT_OK


def cmd_eval(args) -> int:
    from .experiments import rationale_recovery
    from .model import load_checkpoint
    from .trainer import evaluate

    model = load_checkpoint(args.checkpoint)
    data = load_jsonl(args.data)
    out = {"n_samples": len(data), **evaluate(model, data)}
    if args.recovery:
        rep = rationale_recovery(model, data)
        out.update(precision_at_K=rep.precision_at_K, recall=rep.recall, jaccard=rep.jaccard,
                   random_baseline=rep.random_baseline)
    _print(out)
    return EXIT_OK


def cmd_export_attention(args) -> int:
    from .experiments import export_attention
    from .model import load_checkpoint

    model = load_checkpoint(args.checkpoint)
    data = load_jsonl(args.data)
    if not 0 <= args.index < len(data):
        raise ValidationError(f"--index {args.index} outside [0, {len(data)})")
    meta = export_attention(model, data[args.index], args.out)
    _print({"csv": str(args.out), "K": meta["K"], "cut_value": meta["cut_value"],
            "off_block_mass": meta["off_block_mass"]})
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from .experiments import full_grad_check

    seed = 0 if args.seed is None else args.seed
    err = full_grad_check(args.variant, seed, d=args.d, h=args.h)
    ok = err < args.tol
    print(f"max relative error {err:.3e} ({'pass' if ok else 'FAIL'} at {args.tol:g})")
    return EXIT_OK if ok else EXIT_DIVERGED


def cmd_reg_effect(args) -> int:
    from .experiments import reg_effect_experiment, summarize_reg_effect, write_reg_effect_csv

    cfg = _load_config(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    sizes = tuple(int(s) for s in args.sizes.split(","))
    rows = reg_effect_experiment(cfg, seeds, sizes=sizes,
                                 on_run=lambda r: print(r, flush=True) if args.verbose else None)
    write_reg_effect_csv(rows, args.out)
    _print(summarize_reg_effect(rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="figrat", description="Graph rationale training and analysis.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, config=True):
        sp.add_argument("--seed", type=int, default=None)
        if config:
            sp.add_argument("--config", type=Path, default=None, help="JSON file with TrainConfig fields")

    g = sub.add_parser("gen-data", help="write a synthetic motif dataset as JSONL")
    common(g, config=False)
    g.add_argument("--num-graphs", type=int, required=True)
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--motifs", default="house,cycle5")
    g.add_argument("--env-model", choices=("tree", "random"), default="tree")
    g.add_argument("--env-min", type=int, default=3)
    g.add_argument("--env-max", type=int, default=15)
    g.add_argument("--noise", type=float, default=0.1)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    common(t)
    t.add_argument("--train", type=Path, required=True)
    t.add_argument("--val", type=Path, required=True)
    t.add_argument("--out", type=Path, required=True)
    t.add_argument("--log", type=Path, default=None, help="per-epoch JSONL log")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset")
    common(e, config=False)
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--recovery", action="store_true", help="also score planted-rationale recovery")
    e.set_defaults(fn=cmd_eval)

    x = sub.add_parser("export-attention", help="write one graph's attention matrix as CSV + JSON")
    common(x, config=False)
    x.add_argument("--checkpoint", type=Path, required=True)
    x.add_argument("--data", type=Path, required=True)
    x.add_argument("--index", type=int, default=0)
    x.add_argument("--out", type=Path, required=True)
    x.set_defaults(fn=cmd_export_attention)

    c = sub.add_parser("grad-check", help="finite-difference check of the full objective")
    common(c, config=False)
    c.add_argument("--variant", choices=("fig_n", "fig_vn"), default="fig_n")
    c.add_argument("--d", type=int, default=4)
    c.add_argument("--tol", type=float, default=1e-4)
    c.add_argument("--h", type=float, default=1e-4, help="central-difference step")
    c.set_defaults(fn=cmd_grad_check)

    r = sub.add_parser("reg-effect", help="paired beta_hat=0 vs beta_hat runs over seeds")
    common(r)
    r.add_argument("--seeds", default="0,1,2,3,4")
    r.add_argument("--sizes", default="500,100,100", help="train,val,test sizes")
    r.add_argument("--out", type=Path, required=True)
    r.set_defaults(fn=cmd_reg_effect)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, DataParseError, ValidationError, UnsupportedVariantError, FigError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
