"""Full-objective gradient check over many seeds and finite-difference steps.

Small steps run into float64 round-off on gradients near 1e-8; large steps
straddle ReLU kinks. The table shows where each failure comes from.

    python scripts/grad_check_sweep.py --seeds 60 --steps 1e-5,3e-5,1e-4,3e-4
"""

import argparse

from figrat.experiments import full_grad_check


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--steps", default="1e-5,3e-5,1e-4")
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--tol", type=float, default=1e-4)
    args = p.parse_args()

    for h in (float(s) for s in args.steps.split(",")):
        for variant in ("fig_n", "fig_vn"):
            errs = [full_grad_check(variant, s, d=args.d, h=h) for s in range(args.seeds)]
            fails = [s for s, e in enumerate(errs) if not e < args.tol]
            print(f"h={h:g} d={args.d} {variant}: max {max(errs):.2e}, failing seeds {fails}", flush=True)


if __name__ == "__main__":
    main()
