"""Regenerate the ablation table (S, CW, S+CW, S+CW+PCR) averaged over seeds.

Usage: python scripts/ablation.py [--seeds 0,1,2,3,4] [--set key=value ...]
"""

import argparse
import sys

from pdanet.config import RunConfig, apply_overrides, parse_pairs
from pdanet.experiment import ablation_table, parse_grid, run_ablation
from pdanet.losses import DEFAULT_LAMBDA_GRID


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", default="0,1,2,3,4")
    parser.add_argument("--grid", default=",".join(str(x) for x in DEFAULT_LAMBDA_GRID))
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = parser.parse_args(argv)
    pairs = {"synth_count": "256", "epochs": "40"}
    for item in args.set:
        pairs.update(parse_pairs(item))
    cfg = apply_overrides(RunConfig(), pairs).validate()
    seeds = [int(s) for s in args.seeds.split(",")]

    def show(row):
        lam = "" if row.lam is None else f" lambda={row.lam}"
        print(f"seed {row.seed} {row.name:<9} mse {row.test_mse:.6f} r2 {row.test_r2:.4f} "
              f"polarity {row.polarity_match:.4f}{lam}", file=sys.stderr, flush=True)

    rows = run_ablation(cfg, seeds, parse_grid(args.grid), on_row=show)
    print(ablation_table(rows), end="")


if __name__ == "__main__":
    main()
