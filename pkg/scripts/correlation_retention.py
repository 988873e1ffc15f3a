"""Normalized-covariance distance to the full filter over time, per variant.

Pure prediction on the fast rod; prints the Frobenius distance between the
GCKF and full-filter normalized covariances at the requested global updates.

    python3 scripts/correlation_retention.py --horizon 200 --at 10,50,100,200
"""

import argparse
from dataclasses import replace

from gckf.config import load_config
from gckf.harness import build_problem, nc_distance, run_experiment, run_full

VARIANTS = [("II", "NONS"), ("II", "NOS"), ("ELSD_FN", "NONS"), ("ELSD_FN", "NOS"), ("ELSD_FC", "NOS")]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="configs/experiment3_scaled.json")
    p.add_argument("--horizon", type=float, default=200.0)
    p.add_argument("--at", default="10,50,100,200")
    args = p.parse_args()
    at = [int(x) for x in args.at.split(",")]
    base = replace(load_config(args.config), horizon=args.horizon, snapshots=tuple(at))
    problem = build_problem(base)
    full = run_full(base, problem)
    print("arch,archetype," + ",".join(f"gu{g}" for g in at))
    for arch, mode in VARIANTS:
        r = run_experiment(replace(base, arch=arch, archetype=mode), problem=problem, full=full)
        row = [f"{nc_distance(r.full.covs[g], r.gckf.covs[g]):.4f}" for g in at]
        print(f"{arch},{mode}," + ",".join(row))


if __name__ == "__main__":
    main()
