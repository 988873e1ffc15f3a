"""Burgers testbed: full UKF vs full EKF, and GCKF(UKF) vs full UKF.

    python3 scripts/burgers_cores.py --seeds 30
"""

import argparse
from dataclasses import replace

import numpy as np

from gckf.config import load_config
from gckf.harness import avg_discrepancy, build_problem, run_experiment, run_full


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="configs/burgers.json")
    p.add_argument("--seeds", type=int)
    p.add_argument("--skip-gckf", action="store_true")
    args = p.parse_args()
    cfg = load_config(args.config)
    if args.seeds:
        cfg = replace(cfg, seeds=tuple(range(args.seeds)))
    problem = build_problem(cfg)
    ukf = run_full(cfg, problem, "ukf")
    ekf = run_full(cfg, problem, "ekf")
    idx = np.arange(cfg.n_gu + 1) * cfg.steps_per_gu
    truth = problem.truth[:, idx]
    per_run = [
        avg_discrepancy(ekf.means[r : r + 1, 1:], ukf.means[r : r + 1, 1:], truth[r : r + 1, 1:])
        for r in range(len(cfg.seeds))
    ]
    se = np.std(per_run, ddof=1) / np.sqrt(len(per_run)) if len(per_run) > 1 else float("nan")
    print(f"UKF gain over EKF: {np.mean(per_run):+.5f} (standard error {se:.5f}, runs {len(per_run)})")
    if not args.skip_gckf:
        r = run_experiment(cfg, problem=problem, full=ukf)
        print(f"GCKF({cfg.core}, {cfg.archetype}/{cfg.arch}) vs full: avg_disc {r.avg_discrepancy:+.5f}")


if __name__ == "__main__":
    main()
