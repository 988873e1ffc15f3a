"""Run the shipped heat configs and write one report directory per config.

    python3 scripts/heat_experiments.py --out runs/heat
    python3 scripts/heat_experiments.py --configs configs/experiment4_scaled.json --out runs/e4
"""

import argparse
from pathlib import Path

from gckf.cli import write_report
from gckf.config import load_config
from gckf.harness import run_experiment

DEFAULT = ["experiment1", "experiment2", "experiment3_scaled", "experiment4_scaled"]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--configs", nargs="*", default=[f"configs/{n}.json" for n in DEFAULT])
    p.add_argument("--out", default="runs/heat")
    args = p.parse_args()
    for path in args.configs:
        cfg = load_config(path)
        report = run_experiment(cfg)
        out = Path(args.out) / Path(path).stem
        write_report(report, out)
        s = report.summary()
        print(
            f"{Path(path).stem:22s} {cfg.arch:8s} {cfg.archetype:5s} "
            f"avg_disc={s['avg_discrepancy']:+.4f} max|std%|={s['max_abs_std_percent_diff']:.1f} -> {out}"
        )


if __name__ == "__main__":
    main()
