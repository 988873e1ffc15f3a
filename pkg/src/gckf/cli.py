"""Command line: ``gckf run | bench | compare``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from gckf.config import ConfigError, ExperimentConfig, load_config
from gckf.errors import ArgumentError, NumericalError, StabilityError
from gckf.exchange import ARCHS, write_trace_csv
from gckf.gaussian import normalized_covariance, write_matrix_csv
from gckf.harness import RunReport, build_problem, nc_distance, run_experiment, run_full, time_iterations
from gckf.models import HeatConfig
from gckf.partition import MODES, write_layout_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _write_csv(path: Path, header: str, rows) -> None:
    path.write_text(header + "\n" + "".join(",".join(r) + "\n" for r in rows), newline="\n")


def write_report(report: RunReport, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    cfg = report.cfg
    rows = []
    for g, t in enumerate(report.gu_times):
        sf, sg, spd = report.full.stds[g], report.gckf.stds[g], report.std_percent_diff[g]
        for i in range(cfg.nos):
            rows.append((str(g), _fmt(t), str(i), _fmt(sf[i]), _fmt(sg[i]), _fmt(spd[i])))
    _write_csv(out / "metrics.csv", "gu,time,state,full_std,gckf_std,std_percent_diff", rows)

    disc = report.discrepancy_series()
    _write_csv(
        out / "discrepancy.csv",
        "gu,time,discrepancy",
        ((str(g), _fmt(t), _fmt(d)) for g, (t, d) in enumerate(zip(report.gu_times, disc))),
    )
    for g in sorted(report.gckf.covs):
        write_matrix_csv(out / f"normcov_gu_{g}.csv", normalized_covariance(report.gckf.covs[g]))
        write_matrix_csv(out / f"normcov_full_gu_{g}.csv", normalized_covariance(report.full.covs[g]))
    for layout in report.gckf.layouts:
        write_layout_csv(out / f"layout_epoch_{layout.epoch}.csv", layout)
    if cfg.trace_messages:
        write_trace_csv(out / "message_trace.csv", report.gckf.trace)
    summary = report.summary()
    summary["config"] = cfg.to_dict()
    (out / "report.json").write_text(json.dumps(summary, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    report = run_experiment(cfg)
    write_report(report, Path(args.out))
    print(f"avg_discrepancy={report.avg_discrepancy:.6g}")
    return EXIT_OK


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError:
        raise ConfigError(f"expected a comma separated list of integers, got {text!r}") from None


def _arch_list(text: str) -> list[str]:
    archs = [a for a in text.split(",") if a]
    bad = [a for a in archs if a not in ARCHS]
    if bad or not archs:
        raise ConfigError(f"--arch: unknown architecture(s) {bad}; expected {ARCHS}")
    return archs


def bench_config(nos: int, noss: int, arch: str, n_obs: int, base: Optional[ExperimentConfig] = None):
    """Timing configuration: one heat rod with ``n_obs`` evenly spread sensors.

    Without a base config the rod uses the slow-dynamics length (l=15), which
    stays FTCS-stable at any desk-scale grid size.
    """
    base = base or ExperimentConfig(noc=8, nof=4, horizon=1.0, seeds=(0,), heat=HeatConfig())
    ol = tuple(sorted({int(round(x)) for x in np.linspace(0, nos - 1, n_obs)})) if n_obs else ()
    return replace(
        base,
        model="heat",
        nos=nos,
        noss=noss,
        arch=arch,
        ol=ol,
        core="kf",
        heat=replace(base.heat if base.model == "heat" else HeatConfig(), nos=nos, pf=base.pf),
        snapshots=(),
    )


def cmd_bench(args) -> int:
    base = load_config(args.config) if args.config else None
    archs = _arch_list(args.arch)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for arch in archs:
        for m in _int_list(args.obs_list):
            for noss in _int_list(args.noss_list):
                cfg = bench_config(args.nos, noss, arch, m, base)
                t = time_iterations(cfg, reps=args.reps)
                rows.append(
                    (arch, str(noss), str(len(cfg.ol)))
                    + tuple(_fmt(t[k]) for k in ("t_ff", "t_gckf", "t_gu", "CR"))
                    + tuple(_fmt(t[k]) for k in ("cross_sq", "cross_lin", "local_cube"))
                )
                print(",".join(rows[-1]))
    _write_csv(
        out / "cost_ratio.csv",
        "arch,noss,M,t_ff_ms,t_gckf_ms,t_gu_ms,CR,cross_sq,cross_lin,local_cube",
        rows,
    )
    return EXIT_OK


def default_compare_config() -> ExperimentConfig:
    nos = 100
    return ExperimentConfig(
        nos=nos,
        noss=4,
        heat=HeatConfig(l=101 / 501, nos=nos),
        ol=(0, 19, 39, 59, 79, 99),
        seeds=tuple(range(5)),
        horizon=20.0,
    )


def cmd_compare(args) -> int:
    base = load_config(args.config) if args.config else default_compare_config()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    problem = build_problem(base)
    full = run_full(base, problem)
    rows = []
    for arch in ARCHS:
        for mode in MODES:
            cfg = replace(base, arch=arch, archetype=mode)
            r = run_experiment(cfg, problem=problem, full=full)
            g = cfg.n_gu
            s = r.summary()
            rows.append((
                arch, mode, _fmt(r.avg_discrepancy), _fmt(s["max_abs_std_percent_diff"]),
                _fmt(nc_distance(r.full.covs[g], r.gckf.covs[g])),
            ))
            print(",".join(rows[-1]))
    _write_csv(
        out / "compare.csv",
        "arch,archetype,avg_discrepancy,max_abs_std_percent_diff,nc_distance_final",
        rows,
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gckf", description="Compressed Kalman filter experiments")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="full filter vs GCKF on one config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int)
    r.set_defaults(fn=cmd_run)

    b = sub.add_parser("bench", help="timing sweep and cost ratio")
    b.add_argument("--nos", type=int, default=1000)
    b.add_argument("--noss-list", default="2,5,10,20,50")
    b.add_argument("--arch", default="II")
    b.add_argument("--obs-list", default="500", help="observation counts M to sweep")
    b.add_argument("--reps", type=int, default=5)
    b.add_argument("--config", help="base config for everything not swept")
    b.add_argument("--out", required=True)
    b.set_defaults(fn=cmd_bench)

    c = sub.add_parser("compare", help="all exchange architectures x archetypes")
    c.add_argument("--config")
    c.add_argument("--out", required=True)
    c.set_defaults(fn=cmd_compare)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, StabilityError, ArgumentError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
