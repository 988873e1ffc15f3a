"""Experiment orchestration: full filter vs GCKF, metrics, timing and cost ratio."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from gckf import cores
from gckf.config import ExperimentConfig
from gckf.cores import ObservationModel, ProcessModel
from gckf.engine import (
    extract_virtual_likelihood,
    global_update,
    init_augmented,
    local_models,
    local_observation,
    local_predict,
    local_update,
)
from gckf.errors import ArgumentError, MeasurementError
from gckf.exchange import frozen_indices, message_round, trace_rows
from gckf.gaussian import GaussianBelief, normalized_covariance
from gckf.models import (
    burgers_model,
    burgers_truth,
    decoupled_model,
    generate_truth,
    heat_model,
    initial_covariance,
    linear_truth,
)
from gckf.partition import PartitionLayout, SwitchSchedule, build_layout, next_layout


# --- problem assembly -----------------------------------------------------------


@dataclass(frozen=True)
class Problem:
    pm: ProcessModel
    u: np.ndarray
    Q: np.ndarray
    prior: GaussianBelief
    truth: np.ndarray  # (runs, steps + 1, nos)
    obs: np.ndarray  # (runs, steps, M)
    om: Optional[ObservationModel]


def _obs_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 2])


def build_problem(cfg: ExperimentConfig) -> Problem:
    n = cfg.nos
    steps = cfg.n_gu * cfg.steps_per_gu
    c = cfg.cov_init
    P0 = initial_covariance(n, c.scale, c.phi, c.psi)
    Q = cfg.sigma2_s * np.eye(n)
    runs = len(cfg.seeds)
    if cfg.model == "heat":
        pm = heat_model(cfg.heat, sparse=True)
        u = np.array(cfg.heat.boundary, dtype=float)
        mean0 = np.full(n, float(cfg.heat.init_temp))
        gt = generate_truth(cfg.heat, steps / cfg.pf).trajectory
        truth = np.broadcast_to(gt, (runs,) + gt.shape)
    elif cfg.model == "burgers":
        pm = burgers_model(cfg.burgers)
        u = np.array([cfg.burgers.inflow])
        mean0 = cfg.burgers.initial_state()
        root = np.linalg.cholesky(P0)
        truth = np.stack([
            burgers_truth(
                cfg.burgers, mean0 + root @ np.random.default_rng([s, 1]).standard_normal(n), steps
            ).trajectory
            for s in cfg.seeds
        ])
    else:
        pm = decoupled_model(n, cfg.block, cfg.model_seed)
        u = np.zeros(0)
        mean0 = np.zeros(n)
        root = np.linalg.cholesky(P0)
        truth = np.stack([
            linear_truth(pm, root @ np.random.default_rng([s, 1]).standard_normal(n), steps,
                         Q=Q if cfg.sigma2_s > 0 else None, seed=s).trajectory
            for s in cfg.seeds
        ])
    ol = np.asarray(cfg.ol, dtype=int)
    obs = np.stack([
        truth[r, 1:][:, ol] + np.sqrt(cfg.sigma2_o) * _obs_rng(s).standard_normal((steps, ol.size))
        for r, s in enumerate(cfg.seeds)
    ])
    om = ObservationModel.select(ol, n, cfg.sigma2_o) if ol.size else None
    return Problem(pm, u, Q, GaussianBelief(mean0, P0), truth, obs, om)


def _batches(cfg: ExperimentConfig) -> list[np.ndarray]:
    """Run indices filtered together: all at once for the linear KF, one by one otherwise."""
    runs = np.arange(len(cfg.seeds))
    return [runs] if cfg.core == "kf" else [np.array([r]) for r in runs]


def _batch_belief(prior: GaussianBelief, size: int, batched: bool) -> GaussianBelief:
    if not batched:
        return prior
    return GaussianBelief(np.repeat(prior.mean[:, None], size, axis=1), prior.cov)


def _obs_at(problem: Problem, runs: np.ndarray, t: int, batched: bool) -> np.ndarray:
    z = problem.obs[runs, t]  # (r, M)
    return z.T if batched else z[0]


# --- filter runs ----------------------------------------------------------------


@dataclass
class FilterTrace:
    """Means at every global-update instant for each run, plus the covariance trail."""

    means: np.ndarray  # (runs, n_gu + 1, nos)
    stds: np.ndarray  # (n_gu + 1, nos), first run
    covs: dict  # gu -> covariance (first run) at snapshot instants
    step_times: list = field(default_factory=list)
    gu_times: list = field(default_factory=list)
    layouts: list = field(default_factory=list)
    trace: list = field(default_factory=list)


def _snapshot_set(cfg: ExperimentConfig) -> set:
    return set(cfg.snapshots) | {cfg.n_gu}


def run_full(cfg: ExperimentConfig, problem: Problem, core: Optional[str] = None) -> FilterTrace:
    """The oracle: one filter over the whole state."""
    core = core or cfg.core
    L, G, n = cfg.steps_per_gu, cfg.n_gu, cfg.nos
    runs = len(cfg.seeds)
    means = np.empty((runs, G + 1, n))
    stds = np.empty((G + 1, n))
    covs: dict = {}
    snaps = _snapshot_set(cfg)
    step_times = []
    batched = core == "kf"
    batches = [np.arange(runs)] if batched else [np.array([r]) for r in range(runs)]
    for batch in batches:
        b = _batch_belief(problem.prior, batch.size, batched)
        first = batch[0] == 0
        means[batch, 0] = b.mean.T if batched else b.mean
        if first:
            stds[0] = b.std
            if 0 in snaps:
                covs[0] = b.cov
        for g in range(1, G + 1):
            for j in range(L):
                t = (g - 1) * L + j
                t0 = time.perf_counter()
                b = cores.predict(core, b, problem.pm, problem.u, problem.Q, cfg.ukf)
                if problem.om is not None:
                    b = cores.update(core, b, problem.om, _obs_at(problem, batch, t, batched), cfg.ukf)
                step_times.append(time.perf_counter() - t0)
            means[batch, g] = b.mean.T if batched else b.mean
            if first:
                stds[g] = b.std
                if g in snaps:
                    covs[g] = b.cov
    return FilterTrace(means, stds, covs, step_times)


def _schedule(cfg: ExperimentConfig) -> SwitchSchedule:
    return SwitchSchedule.default(cfg.archetype, cfg.nos, cfg.noss, cfg.sf or cfg.guf, cfg.nos_shift)


MessageHook = Callable[[int, int, list, list], None]


def run_gckf(
    cfg: ExperimentConfig,
    problem: Problem,
    on_messages: Optional[MessageHook] = None,
) -> FilterTrace:
    """GCKF under the configured archetype, exchange architecture and core.

    ``on_messages(gu, step, messages, subsystems)`` sees every message round;
    ``gu`` counts from 1 and names the global update that closes the interval.
    """
    L, G, n = cfg.steps_per_gu, cfg.n_gu, cfg.nos
    runs = len(cfg.seeds)
    means = np.empty((runs, G + 1, n))
    stds = np.empty((G + 1, n))
    covs: dict = {}
    snaps = _snapshot_set(cfg)
    sched = _schedule(cfg)
    ol = np.asarray(cfg.ol, dtype=int)
    out = FilterTrace(means, stds, covs)
    model_cache: dict = {}

    def models_for(layout: PartitionLayout):
        key = (layout.offset, layout.noss)
        if key not in model_cache:
            lms = local_models(problem.pm, layout)
            obs = [local_observation(layout.subsystems[k], ol, cfg.sigma2_o) for k in range(layout.noss)]
            frozen = [frozen_indices(layout, k, cfg.arch, cfg.noc) for k in range(layout.noss)]
            model_cache[key] = (lms, obs, frozen)
        return model_cache[key]

    batched = cfg.core == "kf"
    for batch in _batches(cfg):
        first = batch[0] == 0
        g_belief = _batch_belief(problem.prior, batch.size, batched)
        layout = build_layout(n, cfg.noss, 0, cfg.nof)
        means[batch, 0] = g_belief.mean.T if batched else g_belief.mean
        if first:
            stds[0] = g_belief.std
            out.layouts.append(layout)
            if 0 in snaps:
                covs[0] = g_belief.cov
        for g in range(1, G + 1):
            lms, obs_models, frozen = models_for(layout)
            subs = [
                init_augmented(g_belief, layout.subsystems[k], frozen[k], k)
                for k in range(layout.noss)
            ]
            Qk = [problem.Q[np.ix_(s, s)] for s in layout.subsystems]
            for j in range(L):
                t = (g - 1) * L + j
                z = _obs_at(problem, batch, t, batched)
                t0 = time.perf_counter()
                msgs = message_round(subs, layout, cfg.arch, cfg.noc)
                if on_messages is not None:
                    on_messages(g, j, msgs, subs)
                if cfg.trace_messages and first:
                    out.trace.extend(trace_rows(msgs, layout.epoch, t))
                new = []
                for k, a in enumerate(subs):
                    a = local_predict(a, lms[k], msgs[k], cfg.core, Qk[k], problem.u, cfg.ukf)
                    rows, om_k = obs_models[k]
                    if om_k is not None:
                        a = local_update(a, om_k, z[rows], cfg.core, cfg.ukf)
                    new.append(a)
                subs = new
                if first:
                    out.step_times.append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            vls = [extract_virtual_likelihood(a) for a in subs]
            g_belief = global_update(g_belief, vls, layout)
            if first:
                out.gu_times.append(time.perf_counter() - t0)
            means[batch, g] = g_belief.mean.T if batched else g_belief.mean
            if first:
                stds[g] = g_belief.std
                if g in snaps:
                    covs[g] = g_belief.cov
            if g % cfg.gu_per_switch == 0:
                layout = next_layout(sched, layout)
                if first and g < G:
                    out.layouts.append(layout)
    return out


# --- metrics --------------------------------------------------------------------


def avg_discrepancy(full_means, gckf_means, gt, runs: Optional[int] = None) -> float:
    """Mean of |full - GT| - |GCKF - GT| over states, times and runs.

    Arrays are (runs, times, states); ``gt`` may omit the run axis.
    Positive values mean the GCKF estimate sits closer to the truth.
    """
    full = np.asarray(full_means, dtype=float)
    gckf = np.asarray(gckf_means, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if full.shape != gckf.shape:
        raise ArgumentError(f"mean arrays differ in shape: {full.shape} vs {gckf.shape}")
    if gt.shape != full.shape and gt.shape != full.shape[1:]:
        raise ArgumentError(f"truth shape {gt.shape} does not align with {full.shape}")
    if runs is not None and full.ndim == 3 and full.shape[0] != runs:
        raise ArgumentError(f"expected {runs} runs, got {full.shape[0]}")
    return float(np.mean(np.abs(full - gt) - np.abs(gckf - gt)))


def std_percent_diff(full, gckf) -> np.ndarray:
    """100 (sigma_gckf - sigma_full) / sigma_full per state; NaN where sigma_full = 0."""
    sf = full.std if isinstance(full, GaussianBelief) else np.asarray(full, dtype=float)
    sg = gckf.std if isinstance(gckf, GaussianBelief) else np.asarray(gckf, dtype=float)
    if sf.shape != sg.shape:
        raise ArgumentError("beliefs differ in dimension")
    out = np.full(sf.shape, np.nan)
    ok = sf > 0
    out[ok] = 100.0 * (sg[ok] - sf[ok]) / sf[ok]
    return out


def nc_distance(cov_a, cov_b) -> float:
    """Frobenius distance between two normalized covariance matrices."""
    return float(np.linalg.norm(normalized_covariance(cov_a) - normalized_covariance(cov_b)))


def cost_ratio(t_ff: float, t_gckf: float, t_gu: float, pf: float, guf: float) -> float:
    """Full-filter cost over GCKF cost with the global update amortised over pf/guf steps."""
    den = t_gckf * pf + t_gu * guf
    if not den > 0 or not t_ff > 0:
        raise MeasurementError(f"cannot form a cost ratio from t_ff={t_ff}, denominator={den}")
    return t_ff * pf / den


def gu_cost_proxies(sizes: Sequence[int]) -> dict:
    n = int(np.sum(sizes))
    s = np.asarray(sizes, dtype=float)
    return {
        "cross_sq": float(np.sum((n - s) ** 2 * s)),
        "cross_lin": float(np.sum((n - s) * s**2)),
        "local_cube": float(np.sum(s**3)),
    }


# --- reports --------------------------------------------------------------------


@dataclass
class RunReport:
    cfg: ExperimentConfig
    gu_times: np.ndarray  # seconds of simulated time at each global update
    truth: np.ndarray  # (runs, n_gu + 1, nos)
    full: FilterTrace
    gckf: FilterTrace
    avg_discrepancy: float
    std_percent_diff: np.ndarray  # (n_gu + 1, nos)
    timing: dict

    def discrepancy_series(self) -> np.ndarray:
        d = np.abs(self.full.means - self.truth) - np.abs(self.gckf.means - self.truth)
        return d.mean(axis=(0, 2))

    def summary(self) -> dict:
        spd = self.std_percent_diff[1:]
        return {
            "avg_discrepancy": self.avg_discrepancy,
            "max_abs_std_percent_diff": float(np.nanmax(np.abs(spd))) if spd.size else 0.0,
            "max_std_percent_diff": float(np.nanmax(spd)) if spd.size else 0.0,
            "n_gu": self.cfg.n_gu,
            "runs": len(self.cfg.seeds),
            "timing_ms": self.timing,
        }


def _median_ms(xs) -> float:
    return float(np.median(xs) * 1e3) if len(xs) else float("nan")


def run_experiment(
    cfg: ExperimentConfig,
    on_messages: Optional[MessageHook] = None,
    problem: Optional[Problem] = None,
    full: Optional[FilterTrace] = None,
) -> RunReport:
    """Full filter and GCKF on identical observation streams.

    A precomputed ``full`` trace may be passed in when several GCKF variants
    share one oracle run; it depends only on the model, data and core.
    """
    problem = problem or build_problem(cfg)
    full = full or run_full(cfg, problem)
    gckf = run_gckf(cfg, problem, on_messages)
    idx = np.arange(cfg.n_gu + 1) * cfg.steps_per_gu
    truth = problem.truth[:, idx]
    disc = avg_discrepancy(full.means[:, 1:], gckf.means[:, 1:], truth[:, 1:], len(cfg.seeds))
    spd = np.stack([std_percent_diff(f, g) for f, g in zip(full.stds, gckf.stds)])
    t_ff = _median_ms(full.step_times)
    t_gckf = _median_ms(gckf.step_times)
    t_gu = _median_ms(gckf.gu_times)
    timing = {"t_ff": t_ff, "t_gckf": t_gckf, "t_gu": t_gu}
    try:
        timing["CR"] = cost_ratio(t_ff, t_gckf, t_gu, cfg.pf, cfg.guf)
    except MeasurementError:
        timing["CR"] = float("nan")
    timing.update(gu_cost_proxies([s.size for s in build_layout(cfg.nos, cfg.noss).subsystems]))
    return RunReport(cfg, idx / cfg.pf, truth, full, gckf, disc, spd, timing)


# --- timing sweep ---------------------------------------------------------------


def _timed(fn) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def _full_step(cfg: ExperimentConfig, problem: Problem):
    z = problem.obs[0, 0]

    def step():
        nb = cores.predict(cfg.core, problem.prior, problem.pm, problem.u, problem.Q, cfg.ukf)
        if problem.om is not None:
            cores.update(cfg.core, nb, problem.om, z, cfg.ukf)

    return step


def _gckf_steps(cfg: ExperimentConfig, problem: Problem, arch: str):
    """Closures for one GCKF step and one global update of ``arch`` on the first interval."""
    core = cfg.core
    b = problem.prior
    z = problem.obs[0, 0]
    layout = build_layout(cfg.nos, cfg.noss, 0, cfg.nof)
    ol = np.asarray(cfg.ol, dtype=int)
    lms = local_models(problem.pm, layout)
    obs = [local_observation(s, ol, cfg.sigma2_o) for s in layout.subsystems]
    frozen = [frozen_indices(layout, k, arch, cfg.noc) for k in range(layout.noss)]
    subs0 = [init_augmented(b, layout.subsystems[k], frozen[k], k) for k in range(layout.noss)]
    Qk = [problem.Q[np.ix_(s, s)] for s in layout.subsystems]

    def step():
        msgs = message_round(subs0, layout, arch, cfg.noc)
        out = []
        for k, a in enumerate(subs0):
            a = local_predict(a, lms[k], msgs[k], core, Qk[k], problem.u, cfg.ukf)
            rows, om_k = obs[k]
            if om_k is not None:
                a = local_update(a, om_k, z[rows], core, cfg.ukf)
            out.append(a)
        return out

    subs = step()

    def gu():
        global_update(b, [extract_virtual_likelihood(a) for a in subs], layout)

    return step, gu, layout


def time_iterations(
    cfg: ExperimentConfig, reps: int = 5, problem: Optional[Problem] = None
) -> dict:
    """Median wall time (ms) of one full-filter step, one GCKF step and one global update.

    One run, one global-update interval; every quantity is repeated ``reps``
    times on identical inputs.
    """
    if reps < 5:
        raise ArgumentError("timing needs at least 5 repetitions")
    problem = problem or build_problem(cfg)
    ff_step = _full_step(cfg, problem)
    step, gu, layout = _gckf_steps(cfg, problem, cfg.arch)
    # the first repetition warms caches and is dropped
    t_ff, t_gckf, t_gu = (_median_ms([_timed(f) for _ in range(reps + 1)][1:]) for f in (ff_step, step, gu))
    out = {"t_ff": t_ff, "t_gckf": t_gckf, "t_gu": t_gu}
    out["CR"] = cost_ratio(t_ff, t_gckf, t_gu, cfg.pf, cfg.guf)
    out.update(gu_cost_proxies([s.size for s in layout.subsystems]))
    return out


def time_architectures(
    cfg: ExperimentConfig, archs: Sequence[str], reps: int = 5, problem: Optional[Problem] = None
) -> dict:
    """Like :func:`time_iterations` for several architectures at once.

    Repetitions are interleaved round-robin, so slow drift of the machine hits
    every architecture alike, and the full filter is timed once and shared.
    Returns ``{arch: timing dict}``.
    """
    if reps < 5:
        raise ArgumentError("timing needs at least 5 repetitions")
    problem = problem or build_problem(cfg)
    ff_step = _full_step(cfg, problem)
    fns = {a: _gckf_steps(cfg, problem, a) for a in archs}
    ff, gk, gu = [], {a: [] for a in archs}, {a: [] for a in archs}
    for r in range(reps + 1):
        ff.append(_timed(ff_step))
        order = list(archs[r % len(archs):]) + list(archs[: r % len(archs)])
        for a in order:
            gk[a].append(_timed(fns[a][0]))
        for a in order:
            gu[a].append(_timed(fns[a][1]))
    t_ff = _median_ms(ff[1:])
    out = {}
    for a in archs:
        t_gckf, t_gu = _median_ms(gk[a][1:]), _median_ms(gu[a][1:])
        out[a] = {"t_ff": t_ff, "t_gckf": t_gckf, "t_gu": t_gu,
                  "CR": cost_ratio(t_ff, t_gckf, t_gu, cfg.pf, cfg.guf)}
        out[a].update(gu_cost_proxies([s.size for s in fns[a][2].subsystems]))
    return out
