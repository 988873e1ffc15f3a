"""Experiment configuration: a JSON document validated into :class:`ExperimentConfig`."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Optional

from gckf.cores import CORE_NAMES, UkfParams
from gckf.errors import GckfError
from gckf.exchange import ARCHS
from gckf.models import BurgersConfig, HeatConfig
from gckf.partition import MODES

MODELS = ("heat", "burgers", "decoupled")


class ConfigError(GckfError, ValueError):
    """Config file is unreadable or a field is invalid."""


@dataclass(frozen=True)
class CovInit:
    scale: float = 10.0
    phi: float = 20.0
    psi: float = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "heat"
    pf: float = 100.0
    uf: float = 100.0
    guf: float = 1.0
    sf: Optional[float] = None  # defaults to guf
    nos: int = 100
    noss: int = 4
    noc: int = 8
    nof: int = 4
    ol: tuple = ()
    sigma2_o: float = 10.0
    sigma2_s: float = 1e-9
    arch: str = "ELSD_FN"
    archetype: str = "NOS"
    core: str = "kf"
    seeds: tuple = (0,)
    horizon: float = 10.0
    cov_init: CovInit = CovInit()
    heat: HeatConfig = HeatConfig(l=1.0, nos=100)
    burgers: BurgersConfig = BurgersConfig()
    ukf: UkfParams = UkfParams()
    nos_shift: Optional[int] = None  # NOS offset; half a block if unset
    block: int = 1  # block size of the decoupled model
    model_seed: int = 0
    snapshots: tuple = ()  # global-update numbers with a normalized-covariance dump
    trace_messages: bool = False

    @property
    def steps_per_gu(self) -> int:
        return int(round(self.pf / self.guf))

    @property
    def n_gu(self) -> int:
        return int(round(self.horizon * self.guf))

    @property
    def gu_per_switch(self) -> int:
        return int(round(self.guf / (self.sf or self.guf)))

    def to_dict(self) -> dict:
        return asdict(self)


_NESTED = {"cov_init": CovInit, "heat": HeatConfig, "burgers": BurgersConfig, "ukf": UkfParams}


def _divides(a: float, b: float) -> bool:
    """True if b / a is a positive integer."""
    q = b / a
    return q >= 1 and math.isclose(q, round(q), rel_tol=0, abs_tol=1e-9)


def validate(cfg: ExperimentConfig) -> list[str]:
    """Field-level problems, empty when the config is usable."""
    errs = []
    if cfg.model not in MODELS:
        errs.append(f"model: expected one of {MODELS}, got {cfg.model!r}")
    if cfg.arch not in ARCHS:
        errs.append(f"arch: expected one of {ARCHS}, got {cfg.arch!r}")
    if cfg.archetype not in MODES:
        errs.append(f"archetype: expected one of {MODES}, got {cfg.archetype!r}")
    if cfg.core not in CORE_NAMES:
        errs.append(f"core: expected one of {CORE_NAMES}, got {cfg.core!r}")
    for name in ("pf", "uf", "guf", "horizon", "sigma2_o"):
        if not getattr(cfg, name) > 0:
            errs.append(f"{name}: must be positive")
    if cfg.sigma2_s < 0:
        errs.append("sigma2_s: must be non-negative")
    if cfg.pf != cfg.uf:
        errs.append("uf: must equal pf")
    if cfg.guf > 0 and cfg.pf > 0 and not _divides(cfg.guf, cfg.pf):
        errs.append("guf: must divide pf")
    sf = cfg.sf or cfg.guf
    if sf > 0 and cfg.guf > 0 and not _divides(sf, cfg.guf):
        errs.append("sf: must divide guf")
    if cfg.guf > 0 and not math.isclose(cfg.horizon * cfg.guf, round(cfg.horizon * cfg.guf)):
        errs.append("horizon: must be a whole number of global-update intervals")
    if not 1 <= cfg.noss <= cfg.nos:
        errs.append("noss: need 1 <= noss <= nos")
    if cfg.nof < 0 or cfg.noc < 1:
        errs.append("nof/noc: nof >= 0 and noc >= 1")
    if any(not 0 <= i < cfg.nos for i in cfg.ol):
        errs.append(f"ol: indices must lie in [0, {cfg.nos})")
    if len(set(cfg.ol)) != len(cfg.ol):
        errs.append("ol: duplicate indices")
    if not cfg.seeds:
        errs.append("seeds: need at least one seed")
    if cfg.core == "kf" and cfg.model == "burgers":
        errs.append("core: burgers is nonlinear, use ekf or ukf")
    if cfg.model == "heat" and cfg.heat.nos != cfg.nos:
        errs.append("heat.nos: must equal nos")
    if cfg.model == "burgers" and (cfg.burgers.nos != cfg.nos or cfg.burgers.pf != cfg.pf):
        errs.append("burgers.nos/pf: must equal nos/pf")
    if cfg.model == "heat" and cfg.heat.pf != cfg.pf:
        errs.append("heat.pf: must equal pf")
    if cfg.model == "decoupled" and cfg.nos % cfg.block:
        errs.append("block: must divide nos")
    return errs


def from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown field(s): {', '.join(unknown)}")
    kw: dict[str, Any] = {}
    for key, value in data.items():
        if key in _NESTED:
            if not isinstance(value, dict):
                raise ConfigError(f"{key}: expected an object")
            sub = _NESTED[key]
            bad = sorted(set(value) - {f.name for f in fields(sub)})
            if bad:
                raise ConfigError(f"{key}: unknown field(s) {', '.join(bad)}")
            if "boundary" in value:
                value = {**value, "boundary": tuple(value["boundary"])}
            kw[key] = sub(**value)
        elif key in ("ol", "seeds", "snapshots"):
            if not isinstance(value, list) or not all(isinstance(v, int) for v in value):
                raise ConfigError(f"{key}: expected a list of integers")
            kw[key] = tuple(value)
        else:
            kw[key] = value
    try:
        cfg = ExperimentConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    # the model's own grid follows the top-level fields unless given explicitly
    if cfg.model == "heat":
        h = data.get("heat", {})
        cfg = replace(cfg, heat=replace(cfg.heat, nos=h.get("nos", cfg.nos), pf=h.get("pf", cfg.pf)))
    if cfg.model == "burgers":
        b = data.get("burgers", {})
        cfg = replace(
            cfg, burgers=replace(cfg.burgers, nos=b.get("nos", cfg.nos), pf=b.get("pf", cfg.pf))
        )
    errs = validate(cfg)
    if errs:
        raise ConfigError("; ".join(errs))
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return from_dict(data)
