"""Test-bed dynamics: FTCS heat rod, upwind inviscid Burgers, a decoupled linear system.

Also the exponential initial covariance and the truth/observation generators.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from gckf.cores import ProcessModel
from gckf.errors import ArgumentError, StabilityError
from gckf.gaussian import min_eig

FTCS_LIMIT = 0.5


# --- heat rod -------------------------------------------------------------------


@dataclass(frozen=True)
class HeatConfig:
    k: float = 400.0  # W/(m K)
    rho: float = 8700.0  # kg/m^3
    cp: float = 385.0  # J/(kg K)
    l: float = 15.0  # m
    nos: int = 500
    pf: float = 100.0
    boundary: tuple = (0.0, 400.0)
    init_temp: float = 23.0

    @property
    def beta(self) -> float:
        """Thermal diffusivity k / (rho cp), m^2/s."""
        return self.k / (self.rho * self.cp)

    @property
    def dx(self) -> float:
        return self.l / (self.nos + 1)

    @property
    def dt(self) -> float:
        return 1.0 / self.pf


def compute_beta(cfg: HeatConfig) -> float:
    return cfg.beta


def compute_s(cfg: HeatConfig) -> float:
    for name in ("k", "rho", "cp", "l", "pf"):
        if getattr(cfg, name) <= 0:
            raise ArgumentError(f"heat parameter {name} must be positive")
    return cfg.beta * cfg.dt / cfg.dx**2


def heat_transition(cfg: HeatConfig, sparse: bool = False):
    """Tridiagonal FTCS map and the boundary input map B (inputs = (left, right))."""
    s = compute_s(cfg)
    if s > FTCS_LIMIT:
        raise StabilityError(f"FTCS unstable: s = {s:.6g} exceeds the limit {FTCS_LIMIT}")
    n = cfg.nos
    F = sp.diags(
        [np.full(n - 1, s), np.full(n, 1.0 - 2.0 * s), np.full(n - 1, s)], [-1, 0, 1], format="csr"
    )
    B = np.zeros((n, 2))
    B[0, 0] = s
    B[-1, 1] = s
    return (F if sparse else F.toarray()), B


def heat_model(cfg: HeatConfig, sparse: bool = False) -> ProcessModel:
    F, B = heat_transition(cfg, sparse)
    return ProcessModel.linear(F, B)


@dataclass(frozen=True)
class GroundTruth:
    trajectory: np.ndarray  # (steps + 1, nos)
    sample_times: np.ndarray  # seconds


def generate_truth(cfg: HeatConfig, T: float, substeps: int = 10) -> GroundTruth:
    """Noise-free rod temperature by method of lines with classical RK4.

    Sampled every 1/pf seconds with ``substeps`` RK4 stages in between.
    """
    steps = int(round(T * cfg.pf))
    n = cfg.nos
    c = cfg.beta / cfg.dx**2
    left, right = cfg.boundary

    def rhs(u):
        padded = np.concatenate([[left], u, [right]])
        return c * (padded[2:] - 2.0 * u + padded[:-2])

    h = cfg.dt / substeps
    u = np.full(n, float(cfg.init_temp))
    traj = np.empty((steps + 1, n))
    traj[0] = u
    for i in range(steps):
        for _ in range(substeps):
            k1 = rhs(u)
            k2 = rhs(u + 0.5 * h * k1)
            k3 = rhs(u + 0.5 * h * k2)
            k4 = rhs(u + h * k3)
            u = u + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        traj[i + 1] = u
    return GroundTruth(traj, np.arange(steps + 1) * cfg.dt)


# --- inviscid Burgers -----------------------------------------------------------


@dataclass(frozen=True)
class BurgersConfig:
    nos: int = 50
    length: float = 1.0
    pf: float = 500.0
    inflow: float = 1.0
    bump: float = 0.5
    center: float = 0.3
    width: float = 0.1

    @property
    def dx(self) -> float:
        return self.length / self.nos

    @property
    def dt(self) -> float:
        return 1.0 / self.pf

    def initial_state(self) -> np.ndarray:
        x = (np.arange(self.nos) + 0.5) * self.dx
        return self.inflow + self.bump * np.exp(-(((x - self.center) / self.width) ** 2))


def burgers_step(state, dt: float, dx: float, inflow: Optional[float] = None) -> np.ndarray:
    """One upwind finite-volume step of U_t + (U^2/2)_x = 0 for U >= 0.

    ``inflow`` is the ghost value left of cell 0 (defaults to 0).
    """
    if dt <= 0 or dx <= 0:
        raise ArgumentError("dt and dx must be positive")
    u = np.asarray(state, dtype=float)
    r = dt / dx
    cfl = np.max(np.abs(u), initial=0.0) * r
    if cfl > 1.0:
        raise StabilityError(f"CFL number {cfl:.6g} exceeds 1")
    ghost = 0.0 if inflow is None else float(inflow)
    flux = 0.5 * u**2
    left = np.concatenate([[0.5 * ghost**2], flux[:-1]])
    return u - r * (flux - left)


def burgers_jacobian(state, dt: float, dx: float) -> np.ndarray:
    u = np.asarray(state, dtype=float)
    r = dt / dx
    return np.diag(1.0 - r * u) + np.diag(r * u[:-1], -1)


def burgers_model(cfg: BurgersConfig) -> ProcessModel:
    """Burgers as a process model; the input is the inflow value."""
    dt, dx = cfg.dt, cfg.dx
    return ProcessModel(
        dim_state=cfg.nos,
        dim_input=1,
        step=lambda x, u: burgers_step(x, dt, dx, u[0]),
        jacobian=lambda x, u: burgers_jacobian(x, dt, dx),
    )


def burgers_truth(cfg: BurgersConfig, x0, steps: int) -> GroundTruth:
    traj = np.empty((steps + 1, cfg.nos))
    traj[0] = x0
    for i in range(steps):
        traj[i + 1] = burgers_step(traj[i], cfg.dt, cfg.dx, cfg.inflow)
    return GroundTruth(traj, np.arange(steps + 1) * cfg.dt)


# --- decoupled linear system ----------------------------------------------------


def decoupled_model(nos: int, block: int, seed: int, n_inputs: int = 0) -> ProcessModel:
    """Random stable block-diagonal F; blocks of ``block`` consecutive states."""
    if nos % block:
        raise ArgumentError("block size must divide nos")
    rng = np.random.default_rng(seed)
    blocks = []
    for _ in range(nos // block):
        m = rng.standard_normal((block, block))
        blocks.append(0.95 * m / max(np.max(np.abs(np.linalg.eigvals(m))), 1e-12))
    F = sp.block_diag(blocks).toarray() if block > 1 else np.diag(rng.uniform(0.8, 1.0, nos))
    B = rng.standard_normal((nos, n_inputs))
    return ProcessModel.linear(F, B)


def linear_truth(pm: ProcessModel, x0, steps: int, u=(), Q=None, seed: int = 0) -> GroundTruth:
    rng = np.random.default_rng(seed)
    traj = np.empty((steps + 1, pm.dim_state))
    traj[0] = x0
    for i in range(steps):
        x = pm.step(traj[i], np.asarray(u, dtype=float))
        if Q is not None:
            x = x + rng.multivariate_normal(np.zeros(pm.dim_state), Q)
        traj[i + 1] = x
    return GroundTruth(traj, np.arange(steps + 1, dtype=float))


# --- priors and observations ----------------------------------------------------


def initial_covariance(nos: int, scale: float = 10.0, phi: float = 20.0, psi: float = 1.0):
    """scale * exp(-|i - j| / phi) with psi added on the diagonal."""
    if scale <= 0 or phi <= 0 or psi <= 0:
        raise ArgumentError("scale, phi and psi must be positive")
    i = np.arange(nos)
    P = scale * np.exp(-np.abs(i[:, None] - i[None, :]) / phi)
    P[i, i] += psi
    lo = min_eig(P)
    if lo < 0:
        raise ArgumentError(f"initial covariance not PSD: min eigenvalue {lo:.3e}")
    return P


def simulate_observations(
    gt: GroundTruth,
    ol: Sequence[int],
    sigma2_o: float,
    uf: float = 1.0,
    seed: int = 0,
    pf: Optional[float] = None,
) -> np.ndarray:
    """Noisy readings GT[ol] + N(0, sigma2_o) for every truth sample after the first.

    Rows where no update happens (pf/uf > 1) are NaN.
    """
    ol = np.asarray(ol, dtype=int)
    rng = np.random.default_rng(seed)
    clean = gt.trajectory[1:, ol]
    z = clean + np.sqrt(sigma2_o) * rng.standard_normal(clean.shape)
    if pf is not None and uf != pf:
        every = int(round(pf / uf))
        mask = (np.arange(1, clean.shape[0] + 1) % every) != 0
        z[mask] = np.nan
    return z
