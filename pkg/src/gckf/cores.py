"""Gaussian filter cores: linear KF, EKF and UKF.

Every core maps a :class:`GaussianBelief` to a new one. Process noise is
additive (``Q``); observation noise lives on the :class:`ObservationModel`.
Only the linear KF accepts replicate means of shape ``(n, R)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from gckf.errors import ArgumentError, CapabilityError, NumericalError
from gckf.gaussian import GaussianBelief, clamp_psd, psd_eig, symmetrize

Array = np.ndarray


@dataclass(frozen=True)
class ProcessModel:
    """x' = step(x, u) + w,  w ~ N(0, Q).

    ``F`` and ``B`` are set for linear models (``F`` may be a scipy sparse
    matrix); ``jacobian`` returns d step / d x at a point.
    """

    dim_state: int
    dim_input: int
    step: Callable[[Array, Array], Array]
    jacobian: Optional[Callable[[Array, Array], Array]] = None
    jacobian_u: Optional[Callable[[Array, Array], Array]] = None
    F: Optional[object] = None
    B: Optional[Array] = None

    @property
    def is_linear(self) -> bool:
        return self.F is not None

    @classmethod
    def linear(cls, F, B: Optional[Array] = None) -> "ProcessModel":
        n = F.shape[0]
        B = np.zeros((n, 0)) if B is None else np.asarray(B, dtype=float).reshape(n, -1)
        dense_f = F.toarray() if sp.issparse(F) else np.asarray(F, dtype=float)

        def step(x, u):
            return F @ x + _match(B @ np.asarray(u, dtype=float).reshape(-1), x)

        return cls(
            dim_state=n,
            dim_input=B.shape[1],
            step=step,
            jacobian=lambda x, u: dense_f,
            jacobian_u=lambda x, u: B,
            F=F if sp.issparse(F) else dense_f,
            B=B,
        )


@dataclass(frozen=True)
class ObservationModel:
    """z = h(x) + v,  v ~ N(0, R)."""

    h: Callable[[Array], Array]
    R: Array
    H: Optional[Array] = None
    jacobian: Optional[Callable[[Array], Array]] = None

    @classmethod
    def linear(cls, H: Array, R: Array) -> "ObservationModel":
        H = np.atleast_2d(np.asarray(H, dtype=float))
        return cls(h=lambda x: H @ x, R=np.atleast_2d(np.asarray(R, dtype=float)), H=H)

    @classmethod
    def select(cls, idx, dim: int, var: float) -> "ObservationModel":
        """Direct noisy readings of the states at ``idx``."""
        idx = np.asarray(idx, dtype=int).reshape(-1)
        H = np.zeros((idx.size, dim))
        H[np.arange(idx.size), idx] = 1.0
        return cls.linear(H, var * np.eye(idx.size))

    @property
    def dim_obs(self) -> int:
        return self.R.shape[0]


@dataclass(frozen=True)
class UkfParams:
    alpha_s: float = 1e-1
    beta_s: float = 2.0
    kappa_s: float = 0.0

    def weights(self, n: int) -> tuple[Array, Array, float]:
        """Mean weights, covariance weights and the spread factor n + lambda."""
        lam = self.alpha_s**2 * (n + self.kappa_s) - n
        c = n + lam
        if c <= 0:
            raise ArgumentError(f"UKF spread n + lambda = {c} must be positive")
        wm = np.full(2 * n + 1, 0.5 / c)
        wc = wm.copy()
        wm[0] = lam / c
        wc[0] = lam / c + (1.0 - self.alpha_s**2 + self.beta_s)
        return wm, wc, c


def _match(v: Array, like: Array) -> Array:
    """Broadcast a state-sized vector against a (possibly replicated) mean."""
    if np.ndim(like) == 2 and v.ndim == 1:
        return v[:, None]
    return v


def _check_square(name: str, m, n: int):
    if not hasattr(m, "shape"):
        m = np.asarray(m, dtype=float)
    if m.shape != (n, n):
        raise ArgumentError(f"{name} has shape {m.shape}, expected {(n, n)}")
    return m


# --- linear Kalman filter -------------------------------------------------------


def kf_predict(b: GaussianBelief, pm: ProcessModel, u, Q: Array) -> GaussianBelief:
    if not pm.is_linear:
        raise CapabilityError("kf_predict needs a linear process model (F, B)")
    n = b.dim
    _check_square("F", pm.F, n)
    Q = _check_square("Q", Q, n)
    u = np.asarray(u, dtype=float)
    if u.shape[0] != pm.B.shape[1]:
        raise ArgumentError(f"input has length {u.shape[0]}, model expects {pm.B.shape[1]}")
    F = pm.F
    mean = F @ b.mean
    if pm.B.shape[1]:
        mean = mean + _match(pm.B @ u, mean)
    cov = F @ (F @ b.cov).T + Q
    return GaussianBelief(np.asarray(mean), symmetrize(np.asarray(cov)))


def _gain(cov_xy: Array, S: Array) -> Array:
    """K = cov_xy S^-1 for a PSD innovation covariance S."""
    try:
        c = sla.cho_factor(S, lower=True, check_finite=False)
        return sla.cho_solve(c, cov_xy.T, check_finite=False).T
    except np.linalg.LinAlgError:
        lam, vec = psd_eig(S)
        if lam.size < S.shape[0]:
            raise NumericalError("innovation covariance is singular")
        return cov_xy @ ((vec / lam) @ vec.T)


def _linear_update(b: GaussianBelief, H: Array, R: Array, innov: Array) -> GaussianBelief:
    P = b.cov
    PHt = P @ H.T
    S = symmetrize(H @ PHt + R)
    K = _gain(PHt, S)
    KHP = K @ PHt.T
    # Joseph form (I - KH) P (I - KH)^T + K R K^T, expanded to O(n^2 m).
    cov = P - KHP - KHP.T + K @ S @ K.T
    mean = b.mean + K @ innov
    return GaussianBelief(mean, symmetrize(cov))


def kf_update(b: GaussianBelief, om: ObservationModel, z) -> GaussianBelief:
    if om.H is None:
        raise CapabilityError("kf_update needs a linear observation model (H)")
    H = om.H
    if H.shape[1] != b.dim:
        raise ArgumentError(f"H has {H.shape[1]} columns, belief has dim {b.dim}")
    z = np.asarray(z, dtype=float)
    if z.shape[0] != H.shape[0]:
        raise ArgumentError(f"observation has length {z.shape[0]}, expected {H.shape[0]}")
    return _linear_update(b, H, om.R, z - H @ b.mean)


# --- extended Kalman filter -----------------------------------------------------


def ekf_step(b: GaussianBelief, pm: ProcessModel, u, Q: Array) -> GaussianBelief:
    if pm.jacobian is None:
        raise CapabilityError("ekf_step needs the process Jacobian")
    if b.mean.ndim != 1:
        raise ArgumentError("ekf_step does not take replicate means")
    Q = _check_square("Q", Q, b.dim)
    u = np.asarray(u, dtype=float)
    J = np.asarray(pm.jacobian(b.mean, u))
    mean = np.asarray(pm.step(b.mean, u), dtype=float)
    if mean.shape != b.mean.shape:
        raise ArgumentError("process step changed the state dimension")
    cov = J @ b.cov @ J.T + Q
    return GaussianBelief(mean, symmetrize(cov))


def ekf_update(b: GaussianBelief, om: ObservationModel, z) -> GaussianBelief:
    if om.jacobian is not None:
        H = np.atleast_2d(om.jacobian(b.mean))
    elif om.H is not None:
        H = om.H
    else:
        raise CapabilityError("ekf_update needs an observation Jacobian or H")
    z = np.asarray(z, dtype=float)
    return _linear_update(b, H, om.R, z - np.asarray(om.h(b.mean)))


# --- unscented Kalman filter ----------------------------------------------------


def sigma_points(mean: Array, cov: Array, p: UkfParams) -> tuple[Array, Array, Array]:
    """2n+1 scaled sigma points (rows) with their mean and covariance weights."""
    n = mean.size
    wm, wc, c = p.weights(n)
    cov = clamp_psd(cov, tol=np.inf)
    try:
        root = np.linalg.cholesky(c * cov)
    except np.linalg.LinAlgError:
        # Singular PSD covariances (e.g. a block and its exact clone) have no
        # Cholesky factor; an eigen square root spans the same sigma set.
        lam, vec = np.linalg.eigh(c * cov)
        root = vec * np.sqrt(np.clip(lam, 0.0, None))
    if not np.all(np.isfinite(root)):
        raise NumericalError("covariance square root is not finite")
    pts = np.empty((2 * n + 1, n))
    pts[0] = mean
    pts[1 : n + 1] = mean + root.T
    pts[n + 1 :] = mean - root.T
    return pts, wm, wc


def unscented_transform(
    mean: Array, cov: Array, fn: Callable[[Array], Array], p: UkfParams
) -> tuple[Array, Array, Array]:
    """Mean, covariance of fn(x) and cross-covariance cov(x, fn(x))."""
    pts, wm, wc = sigma_points(mean, cov, p)
    ys = np.array([np.asarray(fn(x), dtype=float) for x in pts])
    y_mean = wm @ ys
    dy = ys - y_mean
    dx = pts - mean
    y_cov = (dy.T * wc) @ dy
    cross = (dx.T * wc) @ dy
    return y_mean, symmetrize(y_cov), cross


def ukf_step(
    b: GaussianBelief, pm: ProcessModel, u, Q: Array, p: UkfParams = UkfParams()
) -> GaussianBelief:
    if b.mean.ndim != 1:
        raise ArgumentError("ukf_step does not take replicate means")
    Q = _check_square("Q", Q, b.dim)
    u = np.asarray(u, dtype=float)
    mean, cov, _ = unscented_transform(b.mean, b.cov, lambda x: pm.step(x, u), p)
    if mean.shape != b.mean.shape:
        raise ArgumentError("process step changed the state dimension")
    return GaussianBelief(mean, clamp_psd(cov + Q, tol=np.inf))


def ukf_update(
    b: GaussianBelief, om: ObservationModel, z, p: UkfParams = UkfParams()
) -> GaussianBelief:
    z = np.asarray(z, dtype=float)
    y_mean, y_cov, cross = unscented_transform(b.mean, b.cov, om.h, p)
    S = symmetrize(y_cov + om.R)
    K = _gain(cross, S)
    mean = b.mean + K @ (z - y_mean)
    cov = b.cov - K @ S @ K.T
    return GaussianBelief(mean, clamp_psd(symmetrize(cov), tol=np.inf))


# --- dispatch by name -----------------------------------------------------------

CORE_NAMES = ("kf", "ekf", "ukf")


def predict(core: str, b, pm, u, Q, ukf: UkfParams = UkfParams()) -> GaussianBelief:
    if core == "kf":
        return kf_predict(b, pm, u, Q)
    if core == "ekf":
        return ekf_step(b, pm, u, Q)
    if core == "ukf":
        return ukf_step(b, pm, u, Q, ukf)
    raise ArgumentError(f"unknown filter core {core!r}; expected one of {CORE_NAMES}")


def update(core: str, b, om, z, ukf: UkfParams = UkfParams()) -> GaussianBelief:
    if core == "kf":
        return kf_update(b, om, z)
    if core == "ekf":
        return ekf_update(b, om, z)
    if core == "ukf":
        return ukf_update(b, om, z, ukf)
    raise ArgumentError(f"unknown filter core {core!r}; expected one of {CORE_NAMES}")
