"""Gaussian belief algebra.

Beliefs are plain (mean, covariance) pairs. A mean may carry a trailing
replicate axis, shape ``(n, R)``, holding R Monte Carlo means that share
one covariance; this is only meaningful for linear cores, where the
covariance recursion does not depend on the data.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from gckf.errors import ArgumentError, NumericalError

#: Relative cut-off below which eigen/singular values are treated as zero.
PINV_RTOL = 1e-12
#: Relative asymmetry tolerated before a matrix is rejected as non-symmetric.
SYM_RTOL = 1e-9


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ArgumentError(f"covariance must be square, got shape {cov.shape}")
        if mean.ndim not in (1, 2) or mean.shape[0] != cov.shape[0]:
            raise ArgumentError(
                f"mean shape {mean.shape} does not match covariance {cov.shape}"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.cov.shape[0]

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    def validate(self, tol: float = 1e-9) -> None:
        """Raise if the covariance is not symmetric PSD within ``tol``."""
        cov = self.cov
        scale = max(np.max(np.abs(cov), initial=0.0), 1e-300)
        if np.max(np.abs(cov - cov.T), initial=0.0) > tol * scale:
            raise NumericalError("covariance is not symmetric")
        floor = -tol * max(1.0, np.max(np.diag(cov), initial=0.0))
        lo = min_eig(cov)
        if lo < floor:
            raise NumericalError(f"covariance not PSD: min eigenvalue {lo:.3e}")


@dataclass(frozen=True)
class RegressionResult:
    """Linear-Gaussian regression c = alpha (a - mean_a) + mean_c + noise(q)."""

    alpha: np.ndarray
    q: np.ndarray
    mean_a: np.ndarray
    mean_c: np.ndarray


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def min_eig(m: np.ndarray) -> float:
    if m.size == 0:
        return 0.0
    return float(np.linalg.eigvalsh(symmetrize(m))[0])


def _check_index(idx, dim: int) -> np.ndarray:
    idx = np.asarray(idx, dtype=int).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= dim):
        raise IndexError(f"index out of range for dimension {dim}: {idx}")
    if np.unique(idx).size != idx.size:
        raise ArgumentError("index set contains duplicates")
    return idx


def marginalize(b: GaussianBelief, idx) -> GaussianBelief:
    """Marginal of ``b`` over ``idx`` (order preserved)."""
    idx = _check_index(idx, b.dim)
    return GaussianBelief(b.mean[idx], b.cov[np.ix_(idx, idx)])


def clamp_psd(m: np.ndarray, tol: float = SYM_RTOL) -> np.ndarray:
    """Nearest PSD matrix by raising negative eigenvalues to zero.

    Inputs that are already PSD come back symmetrized and otherwise untouched.
    """
    m = np.asarray(m, dtype=float)
    if m.size == 0:
        return m.copy()
    scale = max(np.max(np.abs(m)), 1e-300)
    if np.max(np.abs(m - m.T)) > tol * scale:
        raise ArgumentError("matrix is not symmetric within tolerance")
    s = symmetrize(m)
    lam, vec = np.linalg.eigh(s)
    if lam[0] >= 0.0:
        return s
    lam = np.clip(lam, 0.0, None)
    return symmetrize((vec * lam) @ vec.T)


def psd_eig(a: np.ndarray, rtol: float = PINV_RTOL) -> tuple[np.ndarray, np.ndarray]:
    """Retained eigenpairs of a PSD matrix (values above ``rtol * max``)."""
    lam, vec = np.linalg.eigh(symmetrize(a))
    top = lam[-1] if lam.size else 0.0
    if top <= 0.0:
        return lam[:0], vec[:, :0]
    keep = lam > rtol * top
    return lam[keep], vec[:, keep]


def psd_pinv(a: np.ndarray, rtol: float = PINV_RTOL) -> np.ndarray:
    """Pseudo-inverse of a PSD matrix with a relative eigenvalue cut-off."""
    lam, vec = psd_eig(a, rtol)
    return (vec / lam) @ vec.T


def schur_regression(joint: GaussianBelief, idx_a, idx_c) -> RegressionResult:
    """Regress the ``idx_c`` block of a joint Gaussian on its ``idx_a`` block.

    With A = cov(a), B = cov(c), C = cov(c, a) this returns alpha = C A^+ and
    q = B - C A^+ C^T. When both blocks have the same size the quantities are
    formed around the identity (alpha = I + (C - A) A^+), which keeps the
    strongly correlated regime, e.g. a block against its own clone, free of
    the A A^+ round-off that grows with the condition number of A. If A is
    singular the square form acts as the identity on its null space, where
    the anchor carries no randomness and any choice reproduces the same
    joint; this keeps alpha = I exactly for a block against its clone.
    """
    idx_a = _check_index(idx_a, joint.dim)
    idx_c = _check_index(idx_c, joint.dim)
    if idx_a.size == 0 or idx_c.size == 0:
        raise ArgumentError("regression needs non-empty anchor and target sets")
    if np.intersect1d(idx_a, idx_c).size:
        raise ArgumentError("anchor and target index sets overlap")
    cov = joint.cov
    a_cov = cov[np.ix_(idx_a, idx_a)]
    b_cov = cov[np.ix_(idx_c, idx_c)]
    c_cov = cov[np.ix_(idx_c, idx_a)]
    lam, vec = psd_eig(a_cov)
    a_pinv = (vec / lam) @ vec.T
    if idx_a.size == idx_c.size:
        n = idx_a.size
        proj = np.eye(n) if lam.size == n else vec @ vec.T
        delta = c_cov - a_cov
        alpha = np.eye(n) + delta @ a_pinv
        q = (b_cov - a_cov) - delta @ proj - proj @ delta.T - delta @ a_pinv @ delta.T
    else:
        alpha = c_cov @ a_pinv
        q = b_cov - alpha @ c_cov.T
    q = clamp_psd(symmetrize(q), tol=np.inf)
    return RegressionResult(alpha, q, joint.mean[idx_a], joint.mean[idx_c])


def decorrelate_blocks(cov: np.ndarray, blocks: Sequence) -> np.ndarray:
    """Conservative block-diagonal bound: each diagonal block scaled by len(blocks)."""
    cov = np.asarray(cov, dtype=float)
    n = cov.shape[0]
    blocks = [np.asarray(b, dtype=int).reshape(-1) for b in blocks]
    if not blocks:
        raise ArgumentError("need at least one block")
    flat = np.concatenate(blocks)
    if np.unique(flat).size != flat.size:
        raise ArgumentError("blocks overlap")
    if flat.size != n or (n and (flat.min() < 0 or flat.max() >= n)):
        raise ArgumentError("blocks must partition the index space")
    v = len(blocks)
    out = np.zeros_like(cov)
    for b in blocks:
        out[np.ix_(b, b)] = v * cov[np.ix_(b, b)]
    return out


def normalized_covariance(b: GaussianBelief | np.ndarray, *, return_flags: bool = False):
    """Absolute Pearson correlation matrix |cov(i,j)| / (sigma_i sigma_j).

    Zero-variance coordinates get 1 on the diagonal and 0 elsewhere; their
    indices are reported through a warning (and returned with
    ``return_flags=True``).
    """
    cov = b.cov if isinstance(b, GaussianBelief) else np.asarray(b, dtype=float)
    var = np.diag(cov).copy()
    flagged = np.flatnonzero(var <= 0.0)
    sd = np.sqrt(np.where(var > 0.0, var, 1.0))
    out = np.abs(cov) / np.outer(sd, sd)
    if flagged.size:
        warnings.warn(f"zero variance at indices {flagged.tolist()}", RuntimeWarning)
        out[flagged, :] = 0.0
        out[:, flagged] = 0.0
    np.fill_diagonal(out, 1.0)
    out = np.clip(out, 0.0, 1.0)
    if return_flags:
        return out, flagged.tolist()
    return out


def matrix_to_csv(m: np.ndarray) -> str:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    return "".join(",".join(f"{v:.17g}" for v in row) + "\n" for row in m)


def write_matrix_csv(path: str | Path, m: np.ndarray) -> None:
    Path(path).write_text(matrix_to_csv(m), newline="\n")


def read_matrix_csv(path: str | Path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)
