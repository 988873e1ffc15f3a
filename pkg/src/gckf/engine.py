"""Compressed-filter machinery: stochastic clones, local estimation, global update.

Each subsystem k carries an augmented belief over ``[clone; current; frozen]``:
the clone is X_k frozen at the start of the interval, the current block
evolves with the local filter, and the optional frozen block holds copies of
external states used by the ELSD exchange. At the end of the interval the
local information is summarised as a :class:`VirtualLikelihood` and folded
back into the full belief by :func:`global_update`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from gckf import cores
from gckf.cores import ObservationModel, ProcessModel, UkfParams
from gckf.errors import ArgumentError, CapabilityError, NumericalError, ProtocolError
from gckf.gaussian import (
    PINV_RTOL,
    GaussianBelief,
    clamp_psd,
    marginalize,
    min_eig,
    psd_eig,
    schur_regression,
    symmetrize,
)
from gckf.partition import PartitionLayout


@dataclass(frozen=True)
class AugmentedBelief:
    """Local belief of one subsystem over ``[clone; current; frozen]``."""

    belief: GaussianBelief
    sub_idx: np.ndarray  # global indices of X_k
    frozen_global: np.ndarray  # global indices held in the frozen block
    sid: int = 0
    a0: Optional[np.ndarray] = None  # clone marginal at t_a
    mean0: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.sub_idx.size

    @property
    def clone_idx(self) -> np.ndarray:
        return np.arange(self.n)

    @property
    def current_idx(self) -> np.ndarray:
        return np.arange(self.n, 2 * self.n)

    @property
    def frozen_idx(self) -> np.ndarray:
        return np.arange(2 * self.n, 2 * self.n + self.frozen_global.size)

    def positions(self, global_idx) -> np.ndarray:
        """Offsets of ``global_idx`` inside X_k; ProtocolError if not owned."""
        global_idx = np.asarray(global_idx, dtype=int).reshape(-1)
        lookup = {int(g): i for i, g in enumerate(self.sub_idx)}
        try:
            return np.array([lookup[int(g)] for g in global_idx], dtype=int)
        except KeyError as exc:
            raise ProtocolError(f"state {exc.args[0]} is not owned by subsystem {self.sid}") from None

    def with_belief(self, b: GaussianBelief) -> "AugmentedBelief":
        return AugmentedBelief(b, self.sub_idx, self.frozen_global, self.sid, self.a0, self.mean0)


@dataclass(frozen=True)
class VirtualLikelihood:
    subsystem_id: int
    delta_mean: np.ndarray
    delta_cov: np.ndarray
    phi: np.ndarray
    q_xi: np.ndarray
    new_mean_current: np.ndarray
    clone_mean_posterior: np.ndarray


# --- subsystem process models ---------------------------------------------------


@dataclass(frozen=True)
class LocalModel:
    """Restriction of the full process model to X_k with external inputs X_b(k)."""

    sid: int
    sub_idx: np.ndarray
    nb_idx: np.ndarray
    step: Callable  # (x_k, x_b, u) -> x_k'
    jacobians: Callable  # (x_k, x_b, u) -> (dx'/dx_k, dx'/dx_b)
    F_ss: Optional[np.ndarray] = None
    F_sb: Optional[np.ndarray] = None
    B_s: Optional[np.ndarray] = None

    @property
    def is_linear(self) -> bool:
        return self.F_ss is not None

    @property
    def p(self) -> int:
        return self.nb_idx.size


def _rows(F, idx: np.ndarray) -> np.ndarray:
    if sp.issparse(F):
        return sp.csr_matrix(F)[idx].toarray()
    return np.asarray(F)[idx]


def build_local_model(pm: ProcessModel, sub_idx, nb_idx, sid: int = 0) -> LocalModel:
    sub_idx = np.asarray(sub_idx, dtype=int)
    nb_idx = np.asarray(nb_idx, dtype=int)
    n_full = pm.dim_state
    if pm.is_linear:
        rows = _rows(pm.F, sub_idx)
        outside = np.ones(n_full, dtype=bool)
        outside[sub_idx] = False
        outside[nb_idx] = False
        if np.any(rows[:, outside] != 0.0):
            raise ArgumentError(
                f"subsystem {sid} couples to states outside its neighbor set; raise nof"
            )
        F_ss = rows[:, sub_idx]
        F_sb = rows[:, nb_idx]
        B_s = pm.B[sub_idx]

        def step(x, xb, u):
            out = F_ss @ x + F_sb @ xb
            if B_s.shape[1]:
                bu = B_s @ np.asarray(u, dtype=float)
                out = out + (bu[:, None] if np.ndim(out) == 2 else bu)
            return out

        return LocalModel(
            sid, sub_idx, nb_idx, step, lambda x, xb, u: (F_ss, F_sb), F_ss, F_sb, B_s
        )

    def embed(x, xb):
        full = np.zeros(n_full)
        full[sub_idx] = x
        full[nb_idx] = xb
        return full

    def step(x, xb, u):
        return np.asarray(pm.step(embed(x, xb), u))[sub_idx]

    def jacobians(x, xb, u):
        if pm.jacobian is None:
            raise CapabilityError("process model has no Jacobian")
        J = np.asarray(pm.jacobian(embed(x, xb), u))[sub_idx]
        return J[:, sub_idx], J[:, nb_idx]

    return LocalModel(sid, sub_idx, nb_idx, step, jacobians)


def local_models(pm: ProcessModel, layout: PartitionLayout) -> list[LocalModel]:
    return [
        build_local_model(pm, layout.subsystems[k], layout.neighbor_indices(k), k)
        for k in range(layout.noss)
    ]


def local_observation(sub_idx, ol, var: float) -> tuple[np.ndarray, Optional[ObservationModel]]:
    """Which entries of the global observation vector fall in X_k, and their model."""
    sub_idx = np.asarray(sub_idx, dtype=int)
    lookup = {int(g): i for i, g in enumerate(sub_idx)}
    rows = [j for j, g in enumerate(ol) if int(g) in lookup]
    if not rows:
        return np.zeros(0, dtype=int), None
    pos = [lookup[int(ol[j])] for j in rows]
    return np.array(rows, dtype=int), ObservationModel.select(pos, sub_idx.size, var)


# --- operations -----------------------------------------------------------------


def init_augmented(
    full: GaussianBelief, sub_idx, frozen_spec=(), sid: int = 0
) -> AugmentedBelief:
    """Clone X_k at t_a and attach frozen copies of ``frozen_spec``."""
    sub_idx = np.asarray(sub_idx, dtype=int).reshape(-1)
    frozen_spec = np.asarray(frozen_spec, dtype=int).reshape(-1)
    if np.intersect1d(sub_idx, frozen_spec).size:
        raise ArgumentError("subsystem and frozen index sets overlap")
    n = sub_idx.size
    m = marginalize(full, np.concatenate([sub_idx, frozen_spec]))
    sel = np.concatenate([np.arange(n), np.arange(n), np.arange(n, n + frozen_spec.size)])
    mean = m.mean[sel]
    cov = m.cov[np.ix_(sel, sel)]
    a0 = m.cov[:n, :n].copy()
    return AugmentedBelief(
        GaussianBelief(mean, cov), sub_idx, frozen_spec, sid, a0, m.mean[:n].copy()
    )


def _external(a: AugmentedBelief, lm: LocalModel, msg):
    """Resolve the message into (alpha, offset, q_zeta) for X_b = alpha f + offset + zeta."""
    from gckf.exchange import apply_message

    if lm.p == 0:
        return None
    if msg is None or not msg.parts:
        raise ProtocolError(f"subsystem {a.sid} needs external states but got no message")
    return apply_message(a, msg, lm)


def local_predict(
    a: AugmentedBelief,
    lm: LocalModel,
    msg,
    core: str,
    Q: np.ndarray,
    u=(),
    ukf: UkfParams = UkfParams(),
) -> AugmentedBelief:
    """Advance the current block one step; clone and frozen blocks stay put.

    External states enter as X_b = alpha (frozen - xb_ta) + xb_t + zeta. For
    EKF and UKF the residual zeta is appended to the state as an ordinary
    independent input and marginalised out afterwards; the linear KF folds it
    in analytically.
    """
    n, nf = a.n, a.frozen_global.size
    u = np.asarray(u, dtype=float).reshape(-1)
    ext = _external(a, lm, msg)
    p = lm.p
    if core == "kf":
        if not lm.is_linear:
            raise ArgumentError("kf core needs a linear process model")
        alpha, offset, q_zeta = ext if p else (None, None, None)
        return a.with_belief(_kf_rows(a.belief, lm, alpha, offset, q_zeta, Q, u))
    dim_w = 2 * n + nf
    d = dim_w + p
    cur = slice(n, 2 * n)
    frz = slice(2 * n, dim_w)
    zet = slice(dim_w, d)

    mean_w = a.belief.mean
    if p:
        alpha, offset, q_zeta = ext
        zero = np.zeros((p,) + mean_w.shape[1:])
        mean = np.concatenate([mean_w, zero])
        cov = np.zeros((d, d))
        cov[:dim_w, :dim_w] = a.belief.cov
        cov[zet, zet] = q_zeta
    else:
        alpha = np.zeros((0, nf))
        offset = np.zeros((0,) + mean_w.shape[1:])
        mean, cov = mean_w, a.belief.cov

    def ext_states(z):
        return alpha @ z[frz] + offset + z[zet]

    def step(z, _u):
        out = z.copy()
        out[cur] = lm.step(z[cur], ext_states(z), u)
        return out

    def jac(z):
        Jx, Jb = lm.jacobians(z[cur], ext_states(z), u)
        T = np.eye(d)
        T[cur, cur] = Jx
        if p:
            T[cur, frz] = Jb @ alpha
            T[cur, zet] = Jb
        return T

    q_aug = np.zeros((d, d))
    q_aug[cur, cur] = Q
    b = GaussianBelief(mean, cov)
    pm = ProcessModel(d, 0, step=step, jacobian=lambda z, _u: jac(z))
    out = cores.predict(core, b, pm, np.zeros(0), q_aug, ukf)
    if p:
        out = marginalize(out, np.arange(dim_w))
    # clone and frozen blocks move by the identity; drop the sigma-point round-off
    keep = np.concatenate([a.clone_idx, a.frozen_idx])
    mean_out, cov_out = out.mean.copy(), out.cov.copy()
    mean_out[keep] = mean_w[keep]
    cov_out[np.ix_(keep, keep)] = a.belief.cov[np.ix_(keep, keep)]
    return a.with_belief(GaussianBelief(mean_out, cov_out))


def _kf_rows(b: GaussianBelief, lm: LocalModel, alpha, offset, q_zeta, Q, u) -> GaussianBelief:
    """Linear predict touching only the current rows; zeta is folded in analytically."""
    n = lm.sub_idx.size
    cur = slice(n, 2 * n)
    frz = slice(2 * n, b.dim)
    T = np.zeros((n, b.dim))
    T[:, cur] = lm.F_ss
    if q_zeta is not None:
        T[:, frz] = lm.F_sb @ alpha
    rows = T @ b.cov
    cov = b.cov.copy()
    cov[cur, :] = rows
    cov[:, cur] = rows.T
    kk = rows @ T.T + Q
    mean = b.mean.copy()
    mean[cur] = T @ b.mean
    if u.size:
        mean[cur] += _match(lm.B_s @ u, mean)
    if q_zeta is not None:
        kk = kk + lm.F_sb @ q_zeta @ lm.F_sb.T
        mean[cur] += lm.F_sb @ offset
    cov[cur, cur] = symmetrize(kk)
    return GaussianBelief(mean, cov)


def local_update(
    a: AugmentedBelief, om: ObservationModel, z, core: str, ukf: UkfParams = UkfParams()
) -> AugmentedBelief:
    """Joint update of all blocks from an observation of the current block.

    ``om`` is written either over X_k (n columns) or over the whole augmented
    vector, in which case it may not touch clone or frozen columns.
    """
    n = a.n
    dim_w = a.belief.dim
    if om.H is not None and om.H.shape[1] == dim_w and dim_w != n:
        mask = np.ones(dim_w, dtype=bool)
        mask[a.current_idx] = False
        if np.any(om.H[:, mask] != 0.0):
            raise ArgumentError("observation references clone or frozen states")
        H_cur = om.H[:, a.current_idx]
    elif om.H is not None and om.H.shape[1] == n:
        H_cur = om.H
    elif om.H is None:
        H_cur = None
    else:
        raise ArgumentError(f"observation model has {om.H.shape[1]} columns")

    cur = a.current_idx
    if H_cur is not None:
        H = np.zeros((H_cur.shape[0], dim_w))
        H[:, cur] = H_cur
        om_w = ObservationModel(h=lambda w: H @ w, R=om.R, H=H)
    else:
        om_w = ObservationModel(h=lambda w: om.h(w[cur]), R=om.R)
    out = cores.update(core, a.belief, om_w, z, ukf)
    return a.with_belief(out)


def extract_virtual_likelihood(
    a: AugmentedBelief, a0: Optional[np.ndarray] = None, mean0: Optional[np.ndarray] = None
) -> VirtualLikelihood:
    a0 = a.a0 if a0 is None else np.asarray(a0, dtype=float)
    mean0 = a.mean0 if mean0 is None else np.asarray(mean0, dtype=float)
    c, x = a.clone_idx, a.current_idx
    if a0.shape != (a.n, a.n):
        raise ArgumentError("a0 does not match the clone block")
    A = a.belief.cov[np.ix_(c, c)]
    floor = -1e-9 * max(1.0, float(np.max(np.diag(A), initial=0.0)))
    if min_eig(A) < floor:
        raise NumericalError(f"clone covariance of subsystem {a.sid} is not PSD")
    clone_mean = a.belief.mean[c]
    joint = marginalize(a.belief, np.concatenate([c, x]))
    reg = schur_regression(joint, np.arange(a.n), np.arange(a.n, 2 * a.n))
    return VirtualLikelihood(
        subsystem_id=a.sid,
        delta_mean=clone_mean - _match(mean0, clone_mean),
        delta_cov=clamp_psd(symmetrize(a0 - A), tol=np.inf),
        phi=reg.alpha,
        q_xi=reg.q,
        new_mean_current=a.belief.mean[x],
        clone_mean_posterior=clone_mean,
    )


def _match(v, like):
    return v[:, None] if np.ndim(like) == 2 and np.ndim(v) == 1 else v


def global_update(
    full_at_ta: GaussianBelief,
    likelihoods: Sequence[VirtualLikelihood],
    layout: PartitionLayout,
) -> GaussianBelief:
    """Fold every subsystem's virtual likelihood into the t_a full belief.

    Subsystems are processed in ascending id. Each one applies
    (i) a constrained virtual update on X_k(t_a) built from the clone change
    (delta_mean, delta_cov = A0 - A), and (ii) an uninformative virtual
    prediction X_k(t_b) = phi (X_k(t_a) - clone mean) + current mean + xi.

    Step (i) is applied in information-equivalent form: with
    delta_cov = V V^T and W = A0^+ V the update is
    P -= P[:,k] W S^-1 W^T P[k,:], S = I + W^T (P[k,k] - A0) W,
    which reduces to P[:,k] A0^+ delta_cov A0^+ P[k,:] while block k still
    holds its t_a marginal, and stays exact once earlier subsystems have
    already moved that marginal through cross-covariances.
    """
    if full_at_ta.dim != layout.nos:
        raise ProtocolError(f"layout covers {layout.nos} states, belief has {full_at_ta.dim}")
    by_id = {vl.subsystem_id: vl for vl in likelihoods}
    if len(by_id) != len(likelihoods) or sorted(by_id) != list(range(layout.noss)):
        raise ProtocolError("need exactly one virtual likelihood per subsystem")

    mean0 = full_at_ta.mean
    P0 = full_at_ta.cov
    mean = mean0.copy()
    P = P0.copy()
    for k in range(layout.noss):
        vl = by_id[k]
        idx = layout.subsystems[k]
        nk = idx.size
        if vl.phi.shape != (nk, nk) or vl.delta_cov.shape != (nk, nk):
            raise ProtocolError(f"likelihood {k} does not match subsystem size {nk}")
        A0 = P0[np.ix_(idx, idx)]

        # (i) constrained virtual update
        lam_a, vec_a = psd_eig(A0)
        lam_d, vec_d = np.linalg.eigh(symmetrize(vl.delta_cov))
        top = max(lam_d[-1] if lam_d.size else 0.0, lam_a[-1] if lam_a.size else 0.0)
        keep = lam_d > PINV_RTOL * top
        if np.any(keep):
            if lam_a.size == 0:
                raise NumericalError(f"subsystem {k}: A0 is zero but the clone gained information")
            V = vec_d[:, keep] * np.sqrt(lam_d[keep])
            a0_pinv = (vec_a / lam_a) @ vec_a.T
            W = a0_pinv @ V
            resid = A0 @ W - V
            if np.linalg.norm(resid) > 1e-6 * max(np.linalg.norm(V), 1e-300):
                raise NumericalError(
                    f"subsystem {k}: A0 pseudo-inverse is degenerate for the clone update"
                )
            a_coef = (vec_d[:, keep] / np.sqrt(lam_d[keep])).T @ vl.delta_mean
            D = P[np.ix_(idx, idx)] - A0
            S = np.eye(W.shape[1]) + W.T @ D @ W
            dmu = mean[idx] - _match(mean0[idx], mean)
            PW = P[:, idx] @ W
            try:
                cf = sla.cho_factor(symmetrize(S), lower=True)
            except np.linalg.LinAlgError:
                raise NumericalError(f"subsystem {k}: constrained update is ill-posed") from None
            mean = mean + PW @ sla.cho_solve(cf, a_coef - W.T @ dmu)
            P = P - PW @ sla.cho_solve(cf, PW.T)

        # (ii) uninformative virtual prediction
        phi = vl.phi
        mean[idx] = phi @ (mean[idx] - vl.clone_mean_posterior) + vl.new_mean_current
        rows = phi @ P[idx, :]
        kk = rows[:, idx] @ phi.T + vl.q_xi
        P[idx, :] = rows
        P[:, idx] = rows.T
        P[np.ix_(idx, idx)] = symmetrize(kk)
    return GaussianBelief(mean, symmetrize(P))
