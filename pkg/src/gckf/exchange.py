"""Inter-subsystem information exchange: II, ELSD-FN and ELSD-FC.

A receiver k needs its neighbor states X_b at every prediction step. Each
source d answers with a :class:`MessagePart` describing X_b[d] as

    X_b[d] = alpha_d (anchor - xb_ta) + xb_t + zeta_d,   zeta_d ~ N(0, q_d)

where the anchor is a block of t_a states the receiver keeps frozen. II is
the special case with no anchor (alpha_d empty, q_d the marginal).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

from gckf.engine import AugmentedBelief, LocalModel
from gckf.errors import ArgumentError, ProtocolError
from gckf.gaussian import marginalize, schur_regression
from gckf.partition import PartitionLayout

ARCHS = ("II", "ELSD_FN", "ELSD_FC")


@dataclass(frozen=True)
class MessagePart:
    source: int
    requested: np.ndarray  # global ids of X_b[d]
    anchor_ids: np.ndarray  # global ids of the regression anchor (empty for II)
    alpha: np.ndarray
    q: np.ndarray
    xb_t: np.ndarray
    xb_ta: np.ndarray


@dataclass(frozen=True)
class ExchangeMessage:
    arch: str
    target: int
    parts: tuple = ()

    @property
    def m(self) -> int:
        """Number of distinct sources |M|."""
        return len(self.parts)

    @property
    def requested(self) -> np.ndarray:
        return _cat([p.requested for p in self.parts], int)

    @property
    def anchor_ids(self) -> np.ndarray:
        return _cat([p.anchor_ids for p in self.parts], int)

    @property
    def alpha(self) -> np.ndarray:
        if not self.parts:
            return np.zeros((0, 0))
        return sla.block_diag(*[p.alpha for p in self.parts])

    @property
    def q_zeta(self) -> np.ndarray:
        """Conservative residual covariance: each source block inflated by |M|."""
        if not self.parts:
            return np.zeros((0, 0))
        return sla.block_diag(*[self.m * p.q for p in self.parts])

    @property
    def xb_t(self) -> np.ndarray:
        return np.concatenate([p.xb_t for p in self.parts])

    @property
    def xb_ta(self) -> np.ndarray:
        return np.concatenate([p.xb_ta for p in self.parts])


def _cat(xs, dtype) -> np.ndarray:
    return np.concatenate(xs).astype(dtype) if xs else np.zeros(0, dtype=dtype)


def _check_arch(arch: str) -> None:
    if arch not in ARCHS:
        raise ArgumentError(f"unknown exchange architecture {arch!r}; expected one of {ARCHS}")


def frozen_indices(layout: PartitionLayout, k: int, arch: str, noc: int = 4) -> np.ndarray:
    """Global ids subsystem k keeps frozen under ``arch`` (the anchors it will be sent)."""
    _check_arch(arch)
    if arch == "II":
        return np.zeros(0, dtype=int)
    if arch == "ELSD_FN":
        return layout.neighbor_indices(k)
    return _cat([layout.interface_states(k, d, noc) for d in layout.sources(k)], int)


def synthesize_message(
    source: AugmentedBelief, requested, arch: str, anchor=None
) -> MessagePart:
    """Describe ``requested`` states of ``source`` for a receiver (read-only)."""
    _check_arch(arch)
    requested = np.asarray(requested, dtype=int).reshape(-1)
    req_pos = source.positions(requested)
    cur = source.current_idx[req_pos]
    b = source.belief
    if arch == "II":
        m = marginalize(b, cur)
        return MessagePart(
            source.sid, requested, np.zeros(0, dtype=int),
            np.zeros((requested.size, 0)), m.cov, m.mean, np.zeros((0,) + m.mean.shape[1:]),
        )
    if arch == "ELSD_FN":
        anchor = requested
    elif anchor is None:
        raise ArgumentError("ELSD_FC needs the chosen anchor states")
    anchor = np.asarray(anchor, dtype=int).reshape(-1)
    clone = source.clone_idx[source.positions(anchor)]
    reg = schur_regression(b, clone, cur)
    return MessagePart(source.sid, requested, anchor, reg.alpha, reg.q, reg.mean_c, reg.mean_a)


def apply_message(
    local: AugmentedBelief, msg: ExchangeMessage, lm: Optional[LocalModel] = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Turn a message into (alpha, offset, q_zeta) with X_b = alpha frozen + offset + zeta.

    ``alpha`` has one column per frozen state of ``local``; under II it is all
    zeros, so ELSD with alpha = 0 reduces to II exactly.
    """
    if lm is not None and not np.array_equal(msg.requested, lm.nb_idx):
        raise ProtocolError(f"message for subsystem {local.sid} does not cover its neighbor states")
    nf = local.frozen_global.size
    p = msg.requested.size
    xb_t = msg.xb_t
    if msg.arch == "II":
        return np.zeros((p, nf)), xb_t, msg.q_zeta
    if not np.array_equal(msg.anchor_ids, local.frozen_global):
        raise ProtocolError(
            f"anchors {msg.anchor_ids.tolist()} do not match frozen states of subsystem {local.sid}"
        )
    alpha = msg.alpha
    xb_ta = msg.xb_ta
    return alpha, xb_t - alpha @ xb_ta, msg.q_zeta


def message_round(
    subsystems: Sequence[AugmentedBelief],
    layout: PartitionLayout,
    arch: str,
    noc: int = 4,
) -> list[ExchangeMessage]:
    """All messages for one step, synthesized from the pre-step snapshot."""
    _check_arch(arch)
    by_sid = {a.sid: a for a in subsystems}
    out = []
    for k in range(layout.noss):
        parts = []
        for spec in layout.neighbor_specs[k]:
            anchor = layout.interface_states(k, spec.source, noc) if arch == "ELSD_FC" else None
            parts.append(synthesize_message(by_sid[spec.source], spec.indices, arch, anchor))
        out.append(ExchangeMessage(arch, k, tuple(parts)))
    return out


def trace_rows(messages: Sequence[ExchangeMessage], epoch: int, step: int) -> list[str]:
    rows = []
    for msg in messages:
        for p in msg.parts:
            rows.append(
                f"{epoch},{step},{p.source},{msg.target},"
                f"{np.linalg.norm(p.alpha):.17g},{np.trace(p.q):.17g}\n"
            )
    return rows


TRACE_HEADER = "epoch,step,source,target,alpha_norm,q_trace\n"


def write_trace_csv(path: str | Path, rows: Sequence[str]) -> None:
    Path(path).write_text(TRACE_HEADER + "".join(rows), newline="\n")
