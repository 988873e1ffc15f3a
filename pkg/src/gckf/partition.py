"""Subsystem layouts over the global state vector and the NONS/NOS switching schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from gckf.errors import ArgumentError
from gckf.gaussian import GaussianBelief, marginalize

MODES = ("NONS", "NOS")


@dataclass(frozen=True)
class NeighborSpec:
    source: int
    indices: np.ndarray  # global indices owned by ``source``


@dataclass(frozen=True)
class PartitionLayout:
    """Disjoint subsystems covering ``range(nos)`` plus their neighbor requests.

    ``sides[k]`` maps each neighboring subsystem to the interface(s) it shares
    with k: ``"head"`` (its first states face k) or ``"tail"`` (its last states do).
    """

    subsystems: tuple
    neighbor_specs: tuple
    sides: tuple
    nos: int
    nof: int
    offset: int = 0
    ring: bool = False
    epoch: int = 0

    @property
    def noss(self) -> int:
        return len(self.subsystems)

    def neighbor_indices(self, k: int) -> np.ndarray:
        specs = self.neighbor_specs[k]
        if not specs:
            return np.zeros(0, dtype=int)
        return np.concatenate([s.indices for s in specs])

    def sources(self, k: int) -> list[int]:
        """The set M of subsystems that feed subsystem k."""
        return [s.source for s in self.neighbor_specs[k]]

    def owner(self) -> np.ndarray:
        own = np.empty(self.nos, dtype=int)
        for k, idx in enumerate(self.subsystems):
            own[idx] = k
        return own

    def interface_states(self, k: int, source: int, count: int) -> np.ndarray:
        """The ``count`` states of ``source`` nearest each interface it shares with k."""
        block = self.subsystems[source]
        pos: list[int] = []
        for side in self.sides[k].get(source, ()):
            rng = range(min(count, block.size)) if side == "head" else range(
                max(block.size - count, 0), block.size
            )
            pos.extend(p for p in rng if p not in pos)
        return block[sorted(pos)]

    def same_partition(self, other: "PartitionLayout") -> bool:
        return self.nos == other.nos and len(self.subsystems) == len(other.subsystems) and all(
            np.array_equal(a, b) for a, b in zip(self.subsystems, other.subsystems)
        )

    def validate(self) -> None:
        flat = np.concatenate(self.subsystems)
        if flat.size != self.nos or np.unique(flat).size != self.nos:
            raise ArgumentError("subsystems must be disjoint and cover the state")
        own = self.owner()
        for k, specs in enumerate(self.neighbor_specs):
            for s in specs:
                if s.source == k or np.any(own[s.indices] != s.source):
                    raise ArgumentError(f"neighbor spec of subsystem {k} is inconsistent")


def _block_sizes(nos: int, noss: int) -> list[int]:
    q, r = divmod(nos, noss)
    return [q + 1] * r + [q] * (noss - r)


def build_layout(
    nos: int,
    noss: int,
    offset: int = 0,
    nof: int = 4,
    ring: bool = False,
    epoch: int = 0,
) -> PartitionLayout:
    """Contiguous blocks, remainder spread over the leading blocks.

    With ``ring=False`` (Dirichlet rod) the interior boundaries move right by
    ``offset`` while the outer ends stay anchored; with ``ring=True`` the whole
    partition rotates cyclically.
    """
    if noss < 1 or nos < noss:
        raise ArgumentError(f"need 1 <= noss <= nos, got nos={nos}, noss={noss}")
    limit = math.ceil(nos / noss)
    if not 0 <= offset < limit:
        raise ArgumentError(f"offset {offset} outside [0, {limit})")
    if nof < 0:
        raise ArgumentError("nof must be non-negative")
    sizes = _block_sizes(nos, noss)
    starts = np.concatenate([[0], np.cumsum(sizes)])
    if ring:
        subs = [(np.arange(starts[i], starts[i + 1]) + offset) % nos for i in range(noss)]
    else:
        bounds = starts.copy()
        bounds[1:-1] += offset
        if np.any(np.diff(bounds) < 1):
            raise ArgumentError(f"offset {offset} empties a subsystem (nos={nos}, noss={noss})")
        subs = [np.arange(bounds[i], bounds[i + 1]) for i in range(noss)]

    sides: list[dict] = []
    for k in range(noss):
        s: dict[int, list[str]] = {}
        if noss > 1 and nof > 0:
            left = k - 1 if (k > 0 or ring) else None
            right = k + 1 if (k < noss - 1 or ring) else None
            if left is not None:
                s.setdefault(left % noss, []).append("tail")
            if right is not None:
                s.setdefault(right % noss, []).append("head")
        sides.append({d: tuple(v) for d, v in sorted(s.items())})

    layout = PartitionLayout(
        subsystems=tuple(subs),
        neighbor_specs=(),
        sides=tuple(sides),
        nos=nos,
        nof=nof,
        offset=offset,
        ring=ring,
        epoch=epoch,
    )
    specs = tuple(
        tuple(NeighborSpec(d, layout.interface_states(k, d, nof)) for d in sides[k])
        for k in range(noss)
    )
    return replace(layout, neighbor_specs=specs)


@dataclass(frozen=True)
class SwitchSchedule:
    mode: str = "NOS"
    sf: float = 1.0
    offset_cycle: tuple = (0,)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ArgumentError(f"unknown archetype {self.mode!r}")
        if self.mode == "NONS" and len(self.offset_cycle) != 1:
            raise ArgumentError("NONS schedules carry a single offset")

    @classmethod
    def default(cls, mode: str, nos: int, noss: int, sf: float = 1.0, shift: Optional[int] = None):
        """NONS keeps offset 0; NOS alternates 0 and half a block."""
        if mode == "NONS":
            return cls("NONS", sf, (0,))
        if shift is None:
            shift = (nos // noss) // 2
        return cls("NOS", sf, (0, shift) if shift else (0,))


def next_layout(s: SwitchSchedule, current: PartitionLayout) -> PartitionLayout:
    epoch = current.epoch + 1
    if s.mode == "NONS":
        return replace(current, epoch=epoch)
    offset = s.offset_cycle[epoch % len(s.offset_cycle)]
    return build_layout(current.nos, current.noss, offset, current.nof, current.ring, epoch)


@dataclass(frozen=True)
class SubsystemInit:
    """What a subsystem needs from the full belief to start a new interval."""

    sub_idx: np.ndarray
    frozen_idx: np.ndarray
    belief: GaussianBelief  # marginal over [sub_idx; frozen_idx]


def remap_belief(
    full: GaussianBelief,
    old: PartitionLayout,
    new: PartitionLayout,
    frozen: Optional[Sequence] = None,
) -> list[SubsystemInit]:
    """Split a freshly updated full belief along the ``new`` layout."""
    if old.nos != new.nos or full.dim != new.nos:
        raise ArgumentError(
            f"layout dimensions differ: full={full.dim}, old={old.nos}, new={new.nos}"
        )
    out = []
    for k, sub in enumerate(new.subsystems):
        fz = np.zeros(0, dtype=int) if frozen is None else np.asarray(frozen[k], dtype=int)
        idx = np.concatenate([sub, fz])
        out.append(SubsystemInit(sub, fz, marginalize(full, idx)))
    return out


def _ranges(idx: np.ndarray) -> list[tuple[int, int]]:
    out = []
    start = prev = int(idx[0])
    for i in idx[1:]:
        i = int(i)
        if i != prev + 1:
            out.append((start, prev + 1))
            start = i
        prev = i
    out.append((start, prev + 1))
    return out


def layout_csv(layout: PartitionLayout) -> str:
    lines = ["epoch,subsystem,start,stop\n"]
    for k, idx in enumerate(layout.subsystems):
        for a, b in _ranges(idx):
            lines.append(f"{layout.epoch},{k},{a},{b}\n")
    return "".join(lines)


def write_layout_csv(path: str | Path, layout: PartitionLayout) -> None:
    Path(path).write_text(layout_csv(layout), newline="\n")
