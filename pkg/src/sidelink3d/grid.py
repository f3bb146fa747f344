"""Time-frequency(-beam) resource pool: window arithmetic and sensing bitmaps.

The pool is a 2D grid of (slot, sub-channel) cells; the sub-channel is the
atomic allocation unit (RB counts inside a sub-channel are carried in the
config but not simulated).  Availability is tracked in binary bitmaps over a
sliding slot window: 1 = available, 0 = busy.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal, Optional

import numpy as np


class BitmapRangeError(IndexError):
    """Resource index outside a bitmap's slot window."""


class InsufficientHistoryError(ValueError):
    """Not enough elapsed slots to place the requested window."""


@dataclass(frozen=True)
class GridConfig:
    """Resource-pool geometry and window sizes (defaults per the 120 kHz SCS
    numerology: 0.125 ms slots, 8 slots per subframe, 10 sub-channels)."""

    slots_per_subframe: int = 8
    slot_duration: float = 0.125e-3
    subchannels: int = 10
    rbs_pscch_per_subchannel: int = 10
    rbs_pssch_per_subchannel: int = 12
    sensing_window: int = 796
    selection_window: int = 40
    cbr_interval: int = 50

    def __post_init__(self) -> None:
        counts = (
            self.slots_per_subframe,
            self.subchannels,
            self.rbs_pscch_per_subchannel,
            self.rbs_pssch_per_subchannel,
            self.sensing_window,
            self.selection_window,
            self.cbr_interval,
        )
        if any(int(c) != c or c < 1 for c in counts):
            raise ValueError("all grid counts must be integers >= 1")
        if self.slot_duration <= 0:
            raise ValueError("slot_duration must be > 0")
        if self.sensing_window < self.selection_window:
            raise ValueError("sensing_window must be >= selection_window")


@dataclass(frozen=True, order=True)
class ResourceIndex:
    """One cell of the pool: absolute slot, sub-channel, optional beam."""

    slot: int
    subchannel: int
    beam: Optional[int] = None

    def validate(self, subchannels: int, codebook_depth: Optional[int] = None) -> None:
        if not 0 <= self.subchannel < subchannels:
            raise ValueError(f"subchannel {self.subchannel} outside [0, {subchannels})")
        if self.beam is not None and codebook_depth is not None:
            if not 0 <= self.beam < codebook_depth:
                raise ValueError(f"beam {self.beam} outside [0, {codebook_depth})")


@dataclass(frozen=True)
class SensingBitmap:
    """Binary availability matrix over a slot window.

    ``entries[k, f]`` covers absolute slot ``window_origin + k`` and
    sub-channel ``f``; 1/True = available, 0/False = busy.  Instances are
    value objects: the operations below return updated copies.
    """

    window_origin: int
    entries: np.ndarray = field(repr=False)
    beam: Optional[int] = None

    def __post_init__(self) -> None:
        if self.entries.ndim != 2:
            raise ValueError("entries must be 2D (slots x subchannels)")
        if self.entries.dtype != np.bool_:
            object.__setattr__(self, "entries", self.entries.astype(bool))

    @classmethod
    def all_available(
        cls, origin: int, window_len: int, subchannels: int, beam: Optional[int] = None
    ) -> "SensingBitmap":
        return cls(origin, np.ones((window_len, subchannels), dtype=bool), beam)

    @property
    def window_len(self) -> int:
        return self.entries.shape[0]

    @property
    def subchannels(self) -> int:
        return self.entries.shape[1]

    @property
    def window_end(self) -> int:
        return self.window_origin + self.window_len

    def contains_slot(self, slot: int) -> bool:
        return self.window_origin <= slot < self.window_end

    def entry(self, idx: ResourceIndex) -> bool:
        if not self.contains_slot(idx.slot):
            raise BitmapRangeError(
                f"slot {idx.slot} outside window [{self.window_origin}, {self.window_end})"
            )
        return bool(self.entries[idx.slot - self.window_origin, idx.subchannel])

    def available_indices(self) -> list[ResourceIndex]:
        """All 1-cells as absolute resource indices, in (slot, subchannel) order."""
        rows, cols = np.nonzero(self.entries)
        return [
            ResourceIndex(int(r) + self.window_origin, int(c), self.beam)
            for r, c in zip(rows, cols)
        ]


def set_entry(
    bitmap: SensingBitmap, idx: ResourceIndex, rsrp_dbm: float, gamma_th_dbm: float
) -> SensingBitmap:
    """Mark one cell from an RSRP measurement: available iff RSRP <= threshold.

    The boundary RSRP == gamma_th counts as available.
    """
    if not bitmap.contains_slot(idx.slot):
        raise BitmapRangeError(
            f"slot {idx.slot} outside window [{bitmap.window_origin}, {bitmap.window_end})"
        )
    if not 0 <= idx.subchannel < bitmap.subchannels:
        raise BitmapRangeError(f"subchannel {idx.subchannel} outside grid")
    entries = bitmap.entries.copy()
    entries[idx.slot - bitmap.window_origin, idx.subchannel] = rsrp_dbm <= gamma_th_dbm
    return replace(bitmap, entries=entries)


def bitmap_from_rsrp(
    origin: int,
    rsrp_dbm: np.ndarray,
    gamma_th_dbm: float,
    beam: Optional[int] = None,
) -> SensingBitmap:
    """Vectorised set_entry over a full (slots x subchannels) RSRP field."""
    return SensingBitmap(origin, np.asarray(rsrp_dbm) <= gamma_th_dbm, beam)


def candidate_ratio(bitmap: SensingBitmap) -> float:
    """Percentage of available cells in the bitmap, in [0, 100]."""
    total = bitmap.entries.size
    if total == 0:
        raise ValueError("empty bitmap has no candidate ratio")
    return float(np.count_nonzero(bitmap.entries)) * 100.0 / total


def exclude_predicted(
    bitmap: SensingBitmap, anchor: ResourceIndex, rri: int, rc: int
) -> SensingBitmap:
    """Zero the periodic repetitions of a reservation inside the window.

    Marks (anchor.slot + k*rri, anchor.subchannel) busy for k = 0..rc-1;
    repetitions falling outside the window are dropped, never stored.
    """
    if rri < 1 or rc < 1:
        raise ValueError("rri and rc must be >= 1")
    if not 0 <= anchor.subchannel < bitmap.subchannels:
        raise BitmapRangeError(f"subchannel {anchor.subchannel} outside grid")
    slots = anchor.slot + rri * np.arange(rc)
    offsets = slots - bitmap.window_origin
    offsets = offsets[(offsets >= 0) & (offsets < bitmap.window_len)]
    if offsets.size == 0:
        return bitmap
    entries = bitmap.entries.copy()
    entries[offsets, anchor.subchannel] = False
    return replace(bitmap, entries=entries)


WindowKind = Literal["sensing", "selection"]


def window_view(grid: GridConfig, now: int, kind: WindowKind) -> range:
    """Half-open slot range of the sensing or selection window anchored at now."""
    if kind == "sensing":
        if now < grid.sensing_window:
            raise InsufficientHistoryError(
                f"slot {now} precedes a full sensing window of {grid.sensing_window}"
            )
        return range(now - grid.sensing_window, now)
    if kind == "selection":
        return range(now, now + grid.selection_window)
    raise ValueError(f"unknown window kind {kind!r}")
