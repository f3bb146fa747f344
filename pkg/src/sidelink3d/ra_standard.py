"""Standard semi-persistent sensing and selection.

Sensing thresholds RSRP per cell into an availability bitmap, adapts the
threshold downward 3 dB at a time while the candidate ratio stays at or
below the occupancy threshold, and excludes the predicted repetitions of
every decoded reservation announcement.  Selection draws uniformly from the
candidate cells of the selection window and attaches the re-selection
counter state machine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .grid import (
    GridConfig,
    ResourceIndex,
    SensingBitmap,
    bitmap_from_rsrp,
    candidate_ratio,
    exclude_predicted,
)


@dataclass(frozen=True)
class SemiPersistentConfig:
    """Mode-2 semi-persistent scheduling parameters (defaults per the usual
    2 ms reservation interval setup)."""

    rri_ms: float = 2.0
    gamma_th_initial_dbm: float = -60.0
    gamma_th_floor_dbm: float = -110.0
    occupancy_threshold_pct: float = 20.0
    keep_probability: float = 0.4
    max_candidates: int = 32
    n_max: int = 10
    blind_retransmissions: int = 3
    rc_estimate: Optional[int] = None  # None = midpoint of the draw interval
    selection_retry_slots: Optional[int] = None  # None = one RRI

    def __post_init__(self) -> None:
        if self.rri_ms <= 0:
            raise ValueError("rri_ms must be > 0")
        if not 0.0 <= self.keep_probability <= 0.8:
            raise ValueError("keep_probability must lie in [0, 0.8]")
        if not 1 <= self.max_candidates <= 32:
            raise ValueError("max_candidates must lie in [1, 32]")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        if not 0 <= self.blind_retransmissions <= 3:
            raise ValueError("blind_retransmissions must lie in [0, 3]")
        if self.gamma_th_floor_dbm > self.gamma_th_initial_dbm:
            raise ValueError("gamma_th floor must not exceed the initial threshold")
        if not 0.0 <= self.occupancy_threshold_pct <= 100.0:
            raise ValueError("occupancy_threshold_pct must lie in [0, 100]")

    def rri_slots(self, grid: GridConfig) -> int:
        slots = round(self.rri_ms * 1e-3 / grid.slot_duration)
        return max(1, int(slots))


def rc_bounds(rri_ms: float) -> tuple[int, int]:
    """Inclusive bounds of the re-selection counter draw for an RRI."""
    if rri_ms >= 100.0:
        return 5, 15
    c = 100.0 / max(20.0, rri_ms)
    return int(math.floor(5.0 * c + 0.5)), int(math.floor(15.0 * c + 0.5))


def draw_rc(rri_ms: float, rng: np.random.Generator) -> int:
    lo, hi = rc_bounds(rri_ms)
    return int(rng.integers(lo, hi + 1))


def rc_midpoint(rri_ms: float) -> int:
    """Counter estimate for an overheard reservation: the draw-interval midpoint."""
    lo, hi = rc_bounds(rri_ms)
    return int(math.floor((lo + hi) / 2.0 + 0.5))


@dataclass(frozen=True)
class Grant:
    """A semi-persistent reservation: first-period cells, then the same
    pattern every `rri_slots` for as long as the counter lasts."""

    resources: tuple[ResourceIndex, ...]
    rri_slots: int
    rc_remaining: int
    owner: int

    def __post_init__(self) -> None:
        if self.rc_remaining < 0:
            raise ValueError("rc_remaining must be >= 0")
        if self.rc_remaining > 0 and not self.resources:
            raise ValueError("an active grant needs at least one resource")


@dataclass(frozen=True)
class SelectionOutcome:
    chosen: ResourceIndex
    retransmissions: tuple[ResourceIndex, ...]
    grant: Grant

    def __post_init__(self) -> None:
        if self.chosen in self.retransmissions:
            raise ValueError("chosen resource duplicated among retransmissions")


@dataclass(frozen=True)
class Announcement:
    """A decoded reservation: anchor cell plus its announced interval."""

    slot: int
    subchannel: int
    rri_slots: int


@dataclass(frozen=True)
class Observations:
    """RSRP field over the sensing window plus decoded announcements.

    ``rsrp_dbm[k, f]`` is the measured power at slot ``origin + k`` on
    sub-channel ``f``; unobserved cells carry -inf.
    """

    origin: int
    rsrp_dbm: np.ndarray
    announcements: tuple[Announcement, ...] = ()


@dataclass(frozen=True)
class SenseResult:
    bitmap: SensingBitmap
    gamma_th_dbm: float
    candidate_pct: float
    congested: bool
    threshold_steps: int


def sense(
    obs: Observations,
    cfg: SemiPersistentConfig,
    grid: GridConfig,
    beam: Optional[int] = None,
) -> SenseResult:
    """Build the availability bitmap with threshold adaptation and predicted
    reservation exclusion.

    The threshold drops 3 dB per pass while the candidate ratio stays at or
    below the occupancy threshold; if the floor is reached first the result
    is flagged congested and returned best-effort.
    """
    rsrp = np.asarray(obs.rsrp_dbm, dtype=float)
    if rsrp.shape != (grid.sensing_window, grid.subchannels):
        raise ValueError(
            f"observations must span {grid.sensing_window}x{grid.subchannels}"
        )
    gamma = cfg.gamma_th_initial_dbm
    steps = 0
    bitmap = bitmap_from_rsrp(obs.origin, rsrp, gamma, beam)
    pct = candidate_ratio(bitmap)
    while pct <= cfg.occupancy_threshold_pct and gamma > cfg.gamma_th_floor_dbm:
        gamma = max(gamma - 3.0, cfg.gamma_th_floor_dbm)
        steps += 1
        bitmap = bitmap_from_rsrp(obs.origin, rsrp, gamma, beam)
        pct = candidate_ratio(bitmap)
    congested = pct <= cfg.occupancy_threshold_pct
    rri = cfg.rri_slots(grid)
    est_rc = cfg.rc_estimate if cfg.rc_estimate is not None else rc_midpoint(cfg.rri_ms)
    for ann in obs.announcements:
        bitmap = exclude_predicted(
            bitmap, ResourceIndex(ann.slot, ann.subchannel, beam), ann.rri_slots, est_rc
        )
    return SenseResult(bitmap, gamma, pct, congested, steps)


def selection_availability(
    rsrp_dbm: np.ndarray,
    origin: int,
    now: int,
    gamma_th_dbm: float,
    announcements: Sequence[Announcement],
    cfg: SemiPersistentConfig,
    grid: GridConfig,
    excluded_slots: Sequence[int] = (),
    beam: Optional[int] = None,
) -> SensingBitmap:
    """Availability over the selection window [now, now + W).

    Semi-persistent reservations repeat every RRI, so a cell measured busy
    anywhere in the lookback marks its (slot mod RRI, sub-channel) phase as
    occupied for the whole window; decoded announcements additionally
    project their estimated remaining repetitions.  ``excluded_slots`` (the
    vehicle's own already-committed transmit slots) are removed wholesale.
    """
    rri = cfg.rri_slots(grid)
    window = grid.selection_window
    rsrp_dbm = np.asarray(rsrp_dbm)
    busy = rsrp_dbm > gamma_th_dbm

    phase_busy = np.zeros((rri, busy.shape[1]), dtype=bool)
    n_slots = busy.shape[0]
    phases = (origin + np.arange(n_slots)) % rri
    if n_slots % rri == 0 and origin % rri == 0:
        phase_busy |= busy.reshape(n_slots // rri, rri, -1).any(axis=0)
    else:
        np.logical_or.at(phase_busy, phases, busy)

    future_phases = (now + np.arange(window)) % rri
    entries = ~phase_busy[future_phases]

    bitmap = SensingBitmap(now, entries, beam)
    est_rc = cfg.rc_estimate if cfg.rc_estimate is not None else rc_midpoint(cfg.rri_ms)
    for ann in announcements:
        bitmap = exclude_predicted(
            bitmap, ResourceIndex(ann.slot, ann.subchannel, beam), ann.rri_slots, est_rc
        )
    if excluded_slots:
        entries = bitmap.entries.copy()
        for s in excluded_slots:
            off = s - now
            if 0 <= off < window:
                entries[off, :] = False
        bitmap = replace(bitmap, entries=entries)
    return bitmap


def sample_candidates(
    availability: SensingBitmap, cfg: SemiPersistentConfig, rng: np.random.Generator
) -> list[ResourceIndex]:
    """Uniformly sample up to M candidate cells from the available ones."""
    rows, cols = np.nonzero(availability.entries)
    if rows.size == 0:
        return []
    m = min(cfg.max_candidates, rows.size)
    picked = rng.choice(rows.size, size=m, replace=False)
    origin, beam = availability.window_origin, availability.beam
    return [ResourceIndex(int(rows[i]) + origin, int(cols[i]), beam) for i in picked]


def select(
    availability: SensingBitmap,
    cfg: SemiPersistentConfig,
    grid: GridConfig,
    rng: np.random.Generator,
    owner: int,
) -> Optional[SelectionOutcome]:
    """Pick the transmission cell plus blind-retransmission cells.

    Candidates are sampled uniformly; the initial cell is drawn among them
    and each retransmission copy must land on a strictly later slot, all
    copies on distinct slot phases modulo the reservation interval (the
    pattern repeats every RRI, so same-phase copies would self-collide at a
    half-duplex radio every period).  Returns None when the window holds no
    candidates.
    """
    candidates = sample_candidates(availability, cfg, rng)
    if not candidates:
        return None
    rri = cfg.rri_slots(grid)
    chosen = candidates[int(rng.integers(len(candidates)))]
    later = [c for c in candidates if c.slot > chosen.slot]
    retx: list[ResourceIndex] = []
    if later and cfg.blind_retransmissions > 0:
        used_phases = {chosen.slot % rri}
        for i in rng.permutation(len(later)):
            cell = later[int(i)]
            if cell.slot % rri in used_phases:
                continue
            retx.append(cell)
            used_phases.add(cell.slot % rri)
            if len(retx) == cfg.blind_retransmissions:
                break
    resources = tuple(sorted([chosen, *retx], key=lambda r: (r.slot, r.subchannel)))
    grant = Grant(
        resources=resources,
        rri_slots=cfg.rri_slots(grid),
        rc_remaining=draw_rc(cfg.rri_ms, rng),
        owner=owner,
    )
    return SelectionOutcome(chosen, tuple(retx), grant)


def step_grant(
    grant: Grant, rng: np.random.Generator, cfg: SemiPersistentConfig
) -> tuple[str, Optional[Grant]]:
    """Advance the counter after a completed transmission.

    Returns ("keep", grant') while the reservation survives; at counter
    expiry the grant is dropped with probability 1 - P, otherwise kept with
    a freshly drawn counter and the same resources.
    """
    if grant.rc_remaining <= 0:
        raise ValueError("step_grant requires an active grant")
    rc = grant.rc_remaining - 1
    if rc > 0:
        return "keep", replace(grant, rc_remaining=rc)
    if rng.random() < 1.0 - cfg.keep_probability:
        return "reselect", None
    return "keep", replace(grant, rc_remaining=draw_rc(cfg.rri_ms, rng))
