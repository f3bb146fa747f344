"""Cooperative beam-aware resource allocation.

Sensing keeps one availability bitmap per codebook beam, so occupancy seen
from one spatial direction never pollutes another.  Selection is receiver
driven: the transmitter asks its receiver over a signalling resource, the
receiver picks the grant from the bitmap of the beam it points back at the
transmitter, and returns it over another signalling resource.  Both
signalling cells are chosen with the standard candidate machinery.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .grid import GridConfig, ResourceIndex, SensingBitmap
from .ra_standard import (
    Grant,
    Observations,
    SelectionOutcome,
    SemiPersistentConfig,
    SenseResult,
    sample_candidates,
    select,
    sense,
)


@dataclass(frozen=True)
class CoopConfig:
    """Request/response protocol knobs."""

    request_retries: int = 2
    request_repeats: int = 2  # blind repeats of each signalling message
    response_timeout_slots: Optional[int] = None  # after the request's tx slot;
    # None = half a selection window plus a margin
    cooperation_enabled: bool = True

    def __post_init__(self) -> None:
        if self.request_retries < 0:
            raise ValueError("request_retries must be >= 0")
        if self.request_repeats < 0:
            raise ValueError("request_repeats must be >= 0")
        if self.response_timeout_slots is not None and self.response_timeout_slots < 1:
            raise ValueError("response_timeout_slots must be >= 1")

    def timeout_slots(self, grid: GridConfig) -> int:
        if self.response_timeout_slots is not None:
            return self.response_timeout_slots
        return grid.selection_window // 2 + 8


@dataclass(frozen=True)
class BeamBitmapSet:
    """One availability bitmap per codebook beam for one vehicle."""

    per_beam: tuple[SensingBitmap, ...]
    owner: int

    def __post_init__(self) -> None:
        if not self.per_beam:
            raise ValueError("need at least one beam bitmap")
        shape = self.per_beam[0].entries.shape
        origin = self.per_beam[0].window_origin
        for b in self.per_beam[1:]:
            if b.entries.shape != shape or b.window_origin != origin:
                raise ValueError("per-beam bitmaps must share window dimensions")

    @property
    def depth(self) -> int:
        return len(self.per_beam)


@dataclass(frozen=True)
class RaRequest:
    tx_id: int
    rx_id: int
    tb_count: int
    issue_slot: int
    resource: ResourceIndex
    # blind repeats of the request on further signalling cells
    extra_resources: tuple[ResourceIndex, ...] = ()


@dataclass(frozen=True)
class RaResponse:
    request: RaRequest
    granted: Optional[SelectionOutcome]  # None = negative response
    responder_beam: int
    resource: ResourceIndex
    extra_resources: tuple[ResourceIndex, ...] = ()


def sense_3d(
    per_beam_obs: Sequence[Observations],
    cfg: SemiPersistentConfig,
    grid: GridConfig,
    owner: int,
) -> tuple[BeamBitmapSet, tuple[SenseResult, ...]]:
    """Run the standard sensing pipeline independently for every beam."""
    results = tuple(
        sense(obs, cfg, grid, beam=b) for b, obs in enumerate(per_beam_obs)
    )
    return BeamBitmapSet(tuple(r.bitmap for r in results), owner), results


_SIGNALING_LATENCY_SLOTS = 8


def pick_signaling_cells(
    availability: SensingBitmap,
    cfg: SemiPersistentConfig,
    rng: np.random.Generator,
    count: int = 1,
    avoid_slots: frozenset[int] = frozenset(),
) -> list[ResourceIndex]:
    """Cells for a signalling message, via the standard candidate draw.

    Signalling is latency-critical, so the pick is uniform over the sampled
    candidates within a short horizon after the earliest one (random enough
    that concurrent handshakes do not pile onto the same cells).  Multiple
    cells land on distinct slots.
    """
    candidates = [
        c for c in sample_candidates(availability, cfg, rng)
        if c.slot not in avoid_slots
    ]
    picked: list[ResourceIndex] = []
    while candidates and len(picked) < count:
        horizon = min(c.slot for c in candidates) + _SIGNALING_LATENCY_SLOTS
        eligible = [c for c in candidates if c.slot <= horizon]
        cell = eligible[int(rng.integers(len(eligible)))]
        picked.append(cell)
        candidates = [c for c in candidates if c.slot != cell.slot]
    return picked


def pick_signaling_resource(
    availability: SensingBitmap,
    cfg: SemiPersistentConfig,
    rng: np.random.Generator,
) -> Optional[ResourceIndex]:
    """Single-cell convenience wrapper around pick_signaling_cells."""
    cells = pick_signaling_cells(availability, cfg, rng, count=1)
    return cells[0] if cells else None


def issue_request(
    merged_availability: SensingBitmap,
    tx_id: int,
    rx_id: int,
    tb_count: int,
    now: int,
    cfg: SemiPersistentConfig,
    rng: np.random.Generator,
    repeats: int = 1,
) -> Optional[RaRequest]:
    """Schedule the allocation request on merged-bitmap signalling cells.

    The request is blind-repeated on up to `repeats` additional cells on
    distinct slots so a single busy receiver slot does not stall the
    handshake.  Returns None when the merged view offers no cell at all; the
    caller then falls back to the standard procedure for this transport
    block.
    """
    cells = pick_signaling_cells(merged_availability, cfg, rng, count=1 + repeats)
    if not cells:
        return None
    cells.sort(key=lambda c: (c.slot, c.subchannel))
    return RaRequest(tx_id, rx_id, tb_count, now, cells[0], tuple(cells[1:]))


def respond(
    request: RaRequest,
    beam_availability: SensingBitmap,
    signaling_availability: SensingBitmap,
    responder_beam: int,
    cfg: SemiPersistentConfig,
    grid: GridConfig,
    rng: np.random.Generator,
    repeats: int = 1,
) -> Optional[RaResponse]:
    """Receiver-side grant selection on the beam facing the requester.

    The response is blind-repeated like the request and steers clear of the
    request's own remaining copy slots (known from the decoded request, when
    the requester cannot listen).  A zero-candidate beam bitmap yields a
    negative response; a missing signalling cell yields None (the receiver
    cannot answer at all).
    """
    outcome = select(beam_availability, cfg, grid, rng, owner=request.tx_id)
    avoid = frozenset(
        c.slot for c in (request.resource, *request.extra_resources)
    )
    cells = pick_signaling_cells(signaling_availability, cfg, rng,
                                 count=1 + repeats, avoid_slots=avoid)
    if not cells:
        return None
    cells.sort(key=lambda c: (c.slot, c.subchannel))
    return RaResponse(request, outcome, responder_beam, cells[0], tuple(cells[1:]))


def apply_response(response: RaResponse) -> Optional[Grant]:
    """Adopt the receiver-chosen grant verbatim (None for a negative response)."""
    if response.granted is None:
        return None
    return response.granted.grant
