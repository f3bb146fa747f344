"""Slot-stepped orchestration of traffic, sensing, selection and decoding.

Each slot the engine advances mobility, fires periodic transport blocks,
arbitrates half-duplex transmissions, resolves every reception against the
aggregate interference field, feeds the per-beam sensing ring buffer, and
services selection triggers under the per-slot N_max admission cap.  Runs
are deterministic: every random draw comes from a per-vehicle stream spawned
off the run seed and vehicles are serviced in id order.
"""

from __future__ import annotations

import math
from bisect import insort
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels, metrics as metrics_mod
from .eventlog import RunLog
from .grid import GridConfig, ResourceIndex, SensingBitmap
from .mobility import ScenarioConfig, init_fleet, load_trace
from .radio import Codebook, RadioConfig, free_space_loss_db, mw_to_dbm
from .ra_coop3d import (
    BeamBitmapSet,
    CoopConfig,
    RaRequest,
    issue_request,
    respond,
)
from .ra_standard import (
    Grant,
    Observations,
    SemiPersistentConfig,
    draw_rc,
    select,
    selection_availability,
    sense,
)

MODES = ("standard", "coop3d")

_PRIORITY = {"response": 0, "request": 1, "data": 2}


@dataclass(frozen=True)
class EngineParams:
    """Run-level knobs that are not part of any protocol table."""

    tb_lifetime_slots: Optional[int] = None  # None = two reservation intervals
    traffic_settle_slots: int = 1204  # excluded from metrics after warm-up

    def lifetime(self, rri_slots: int) -> int:
        return self.tb_lifetime_slots if self.tb_lifetime_slots else 2 * rri_slots


@dataclass(frozen=True)
class SimConfig:
    grid: GridConfig = GridConfig()
    radio: RadioConfig = RadioConfig()
    ra: SemiPersistentConfig = SemiPersistentConfig()
    coop: CoopConfig = CoopConfig()
    scenario: ScenarioConfig = ScenarioConfig()
    engine: EngineParams = EngineParams()
    codebook_depth: int = 8

    def __post_init__(self) -> None:
        if self.codebook_depth < 1:
            raise ValueError("codebook_depth must be >= 1")


@dataclass
class TransportBlock:
    """One payload unit; 1 + blind_retransmissions copies, delivered when any
    copy decodes at the destination."""

    tb_id: int
    source: int
    destination: int
    created_slot: int
    deadline_slot: int
    copies_remaining: int
    delivered: bool = False
    resolved: bool = False
    committed: bool = False


@dataclass(frozen=True)
class Transmission:
    vehicle: int
    resource: ResourceIndex
    kind: str  # data | request | response
    receiver: int
    tx_pointing: float
    rx_beam: int
    tb_id: int = -1
    copy: int = -1
    link: int = -1


@dataclass(frozen=True)
class SlotEvents:
    slot: int
    transmissions: tuple[Transmission, ...]


@dataclass(frozen=True)
class DecodeOutcome:
    index: int  # position in SlotEvents.transmissions
    receiver: int
    ok: bool
    sinr_db: float
    signal_dbm: float
    interference_dbm: float
    reason: str  # ok | sinr | half_duplex


@dataclass(frozen=True)
class VehicleState:
    """Introspection snapshot of one vehicle (built on demand)."""

    vehicle_id: int
    position: tuple[float, float]
    heading_rad: float
    speed_mps: float
    codebook: Codebook
    mode: str
    bitmaps: object  # SensingBitmap (standard) or BeamBitmapSet (coop3d)
    grants: tuple[Grant, ...]
    tx_queue: tuple[int, ...]
    half_duplex_busy: bool
    rng_stream: int


def schedule_selectors(pending: list[tuple[int, int]], n_max: int) -> list[tuple[int, int]]:
    """Admit at most n_max (trigger_slot, vehicle) entries, FIFO by trigger
    slot with vehicle id as the tie-break."""
    return sorted(pending, key=lambda e: (e[0], e[1]))[:n_max]


def commit_cells(grant: Grant) -> tuple[tuple[int, int], ...]:
    """The cells a fresh grant commits at selection time: the chosen
    transmission cell plus its blind-retransmission copies."""
    return tuple((r.slot, r.subchannel) for r in grant.resources)


def resolve_slot(
    events: SlotEvents,
    positions: np.ndarray,
    beam_world: np.ndarray,
    radio: RadioConfig,
    shadow_db: np.ndarray,
    kernel=None,
    totals_out: Optional[np.ndarray] = None,
) -> tuple[list[DecodeOutcome], np.ndarray, np.ndarray]:
    """Compute every reception outcome for one slot.

    Returns (decodes, contrib, totals) where contrib[v, b, j] is the linear
    power of transmission j at vehicle v via beam b, and totals[v, b, f] the
    per-sub-channel aggregate (zero rows for transmitting vehicles, which can
    neither sense nor receive).
    """
    kern = kernel if kernel is not None else _kernels.slot_contrib
    txs = events.transmissions
    n, n_beams = beam_world.shape
    m = len(txs)
    subs = [t.resource.subchannel for t in txs]
    tx_vehicle = np.array([t.vehicle for t in txs], dtype=np.int64)
    tx_pointing = np.array([t.tx_pointing for t in txs], dtype=np.float64)
    rx_mask = np.ones(n, dtype=np.bool_)
    rx_mask[tx_vehicle] = False

    contrib = np.empty((n, n_beams, m), dtype=np.float64)
    ref_loss = free_space_loss_db(radio.pathloss_ref_distance_m, radio.carrier_frequency_hz)
    kern(
        positions, tx_vehicle, tx_pointing, rx_mask, beam_world, shadow_db,
        radio.tx_power_dbm, ref_loss, radio.pathloss_exponent,
        radio.pathloss_ref_distance_m, radio.array_rows, radio.array_cols,
        contrib,
    )

    n_sub = (max(subs) + 1) if m else 1
    if totals_out is not None and totals_out.shape[2] >= n_sub:
        totals = totals_out
        totals[:] = 0.0
    else:
        totals = np.zeros((n, n_beams, n_sub), dtype=np.float64)
    for j in range(m):
        totals[:, :, subs[j]] += contrib[:, :, j]

    noise_mw = 10.0 ** (radio.noise_power_dbm / 10.0)
    decodes: list[DecodeOutcome] = []
    for j, t in enumerate(txs):
        r = t.receiver
        if r < 0:
            continue
        if not rx_mask[r]:
            decodes.append(
                DecodeOutcome(j, r, False, -math.inf, -math.inf, -math.inf, "half_duplex")
            )
            continue
        sig = contrib[r, t.rx_beam, j]
        intf = totals[r, t.rx_beam, t.resource.subchannel] - sig
        if intf < 0.0:
            intf = 0.0
        sinr_db = mw_to_dbm(sig) - mw_to_dbm(intf + noise_mw)
        ok = sinr_db >= radio.sinr_decode_threshold_db
        decodes.append(
            DecodeOutcome(
                j, r, ok, sinr_db, mw_to_dbm(sig), mw_to_dbm(intf),
                "ok" if ok else "sinr",
            )
        )
    return decodes, contrib, totals


class _GrantRt:
    """Runtime view of a grant: absolute first-period cells plus the
    periodic assignment cursor."""

    __slots__ = ("gid", "owner", "footprint", "rri", "rc", "next_period_start", "grant")

    def __init__(self, gid: int, grant: Grant):
        self.gid = gid
        self.owner = grant.owner
        self.footprint = [(r.slot, r.subchannel) for r in grant.resources]
        self.rri = grant.rri_slots
        self.rc = grant.rc_remaining
        self.grant = grant
        self.next_period_start = self.footprint[0][0]

    def skip_to(self, slot: int) -> None:
        """Advance the period cursor so the next assignment lies after slot."""
        if self.next_period_start <= slot:
            k = (slot - self.next_period_start) // self.rri + 1
            self.next_period_start += k * self.rri

    def future_slots(self, start: int, stop: int) -> list[int]:
        """Committed transmit slots of this grant within [start, stop)."""
        out = []
        for s0, _ in self.footprint:
            base = self.next_period_start - self.footprint[0][0] + s0
            k0 = max(0, (start - base + self.rri - 1) // self.rri)
            s = base + k0 * self.rri
            while s < stop:
                out.append(s)
                s += self.rri
        return out


class _Link:
    __slots__ = (
        "tx", "queue", "grant", "pending", "trigger", "retries",
        "hs_request", "hs_deadline", "hs_retries", "fallback_next", "granted_out",
    )

    def __init__(self, tx: int):
        self.tx = tx
        self.queue: list[TransportBlock] = []
        self.grant: Optional[_GrantRt] = None
        self.pending: list[tuple[int, int, int, TransportBlock]] = []  # (slot, f, copy, tb)
        self.trigger: Optional[int] = None  # trigger slot while queued
        self.retries = 0
        self.hs_request: Optional[RaRequest] = None
        self.hs_deadline = -1
        self.hs_retries = 0
        self.fallback_next = False
        # grants this vehicle handed out as a responder: (cells, rri, end_slot)
        self.granted_out: list[tuple[tuple, int, int]] = []


@dataclass
class RunResult:
    log: RunLog
    metrics: metrics_mod.MetricsRecord
    mode: str
    seed: int
    duration_slots: int
    measure_start: int
    accounting_end: int
    meta: dict = field(default_factory=dict)


class Simulator:
    def __init__(self, cfg: SimConfig, mode: str, seed: int, duration_slots: int,
                 kernel=None):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if duration_slots <= cfg.grid.sensing_window:
            raise ValueError("duration must exceed the sensing window warm-up")
        if cfg.scenario.kind == "trace":
            self.trace = load_trace(cfg.scenario.trace_path)
        else:
            self.trace = None
        self.cfg = cfg
        self.mode = mode
        self.seed = seed
        self.duration = duration_slots
        self.kernel = kernel if kernel is not None else _kernels.slot_contrib

        grid, ra = cfg.grid, cfg.ra
        self.rri = ra.rri_slots(grid)
        self.n_sub = grid.subchannels
        self.ring_len = -(-grid.sensing_window // self.rri) * self.rri
        self.lifetime = cfg.engine.lifetime(self.rri)
        self.retry_deadline = (
            ra.selection_retry_slots if ra.selection_retry_slots is not None else self.rri
        )
        self.traffic_start = grid.sensing_window
        self.measure_start = self.traffic_start + cfg.engine.traffic_settle_slots
        self.accounting_end = max(self.measure_start, duration_slots - 4 * grid.selection_window)

        root = np.random.SeedSequence(seed)
        children = root.spawn(2 + cfg.scenario.vehicle_count)
        self.scenario_rng = np.random.Generator(np.random.PCG64(children[0]))
        self.engine_rng = np.random.Generator(np.random.PCG64(children[1]))
        self.vrng = [np.random.Generator(np.random.PCG64(c)) for c in children[2:]]

        n = cfg.scenario.vehicle_count
        self.n = n
        if self.trace is None:
            self.pos, self.heading, self.speed = init_fleet(cfg.scenario, self.scenario_rng)
        else:
            state = self.trace.sample(self.trace.t_min)
            self.pos = np.array([[k.x_m, k.y_m] for k in state])
            self.heading = np.array([k.heading_rad for k in state])
            self.speed = np.array([k.speed_mps for k in state])

        self.codebook = Codebook.uniform(cfg.codebook_depth, cfg.radio)
        self.offsets = np.asarray(self.codebook.beams)
        self.L = self.codebook.depth
        self._inv_spacing = self.L / (2.0 * math.pi)
        self.beam_world = self._wrap(self.heading[:, None] + self.offsets[None, :])
        self._totals = np.zeros((n, self.L, self.n_sub), dtype=np.float64)

        self.buf = np.zeros((n, self.L, self.ring_len, self.n_sub), dtype=np.float32)
        self.shadow = np.zeros((n, n))
        self.partner = np.full(n, -1, dtype=np.int64)
        self.links = [_Link(v) for v in range(n)]
        self.sel_queue: list[tuple[int, int, int, object]] = []  # (trig, veh, kind#, payload)
        self.sig_sched: dict[int, list] = {}
        self.noise_mw = 10.0 ** (cfg.radio.noise_power_dbm / 10.0)
        self.gamma_init = ra.gamma_th_initial_dbm

        self.log = RunLog()
        self.log.header = {"mode": mode, "seed": seed, "duration": duration_slots}
        self.tb_counter = 0
        self.grant_counter = 0
        self.fallback_count = 0
        self._responded_last: dict[tuple[int, int], int] = {}
        self.slot = -1
        # selection kinds: 0 = standard/fallback select, 1 = coop request, 2 = respond
        self.cooperative = mode == "coop3d" and cfg.coop.cooperation_enabled

    # ------------------------------------------------------------------ utils

    @staticmethod
    def _wrap(a):
        return np.mod(a + math.pi, 2.0 * math.pi) - math.pi

    def _nearest_beam(self, vehicle: int, target: int) -> int:
        p = self.pos
        rel = math.atan2(p[target, 1] - p[vehicle, 1], p[target, 0] - p[vehicle, 0])
        rel = (rel - self.heading[vehicle] + math.pi) % (2.0 * math.pi)
        return int(math.floor(rel * self._inv_spacing + 0.5)) % self.L

    def _pointing(self, vehicle: int, target: int) -> float:
        b = self._nearest_beam(vehicle, target)
        return float(self.beam_world[vehicle, b])

    def _refresh_pairs(self) -> None:
        d2 = ((self.pos[:, None, :] - self.pos[None, :, :]) ** 2).sum(-1)
        np.fill_diagonal(d2, np.inf)
        nearest = d2.argmin(axis=1)
        ok = d2[np.arange(self.n), nearest] <= self.cfg.scenario.pairing_max_distance_m ** 2
        self.partner = np.where(ok, nearest, -1)
        if self.cfg.radio.shadowing_sigma_db > 0:
            draw = self.scenario_rng.normal(
                0.0, self.cfg.radio.shadowing_sigma_db, (self.n, self.n)
            )
            ramp = np.minimum(np.sqrt(d2) / self.cfg.radio.shadowing_ramp_m, 1.0)
            draw = np.triu(draw * ramp, 1)
            self.shadow = draw + draw.T  # reciprocal links

    # -------------------------------------------------------------- sensing

    def _window_view_dbm(self, vehicle: int, beam: Optional[int]) -> np.ndarray:
        """RSRP (dBm) over the sensing window; beam None = sweep (max over beams)."""
        ring = self._ring_linear(vehicle, beam)
        win = self.cfg.grid.sensing_window
        idx = np.arange(self.slot - win, self.slot) % self.ring_len
        with np.errstate(divide="ignore"):
            return 10.0 * np.log10(ring[idx].astype(np.float64))

    def _ring_linear(self, vehicle: int, beam: Optional[int]) -> np.ndarray:
        lin = self.buf[vehicle]
        return lin.max(axis=0) if beam is None else lin[beam]

    def _availability(self, vehicle: int, beam: Optional[int], sense_meta: dict) -> SensingBitmap:
        """Selection-window availability for one vehicle/view, spec pipeline:
        threshold-adapted sensing then periodic occupancy projection, minus
        the vehicle's own committed transmit slots."""
        ring = self._ring_linear(vehicle, beam)
        win = self.cfg.grid.sensing_window
        idx = np.arange(self.slot - win, self.slot) % self.ring_len
        with np.errstate(divide="ignore"):
            view_dbm = 10.0 * np.log10(ring[idx].astype(np.float64))
        obs = Observations(self.slot - win, view_dbm)
        res = sense(obs, self.cfg.ra, self.cfg.grid, beam=beam)
        sense_meta["gamma"] = res.gamma_th_dbm
        sense_meta["congested"] = res.congested
        sense_meta["pct"] = res.candidate_pct
        gamma_lin = 10.0 ** (res.gamma_th_dbm / 10.0)
        now = self.slot + 1  # committed cells must be strictly in the future
        own = self._self_slots(vehicle, now, now + self.cfg.grid.selection_window)
        return selection_availability(
            ring, 0, now, gamma_lin, (),
            self.cfg.ra, self.cfg.grid, excluded_slots=own, beam=beam,
        )

    def _mask_granted_out(self, veh: int, bitmap: SensingBitmap) -> None:
        """A responder never re-assigns phases it already granted and still
        believes reserved (its own bookkeeping, no extra signalling)."""
        link = self.links[veh]
        if not link.granted_out:
            return
        now = bitmap.window_origin
        window = bitmap.window_len
        link.granted_out = [g for g in link.granted_out if g[2] > now]
        entries = bitmap.entries
        for cells, rri, _end in link.granted_out:
            for s0, f in cells:
                off = (s0 - now) % rri
                entries[off::rri, f] = False

    def _self_slots(self, vehicle: int, start: int, stop: int) -> list[int]:
        link = self.links[vehicle]
        out = [s for (s, _f, _c, _tb) in link.pending if start <= s < stop]
        if link.grant is not None:
            out.extend(link.grant.future_slots(start, stop))
        for s, entries in self.sig_sched.items():
            if start <= s < stop and any(e[1] == vehicle for e in entries):
                out.append(s)
        return out

    # -------------------------------------------------------------- TB flow

    def _expire_queue(self, link: _Link) -> None:
        kept = []
        for tb in link.queue:
            if not tb.committed and tb.deadline_slot < self.slot:
                tb.resolved = True
                self.log.add_tb(self.slot, "lost", tb.tb_id, link.tx, "expired")
            else:
                kept.append(tb)
        link.queue = kept

    def _traffic(self) -> None:
        if self.slot < self.traffic_start:
            return
        if (self.slot - self.traffic_start) % self.rri != 0:
            return
        for v in range(self.n):
            dest = int(self.partner[v])
            if dest < 0:
                continue
            link = self.links[v]
            self._expire_queue(link)
            tb = TransportBlock(
                self.tb_counter, v, dest, self.slot, self.slot + self.lifetime,
                1 + self.cfg.ra.blind_retransmissions,
            )
            self.tb_counter += 1
            link.queue.append(tb)
            self.log.add_tb(self.slot, "gen", tb.tb_id, v)
            if link.grant is None and link.hs_request is None and link.trigger is None:
                link.trigger = self.slot
                kind = 1 if self.cooperative else 0
                self.sel_queue.append((self.slot, v, kind, None))

    def _assign_periods(self) -> None:
        """At each grant's period start, consume the counter and commit the
        head-of-queue transport block to the period's cells."""
        for v in range(self.n):
            link = self.links[v]
            g = link.grant
            if g is None or g.next_period_start != self.slot:
                continue
            if g.rc <= 0:
                rng = self.vrng[v]
                if rng.random() < 1.0 - self.cfg.ra.keep_probability:
                    self.log.add_grant(self.slot, "released", g.gid, v, 0, g.rri, ())
                    link.grant = None
                    if link.queue and link.trigger is None and link.hs_request is None:
                        link.trigger = self.slot
                        self.sel_queue.append((self.slot, v, 1 if self.cooperative else 0, None))
                    continue
                g.rc = draw_rc(self.cfg.ra.rri_ms, rng)
                self.log.add_grant(self.slot, "extended", g.gid, v, g.rc, g.rri, ())
            self._expire_queue(link)
            base = g.next_period_start - g.footprint[0][0]
            g.next_period_start += g.rri
            if not link.queue:
                continue
            tb = link.queue.pop(0)
            tb.committed = True
            g.rc -= 1
            for copy, (s0, f) in enumerate(g.footprint):
                insort(link.pending, (base + s0, f, copy, tb))

    # ---------------------------------------------------------- transmissions

    def _collect_intents(self) -> list[tuple]:
        """(priority, veh, kind, f, receiver, tb, copy, payload) for this slot."""
        intents = []
        for entry in self.sig_sched.pop(self.slot, ()):
            kind, sender, target, f, payload = entry
            intents.append((_PRIORITY[kind], sender, kind, f, target, None, -1, payload))
        for v in range(self.n):
            link = self.links[v]
            while link.pending and link.pending[0][0] == self.slot:
                _s, f, copy, tb = link.pending.pop(0)
                intents.append((_PRIORITY["data"], v, "data", f, tb.destination, tb, copy, None))
        return intents

    def _arbitrate(self, intents: list[tuple]) -> tuple[list[tuple], list[tuple]]:
        """One transmission per vehicle per slot; the rest are forfeited."""
        intents.sort(key=lambda e: (e[1], e[0], e[3]))
        chosen, skipped, seen = [], [], set()
        for e in intents:
            if e[1] in seen:
                skipped.append(e)
            else:
                seen.add(e[1])
                chosen.append(e)
        return chosen, skipped

    # -------------------------------------------------------------- selection

    def _service_selection_queue(self) -> None:
        if not self.sel_queue:
            return
        order = sorted(range(len(self.sel_queue)),
                       key=lambda i: (self.sel_queue[i][0], self.sel_queue[i][1], self.sel_queue[i][2]))
        admit = order[: self.cfg.ra.n_max]
        admitted = [self.sel_queue[i] for i in admit]
        drop = set(admit)
        self.sel_queue = [e for i, e in enumerate(self.sel_queue) if i not in drop]
        for trig, veh, kind, payload in admitted:
            if kind == 0:
                self._do_standard_select(trig, veh)
            elif kind == 1:
                self._do_issue_request(trig, veh)
            else:
                self._do_respond(veh, payload)

    def _do_standard_select(self, trig: int, veh: int) -> None:
        link = self.links[veh]
        if link.trigger is None or link.grant is not None:
            link.trigger = None if link.grant is not None else link.trigger
            return
        self._expire_queue(link)
        if not link.queue:
            link.trigger = None
            link.retries = 0
            return
        meta: dict = {}
        avail = self._availability(veh, None, meta)
        outcome = select(avail, self.cfg.ra, self.cfg.grid, self.vrng[veh], owner=veh)
        scheme = "fallback" if link.fallback_next else "standard"
        if outcome is None:
            link.retries += 1
            if link.retries > self.retry_deadline:
                tb = link.queue.pop(0)
                tb.resolved = True
                self.log.add_tb(self.slot, "lost", tb.tb_id, veh, "unservable")
                link.retries = 0
            if link.queue:
                self.sel_queue.append((trig, veh, 0, None))
            else:
                link.trigger = None
                link.retries = 0
            return
        self._adopt_grant(veh, outcome.grant, scheme, selector=veh,
                          pool=int(np.count_nonzero(avail.entries)))
        link.trigger = None
        link.retries = 0
        link.fallback_next = False

    def _do_issue_request(self, trig: int, veh: int) -> None:
        link = self.links[veh]
        if link.trigger is None:
            return
        self._expire_queue(link)
        if not link.queue:
            link.trigger = None
            return
        dest = int(self.partner[veh])
        if dest < 0:
            dest = link.queue[0].destination
        meta: dict = {}
        avail = self._availability(veh, None, meta)  # merged view for signalling
        request = issue_request(avail, veh, dest, len(link.queue), self.slot,
                                self.cfg.ra, self.vrng[veh],
                                repeats=self.cfg.coop.request_repeats)
        if request is None:
            self.fallback_count += 1
            self.log.add_hs(self.slot, "fallback", veh, "no_signaling_resource")
            link.fallback_next = True
            self._do_standard_select(trig, veh)
            return
        cells = (request.resource, *request.extra_resources)
        for cell in cells:
            self.sig_sched.setdefault(cell.slot, []).append(
                ("request", veh, dest, cell.subchannel, request)
            )
        link.hs_request = request
        # the requester knows its own tx slots; the wait starts at the last one
        link.hs_deadline = cells[-1].slot + self.cfg.coop.timeout_slots(self.cfg.grid)
        self.log.add_hs(self.slot, "request_scheduled", veh, f"slot={cells[0].slot}")

    def _do_respond(self, veh: int, request: RaRequest) -> None:
        theta_bar = self._nearest_beam(veh, request.tx_id)
        meta: dict = {}
        beam_avail = self._availability(veh, theta_bar, meta)
        self._mask_granted_out(veh, beam_avail)
        sig_meta: dict = {}
        sig_avail = self._availability(veh, None, sig_meta)
        response = respond(request, beam_avail, sig_avail, theta_bar,
                           self.cfg.ra, self.cfg.grid, self.vrng[veh],
                           repeats=self.cfg.coop.request_repeats)
        if response is None:
            self.log.add_hs(self.slot, "response_unschedulable", request.tx_id, "")
            return
        gid = -1
        pool = int(np.count_nonzero(beam_avail.entries))
        if response.granted is not None:
            gid = self.grant_counter
            self.grant_counter += 1
            granted = response.granted.grant
            cells = tuple((r.slot, r.subchannel) for r in granted.resources)
            end = cells[0][0] + granted.rc_remaining * granted.rri_slots
            self.links[veh].granted_out.append((cells, granted.rri_slots, end))
        for cell in (response.resource, *response.extra_resources):
            self.sig_sched.setdefault(cell.slot, []).append(
                ("response", veh, request.tx_id, cell.subchannel, (response, gid, pool))
            )
        self.log.add_hs(self.slot, "response_scheduled", request.tx_id,
                        f"slot={response.resource.slot}")

    def _adopt_grant(self, veh: int, grant: Grant, scheme: str, selector: int,
                     pool: int, gid: Optional[int] = None) -> None:
        if gid is None:
            gid = self.grant_counter
            self.grant_counter += 1
        if scheme != "coop":  # coop selections are logged at respond time
            self.log.add_sel(self.slot, veh, selector, scheme, commit_cells(grant),
                             gid, pool)
        rt = _GrantRt(gid, grant)
        rt.skip_to(self.slot)
        self.links[veh].grant = rt
        cells = tuple((r.slot, r.subchannel) for r in grant.resources)
        self.log.add_grant(self.slot, "created", gid, veh, rt.rc, rt.rri, cells)

    # -------------------------------------------------------------- handshake

    def _handshake_timeouts(self) -> None:
        if not self.cooperative:
            return
        for v in range(self.n):
            link = self.links[v]
            if link.hs_request is None or link.hs_deadline > self.slot:
                continue
            link.hs_request = None
            if link.hs_retries < self.cfg.coop.request_retries:
                link.hs_retries += 1
                self.log.add_hs(self.slot, "timeout_retry", v, f"attempt={link.hs_retries}")
                self.sel_queue.append((self.slot, v, 1, None))
            else:
                link.hs_retries = 0
                self.fallback_count += 1
                self.log.add_hs(self.slot, "fallback", v, "retries_exhausted")
                link.fallback_next = True
                self.sel_queue.append((self.slot, v, 0, None))

    # ------------------------------------------------------------------ step

    def _step(self) -> None:
        slot = self.slot
        cfg = self.cfg

        if self.trace is not None:
            t = self.trace.t_min + slot * cfg.grid.slot_duration
            state = self.trace.sample(t)
            self.pos = np.array([[k.x_m, k.y_m] for k in state])
            self.heading = np.array([k.heading_rad for k in state])
            self.beam_world = self._wrap(self.heading[:, None] + self.offsets[None, :])
        elif slot > 0:
            self.pos[:, 0] = (self.pos[:, 0] + self.speed * np.cos(self.heading)
                              * cfg.grid.slot_duration) % cfg.scenario.extent_m[0]
            self.pos[:, 1] = (self.pos[:, 1] + self.speed * np.sin(self.heading)
                              * cfg.grid.slot_duration) % cfg.scenario.extent_m[1]

        if slot % cfg.scenario.pairing_refresh_slots == 0:
            self._refresh_pairs()

        self._traffic()
        self._assign_periods()

        intents, skipped = self._arbitrate(self._collect_intents())
        for _p, v, kind, f, _r, tb, copy, _pl in skipped:
            self.log.add_skip(slot, v, kind, f, tb.tb_id if tb else -1, copy)
            if tb is not None:
                self._count_copy(tb)

        txs = []
        for _p, v, kind, f, recv, tb, copy, payload in intents:
            pointing = self._pointing(v, recv)
            rx_beam = self._nearest_beam(recv, v)
            txs.append(
                Transmission(v, ResourceIndex(slot, f), kind, recv, pointing, rx_beam,
                             tb.tb_id if tb else -1, copy, v if kind == "data" else -1)
            )
            self.log.add_tx(slot, v, kind, f, tb.tb_id if tb else -1, copy, v)
        events = SlotEvents(slot, tuple(txs))

        if txs:
            decodes, contrib, totals = resolve_slot(
                events, self.pos, self.beam_world, cfg.radio, self.shadow,
                self.kernel, totals_out=self._totals,
            )
            self.buf[:, :, slot % self.ring_len, :] = totals
        else:
            decodes = []
            self.buf[:, :, slot % self.ring_len, :] = 0.0

        for d, (_p, v, kind, f, recv, tb, copy, payload) in zip(decodes, intents):
            self.log.add_rx(slot, d.receiver, v, kind, tb.tb_id if tb else -1, copy,
                            d.ok, d.sinr_db, d.signal_dbm, d.interference_dbm, d.reason)
            if kind == "data":
                if d.ok and not tb.delivered:
                    tb.delivered = True
                    tb.resolved = True
                    self.log.add_tb(slot, "delivered", tb.tb_id, v)
                self._count_copy(tb)
            elif kind == "request" and d.ok:
                key = (d.receiver, payload.tx_id)
                if self._responded_last.get(key) != payload.issue_slot:
                    self._responded_last[key] = payload.issue_slot
                    self.sel_queue.append((slot, d.receiver, 2, payload))
            elif kind == "response" and d.ok:
                self._on_response(d.receiver, payload)

        self._handshake_timeouts()
        self._service_selection_queue()

    def _on_response(self, veh: int, payload) -> None:
        response, gid, pool = payload
        link = self.links[veh]
        if link.hs_request is None or link.hs_request is not response.request:
            return  # stale response; the handshake moved on
        link.hs_request = None
        link.hs_retries = 0
        link.trigger = None
        if response.granted is None:
            self.fallback_count += 1
            self.log.add_hs(self.slot, "fallback", veh, "negative_response")
            link.fallback_next = True
            link.trigger = self.slot
            self.sel_queue.append((self.slot, veh, 0, None))
            return
        self.log.add_hs(self.slot, "grant_adopted", veh, f"gid={gid}")
        granted = response.granted.grant
        self.log.add_sel(self.slot, veh, response.request.rx_id, "coop",
                         commit_cells(granted), gid, pool)
        self._adopt_grant(veh, granted, "coop",
                          selector=response.request.rx_id, pool=pool, gid=gid)

    def _count_copy(self, tb: TransportBlock) -> None:
        tb.copies_remaining -= 1
        if tb.copies_remaining <= 0 and not tb.delivered and not tb.resolved:
            tb.resolved = True
            self.log.add_tb(self.slot, "lost", tb.tb_id, tb.source, "exhausted")

    # ------------------------------------------------------------------- run

    def run(self) -> RunResult:
        for s in range(self.duration):
            self.slot = s
            self._step()
        rec = metrics_mod.compute_metrics(
            self.log, self.cfg.grid, self.measure_start, self.duration,
            self.accounting_end,
        )
        rec.fallback_count = self.fallback_count
        return RunResult(self.log, rec, self.mode, self.seed, self.duration,
                         self.measure_start, self.accounting_end,
                         meta={"backend": _kernels.BACKEND})

    # ----------------------------------------------------------- introspection

    def vehicle_state(self, v: int) -> VehicleState:
        if self.mode == "coop3d":
            bitmaps = BeamBitmapSet(
                tuple(
                    SensingBitmap(
                        self.slot - self.cfg.grid.sensing_window,
                        self._window_view_dbm(v, b) <= self.gamma_init, b,
                    )
                    for b in range(self.L)
                ),
                owner=v,
            )
        else:
            bitmaps = SensingBitmap(
                self.slot - self.cfg.grid.sensing_window,
                self._window_view_dbm(v, None) <= self.gamma_init,
            )
        link = self.links[v]
        grants = (link.grant.grant,) if link.grant else ()
        busy = any(
            p[0] == self.slot for p in link.pending
        )
        return VehicleState(
            v, (float(self.pos[v, 0]), float(self.pos[v, 1])),
            float(self.heading[v]), float(self.speed[v]) if self.trace is None else 0.0,
            self.codebook, self.mode, bitmaps, grants,
            tuple(tb.tb_id for tb in link.queue), busy, v,
        )


def run(cfg: SimConfig, mode: str, seed: int, duration_slots: int, kernel=None) -> RunResult:
    """Build and execute one deterministic run; see Simulator."""
    return Simulator(cfg, mode, seed, duration_slots, kernel=kernel).run()
