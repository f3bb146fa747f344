"""Post-run metrics: delivery ratio, channel busy ratio, collision probability.

Everything here is a pure function of the event log, so recomputation is
bit-identical.  Window bounds are half-open slot ranges; TB accounting uses
an earlier end bound so blocks still in flight at the run tail never skew
the ratios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .eventlog import RunLog
from .grid import GridConfig


@dataclass
class MetricsRecord:
    pdr: Optional[float] = None
    pdr_per_link: dict = field(default_factory=dict)
    cbr_series: list = field(default_factory=list)
    mean_cbr: Optional[float] = None
    median_cbr: Optional[float] = None
    collision_probability: Optional[float] = None
    mean_interference_dbm: Optional[float] = None
    interference_per_link_dbm: dict = field(default_factory=dict)
    tb_generated: int = 0
    tb_delivered: int = 0
    tb_lost_expired: int = 0
    tb_lost_unservable: int = 0
    tb_lost_exhausted: int = 0
    data_cells: int = 0
    signaling_cells: int = 0
    fallback_count: int = 0

    def as_dict(self) -> dict:
        return {
            "pdr": self.pdr,
            "pdr_per_link": dict(sorted(self.pdr_per_link.items())),
            "mean_cbr": self.mean_cbr,
            "median_cbr": self.median_cbr,
            "collision_probability": self.collision_probability,
            "mean_interference_dbm": self.mean_interference_dbm,
            "interference_per_link_dbm": dict(sorted(self.interference_per_link_dbm.items())),
            "tb_generated": self.tb_generated,
            "tb_delivered": self.tb_delivered,
            "tb_lost_expired": self.tb_lost_expired,
            "tb_lost_unservable": self.tb_lost_unservable,
            "tb_lost_exhausted": self.tb_lost_exhausted,
            "data_cells": self.data_cells,
            "signaling_cells": self.signaling_cells,
            "fallback_count": self.fallback_count,
            "cbr_series": self.cbr_series,
        }


def _tb_accounts(
    log: RunLog, start: int, end: int
) -> tuple[dict[int, int], set[int], dict[int, str]]:
    """(tb -> link for generated-in-window TBs, delivered set, lost reasons)."""
    gen: dict[int, int] = {}
    delivered: set[int] = set()
    lost: dict[int, str] = {}
    for slot, ev, tb, link, why in log.tb:
        if ev == "gen":
            if start <= slot < end:
                gen[tb] = link
        elif ev == "delivered":
            delivered.add(tb)
        else:
            lost[tb] = why
    return gen, delivered, lost


def pdr(
    log: RunLog,
    link: Optional[int] = None,
    start: int = 0,
    end: Optional[int] = None,
) -> Optional[float]:
    """Delivered fraction of the link's transmitted transport blocks.

    A block counts once no matter how many copies decoded.  The denominator
    is blocks that went on air: delivered ones plus those whose copies all
    failed.  Blocks dropped before any transmission (deadline expiry, no
    selectable resources) are tracked by the loss counters instead, and
    blocks still in flight are excluded.  None when nothing was transmitted.
    """
    end = end if end is not None else math.inf
    gen, delivered, lost = _tb_accounts(log, start, end)
    num = den = 0
    for tb, tb_link in gen.items():
        if link is not None and tb_link != link:
            continue
        if tb in delivered:
            num += 1
            den += 1
        elif lost.get(tb) == "exhausted":
            den += 1
    if den == 0:
        return None
    return num / den


def cbr(
    log: RunLog,
    interval: int,
    grid: GridConfig,
    start: int = 0,
    end: Optional[int] = None,
) -> list[float]:
    """Busy-cell ratio per interval: distinct (slot, sub-channel) cells that
    carried any transmission (data or signalling) over interval * subchannels.

    Only whole intervals inside [start, end) are reported.
    """
    if end is None:
        end = max((t[0] for t in log.tx), default=start) + 1
    n_intervals = (end - start) // interval
    if n_intervals <= 0:
        return []
    cells: list[set] = [set() for _ in range(n_intervals)]
    for slot, _veh, _kind, f, _tb, _copy, _link in log.tx:
        if start <= slot < start + n_intervals * interval:
            cells[(slot - start) // interval].add((slot, f))
    denom = interval * grid.subchannels
    return [len(c) / denom for c in cells]


def collision_probability_from_snapshots(
    snapshots: Iterable[tuple[int, Iterable[tuple[int, int]]]],
) -> Optional[float]:
    """Fraction of distinct selected cells chosen by two or more vehicles.

    ``snapshots`` yields (vehicle, cells) selection events; cell identity is
    the absolute (slot, sub-channel) pair.  None when nothing was selected.
    """
    owners: dict[tuple[int, int], set[int]] = {}
    for veh, cells in snapshots:
        for cell in cells:
            owners.setdefault(tuple(cell), set()).add(veh)
    if not owners:
        return None
    collided = sum(1 for s in owners.values() if len(s) >= 2)
    return collided / len(owners)


def collision_probability(
    log: RunLog, start: int = 0, end: Optional[int] = None
) -> Optional[float]:
    """Collision probability over the log's selection snapshots."""
    end = end if end is not None else math.inf
    snaps = (
        (owner, cells)
        for slot, owner, _sel, _scheme, cells, _gid, _pool in log.sel
        if start <= slot < end
    )
    return collision_probability_from_snapshots(snaps)


def interference_stats(
    log: RunLog, start: int = 0, end: Optional[int] = None
) -> tuple[Optional[float], dict[int, float]]:
    """(overall, per-link) mean interference power in dBm at listening data
    receivers; half-duplex-blocked copies measure nothing and are skipped."""
    end = end if end is not None else math.inf
    tot_mw = 0.0
    tot_n = 0
    per_link: dict[int, list] = {}
    for slot, _rcv, snd, kind, _tb, _copy, _ok, _sinr, _sig, intf, why in log.rx:
        if kind != "data" or why == "half_duplex" or not start <= slot < end:
            continue
        mw = 0.0 if intf == -math.inf else 10.0 ** (intf / 10.0)
        tot_mw += mw
        tot_n += 1
        acc = per_link.setdefault(snd, [0.0, 0])
        acc[0] += mw
        acc[1] += 1

    def to_dbm(mw_sum: float, n: int) -> float:
        mean = mw_sum / n
        return -math.inf if mean <= 0 else 10.0 * math.log10(mean)

    overall = to_dbm(tot_mw, tot_n) if tot_n else None
    return overall, {k: to_dbm(s, c) for k, (s, c) in per_link.items()}


def compute_metrics(
    log: RunLog,
    grid: GridConfig,
    measure_start: int,
    duration: int,
    accounting_end: Optional[int] = None,
) -> MetricsRecord:
    """Assemble the full per-run record over the measurement window."""
    acc_end = accounting_end if accounting_end is not None else duration
    rec = MetricsRecord()

    gen, delivered, lost = _tb_accounts(log, measure_start, acc_end)
    per_link_num: dict[int, int] = {}
    per_link_den: dict[int, int] = {}
    for tb, link in gen.items():
        rec.tb_generated += 1
        if tb in delivered:
            rec.tb_delivered += 1
            per_link_num[link] = per_link_num.get(link, 0) + 1
            per_link_den[link] = per_link_den.get(link, 0) + 1
        elif tb in lost:
            why = lost[tb]
            if why == "expired":
                rec.tb_lost_expired += 1
            elif why == "unservable":
                rec.tb_lost_unservable += 1
            else:
                rec.tb_lost_exhausted += 1
                per_link_den[link] = per_link_den.get(link, 0) + 1
    den = sum(per_link_den.values())
    rec.pdr = (sum(per_link_num.values()) / den) if den else None
    rec.pdr_per_link = {
        link: per_link_num.get(link, 0) / d for link, d in per_link_den.items() if d
    }

    rec.cbr_series = cbr(log, grid.cbr_interval, grid, measure_start, duration)
    if rec.cbr_series:
        s = sorted(rec.cbr_series)
        n = len(s)
        rec.mean_cbr = sum(s) / n
        mid = n // 2
        rec.median_cbr = s[mid] if n % 2 else 0.5 * (s[mid - 1] + s[mid])

    rec.collision_probability = collision_probability(log, measure_start, duration)
    rec.mean_interference_dbm, rec.interference_per_link_dbm = interference_stats(
        log, measure_start, duration
    )

    for slot, _veh, kind, _f, _tb, _copy, _link in log.tx:
        if measure_start <= slot < duration:
            if kind == "data":
                rec.data_cells += 1
            else:
                rec.signaling_cells += 1
    return rec
