"""Vehicle kinematics: synthetic lane motion and external trace ingestion.

Synthetic scenarios place vehicles on straight lanes (a Manhattan road grid
or a multi-lane highway) moving at constant speed with wrap-around at the
extent boundaries.  The trace scenario replays a CSV exported from any
mobility tool, linearly interpolated between samples.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Literal, Optional, Sequence

import numpy as np

from .radio import wrap_angle

TRACE_HEADER = "time_s,vehicle_id,x_m,y_m,heading_rad,speed_mps"


class TraceError(ValueError):
    """Malformed or inconsistent mobility trace."""


class EndOfTraceError(RuntimeError):
    """Queried time exceeds the trace's coverage."""


@dataclass(frozen=True)
class VehicleKinematics:
    vehicle_id: int
    x_m: float
    y_m: float
    heading_rad: float
    speed_mps: float
    timestamp_s: float

    def __post_init__(self) -> None:
        if self.speed_mps < 0:
            raise ValueError("speed must be >= 0")
        if not -math.pi <= self.heading_rad < math.pi:
            raise ValueError("heading must lie in [-pi, pi)")


ScenarioKind = Literal["grid-roads", "straight-highway", "trace"]


@dataclass(frozen=True)
class ScenarioConfig:
    kind: ScenarioKind = "straight-highway"
    extent_m: tuple[float, float] = (400.0, 14.0)
    vehicle_count: int = 20
    speed_range_mps: tuple[float, float] = (10.0, 15.0)
    road_spacing_m: float = 3.5
    trace_path: Optional[str] = None
    pairing_max_distance_m: float = 40.0
    pairing_refresh_slots: int = 2000

    def __post_init__(self) -> None:
        if self.kind not in ("grid-roads", "straight-highway", "trace"):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.vehicle_count < 2:
            raise ValueError("vehicle_count must be >= 2")
        if self.extent_m[0] <= 0 or self.extent_m[1] <= 0:
            raise ValueError("extent must be positive")
        if self.speed_range_mps[0] < 0 or self.speed_range_mps[1] < self.speed_range_mps[0]:
            raise ValueError("speed range must be 0 <= lo <= hi")
        if self.road_spacing_m <= 0:
            raise ValueError("road_spacing_m must be > 0")
        if self.kind == "trace" and not self.trace_path:
            raise ValueError("trace scenario needs trace_path")
        if self.pairing_max_distance_m <= 0:
            raise ValueError("pairing_max_distance_m must be > 0")
        if self.pairing_refresh_slots < 1:
            raise ValueError("pairing_refresh_slots must be >= 1")


def init_fleet(
    scenario: ScenarioConfig, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Initial (positions (n,2), headings (n,), speeds (n,)) for a synthetic
    scenario; lanes and travel directions are drawn from the given stream."""
    n = scenario.vehicle_count
    ex, ey = scenario.extent_m
    pos = np.empty((n, 2))
    heading = np.empty(n)
    speeds = rng.uniform(scenario.speed_range_mps[0], scenario.speed_range_mps[1], size=n)
    if scenario.kind == "grid-roads":
        nx = max(1, int(ex // scenario.road_spacing_m))
        ny = max(1, int(ey // scenario.road_spacing_m))
        for i in range(n):
            along = rng.uniform(0.0, ex if i % 2 == 0 else ey)
            forward = bool(rng.integers(2))
            if i % 2 == 0:  # horizontal road
                road = int(rng.integers(ny))
                pos[i] = (along, (road + 0.5) * ey / ny)
                heading[i] = 0.0 if forward else -math.pi
            else:  # vertical road
                road = int(rng.integers(nx))
                pos[i] = ((road + 0.5) * ex / nx, along)
                heading[i] = math.pi / 2 if forward else -math.pi / 2
    elif scenario.kind == "straight-highway":
        lanes = max(2, int(ey // scenario.road_spacing_m))
        for i in range(n):
            lane = int(rng.integers(lanes))
            pos[i] = (rng.uniform(0.0, ex), (lane + 0.5) * ey / lanes)
            heading[i] = 0.0 if lane % 2 == 0 else -math.pi
    else:
        raise ValueError("init_fleet only handles synthetic scenario kinds")
    return pos, heading, speeds


def advance_arrays(
    pos: np.ndarray,
    heading: np.ndarray,
    speeds: np.ndarray,
    dt: float,
    extent: tuple[float, float],
) -> np.ndarray:
    """Constant-speed lane motion with toroidal wrap-around (new array)."""
    out = pos.copy()
    out[:, 0] = (pos[:, 0] + speeds * np.cos(heading) * dt) % extent[0]
    out[:, 1] = (pos[:, 1] + speeds * np.sin(heading) * dt) % extent[1]
    return out


def advance(
    state: Sequence[VehicleKinematics],
    dt: float,
    scenario: ScenarioConfig,
    rng: Optional[np.random.Generator] = None,
) -> list[VehicleKinematics]:
    """Advance a kinematics list by dt seconds.

    Synthetic kinds integrate straight-line motion; a trace scenario should
    be advanced through TraceTable.sample instead.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if scenario.kind == "trace":
        raise ValueError("trace scenarios advance via TraceTable.sample")
    pos = np.array([[v.x_m, v.y_m] for v in state])
    heading = np.array([v.heading_rad for v in state])
    speeds = np.array([v.speed_mps for v in state])
    new_pos = advance_arrays(pos, heading, speeds, dt, scenario.extent_m)
    return [
        replace(v, x_m=float(new_pos[i, 0]), y_m=float(new_pos[i, 1]),
                timestamp_s=v.timestamp_s + dt)
        for i, v in enumerate(state)
    ]


class TraceTable:
    """Per-vehicle trajectories, sorted by time, linearly interpolated."""

    def __init__(self, rows: dict[int, dict[str, np.ndarray]]):
        self._rows = rows
        self.vehicle_ids = sorted(rows)
        self.t_min = max(float(r["t"][0]) for r in rows.values())
        self.t_max = min(float(r["t"][-1]) for r in rows.values())

    def sample(self, t: float) -> list[VehicleKinematics]:
        """Interpolated kinematics of every vehicle at time t."""
        if t < self.t_min or t > self.t_max:
            raise EndOfTraceError(
                f"t={t} outside common trace coverage [{self.t_min}, {self.t_max}]"
            )
        out = []
        for vid in self.vehicle_ids:
            r = self._rows[vid]
            x = float(np.interp(t, r["t"], r["x"]))
            y = float(np.interp(t, r["t"], r["y"]))
            # headings interpolate through the unit circle to survive wrap
            hc = float(np.interp(t, r["t"], np.cos(r["h"])))
            hs = float(np.interp(t, r["t"], np.sin(r["h"])))
            speed = float(np.interp(t, r["t"], r["v"]))
            out.append(
                VehicleKinematics(vid, x, y, wrap_angle(math.atan2(hs, hc)), speed, t)
            )
        return out


def load_trace(path: str) -> TraceTable:
    """Parse and validate a trace CSV (header must match TRACE_HEADER exactly)."""
    columns = TRACE_HEADER.split(",")
    per_vehicle: dict[int, list[tuple[float, float, float, float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TraceError("empty trace file") from None
        if header != columns:
            raise TraceError(
                f"trace header must be exactly {TRACE_HEADER!r}, got {','.join(header)!r}"
            )
        n_rows = 0
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(columns):
                raise TraceError(f"line {lineno}: expected {len(columns)} fields")
            try:
                t = float(row[0])
                vid = int(row[1])
                x, y = float(row[2]), float(row[3])
                h, v = float(row[4]), float(row[5])
            except ValueError as exc:
                raise TraceError(f"line {lineno}: {exc}") from None
            if v < 0:
                raise TraceError(f"line {lineno}: negative speed {v}")
            if not -math.pi <= h < math.pi:
                raise TraceError(f"line {lineno}: heading {h} outside [-pi, pi)")
            per_vehicle.setdefault(vid, []).append((t, x, y, h, v))
            n_rows += 1
    if n_rows == 0:
        raise TraceError("trace contains no data rows")
    rows: dict[int, dict[str, np.ndarray]] = {}
    for vid, samples in per_vehicle.items():
        samples.sort(key=lambda s: s[0])
        t = np.array([s[0] for s in samples])
        if np.any(np.diff(t) <= 0):
            raise TraceError(f"vehicle {vid}: non-monotone timestamps")
        rows[vid] = {
            "t": t,
            "x": np.array([s[1] for s in samples]),
            "y": np.array([s[2] for s in samples]),
            "h": np.array([s[3] for s in samples]),
            "v": np.array([s[4] for s in samples]),
        }
    return TraceTable(rows)
