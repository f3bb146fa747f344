"""Link-budget primitives: path loss, planar-array beam gain, RSRP, SINR.

All powers are dBm, gains dBi, angles radians in [-pi, pi).  The antenna is a
uniform planar array whose azimuth cut is modelled analytically: a half-wave
spaced linear array factor across the columns, scaled by the row count, and
shaped by a parabolic element pattern so the array has a proper front/back
ratio.  Peak gain at boresight is 10*log10(rows*cols).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

# Single-element azimuth pattern: -min(12*(phi/phi_3db)^2, att_max) dB,
# with a 65 deg half-power width and a 30 dB hard floor.
ELEMENT_HPBW_RAD = math.radians(65.0)
ELEMENT_MAX_ATT_DB = 30.0

_AF_POWER_FLOOR = 1e-12  # -120 dB, keeps log10 finite at pattern nulls


def wrap_angle(angle: float) -> float:
    """Wrap to [-pi, pi)."""
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


def mw_to_dbm(mw: float) -> float:
    if mw <= 0.0:
        return -math.inf
    return 10.0 * math.log10(mw)


@dataclass(frozen=True)
class RadioConfig:
    """PHY-layer constants (defaults: 23 dBm Tx, -68 dBm noise, 30 GHz, 4x4)."""

    tx_power_dbm: float = 23.0
    noise_power_dbm: float = -68.0
    carrier_frequency_hz: float = 30e9
    array_rows: int = 4
    array_cols: int = 4
    pathloss_exponent: float = 2.2
    pathloss_ref_distance_m: float = 1.0
    sinr_decode_threshold_db: float = 5.0
    shadowing_sigma_db: float = 0.0
    # shadowing ramps linearly up to full sigma at this distance (short links
    # stay close to line-of-sight, obstruction odds grow with range)
    shadowing_ramp_m: float = 100.0

    def __post_init__(self) -> None:
        if self.array_rows < 1 or self.array_cols < 1:
            raise ValueError("array dimensions must be >= 1")
        if self.pathloss_exponent < 2.0:
            raise ValueError("pathloss_exponent must be >= 2")
        if self.pathloss_ref_distance_m <= 0:
            raise ValueError("pathloss_ref_distance_m must be > 0")
        if not math.isfinite(self.sinr_decode_threshold_db):
            raise ValueError("sinr_decode_threshold_db must be finite")
        if self.shadowing_sigma_db < 0:
            raise ValueError("shadowing_sigma_db must be >= 0")
        if self.shadowing_ramp_m <= 0:
            raise ValueError("shadowing_ramp_m must be > 0")

    @property
    def peak_gain_dbi(self) -> float:
        return 10.0 * math.log10(self.array_rows * self.array_cols)


@dataclass(frozen=True)
class LinkGeometry:
    """Distance plus departure/arrival bearings of one Tx->Rx link."""

    distance_m: float
    aod_rad: float
    aoa_rad: float

    def __post_init__(self) -> None:
        if self.distance_m <= 0:
            raise ValueError("distance must be > 0")

    @classmethod
    def from_positions(
        cls, tx_xy: Sequence[float], rx_xy: Sequence[float]
    ) -> "LinkGeometry":
        dx = rx_xy[0] - tx_xy[0]
        dy = rx_xy[1] - tx_xy[1]
        return cls(math.hypot(dx, dy), math.atan2(dy, dx), math.atan2(-dy, -dx))


def free_space_loss_db(distance_m: float, frequency_hz: float) -> float:
    return 20.0 * math.log10(4.0 * math.pi * distance_m * frequency_hz / SPEED_OF_LIGHT)


def pathloss(distance_m: float, cfg: RadioConfig) -> float:
    """Log-distance path loss in dB; distances under the reference clamp to it."""
    d_ref = cfg.pathloss_ref_distance_m
    d = max(distance_m, d_ref)
    ref_loss = free_space_loss_db(d_ref, cfg.carrier_frequency_hz)
    return ref_loss + 10.0 * cfg.pathloss_exponent * math.log10(d / d_ref)


def beam_gain(pointing_rad: float, direction_rad: float, cfg: RadioConfig) -> float:
    """Array gain (dBi) toward `direction` for a beam steered at `pointing`.

    Symmetric in the offset; boresight gain is 10*log10(rows*cols); the
    element pattern caps the attenuation 30 dB down so the back lobe sits
    well below the main lobe.
    """
    delta = wrap_angle(direction_rad - pointing_rad)
    psi = math.pi * math.sin(delta)
    if abs(psi) < 1e-9:
        af_pow = 1.0
    else:
        af = math.sin(cfg.array_cols * psi / 2.0) / (
            cfg.array_cols * math.sin(psi / 2.0)
        )
        af_pow = max(af * af, _AF_POWER_FLOOR)
    att_db = min(
        12.0 * (delta / ELEMENT_HPBW_RAD) ** 2,
        ELEMENT_MAX_ATT_DB,
    )
    return cfg.peak_gain_dbi + 10.0 * math.log10(af_pow) - att_db


def half_power_beamwidth(cfg: RadioConfig) -> float:
    """Full width (radians) where the pattern is within 3 dB of boresight."""
    peak = beam_gain(0.0, 0.0, cfg)
    lo, hi = 0.0, math.pi / 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if beam_gain(0.0, mid, cfg) >= peak - 3.0103:
            lo = mid
        else:
            hi = mid
    return 2.0 * lo


@dataclass(frozen=True)
class Codebook:
    """Uniformly spaced azimuth pointing directions (vehicle frame)."""

    beams: tuple[float, ...]
    beamwidth_rad: float

    def __post_init__(self) -> None:
        if len(self.beams) < 1:
            raise ValueError("codebook needs at least one beam")
        angles = np.asarray(self.beams)
        if np.any(angles < -math.pi) or np.any(angles >= math.pi):
            raise ValueError("beam angles must lie in [-pi, pi)")
        if len(self.beams) > 1:
            diffs = np.diff(angles)
            if np.any(diffs <= 0):
                raise ValueError("beam angles must be strictly increasing")
            if not np.allclose(diffs, diffs[0]):
                raise ValueError("beam angles must be uniformly spaced")

    @classmethod
    def uniform(cls, depth: int, cfg: RadioConfig) -> "Codebook":
        if depth < 1:
            raise ValueError("codebook depth must be >= 1")
        beams = tuple(-math.pi + 2.0 * math.pi * k / depth for k in range(depth))
        return cls(beams, half_power_beamwidth(cfg))

    @property
    def depth(self) -> int:
        return len(self.beams)

    def nearest_beam(self, angle_rad: float) -> int:
        """Index of the beam whose pointing is closest (wrapped) to the angle."""
        best, best_dist = 0, math.inf
        for i, b in enumerate(self.beams):
            d = abs(wrap_angle(angle_rad - b))
            if d < best_dist:
                best, best_dist = i, d
        return best


def rsrp(
    geom: LinkGeometry,
    cfg: RadioConfig,
    tx_pointing_rad: Optional[float],
    rx_pointing_rad: Optional[float],
    shadow_db: float = 0.0,
) -> float:
    """Received power (dBm): Tx power - path loss + both beamforming gains.

    A pointing of None means an isotropic (0 dBi) end.  With both beams
    boresight-aligned this reduces to Pt - PL + 2*Gb.
    """
    g_tx = 0.0 if tx_pointing_rad is None else beam_gain(tx_pointing_rad, geom.aod_rad, cfg)
    g_rx = 0.0 if rx_pointing_rad is None else beam_gain(rx_pointing_rad, geom.aoa_rad, cfg)
    return cfg.tx_power_dbm - pathloss(geom.distance_m, cfg) + g_tx + g_rx - shadow_db


def aggregate_interference(powers_dbm: Iterable[float]) -> float:
    """Linear-domain sum of per-interferer received powers, back in dBm.

    An empty iterable yields -inf (no interference).
    """
    total_mw = 0.0
    for p in powers_dbm:
        total_mw += dbm_to_mw(p)
    return mw_to_dbm(total_mw)


def sinr(signal_dbm: float, interference_dbm: float, cfg: RadioConfig) -> float:
    """SINR in dB against the aggregate interference plus thermal noise."""
    denom_mw = dbm_to_mw(cfg.noise_power_dbm)
    if interference_dbm != -math.inf:
        denom_mw += dbm_to_mw(interference_dbm)
    return signal_dbm - mw_to_dbm(denom_mw)


def decode_ok(sinr_db: float, cfg: RadioConfig) -> bool:
    return sinr_db >= cfg.sinr_decode_threshold_db
