"""Hot per-slot radio resolution with selectable backend.

The inner loop of every simulated slot evaluates, for each receive-capable
vehicle, the linear-power contribution of every active transmitter at every
sensing beam.  Two interchangeable implementations exist:

* a numba ``@njit`` kernel (default when numba imports), and
* a vectorised pure-numpy fallback.

Selection: set ``SIDELINK3D_BACKEND=numpy`` or ``SIDELINK3D_BACKEND=numba``
in the environment before import; unset picks numba when available.  Both
paths accumulate in the same operation order so a run is reproducible under
either backend.  ``python -m sidelink3d.bench`` compares their throughput.
"""

from __future__ import annotations

import math
import os

import numpy as np

from .radio import ELEMENT_HPBW_RAD, ELEMENT_MAX_ATT_DB, _AF_POWER_FLOOR

_ENV_VAR = "SIDELINK3D_BACKEND"
_TWO_PI = 2.0 * math.pi


def _slot_contrib_numpy(
    positions: np.ndarray,
    tx_vehicle: np.ndarray,
    tx_pointing: np.ndarray,
    rx_mask: np.ndarray,
    beam_pointing: np.ndarray,
    shadow_db: np.ndarray,
    tx_power_dbm: float,
    ref_loss_db: float,
    pl_exponent: float,
    ref_distance: float,
    array_rows: int,
    array_cols: int,
    out: np.ndarray,
) -> None:
    """Fill out[v, b, j] with the linear mW power of transmission j at
    vehicle v through sensing beam b; zero where v cannot receive or v == j's
    transmitter."""
    n, n_beams = beam_pointing.shape
    m = tx_vehicle.shape[0]
    out[:] = 0.0
    if m == 0:
        return
    peak_db = 10.0 * math.log10(array_rows * array_cols)

    pos_t = positions[tx_vehicle]  # (m, 2)
    dx = positions[:, 0][:, None] - pos_t[None, :, 0]  # (n, m) toward receiver
    dy = positions[:, 1][:, None] - pos_t[None, :, 1]
    dist = np.hypot(dx, dy)
    aod = np.arctan2(dy, dx)  # bearing tx -> rx
    aoa = np.arctan2(-dy, -dx)  # bearing rx -> tx

    d = np.maximum(dist, ref_distance)
    pl = ref_loss_db + 10.0 * pl_exponent * np.log10(d / ref_distance)

    g_tx = _gain_db_numpy(aod - tx_pointing[None, :], peak_db, array_cols)
    delta_rx = aoa[:, None, :] - beam_pointing[:, :, None]  # (n, L, m)
    g_rx = _gain_db_numpy(delta_rx, peak_db, array_cols)

    base = tx_power_dbm - pl + g_tx - shadow_db[tx_vehicle, :].T  # (n, m)
    np.power(10.0, (base[:, None, :] + g_rx) / 10.0, out=out)

    out[~rx_mask] = 0.0
    out[tx_vehicle, :, np.arange(m)] = 0.0


def _gain_db_numpy(delta: np.ndarray, peak_db: float, cols: int) -> np.ndarray:
    delta = np.mod(delta + math.pi, _TWO_PI) - math.pi
    psi = math.pi * np.sin(delta)
    small = np.abs(psi) < 1e-9
    safe = np.where(small, 1.0, psi)
    with np.errstate(divide="ignore", invalid="ignore"):
        af = np.sin(cols * safe / 2.0) / (cols * np.sin(safe / 2.0))
    af_pow = np.maximum(np.where(small, 1.0, af * af), _AF_POWER_FLOOR)
    att = np.minimum(12.0 * (delta / ELEMENT_HPBW_RAD) ** 2, ELEMENT_MAX_ATT_DB)
    return peak_db + 10.0 * np.log10(af_pow) - att


def _build_numba_kernel():
    from numba import njit

    @njit(cache=True)
    def _gain_db(delta, peak_db, cols):
        delta = (delta + math.pi) % _TWO_PI - math.pi
        psi = math.pi * math.sin(delta)
        if abs(psi) < 1e-9:
            af_pow = 1.0
        else:
            af = math.sin(cols * psi / 2.0) / (cols * math.sin(psi / 2.0))
            af_pow = af * af
            if af_pow < _AF_POWER_FLOOR:
                af_pow = _AF_POWER_FLOOR
        att = 12.0 * (delta / ELEMENT_HPBW_RAD) ** 2
        if att > ELEMENT_MAX_ATT_DB:
            att = ELEMENT_MAX_ATT_DB
        return peak_db + 10.0 * math.log10(af_pow) - att

    @njit(cache=True)
    def _slot_contrib(
        positions,
        tx_vehicle,
        tx_pointing,
        rx_mask,
        beam_pointing,
        shadow_db,
        tx_power_dbm,
        ref_loss_db,
        pl_exponent,
        ref_distance,
        array_rows,
        array_cols,
        out,
    ):
        n, n_beams = beam_pointing.shape
        m = tx_vehicle.shape[0]
        out[:] = 0.0
        if m == 0:
            return
        peak_db = 10.0 * math.log10(array_rows * array_cols)
        for v in range(n):
            if not rx_mask[v]:
                continue
            for j in range(m):
                t = tx_vehicle[j]
                if t == v:
                    continue
                dx = positions[v, 0] - positions[t, 0]
                dy = positions[v, 1] - positions[t, 1]
                dist = math.hypot(dx, dy)
                aod = math.atan2(dy, dx)
                aoa = math.atan2(-dy, -dx)
                d = dist if dist > ref_distance else ref_distance
                pl = ref_loss_db + 10.0 * pl_exponent * math.log10(d / ref_distance)
                g_tx = _gain_db(aod - tx_pointing[j], peak_db, array_cols)
                base = tx_power_dbm - pl + g_tx - shadow_db[t, v]
                for b in range(n_beams):
                    g_rx = _gain_db(aoa - beam_pointing[v, b], peak_db, array_cols)
                    out[v, b, j] = 10.0 ** ((base + g_rx) / 10.0)

    return _slot_contrib


_IMPLS: dict[str, object] = {"numpy": _slot_contrib_numpy}
try:
    _IMPLS["numba"] = _build_numba_kernel()
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_IMPLS))


def default_backend() -> str:
    requested = os.environ.get(_ENV_VAR, "").strip().lower()
    if requested:
        if requested not in _IMPLS:
            raise ValueError(
                f"{_ENV_VAR}={requested!r} not available; choices: {available_backends()}"
            )
        return requested
    return "numba" if _HAVE_NUMBA else "numpy"


def get_impl(name: str | None = None):
    """Return the slot-contribution kernel for a backend (default: env pick)."""
    return _IMPLS[default_backend() if name is None else name]


slot_contrib = get_impl()
BACKEND = default_backend()
