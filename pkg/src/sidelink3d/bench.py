"""Backend micro- and macro-benchmark: numba kernel vs pure numpy.

Run with ``python -m sidelink3d.bench``.  The kernel benchmark times the raw
per-slot power resolution on synthetic slot workloads; the engine benchmark
times short end-to-end runs under each backend.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from . import _kernels
from .engine import SimConfig, run
from .radio import RadioConfig, free_space_loss_db


def _kernel_workload(n: int, beams: int, m: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(0, 250, (n, 2))
    tx_vehicle = rng.choice(n, size=m, replace=False).astype(np.int64)
    tx_pointing = rng.uniform(-np.pi, np.pi, m)
    rx_mask = np.ones(n, dtype=np.bool_)
    rx_mask[tx_vehicle] = False
    beam_world = rng.uniform(-np.pi, np.pi, (n, beams))
    shadow = np.zeros((n, n))
    out = np.empty((n, beams, m))
    radio = RadioConfig()
    ref = free_space_loss_db(radio.pathloss_ref_distance_m, radio.carrier_frequency_hz)
    return (pos, tx_vehicle, tx_pointing, rx_mask, beam_world, shadow,
            radio.tx_power_dbm, ref, radio.pathloss_exponent,
            radio.pathloss_ref_distance_m, radio.array_rows, radio.array_cols, out)


def bench_kernel(iters: int = 2000, n: int = 20, beams: int = 8, m: int = 6) -> dict:
    results = {}
    args = _kernel_workload(n, beams, m)
    for name in _kernels.available_backends():
        impl = _kernels.get_impl(name)
        impl(*args)  # warm-up / JIT compile
        t0 = time.perf_counter()
        for _ in range(iters):
            impl(*args)
        dt = time.perf_counter() - t0
        results[name] = dt / iters
    return results


def bench_engine(slots: int = 3000, seed: int = 0) -> dict:
    results = {}
    cfg = SimConfig()
    for name in _kernels.available_backends():
        impl = _kernels.get_impl(name)
        run(cfg, "standard", seed, cfg.grid.sensing_window + 200, kernel=impl)  # warm-up
        t0 = time.perf_counter()
        run(cfg, "coop3d", seed, slots, kernel=impl)
        results[name] = time.perf_counter() - t0
    return results


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--iters", type=int, default=2000)
    parser.add_argument("--slots", type=int, default=3000)
    args = parser.parse_args(argv)

    print(f"backends: {', '.join(_kernels.available_backends())} "
          f"(default: {_kernels.BACKEND})")
    kres = bench_kernel(args.iters)
    print(f"\nslot kernel ({args.iters} iterations, 20 vehicles, 8 beams, 6 tx):")
    for name, per_call in sorted(kres.items()):
        print(f"  {name:6s}  {per_call * 1e6:8.1f} us/slot")
    if "numpy" in kres and "numba" in kres:
        print(f"  speedup numba vs numpy: {kres['numpy'] / kres['numba']:.1f}x")

    eres = bench_engine(args.slots)
    print(f"\nend-to-end engine ({args.slots} slots, coop3d, default scenario):")
    for name, total in sorted(eres.items()):
        print(f"  {name:6s}  {total:8.2f} s  ({total / args.slots * 1e6:.0f} us/slot)")
    if "numpy" in eres and "numba" in eres:
        print(f"  speedup numba vs numpy: {eres['numpy'] / eres['numba']:.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
