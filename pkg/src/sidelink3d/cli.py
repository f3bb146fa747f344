"""Experiment orchestration: config files, seed/parameter sweeps, plot data.

Config files are JSON with one object per section; omitted fields fall back
to the built-in defaults and unknown keys are rejected::

    {
      "scenario": {"vehicle_count": 20, "extent_m": [250, 250]},
      "grid":     {"selection_window": 40},
      "ra":       {"n_max": 10},
      "radio":    {},
      "coop":     {},
      "engine":   {},
      "codebook_depth": 8,
      "modes": ["standard", "coop3d"],
      "seeds": 5,
      "seed_base": 0,
      "duration_slots": 22000,
      "sweep": {"grid.selection_window": [20, 40]},
      "out": "results"
    }

Outputs: one JSON record per run under ``<out>/runs/`` (re-running skips
completed ones), ``summary.csv`` with one row per run, ``comparison.csv``
with per-cell standard-vs-coop3d aggregates, and ``plotdata`` emits the
three plot-ready CSVs (PDR vs interference bins, CBR ECDF, collision ECDF).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from .engine import MODES, EngineParams, SimConfig, run
from .grid import GridConfig
from .mobility import ScenarioConfig
from .ra_coop3d import CoopConfig
from .ra_standard import SemiPersistentConfig
from .radio import RadioConfig


class ConfigError(ValueError):
    """Config file violates the schema; message names key and constraint."""


_SECTIONS = {
    "grid": GridConfig,
    "radio": RadioConfig,
    "ra": SemiPersistentConfig,
    "coop": CoopConfig,
    "scenario": ScenarioConfig,
    "engine": EngineParams,
}
_TUPLE_FIELDS = {"extent_m", "speed_range_mps"}
_TOP_KEYS = set(_SECTIONS) | {
    "codebook_depth", "modes", "seeds", "seed_base", "duration_slots", "sweep", "out",
}

SUMMARY_COLUMNS = [
    "config_hash", "cell", "mode", "seed", "pdr", "mean_cbr", "median_cbr",
    "collision_probability", "mean_interference_dbm", "tb_generated",
    "tb_delivered", "tb_lost_expired", "tb_lost_unservable",
    "tb_lost_exhausted", "data_cells", "signaling_cells", "fallback_count",
]
COMPARISON_COLUMNS = [
    "cell", "metric", "n_seeds", "standard_mean", "standard_std",
    "coop3d_mean", "coop3d_std", "coop_over_standard",
]
PDR_BIN_COLUMNS = ["mode", "cell", "bin_low_dbm", "bin_high_dbm", "n_samples", "mean_pdr"]
ECDF_COLUMNS = ["mode", "cell", "value", "ecdf"]


@dataclass(frozen=True)
class ExperimentSpec:
    base: SimConfig
    modes: tuple[str, ...] = MODES
    sweep: dict = field(default_factory=dict)
    seeds: int = 5
    seed_base: int = 0
    duration_slots: int = 22000
    out: str = "results"

    def __post_init__(self) -> None:
        for m in self.modes:
            if m not in MODES:
                raise ConfigError(f"modes: unknown mode {m!r}; choose from {MODES}")
        if self.seeds < 1:
            raise ConfigError("seeds: must be >= 1")
        if self.duration_slots <= self.base.grid.sensing_window:
            raise ConfigError("duration_slots: must exceed the sensing window")
        for axis, values in self.sweep.items():
            if not isinstance(values, (list, tuple)) or not values:
                raise ConfigError(f"sweep.{axis}: needs a non-empty value list")
            for v in values:
                apply_override(self.base, axis, v)  # validates, result discarded


def _build_section(name: str, cls, data: dict):
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{name}.{key}: unknown key")
    coerced = {
        k: tuple(v) if k in _TUPLE_FIELDS and isinstance(v, list) else v
        for k, v in data.items()
    }
    try:
        return cls(**coerced)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def parse_config(data: dict) -> ExperimentSpec:
    for key in data:
        if key not in _TOP_KEYS:
            raise ConfigError(f"{key}: unknown key")
    sections = {
        name: _build_section(name, cls, data.get(name, {}))
        for name, cls in _SECTIONS.items()
    }
    try:
        base = SimConfig(codebook_depth=data.get("codebook_depth", 8), **sections)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentSpec(
        base=base,
        modes=tuple(data.get("modes", MODES)),
        sweep=dict(data.get("sweep", {})),
        seeds=int(data.get("seeds", 5)),
        seed_base=int(data.get("seed_base", 0)),
        duration_slots=int(data.get("duration_slots", 22000)),
        out=str(data.get("out", "results")),
    )


def load_config(path: str) -> ExperimentSpec:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return parse_config(data)


def serialize_config(spec: ExperimentSpec) -> dict:
    """Inverse of parse_config (load -> serialize -> load is identity)."""
    out: dict = {}
    for name in _SECTIONS:
        section = dataclasses.asdict(getattr(spec.base, name))
        out[name] = {
            k: list(v) if isinstance(v, tuple) else v for k, v in section.items()
        }
    out["codebook_depth"] = spec.base.codebook_depth
    out["modes"] = list(spec.modes)
    out["sweep"] = {k: list(v) for k, v in spec.sweep.items()}
    out["seeds"] = spec.seeds
    out["seed_base"] = spec.seed_base
    out["duration_slots"] = spec.duration_slots
    out["out"] = spec.out
    return out


def apply_override(cfg: SimConfig, axis: str, value) -> SimConfig:
    """Return a copy of cfg with one dotted-path field replaced."""
    if axis == "codebook_depth":
        return dataclasses.replace(cfg, codebook_depth=value)
    if "." not in axis:
        raise ConfigError(f"sweep axis {axis!r} must be section.field")
    section, fname = axis.split(".", 1)
    if section not in _SECTIONS:
        raise ConfigError(f"sweep axis {axis!r}: unknown section {section!r}")
    target = getattr(cfg, section)
    if fname not in {f.name for f in dataclasses.fields(target)}:
        raise ConfigError(f"sweep axis {axis!r}: unknown field {fname!r}")
    if isinstance(value, list):
        value = tuple(value)
    try:
        return dataclasses.replace(cfg, **{section: dataclasses.replace(target, **{fname: value})})
    except ValueError as exc:
        raise ConfigError(f"sweep value {axis}={value!r}: {exc}") from exc


def config_hash(cfg: SimConfig, duration: int) -> str:
    blob = json.dumps(
        {
            **{n: dataclasses.asdict(getattr(cfg, n)) for n in _SECTIONS},
            "codebook_depth": cfg.codebook_depth,
            "duration": duration,
        },
        sort_keys=True,
        default=str,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _cells(spec: ExperimentSpec) -> list[tuple[str, SimConfig]]:
    cells = [("default", spec.base)]
    for axis, values in sorted(spec.sweep.items()):
        nxt = []
        for label, cfg in cells:
            for v in values:
                tag = f"{axis}={v}"
                key = tag if label == "default" else f"{label}|{tag}"
                nxt.append((key, apply_override(cfg, axis, v)))
        cells = nxt
    return cells


def _exec_run(args) -> dict:
    cell, cfg, mode, seed, duration = args
    result = run(cfg, mode, seed, duration)
    return {
        "config_hash": config_hash(cfg, duration),
        "cell": cell,
        "mode": mode,
        "seed": seed,
        "duration_slots": duration,
        "measure_start": result.measure_start,
        "accounting_end": result.accounting_end,
        "metrics": result.metrics.as_dict(),
    }


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> tuple[list[dict], int]:
    """Execute modes x sweep cells x seeds; returns (records, failure count).

    Completed (config hash, mode, seed) runs found under <out>/runs are
    loaded instead of re-executed, so interrupted sweeps resume.
    """
    runs_dir = os.path.join(spec.out, "runs")
    os.makedirs(runs_dir, exist_ok=True)
    todo, records = [], []
    for cell, cfg in _cells(spec):
        h = config_hash(cfg, spec.duration_slots)
        for mode in spec.modes:
            for s in range(spec.seeds):
                seed = spec.seed_base + s
                path = os.path.join(runs_dir, f"run_{h}_{mode}_s{seed}.json")
                if os.path.exists(path):
                    with open(path) as fh:
                        records.append(json.load(fh))
                else:
                    todo.append((path, (cell, cfg, mode, seed, spec.duration_slots)))

    failures = 0
    def _store(path: str, rec: dict) -> None:
        with open(path, "w") as fh:
            json.dump(rec, fh, indent=1, sort_keys=True)
        records.append(rec)

    if workers > 1 and todo:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_exec_run, args): path for path, args in todo}
            for fut, path in futures.items():
                try:
                    _store(path, fut.result())
                except Exception:
                    failures += 1
                    traceback.print_exc()
    else:
        for path, args in todo:
            try:
                _store(path, _exec_run(args))
            except Exception:
                failures += 1
                traceback.print_exc()

    records.sort(key=lambda r: (r["cell"], r["mode"], r["seed"]))
    _write_summary(spec.out, records)
    _write_comparison(spec.out, records)
    return records, failures


def _write_summary(out_dir: str, records: list[dict]) -> None:
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for r in records:
            m = r["metrics"]
            w.writerow([
                r["config_hash"], r["cell"], r["mode"], r["seed"],
                m["pdr"], m["mean_cbr"], m["median_cbr"],
                m["collision_probability"], m["mean_interference_dbm"],
                m["tb_generated"], m["tb_delivered"], m["tb_lost_expired"],
                m["tb_lost_unservable"], m["tb_lost_exhausted"],
                m["data_cells"], m["signaling_cells"], m["fallback_count"],
            ])


def _mean_std(xs: list[float]) -> tuple[Optional[float], Optional[float]]:
    xs = [x for x in xs if x is not None]
    if not xs:
        return None, None
    mean = sum(xs) / len(xs)
    var = sum((x - mean) ** 2 for x in xs) / len(xs)
    return mean, math.sqrt(var)


def _write_comparison(out_dir: str, records: list[dict]) -> None:
    cells = sorted({r["cell"] for r in records})
    metrics = ["pdr", "mean_cbr", "median_cbr", "collision_probability",
               "mean_interference_dbm"]
    with open(os.path.join(out_dir, "comparison.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COMPARISON_COLUMNS)
        for cell in cells:
            sub = [r for r in records if r["cell"] == cell]
            for metric in metrics:
                row = [cell, metric]
                by_mode = {}
                for mode in MODES:
                    vals = [r["metrics"][metric] for r in sub if r["mode"] == mode]
                    by_mode[mode] = _mean_std(vals)
                n = len([r for r in sub if r["mode"] == MODES[0]])
                row.append(n)
                for mode in MODES:
                    row.extend(by_mode[mode])
                s_mean, c_mean = by_mode[MODES[0]][0], by_mode[MODES[1]][0]
                ratio = (c_mean / s_mean) if (s_mean not in (None, 0) and c_mean is not None) else None
                row.append(ratio)
                w.writerow(row)


# ----------------------------------------------------------------- plot data

def pdr_interference_bins(
    records: list[dict], bin_width_db: float = 2.0
) -> list[tuple[str, str, float, float, int, float]]:
    """Per-link samples (mean interference at the receiver, link PDR) bucketed
    into fixed-width dB bins, per mode and sweep cell."""
    rows = []
    groups: dict[tuple[str, str], list[tuple[float, float]]] = {}
    for r in records:
        m = r["metrics"]
        per_pdr = m["pdr_per_link"]
        per_int = m["interference_per_link_dbm"]
        for link, p in per_pdr.items():
            x = per_int.get(link)
            if x is None or p is None:
                continue
            x = min(max(x, -120.0), -20.0)
            groups.setdefault((r["mode"], r["cell"]), []).append((x, p))
    for (mode, cell), pts in sorted(groups.items()):
        binned: dict[int, list[float]] = {}
        for x, p in pts:
            binned.setdefault(int(math.floor(x / bin_width_db)), []).append(p)
        for b in sorted(binned):
            vals = binned[b]
            rows.append((mode, cell, b * bin_width_db, (b + 1) * bin_width_db,
                         len(vals), sum(vals) / len(vals)))
    return rows


def ecdf_points(values: list[float]) -> list[tuple[float, float]]:
    xs = sorted(values)
    n = len(xs)
    return [(x, (i + 1) / n) for i, x in enumerate(xs)]


def emit_plotdata(records: list[dict], out_dir: str, bin_width_db: float = 2.0) -> None:
    """Write the three plot-ready CSVs next to the run records."""
    if not records:
        raise ValueError("no run records to plot")
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "pdr_vs_interference.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PDR_BIN_COLUMNS)
        w.writerows(pdr_interference_bins(records, bin_width_db))

    def ecdf_csv(name: str, values_of) -> None:
        groups: dict[tuple[str, str], list[float]] = {}
        for r in records:
            for v in values_of(r):
                if v is not None:
                    groups.setdefault((r["mode"], r["cell"]), []).append(v)
        with open(os.path.join(out_dir, name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(ECDF_COLUMNS)
            for (mode, cell), vals in sorted(groups.items()):
                for x, p in ecdf_points(vals):
                    w.writerow([mode, cell, x, p])

    ecdf_csv("cbr_ecdf.csv", lambda r: r["metrics"]["cbr_series"])
    ecdf_csv("collision_ecdf.csv", lambda r: [r["metrics"]["collision_probability"]])


def load_records(results_dir: str) -> list[dict]:
    runs_dir = os.path.join(results_dir, "runs")
    records = []
    if os.path.isdir(runs_dir):
        for name in sorted(os.listdir(runs_dir)):
            if name.endswith(".json"):
                with open(os.path.join(runs_dir, name)) as fh:
                    records.append(json.load(fh))
    return records


# ------------------------------------------------------------------- CLI

def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="sidelink3d",
                                     description="NR sidelink mode-2 RA simulator")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_run = sub.add_parser("run", help="single run from a config file")
    p_run.add_argument("config")
    p_run.add_argument("--mode", choices=MODES)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--log", default=None, help="also write the JSONL event log here")
    p_run.add_argument("--duration", type=int, default=None)

    p_sweep = sub.add_parser("sweep", help="modes x sweep x seeds experiment")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--seeds", type=int, default=None)
    p_sweep.add_argument("--out", default=None)
    p_sweep.add_argument("--workers", type=int, default=1)

    p_plot = sub.add_parser("plotdata", help="emit plot-ready CSVs from results")
    p_plot.add_argument("results_dir")
    p_plot.add_argument("--out", default=None)
    p_plot.add_argument("--bin-width", type=float, default=2.0)

    args = parser.parse_args(argv)
    try:
        if args.cmd == "run":
            spec = load_config(args.config)
            mode = args.mode or spec.modes[0]
            seed = args.seed if args.seed is not None else spec.seed_base
            duration = args.duration or spec.duration_slots
            result = run(spec.base, mode, seed, duration)
            if args.log:
                result.log.header["config_hash"] = config_hash(spec.base, duration)
                result.log.write(args.log)
            rec = {
                "config_hash": config_hash(spec.base, duration),
                "cell": "default", "mode": mode, "seed": seed,
                "duration_slots": duration,
                "measure_start": result.measure_start,
                "accounting_end": result.accounting_end,
                "metrics": result.metrics.as_dict(),
            }
            text = json.dumps(rec, indent=1, sort_keys=True)
            if args.out:
                os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
                with open(args.out, "w") as fh:
                    fh.write(text)
            print(text)
            return 0
        if args.cmd == "sweep":
            spec = load_config(args.config)
            if args.seeds is not None:
                spec = dataclasses.replace(spec, seeds=args.seeds)
            if args.out is not None:
                spec = dataclasses.replace(spec, out=args.out)
            records, failures = run_experiment(spec, workers=args.workers)
            emit_plotdata(records, spec.out)
            print(f"{len(records)} runs, {failures} failures -> {spec.out}")
            return 1 if failures else 0
        if args.cmd == "plotdata":
            records = load_records(args.results_dir)
            emit_plotdata(records, args.out or args.results_dir,
                          bin_width_db=args.bin_width)
            return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
