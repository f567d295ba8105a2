"""Seeded Monte-Carlo experiments over drops, resolutions and SINR targets.

One :class:`TrialRecord` is produced per (drop, method, bits, target). The
scenario of a drop depends only on the master seed and the drop index, so
every method, resolution and target sees the same channels.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .baseline import achieved_sinr_report, percell_solve
from .downlink import solve_qicomp
from .quantizer import format_bits, parse_bits, quantizer_model
from .scenario import ConfigError, NetworkConfig, generate_channels

log = logging.getLogger(__name__)

RECORD_SCHEMA_VERSION = 1
METHODS = ("QiCoMP", "QPercell")
# statuses counted as a usable (non-diverged) solution
SOLVED = {"optimal", "converged"}

CSV_FIELDS = [
    "schema_version", "drop", "method", "bits", "target_db", "status",
    "total_ul_power_dbm", "total_dl_power_dbm", "iterations",
    "ul_sinr_db", "dl_sinr_db",
]


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: NetworkConfig = field(default_factory=NetworkConfig)
    bits: tuple = (3,)
    targets_db: tuple = (0.0,)
    n_drops: int = 100
    methods: tuple = METHODS
    master_seed: int = 0
    output_dir: str = "results"
    name: str = "experiment"

    def __post_init__(self):
        if self.n_drops < 1:
            raise ConfigError("n_drops must be >= 1")
        if not self.targets_db:
            raise ConfigError("target SINR sweep must be nonempty")
        if not self.bits:
            raise ConfigError("bits list must be nonempty")
        bad = set(self.methods) - set(METHODS)
        if bad or not self.methods:
            raise ConfigError(f"methods must be a nonempty subset of {METHODS}, got {self.methods}")
        object.__setattr__(self, "bits", tuple(parse_bits(b) for b in self.bits))
        object.__setattr__(self, "targets_db", tuple(float(t) for t in self.targets_db))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
        if "scenario" in d:
            d["scenario"] = NetworkConfig.from_dict(d["scenario"] or {})
        for k in ("bits", "targets_db", "methods"):
            if k in d:
                v = d[k]
                d[k] = tuple(v) if isinstance(v, (list, tuple)) else (v,)
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "scenario": self.scenario.to_dict(),
            "bits": [format_bits(b) for b in self.bits],
            "targets_db": list(self.targets_db),
            "n_drops": self.n_drops,
            "methods": list(self.methods),
            "master_seed": self.master_seed,
            "output_dir": self.output_dir,
        }

    def replace(self, **kw) -> "ExperimentSpec":
        return dataclasses.replace(self, **kw)


def load_spec(path) -> ExperimentSpec:
    """Read an experiment spec from a YAML (or JSON) file."""
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return ExperimentSpec.from_dict(data)


PRESETS = {
    "desk": ExperimentSpec(name="desk"),
    "light-cdf": ExperimentSpec(
        scenario=NetworkConfig(n_cells=2, n_users_per_cell=2, n_bs_antennas=64),
        bits=(3,), targets_db=(0.0,), n_drops=200, name="light-cdf"),
    "dense-cdf": ExperimentSpec(
        scenario=NetworkConfig(n_cells=7, n_users_per_cell=4, n_bs_antennas=64),
        bits=(3,), targets_db=(0.0,), n_drops=50, name="dense-cdf"),
    "sweep-nb16": ExperimentSpec(
        scenario=NetworkConfig(n_cells=7, n_users_per_cell=4, n_bs_antennas=16),
        bits=(2, 3, math.inf), targets_db=tuple(range(0, 13, 2)), n_drops=20,
        methods=("QiCoMP",), name="sweep-nb16"),
    "sweep-nb64": ExperimentSpec(
        scenario=NetworkConfig(n_cells=7, n_users_per_cell=4, n_bs_antennas=64),
        bits=(2, 3, math.inf), targets_db=tuple(range(0, 13, 2)), n_drops=20,
        methods=("QiCoMP",), name="sweep-nb64"),
    # full-size dense network (minutes)
    "dense-128": ExperimentSpec(
        scenario=NetworkConfig(n_cells=7, n_users_per_cell=4, n_bs_antennas=128),
        bits=(2, 3, math.inf), targets_db=tuple(range(0, 13, 2)), n_drops=100,
        name="dense-128"),
}


@dataclass(frozen=True)
class TrialRecord:
    drop: int
    method: str
    bits: float
    target_db: float
    status: str
    total_ul_power: float
    total_dl_power: float
    ul_sinr_db: tuple
    dl_sinr_db: tuple
    iterations: int
    wall_time: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status in SOLVED

    @property
    def total_ul_power_dbm(self) -> float:
        return _dbm(self.total_ul_power)

    @property
    def total_dl_power_dbm(self) -> float:
        return _dbm(self.total_dl_power)

    def sinr_db(self, link: str = "dl") -> tuple:
        return self.ul_sinr_db if link == "ul" else self.dl_sinr_db

    def to_row(self) -> dict:
        return {
            "schema_version": RECORD_SCHEMA_VERSION,
            "drop": self.drop,
            "method": self.method,
            "bits": format_bits(self.bits),
            "target_db": _fmt(self.target_db),
            "status": self.status,
            "total_ul_power_dbm": _fmt(self.total_ul_power_dbm),
            "total_dl_power_dbm": _fmt(self.total_dl_power_dbm),
            "iterations": self.iterations,
            "ul_sinr_db": ";".join(_fmt(x) for x in self.ul_sinr_db),
            "dl_sinr_db": ";".join(_fmt(x) for x in self.dl_sinr_db),
        }

    @classmethod
    def from_row(cls, row: dict) -> "TrialRecord":
        if int(row["schema_version"]) != RECORD_SCHEMA_VERSION:
            raise ValueError(f"unsupported record schema {row['schema_version']}")

        def vec(s):
            return tuple(float(x) for x in s.split(";")) if s else ()

        return cls(
            drop=int(row["drop"]), method=row["method"], bits=parse_bits(row["bits"]),
            target_db=float(row["target_db"]), status=row["status"],
            total_ul_power=_from_dbm(float(row["total_ul_power_dbm"])),
            total_dl_power=_from_dbm(float(row["total_dl_power_dbm"])),
            ul_sinr_db=vec(row["ul_sinr_db"]), dl_sinr_db=vec(row["dl_sinr_db"]),
            iterations=int(row["iterations"]),
        )


def _fmt(x) -> str:
    return repr(float(x))


def _dbm(p_mw) -> float:
    if not np.isfinite(p_mw):
        return float("nan")
    return float(10 * np.log10(p_mw)) if p_mw > 0 else float("-inf")


def _from_dbm(x) -> float:
    return float(10 ** (x / 10)) if np.isfinite(x) else (0.0 if x == float("-inf") else float("nan"))


def drop_rng(master_seed: int, drop: int) -> np.random.Generator:
    """Independent stream per drop, keyed by counter rather than scheduling order."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(drop,)))


def trial_list(spec: ExperimentSpec):
    return [(d, m, b, t) for d in range(spec.n_drops) for b in spec.bits
            for t in spec.targets_db for m in spec.methods]


def _run_drop(args):
    spec, drop = args
    scenario = generate_channels(spec.scenario, drop_rng(spec.master_seed, drop))
    out = []
    for bits in spec.bits:
        q = quantizer_model(bits)
        for target_db in spec.targets_db:
            gamma = 10 ** (target_db / 10)
            for method in spec.methods:
                t0 = time.perf_counter()
                try:
                    if method == "QiCoMP":
                        sol = solve_qicomp(scenario, gamma, q)
                        status = sol.status
                    else:
                        sol = percell_solve(scenario, gamma, q)
                        status = sol.status.value
                    rep = achieved_sinr_report(sol, scenario, q)
                    rec = TrialRecord(drop, method, bits, target_db, status,
                                      rep.total_ul_power, rep.total_dl_power,
                                      tuple(rep.ul_sinr_db.ravel()), tuple(rep.dl_sinr_db.ravel()),
                                      sol.iterations, time.perf_counter() - t0)
                except (np.linalg.LinAlgError, FloatingPointError, ValueError) as e:
                    log.warning("drop %d %s b=%s g=%s failed: %s", drop, method,
                                format_bits(bits), target_db, e)
                    rec = TrialRecord(drop, method, bits, target_db, "error", float("nan"),
                                      float("nan"), (), (), 0, time.perf_counter() - t0)
                out.append(rec)
    return out


def _order_key(rec: TrialRecord, spec: ExperimentSpec):
    return (rec.drop, spec.bits.index(rec.bits), spec.targets_db.index(rec.target_db),
            spec.methods.index(rec.method))


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> list[TrialRecord]:
    """Run every trial of ``spec``; output order is independent of ``workers``."""
    jobs = [(spec, d) for d in range(spec.n_drops)]
    records = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for recs in pool.map(_run_drop, jobs):
                records.extend(recs)
    else:
        for job in jobs:
            records.extend(_run_drop(job))
    records.sort(key=lambda r: _order_key(r, spec))
    expected = len(trial_list(spec))
    if len(records) != expected:
        raise RuntimeError(f"record count {len(records)} != expected {expected}")
    return records


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in records:
        w.writerow(r.to_row())
    return buf.getvalue()


def write_records(records, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(records_to_csv(records))


def read_records(path) -> list[TrialRecord]:
    with open(path, encoding="utf-8", newline="") as f:
        return [TrialRecord.from_row(row) for row in csv.DictReader(f)]


def write_metadata(spec: ExperimentSpec, records, path, elapsed: float) -> None:
    statuses = {}
    for r in records:
        statuses[r.status] = statuses.get(r.status, 0) + 1
    meta = {
        "schema_version": RECORD_SCHEMA_VERSION,
        "spec": spec.to_dict(),
        "noise_power_dbm": spec.scenario.noise_power_dbm,
        "n_records": len(records),
        "status_counts": statuses,
        "elapsed_s": elapsed,
        "trial_wall_time_s": [r.wall_time for r in records],
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(meta, indent=2))


class EmptySelection(ValueError):
    pass


def compute_cdf(records, field: str = "dl_sinr_db", *, converged_only: bool = False):
    """Empirical CDF of per-user values pooled across records.

    ``field`` is ``"ul_sinr_db"``, ``"dl_sinr_db"`` or a scalar record
    attribute such as ``"total_dl_power_dbm"``. Returns ``(values, fractions)``
    with values sorted ascending and fractions ending at 1.
    """
    vals = []
    for r in records:
        if converged_only and not r.converged:
            continue
        v = getattr(r, field)
        vals.extend(v if isinstance(v, tuple) else (v,))
    x = np.array([v for v in vals if not np.isnan(v)], dtype=float)
    if x.size == 0:
        raise EmptySelection(f"no values for field {field!r}")
    x.sort()
    frac = np.arange(1, x.size + 1) / x.size
    # collapse ties so each value maps to its cumulative fraction
    last = np.r_[x[1:] != x[:-1], True]
    return x[last], frac[last]


def cdf_at(values, fractions, x) -> float:
    i = np.searchsorted(values, x, side="right")
    return 0.0 if i == 0 else float(fractions[i - 1])


@dataclass(frozen=True)
class CurvePoint:
    target_db: float
    mean_power_dbm: float
    n_converged: int
    n_total: int

    @property
    def diverged(self) -> bool:
        return self.n_converged < self.n_total


def power_vs_target_curve(records, link: str = "dl") -> dict:
    """Mean total power (dBm, averaged in mW) over converged drops per target.

    Returns ``{(bits, method): [CurvePoint, ...]}`` sorted by target; points
    with any diverged drop are flagged via ``CurvePoint.diverged``.
    """
    groups = {}
    for r in records:
        groups.setdefault((r.bits, r.method), {}).setdefault(r.target_db, []).append(r)
    out = {}
    for key, by_target in groups.items():
        pts = []
        for t in sorted(by_target):
            rs = by_target[t]
            ok = [r for r in rs if r.converged]
            p = [r.total_dl_power if link == "dl" else r.total_ul_power for r in ok]
            mean = _dbm(np.mean(p)) if p else float("nan")
            pts.append(CurvePoint(t, mean, len(ok), len(rs)))
        out[key] = pts
    return out


def divergence_onset(points) -> float | None:
    """Smallest target with any non-converged drop, or None."""
    for p in points:
        if p.diverged:
            return p.target_db
    return None
