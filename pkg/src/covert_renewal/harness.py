"""Monte Carlo sweeps over scenario parameters.

Each (grid point, trial) pair produces one flat record.  Its seed is
``base_seed XOR fnv1a64(canonical JSON of the point and trial)``, so any
single record can be reproduced on its own and records never depend on
execution order.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .detectors import DetectorConfig, kl_error_lower_bound, likelihood_ratio_test, sum_threshold_decide
from .errors import CovertRenewalError, DomainError
from .insertion import plan, run_buffer_only, run_scenario1
from .renewal import RenewalSpec, fisher_constant, kl_divergence, kl_small_rho, sample_sum, scale_stretch
from .timing import run_scenario2

__all__ = [
    "SCENARIOS",
    "GRID_PARAMS",
    "ExperimentConfig",
    "fnv1a64",
    "canonical_point",
    "trial_seed",
    "grid_points",
    "run_trial",
    "run_sweep",
    "write_records",
    "read_records",
    "fit_scaling",
    "summarize",
]

GRID_PARAMS = ("N", "epsilon", "zeta", "mu", "rho_exponent", "n", "M", "alpha")

# scenario -> (accepted grid parameters, defaults for those left out)
SCENARIOS: dict[str, tuple[tuple[str, ...], dict[str, Any]]] = {
    "buffer_only": (("N", "epsilon"), {"epsilon": 0.1}),
    "insertion": (("N", "epsilon", "zeta"), {"epsilon": 0.1, "zeta": 0.1}),
    "timing": (("N", "epsilon", "zeta", "mu", "n", "M"), {"epsilon": 0.2, "zeta": 0.1, "mu": 2.0}),
    "detect_sweep": (("N", "rho_exponent", "alpha"), {"alpha": 0.05}),
    "kl_sweep": (("n", "rho_exponent"), {}),
}

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def canonical_point(point: dict[str, Any]) -> str:
    """Stable text form of a grid point: sorted keys, no whitespace."""
    return json.dumps({k: _jsonable(v) for k, v in point.items()}, sort_keys=True, separators=(",", ":"))


def trial_seed(base_seed: int, point: dict[str, Any], trial: int) -> int:
    text = json.dumps({"point": json.loads(canonical_point(point)), "trial": int(trial)},
                      sort_keys=True, separators=(",", ":"))
    return (int(base_seed) & _MASK64) ^ fnv1a64(text.encode("utf-8"))


@dataclass
class ExperimentConfig:
    """A sweep: one scenario over the Cartesian product of ``grid`` values."""

    scenario: str
    spec: RenewalSpec
    grid: dict[str, list]
    trials: int = 1
    base_seed: int = 0
    output_path: str | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise DomainError(f"unknown scenario {self.scenario!r}; expected one of {tuple(SCENARIOS)}")
        if isinstance(self.spec, dict):
            self.spec = RenewalSpec.from_dict(self.spec)
        if int(self.trials) < 1:
            raise DomainError("trials must be >= 1")
        allowed, _ = SCENARIOS[self.scenario]
        grid = {}
        for k, v in dict(self.grid).items():
            if k not in allowed:
                raise DomainError(f"grid parameter {k!r} is not used by scenario {self.scenario!r}; "
                                  f"allowed: {allowed}")
            vals = list(v) if isinstance(v, (list, tuple)) else [v]
            if not vals:
                raise DomainError(f"grid parameter {k!r} has no values")
            grid[k] = vals
        self.grid = grid

    def to_dict(self) -> dict[str, Any]:
        return {"scenario": self.scenario, "spec": self.spec.to_dict(), "grid": self.grid,
                "trials": self.trials, "base_seed": self.base_seed, "output_path": self.output_path}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentConfig":
        unknown = set(d) - {"scenario", "spec", "grid", "trials", "base_seed", "output_path"}
        if unknown:
            raise DomainError(f"unknown config fields {sorted(unknown)}")
        return cls(d["scenario"], RenewalSpec.from_dict(d["spec"]), d.get("grid", {}),
                   int(d.get("trials", 1)), int(d.get("base_seed", 0)), d.get("output_path"))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def grid_points(config: ExperimentConfig) -> list[dict[str, Any]]:
    """Cartesian product of the grid in declaration order, defaults filled in."""
    allowed, defaults = SCENARIOS[config.scenario]
    names = list(config.grid)
    points = []
    for combo in itertools.product(*(config.grid[k] for k in names)):
        p = {k: v for k, v in defaults.items() if k not in config.grid}
        p.update(zip(names, combo))
        missing = [k for k in allowed if k not in p]
        if missing:
            raise DomainError(f"scenario {config.scenario!r} needs grid values for {missing}")
        points.append(p)
    return points


# ---------------------------------------------------------------------------
# Trials

@lru_cache(maxsize=256)
def _plan(spec, N, epsilon, zeta):
    return plan(N, epsilon, zeta, spec)


@lru_cache(maxsize=64)
def _fisher(spec):
    return fisher_constant(spec)


def _trial_buffer_only(spec, p, seed):
    c = _fisher(spec)
    m = run_buffer_only(spec, int(p["N"]), p["epsilon"], seed, c=c)
    thr = p["epsilon"] * math.sqrt(p["N"] / (4.0 * c))
    return {"m": m, "threshold": thr, "reached": m >= thr}


def _trial_insertion(spec, p, seed):
    pl = _plan(spec, int(p["N"]), p["epsilon"], p["zeta"])
    return run_scenario1(spec, pl.N, pl.epsilon, pl.zeta, seed, insertion_plan=pl).to_record()


def _trial_timing(spec, p, seed):
    pl = _plan(spec, int(p["N"]), p["epsilon"], p["zeta"])
    r = run_scenario2(spec, pl.N, pl.epsilon, pl.zeta, p["mu"], int(p["n"]), int(p["M"]), seed, timing_plan=pl)
    return r.to_record()


def _trial_detect(spec, p, seed):
    # stretch-side converse: Willie sums the N - m - 1 gaps left after buffering
    N = int(p["N"])
    rho = N ** p["rho_exponent"]
    n_obs = N - int(round(rho * N)) - 1
    cfg = DetectorConfig.for_spec(spec, n_obs, p["alpha"])
    ss = np.random.SeedSequence(seed).spawn(2)
    s0 = sample_sum(spec, n_obs, 1, np.random.default_rng(ss[0]))[0]
    s1 = sample_sum(scale_stretch(spec, rho), n_obs, 1, np.random.default_rng(ss[1]))[0]
    return {"rho": rho, "n_obs": n_obs, "false_alarm": bool(sum_threshold_decide(s0, cfg)),
            "missed": not bool(sum_threshold_decide(s1, cfg))}


def _trial_kl(spec, p, seed):
    n = int(p["n"])
    rho = n ** p["rho_exponent"]
    s1 = scale_stretch(spec, rho)
    ss = np.random.SeedSequence(seed).spawn(2)
    x0 = spec.sample(n, np.random.default_rng(ss[0]))
    x1 = s1.sample(n, np.random.default_rng(ss[1]))
    return {"rho": rho, "kl": kl_divergence(spec, s1), "kl_small_rho": kl_small_rho(spec, rho),
            "bound": kl_error_lower_bound(spec, s1, n),
            "false_alarm": likelihood_ratio_test(x0, spec, s1).decision.value == "H1",
            "missed": likelihood_ratio_test(x1, spec, s1).decision.value == "H0"}


_TRIALS = {
    "buffer_only": _trial_buffer_only,
    "insertion": _trial_insertion,
    "timing": _trial_timing,
    "detect_sweep": _trial_detect,
    "kl_sweep": _trial_kl,
}


def run_trial(scenario: str, spec: RenewalSpec, point: dict[str, Any], trial: int, seed: int) -> dict[str, Any]:
    """Run one trial; parameter errors become an ``error`` field."""
    rec: dict[str, Any] = {"scenario": scenario, **point, "trial": int(trial), "seed": int(seed)}
    try:
        out = _TRIALS[scenario](spec, point, seed)
    except CovertRenewalError as exc:
        rec["error"] = f"{type(exc).__name__}: {exc}"
        return rec
    for k, v in out.items():
        rec.setdefault(k, _jsonable(v))
    return rec


def _run_point(args):
    scenario, spec_dict, point, trials, base_seed = args
    spec = RenewalSpec.from_dict(spec_dict)
    return [run_trial(scenario, spec, point, t, trial_seed(base_seed, point, t)) for t in range(trials)]


def _workers() -> int:
    n = os.cpu_count() or 1
    cap = os.environ.get("COVERT_RENEWAL_THREADS")
    if cap:
        n = min(n, max(1, int(cap)))
    return n


def _sort_key(rec):
    point = {k: rec[k] for k in GRID_PARAMS if k in rec}
    return canonical_point(point), rec["trial"]


def run_sweep(config: ExperimentConfig, workers: int | None = None) -> list[dict[str, Any]]:
    """Run every (grid point, trial) and return records in canonical order.

    With ``output_path`` set, each finished grid point is appended to the
    JSON-lines file immediately; a rerun skips grid points already complete
    there.  The file is rewritten in canonical order at the end (CSV when the
    path ends in ``.csv``, with the JSON-lines log kept alongside).
    """
    points = grid_points(config)
    log_path = None
    done: dict[str, list] = {}
    if config.output_path:
        out = Path(config.output_path)
        log_path = out if out.suffix != ".csv" else out.with_suffix(".jsonl")
        if log_path.exists():
            for rec in read_records(log_path):
                if rec.get("scenario") == config.scenario:
                    done.setdefault(_sort_key(rec)[0], []).append(rec)
    records: list[dict[str, Any]] = []
    todo = []
    for p in points:
        have = done.get(canonical_point(p), [])
        if len({r["trial"] for r in have}) >= config.trials:
            records.extend(r for r in have if r["trial"] < config.trials)
        else:
            todo.append((config.scenario, config.spec.to_dict(), p, config.trials, config.base_seed))

    n_workers = workers or _workers()

    def sink(batch):
        records.extend(batch)
        if log_path is not None:
            with log_path.open("a") as fh:
                for r in batch:
                    fh.write(json.dumps(r, sort_keys=True) + "\n")

    if n_workers <= 1 or len(todo) <= 1:
        for args in todo:
            sink(_run_point(args))
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            for batch in pool.map(_run_point, todo):
                sink(batch)

    # keep one record per (point, trial); a resumed partial point may repeat trials
    uniq = {}
    for r in records:
        uniq[_sort_key(r)] = r
    records = [uniq[k] for k in sorted(uniq)]
    if config.output_path:
        write_records(records, log_path)
        if Path(config.output_path) != log_path:
            write_records(records, config.output_path)
    return records


# ---------------------------------------------------------------------------
# Persistence

def write_records(records: Iterable[dict[str, Any]], path) -> None:
    """Write JSON lines, or CSV (header = union of keys, JSON-encoded cells) for ``.csv``."""
    path = Path(path)
    records = list(records)
    if path.suffix == ".csv":
        keys = sorted({k for r in records for k in r})
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(keys)
            for r in records:
                w.writerow([json.dumps(r[k]) if k in r else "" for k in keys])
    else:
        with path.open("w") as fh:
            for r in records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_records(path) -> list[dict[str, Any]]:
    path = Path(path)
    if path.suffix == ".csv":
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            return []
        keys = rows[0]
        return [{k: json.loads(v) for k, v in zip(keys, row) if v != ""} for row in rows[1:]]
    with path.open() as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# Analysis

def _numeric(v) -> float:
    return float(v) if not isinstance(v, bool) else float(int(v))


def fit_scaling(records: Iterable[dict[str, Any]], x: str, y: str) -> dict[str, float]:
    """Least-squares line through ``(log x, log mean y)``.

    Groups with a nonpositive mean are dropped with a warning.

    Returns
    -------
    dict
        ``slope``, ``intercept`` (natural log) and ``r2``.
    """
    groups: dict[float, list[float]] = {}
    for r in records:
        if "error" in r or x not in r or y not in r:
            continue
        groups.setdefault(_numeric(r[x]), []).append(_numeric(r[y]))
    xs, ys = [], []
    for xv in sorted(groups):
        m = float(np.mean(groups[xv]))
        if m <= 0 or xv <= 0:
            warnings.warn(f"excluding {x}={xv}: nonpositive mean {y}={m}", RuntimeWarning, stacklevel=2)
            continue
        xs.append(math.log(xv))
        ys.append(math.log(m))
    if len(xs) < 3:
        raise DomainError(f"need >= 3 distinct positive {x} values with positive mean {y}, got {len(xs)}")
    lx, ly = np.array(xs), np.array(ys)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return {"slope": float(slope), "intercept": float(intercept), "r2": r2}


def summarize(records: Iterable[dict[str, Any]], group_by, value: str) -> list[dict[str, Any]]:
    """Mean, sample standard deviation, normal 95% half-width and count of ``value`` per group."""
    if isinstance(group_by, str):
        group_by = [group_by]
    groups: dict[tuple, list[float]] = {}
    for r in records:
        if "error" in r or value not in r:
            continue
        key = tuple(_jsonable(r.get(g)) for g in group_by)
        groups.setdefault(key, []).append(_numeric(r[value]))
    if not groups:
        raise DomainError(f"no records carry {value!r}")
    rows = []
    for key in sorted(groups, key=lambda k: json.dumps(k)):
        v = np.asarray(groups[key])
        sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
        rows.append({**dict(zip(group_by, key)), "mean": float(v.mean()), "stddev": sd,
                     "ci95": 1.96 * sd / math.sqrt(v.size), "count": int(v.size)})
    return rows
