"""Configuration-driven certification experiments.

A JSON config fixes the model, scenario law, certification triple, design
grid and targets.  Any sweepable key may hold a list; the cartesian product
of those lists defines the experiment rows.  Each row produces one line of
``results.csv`` plus a detail JSON and a failure dump.

Scenario statistics can be cached in a directory, one file per statistics
hash.  The hash covers only what influences the statistics, so a cached
scenario set is reused across certification settings (eta, delta, m, grid).
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import itertools
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .certify import CertParams, build_design_grid, certify, failure_report, format_jsonl, sample_count
from .deadzone import BRACKETS, NORMS, ScenarioStats, batch_stats
from .errors import CacheMismatch, ConfigError, InvalidParams
from .model import get_model
from .sampling import CANDIDATE_MODES, NOISE_MODES, P_MODES, U_MODES, SamplingConfig, draw_scenario_attempt, draw_scenarios

CACHE_VERSION = 1
CHUNK_SIZE = 64
OUT_ENV = "OBSCERT_OUT"

DEFAULTS = {
    "model": "cstr",
    "tau": 0.05,
    "substeps": 10,
    "N": 20,
    "p_mode": "gaussian",
    "rho": 0.05,
    "std_p": 0.2,
    "u_mode": "fourier",
    "n_f": 10,
    "beta_bar": 0.2,
    "u_offset": None,
    "noise_mode": "uniform",
    "noise": 0.001,
    "state_box": None,
    "input_box": None,
    "candidate_mode": "independent",
    "eta": 0.01,
    "delta": 0.001,
    "m": 10,
    "grid": {"eps_low": -4.0, "eps_high": 0.0, "n_eps": 20,
             "zeta_low": -4.0, "zeta_high": -1.0, "n_zeta": 10},
    "deadzone": {"scale": None, "r": 1, "bracket": "real"},
    "norm": "euclidean",
    "targets": None,
    "seed": 0,
    "threads": 0,
    "out": None,
    "mhe": {},
}

MHE_DEFAULTS = {
    "steps": 40,
    "x0": None,
    "true_p": None,
    "zeta": 0.0,
    "noise": 0.0,
    "multistart": 8,
    "max_evals": 2000,
    "seed_truth": True,
    "target": None,
    "p_box_rel": 0.2,
    "eps_star": None,
    "seed": 0,
}

# Sweep order fixes row order: the last key varies fastest.
SWEEPABLE = ("N", "noise", "noise_mode", "p_mode", "rho", "std_p", "u_mode", "n_f",
             "beta_bar", "tau", "substeps", "eta", "delta", "m")

# Keys that change the scenario statistics (and hence the cache hash).
STATS_KEYS = ("model", "tau", "substeps", "N", "p_mode", "rho", "std_p", "u_mode", "n_f",
              "beta_bar", "u_offset", "noise_mode", "noise", "state_box", "input_box",
              "candidate_mode", "seed", "norm", "targets")

CSV_TAIL = ["N", "noise", "rho", "std_p", "p_mode", "u_mode", "eta", "delta", "m", "dt1", "dt2"]


def _check_type(path, value, kinds, allow_none=False):
    if value is None and allow_none:
        return
    if isinstance(value, bool) and bool not in kinds:
        raise ConfigError(path, f"expected {'/'.join(k.__name__ for k in kinds)}, got bool")
    if not isinstance(value, kinds):
        raise ConfigError(path, f"expected {'/'.join(k.__name__ for k in kinds)}, got {type(value).__name__}")


_NUM = (int, float)
_TYPES = {
    "model": ((str,), False), "tau": (_NUM, False), "substeps": ((int,), False),
    "N": ((int,), False), "p_mode": ((str,), False), "rho": (_NUM, False),
    "std_p": (_NUM, False), "u_mode": ((str,), False), "n_f": ((int,), False),
    "beta_bar": (_NUM, False), "u_offset": (_NUM, True), "noise_mode": ((str,), False),
    "noise": (_NUM, False), "state_box": ((list,), True), "input_box": ((list,), True),
    "candidate_mode": ((str,), False), "eta": (_NUM, False), "delta": (_NUM, False),
    "m": ((int,), False), "norm": ((str,), False), "targets": ((list,), True),
    "seed": ((int,), False), "threads": ((int,), False), "out": ((str,), True),
}


def _merge_section(path, given, defaults):
    if not isinstance(given, dict):
        raise ConfigError(path, "expected an object")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}", "unknown key")
    merged = dict(defaults)
    merged.update(given)
    return merged


@dataclass
class ExperimentConfig:
    """Validated configuration; ``sweep`` maps swept keys to their value lists."""

    base: dict
    sweep: dict

    def rows(self):
        keys = [k for k in SWEEPABLE if k in self.sweep]
        out = []
        for combo in itertools.product(*(self.sweep[k] for k in keys)):
            row = copy.deepcopy(self.base)
            row.update(dict(zip(keys, combo)))
            out.append(ExperimentRow(row))
        return out


class ExperimentRow:
    """A single fully resolved experiment setting."""

    def __init__(self, values: dict):
        self.values = values
        v = values
        self.model = get_model(v["model"]).with_timing(v["tau"], v["substeps"])
        self.sampling = SamplingConfig(
            N=v["N"], p_mode=v["p_mode"], rho=float(v["rho"]), std_p=float(v["std_p"]),
            u_mode=v["u_mode"], n_f=v["n_f"], beta_bar=float(v["beta_bar"]),
            u_offset=None if v["u_offset"] is None else float(v["u_offset"]),
            noise_mode=v["noise_mode"], noise=float(v["noise"]), master_seed=v["seed"],
            state_box=None if v["state_box"] is None else tuple(map(tuple, v["state_box"])),
            input_box=None if v["input_box"] is None else tuple(map(tuple, v["input_box"])),
            candidate_mode=v["candidate_mode"],
        )
        self.params = CertParams(float(v["eta"]), float(v["delta"]), int(v["m"]))
        g = v["grid"]
        self.grid = build_design_grid(g["eps_low"], g["eps_high"], g["n_eps"],
                                      g["zeta_low"], g["zeta_high"], g["n_zeta"])
        dz = v["deadzone"]
        self.scale = np.ones(self.model.n_y) if dz["scale"] is None else np.asarray(dz["scale"], float)
        self.r = dz["r"]
        self.bracket = dz["bracket"]
        self.norm = v["norm"]
        self.targets = list(v["targets"]) if v["targets"] is not None else default_targets(self.model)

    @property
    def n_required(self) -> int:
        return sample_count(self.params, self.grid.size)

    def stats_hash(self) -> str:
        v = dict(self.values)
        v["targets"] = self.targets
        v["bracket"] = self.bracket
        payload = {k: v[k] for k in STATS_KEYS}
        payload["bracket"] = self.bracket
        payload["cache_version"] = CACHE_VERSION
        blob = json.dumps(payload, sort_keys=True, default=float)
        return hashlib.sha256(blob.encode()).hexdigest()


def default_targets(model):
    if model.name == "cstr":
        return ["z1", "z2", "z3"]
    return model.target_names


def _validate_row(path, values):
    try:
        row = ExperimentRow(values)
    except ConfigError:
        raise
    except KeyError as exc:
        raise ConfigError(f"{path}.model", str(exc)) from None
    except (ValueError, InvalidParams, TypeError) as exc:
        raise ConfigError(path, str(exc)) from None
    if row.scale.shape != (row.model.n_y,):
        raise ConfigError(f"{path}.deadzone.scale", f"expected {row.model.n_y} entries")
    for t in row.targets:
        if t not in row.model.targets:
            raise ConfigError(f"{path}.targets", f"unknown target {t!r}")
    return row


def parse_config_dict(data: dict, path: str = "config") -> ExperimentConfig:
    """Validate ``data`` against the schema and fill defaults."""
    if not isinstance(data, dict):
        raise ConfigError(path, "top level must be an object")
    unknown = sorted(set(data) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}", "unknown key")
    base = copy.deepcopy(DEFAULTS)
    sweep = {}
    for key, value in data.items():
        if key in ("grid", "deadzone"):
            base[key] = _merge_section(f"{path}.{key}", value, DEFAULTS[key])
            continue
        if key == "mhe":
            base[key] = _merge_section(f"{path}.mhe", value, MHE_DEFAULTS)
            continue
        kinds, allow_none = _TYPES[key]
        if isinstance(value, list) and key in SWEEPABLE:
            if not value:
                raise ConfigError(f"{path}.{key}", "sweep list is empty")
            for i, item in enumerate(value):
                _check_type(f"{path}.{key}[{i}]", item, kinds, allow_none)
            sweep[key] = list(value)
            base[key] = value[0]
        else:
            _check_type(f"{path}.{key}", value, kinds, allow_none)
            base[key] = value
    base["mhe"] = _merge_section(f"{path}.mhe", base.get("mhe") or {}, MHE_DEFAULTS)
    g = base["grid"]
    for k in ("n_eps", "n_zeta"):
        _check_type(f"{path}.grid.{k}", g[k], (int,))
        if g[k] < 1:
            raise ConfigError(f"{path}.grid.{k}", "must be >= 1")
    for lo, hi in (("eps_low", "eps_high"), ("zeta_low", "zeta_high")):
        _check_type(f"{path}.grid.{lo}", g[lo], _NUM)
        _check_type(f"{path}.grid.{hi}", g[hi], _NUM)
        if g[lo] > g[hi]:
            raise ConfigError(f"{path}.grid.{lo}", "exceeds the high exponent")
    dz = base["deadzone"]
    _check_type(f"{path}.deadzone.r", dz["r"], (int,))
    if dz["bracket"] not in BRACKETS:
        raise ConfigError(f"{path}.deadzone.bracket", f"must be one of {BRACKETS}")
    if base["norm"] not in NORMS:
        raise ConfigError(f"{path}.norm", f"must be one of {NORMS}")
    enums = {"p_mode": P_MODES, "u_mode": U_MODES, "noise_mode": NOISE_MODES,
             "candidate_mode": CANDIDATE_MODES}
    for key, allowed in enums.items():
        for item in sweep.get(key, [base[key]]):
            if item not in allowed:
                raise ConfigError(f"{path}.{key}", f"{item!r} not in {allowed}")
    sweep_values = {k: sweep.get(k, [base[k]]) for k in SWEEPABLE}
    # every value of every sweep list must produce a valid row on its own
    for key in SWEEPABLE:
        for item in sweep_values[key]:
            values = copy.deepcopy(base)
            values[key] = item
            _validate_row(f"{path}.{key}" if key in sweep else path, values)
    return ExperimentConfig(base, sweep)


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(str(path), "file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON: {exc}") from None
    return parse_config_dict(data, path="config")


# --- statistics cache ------------------------------------------------------


class StatsCache:
    """Header plus one record ``(id, attempt, a[.], b[.], dz[.])`` per scenario.

    Stored as CSV; floats use ``repr`` so values round-trip exactly.
    """

    MAGIC = "# obscert-stats"

    def __init__(self, header: dict, stats: ScenarioStats):
        self.header = header
        self.stats = stats

    @staticmethod
    def make_header(row: ExperimentRow, n: int) -> dict:
        return {
            "format_version": CACHE_VERSION, "model": row.model.name,
            "config_hash": row.stats_hash(), "N": row.sampling.N, "n_y": row.model.n_y,
            "n_targets": len(row.targets), "n_scenarios": n,
        }

    def write(self, path):
        h = self.header
        s = self.stats
        buf = io.StringIO()
        buf.write(f"{self.MAGIC} {json.dumps(h, sort_keys=True)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "attempt"] + [f"a{i}" for i in range(h["n_y"])]
                   + [f"b{i}" for i in range(h["n_y"])] + [f"dz{i}" for i in range(h["n_targets"])])
        for k in range(len(s)):
            w.writerow([int(s.ids[k]), int(s.attempts[k])] + [repr(float(x)) for x in s.a[k]]
                       + [repr(float(x)) for x in s.b[k]] + [repr(float(x)) for x in s.dz[k]])
        tmp = Path(str(path) + ".tmp")
        tmp.write_text(buf.getvalue())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path, expected_hash: str | None = None) -> "StatsCache":
        lines = Path(path).read_text().splitlines()
        if not lines or not lines[0].startswith(cls.MAGIC + " "):
            raise CacheMismatch(f"{path}: not a statistics cache")
        header = json.loads(lines[0][len(cls.MAGIC) + 1:])
        if header.get("format_version") != CACHE_VERSION:
            raise CacheMismatch(f"{path}: unsupported cache version {header.get('format_version')}")
        if expected_hash is not None and header.get("config_hash") != expected_hash:
            raise CacheMismatch(f"{path}: configuration hash mismatch")
        ny, nt = header["n_y"], header["n_targets"]
        rows = list(csv.reader(lines[2:]))
        if len(rows) != header["n_scenarios"]:
            raise CacheMismatch(f"{path}: record count does not match header")
        arr = np.array([[float(x) for x in r] for r in rows]).reshape(len(rows), 2 + 2 * ny + nt)
        stats = ScenarioStats(
            arr[:, 2:2 + ny], arr[:, 2 + ny:2 + 2 * ny], arr[:, 2 + 2 * ny:],
            arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64),
        )
        return cls(header, stats)


def cache_path(cache_dir, row: ExperimentRow) -> Path:
    return Path(cache_dir) / f"stats_{row.stats_hash()[:20]}.csv"


# --- running ---------------------------------------------------------------


def _chunk_stats(row: ExperimentRow, ids):
    scenarios, sims = draw_scenarios(ids, row.sampling, row.model)
    return batch_stats(scenarios, sims, row.model, row.targets, row.bracket, row.norm)


def generate_stats(row: ExperimentRow, ids, threads: int = 1) -> ScenarioStats:
    """Stats for scenario ``ids`` computed in fixed-size chunks.

    Chunk boundaries depend only on the ids, never on ``threads``.
    """
    ids = list(ids)
    chunks = [ids[i:i + CHUNK_SIZE] for i in range(0, len(ids), CHUNK_SIZE)]
    if not chunks:
        return ScenarioStats(np.empty((0, row.model.n_y)), np.empty((0, row.model.n_y)),
                             np.empty((0, len(row.targets))), np.empty(0, np.int64), np.empty(0, np.int64))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda c: _chunk_stats(row, c), chunks))
    else:
        parts = [_chunk_stats(row, c) for c in chunks]
    return ScenarioStats(
        np.concatenate([p.a for p in parts]), np.concatenate([p.b for p in parts]),
        np.concatenate([p.dz for p in parts]), np.concatenate([p.ids for p in parts]),
        np.concatenate([p.attempts for p in parts]),
    )


def _concat(s1: ScenarioStats, s2: ScenarioStats) -> ScenarioStats:
    return ScenarioStats(*(np.concatenate([getattr(s1, f), getattr(s2, f)])
                           for f in ("a", "b", "dz", "ids", "attempts")))


def resolve_threads(threads: int) -> int:
    return (os.cpu_count() or 1) if threads <= 0 else threads


@dataclass
class ExperimentResult:
    csv_row: dict
    detail: dict
    failures: list
    success: bool


def obtain_stats(row: ExperimentRow, cache_dir=None, threads: int = 1):
    """Return ``(stats, cache_info)`` with at least ``n_required`` records."""
    n_req = row.n_required
    info = {"path": None, "hit": False, "generated": n_req}
    if cache_dir is None:
        return generate_stats(row, range(n_req), threads), info
    path = cache_path(cache_dir, row)
    info["path"] = str(path)
    stats = None
    if path.exists():
        stats = StatsCache.load(path, row.stats_hash()).stats
    if stats is not None and len(stats) >= n_req:
        info.update(hit=True, generated=0)
        return stats.subset(n_req), info
    have = 0 if stats is None else len(stats)
    extra = generate_stats(row, range(have, n_req), threads)
    stats = extra if stats is None else _concat(stats, extra)
    info["generated"] = n_req - have
    Path(cache_dir).mkdir(parents=True, exist_ok=True)
    StatsCache(StatsCache.make_header(row, len(stats)), stats).write(path)
    return stats, info


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def csv_columns(n_targets: int = 3):
    cols = []
    for k in range(1, n_targets + 1):
        cols += [f"eps{k}", f"zeta{k}"]
    return cols + CSV_TAIL


def run_experiment(row: ExperimentRow, cache_dir=None, threads: int = 1) -> ExperimentResult:
    """Certify every target of ``row``; dt1 covers scenarios and stats, dt2 the grid search."""
    t0 = time.perf_counter()
    stats, cache_info = obtain_stats(row, cache_dir, threads)
    dt1 = time.perf_counter() - t0
    t1 = time.perf_counter()
    outcomes = [certify(stats, row.grid, row.params, k, row.scale, name)
                for k, name in enumerate(row.targets)]
    dt2 = time.perf_counter() - t1

    csv_row = {}
    for k, out in enumerate(outcomes, start=1):
        csv_row[f"eps{k}"] = out.eps if out.success else math.inf
        csv_row[f"zeta{k}"] = out.zeta if out.success else math.nan
    v = row.values
    csv_row.update({
        "N": v["N"], "noise": float(v["noise"]), "rho": float(v["rho"]), "std_p": float(v["std_p"]),
        "p_mode": v["p_mode"], "u_mode": v["u_mode"], "eta": float(v["eta"]),
        "delta": float(v["delta"]), "m": int(v["m"]), "dt1": dt1, "dt2": dt2,
    })

    failing = sorted({i for o in outcomes for i in o.failure_ids})
    attempts = dict(zip(stats.ids.tolist(), stats.attempts.tolist()))
    scenarios = {i: draw_scenario_attempt(i, row.sampling, row.model, attempts[i]) for i in failing}
    failures = []
    for out in outcomes:
        failures += failure_report(out, scenarios, stats)

    detail = {
        "version": __version__,
        "config": {k: val for k, val in v.items() if k != "mhe"},
        "targets": row.targets,
        "n_theta": row.grid.size,
        "n_scenarios": len(stats),
        "n_required": row.n_required,
        "guard_redraws": int(stats.attempts.sum()),
        "dt1": dt1,
        "dt2": dt2,
        "cache": cache_info,
        "outcomes": [o.to_dict() for o in outcomes],
    }
    return ExperimentResult(csv_row, detail, failures, all(o.success for o in outcomes))


def emit_outputs(results, out_dir, n_targets: int | None = None, start_index: int = 0):
    """Append rows to ``results.csv`` and write per-row detail/failure files."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if n_targets is None:
            n_targets = (sum(1 for k in results[0].csv_row if k.startswith("eps"))
                         if results else 3)
        cols = csv_columns(n_targets)
        csv_path = out / "results.csv"
        new = not csv_path.exists() or csv_path.stat().st_size == 0
        if not new:
            with open(csv_path, newline="") as fh:
                existing = next(csv.reader(fh), None)
            if existing != cols:
                raise ValueError(f"{csv_path}: existing header does not match {cols}")
        with open(csv_path, "a", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if new:
                w.writerow(cols)
            for r in results:
                w.writerow([_fmt(r.csv_row[c]) for c in cols])
        for k, r in enumerate(results, start=start_index):
            (out / f"detail_{k:03d}.json").write_text(json.dumps(r.detail, indent=2, default=_json_default))
            (out / f"failures_{k:03d}.jsonl").write_text(format_jsonl(r.failures))
    except OSError as exc:
        raise OSError(f"cannot write outputs to {exc.filename or out}: {exc.strerror}") from exc
    return out / "results.csv"


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x).__name__)


def read_results(path):
    """Parse ``results.csv`` back into dicts of typed values."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            parsed = {}
            for k, val in rec.items():
                if k in ("p_mode", "u_mode"):
                    parsed[k] = val
                elif k in ("N", "m"):
                    parsed[k] = int(val)
                else:
                    parsed[k] = float(val)
            rows.append(parsed)
    return rows
