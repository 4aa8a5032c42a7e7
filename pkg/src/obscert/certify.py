"""Scenario bound, design grid, constraint evaluation and the grid search."""

from __future__ import annotations

import decimal
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .deadzone import ScenarioStats
from .errors import InsufficientScenarios, InvalidParams


@dataclass(frozen=True)
class CertParams:
    eta: float = 0.01
    delta: float = 0.001
    m: int = 10

    def __post_init__(self):
        if not 0.0 < self.eta < 1.0:
            raise InvalidParams("eta must lie in (0, 1)")
        if not 0.0 < self.delta < 1.0:
            raise InvalidParams("delta must lie in (0, 1)")
        if int(self.m) != self.m or self.m < 0:
            raise InvalidParams("m must be a nonnegative integer")


def sample_count(params: CertParams, n_theta: int) -> int:
    """Smallest integer ``N_s`` with

        N_s >= (m + L + sqrt(2 m L)) / eta,   L = ln(n_theta / delta).

    Evaluated in 50-digit decimal arithmetic so the ceiling is exact even
    when the bound sits next to an integer.
    """
    if n_theta < 1:
        raise InvalidParams("n_theta must be >= 1")
    with decimal.localcontext() as ctx:
        ctx.prec = 50
        D = decimal.Decimal
        ratio = D(int(n_theta)) / D(repr(float(params.delta)))
        L = ratio.ln()
        if L < 0:
            raise InvalidParams("ln(n_theta / delta) is negative")
        m = D(int(params.m))
        bound = (m + L + (2 * m * L).sqrt()) / D(repr(float(params.eta)))
        return int(bound.to_integral_value(rounding=decimal.ROUND_CEILING))


def logspace_set(low: float, high: float, n: int) -> np.ndarray:
    """``n`` log-uniform values ``10**low .. 10**high``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if low > high:
        raise ValueError("low exponent exceeds high exponent")
    if n == 1:
        return np.array([10.0**low])
    i = np.arange(n)
    return 10.0 ** (low + (high - low) * i / (n - 1))


@dataclass(frozen=True)
class DesignGrid:
    """Candidate ``(eps, zeta)`` pairs scanned eps-major, both ascending."""

    eps_values: np.ndarray
    zeta_values: np.ndarray

    @property
    def size(self) -> int:
        return len(self.eps_values) * len(self.zeta_values)

    def points(self):
        return [(float(e), float(z)) for e in self.eps_values for z in self.zeta_values]


def build_design_grid(eps_low=-4.0, eps_high=0.0, n_eps=20,
                      zeta_low=-4.0, zeta_high=-1.0, n_zeta=10) -> DesignGrid:
    return DesignGrid(logspace_set(eps_low, eps_high, n_eps), logspace_set(zeta_low, zeta_high, n_zeta))


def constraint_g(stats: ScenarioStats, theta, target_index: int = 0, scale=None) -> int:
    """Violation indicator for one scenario: 0 when the pair is consistent
    and every candidate whose target lies farther than ``eps`` is detected."""
    eps, zeta = theta
    a = np.atleast_1d(stats.a)
    b = np.atleast_1d(stats.b)
    sizes = zeta * (np.ones_like(a) if scale is None else np.asarray(scale, dtype=float))
    consistent = bool(np.all(sizes >= a))
    far = float(np.atleast_1d(stats.dz)[target_index]) > eps
    detected = bool(np.any(sizes < b))
    return 0 if consistent and (not far or detected) else 1


def failure_matrix(stats: ScenarioStats, grid: DesignGrid, target_index: int = 0, scale=None):
    """Boolean ``(n_eps, n_zeta, N_s)`` array of violations.

    Only used for diagnostics; :func:`certify` evaluates lazily.
    """
    return np.stack([_failures_at_eps(stats, e, grid.zeta_values, target_index, scale)
                     for e in grid.eps_values])


def _zeta_tables(stats: ScenarioStats, zetas, scale):
    a = np.asarray(stats.a, dtype=float)
    b = np.asarray(stats.b, dtype=float)
    s = np.ones(a.shape[-1]) if scale is None else np.asarray(scale, dtype=float)
    sizes = np.asarray(zetas, dtype=float)[:, None, None] * s[None, None, :]  # (nz, 1, ny)
    consistent = np.all(sizes >= a[None], axis=-1)  # (nz, Ns)
    detected = np.any(sizes < b[None], axis=-1)
    return consistent, detected


def _failures_at_eps(stats, eps, zetas, target_index, scale, tables=None):
    consistent, detected = tables if tables is not None else _zeta_tables(stats, zetas, scale)
    far = np.asarray(stats.dz, dtype=float)[:, target_index] > eps
    return ~consistent | (far[None, :] & ~detected)


@dataclass
class CertificationOutcome:
    """Result of the grid search for one observation target."""

    target: str
    success: bool
    eps: float | None
    zeta: float | None
    failure_count: int
    scanned_count: int
    n_scenarios: int
    n_required: int
    failure_ids: list = field(default_factory=list)
    min_failures: int = 0
    dt2: float = 0.0

    def to_dict(self):
        return {
            "target": self.target, "success": self.success, "eps": self.eps, "zeta": self.zeta,
            "failure_count": self.failure_count, "scanned_count": self.scanned_count,
            "n_scenarios": self.n_scenarios, "n_required": self.n_required,
            "failure_ids": list(self.failure_ids), "min_failures": self.min_failures,
            "dt2": self.dt2,
        }


def certify(stats: ScenarioStats, grid: DesignGrid, params: CertParams, target_index: int = 0,
            scale=None, target_name: str | None = None) -> CertificationOutcome:
    """Return the first grid point (eps-major order) with at most ``m`` violations."""
    t0 = time.perf_counter()
    n_req = sample_count(params, grid.size)
    n = len(stats)
    if n < n_req:
        raise InsufficientScenarios(n, n_req)
    tables = _zeta_tables(stats, grid.zeta_values, scale)
    ids = np.arange(n) if stats.ids is None else np.asarray(stats.ids)
    scanned = 0
    best = None
    name = target_name if target_name is not None else str(target_index)
    for eps in grid.eps_values:
        fails = _failures_at_eps(stats, eps, grid.zeta_values, target_index, scale, tables)
        counts = fails.sum(axis=1)
        for j, zeta in enumerate(grid.zeta_values):
            scanned += 1
            c = int(counts[j])
            best = c if best is None else min(best, c)
            if c <= params.m:
                return CertificationOutcome(
                    name, True, float(eps), float(zeta), c, scanned, n, n_req,
                    [int(i) for i in ids[fails[j]]], best, time.perf_counter() - t0,
                )
    return CertificationOutcome(name, False, None, None, int(best), scanned, n, n_req,
                                [], int(best), time.perf_counter() - t0)


def failure_report(outcome: CertificationOutcome, scenarios, stats: ScenarioStats):
    """One record per scenario failing at the selected grid point.

    ``scenarios`` maps scenario id to :class:`~obscert.sampling.Scenario`.
    """
    if not outcome.success:
        return []
    ids = list(np.arange(len(stats)) if stats.ids is None else stats.ids)
    pos = {int(i): k for k, i in enumerate(ids)}
    rows = []
    for sid in outcome.failure_ids:
        s = scenarios[sid]
        k = pos[sid]
        rows.append({
            "id": int(sid),
            "target": outcome.target,
            "eps": outcome.eps,
            "zeta": outcome.zeta,
            "q_x": s.q_x.tolist(), "q_p": s.q_p.tolist(),
            "xi": s.xi.tolist(), "p": s.p.tolist(),
            "dz": np.atleast_1d(stats.dz[k]).tolist(),
            "a": np.atleast_1d(stats.a[k]).tolist(),
            "b": np.atleast_1d(stats.b[k]).tolist(),
        })
    return rows


def format_jsonl(rows) -> str:
    return "".join(json.dumps(r) + "\n" for r in rows)
