"""Dead-zone output-prediction cost and per-scenario sufficient statistics.

For an error row ``e`` of length ``N`` the cumulative means are
``m_k = |mean(e_1..e_k)|`` and the distance is

    d(e, zeta) = sum_k max(0, m_k - c_k * zeta) ** r,   c_k = N / k

(``c_k = floor(N / k)`` with ``bracket="floor"``).  ``d`` vanishes exactly
when ``zeta >= consistency_stat(e)``; the statistic is computed as the
smallest double for which every clipped term is zero *in floating point*,
so the equivalence holds bit-for-bit rather than up to rounding.  A
positive cost too small for a double (``excess ** r`` underflowing for
``r > 1``) is reported as the smallest subnormal, never as zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import SystemModel, simulate_flow
from .sampling import Scenario

BRACKETS = ("real", "floor")
TINY = float(np.nextafter(0.0, 1.0))
NORMS = ("euclidean", "max")


@dataclass(frozen=True)
class DeadZoneSpec:
    """Scalar dead-zone size ``zeta`` with per-output multipliers ``scale``."""

    zeta: float
    scale: tuple = (1.0,)
    r: int = 1
    bracket: str = "real"

    def __post_init__(self):
        if self.zeta < 0:
            raise ValueError("zeta must be nonnegative")
        scale = np.asarray(self.scale, dtype=float)
        if np.any(scale < 0) or not np.any(scale > 0):
            raise ValueError("scale must be nonnegative with a positive entry")
        if int(self.r) < 1:
            raise ValueError("r must be >= 1")
        if self.bracket not in BRACKETS:
            raise ValueError(f"bracket must be one of {BRACKETS}")

    def sizes(self) -> np.ndarray:
        return self.zeta * np.asarray(self.scale, dtype=float)


@dataclass
class ScenarioStats:
    """Sufficient statistics of one scenario (or a stack of them).

    ``a`` (consistency thresholds) and ``b`` (detectability thresholds) have
    shape ``(..., n_y)``; ``dz`` has shape ``(..., n_targets)``.
    """

    a: np.ndarray
    b: np.ndarray
    dz: np.ndarray
    ids: np.ndarray | None = None
    attempts: np.ndarray | None = None

    def __len__(self):
        return int(np.atleast_2d(self.a).shape[0])

    def subset(self, n: int) -> "ScenarioStats":
        return ScenarioStats(
            self.a[:n], self.b[:n], self.dz[:n],
            None if self.ids is None else self.ids[:n],
            None if self.attempts is None else self.attempts[:n],
        )


def bracket_weights(N: int, bracket: str = "real") -> np.ndarray:
    """Dead-zone multipliers ``c_k`` for ``k = 1..N``."""
    k = np.arange(1, N + 1, dtype=float)
    if bracket == "real":
        return N / k
    if bracket == "floor":
        return np.floor(N / k)
    raise ValueError(f"unknown bracket {bracket!r}")


def cum_mean(e) -> np.ndarray:
    """``|cumsum(e) / k|`` along the last axis (time)."""
    e = np.asarray(e, dtype=float)
    k = np.arange(1, e.shape[-1] + 1, dtype=float)
    return np.abs(np.cumsum(e, axis=-1) / k)


def deadzone_distance(e_row, zeta_i: float, r: int = 1, bracket: str = "real") -> float:
    e_row = np.asarray(e_row, dtype=float)
    m = cum_mean(e_row)
    c = bracket_weights(e_row.shape[-1], bracket)
    excess = np.maximum(0.0, m - c * zeta_i)
    d = float(np.sum(excess**r))
    if d == 0.0 and np.any(excess > 0.0):
        return TINY
    return d


def total_cost(E, spec: DeadZoneSpec) -> float:
    """Sum of per-output distances; ``E`` has shape ``(N, n_y)``."""
    E = np.asarray(E, dtype=float)
    sizes = spec.sizes()
    if sizes.shape[0] != E.shape[-1]:
        if sizes.shape[0] == 1:
            sizes = np.repeat(sizes, E.shape[-1])
        else:
            raise ValueError("scale length does not match the number of outputs")
    return float(
        sum(deadzone_distance(E[:, i], sizes[i], spec.r, spec.bracket) for i in range(E.shape[-1]))
    )


def consistency_stat(e_rows, bracket: str = "real") -> np.ndarray | float:
    """Smallest ``zeta`` with ``deadzone_distance(e, zeta) == 0``.

    Works along the last axis; leading axes are batch dimensions.  Rows
    must be finite.
    """
    e_rows = np.asarray(e_rows, dtype=float)
    m = cum_mean(e_rows)
    c = bracket_weights(e_rows.shape[-1], bracket)
    if bracket == "floor" and np.any(c == 0):
        raise ValueError("floor bracket produced a zero weight")
    t = m / c
    # Nudge each candidate onto the floating-point boundary of c * t >= m.
    while True:
        low = c * t < m
        if not low.any():
            break
        t = np.where(low, np.nextafter(t, np.inf), t)
    while True:
        prev = np.nextafter(t, -np.inf)
        high = (t > 0) & (c * prev >= m)
        if not high.any():
            break
        t = np.where(high, prev, t)
    t = np.maximum(t, 0.0)
    s = t.max(axis=-1)
    return float(s) if s.ndim == 0 else s


def prediction_error(scenario: Scenario, model: SystemModel, use_candidate: bool) -> np.ndarray:
    """Measured minus predicted output for the true or candidate pair.

    Evaluated as ``q_nu + (Y_true - Y_pred)``, so the true pair returns the
    noise profile bit-for-bit.
    """
    N = scenario.q_u.shape[0]
    _, y_true = simulate_flow(model, scenario.q_x, scenario.q_u, scenario.q_p, N)
    if not use_candidate:
        return scenario.q_nu + (y_true - y_true)
    _, y_cand = simulate_flow(model, scenario.xi, scenario.q_u, scenario.p, N)
    return scenario.q_nu + (y_true - y_cand)


def target_distance(z_a, z_b, norm: str = "euclidean") -> np.ndarray:
    d = np.asarray(z_a, dtype=float) - np.asarray(z_b, dtype=float)
    if norm == "euclidean":
        return np.sqrt(np.sum(d * d, axis=-1))
    if norm == "max":
        return np.max(np.abs(d), axis=-1)
    raise ValueError(f"unknown norm {norm!r}")


def stats_from_errors(noise, e2, dz, bracket: str = "real", ids=None, attempts=None) -> ScenarioStats:
    """Build stats from stacked error profiles of shape ``(B, N, n_y)``."""
    a = consistency_stat(np.swapaxes(np.asarray(noise, float), -1, -2), bracket)
    b = consistency_stat(np.swapaxes(np.asarray(e2, float), -1, -2), bracket)
    return ScenarioStats(np.atleast_1d(a), np.atleast_1d(b), np.asarray(dz, float), ids, attempts)


def batch_stats(scenarios: Sequence[Scenario], sims, model: SystemModel, targets,
                bracket: str = "real", norm: str = "euclidean") -> ScenarioStats:
    """Stats for a batch of scenarios given their simulated output profiles."""
    _, y_true, _, y_cand = sims
    noise = np.stack([s.q_nu for s in scenarios])
    e2 = noise + (y_true - y_cand)
    q_x = np.stack([s.q_x for s in scenarios])
    q_p = np.stack([s.q_p for s in scenarios])
    xi = np.stack([s.xi for s in scenarios])
    p = np.stack([s.p for s in scenarios])
    dz = np.stack(
        [target_distance(model.target(xi, p, t), model.target(q_x, q_p, t), norm) for t in targets],
        axis=-1,
    )
    return stats_from_errors(
        noise, e2, dz, bracket,
        ids=np.array([s.id for s in scenarios], dtype=np.int64),
        attempts=np.array([s.attempt for s in scenarios], dtype=np.int64),
    )


def scenario_stats(scenario: Scenario, model: SystemModel, targets,
                   bracket: str = "real", norm: str = "euclidean") -> ScenarioStats:
    """Thresholds ``a``, ``b`` (shape ``(n_y,)``) and distances ``dz`` for one scenario."""
    e1 = prediction_error(scenario, model, use_candidate=False)
    e2 = prediction_error(scenario, model, use_candidate=True)
    a = consistency_stat(e1.T, bracket)
    b = consistency_stat(e2.T, bracket)
    dz = np.array([
        float(target_distance(model.target(scenario.xi, scenario.p, t),
                              model.target(scenario.q_x, scenario.q_p, t), norm))
        for t in targets
    ])
    return ScenarioStats(np.atleast_1d(a), np.atleast_1d(b), dz,
                         np.array([scenario.id]), np.array([scenario.attempt]))
