"""Scenario generation with counter-based random substreams.

Each scenario ``w = (q_x, q_p, q_u, q_nu, xi, p)`` is a pure function of
``(master_seed, id)``: every component is drawn from its own Philox stream
keyed by ``(master_seed, id, attempt, role)``.  Generation order, chunking
and threading therefore never change a scenario's content.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ResampleExhausted
from .model import SystemModel, integrate

MAX_ATTEMPTS = 100

ROLE_STATE, ROLE_PARAM, ROLE_INPUT, ROLE_NOISE, ROLE_CAND_STATE, ROLE_CAND_PARAM = range(6)

P_MODES = ("uniform", "gaussian")
U_MODES = ("rand", "fourier")
NOISE_MODES = ("uniform", "gaussian")
CANDIDATE_MODES = ("independent", "copy")


@dataclass(frozen=True)
class SamplingConfig:
    """Distribution choices for the scenario law.

    ``noise`` is the half-range for uniform noise and the standard deviation
    for Gaussian noise.  ``u_offset=None`` centres the Fourier series on the
    middle of the input box; ``u_offset=0.0`` gives the zero-centred series.
    ``state_box``/``input_box`` override the model boxes for sampling and
    may be degenerate.  ``candidate_mode="copy"`` sets ``xi = q_x`` and
    ``p = q_p`` (a diagnostic for the noise-free limit).
    """

    N: int = 20
    p_mode: str = "gaussian"
    rho: float = 0.05
    std_p: float = 0.2
    u_mode: str = "fourier"
    n_f: int = 10
    beta_bar: float = 0.2
    u_offset: Optional[float] = None
    noise_mode: str = "uniform"
    noise: float = 0.001
    master_seed: int = 0
    state_box: Optional[tuple] = None
    input_box: Optional[tuple] = None
    candidate_mode: str = "independent"

    def __post_init__(self):
        if int(self.N) < 1:
            raise ValueError("N must be >= 1")
        if self.p_mode not in P_MODES:
            raise ValueError(f"p_mode must be one of {P_MODES}")
        if self.u_mode not in U_MODES:
            raise ValueError(f"u_mode must be one of {U_MODES}")
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"noise_mode must be one of {NOISE_MODES}")
        if self.candidate_mode not in CANDIDATE_MODES:
            raise ValueError(f"candidate_mode must be one of {CANDIDATE_MODES}")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if self.std_p < 0 or self.beta_bar < 0 or self.noise < 0:
            raise ValueError("std_p, beta_bar and noise must be nonnegative")
        if int(self.n_f) < 1:
            raise ValueError("n_f must be >= 1")
        for label in ("state_box", "input_box"):
            box = getattr(self, label)
            if box is not None:
                arr = np.asarray(box, dtype=float)
                if arr.ndim != 2 or arr.shape[1] != 2 or np.any(arr[:, 0] > arr[:, 1]):
                    raise ValueError(f"{label} must be a list of [lower, upper] pairs")

    def boxes(self, model: SystemModel):
        X = model.state_box if self.state_box is None else np.asarray(self.state_box, float)
        U = model.input_box if self.input_box is None else np.asarray(self.input_box, float)
        return X, U


@dataclass
class Scenario:
    """One sampled ``w``; noise has shape ``(N, n_y)``, inputs ``(N, n_u)``."""

    id: int
    q_x: np.ndarray
    q_p: np.ndarray
    q_u: np.ndarray
    q_nu: np.ndarray
    xi: np.ndarray
    p: np.ndarray
    attempt: int = 0
    param_redraws: int = 0
    extra: dict = field(default_factory=dict)


def substream(master_seed: int, scenario_id: int, role: int, attempt: int = 0):
    seq = np.random.SeedSequence([int(master_seed) & (2**64 - 1), int(scenario_id), int(attempt), int(role)])
    return np.random.Generator(np.random.Philox(seq))


def sample_state(box, rng) -> np.ndarray:
    box = np.asarray(box, dtype=float)
    return box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random(box.shape[0])


def sample_param_uniform(p_nom, rho: float, rng) -> np.ndarray:
    p_nom = np.asarray(p_nom, dtype=float)
    lo, hi = (1.0 - rho) * p_nom, (1.0 + rho) * p_nom
    return lo + (hi - lo) * rng.random(p_nom.shape[0])


def sample_param_gaussian(p_nom, std_p: float, rng) -> np.ndarray:
    p_nom = np.asarray(p_nom, dtype=float)
    return (1.0 + std_p * rng.standard_normal(p_nom.shape[0])) * p_nom


def sample_input_fourier(input_box, N: int, n_f: int, beta_bar: float, offset, rng) -> np.ndarray:
    """Saturated random Fourier series ``offset + sum_j beta_j sin(2 j pi i / N + phi_j)``.

    ``offset=None`` uses the midpoint of the box.  Samples are taken at
    ``i = 1..N``; the sampling period cancels out of the phase.
    """
    U = np.asarray(input_box, dtype=float)
    n_u = U.shape[0]
    if offset is None:
        offset = U.mean(axis=1)
    beta = beta_bar * rng.random((n_f, n_u))
    phi = 2.0 * np.pi * rng.random(n_f)
    i = np.arange(1, N + 1)[:, None]
    j = np.arange(1, n_f + 1)[None, :]
    s = np.sin(2.0 * np.pi * j * i / N + phi[None, :])  # (N, n_f)
    u = np.asarray(offset, dtype=float) + s @ beta
    return np.clip(u, U[:, 0], U[:, 1])


def sample_input_uniform(input_box, N: int, rng) -> np.ndarray:
    U = np.asarray(input_box, dtype=float)
    return U[:, 0] + (U[:, 1] - U[:, 0]) * rng.random((N, U.shape[0]))


def sample_noise(n_y: int, N: int, level: float, mode: str, rng) -> np.ndarray:
    if mode == "uniform":
        return level * rng.uniform(-1.0, 1.0, (N, n_y))
    if mode == "gaussian":
        return level * rng.standard_normal((N, n_y))
    raise ValueError(f"unknown noise mode {mode!r}")


def _sample_params(model: SystemModel, cfg: SamplingConfig, rng, scenario_id: int):
    redraws = 0
    for _ in range(MAX_ATTEMPTS):
        if cfg.p_mode == "uniform":
            p = sample_param_uniform(model.p_nom, cfg.rho, rng)
        else:
            p = sample_param_gaussian(model.p_nom, cfg.std_p, rng)
        if model.param_valid is None or bool(model.param_valid(p)):
            return p, redraws
        redraws += 1
    raise ResampleExhausted([scenario_id], MAX_ATTEMPTS)


def _draw_once(scenario_id: int, cfg: SamplingConfig, model: SystemModel, attempt: int) -> Scenario:
    X, U = cfg.boxes(model)
    seed = cfg.master_seed
    q_x = sample_state(X, substream(seed, scenario_id, ROLE_STATE, attempt))
    q_p, r1 = _sample_params(model, cfg, substream(seed, scenario_id, ROLE_PARAM, attempt), scenario_id)
    rng_u = substream(seed, scenario_id, ROLE_INPUT, attempt)
    if cfg.u_mode == "fourier":
        q_u = sample_input_fourier(U, cfg.N, cfg.n_f, cfg.beta_bar, cfg.u_offset, rng_u)
    else:
        q_u = sample_input_uniform(U, cfg.N, rng_u)
    q_nu = sample_noise(
        model.n_y, cfg.N, cfg.noise, cfg.noise_mode, substream(seed, scenario_id, ROLE_NOISE, attempt)
    )
    if cfg.candidate_mode == "copy":
        xi, p, r2 = q_x.copy(), q_p.copy(), 0
    else:
        xi = sample_state(X, substream(seed, scenario_id, ROLE_CAND_STATE, attempt))
        p, r2 = _sample_params(
            model, cfg, substream(seed, scenario_id, ROLE_CAND_PARAM, attempt), scenario_id
        )
    return Scenario(scenario_id, q_x, q_p, q_u, q_nu, xi, p, attempt, r1 + r2)


def draw_scenario_attempt(scenario_id: int, cfg: SamplingConfig, model: SystemModel, attempt: int) -> Scenario:
    """Regenerate the scenario drawn at a known attempt index (no simulation)."""
    return _draw_once(scenario_id, cfg, model, attempt)


def simulate_pairs(scenarios, model: SystemModel, N: int):
    """Outputs of the true and candidate pairs for a list of scenarios.

    Returns ``(states_true, y_true, states_cand, y_cand, valid)``.
    """
    q_x = np.stack([s.q_x for s in scenarios])
    q_p = np.stack([s.q_p for s in scenarios])
    q_u = np.stack([s.q_u for s in scenarios])
    xi = np.stack([s.xi for s in scenarios])
    p = np.stack([s.p for s in scenarios])
    xs_t, y_t, bad_t = integrate(model, q_x, q_u, q_p, N)
    xs_c, y_c, bad_c = integrate(model, xi, q_u, p, N)
    return xs_t, y_t, xs_c, y_c, (bad_t < 0) & (bad_c < 0)


def draw_scenarios(ids, cfg: SamplingConfig, model: SystemModel):
    """Draw scenarios and redraw those whose simulations trip the model guard.

    Returns ``(scenarios, (states_true, y_true, states_cand, y_cand))`` for
    the accepted draws, in the order of ``ids``.
    """
    ids = [int(i) for i in ids]
    attempts = {i: 0 for i in ids}
    accepted = {}
    pending = list(ids)
    while pending:
        batch = [_draw_once(i, cfg, model, attempts[i]) for i in pending]
        xs_t, y_t, xs_c, y_c, valid = simulate_pairs(batch, model, cfg.N)
        retry = []
        for k, s in enumerate(batch):
            if valid[k]:
                accepted[s.id] = (s, xs_t[k], y_t[k], xs_c[k], y_c[k])
            else:
                attempts[s.id] += 1
                if attempts[s.id] >= MAX_ATTEMPTS:
                    raise ResampleExhausted([s.id], MAX_ATTEMPTS)
                retry.append(s.id)
        pending = retry
    rows = [accepted[i] for i in ids]
    scenarios = [r[0] for r in rows]
    sims = tuple(np.stack([r[k] for r in rows]) for k in range(1, 5))
    return scenarios, sims


def draw_scenario(scenario_id: int, cfg: SamplingConfig, model: SystemModel) -> Scenario:
    """The accepted scenario for ``scenario_id``; deterministic in ``(seed, id)``."""
    scenarios, _ = draw_scenarios([scenario_id], cfg, model)
    return scenarios[0]
