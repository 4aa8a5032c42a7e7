"""System models, fixed-step flow maps and the CSTR benchmark.

Arrays follow a time-major layout: a profile of ``L`` samples of an
``n``-vector has shape ``(L, n)``.  Every function accepts optional leading
batch dimensions, so ``x0`` of shape ``(B, n_x)`` with inputs of shape
``(B, L, n_u)`` simulates ``B`` independent trajectories at once.  Batched
and single evaluations are element-wise identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional

import numpy as np

from .errors import NonFiniteState

Array = np.ndarray
Rhs = Callable[[Array, Array, Array], Array]

X3_FLOOR = 1e-6


@dataclass(frozen=True)
class SystemModel:
    """Discrete-time system ``x+ = f(x, u, p)``, ``y = h(x, u, p)`` and targets.

    ``rhs`` is the continuous-time vector field; ``f`` is obtained by
    ``substeps`` RK4 steps over one sampling period ``tau`` with the input
    held constant.  ``targets`` maps a target name to ``T(x, p)``.  All
    callables must broadcast over leading batch dimensions.
    """

    name: str
    n_x: int
    n_u: int
    n_y: int
    n_p: int
    state_box: Array
    input_box: Array
    p_nom: Array
    rhs: Rhs
    output_map: Rhs
    targets: Dict[str, Callable[[Array, Array], Array]]
    tau: float = 0.05
    substeps: int = 10
    state_guard: Optional[Callable[[Array], Array]] = None
    param_valid: Optional[Callable[[Array], Array]] = None
    descriptions: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for label, box, n in (
            ("state_box", self.state_box, self.n_x),
            ("input_box", self.input_box, self.n_u),
        ):
            box = np.asarray(box, dtype=float)
            if box.shape != (n, 2):
                raise ValueError(f"{label} must have shape ({n}, 2)")
            if not np.all(box[:, 0] < box[:, 1]):
                raise ValueError(f"{label} must satisfy lower < upper")
            object.__setattr__(self, label, box)
        p_nom = np.asarray(self.p_nom, dtype=float)
        if p_nom.shape != (self.n_p,):
            raise ValueError(f"p_nom must have shape ({self.n_p},)")
        object.__setattr__(self, "p_nom", p_nom)
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if int(self.substeps) < 1:
            raise ValueError("substeps must be >= 1")
        if not self.targets:
            raise ValueError("at least one target must be registered")

    def with_timing(self, tau: float | None = None, substeps: int | None = None):
        return replace(
            self,
            tau=self.tau if tau is None else float(tau),
            substeps=self.substeps if substeps is None else int(substeps),
        )

    @property
    def target_names(self):
        return list(self.targets)

    def target(self, x, p, name: str | None = None) -> Array:
        """Evaluate the observation target ``T(x, p)`` (the first one by default)."""
        key = self.target_names[0] if name is None else name
        try:
            T = self.targets[key]
        except KeyError:
            raise KeyError(f"model {self.name!r} has no target {key!r}") from None
        return np.asarray(T(np.asarray(x, dtype=float), np.asarray(p, dtype=float)))

    def target_dim(self, name: str) -> int:
        z = self.target(self.state_box.mean(axis=1), self.p_nom, name)
        return int(np.atleast_1d(z).shape[-1])


def _stage_ok(model: SystemModel, x: Array) -> Array:
    ok = np.logical_and.reduce(np.isfinite(x), axis=-1)
    if model.state_guard is not None:
        ok &= model.state_guard(x)
    return ok


def _rk4_period(model: SystemModel, x: Array, u: Array, p: Array):
    """One sampling period of RK4; returns the new state and a validity mask."""
    h = model.tau / model.substeps
    ok = _stage_ok(model, x)
    for _ in range(model.substeps):
        k1 = model.rhs(x, u, p)
        x2 = x + 0.5 * h * k1
        ok &= _stage_ok(model, x2)
        k2 = model.rhs(x2, u, p)
        x3 = x + 0.5 * h * k2
        ok &= _stage_ok(model, x3)
        k3 = model.rhs(x3, u, p)
        x4 = x + h * k3
        ok &= _stage_ok(model, x4)
        k4 = model.rhs(x4, u, p)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        ok &= _stage_ok(model, x)
    return x, ok


def step(model: SystemModel, x, u, p) -> Array:
    """Advance the state by one sampling period."""
    x = np.asarray(x, dtype=float)
    with np.errstate(all="ignore"):
        x_next, ok = _rk4_period(
            model, x, np.asarray(u, dtype=float), np.asarray(p, dtype=float)
        )
    if not np.all(ok):
        raise NonFiniteState(0, np.flatnonzero(~np.atleast_1d(ok)))
    return x_next


def integrate(model: SystemModel, x0, u_profile, p, N: int):
    """Simulate ``N`` periods without raising.

    Returns ``(states, outputs, bad_step)`` where ``states`` has shape
    ``(..., N + 1, n_x)``, ``outputs`` has shape ``(..., N, n_y)`` and
    ``bad_step`` holds, per batch member, the first step whose integration
    failed (``-1`` when the trajectory is valid).
    """
    x = np.asarray(x0, dtype=float)
    u_profile = np.asarray(u_profile, dtype=float)
    p = np.asarray(p, dtype=float)
    if u_profile.shape[-2] < N:
        raise ValueError(f"input profile has {u_profile.shape[-2]} samples, need {N}")
    batch = np.broadcast_shapes(x.shape[:-1], u_profile.shape[:-2], p.shape[:-1])
    x = np.broadcast_to(x, batch + x.shape[-1:])
    states = np.empty(batch + (N + 1, model.n_x))
    outputs = np.empty(batch + (N, model.n_y))
    bad_step = np.full(batch, -1, dtype=np.int64)
    states[..., 0, :] = x
    with np.errstate(all="ignore"):
        valid = _stage_ok(model, x)
        for i in range(N):
            u = u_profile[..., i, :]
            outputs[..., i, :] = model.output_map(x, u, p)
            x, ok = _rk4_period(model, x, u, p)
            ok &= valid
            bad_step[(bad_step < 0) & ~ok] = i
            valid = ok
            states[..., i + 1, :] = x
    bad_step[(bad_step < 0) & ~np.all(np.isfinite(outputs), axis=(-2, -1))] = 0
    return states, outputs, bad_step


def simulate_flow(model: SystemModel, x0, u_profile, p, N: int):
    """State profile ``X_0..X_N`` and output profile ``Y_0..Y_{N-1}``.

    Raises :class:`NonFiniteState` naming the first failing step.
    """
    states, outputs, bad_step = integrate(model, x0, u_profile, p, N)
    bad = np.atleast_1d(bad_step)
    if np.any(bad >= 0):
        members = np.flatnonzero(bad >= 0)
        raise NonFiniteState(int(bad[members].min()), members if bad_step.ndim else None)
    return states, outputs


# --- CSTR with parallel reactions -------------------------------------------


def cstr_rhs(x, u, p, waste_order: int = 1):
    """Dimensionless balances; the waste reaction is first order in x1.

    ``waste_order=0`` drops the x1 factor from the waste term; that variant
    drives x1 negative and blows up for inputs near the top of the box.
    """
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    p1, p2, p3 = p[..., 0], p[..., 1], p[..., 2]
    r1 = p1 * (x1 * x1) * np.exp(-1.0 / x3)
    r2 = p2 * np.exp(-p3 / x3)
    if waste_order:
        r2 = r2 * x1
    shape = np.broadcast_shapes(x.shape, p.shape[:-1] + (3,), u.shape[:-1] + (3,))
    out = np.empty(shape)
    out[..., 0] = 1.0 - r1 - r2 - x1
    out[..., 1] = r1 - x2
    out[..., 2] = u[..., 0] - x3
    return out


def cstr_output(x, u, p):
    return x[..., 1:2] + 0.0 * u[..., :1]


def _cstr_guard(x):
    return x[..., 2] >= X3_FLOOR


def _positive_params(p):
    return np.all(p > 0, axis=-1)


def cstr_model(tau: float = 0.05, substeps: int = 10, waste_order: int = 1) -> SystemModel:
    """Reactor R -> P1, R -> P2 with measured x2 (and measured input)."""
    if waste_order not in (0, 1):
        raise ValueError("waste_order must be 0 or 1")
    rhs = cstr_rhs if waste_order == 1 else (lambda x, u, p: cstr_rhs(x, u, p, 0))
    return SystemModel(
        name="cstr",
        n_x=3,
        n_u=1,
        n_y=1,
        n_p=3,
        state_box=np.array([[0.0, 0.6], [0.0, 0.3], [0.05, 0.2]]),
        input_box=np.array([[0.049, 0.449]]),
        p_nom=np.array([1e4, 4e2, 0.55]),
        rhs=rhs,
        output_map=cstr_output,
        targets={
            "z1": lambda x, p: x,
            "z2": lambda x, p: x[..., 0:1],
            "z3": lambda x, p: x[..., 2:3],
            "p": lambda x, p: np.broadcast_to(p, x.shape[:-1] + p.shape[-1:]),
        },
        tau=tau,
        substeps=substeps,
        state_guard=_cstr_guard,
        param_valid=_positive_params,
        descriptions={
            "z1": "full state x",
            "z2": "concentration x1",
            "z3": "temperature x3",
            "p": "parameter vector (identification)",
        },
    )


_REGISTRY: Dict[str, Callable[..., SystemModel]] = {"cstr": cstr_model}


def register_model(name: str, factory: Callable[..., SystemModel]) -> None:
    """Make a model factory available by name to experiment configs."""
    _REGISTRY[name] = factory


def get_model(name: str, **kwargs) -> SystemModel:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; known: {sorted(_REGISTRY)}") from None
    return factory(**kwargs)


def available_models():
    return sorted(_REGISTRY)
