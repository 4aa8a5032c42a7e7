"""Moving-horizon estimation over the dead-zone cost.

The solver is a multistart Nelder-Mead search on the unit box: states are
scaled affinely and parameters logarithmically (when ``log_params``) since
the CSTR parameters span four orders of magnitude.  All starts advance in
lockstep so every trial point of an iteration is simulated in one batched
call; a single trajectory costs about as much as a batch of them.  Start
points are evaluated in their original coordinates, so a start at the
truth is returned bit-exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .deadzone import TINY, DeadZoneSpec, bracket_weights, cum_mean, total_cost
from .errors import BudgetExhausted
from .model import SystemModel, integrate, simulate_flow


@dataclass
class MheProblem:
    """One estimation window: ``y`` is ``(N, n_y)``, ``u`` is ``(N, n_u)``."""

    y: np.ndarray
    u: np.ndarray
    spec: DeadZoneSpec
    xi_box: np.ndarray
    p_box: np.ndarray
    multistart_count: int = 8
    max_evals: int = 2000
    starts: list = field(default_factory=list)
    seed: int = 0
    log_params: bool = True
    xatol: float = 1e-9

    @property
    def N(self) -> int:
        return int(np.asarray(self.y).shape[0])


@dataclass
class MheResult:
    xi: np.ndarray
    p: np.ndarray
    cost: float
    start_costs: list
    budget_exhausted: bool = False
    evals: int = 0


def window_cost(model: SystemModel, xi, p, y, u, spec: DeadZoneSpec) -> float:
    """Dead-zone cost of the candidate ``(xi, p)`` against measurements ``y``."""
    N = np.asarray(y).shape[0]
    _, y_hat, bad = integrate(model, xi, u, p, N)
    if bad >= 0:
        return float("inf")
    return total_cost(np.asarray(y, dtype=float) - y_hat, spec)


def window_costs(model: SystemModel, xis, ps, y, u, spec: DeadZoneSpec) -> np.ndarray:
    """Batched :func:`window_cost` for candidates of shape ``(B, n_x)``/``(B, n_p)``."""
    y = np.asarray(y, dtype=float)
    N = y.shape[0]
    _, y_hat, bad = integrate(model, xis, u, ps, N)
    E = np.swapaxes(y[None] - y_hat, -1, -2)  # (B, n_y, N)
    sizes = spec.sizes()
    if sizes.shape[0] == 1 and model.n_y > 1:
        sizes = np.repeat(sizes, model.n_y)
    c = bracket_weights(N, spec.bracket)
    with np.errstate(invalid="ignore"):
        excess = np.maximum(0.0, cum_mean(E) - c * sizes[:, None])
        J = np.sum(excess**spec.r, axis=-1).sum(axis=-1)
    J[(J == 0.0) & np.any(excess > 0.0, axis=(-2, -1))] = TINY
    J[(bad >= 0) | ~np.isfinite(J)] = np.inf
    return J


class _Scaling:
    def __init__(self, problem: MheProblem):
        self.xi_box = np.asarray(problem.xi_box, dtype=float)
        self.p_box = np.asarray(problem.p_box, dtype=float)
        self.log = problem.log_params and bool(np.all(self.p_box > 0))
        self.n_x = self.xi_box.shape[0]
        self.n = self.n_x + self.p_box.shape[0]

    def _p_bounds(self):
        return np.log(self.p_box) if self.log else self.p_box

    def decode(self, v):
        v = np.clip(v, 0.0, 1.0)
        xs = self.xi_box[:, 0] + v[..., : self.n_x] * (self.xi_box[:, 1] - self.xi_box[:, 0])
        pb = self._p_bounds()
        ps = pb[:, 0] + v[..., self.n_x:] * (pb[:, 1] - pb[:, 0])
        return xs, (np.exp(ps) if self.log else ps)

    def encode(self, xi, p):
        pb = self._p_bounds()
        pv = np.log(p) if self.log else np.asarray(p, dtype=float)
        vx = (np.asarray(xi) - self.xi_box[:, 0]) / (self.xi_box[:, 1] - self.xi_box[:, 0])
        vp = (pv - pb[:, 0]) / np.where(pb[:, 1] > pb[:, 0], pb[:, 1] - pb[:, 0], 1.0)
        return np.clip(np.concatenate([vx, vp]), 0.0, 1.0)


def _initial_simplex(v0, step=0.05):
    n = v0.shape[0]
    simplex = np.tile(v0, (n + 1, 1))
    for i in range(n):
        simplex[i + 1, i] += step if v0[i] + step <= 1.0 else -step
    return simplex


def _lockstep_nelder_mead(f, starts, max_evals, xatol):
    """Minimise ``f`` (batched) from several unit-box starts simultaneously.

    Adaptive coefficients for dimension ``n``; trial points are clipped to
    the box.  Returns best points, values and an exhausted-budget flag per
    start.
    """
    S, n = starts.shape
    alpha, gamma = 1.0, 1.0 + 2.0 / n
    rho, sigma = 0.75 - 1.0 / (2 * n), 1.0 - 1.0 / n
    X = np.stack([_initial_simplex(v) for v in starts])  # (S, n+1, n)
    F = f(X.reshape(-1, n)).reshape(S, n + 1)
    evals = np.full(S, n + 1)
    active = np.ones(S, dtype=bool)
    exhausted = np.zeros(S, dtype=bool)
    while True:
        order = np.argsort(F, axis=1, kind="stable")
        X = np.take_along_axis(X, order[:, :, None], axis=1)
        F = np.take_along_axis(F, order, axis=1)
        spread = np.max(np.abs(X[:, 1:] - X[:, :1]), axis=(1, 2))
        done = (spread <= xatol) | (F[:, 0] == 0.0) | ~np.isfinite(F[:, 0]) & (F[:, -1] == F[:, 0])
        out = evals >= max_evals
        exhausted |= active & out & ~done
        active &= ~done & ~out
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        Xa, Fa = X[idx], F[idx]
        xbar = Xa[:, :-1].mean(axis=1)
        worst = Xa[:, -1]
        xr = np.clip(xbar + alpha * (xbar - worst), 0.0, 1.0)
        fr = f(xr)
        evals[idx] += 1
        f0, fsec, fw = Fa[:, 0], Fa[:, -2], Fa[:, -1]
        new_x, new_f = xr.copy(), fr.copy()
        expand = fr < f0
        outside = (fr >= fsec) & (fr < fw)
        inside = fr >= fw
        trial = np.where(expand[:, None], xbar + gamma * (xr - xbar),
                         np.where(outside[:, None], xbar + rho * (xr - xbar), xbar - rho * (xbar - worst)))
        need = expand | outside | inside
        shrink = np.zeros(idx.size, dtype=bool)
        if need.any():
            k = np.flatnonzero(need)
            ft = f(np.clip(trial[k], 0.0, 1.0))
            evals[idx[k]] += 1
            tk = np.clip(trial[k], 0.0, 1.0)
            for j, kk in enumerate(k):
                if expand[kk]:
                    if ft[j] < fr[kk]:
                        new_x[kk], new_f[kk] = tk[j], ft[j]
                elif outside[kk]:
                    if ft[j] <= fr[kk]:
                        new_x[kk], new_f[kk] = tk[j], ft[j]
                    else:
                        shrink[kk] = True
                else:
                    if ft[j] < fw[kk]:
                        new_x[kk], new_f[kk] = tk[j], ft[j]
                    else:
                        shrink[kk] = True
        keep = ~shrink
        Xa[keep, -1] = new_x[keep]
        Fa[keep, -1] = new_f[keep]
        if shrink.any():
            k = np.flatnonzero(shrink)
            pts = Xa[k, :1] + sigma * (Xa[k, 1:] - Xa[k, :1])  # (K, n, n)
            Xa[k, 1:] = pts
            Fa[k, 1:] = f(pts.reshape(-1, n)).reshape(k.size, n)
            evals[idx[k]] += n
        X[idx], F[idx] = Xa, Fa
    return X[:, 0], F[:, 0], exhausted, evals


def mhe_solve(problem: MheProblem, model: SystemModel) -> MheResult:
    """Approximate ``argmin J(xi, p | y, zeta)`` over the search box."""
    scaling = _Scaling(problem)
    starts = [(np.asarray(x, float), np.asarray(p, float)) for x, p in problem.starts]
    rng = np.random.default_rng(problem.seed)
    while len(starts) < problem.multistart_count:
        starts.append(scaling.decode(rng.random(scaling.n)))
    j0 = window_costs(model, np.stack([s[0] for s in starts]), np.stack([s[1] for s in starts]),
                      problem.y, problem.u, problem.spec)
    if np.any(j0 == 0.0):
        # zero is the global minimum of the cost
        k = int(np.flatnonzero(j0 == 0.0)[0])
        return MheResult(starts[k][0], starts[k][1], 0.0, j0.tolist(), False, len(starts))

    def f(V):
        xs, ps = scaling.decode(V)
        return window_costs(model, xs, ps, problem.y, problem.u, problem.spec)

    V0 = np.stack([scaling.encode(x, p) for x, p in starts])
    vbest, fbest, exhausted, evals = _lockstep_nelder_mead(f, V0, problem.max_evals, problem.xatol)
    cands = []
    for k, (x, p) in enumerate(starts):
        xs, ps = scaling.decode(vbest[k])
        jk = window_cost(model, xs, ps, problem.y, problem.u, problem.spec)
        cands.append((jk, k, xs, ps) if jk < j0[k] else (float(j0[k]), k, x, p))
    # min cost, earliest start on ties
    cost, k, xi, p = min(cands, key=lambda c: (c[0], c[1]))
    out = MheResult(xi, p, float(cost), j0.tolist(), bool(exhausted[k]), int(evals.sum()))
    if out.budget_exhausted:
        warnings.warn(BudgetExhausted(xi, p, cost), stacklevel=2)
    return out


def reconstruct_target(xi, p, u_window, model: SystemModel, target: str | None = None) -> np.ndarray:
    """``T(X_N(xi, u, p), p)``: propagate the window's initial state to its end."""
    u_window = np.asarray(u_window, dtype=float).reshape(-1, model.n_u)
    N = u_window.shape[0]
    if N == 0:
        return model.target(xi, p, target)
    states, _ = simulate_flow(model, xi, u_window, p, N)
    return model.target(states[-1], p, target)


def run_mhe_trace(model: SystemModel, x0, true_p, u_profile, noise, N: int, steps: int,
                  spec: DeadZoneSpec, target: str | None = None, p_box=None,
                  multistart_count: int = 8, max_evals: int = 2000, seed: int = 0,
                  seed_truth: bool = False):
    """Slide an ``N``-sample window over a simulated run of ``steps`` periods.

    ``u_profile`` has shape ``(steps, n_u)`` and ``noise`` ``(steps, n_y)``.
    Returns one row per window end ``k = N..steps``: ``(k, z_true, z_hat, J*)``.
    """
    if steps < N:
        raise ValueError("steps must be >= N")
    true_p = np.asarray(true_p, dtype=float)
    u_profile = np.asarray(u_profile, dtype=float)
    states, outputs = simulate_flow(model, x0, u_profile, true_p, steps)
    y = outputs + np.asarray(noise, dtype=float)
    if p_box is None:
        p_box = np.stack([0.8 * model.p_nom, 1.2 * model.p_nom], axis=1)
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BudgetExhausted)
        for k in range(N, steps + 1):
            u_win = u_profile[k - N:k]
            starts = [(states[k - N], true_p)] if seed_truth else []
            problem = MheProblem(
                y[k - N:k], u_win, spec, model.state_box, p_box, multistart_count,
                max_evals, starts, seed + k,
            )
            res = mhe_solve(problem, model)
            z_hat = np.atleast_1d(reconstruct_target(res.xi, res.p, u_win, model, target))
            z_true = np.atleast_1d(model.target(states[k], true_p, target))
            rows.append((k, z_true, z_hat, res.cost))
    return rows
