"""
A moving-horizon estimator on the reactor
=========================================

Slides a 10-sample window along a simulated run and reconstructs the
reactor temperature x3 from measurements of x2 alone.  The estimator starts
from random points only (no help from the truth) and the window cost uses a
dead zone of 1e-3.
"""

# %%
import warnings

import numpy as np

from obscert import DeadZoneSpec, cstr_model
from obscert.errors import BudgetExhausted
from obscert.estimator import MheProblem, mhe_solve, reconstruct_target, run_mhe_trace
from obscert.model import simulate_flow
from obscert.sampling import sample_input_fourier, sample_noise

model = cstr_model()
rng = np.random.default_rng(2)
steps, N = 20, 10
u = sample_input_fourier(model.input_box, steps, 10, 0.2, None, rng)
noise = sample_noise(1, steps, 0.001, "uniform", rng)
x0 = np.array([0.3, 0.12, 0.12])

# %%
# First the exact-pair sanity check: seeded at the truth with zero noise and
# no dead zone, the cost is exactly zero and the reconstruction is exact.
states, y = simulate_flow(model, x0, u[:N], model.p_nom, N)
p_box = np.stack([0.8 * model.p_nom, 1.2 * model.p_nom], axis=1)
res = mhe_solve(MheProblem(y, u[:N], DeadZoneSpec(0.0), model.state_box, p_box,
                           starts=[(x0, model.p_nom)]), model)
print("J* at truth:", res.cost, " x3 error:",
      abs(reconstruct_target(res.xi, res.p, u[:N], model, "z3")[0] - states[-1, 2]))

# %%
# Now the honest run.  Budget warnings are expected on some windows.
with warnings.catch_warnings():
    warnings.simplefilter("ignore", BudgetExhausted)
    trace = run_mhe_trace(model, x0, model.p_nom, u, noise, N, steps, DeadZoneSpec(1e-3), "z3",
                          p_box, multistart_count=8, max_evals=300, seed=2)

err = np.array([abs(zh[0] - zt[0]) for _, zt, zh, _ in trace])
for k, zt, zh, J in trace[::2]:
    print(f"k={k:2d}  x3 true {zt[0]:.5f}  estimate {zh[0]:.5f}  J* {J:.2e}")
print("median |x3 error| = %.2e, worst = %.2e" % (np.median(err), err.max()))

# %%
# Many windows reach J* = 0 away from the truth: a dead zone of 1e-3 over
# ten noisy samples accepts a whole set of initial states, and the solver
# stops at the first member it finds.  This does not contradict a certified
# eps* of 1e-4 for the same window length.  The certificate is a statement
# about randomly drawn candidate pairs (at most a fraction eta of them is
# both consistent and far from the truth), while the solver deliberately
# searches for that rare consistent set.  Treat the trace as a diagnostic.
