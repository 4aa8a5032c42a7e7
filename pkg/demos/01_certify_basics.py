"""
Certifying a reconstruction precision by hand
=============================================

Walks through one certification from scratch with the library pieces:
draw scenarios, reduce each one to three numbers, then scan the design
grid.  Run with ``python demos/01_certify_basics.py``.
"""

# %%
# The reactor model ships with the package.  Its only measured output is x2.
import numpy as np

from obscert import CertParams, SamplingConfig, build_design_grid, certify, cstr_model, sample_count
from obscert.deadzone import batch_stats
from obscert.sampling import draw_scenarios

model = cstr_model()
print("p_nom:", model.p_nom, " state box:", model.state_box.tolist())

# %%
# How many scenarios do we need?  With 200 grid points, eta = 1 %,
# delta = 0.1 % and m = 10 tolerated violations:
params = CertParams(eta=0.01, delta=0.001, m=10)
grid = build_design_grid()
n_s = sample_count(params, grid.size)
print("grid size", grid.size, "-> scenarios needed:", n_s)

# %%
# A scenario is a true pair (q_x, q_p) and a candidate pair (xi, p) that
# share the same input profile and measurement noise.
cfg = SamplingConfig(N=20, noise=0.001, master_seed=1)
scenarios, sims = draw_scenarios(range(n_s), cfg, model)
s = scenarios[0]
print("scenario 0: q_x", s.q_x.round(4), " xi", s.xi.round(4))

# %%
# Each scenario collapses to
#   a  - smallest dead zone that keeps the true pair consistent,
#   b  - smallest dead zone that no longer rejects the candidate,
#   dz - how far apart the two pairs' targets are.
targets = ["z1", "z2", "z3"]
stats = batch_stats(scenarios, sims, model, targets)
print("median a = %.2e, median b = %.2e" % (np.median(stats.a), np.median(stats.b)))

# %%
# The grid scan returns the smallest eps (and within it the smallest zeta)
# violated by at most m scenarios.
for k, name in enumerate(targets):
    out = certify(stats, grid, params, k, target_name=name)
    print(f"{name}: eps* = {out.eps:.3g}  zeta* = {out.zeta:.3g}  "
          f"failures = {out.failure_count}/{params.m}  points scanned = {out.scanned_count}")
