"""
Horizon length and noise level
==============================

Runs the sweep in ``configs/baseline.json`` (N in {5, 10, 20} times two
noise levels, 3784 scenarios per row) through the experiment runner and
prints the result table.  Longer windows should never certify a worse
precision, and more noise should never certify a better one.  Takes about
ten seconds.
"""

# %%
from pathlib import Path
import tempfile

from obscert.experiment import emit_outputs, parse_config, read_results, run_experiment

here = Path(__file__).parent
cfg = parse_config(here / "configs" / "baseline.json")
rows = cfg.rows()
print(len(rows), "rows, scenarios per row:", rows[0].n_required)

# %%
# Statistics are cached per configuration hash, so the second pass only
# repeats the grid search.
cache = Path(tempfile.mkdtemp())
results = [run_experiment(r, cache_dir=cache) for r in rows]
rerun = [run_experiment(r, cache_dir=cache) for r in rows]

out = Path(tempfile.mkdtemp())
emit_outputs(results, out)
print(f"{'N':>3} {'noise':>6} {'eps1':>8} {'eps2':>8} {'eps3':>8} {'zeta3':>8} {'dt1':>6} {'dt2':>6} {'dt1 cached':>10}")
for rec, again in zip(read_results(out / "results.csv"), rerun):
    print(f"{rec['N']:>3} {rec['noise']:>6} {rec['eps1']:>8.3g} {rec['eps2']:>8.3g} {rec['eps3']:>8.3g} "
          f"{rec['zeta3']:>8.3g} {rec['dt1']:>6.2f} {rec['dt2']:>6.3f} {again.csv_row['dt1']:>10.4f}")

# %%
# Only the shortest, noisiest window loses precision: with five samples and
# noise 0.003 the dead zone has to open to about 2e-3, and some candidates
# whose states differ by more than 0.1 then fit the data just as well.  The
# temperature target z3 stays better resolved than the full state.

# %%
# The same table from the command line:
#   obscert certify --config demos/configs/baseline.json --out results --cache cache
print("results written to", out)
