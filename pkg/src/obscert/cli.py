"""Command-line entry point: ``obscert certify`` and ``obscert mhe-demo``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .deadzone import DeadZoneSpec
from .errors import ObscertError
from .estimator import run_mhe_trace
from .experiment import OUT_ENV, ExperimentRow, emit_outputs, parse_config, resolve_threads, run_experiment
from .sampling import ROLE_INPUT, ROLE_NOISE, sample_input_fourier, sample_noise, substream

log = logging.getLogger("obscert")

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


def _out_dir(args, cfg_out):
    return Path(args.out or cfg_out or os.environ.get(OUT_ENV) or "results")


def cmd_certify(args) -> int:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg.base["seed"] = args.seed
    threads = resolve_threads(args.threads if args.threads is not None else cfg.base["threads"])
    out = _out_dir(args, cfg.base["out"])
    rows = cfg.rows()
    log.info("%d experiment row(s), %d thread(s), output in %s", len(rows), threads, out)
    results = []
    for k, row in enumerate(rows):
        res = run_experiment(row, cache_dir=args.cache, threads=threads)
        d = res.detail
        log.info("row %d: N_s=%d dt1=%.3fs dt2=%.3fs %s", k, d["n_scenarios"], d["dt1"], d["dt2"],
                 " ".join(f"{o['target']}:eps={o['eps']}" for o in d["outcomes"]))
        results.append(res)
    emit_outputs(results, out)
    return EXIT_OK if all(r.success for r in results) else EXIT_INFEASIBLE


def cmd_mhe_demo(args) -> int:
    cfg = parse_config(args.config)
    row = ExperimentRow(cfg.base)
    model = row.model
    opts = cfg.base["mhe"]
    N = row.sampling.N
    steps = max(int(opts["steps"]), N)
    seed = int(opts["seed"])
    X, U = row.sampling.boxes(model)
    u = sample_input_fourier(U, steps, row.sampling.n_f, row.sampling.beta_bar,
                             row.sampling.u_offset, substream(seed, 0, ROLE_INPUT))
    noise = sample_noise(model.n_y, steps, float(opts["noise"]), row.sampling.noise_mode,
                         substream(seed, 0, ROLE_NOISE))
    x0 = X.mean(axis=1) if opts["x0"] is None else np.asarray(opts["x0"], float)
    true_p = model.p_nom if opts["true_p"] is None else np.asarray(opts["true_p"], float)
    rel = float(opts["p_box_rel"])
    p_box = np.stack([(1 - rel) * model.p_nom, (1 + rel) * model.p_nom], axis=1)
    target = opts["target"] or row.targets[0]
    spec = DeadZoneSpec(float(opts["zeta"]), tuple(row.scale), row.r, row.bracket)
    trace = run_mhe_trace(model, x0, true_p, u, noise, N, steps, spec, target, p_box,
                          int(opts["multistart"]), int(opts["max_evals"]), seed,
                          bool(opts["seed_truth"]))
    out = _out_dir(args, cfg.base["out"])
    out.mkdir(parents=True, exist_ok=True)
    nz = len(trace[0][1])
    path = out / "mhe_trace.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step"] + [f"z_true{i}" for i in range(nz)] + [f"z_hat{i}" for i in range(nz)] + ["J_star"])
        for k, zt, zh, j in trace:
            w.writerow([k] + [repr(float(x)) for x in zt] + [repr(float(x)) for x in zh] + [repr(float(j))])
    log.info("wrote %d windows to %s", len(trace), path)
    if opts["eps_star"] is not None:
        err = np.array([np.linalg.norm(zh - zt) for _, zt, zh, _ in trace])
        log.info("fraction of windows with error <= eps*=%g: %.3f", opts["eps_star"],
                 float(np.mean(err <= opts["eps_star"])))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="obscert", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("certify", help="run certification experiments from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--cache", help="directory holding scenario-statistics caches")
    p.set_defaults(func=cmd_certify)
    p = sub.add_parser("mhe-demo", help="run the sliding-window estimator on a simulated trajectory")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_mhe_demo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (ObscertError, OSError) as exc:
        print(f"obscert: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
