"""Command-line interface.

Subcommands: analyze, moments, limits, simulate, verify, pipeline.  Outputs
are deterministic CSV/JSON files under --out (default: $BRANCHFLUCT_OUT or
./branchfluct_out).  Exit codes: 0 success, 1 statistical test failure,
2 input error, 3 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import pipeline as pl
from .errors import (
    BranchfluctError,
    OdeIntegrationError,
    QuadratureError,
)
from .limits import MartingaleLimitSet, crit_cov, small_cov
from .model import validate_model
from .modelfile import load_model_file
from .moments import joint_moment
from .simulate import SimConfig, simulate_ensemble
from .spectral import classify_regimes

EXIT_OK = 0
EXIT_TEST_FAILURE = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3


def _out_dir(args, sub):
    root = args.out or os.environ.get("BRANCHFLUCT_OUT", "branchfluct_out")
    path = os.path.join(root, sub) if args.out is None else root
    os.makedirs(path, exist_ok=True)
    return path


def _parse_floats(text):
    return [float(x) for x in text.split(",") if x.strip() != ""]


def _functional(args, d):
    if args.functional is None:
        return np.ones(d)
    vals = _parse_floats(args.functional)
    if len(vals) != d:
        raise BranchfluctError(
            f"--functional needs {d} entries, got {len(vals)}"
        )
    return np.asarray(vals, dtype=complex)


def cmd_analyze(args):
    model, declared = load_model_file(args.model)
    vrep = validate_model(model, k=4)
    if not vrep.passed:
        print(vrep, file=sys.stderr)
        return EXIT_INPUT
    es, report = pl.analyze_model(model, declared)
    out = _out_dir(args, "analyze")
    path = os.path.join(out, "analyze_report.json")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")
    reg = classify_regimes(es)
    print(f"regime: {reg}")
    print(
        "eigenvalues:",
        ", ".join(f"{l.real:.6g}{l.imag:+.6g}j" for l in es.eigenvalues),
    )
    print(f"report written to {path}")
    return EXIT_OK


def cmd_moments(args):
    model, declared = load_model_file(args.model)
    es, _ = pl.analyze_model(model, declared)
    f = _functional(args, model.d)
    times = _parse_floats(args.grid or "0.25,1,3")
    orders = [int(x) for x in (args.orders or "1,2").split(",")]
    rows = []
    for k in orders:
        for t in times:
            for res in joint_moment(model, es, [f] * k, t):
                rows.append(
                    (
                        res.start_label,
                        res.order,
                        res.t,
                        res.value.real,
                        res.value.imag,
                        res.est_error,
                    )
                )
    out = _out_dir(args, "moments")
    path = pl.write_csv(
        os.path.join(out, "moments.csv"),
        ["start_type", "k", "t", "re", "im", "est_error"],
        rows,
    )
    print(f"moments written to {path}")
    return EXIT_OK


def cmd_limits(args):
    model, declared = load_model_file(args.model)
    es, _ = pl.analyze_model(model, declared)
    reg = classify_regimes(es)
    if reg.regime == "large":
        print(
            "limit covariance kernels are defined for the small/critical "
            "regimes; this spectrum is entirely large",
            file=sys.stderr,
        )
        return EXIT_INPUT
    f = _functional(args, model.d)
    times = sorted(_parse_floats(args.grid or "0,0.5,1"))
    W = MartingaleLimitSet.exact(es, args.start)
    kernel = small_cov if reg.regime == "small" else crit_cov
    rows = []
    for a, r in enumerate(times):
        for t in times[a:]:
            k = kernel(es, model, r, t, f, f, W)
            rows.append(
                (r, t, k.plain.real, k.plain.imag, k.conj.real, k.conj.imag, k.est_error)
            )
    out = _out_dir(args, "limits")
    path = pl.write_csv(
        os.path.join(out, "limit_kernel.csv"),
        ["r", "t", "re_plain", "im_plain", "re_conj", "im_conj", "est_error"],
        rows,
    )
    print(f"{reg.regime}-regime kernel written to {path}")
    return EXIT_OK


def cmd_simulate(args):
    model, _ = load_model_file(args.model)
    times = sorted(_parse_floats(args.grid or "1,2"))
    horizon = args.horizon if args.horizon is not None else max(times)
    cfg = SimConfig(
        horizon=horizon,
        observation_times=times,
        seed=args.seed,
        replicas=args.replicas,
        population_cap=args.cap,
    )
    rs = simulate_ensemble(
        model, args.start, cfg, threads=args.threads, engine=args.engine
    )
    out = _out_dir(args, "simulate")
    files = []
    if args.reduced:
        rows = []
        keep = ~rs.capped
        for ti, t in enumerate(rs.times):
            for x in range(model.d):
                col = rs.counts[keep, ti, x]
                rows.append(
                    (t, model.types.labels[x], col.mean(),
                     col.var(ddof=1) if col.size > 1 else 0.0, int(keep.sum()))
                )
        files.append(
            pl.write_csv(
                os.path.join(out, "reduced.csv"),
                ["time", "type", "mean", "var", "replicas"],
                rows,
            )
        )
    else:
        rows = []
        for r in range(rs.n_replicas):
            for ti, t in enumerate(rs.times):
                rows.append(
                    (r, t)
                    + tuple(int(c) for c in rs.counts[r, ti])
                    + (int(rs.capped[r]),)
                )
        files.append(
            pl.write_csv(
                os.path.join(out, "replicas.csv"),
                ["replica", "time"]
                + [f"count_{l}" for l in model.types.labels]
                + ["capped"],
                rows,
            )
        )
    print(f"simulation output: {', '.join(files)}")
    return EXIT_OK


def cmd_verify(args):
    model, declared = load_model_file(args.model)
    es, _ = pl.analyze_model(model, declared)
    plan = pl.default_plan(model, es, args.replicas)
    rs = pl.run_simulation(
        model, es, plan, args.seed, args.replicas, args.threads, args.cap
    )
    reports = pl.verify_suite(model, es, plan, rs)
    out = _out_dir(args, "verify")
    moments_rows = []
    pl.persist_outputs(out, model, es, plan, rs, reports, moments_rows)
    for r in reports:
        print(r)
    if all(r.passed for r in reports):
        print("all checks passed")
        return EXIT_OK
    return EXIT_TEST_FAILURE


def cmd_pipeline(args):
    out = _out_dir(args, "pipeline")
    code, reports = pl.run_pipeline(
        args.model,
        out,
        args.seed,
        replicas=args.replicas,
        threads=args.threads,
        cap=args.cap,
        flags=vars(args) | {"func": None},
    )
    for r in reports:
        print(r)
    print(f"outputs in {out}")
    return code


def _add_common(p, sim=False):
    p.add_argument("--model", required=True, help="model spec file (JSON)")
    p.add_argument("--out", default=None, help="output directory")
    if sim:
        p.add_argument("--seed", type=int, default=0, help="master seed")
        p.add_argument("--replicas", type=int, default=10_000)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--cap", type=int, default=10_000_000,
                       help="population cap per replica")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="branchfluct",
        description="Moments, limit kernels and Monte Carlo verification for "
        "multitype branching processes",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="validate a model and its spectrum")
    _add_common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("moments", help="exact joint moments as CSV")
    _add_common(p)
    p.add_argument("--grid", default=None, help="comma-separated times")
    p.add_argument("--orders", default="1,2", help="comma-separated orders <= 4")
    p.add_argument("--functional", default=None, help="comma-separated values")
    p.set_defaults(func=cmd_moments)

    p = sub.add_parser("limits", help="limit covariance kernel on a grid")
    _add_common(p)
    p.add_argument("--grid", default=None, help="comma-separated times")
    p.add_argument("--functional", default=None)
    p.add_argument("--start", type=int, default=0, help="starting type index")
    p.set_defaults(func=cmd_limits)

    p = sub.add_parser("simulate", help="Monte Carlo trajectories as CSV")
    _add_common(p, sim=True)
    p.add_argument("--grid", default=None, help="observation times")
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--engine", default="auto", choices=["auto", "ssa", "exact"])
    p.add_argument("--reduced", action="store_true",
                   help="write reduced statistics instead of per-replica rows")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="statistical verification suite")
    _add_common(p, sim=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("pipeline", help="analyze + moments + simulate + verify")
    _add_common(p, sim=True)
    p.set_defaults(func=cmd_pipeline)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (QuadratureError, OdeIntegrationError) as exc:
        stage = getattr(exc, "pipeline_stage", None)
        prefix = f"[stage {stage}] " if stage else ""
        print(f"{prefix}numerical non-convergence: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BranchfluctError as exc:
        stage = getattr(exc, "pipeline_stage", None)
        prefix = f"[stage {stage}] " if stage else ""
        print(f"{prefix}error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
