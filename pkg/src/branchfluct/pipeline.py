"""End-to-end orchestration: analyze -> moment sanity -> simulate -> verify.

Every run persists deterministic CSVs (shortest-repr float formatting, per
replica streams hashed from the master seed, so outputs are byte-identical
across reruns and thread counts) plus a manifest sufficient to replay it.
"""

from __future__ import annotations

import datetime
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import RegimePreconditionError
from .limits import MartingaleLimitSet, classify_ei, crit_cov, small_cov
from .model import validate_model
from .modelfile import load_model_file
from .moments import joint_moment
from .simulate import SimConfig, estimate_W, fluctuation_matrix, simulate_ensemble
from .simulate.exactlaw import UniformStepLaw
from .simulate.series import fluctuation_exact_mean, large_indices
from .spectral import (
    build_eigenstructure,
    classify_regimes,
    h1_residual,
    mean_generator,
    small_time_regularity,
)
from .verify import (
    TestReport,
    empirical_cov_conditional,
    gaussianity_check,
    mc_vs_exact_moments,
)

H1_GRID = (0.5, 1.0, 2.0)


def fmt(x):
    """Deterministic shortest-ish decimal formatting for CSVs."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) if not isinstance(v, str) else v for v in row))
            fh.write("\n")
    return str(path)


@dataclass
class RunManifest:
    """Replay record written alongside every output set."""

    tool_version: str
    command: str
    flags: dict
    model_file: str
    model_sha256: str
    master_seed: int
    started_utc: str
    finished_utc: str = ""
    outputs: list = field(default_factory=list)

    def write(self, path):
        tmp = str(path) + ".tmp"
        with open(tmp, "w") as fh:
            json.dump(self.__dict__, fh, indent=1, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
        return str(path)


def new_manifest(command, flags, model_file, seed):
    digest = hashlib.sha256(open(model_file, "rb").read()).hexdigest()
    return RunManifest(
        tool_version=__version__,
        command=command,
        flags={k: _jsonable(v) for k, v in flags.items()},
        model_file=str(model_file),
        model_sha256=digest,
        master_seed=int(seed),
        started_utc=_now(),
    )


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _jsonable(v):
    if isinstance(v, (np.integer, np.floating)):
        return v.item()
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def analyze_model(model, declared):
    """Validation + spectral analysis; returns (es, report dict)."""
    vrep = validate_model(model, k=4)
    es = build_eigenstructure(model, declared=declared)
    reg = classify_regimes(es)
    resid = h1_residual(model, es, H1_GRID)
    ones = np.ones(model.d)
    c1_reg, c2_reg = small_time_regularity(model, ones, k=2)
    report = {
        "validation": [
            {"name": c.name, "passed": bool(c.passed), "detail": c.detail}
            for c in vrep.checks
        ],
        "sup_offspring_moment_order4": vrep.sup_moment,
        "generator": mean_generator(model).tolist(),
        "eigenvalues": [[l.real, l.imag] for l in es.eigenvalues],
        "chain_shape": [
            [es.k_count(i, j) for j in range(es.p(i))] for i in range(es.m)
        ],
        "m_L": reg.m_L,
        "m_C": reg.m_C,
        "regime": reg.regime,
        "regime_labels": list(reg.labels),
        "spectral_gap": reg.spectral_gap,
        "spectral_resolution_residuals": {
            "t": list(H1_GRID),
            "residual": [float(r) for r in resid],
        },
        "short_time_regularity": {"k": 2, "c1": c1_reg, "c2": c2_reg},
        "model_valid": vrep.passed,
    }
    return es, report


@dataclass
class SimPlan:
    """Regime-specific simulation and verification plan."""

    regime: str
    start_type: int
    functional: np.ndarray
    n: float
    t_grid: tuple
    T_W: float
    observation_times: tuple
    engine: str
    moment_time: float


def default_plan(model, es, replicas, budget_events=4e8, start_type=0):
    """Desk-scale defaults: horizons sized against a per-run event budget.

    The closed-form engine, when the model qualifies, has O(1) cost per
    observation and ignores the budget.  Event-driven runs size the horizon
    so that replicas x expected population stays within budget.
    """
    reg = classify_regimes(es)
    lam1 = es.lambda1
    exact = UniformStepLaw.detect(model) is not None
    engine = "exact" if exact else "ssa"
    t_rule = math.log(100.0) / (2 * es.eigenvalues[reg.m_L - 1].real - lam1)

    def pop_at(T):
        from scipy.linalg import expm

        return float(
            (expm(T * mean_generator(model)) @ np.ones(model.d)).max()
        )

    def budget_time(default):
        if exact:
            return default
        T = default
        while T > 2.0 / lam1 and replicas * pop_at(T) > budget_events:
            T *= 0.85
        return T

    if reg.regime == "large":
        T = budget_time(8.0 / lam1)
        t_grid = tuple(T * c for c in (0.125, 0.25, 0.5, 1.0))
        T_W = T
        obs = sorted(set(t_grid) | {T_W / 2, T_W})
        f = np.ones(model.d)
        n = 0.0
    elif reg.regime == "small":
        t_grid = (0.0, 0.5, 1.0)
        if exact:
            n = max(16.0 / lam1, t_rule)
            T_W = n + max(t_grid) + 8.0 / lam1
            f = np.eye(model.d)[0].astype(complex)
        else:
            n = max(3.0 / lam1, budget_time(8.0 / lam1) - max(t_grid))
            T_W = min(t_rule, n)
            # without a cheap long-horizon estimate of the limits, restrict to
            # functionals with no retained-spectrum centering
            from .spectral import project_decompose

            _, f = project_decompose(es, np.eye(model.d)[0].astype(complex), 0.0)
        obs = sorted({T_W / 2, T_W} | {n + t for t in t_grid})
    else:  # critical
        t_grid = (0.5, 1.0)
        f = np.array(es.phi[reg.m_L][0][0])
        if np.abs(f.imag).max() < 1e-12:
            f = f.real.astype(complex)
        horizon_default = 12.0 / lam1
        T = budget_time(horizon_default)
        n = T / max(t_grid)
        T_W = min(t_rule * 1.3, n * min(t_grid) * 0.9)
        obs = sorted({T_W / 2, T_W} | {n * t for t in t_grid})
    return SimPlan(
        regime=reg.regime,
        start_type=start_type,
        functional=np.asarray(f, dtype=complex),
        n=float(n),
        t_grid=tuple(t_grid),
        T_W=float(T_W),
        observation_times=tuple(obs),
        engine=engine,
        moment_time=float(min(t for t in obs if t > 0)),
    )


def run_simulation(model, es, plan, seed, replicas, threads=None, cap=10_000_000):
    cfg = SimConfig(
        horizon=max(plan.observation_times),
        observation_times=plan.observation_times,
        seed=seed,
        replicas=replicas,
        population_cap=cap,
    )
    rs = simulate_ensemble(
        model, plan.start_type, cfg, threads=threads, engine=plan.engine
    )
    reg = classify_regimes(es)
    for (i, j, k) in large_indices(es, reg.m_L):
        estimate_W(es, rs, i, j, k, plan.T_W)
    return rs


def _unit_kernels(model, es, plan, kernel_fn):
    """Kernel matrices per unit leading-limit value on the plan's grid."""
    W1 = MartingaleLimitSet.from_estimates(
        {(0, 0, i): 1.0 for i in range(es.k_count(0, 0))}
    )
    G = len(plan.t_grid)
    plain = np.zeros((G, G), dtype=complex)
    conj = np.zeros((G, G), dtype=complex)
    for a in range(G):
        for b in range(G):
            r, t = sorted((plan.t_grid[a], plan.t_grid[b]))
            k = kernel_fn(es, model, r, t, plan.functional, plan.functional, W1)
            plain[a, b] = k.plain
            conj[a, b] = k.conj
    return plain, conj


def verify_suite(model, es, plan, rs, level=0.01, se_multiple=3.0):
    """Regime-appropriate statistical verification; returns TestReports."""
    reports = []
    reg = classify_regimes(es)
    ones = np.ones(model.d)
    for k in (1, 2):
        reports.append(
            mc_vs_exact_moments(
                model, es, [ones] * k, plan.moment_time, rs,
                se_multiple=se_multiple,
            )
        )
    keep = ~rs.capped
    if plan.regime == "large":
        for (i, j, k), west in sorted(rs.w_estimates.items()):
            vals = west[keep]
            target = float(es.phi[i][j][k][plan.start_type].real)
            obs = float(vals.real.mean())
            se = float(vals.real.std(ddof=1) / math.sqrt(vals.size))
            reports.append(
                TestReport(
                    name=f"martingale mean ({i + 1},{j + 1},{k + 1})",
                    observed=obs,
                    target=target,
                    se_or_bound=se,
                    passed=abs(obs - target) <= se_multiple * se,
                    replicas=int(keep.sum()),
                    seed=rs.seed,
                    extras={"bias_indicator_mean": float(np.nanmean(rs.w_bias[(i, j, k)]))},
                )
            )
        from .verify import slln_check

        # gate strictly before the estimation horizon so the paired
        # difference is not identically zero for pure eigenfunctionals
        slln_grid = [t for t in plan.t_grid if 0 < t < plan.T_W]
        if slln_grid:
            reports.append(
                slln_check(model, es, ones, rs, slln_grid, se_multiple=se_multiple)
            )
        return reports

    kernel_fn = small_cov if plan.regime == "small" else crit_cov
    unit_plain, unit_conj = _unit_kernels(model, es, plan, kernel_fn)
    F = fluctuation_matrix(es, rs, plan.functional, plan.regime, plan.n, plan.t_grid)
    exact_mean = fluctuation_exact_mean(
        model, es, plan.functional, plan.regime, plan.n, plan.t_grid,
        plan.start_type,
    )
    w = rs.w_estimates[(0, 0, 0)].real
    Fr = F.real[keep]
    cov = empirical_cov_conditional(
        Fr, Fr, w[keep], grid=plan.t_grid,
        unit_plain=unit_plain.real, unit_conj=unit_conj.real,
        mean_f=exact_mean.real, mean_g=exact_mean.real,
    )
    dev = cov.max_deviation_multiple()
    reports.append(
        TestReport(
            name=f"{plan.regime}-regime covariance kernel",
            observed=dev,
            target=0.0,
            se_or_bound=se_multiple,
            passed=dev <= se_multiple,
            replicas=int(keep.sum()),
            seed=rs.seed,
            extras={
                "empirical": cov.plain.real,
                "target": np.asarray(cov.target_plain).real,
                "jackknife_se": cov.se_plain,
                "limit_estimate_mean": cov.w_bar.real,
            },
        )
    )
    if plan.regime == "small":
        # the critical regime's conditional variance converges only
        # polynomially in the horizon, so an unstratified distribution test
        # is meaningful at desk scale in the small regime only
        var_unit = np.real(np.diag(unit_plain))
        targets = np.maximum(w[keep, None], 0.0) * var_unit[None, :]
        rep = gaussianity_check(
            Fr - exact_mean.real[None, :], targets, level=level, seed=rs.seed
        )
        rep.name = "small-regime gaussianity"
        reports.append(rep)
    return reports


def persist_outputs(out_dir, model, es, plan, rs, reports, moments_rows):
    """Write the CSV/JSON artefacts; returns the list of files written."""
    files = []
    files.append(
        write_csv(
            os.path.join(out_dir, "moments_sanity.csv"),
            ["start_type", "k", "t", "re", "im", "est_error"],
            moments_rows,
        )
    )
    rows = []
    keep = ~rs.capped
    for ti, t in enumerate(rs.times):
        for x in range(model.d):
            col = rs.counts[keep, ti, x]
            rows.append(
                (
                    t,
                    model.types.labels[x],
                    col.mean(),
                    col.var(ddof=1) if col.size > 1 else 0.0,
                    int(keep.sum()),
                )
            )
    files.append(
        write_csv(
            os.path.join(out_dir, "population_summary.csv"),
            ["time", "type", "mean", "var", "replicas"],
            rows,
        )
    )
    if plan.regime in ("small", "critical"):
        F = fluctuation_matrix(es, rs, plan.functional, plan.regime, plan.n, plan.t_grid)
        Fr = F.real[keep]
        rows = [
            (t, Fr[:, gi].mean(), (Fr[:, gi] ** 2).mean(), Fr[:, gi].var(ddof=1))
            for gi, t in enumerate(plan.t_grid)
        ]
        files.append(
            write_csv(
                os.path.join(out_dir, "series_summary.csv"),
                ["t", "mean", "second_moment", "var"],
                rows,
            )
        )
    else:
        rows = []
        for (i, j, k), west in sorted(rs.w_estimates.items()):
            rows.append(
                (
                    f"({i + 1},{j + 1},{k + 1})",
                    plan.T_W,
                    west[keep].real.mean(),
                    west[keep].real.var(ddof=1),
                )
            )
        files.append(
            write_csv(
                os.path.join(out_dir, "martingale_limits.csv"),
                ["triple", "T_W", "mean", "var"],
                rows,
            )
        )
    report_doc = {
        "plan": {
            "regime": plan.regime,
            "n": plan.n,
            "t_grid": list(plan.t_grid),
            "T_W": plan.T_W,
            "engine": plan.engine,
            "functional": [[z.real, z.imag] for z in plan.functional],
            "observation_times": list(plan.observation_times),
        },
        "tests": [r.to_dict() for r in reports],
        "all_passed": all(r.passed for r in reports),
        "capped_replicas": int(rs.capped.sum()),
    }
    path = os.path.join(out_dir, "verify_report.json")
    with open(path, "w") as fh:
        json.dump(report_doc, fh, indent=1, sort_keys=True, default=_plainify)
        fh.write("\n")
    files.append(path)
    txt = os.path.join(out_dir, "verify_report.txt")
    with open(txt, "w") as fh:
        for r in reports:
            fh.write(str(r) + "\n")
    files.append(txt)
    return files


def _plainify(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, complex):
        return [v.real, v.imag]
    raise TypeError(f"cannot serialise {type(v)}")


def run_pipeline(
    model_path,
    out_dir,
    seed,
    replicas=10_000,
    threads=None,
    cap=10_000_000,
    flags=None,
):
    """Full pipeline; returns (exit_code, reports).  Stage failures abort with
    the stage name in the raised error; earlier outputs are retained."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = new_manifest("pipeline", flags or {}, model_path, seed)
    stage = "analyze"
    try:
        model, declared = load_model_file(model_path)
        es, analysis = analyze_model(model, declared)
        apath = os.path.join(out_dir, "analyze_report.json")
        with open(apath, "w") as fh:
            json.dump(analysis, fh, indent=1, sort_keys=True)
            fh.write("\n")
        manifest.outputs.append(apath)

        stage = "moments"
        plan = default_plan(model, es, replicas)
        ones = np.ones(model.d)
        moments_rows = []
        for k in (1, 2):
            for t in (plan.moment_time, 2 * plan.moment_time):
                for res in joint_moment(model, es, [ones] * k, t):
                    moments_rows.append(
                        (
                            res.start_label,
                            res.order,
                            res.t,
                            res.value.real,
                            res.value.imag,
                            res.est_error,
                        )
                    )

        stage = "simulate"
        rs = run_simulation(model, es, plan, seed, replicas, threads, cap)

        stage = "verify"
        reports = verify_suite(model, es, plan, rs)
        manifest.outputs.extend(
            persist_outputs(out_dir, model, es, plan, rs, reports, moments_rows)
        )
        manifest.finished_utc = _now()
        manifest.outputs.append(os.path.join(out_dir, "manifest.json"))
        manifest.write(os.path.join(out_dir, "manifest.json"))
        return (0 if all(r.passed for r in reports) else 1), reports
    except Exception as exc:
        exc.pipeline_stage = stage
        raise
