import math

import numpy as np
import pytest

from branchfluct import canonical
from branchfluct.errors import DegenerateCovarianceError, DomainError
from branchfluct.limits import MartingaleLimitSet, small_cov
from branchfluct.simulate import SimConfig, estimate_W, fluctuation_matrix, simulate_ensemble
from branchfluct.simulate.series import fluctuation_exact_mean
from branchfluct.spectral import build_eigenstructure, project_decompose
from branchfluct.verify import (
    FiniteVectorSpec,
    berry_esseen_bound,
    empirical_cov_conditional,
    gaussianity_check,
    mc_vs_exact_moments,
    slln_check,
)


def test_gaussianity_null_passes():
    rng = np.random.default_rng(0)
    series = rng.standard_normal((4000, 3))
    rep = gaussianity_check(series, np.ones(4000))
    assert rep.passed
    assert rep.extras["dropped_replicas"] == 0


def test_gaussianity_rejects_exponential():
    rng = np.random.default_rng(1)
    series = rng.exponential(size=(10000, 2)) - 1.0
    rep = gaussianity_check(series, np.ones(10000))
    assert not rep.passed


def test_gaussianity_drops_degenerate_targets():
    rng = np.random.default_rng(2)
    series = rng.standard_normal((2000, 2))
    targets = np.ones(2000)
    targets[:50] = 0.0
    rep = gaussianity_check(series, targets)
    assert rep.extras["dropped_replicas"] == 50
    targets[:200] = 0.0
    with pytest.raises(DomainError):
        gaussianity_check(series, targets)


def test_empirical_cov_refuses_small_samples():
    with pytest.raises(DomainError):
        empirical_cov_conditional(
            np.zeros((50, 2)), np.zeros((50, 2)), np.ones(50)
        )


def test_empirical_cov_zero_series():
    cov = empirical_cov_conditional(
        np.zeros((200, 2)), np.zeros((200, 2)), np.ones(200)
    )
    np.testing.assert_array_equal(cov.plain, np.zeros((2, 2)))


def test_empirical_cov_symmetry_and_targets():
    rng = np.random.default_rng(3)
    L = np.array([[1.0, 0.0], [0.6, 0.8]])
    series = rng.standard_normal((5000, 2)) @ L.T
    w = np.ones(5000)
    unit = L @ L.T
    cov = empirical_cov_conditional(
        series, series, w, unit_plain=unit, unit_conj=unit
    )
    np.testing.assert_allclose(cov.plain, cov.plain.T, atol=1e-12)
    assert cov.max_deviation_multiple() <= 3.5
    assert (np.asarray(cov.se_plain) > 0).all()


def test_berry_esseen_scaling_and_monotonicity():
    rad = FiniteVectorSpec(points=[[-1.0], [1.0]], probs=[0.5, 0.5])
    res100 = berry_esseen_bound([rad] * 100)
    res400 = berry_esseen_bound([rad] * 400)
    assert res400.bound == pytest.approx(res100.bound / 2, rel=1e-12)
    scaled = FiniteVectorSpec(points=[[-5.0], [5.0]], probs=[0.5, 0.5])
    res_scaled = berry_esseen_bound([scaled] * 100)
    assert res_scaled.bound == pytest.approx(res100.bound, rel=1e-12)
    assert res100.c_k == pytest.approx(42.0)
    custom = berry_esseen_bound([rad] * 100, c_k=1.0)
    assert custom.bound == pytest.approx(res100.bound / 42.0, rel=1e-12)


def test_berry_esseen_degenerate_covariance():
    flat = FiniteVectorSpec(
        points=[[-1.0, -1.0], [1.0, 1.0]], probs=[0.5, 0.5]
    )
    with pytest.raises(DegenerateCovarianceError):
        berry_esseen_bound([flat] * 10)


def test_berry_esseen_lhs_estimate():
    rad = FiniteVectorSpec(points=[[-1.0], [1.0]], probs=[0.5, 0.5])
    res = berry_esseen_bound([rad] * 100, lhs_samples=4000, seed=5)
    assert 0 < res.lhs_estimate < res.bound


def test_mc_vs_exact_moments_yule(pairs):
    model, es = pairs["model_y"]
    cfg = SimConfig(horizon=1.0, observation_times=(1.0,), seed=21,
                    replicas=20000)
    rs = simulate_ensemble(model, 0, cfg, engine="exact")
    rep = mc_vs_exact_moments(model, es, [np.ones(1)] * 2, 1.0, rs)
    assert rep.passed
    assert rep.target == pytest.approx(2 * math.e ** 2 - math.e, rel=1e-8)


def test_slln_check_model_j(pairs):
    model, es = pairs["model_j"]
    grid = (1.0, 2.0, 4.0)
    cfg = SimConfig(horizon=8.0, observation_times=grid + (8.0,), seed=22,
                    replicas=4000)
    rs = simulate_ensemble(model, 0, cfg, engine="ssa")
    for key in ((0, 0, 0), (0, 1, 0)):
        estimate_W(es, rs, *key, 8.0)
    rep = slln_check(model, es, np.array([0.0, 1.0]), rs, grid)
    assert rep.passed
    means = rep.extras["residual_means"]
    assert means[-1] < means[0]


def test_small_regime_covariance_three_types(small3_model):
    # Monte Carlo validation of the assembled small-regime kernel on a model
    # whose remainder space is two-dimensional (all three blocks active)
    model = small3_model
    es = build_eigenstructure(model)
    n, grid = 7.0, (0.0, 1.0)
    T_W = 12.0
    obs = tuple(sorted({T_W / 2, T_W} | {n + t for t in grid}))
    cfg = SimConfig(horizon=T_W, observation_times=obs, seed=23, replicas=6000)
    rs = simulate_ensemble(model, 0, cfg, engine="ssa", threads=4)
    estimate_W(es, rs, 0, 0, 0, T_W)
    f = np.array([0.3, 1.0, -0.5], dtype=complex)
    F = fluctuation_matrix(es, rs, f, "small", n, grid).real
    mean = fluctuation_exact_mean(model, es, f, "small", n, grid, 0).real
    W1 = MartingaleLimitSet.from_estimates({(0, 0, 0): 1.0})
    unit = np.zeros((2, 2))
    for a in range(2):
        for b in range(2):
            r, t = sorted((grid[a], grid[b]))
            unit[a, b] = small_cov(es, model, r, t, f, f, W1).plain.real
    w = rs.w_estimates[(0, 0, 0)].real
    cov = empirical_cov_conditional(
        F, F, w, grid=grid, unit_plain=unit, mean_f=mean, mean_g=mean
    )
    assert cov.max_deviation_multiple() <= 3.0, (
        cov.plain, cov.target_plain, cov.se_plain
    )
