import math

import numpy as np
import pytest
import scipy.linalg

from branchfluct import canonical
from branchfluct.errors import (
    DomainError,
    EigenStructureRejection,
    JordanDeclarationRequired,
    NotSupercriticalError,
)
from branchfluct.model import build_model
from branchfluct.spectral import (
    build_eigenstructure,
    classify_regimes,
    h1_residual,
    make_eigenstructure,
    mean_generator,
    project_decompose,
    projection_set,
    semigroup_apply,
    small_time_regularity,
)


def test_mean_generator_examples(pairs):
    np.testing.assert_allclose(mean_generator(pairs["model_y"][0]), [[1.0]])
    np.testing.assert_allclose(
        mean_generator(pairs["model_s"][0]), [[1, 1], [1, 1]]
    )
    np.testing.assert_allclose(
        mean_generator(pairs["model_j"][0]), [[1, 1], [0, 1]]
    )
    np.testing.assert_allclose(
        mean_generator(pairs["model_l"][0]), [[3, 0], [1, 2]]
    )


def test_semigroup_apply_examples(pairs):
    A = mean_generator(pairs["model_y"][0])
    np.testing.assert_allclose(semigroup_apply(A, 0.0, [1.0]), [1.0])
    assert semigroup_apply(A, 1.0, [1.0])[0] == pytest.approx(math.e)
    Aj = mean_generator(pairs["model_j"][0])
    np.testing.assert_allclose(
        semigroup_apply(Aj, 1.0, [0.0, 1.0]), [math.e, math.e], rtol=1e-12
    )
    with pytest.raises(DomainError):
        semigroup_apply(A, -0.5, [1.0])


def test_semigroup_property(pairs):
    A = mean_generator(pairs["model_l"][0])
    rng = np.random.default_rng(3)
    f = rng.standard_normal(2)
    lhs = semigroup_apply(A, 1.7, f)
    rhs = semigroup_apply(A, 0.9, semigroup_apply(A, 0.8, f))
    np.testing.assert_allclose(lhs, rhs, rtol=1e-10)


def test_numeric_eigenstructure_model_s(pairs):
    es = build_eigenstructure(pairs["model_s"][0])
    assert es.eigenvalues[0] == pytest.approx(2.0)
    assert abs(es.eigenvalues[1]) < 1e-12
    v = es.phi[0][0][0]
    assert v[0] == pytest.approx(v[1])  # leading eigenvector is constant
    v2 = es.phi[1][0][0]
    assert v2[0] == pytest.approx(-v2[1])


def test_declared_model_j_accepted(pairs):
    model, es = pairs["model_j"]
    np.testing.assert_allclose(es.nilpotent.real, [[0, 1], [0, 0]], atol=1e-12)
    assert es.chain_links[(0, 1, 0)] == 0


def test_model_j_without_declaration_demands_jordan(pairs):
    with pytest.raises(JordanDeclarationRequired):
        build_eigenstructure(pairs["model_j"][0])


def test_rejection_names_triple(pairs):
    model = pairs["model_s"][0]
    bad = make_eigenstructure(
        eigenvalues=[2.0, 0.0],
        phi=[[[(1.0, 1.0)]], [[(1.0, -1.0)]]],
        duals=[[[(0.5, 0.6)]], [[(0.5, -0.5)]]],  # wrong first dual
    )
    with pytest.raises(EigenStructureRejection) as err:
        build_eigenstructure(model, declared=bad)
    assert "(1, 1, 1)" in str(err.value)


def test_classify_examples(pairs):
    expected = {
        "model_y": (1, 1, 1),
        "model_l": (2, 2, 2),
        "model_c": (1, 2, 2),
        "model_s": (1, 1, 2),
        "model_j": (1, 1, 1),
    }
    for name, (mL, mC, m) in expected.items():
        reg = classify_regimes(pairs[name][1])
        assert (reg.m_L, reg.m_C, reg.m) == (mL, mC, m), name
    assert classify_regimes(pairs["model_s"][1]).regime == "small"
    assert classify_regimes(pairs["model_c"][1]).regime == "critical"
    assert classify_regimes(pairs["model_l"][1]).regime == "large"


def test_classify_literal_block_matrix():
    # classification example: generator [[2,0],[1,1]] has eigenvalues (2, 1)
    # with the sub-leading one exactly critical
    model = build_model(
        labels=["a", "b"],
        q=np.zeros((2, 2)),
        gamma=[1.0, 1.0],
        offspring=[[(1.0, [3, 0])], [(1.0, [1, 2])]],
    )
    np.testing.assert_allclose(mean_generator(model), [[2, 0], [1, 1]])
    reg = classify_regimes(build_eigenstructure(model))
    assert (reg.m_L, reg.m_C) == (1, 2)


def test_not_supercritical():
    dying = build_model(
        labels=["a"], q=[[0.0]], gamma=[1.0], offspring=[[(1.0, [0])]]
    )
    with pytest.raises(NotSupercriticalError):
        classify_regimes(build_eigenstructure(dying))


def test_project_decompose_examples(pairs):
    model, es = pairs["model_s"]
    phi1 = np.array(es.phi[0][0][0])
    f1, f2 = project_decompose(es, phi1, 0.0)
    np.testing.assert_allclose(f1, phi1, atol=1e-12)
    np.testing.assert_allclose(f2, 0 * phi1, atol=1e-12)
    phi2 = np.array(es.phi[1][0][0])
    f1, f2 = project_decompose(es, phi2, 0.0)
    np.testing.assert_allclose(f1, 0 * phi2, atol=1e-12)
    f = np.array([1.0, 0.0])
    f1, f2 = project_decompose(es, f, 0.0)
    np.testing.assert_allclose(f1, [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(f2, [0.5, -0.5], atol=1e-12)
    np.testing.assert_allclose(f1 + f2, f, atol=1e-15)
    assert es.in_kernel(f2, 1)
    # idempotence of the retained part at lag zero
    g1, _ = project_decompose(es, f1, 0.0)
    np.testing.assert_allclose(g1, f1, atol=1e-12)


def test_h1_residual_full_and_truncated(pairs):
    model, es = pairs["model_s"]
    res = h1_residual(model, es, [0.5, 1.0, 2.0])
    assert (res <= 1e-9).all()
    truncated = make_eigenstructure(
        eigenvalues=[2.0],
        phi=[[[(1.0, 1.0)]]],
        duals=[[[(0.5, 0.5)]]],
    )
    t_grid = [1.0, 2.0, 3.0]
    res_t = h1_residual(model, truncated, t_grid)
    # remainder is rank one: residual proportional to t e^{(lam2 - lam_m) t}
    # with lam_m = 2 here, i.e. proportional to t e^{-2t}
    ratios = [
        res_t[i] / (t * math.exp(-2 * t)) for i, t in enumerate(t_grid)
    ]
    assert max(ratios) / min(ratios) == pytest.approx(1.0, rel=1e-8)
    assert h1_residual(model, es, [0.0])[0] == 0.0


def test_projection_set_invariants(pairs):
    model, es = pairs["model_l"]
    ps = projection_set(es)
    total = sum(ps.full)
    np.testing.assert_allclose(total, np.eye(2), atol=1e-9)
    np.testing.assert_allclose(ps.full[0] @ ps.full[1], 0 * total, atol=1e-9)
    # rank-resolved pieces recombine
    np.testing.assert_allclose(
        sum(ps.by_rank[0]), ps.full[0], atol=1e-12
    )


def test_nilpotent_power_vanishes(pairs):
    _, es = pairs["model_j"]
    np.testing.assert_allclose(es.npow(es.max_p), np.zeros((2, 2)), atol=0)


def test_eigen_identities_on_chain(pairs):
    model, es = pairs["model_j"]
    A = mean_generator(model)
    for t in (0.1, 1.0, 2.0):
        E = scipy.linalg.expm(t * A)
        lhs = E @ es.phi[0][1][0]
        rhs = math.exp(t) * (es.phi[0][1][0] + t * es.phi[0][0][0])
        np.testing.assert_allclose(lhs, rhs, rtol=1e-8)


def test_complex_spectrum_conjugate_pairing(cyclic_model):
    es = build_eigenstructure(cyclic_model)
    lams = es.eigenvalues
    assert lams[0] == pytest.approx(1.0)
    assert lams[1] == pytest.approx(np.conj(lams[2]))
    np.testing.assert_allclose(
        es.phi[1][0][0], np.conj(es.phi[2][0][0]), atol=1e-9
    )
    reg = classify_regimes(es)
    assert (reg.m_L, reg.m_C, reg.regime) == (1, 1, "small")


def test_small_time_regularity_examples(pairs):
    model = pairs["model_y"][0]
    c1, c2 = small_time_regularity(model, np.zeros(1), k=2)
    assert c1 == 0.0 and c2 == 0.0
    c1, c2 = small_time_regularity(model, np.ones(1), k=2)
    assert c1 == pytest.approx(math.e - 1, rel=1e-9)  # max at t = 1
    assert c2 > 0 and np.isfinite(c2)
    frozen = build_model(
        labels=["a"], q=[[0.0]], gamma=[0.0], offspring=[[(1.0, [2])]]
    )
    c1, c2 = small_time_regularity(frozen, np.ones(1), k=2)
    assert c1 == 0.0
    assert abs(c2) < 1e-6  # quadrature noise around an exact zero
