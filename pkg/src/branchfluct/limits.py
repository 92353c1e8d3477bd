"""Limit-theorem objects for the supercritical fluctuation analysis.

Evaluates the martingale transforms, the strong-law limit combination, the
four covariance building blocks entering the Gaussian limit processes, and
the assembled conditional covariance kernels for the small and critical
regimes.  Martingale-limit values are explicit inputs (exact expectations or
simulation estimates) so every kernel evaluation is deterministic.

All eigenvalue/rank/vector indices are 0-based in this module; error
messages report the conventional 1-based triples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.integrate

from ._propagator import TimePropagator
from .errors import (
    CriticalClassificationError,
    DomainError,
    KernelPreconditionError,
    RegimePreconditionError,
)
from .model import as_functional
from .moments import QuadratureConfig, covariance_xt
from .spectral import classify_regimes, mean_generator, project_decompose

_KER_TOL = 1e-9


@dataclass(frozen=True)
class MartingaleLimitSet:
    """Martingale limit values keyed by (eigenvalue, rank, vector) triple.

    ``provenance`` records whether the numbers are exact expectations (the
    chain vector evaluated at the starting type) or simulation estimates.
    The nilpotent operator acts on limits by chain descent, mirroring its
    action on the chain vectors.
    """

    values: dict
    provenance: str

    def get(self, i, j, k):
        return self.values[(i, j, k)]

    def w11(self, i):
        return self.values[(0, 0, i)]

    def n_image(self, es, i, j, k):
        """Index of N W_{i,j,k}, or None when the limit is annihilated."""
        if j == 0:
            return None
        return (i, j - 1, es.chain_links[(i, j, k)])

    @classmethod
    def exact(cls, es, start_index):
        """Exact expectations: E[W_{i,j,k}] equals the chain vector at the start."""
        vals = {
            (i, j, k): complex(es.phi[i][j][k][start_index])
            for (i, j, k) in es.indices()
        }
        return cls(values=vals, provenance="exact expectation")

    @classmethod
    def from_estimates(cls, values):
        return cls(values=dict(values), provenance="simulation estimate")


@dataclass(frozen=True)
class CriticalClassification:
    """Critical eigenspace membership of a functional."""

    nu: int  # eigenvalue index (0-based)
    lam: complex
    p: int  # depth: largest c >= 1 with N^(c-1) projection nonzero


@dataclass(frozen=True)
class KernelTerm:
    value: complex
    est_error: float


@dataclass(frozen=True)
class CovKernel:
    """One conditional covariance kernel entry, plain and conjugated."""

    plain: complex
    conj: complex
    est_error: float


def martingale_functional(es, i, j, k, t):
    """The vector whose pairing with X_t is the (i,j,k) martingale at time t."""
    if t < 0:
        raise DomainError("martingale time must be nonnegative")
    d = es.d
    out = np.zeros(d, dtype=complex)
    for c in range(j + 1):
        vec = es.descend(i, j, k, c)
        out += ((-t) ** c / math.factorial(c)) * vec
    return np.exp(-es.eigenvalues[i] * t) * out


def slln_limit(es, f, W):
    """Strong-law limit of the growth-normalised pairing with f."""
    f = np.asarray(f, dtype=complex)
    p1 = es.p(0)
    h = es.npow(p1 - 1) @ f
    total = 0j
    for i in range(es.k_count(0, 0)):
        total += complex(np.dot(es.duals[0][0][i], h)) * W.w11(i)
    return total / math.factorial(p1 - 1)


def _left_vectors(es):
    """Rows phi-tilde_{1,1}^{(i)} N^{p1-1}, the weighting functionals of all kernels."""
    Np = es.npow(es.p(0) - 1)
    return [es.duals[0][0][i] @ Np for i in range(es.k_count(0, 0))]


def _pair_form(model):
    T2 = model.offspring_tensor(2)
    gamma = model.gamma

    def V(a_rows, b_rows):
        return gamma[None, :] * np.einsum("xyz,ny,nz->nx", T2, a_rows, b_rows)

    return V


def _nilpotent_stack(es, vec, depth):
    """[vec, N vec, N^2 vec, ...] up to the given depth."""
    out = [np.asarray(vec, dtype=complex)]
    for _ in range(depth - 1):
        out.append(es.nilpotent @ out[-1])
    return out


def _exp_tail(coefs, rho, U):
    """| integral_U^inf sum_c coefs[c] u^c e^{rho u} du | for Re(rho) < 0."""
    total = 0j
    for c, coef in enumerate(coefs):
        if coef == 0:
            continue
        s = 0j
        for r in range(c + 1):
            s += (math.factorial(c) / math.factorial(r)) * U ** r / (
                (-rho) ** (c - r + 1)
            )
        total += coef * np.exp(rho * U) * s
    return abs(total)


def _refined_integral(sample, U, quad):
    """Composite Gauss-Legendre on [0, U] with panel-doubling refinement.

    ``sample(u)`` returns integrand rows for an array of abscissae.  Returns
    (value vector, refinement difference).
    """
    x, w = np.polynomial.legendre.leggauss(quad.nodes)
    prev = None
    for level in range(quad.max_refinements + 1):
        panels = quad.panels * (1 << level)
        width = U / panels
        us = np.concatenate(
            [p * width + (x + 1) * 0.5 * width for p in range(panels)]
        )
        ws = np.tile(w * 0.5 * width, panels)
        vals = sample(us)
        I = ws @ vals
        if prev is not None:
            scale = max(float(np.abs(I).max()), 1e-300)
            diff = float(np.abs(I - prev).max())
            if diff <= quad.rel_tol * scale:
                return I, diff
        prev = I
    return I, float(np.abs(I - prev).max())


def c1(es, model, t, f, g, W, quad=None):
    """Covariance block carried by the retained spectral components.

    Double sum over retained eigenvalue pairs of a truncated half-line
    integral of the offspring pair form minus an instantaneous product term.
    The truncation tail is bounded analytically (the integrand is polynomial
    times a decaying exponential) and added to the error estimate.
    """
    if t < 0:
        raise DomainError("lag must be nonnegative")
    quad = quad or QuadratureConfig()
    reg = classify_regimes(es)
    m_L = reg.m_L
    f = as_functional(model, f)
    g = as_functional(model, g)
    lam1 = es.lambda1
    lefts = _left_vectors(es)
    Vform = _pair_form(model)
    p1 = es.p(0)
    k11 = es.k_count(0, 0)

    per_dual = np.zeros(k11, dtype=complex)
    err = 0.0
    for j in range(m_L):
        a = es.proj(j) @ f
        if not np.abs(a).max():
            continue
        Na = _nilpotent_stack(es, a, es.p(j))
        for k in range(m_L):
            b = es.proj(k) @ g
            if not np.abs(b).max():
                continue
            Nb = _nilpotent_stack(es, b, es.p(k))
            rho = lam1 - es.eigenvalues[j] - es.eigenvalues[k]
            beta = -rho.real
            if beta <= 0:
                raise KernelPreconditionError(
                    "retained eigenvalue pair violates the integrability "
                    f"condition (indices {j + 1}, {k + 1})"
                )
            deg = (len(Na) - 1) + (len(Nb) - 1)
            U = 40.0 / beta
            U += deg * math.log(max(U, 2.0)) / beta

            def sample(us):
                A = np.zeros((us.size, es.d), dtype=complex)
                for c, vec in enumerate(Na):
                    A += ((-(t + us)) ** c / math.factorial(c))[:, None] * vec
                B = np.zeros((us.size, es.d), dtype=complex)
                for c, vec in enumerate(Nb):
                    B += ((-us) ** c / math.factorial(c))[:, None] * vec
                rows = Vform(A, B)
                out = np.empty((us.size, k11), dtype=complex)
                for i, L in enumerate(lefts):
                    out[:, i] = rows @ L
                out *= np.exp(rho * us)[:, None]
                return out

            integral, diff = _refined_integral(sample, U, quad)
            # analytic tail: expand the polynomial coefficients in u
            K = np.zeros((k11, len(Na), len(Nb)), dtype=complex)
            for ca, va in enumerate(Na):
                for cb, vb in enumerate(Nb):
                    rows = Vform(va[None, :], vb[None, :])[0]
                    for i, L in enumerate(lefts):
                        K[i, ca, cb] = np.dot(rows, L)
            tails = 0.0
            for i in range(k11):
                coefs = [0j] * (deg + 1)
                for ca in range(len(Na)):
                    for cb in range(len(Nb)):
                        base = (
                            (-1.0) ** (ca + cb)
                            / math.factorial(ca)
                            / math.factorial(cb)
                        )
                        for r in range(ca + 1):
                            coefs[r + cb] += (
                                base
                                * math.comb(ca, r)
                                * t ** (ca - r)
                                * K[i, ca, cb]
                            )
                tails = max(tails, _exp_tail(coefs, rho, U))
            sub = np.array(
                [
                    np.dot(
                        es.duals[0][0][i],
                        (es.exp_n(-t) @ a) * b,
                    )
                    for i in range(k11)
                ]
            )
            per_dual += np.exp((lam1 / 2 - es.eigenvalues[j]) * t) * (
                integral - sub
            )
            err += diff + 2.0 * tails

    total = 0j
    wmax = 0.0
    for i in range(k11):
        total += W.w11(i) * per_dual[i]
        wmax = max(wmax, abs(W.w11(i)))
    fac = math.factorial(p1 - 1)
    return KernelTerm(value=total / fac, est_error=wmax * err / fac)


def c2(es, model, t, f, g, W, quad=None):
    """Covariance block from the exact finite-time covariance of the pairings."""
    if t < 0:
        raise DomainError("lag must be nonnegative")
    cov, cov_err = covariance_xt(model, es, f, g, t, quad)
    lefts = _left_vectors(es)
    p1 = es.p(0)
    lam1 = es.lambda1
    total = 0j
    wmax = 0.0
    for i, L in enumerate(lefts):
        total += W.w11(i) * np.dot(L, cov)
        wmax = max(wmax, abs(W.w11(i)))
    fac = math.factorial(p1 - 1)
    scale = math.exp(-lam1 * t) / fac
    return KernelTerm(
        value=scale * total,
        est_error=scale * wmax * cov_err * max(np.abs(L).max() for L in lefts) * es.d,
    )


def c3(es, model, t, f, g, W, quad=None):
    """Covariance block carried by the fast-decaying remainder components.

    Requires both arguments to be annihilated by every dual up to the last
    critical index, and at least one faster-decaying eigenvalue to exist;
    the half-line integral then converges geometrically.
    """
    if t < 0:
        raise DomainError("lag must be nonnegative")
    quad = quad or QuadratureConfig()
    reg = classify_regimes(es)
    if reg.m_C >= es.m:
        raise RegimePreconditionError(
            "remainder covariance needs eigenvalues beyond the critical block",
            report=reg,
        )
    f = as_functional(model, f)
    g = as_functional(model, g)
    for name, h in (("first", f), ("second", g)):
        bad = es.kernel_violation(h, reg.m_C, tol=_KER_TOL)
        if bad is not None:
            raise KernelPreconditionError(
                f"{name} argument is not annihilated by the retained duals",
                index=bad,
            )
    lam1 = es.lambda1
    lefts = _left_vectors(es)
    Vform = _pair_form(model)
    prop = TimePropagator(mean_generator(model))
    p1 = es.p(0)
    k11 = es.k_count(0, 0)

    psi_t_g = prop.apply_fixed(np.array([float(t)]), g)[0]
    term1 = np.array([np.dot(L, f * psi_t_g) for L in lefts])

    beta = lam1 - 2.0 * es.eigenvalues[reg.m_C].real
    deg = 2 * (es.max_p - 1)
    U = 40.0 / beta
    U += (deg + 2) * math.log(max(U, 2.0)) / beta

    def sample(us):
        Fu = prop.apply(us, np.broadcast_to(f, (us.size, es.d)))
        Gu = prop.apply(us + t, np.broadcast_to(g, (us.size, es.d)))
        rows = Vform(Fu, Gu)
        out = np.empty((us.size, k11), dtype=complex)
        for i, L in enumerate(lefts):
            out[:, i] = rows @ L
        out *= np.exp(-lam1 * us)[:, None]
        return out

    integral, diff = _refined_integral(sample, U, quad)
    tail = float(np.abs(sample(np.array([U]))).max()) * 2.0 / beta

    total = 0j
    wmax = 0.0
    for i in range(k11):
        total += W.w11(i) * (term1[i] + integral[i])
        wmax = max(wmax, abs(W.w11(i)))
    fac = math.factorial(p1 - 1)
    scale = np.exp(-lam1 * t / 2.0) / fac
    return KernelTerm(
        value=scale * total,
        est_error=abs(scale) * wmax * (diff + tail),
    )


def c4(es, r, t, f_meta, g_meta, p1=None):
    """Closed-form lag integral of the critical regime.

    Polynomial in the lag variables; evaluated exactly by expanding the
    integrand's coefficients and integrating monomials.  Zero unless the two
    critical eigenvalues are conjugate.
    """
    if r < 0 or r > t:
        raise DomainError(f"need 0 <= r <= t, got r={r}, t={t}")
    if p1 is None:
        p1 = es.p(0)
    if abs(f_meta.lam - np.conj(g_meta.lam)) > 1e-9:
        return 0.0
    P = np.polynomial.polynomial
    poly = P.polypow([r, -1.0], f_meta.p - 1)
    poly = P.polymul(poly, P.polypow([0.0, 1.0], p1 - 1))
    poly = P.polymul(poly, P.polypow([t, -1.0], g_meta.p - 1))
    anti = P.polyint(poly)
    val = P.polyval(r, anti) - P.polyval(0.0, anti)
    return float(val) / (
        math.factorial(f_meta.p - 1)
        * math.factorial(p1 - 1)
        * math.factorial(g_meta.p - 1)
    )


def c4_numeric(es, r, t, f_meta, g_meta, p1=None, tol=1e-13):
    """Adaptive-quadrature evaluation of the same lag integral (oracle route)."""
    if r < 0 or r > t:
        raise DomainError(f"need 0 <= r <= t, got r={r}, t={t}")
    if p1 is None:
        p1 = es.p(0)
    if abs(f_meta.lam - np.conj(g_meta.lam)) > 1e-9:
        return 0.0
    den = (
        math.factorial(f_meta.p - 1)
        * math.factorial(p1 - 1)
        * math.factorial(g_meta.p - 1)
    )

    def integrand(v):
        return (
            (r - v) ** (f_meta.p - 1)
            * v ** (p1 - 1)
            * (t - v) ** (g_meta.p - 1)
        ) / den

    val, _ = scipy.integrate.quad(integrand, 0.0, r, epsabs=tol, epsrel=tol)
    return val


def classify_ei(es, f, tol=_KER_TOL):
    """Locate the unique critical eigenspace carrying f's projection."""
    reg = classify_regimes(es)
    if reg.m_L >= reg.m_C:
        raise RegimePreconditionError(
            "no critical eigenvalues are present", report=reg
        )
    f = np.asarray(f, dtype=complex)
    scale = max(float(np.abs(f).max()), 1e-300)
    hits = []
    norms = {}
    for i in range(reg.m_L, reg.m_C):
        proj = es.proj(i) @ f
        norms[i + 1] = float(np.abs(proj).max())
        if norms[i + 1] > tol * scale:
            hits.append((i, proj))
    if len(hits) != 1:
        which = sorted(k for k in norms if norms[k] > tol * scale)
        raise CriticalClassificationError(
            "functional must have nonzero projection in exactly one critical "
            f"eigenspace; nonzero in {which or 'none'}",
            projections=norms,
        )
    nu, proj = hits[0]
    p = 1
    cur = proj
    while True:
        cur = es.nilpotent @ cur
        if np.abs(cur).max() <= tol * scale:
            break
        p += 1
    return CriticalClassification(nu=nu, lam=es.eigenvalues[nu], p=p)


def small_cov(es, model, r, t, f, g, W, quad=None):
    """Conditional covariance kernel of the small-regime Gaussian limit.

    Returns both E[Z(r) Z'(t) | limits] and E[Z(r) conj(Z'(t)) | limits]
    via the three-block decomposition at lag t - r.
    """
    if r < 0 or r > t:
        raise DomainError(f"need 0 <= r <= t, got r={r}, t={t}")
    reg = classify_regimes(es)
    if not (reg.m_L == reg.m_C < es.m):
        raise RegimePreconditionError(
            "small-regime kernel requires no critical eigenvalues and at "
            "least one fast-decaying one",
            report=reg,
        )
    f = as_functional(model, f)
    g = as_functional(model, g)
    lag = t - r
    f1, f2 = project_decompose(es, f, 0.0, m_L=reg.m_L)
    f1_lag, _ = project_decompose(es, f, lag, m_L=reg.m_L)

    def assemble(gg):
        g1, g2 = project_decompose(es, gg, 0.0, m_L=reg.m_L)
        t1 = c1(es, model, lag, f1, g1, W, quad)
        t2 = c2(es, model, lag, f1_lag, g2, W, quad)
        t3 = c3(es, model, lag, f2, g2, W, quad)
        return (
            t1.value - t2.value + t3.value,
            t1.est_error + t2.est_error + t3.est_error,
        )

    plain, err_p = assemble(g)
    conj, err_c = assemble(np.conj(g))
    return CovKernel(plain=plain, conj=conj, est_error=err_p + err_c)


def crit_cov(es, model, r, t, f, g, W, quad=None):
    """Conditional covariance kernel of the critical-regime Gaussian limit."""
    if r < 0 or r > t:
        raise DomainError(f"need 0 <= r <= t, got r={r}, t={t}")
    f = as_functional(model, f)
    g = as_functional(model, g)
    cf = classify_ei(es, f)
    lefts = _left_vectors(es)
    Vform = _pair_form(model)
    k11 = es.k_count(0, 0)
    fac = math.factorial(es.p(0) - 1)
    a = es.npow(cf.p - 1) @ (es.proj(cf.nu) @ f)

    def assemble(gg):
        cg = classify_ei(es, gg)
        lag = c4(es, r, t, cf, cg)
        if lag == 0.0:
            return 0j
        b = es.npow(cg.p - 1) @ (es.proj(cg.nu) @ gg)
        rows = Vform(a[None, :], b[None, :])[0]
        total = 0j
        for i in range(k11):
            total += W.w11(i) * np.dot(rows, lefts[i])
        return lag * total / fac

    plain = assemble(g)
    conj = assemble(np.conj(g))
    scale = max(abs(plain), abs(conj), 1.0)
    return CovKernel(plain=plain, conj=conj, est_error=1e-13 * scale)
