"""Spectral structure of the mean semigroup.

Builds the mean-growth generator A (so that the expectation of <X_t, f> is
exp(tA) f), validates declared eigenvalue/Jordan-chain data against it, and
classifies each sub-leading eigenvalue into the large / critical / small
fluctuation regime by comparing twice its real part with the leading rate.

Jordan structure is never computed numerically for clustered spectra: the
decomposition is discontinuous, so clustered spectra must be declared and are
then verified through stable identities (biorthogonality, chain descent,
semigroup action).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    DomainError,
    EigenStructureRejection,
    JordanDeclarationRequired,
    NotSupercriticalError,
    UnsupportedOrderError,
)
from .model import as_functional, mean_matrix

BIORTHO_TOL = 1e-9
SEMIGROUP_RTOL = 1e-8
CLUSTER_SEP = 1e-6
_CHECK_TIMES = (0.1, 1.0, 2.0)


def mean_generator(model):
    """A = q + diag(gamma) (M - I) with M the first-moment matrix."""
    m = mean_matrix(model)
    d = model.d
    return model.motion.q + model.gamma[:, None] * (m - np.eye(d))


def semigroup_apply(A, t, f):
    """exp(tA) f by scaling-and-squaring (Pade) matrix exponential."""
    if t < 0:
        raise DomainError(f"semigroup time must be nonnegative, got {t}")
    A = np.asarray(A)
    return scipy.linalg.expm(t * A) @ np.asarray(f, dtype=complex)


@dataclass(frozen=True)
class EigenStructure:
    """Eigenvalues, Jordan chains, dual functionals and the nilpotent operator.

    ``phi[i][j][k]`` is the k-th chain vector of rank j+1 for eigenvalue i
    (all indices 0-based internally; messages use the 1-based convention).
    ``chain_links[(i, j, k)] = k*`` records N phi[i][j][k] = phi[i][j-1][k*].
    """

    eigenvalues: tuple
    phi: tuple
    duals: tuple
    nilpotent: np.ndarray
    chain_links: dict

    def __post_init__(self):
        n = np.asarray(self.nilpotent, dtype=complex)
        n.setflags(write=False)
        object.__setattr__(self, "nilpotent", n)

    @property
    def m(self):
        return len(self.eigenvalues)

    @property
    def d(self):
        return self.nilpotent.shape[0]

    @property
    def lambda1(self):
        return self.eigenvalues[0].real

    def p(self, i):
        """Number of rank levels of eigenvalue i."""
        return len(self.phi[i])

    @property
    def max_p(self):
        return max(self.p(i) for i in range(self.m))

    def k_count(self, i, j):
        return len(self.phi[i][j])

    def indices(self):
        for i in range(self.m):
            for j in range(self.p(i)):
                for k in range(self.k_count(i, j)):
                    yield (i, j, k)

    def descend(self, i, j, k, c):
        """c-step chain descent of phi[i][j][k]; returns None once annihilated."""
        jj, kk = j, k
        for _ in range(c):
            if jj == 0:
                return None
            kk = self.chain_links[(i, jj, kk)]
            jj -= 1
        return self.phi[i][jj][kk]

    def npow(self, c):
        out = np.eye(self.d, dtype=complex)
        for _ in range(c):
            out = self.nilpotent @ out
        return out

    def exp_n(self, tau):
        """exp(tau N) via the finite nilpotent sum (exact)."""
        out = np.eye(self.d, dtype=complex)
        term = np.eye(self.d, dtype=complex)
        for c in range(1, self.max_p):
            term = term @ (tau * self.nilpotent) / c
            out = out + term
        return out

    def proj_rank(self, i, j):
        """Rank-resolved projection matrix for (eigenvalue i, rank j)."""
        P = np.zeros((self.d, self.d), dtype=complex)
        for k in range(self.k_count(i, j)):
            P += np.outer(self.phi[i][j][k], self.duals[i][j][k])
        return P

    def proj(self, i):
        """Full projection matrix onto the eigenvalue-i generalised eigenspace."""
        P = np.zeros((self.d, self.d), dtype=complex)
        for j in range(self.p(i)):
            P += self.proj_rank(i, j)
        return P

    def dual_apply(self, i, j, k, f):
        """Linear pairing of the (i,j,k) dual with f (no conjugation)."""
        return complex(np.dot(self.duals[i][j][k], f))

    def dual_semigroup_pairing(self, i, j, k, t, f):
        """dual[e^{(lambda_i + N) t} f] = e^{lambda_i t} dual[e^{Nt} f]."""
        g = self.exp_n(t) @ np.asarray(f, dtype=complex)
        return np.exp(self.eigenvalues[i] * t) * self.dual_apply(i, j, k, g)

    def in_kernel(self, f, ell, tol=BIORTHO_TOL):
        """True when all duals with eigenvalue index <= ell (1-based) kill f."""
        bad = self.kernel_violation(f, ell, tol)
        return bad is None

    def kernel_violation(self, f, ell, tol=BIORTHO_TOL):
        """First (i,j,k) triple (1-based) whose dual pairing is non-vanishing."""
        f = np.asarray(f, dtype=complex)
        scale = max(1.0, float(np.abs(f).max()))
        for i in range(min(ell, self.m)):
            for j in range(self.p(i)):
                for k in range(self.k_count(i, j)):
                    if abs(self.dual_apply(i, j, k, f)) > tol * scale:
                        return (i + 1, j + 1, k + 1)
        return None


@dataclass(frozen=True)
class ProjectionSet:
    """Projection matrices, both per eigenvalue and rank-resolved."""

    full: tuple  # tuple over i of (d, d)
    by_rank: tuple  # tuple over i of tuple over j of (d, d)


def projection_set(es):
    return ProjectionSet(
        full=tuple(es.proj(i) for i in range(es.m)),
        by_rank=tuple(
            tuple(es.proj_rank(i, j) for j in range(es.p(i)))
            for i in range(es.m)
        ),
    )


@dataclass(frozen=True)
class RegimeReport:
    """Regime classification of the tracked eigenvalues."""

    m_L: int
    m_C: int
    m: int
    labels: tuple
    spectral_gap: float | None

    @property
    def regime(self):
        if self.m_L < self.m_C:
            return "critical"
        if self.m_C < self.m:
            return "small"
        return "large"

    def __str__(self):
        gap = "n/a" if self.spectral_gap is None else f"{self.spectral_gap:.6g}"
        return (
            f"m_L={self.m_L} m_C={self.m_C} m={self.m} "
            f"regime={self.regime} spectral_gap={gap}"
        )


def classify_regimes(es, tol=1e-9):
    """Label each eigenvalue by comparing 2 Re(lambda_i) against lambda_1."""
    lam1 = es.eigenvalues[0]
    if abs(lam1.imag) > tol or lam1.real <= 0:
        raise NotSupercriticalError(
            f"leading eigenvalue must be real and positive, got {lam1}"
        )
    lam1 = lam1.real
    labels = []
    for lam in es.eigenvalues:
        s = 2 * lam.real - lam1
        if s > tol:
            labels.append("large")
        elif s >= -tol:
            labels.append("critical")
        else:
            labels.append("small")
    m_L = max(i + 1 for i, l in enumerate(labels) if l == "large")
    m_C = max(
        i + 1 for i, l in enumerate(labels) if l in ("large", "critical")
    )
    gap = lam1 - es.eigenvalues[1].real if es.m > 1 else None
    return RegimeReport(
        m_L=m_L, m_C=m_C, m=es.m, labels=tuple(labels), spectral_gap=gap
    )


def _sort_key(lam):
    return (-lam.real, -lam.imag)


def _validate(model, es):
    """Full invariant and semigroup-identity validation of an EigenStructure."""
    d = model.d
    A = mean_generator(model)
    lams = es.eigenvalues
    if abs(lams[0].imag) > BIORTHO_TOL:
        raise EigenStructureRejection(
            f"leading eigenvalue must be real, got {lams[0]}"
        )
    for a in range(es.m - 1):
        if lams[a].real < lams[a + 1].real - 1e-12:
            raise EigenStructureRejection(
                "eigenvalues must be ordered by decreasing real part"
            )
    if es.m > 1 and not lams[0].real > max(l.real for l in lams[1:]):
        raise EigenStructureRejection(
            "leading eigenvalue must be strictly largest"
        )

    # biorthogonality across all pairs of triples
    triples = list(es.indices())
    for a, (i1, j1, k1) in enumerate(triples):
        for b, (i2, j2, k2) in enumerate(triples):
            val = np.dot(es.duals[i1][j1][k1], es.phi[i2][j2][k2])
            target = 1.0 if a == b else 0.0
            if abs(val - target) > BIORTHO_TOL:
                raise EigenStructureRejection(
                    f"biorthogonality residual {abs(val - target):.3e}",
                    index=(i1 + 1, j1 + 1, k1 + 1),
                )

    N = es.nilpotent
    if np.abs(N - N.conj()).max() > BIORTHO_TOL:
        raise EigenStructureRejection(
            "nilpotent operator must equal its conjugate"
        )
    for (i, j, k) in triples:
        v = N @ es.phi[i][j][k]
        if j == 0:
            if np.abs(v).max() > BIORTHO_TOL:
                raise EigenStructureRejection(
                    "nilpotent must annihilate rank-1 vectors",
                    index=(i + 1, j + 1, k + 1),
                )
        else:
            if (i, j, k) not in es.chain_links:
                raise EigenStructureRejection(
                    "missing chain link", index=(i + 1, j + 1, k + 1)
                )
            kstar = es.chain_links[(i, j, k)]
            tgt = es.phi[i][j - 1][kstar]
            if np.abs(v - tgt).max() > BIORTHO_TOL:
                raise EigenStructureRejection(
                    f"chain-descent residual {np.abs(v - tgt).max():.3e}",
                    index=(i + 1, j + 1, k + 1),
                )
    for i in range(es.m):
        for j in range(1, es.p(i)):
            seen = [
                es.chain_links[(i, j, k)] for k in range(es.k_count(i, j))
            ]
            if len(set(seen)) != len(seen):
                raise EigenStructureRejection(
                    "chain links must be injective per rank",
                    index=(i + 1, j + 1, 0),
                )

    # N annihilates the joint kernel of all tracked duals
    K = np.eye(d, dtype=complex)
    for i in range(es.m):
        K -= es.proj(i)
    if np.abs(N @ K).max() > 1e-8:
        raise EigenStructureRejection(
            "nilpotent must annihilate the kernel of the tracked duals"
        )

    # conjugate pairing of eigenvalues and chains
    for i in range(es.m):
        partner = None
        for l in range(es.m):
            if abs(lams[l] - lams[i].conjugate()) <= 1e-9:
                partner = l
                break
        if partner is None:
            raise EigenStructureRejection(
                f"no conjugate partner for eigenvalue {lams[i]}"
            )
        if es.p(partner) != es.p(i):
            raise EigenStructureRejection(
                "conjugate partner has mismatched chain depth"
            )
        for j in range(es.p(i)):
            for k in range(es.k_count(i, j)):
                tgt = es.phi[i][j][k].conj()
                hit = any(
                    np.abs(es.phi[partner][j][q] - tgt).max() <= 1e-8
                    for q in range(es.k_count(partner, j))
                )
                if not hit:
                    raise EigenStructureRejection(
                        "chains are not conjugate-closed",
                        index=(i + 1, j + 1, k + 1),
                    )

    # semigroup identities at sampled times
    rng = np.random.default_rng(7)
    f_probe = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    for t in _CHECK_TIMES:
        E = scipy.linalg.expm(t * A)
        for (i, j, k) in triples:
            lhs = E @ es.phi[i][j][k]
            rhs = np.zeros(d, dtype=complex)
            for c in range(j + 1):
                vec = es.descend(i, j, k, c)
                rhs += (t ** c / math.factorial(c)) * vec
            rhs *= np.exp(lams[i] * t)
            scale = max(np.abs(rhs).max(), 1e-30)
            if np.abs(lhs - rhs).max() > SEMIGROUP_RTOL * scale:
                raise EigenStructureRejection(
                    "semigroup action on chain vector fails",
                    index=(i + 1, j + 1, k + 1),
                )
            lhs_d = es.dual_apply(i, j, k, E @ f_probe)
            rhs_d = es.dual_semigroup_pairing(i, j, k, t, f_probe)
            if abs(lhs_d - rhs_d) > SEMIGROUP_RTOL * max(abs(rhs_d), 1.0):
                raise EigenStructureRejection(
                    "dual semigroup identity fails",
                    index=(i + 1, j + 1, k + 1),
                )
    return es


def _numeric_eigenstructure(model):
    A = mean_generator(model)
    d = model.d
    w, V = np.linalg.eig(A)
    order = sorted(range(d), key=lambda a: _sort_key(w[a]))
    w = w[order].astype(complex)
    V = V[:, order].astype(complex)
    for a in range(d):
        for b in range(a + 1, d):
            if abs(w[a] - w[b]) <= CLUSTER_SEP:
                raise JordanDeclarationRequired(
                    "Jordan structure required: eigenvalues "
                    f"{w[a]:.6g} and {w[b]:.6g} are separated by "
                    f"{abs(w[a] - w[b]):.2e} <= {CLUSTER_SEP:g}"
                )
    if abs(w[0].imag) > 1e-9:
        raise EigenStructureRejection(
            f"computed leading eigenvalue is not real: {w[0]}"
        )
    w[0] = w[0].real

    # canonical phases: largest-modulus entry made real positive; conjugate
    # pairs share one representative so the structure is conjugate-closed
    handled = [False] * d
    for a in range(d):
        if handled[a]:
            continue
        v = V[:, a]
        pivot = int(np.abs(v).argmax())
        v = v / (v[pivot] / abs(v[pivot]))
        if abs(w[a].imag) <= 1e-9:
            w[a] = w[a].real
            v = v.real.astype(complex)
        V[:, a] = v
        handled[a] = True
        if abs(w[a].imag) > 1e-9:
            for b in range(d):
                if not handled[b] and abs(w[b] - w[a].conjugate()) <= 1e-9:
                    w[b] = w[a].conjugate()
                    V[:, b] = v.conj()
                    handled[b] = True
                    break
    duals = np.linalg.inv(V)
    phi, dual_t = [], []
    for a in range(d):
        vec = V[:, a].copy()
        dv = duals[a].copy()
        dv = dv / np.dot(dv, vec)
        vec.setflags(write=False)
        dv.setflags(write=False)
        phi.append(((vec,),))
        dual_t.append(((dv,),))
    return EigenStructure(
        eigenvalues=tuple(complex(x) for x in w),
        phi=tuple(phi),
        duals=tuple(dual_t),
        nilpotent=np.zeros((d, d), dtype=complex),
        chain_links={},
    )


def build_eigenstructure(model, declared=None):
    """Validate a declared eigen-structure, or compute one numerically.

    Without a declaration the spectrum must be simple with all eigenvalues
    separated by more than ``CLUSTER_SEP``; otherwise a declaration is
    demanded rather than attempting a numerically unstable Jordan form.
    """
    if declared is not None:
        return _validate(model, declared)
    return _validate(model, _numeric_eigenstructure(model))


def make_eigenstructure(eigenvalues, phi, duals, chain_links=None, nilpotent=None):
    """Assemble an EigenStructure from nested lists (not yet validated).

    ``phi`` / ``duals``: per eigenvalue, per rank, per k: length-d vectors.
    ``chain_links``: {(i, j, k): k*} with 0-based indices, ranks j >= 1.
    The nilpotent operator is built from the chains when not supplied.
    """
    chain_links = dict(chain_links or {})
    phi_t = tuple(
        tuple(
            tuple(_frozen_vec(v) for v in rank) for rank in per_eig
        )
        for per_eig in phi
    )
    dual_t = tuple(
        tuple(
            tuple(_frozen_vec(v) for v in rank) for rank in per_eig
        )
        for per_eig in duals
    )
    if nilpotent is None:
        d = len(phi_t[0][0][0])
        N = np.zeros((d, d), dtype=complex)
        for (i, j, k), kstar in chain_links.items():
            N += np.outer(phi_t[i][j - 1][kstar], dual_t[i][j][k])
    else:
        N = np.asarray(nilpotent, dtype=complex)
    return EigenStructure(
        eigenvalues=tuple(complex(x) for x in eigenvalues),
        phi=phi_t,
        duals=dual_t,
        nilpotent=N,
        chain_links=chain_links,
    )


def _frozen_vec(v):
    arr = np.asarray(v, dtype=complex).copy()
    arr.setflags(write=False)
    return arr


def project_decompose(es, f, t, m_L=None):
    """Split f into its retained-spectrum part (modulated by the half-rate
    normalisation at lag t) and the remainder, f = f1_t + f2_t.
    """
    if t < 0:
        raise DomainError(f"lag must be nonnegative, got {t}")
    f = np.asarray(f, dtype=complex)
    if m_L is None:
        m_L = classify_regimes(es).m_L
    lam1 = es.lambda1
    EN = es.exp_n(-t)
    f1 = np.zeros_like(f)
    for i in range(m_L):
        f1 += np.exp((lam1 / 2 - es.eigenvalues[i]) * t) * (
            EN @ (es.proj(i) @ f)
        )
    return f1, f - f1


def h1_residual(model, es, t_grid):
    """Sup-norm distance between exp(tA) and the declared spectral resolution,
    weighted by t e^{-Re(lambda_m) t}, per grid time."""
    A = mean_generator(model)
    lam_m = es.eigenvalues[-1].real
    out = []
    for t in t_grid:
        R = scipy.linalg.expm(t * A).astype(complex)
        for i in range(es.m):
            R -= np.exp(es.eigenvalues[i] * t) * (es.exp_n(t) @ es.proj(i))
        norm = float(np.abs(R).sum(axis=1).max())
        out.append(math.exp(-lam_m * t) * t * norm)
    return np.asarray(out)


def small_time_regularity(model, f, k, t_grid=None):
    """Short-time regularity constants of the pairing <X_t, f>.

    c1 bounds t^{-1/k} ||psi_t f - f||_inf, c2 bounds the t^{-2}-weighted
    central moment of order 2k, both over a grid in (0, 1].  Only k = 2 is
    supported because joint moments are capped at order 4.
    """
    if k < 2 or k % 2:
        raise DomainError(f"k must be an even integer >= 2, got {k}")
    if k != 2:
        raise UnsupportedOrderError(
            f"central moment order 2k = {2 * k} exceeds the supported maximum 4"
        )
    from . import moments  # deferred; moments depends on this module

    f = as_functional(model, f)
    if t_grid is None:
        t_grid = np.geomspace(1e-3, 1.0, 7)
    # sup-type diagnostic constants: a light quadrature is plenty
    quad = moments.QuadratureConfig(panels=4, nodes=10, rel_tol=1e-7)
    A = mean_generator(model)
    c1 = 0.0
    c2 = 0.0
    for t in t_grid:
        psi = scipy.linalg.expm(t * A) @ f
        c1 = max(c1, t ** (-1.0 / k) * float(np.abs(psi - f).max()))
        central = moments.central_moment(model, f, t, order=2 * k, quad=quad)
        c2 = max(c2, t ** -2.0 * float(np.abs(central).max()))
    return c1, c2
