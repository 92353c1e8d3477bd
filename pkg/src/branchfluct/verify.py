"""Statistical verification harness linking simulation output to the limit
theory: strong-law residuals, empirical conditional covariances with
jackknife errors, distribution-free Gaussianity checks, moment consistency,
and the multivariate convex-sets Berry-Esseen bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from .errors import DegenerateCovarianceError, DomainError
from .limits import slln_limit
from .model import as_functional
from .moments import joint_moment_vector
from .spectral import classify_regimes

DEFAULT_SE_MULTIPLE = 3.0


@dataclass
class TestReport:
    """One statistical check: observed vs target at a stated error scale."""

    name: str
    observed: float
    target: float
    se_or_bound: float
    passed: bool
    replicas: int
    seed: int | None = None
    level: float | None = None
    extras: dict = field(default_factory=dict)

    def __str__(self):
        verdict = "PASS" if self.passed else "FAIL"
        return (
            f"[{verdict}] {self.name}: observed={self.observed:.6g} "
            f"target={self.target:.6g} scale={self.se_or_bound:.3g} "
            f"replicas={self.replicas}"
        )

    def to_dict(self):
        return {
            "name": self.name,
            "observed": self.observed,
            "target": self.target,
            "se_or_bound": self.se_or_bound,
            "passed": bool(self.passed),
            "replicas": self.replicas,
            "seed": self.seed,
            "level": self.level,
            "extras": {k: _plain(v) for k, v in self.extras.items()},
        }


def _plain(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, complex):
        return [v.real, v.imag]
    return v


def _active(replica_set):
    keep = ~replica_set.capped
    return keep, int((~keep).sum())


def slln_check(model, es, f, replica_set, t_grid, se_multiple=DEFAULT_SE_MULTIPLE):
    """Strong-law residuals of the growth-normalised pairing against the
    per-replica limit combination; gated on the paired difference at the
    largest grid time."""
    f = as_functional(model, f)
    lam1 = es.lambda1
    p1 = es.p(0)
    keep, n_capped = _active(replica_set)
    t_grid = sorted(float(t) for t in t_grid)
    if p1 > 1 and min(t_grid) <= 0:
        raise DomainError("grid times must be positive when the leading "
                          "eigenvalue carries a chain")
    limits_per_rep = np.zeros(replica_set.n_replicas, dtype=complex)
    h = es.npow(p1 - 1) @ f
    for i in range(es.k_count(0, 0)):
        limits_per_rep += (
            complex(np.dot(es.duals[0][0][i], h))
            * replica_set.w_estimates[(0, 0, i)]
        )
    limits_per_rep /= math.factorial(p1 - 1)
    residual_means = []
    stat_last = None
    for t in t_grid:
        col = replica_set.time_index(t)
        stat = (
            math.exp(-lam1 * t)
            * (t ** -(p1 - 1) if p1 > 1 else 1.0)
            * (replica_set.counts[:, col, :] @ f)
        )
        residual_means.append(float(np.abs(stat - limits_per_rep)[keep].mean()))
        stat_last = stat
    diff = (stat_last - limits_per_rep)[keep]
    obs = float(diff.real.mean())
    se = float(diff.real.std(ddof=1) / math.sqrt(keep.sum()))
    slope = None
    if len(t_grid) >= 2 and all(r > 0 for r in residual_means):
        slope = float(
            np.polyfit(t_grid, np.log(residual_means), 1)[0]
        )
    return TestReport(
        name="slln residual",
        observed=obs,
        target=0.0,
        se_or_bound=se,
        passed=abs(obs) <= se_multiple * se,
        replicas=int(keep.sum()),
        seed=replica_set.seed,
        extras={
            "residual_means": residual_means,
            "decay_slope": slope,
            "capped_excluded": n_capped,
            "se_multiple": se_multiple,
        },
    )


@dataclass
class EmpiricalCovariance:
    """Empirical conditional covariance on a time grid with jackknife errors.

    ``diff_*`` and ``se_*`` refer to (empirical - target) when target unit
    kernels were supplied; the target is linear in the limit estimates, so
    the jackknife resamples both the product means and the estimate mean.
    """

    grid: tuple
    plain: np.ndarray
    conj: np.ndarray
    w_bar: complex
    n_replicas: int
    target_plain: np.ndarray | None = None
    target_conj: np.ndarray | None = None
    diff_plain: np.ndarray | None = None
    diff_conj: np.ndarray | None = None
    se_plain: np.ndarray | None = None
    se_conj: np.ndarray | None = None

    def max_deviation_multiple(self):
        """max |emp - target| / SE over grid entries (both kernels)."""
        m = 0.0
        for diff, se in ((self.diff_plain, self.se_plain), (self.diff_conj, self.se_conj)):
            m = max(m, float(np.max(np.abs(diff) / np.maximum(se, 1e-300))))
        return m


def empirical_cov_conditional(
    series_f,
    series_g,
    w_estimates,
    grid=None,
    unit_plain=None,
    unit_conj=None,
    mean_f=None,
    mean_g=None,
):
    """Mean-of-products covariance estimate, compared against kernels that are
    linear in the limit estimates (evaluated at the replica mean).

    ``unit_plain`` / ``unit_conj`` are the kernels per unit limit value; the
    targets are then w_bar * unit.  ``mean_f`` / ``mean_g`` are optional
    deterministic series means (exactly computable at finite horizons) that
    are subtracted before forming products, so the estimate is a genuine
    covariance.  Jackknife standard errors cover both the product means and
    the replica-mean estimate.  Fewer than 100 replicas are refused: the
    standard errors would be meaningless.
    """
    F = np.asarray(series_f)
    G = np.asarray(series_g)
    if mean_f is not None:
        F = F - np.asarray(mean_f)[None, :]
    if mean_g is not None:
        G = G - np.asarray(mean_g)[None, :]
    w = np.asarray(w_estimates)
    R = F.shape[0]
    if R < 100:
        raise DomainError(f"need at least 100 replicas, got {R}")
    grid = tuple(grid) if grid is not None else tuple(range(F.shape[1]))
    prod_plain = F[:, :, None] * G[:, None, :]
    prod_conj = F[:, :, None] * G[:, None, :].conj()
    plain = prod_plain.mean(axis=0)
    conj = prod_conj.mean(axis=0)
    w_bar = complex(w.mean())
    out = EmpiricalCovariance(
        grid=grid, plain=plain, conj=conj, w_bar=w_bar, n_replicas=R
    )
    if unit_plain is None:
        return out
    unit_plain = np.asarray(unit_plain)
    unit_conj = np.asarray(unit_conj if unit_conj is not None else unit_plain)
    out.target_plain = w_bar * unit_plain
    out.target_conj = w_bar * unit_conj
    out.diff_plain = plain - out.target_plain
    out.diff_conj = conj - out.target_conj
    # delete-one jackknife of D = mean(products) - mean(w) * unit
    sum_p = prod_plain.sum(axis=0)
    sum_c = prod_conj.sum(axis=0)
    sum_w = w.sum()
    jk_p = (sum_p[None, :, :] - prod_plain) / (R - 1)
    jk_c = (sum_c[None, :, :] - prod_conj) / (R - 1)
    jk_w = (sum_w - w) / (R - 1)
    d_p = jk_p - jk_w[:, None, None] * unit_plain[None, :, :]
    d_c = jk_c - jk_w[:, None, None] * unit_conj[None, :, :]
    fac = (R - 1) / R
    out.se_plain = np.sqrt(
        fac * (np.abs(d_p - d_p.mean(axis=0)) ** 2).sum(axis=0)
    )
    out.se_conj = np.sqrt(
        fac * (np.abs(d_c - d_c.mean(axis=0)) ** 2).sum(axis=0)
    )
    return out


def gaussianity_check(
    replica_series, target_variance_per_replica, level=0.01, seed=None
):
    """Kolmogorov-Smirnov test of the per-replica standardised series against
    the standard normal, Bonferroni-corrected across grid points.

    Replicas whose variance target is nonpositive or nonfinite are dropped
    and counted; at least 95% must survive.
    """
    S = np.asarray(replica_series)
    if np.iscomplexobj(S):
        if np.abs(S.imag).max() > 1e-9 * max(np.abs(S.real).max(), 1e-300):
            raise DomainError(
                "gaussianity check expects a real series; split real and "
                "imaginary parts explicitly"
            )
        S = S.real
    R, G = S.shape
    V = np.asarray(target_variance_per_replica, dtype=float)
    if V.ndim == 1:
        V = np.broadcast_to(V[:, None], (R, G))
    good = np.isfinite(V).all(axis=1) & (V > 0).all(axis=1)
    dropped = int((~good).sum())
    if good.sum() < 0.95 * R:
        raise DomainError(
            f"variance targets degenerate for {dropped}/{R} replicas "
            "(more than 5%)"
        )
    Z = S[good] / np.sqrt(V[good])
    pvals = []
    stats = []
    for g in range(G):
        # exact finite-sample null distribution: the asymptotic one is
        # anti-conservative in the far tail at these sample sizes
        res = scipy.stats.kstest(Z[:, g], "norm", mode="exact")
        pvals.append(float(res.pvalue))
        stats.append(float(res.statistic))
    threshold = level / G
    passed = all(p >= threshold for p in pvals)
    return TestReport(
        name="gaussianity (KS, Bonferroni)",
        observed=min(pvals),
        target=threshold,
        se_or_bound=threshold,
        passed=passed,
        replicas=int(good.sum()),
        seed=seed,
        level=level,
        extras={
            "p_values": pvals,
            "ks_statistics": stats,
            "dropped_replicas": dropped,
        },
    )


@dataclass(frozen=True)
class FiniteVectorSpec:
    """A finitely supported random vector given by support points and weights.

    Third absolute moments are exact finite sums; points are centred at
    construction so each variable is mean zero.
    """

    points: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        pr = np.asarray(self.probs, dtype=float)
        if pr.ndim != 1 or pts.shape[0] != pr.size:
            raise DomainError("points and probs must align")
        if abs(pr.sum() - 1.0) > 1e-12 or (pr < 0).any():
            raise DomainError("probs must be a probability vector")
        pts = pts - pr @ pts
        pts.setflags(write=False)
        pr.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "probs", pr)

    @property
    def dim(self):
        return self.points.shape[1]

    def covariance(self):
        return np.einsum("m,ma,mb->ab", self.probs, self.points, self.points)

    def sample(self, rng, size):
        idx = rng.choice(self.probs.size, size=size, p=self.probs)
        return self.points[idx]


@dataclass
class BerryEsseenResult:
    bound: float
    c_k: float
    third_moment_sum: float
    sigma: np.ndarray
    lhs_estimate: float | None = None

    def to_report(self, name="berry-esseen", replicas=0, seed=None):
        lhs = self.lhs_estimate if self.lhs_estimate is not None else 0.0
        return TestReport(
            name=name,
            observed=lhs,
            target=self.bound,
            se_or_bound=self.bound,
            passed=lhs <= self.bound,
            replicas=replicas,
            seed=seed,
            extras={"c_k": self.c_k, "third_moment_sum": self.third_moment_sum},
        )


def berry_esseen_bound(
    samples, sigma=None, c_k=None, lhs_samples=0, seed=0
):
    """Convex-sets normal-approximation bound for a sum of independent
    finitely supported vectors.

    bound = C_k * sum_i E || Sigma^{-1/2} X_i ||^3 with Sigma the summed
    covariance (non-degeneracy required).  C_k defaults to 42 k^{1/4},
    configurable because only existence of the constant is guaranteed.
    Optionally attaches a Monte Carlo estimate of the left-hand side over
    axis-aligned half-spaces as a sanity companion.
    """
    specs = list(samples)
    if not specs:
        raise DomainError("need at least one summand")
    k = specs[0].dim
    if sigma is None:
        sigma = sum(s.covariance() for s in specs)
    sigma = np.asarray(sigma, dtype=float)
    eig = np.linalg.eigvalsh(sigma)
    if eig.min() <= 1e-12 * max(np.trace(sigma), 1e-300):
        raise DegenerateCovarianceError(
            f"summed covariance is degenerate (min eigenvalue {eig.min():.3e})"
        )
    # symmetric inverse square root via the eigendecomposition
    vals, vecs = np.linalg.eigh(sigma)
    root_inv = (vecs / np.sqrt(vals)) @ vecs.T
    third = 0.0
    for s in specs:
        y = s.points @ root_inv.T
        third += float(s.probs @ (np.linalg.norm(y, axis=1) ** 3))
    if c_k is None:
        c_k = 42.0 * k ** 0.25
    res = BerryEsseenResult(
        bound=float(c_k * third),
        c_k=float(c_k),
        third_moment_sum=third,
        sigma=sigma,
    )
    if lhs_samples:
        rng = np.random.Generator(
            np.random.Philox(np.random.SeedSequence((seed, 0xBE)))
        )
        total = np.zeros((lhs_samples, k))
        for s in specs:
            total += s.sample(rng, lhs_samples)
        worst = 0.0
        for axis in range(k):
            sd = math.sqrt(sigma[axis, axis])
            xs = np.sort(total[:, axis])
            ecdf = np.arange(1, lhs_samples + 1) / lhs_samples
            cdf = scipy.stats.norm.cdf(xs / sd)
            worst = max(
                worst,
                float(np.abs(ecdf - cdf).max()),
                float(np.abs(ecdf - 1.0 / lhs_samples - cdf).max()),
            )
        res.lhs_estimate = worst
    return res


def mc_vs_exact_moments(
    model, es, fs, t, replica_set, quad=None, se_multiple=DEFAULT_SE_MULTIPLE
):
    """Empirical mixed moments against the exact evolution-equation values."""
    keep, n_capped = _active(replica_set)
    col = replica_set.time_index(t)
    prod = np.ones(replica_set.n_replicas, dtype=complex)
    for f in fs:
        prod = prod * (replica_set.counts[:, col, :] @ as_functional(model, f))
    prod = prod[keep]
    emp = complex(prod.mean())
    se = float(prod.std(ddof=1) / math.sqrt(prod.size))
    exact, est_err = joint_moment_vector(model, fs, t, quad)
    target = complex(exact[replica_set.start_type])
    obs_dev = abs(emp - target)
    return TestReport(
        name=f"moment k={len(fs)} t={t}",
        observed=emp.real,
        target=target.real,
        se_or_bound=se,
        passed=obs_dev <= se_multiple * se + est_err,
        replicas=int(keep.sum()),
        seed=replica_set.seed,
        extras={
            "abs_deviation": obs_dev,
            "quadrature_error": est_err,
            "capped_excluded": n_capped,
            "se_multiple": se_multiple,
        },
    )
