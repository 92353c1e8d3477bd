"""Branching-model definition on a finite type space.

A model bundles a conservative jump generator for the particle motion, a
per-type branching rate, and a finite-support offspring law that may place
children at types different from the parent's.  All offspring moments are
exact finite sums, which makes every moment assumption checkable.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelStructureError

STOCHASTIC_TOL = 1e-12  # generator row sums / probability normalisation


@dataclass(frozen=True)
class TypeSpace:
    """Finite set of particle types with display labels."""

    labels: tuple

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))

    @property
    def d(self):
        return len(self.labels)


@dataclass(frozen=True)
class MotionGenerator:
    """Jump-rate matrix q (1/time); rows sum to zero, off-diagonal >= 0."""

    q: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        q.setflags(write=False)
        object.__setattr__(self, "q", q)


@dataclass(frozen=True)
class Outcome:
    """One branching outcome: probability and per-type child counts."""

    probability: float
    children: np.ndarray

    def __post_init__(self):
        c = np.array(self.children, dtype=np.int64)
        c.setflags(write=False)
        object.__setattr__(self, "children", c)

    @property
    def total(self):
        return int(self.children.sum())


@dataclass(frozen=True)
class OffspringLaw:
    """Per parent type, a finite list of outcomes."""

    outcomes: tuple  # tuple over parent types of tuples of Outcome

    def __post_init__(self):
        object.__setattr__(
            self, "outcomes", tuple(tuple(os) for os in self.outcomes)
        )

    def moment(self, x, k):
        """E_x[N^k] for the total litter size N (exact)."""
        return sum(o.probability * o.total ** k for o in self.outcomes[x])

    def sup_moment(self, k):
        return max(self.moment(x, k) for x in range(len(self.outcomes)))


@dataclass(frozen=True)
class BranchingModel:
    """The full branching Markov process specification on a finite type space."""

    types: TypeSpace
    motion: MotionGenerator
    gamma: np.ndarray
    offspring: OffspringLaw
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        g = np.array(self.gamma, dtype=float)
        g.setflags(write=False)
        object.__setattr__(self, "gamma", g)
        _check_structure(self)

    @property
    def d(self):
        return self.types.d

    def offspring_tensor(self, n):
        """Ordered distinct-children moment tensor of order n.

        T[x, y_1, .., y_n] = E_x[# ordered n-tuples of distinct children with
        type pattern (y_1, .., y_n)], computed exactly via falling factorials
        of the outcome counts.  Order n=2 is the bilinear form behind the
        pair-correlation operator.
        """
        if n in self._cache:
            return self._cache[n]
        d = self.d
        T = np.zeros((d,) + (d,) * n)
        for x in range(d):
            for o in self.offspring.outcomes[x]:
                c = o.children
                for pattern in itertools.product(range(d), repeat=n):
                    w = 1.0
                    used = [0] * d
                    for y in pattern:
                        w *= c[y] - used[y]
                        used[y] += 1
                        if w == 0.0:
                            break
                    if w:
                        T[(x,) + pattern] += o.probability * w
        T.setflags(write=False)
        self._cache[n] = T
        return T


@dataclass(frozen=True)
class PopulationState:
    """Type counts at a given time."""

    counts: np.ndarray
    time: float

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64)
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    def pairing(self, f):
        """<X, f> = sum_x counts[x] * f(x)."""
        return complex(np.dot(self.counts, np.asarray(f)))


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    """Outcome of validate_model: one entry per invariant plus sup_x E_x[N^k]."""

    checks: list
    moment_order: int
    sup_moment: float

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def __str__(self):
        lines = [
            f"[{'PASS' if c.passed else 'FAIL'}] {c.name}"
            + (f" — {c.detail}" if c.detail else "")
            for c in self.checks
        ]
        lines.append(
            f"sup_x E_x[N^{self.moment_order}] = {self.sup_moment:.6g}"
        )
        return "\n".join(lines)


def _check_structure(model):
    """Dimension consistency; raises ModelStructureError with a field path."""
    d = model.types.d
    if d < 1:
        raise ModelStructureError("types.labels", "need at least one type")
    q = model.motion.q
    if q.shape != (d, d):
        raise ModelStructureError(
            "q", f"expected shape {(d, d)}, got {q.shape}"
        )
    if model.gamma.shape != (d,):
        raise ModelStructureError(
            "gamma", f"expected shape {(d,)}, got {model.gamma.shape}"
        )
    if len(model.offspring.outcomes) != d:
        raise ModelStructureError(
            "offspring", f"expected {d} per-type outcome lists,"
            f" got {len(model.offspring.outcomes)}"
        )
    for x, outs in enumerate(model.offspring.outcomes):
        if len(outs) == 0:
            raise ModelStructureError(
                f"offspring[{x}]", "empty outcome list"
            )
        for i, o in enumerate(outs):
            if o.children.shape != (d,):
                raise ModelStructureError(
                    f"offspring[{x}][{i}].children",
                    f"expected length {d}, got {o.children.shape}",
                )


def validate_model(model, k=4):
    """Check model invariants and the k-th offspring moment bound.

    Structural (dimension) problems raise; semantic invariants are reported
    with pass/fail entries.  The moment bound sup_x E_x[N^k] is always finite
    for finite-support laws and is reported rather than gated.
    """
    if k < 1:
        raise ValueError("moment order k must be >= 1")
    checks = []
    d = model.d
    labels = model.types.labels
    checks.append(
        CheckResult(
            "labels unique",
            len(set(labels)) == d,
            detail="" if len(set(labels)) == d else f"labels={labels}",
        )
    )
    q = model.motion.q
    off = q - np.diag(np.diag(q))
    ok = bool((off >= 0).all())
    checks.append(
        CheckResult("motion off-diagonal rates nonnegative", ok)
    )
    rows = np.abs(q.sum(axis=1))
    ok = bool((rows <= STOCHASTIC_TOL).all())
    checks.append(
        CheckResult(
            "motion generator rows sum to zero",
            ok,
            detail="" if ok else f"max |row sum| = {rows.max():.3e}",
        )
    )
    ok = bool(np.isfinite(model.gamma).all() and (model.gamma >= 0).all())
    checks.append(CheckResult("branch rates finite and nonnegative", ok))
    for x in range(d):
        outs = model.offspring.outcomes[x]
        probs = np.array([o.probability for o in outs])
        ok = bool((probs >= 0).all() and (probs <= 1).all())
        checks.append(
            CheckResult(f"offspring[{x}] probabilities in [0,1]", ok)
        )
        s = probs.sum()
        ok = bool(abs(s - 1.0) <= STOCHASTIC_TOL)
        checks.append(
            CheckResult(
                f"offspring[{x}] probabilities normalised",
                ok,
                detail="" if ok else f"sum = {s!r}",
            )
        )
        ok = all((o.children >= 0).all() for o in outs)
        checks.append(
            CheckResult(f"offspring[{x}] child counts nonnegative", ok)
        )
    sup = model.offspring.sup_moment(k)
    checks.append(
        CheckResult(
            f"offspring moment order {k} finite",
            math.isfinite(sup),
            detail=f"sup_x E_x[N^{k}] = {sup:.6g}",
        )
    )
    return ValidationReport(checks=checks, moment_order=k, sup_moment=sup)


def mean_matrix(model):
    """First-moment matrix m[x, y] = E_x[# children of type y]."""
    d = model.d
    m = np.zeros((d, d))
    for x in range(d):
        for o in model.offspring.outcomes[x]:
            m[x] += o.probability * o.children
    return m


def as_functional(model, values):
    """Coerce to a complex length-d vector, checking finiteness."""
    f = np.asarray(values, dtype=complex)
    if f.shape != (model.d,):
        raise ModelStructureError(
            "functional", f"expected length {model.d}, got shape {f.shape}"
        )
    if not np.isfinite(f).all():
        raise ModelStructureError("functional", "entries must be finite")
    return f


def factorial_cross_moment(model, f, g):
    """E_x[sum over ordered pairs of distinct children of f(child_i) g(child_j)].

    Exact bilinear contraction of the order-2 offspring tensor.
    """
    f = as_functional(model, f)
    g = as_functional(model, g)
    T2 = model.offspring_tensor(2)
    return np.einsum("xyz,y,z->x", T2, f, g)


def variance_operator_V(model, f, g):
    """Branch-rate-weighted offspring pair correlation, gamma(x) * cross moment.

    Symmetric and bilinear in (f, g); this is the bilinear form that drives
    every limit covariance kernel.
    """
    return model.gamma * factorial_cross_moment(model, f, g)


def build_model(labels, q, gamma, offspring):
    """Convenience constructor from plain lists.

    ``offspring``: per type, list of (probability, children-list) pairs.
    """
    outs = tuple(
        tuple(Outcome(float(p), c) for p, c in outs_x) for outs_x in offspring
    )
    return BranchingModel(
        types=TypeSpace(tuple(labels)),
        motion=MotionGenerator(np.asarray(q, dtype=float)),
        gamma=np.asarray(gamma, dtype=float),
        offspring=OffspringLaw(outs),
    )
