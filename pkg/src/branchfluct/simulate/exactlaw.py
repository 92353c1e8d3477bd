"""Closed-form transition sampling for uniform-increment models.

When the model has no motion, a constant branch rate and a single
deterministic net increment shared by every outcome of every type, the whole
state is an affine function of one event counter K: counts(t) = counts(0) +
K_t * delta.  K is then a linear pure-birth counter whose transitions follow
a generalised negative binomial law,

    N' = N + s * NegBin(N / s, exp(-s * gamma * dt)),   s = sum(delta),

for the total population N (standard generating-function computation for
s-fold linear births; the classic Yule case is s = 1).  Sampling one
transition is O(1), so horizons with populations far beyond any per-event
budget are exact and cheap.  This engine is a sampling shortcut with the
same law as the event-driven engine (equality checked in the tests); being
resource-light it does not apply the population cap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError


@dataclass(frozen=True)
class UniformStepLaw:
    """Exact observation-time sampler for uniform-increment models."""

    delta: np.ndarray  # shared net increment (d,)
    step: int  # s = delta.sum()
    rate: float  # per-particle branch rate

    @classmethod
    def detect(cls, model):
        """Return a law when the model qualifies, else None."""
        if np.abs(model.motion.q).max() > 0:
            return None
        g = model.gamma
        if g.min() <= 0 or g.max() - g.min() > 1e-15 * max(g.max(), 1.0):
            return None
        delta = None
        for x in range(model.d):
            for o in model.offspring.outcomes[x]:
                net = o.children.astype(np.int64).copy()
                net[x] -= 1
                if delta is None:
                    delta = net
                elif not np.array_equal(delta, net):
                    return None
        if delta is None or delta.min() < 0 or delta.sum() == 0:
            return None
        d = delta.copy()
        d.setflags(write=False)
        return cls(delta=d, step=int(delta.sum()), rate=float(g[0]))

    def counter_path(self, n0, times, rng):
        """Event counts K at the (sorted) times, one exact NB step per gap."""
        k = 0
        prev = 0.0
        out = np.zeros(len(times), dtype=np.int64)
        for i, t in enumerate(times):
            if t < prev - 1e-12:
                raise DomainError("observation times must be sorted")
            dt = max(t - prev, 0.0)
            n = n0 + self.step * k
            if dt > 0.0 and n > 0:
                p = np.exp(-self.step * self.rate * dt)
                k += int(rng.negative_binomial(n / self.step, p))
            out[i] = k
            prev = t
        return out

    def sample_counts(self, counts0, times, rng):
        """Exact joint sample of the counts at the observation times."""
        counts0 = np.asarray(counts0, dtype=np.int64)
        ks = self.counter_path(int(counts0.sum()), times, rng)
        return counts0[None, :] + ks[:, None] * self.delta[None, :], int(ks[-1])


def replica_rng(seed, replica_index):
    """Deterministic per-replica generator for the closed-form engine."""
    ss = np.random.SeedSequence((int(seed) & (2 ** 63 - 1), int(replica_index), 0x45584143))
    return np.random.Generator(np.random.Philox(ss))
