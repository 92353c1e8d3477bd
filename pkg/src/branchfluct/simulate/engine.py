"""Exact event-driven simulation of the branching process.

The state is aggregated by type (counts, not individual particles): rates
depend only on the type, so one event costs O(d) regardless of population
size.  The event clock is the total-rate exponential; the event site, the
motion-vs-branch split, the motion target and the branching outcome are
drawn from the per-type rate proportions.

Randomness is counter based: a replica's stream is the SplitMix64 output
finalizer evaluated on (stream base + counter), with the base derived by
hashing (master seed, replica index).  Streams are therefore reproducible
bit for bit, independent of scheduling, and disjoint across replicas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..errors import DomainError
from ..model import PopulationState

_GOLD = np.uint64(0x9E3779B97F4A7C15)


@njit(cache=True, nogil=True, inline="always")
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True, inline="always")
def _u01(base, ctr):
    # 53-bit uniform in [0, 1)
    return (_mix(base + _GOLD * ctr) >> np.uint64(11)) * 1.1102230246251565e-16


_MASK = (1 << 64) - 1


def _mix_int(z):
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def stream_base(seed, replica_index):
    """Hash (master seed, replica index) into a stream base."""
    h = _mix_int((int(seed) & _MASK) + 0x9E3779B97F4A7C15)
    return np.uint64(_mix_int(h + int(replica_index) * 0x9E3779B97F4A7C15))


@njit(cache=True, nogil=True)
def _ssa_kernel(
    q, move_rate, gamma, out_off, out_cum, out_kids, obs, counts0, cap, base, out
):
    d = counts0.size
    counts = counts0.copy()
    n_obs = obs.size
    t = 0.0
    ctr = np.uint64(0)
    events = 0
    capped = False
    ptr = 0
    while ptr < n_obs:
        total_rate = 0.0
        for x in range(d):
            total_rate += counts[x] * (move_rate[x] + gamma[x])
        if total_rate <= 0.0:
            break  # frozen process: every later observation sees this state
        u = _u01(base, ctr)
        ctr += np.uint64(1)
        t_next = t - math.log1p(-u) / total_rate
        while ptr < n_obs and obs[ptr] < t_next:
            for x in range(d):
                out[ptr, x] = counts[x]
            ptr += 1
        if ptr >= n_obs:
            break
        t = t_next
        # event site proportional to per-type rate
        u = _u01(base, ctr) * total_rate
        ctr += np.uint64(1)
        x = 0
        acc = counts[0] * (move_rate[0] + gamma[0])
        while x < d - 1 and u >= acc:
            x += 1
            acc += counts[x] * (move_rate[x] + gamma[x])
        # motion jump vs branch
        u = _u01(base, ctr) * (move_rate[x] + gamma[x])
        ctr += np.uint64(1)
        if u < move_rate[x]:
            u = _u01(base, ctr) * move_rate[x]
            ctr += np.uint64(1)
            y = 0
            acc = 0.0
            target = -1
            while y < d:
                if y != x:
                    acc += q[x, y]
                    if u < acc:
                        target = y
                        break
                y += 1
            if target < 0:  # guard against rounding at the upper edge
                target = d - 1 if x != d - 1 else d - 2
            counts[x] -= 1
            counts[target] += 1
        else:
            u = _u01(base, ctr)
            ctr += np.uint64(1)
            o = out_off[x]
            hi = out_off[x + 1]
            while o < hi - 1 and u >= out_cum[o]:
                o += 1
            counts[x] -= 1
            pop = 0
            for y in range(d):
                counts[y] += out_kids[o, y]
                pop += counts[y]
            if pop > cap:
                capped = True
                break
        events += 1
    while ptr < n_obs:
        for x in range(d):
            out[ptr, x] = counts[x]
        ptr += 1
    return events, capped


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo run configuration."""

    horizon: float
    observation_times: tuple
    seed: int
    replicas: int = 1
    population_cap: int = 10_000_000

    def __post_init__(self):
        times = tuple(sorted(float(t) for t in self.observation_times))
        object.__setattr__(self, "observation_times", times)
        if self.population_cap < 1:
            raise DomainError("population cap must be >= 1")
        if times and (times[0] < 0 or times[-1] > self.horizon + 1e-12):
            raise DomainError("observation times must lie in [0, horizon]")
        if self.replicas < 1:
            raise DomainError("need at least one replica")


@dataclass(frozen=True)
class Trajectory:
    """Recorded type counts at the observation times of one replica."""

    times: tuple
    counts: np.ndarray  # (n_obs, d) int64
    events: int
    capped: bool
    start_type: int
    replica_index: int

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def states(self):
        return [
            PopulationState(counts=self.counts[i], time=t)
            for i, t in enumerate(self.times)
        ]

    def pairing(self, f):
        """<X_t, f> at every observation time."""
        return self.counts @ np.asarray(f, dtype=complex)


def _flat_offspring(model):
    key = "_flat_offspring"
    if key in model._cache:
        return model._cache[key]
    d = model.d
    off = np.zeros(d + 1, dtype=np.int64)
    cums, kids = [], []
    for x in range(d):
        outs = model.offspring.outcomes[x]
        off[x + 1] = off[x] + len(outs)
        c = np.cumsum([o.probability for o in outs])
        c[-1] = 1.0
        cums.append(c)
        kids.append(np.stack([o.children for o in outs]))
    flat = (
        np.ascontiguousarray(model.motion.q),
        -np.diag(model.motion.q).copy(),
        model.gamma.copy(),
        off,
        np.concatenate(cums),
        np.ascontiguousarray(np.concatenate(kids)),
    )
    model._cache[key] = flat
    return flat


def simulate_path(model, start_type, cfg, replica_index=0):
    """One statistically exact trajectory, recorded at the observation times.

    A zero total rate freezes the process to the horizon; exceeding the
    population cap truncates the path and raises the ``capped`` flag (a
    flagged outcome, not an error).
    """
    q, move_rate, gamma, off, cum, kids = _flat_offspring(model)
    obs = np.asarray(cfg.observation_times, dtype=float)
    counts0 = np.zeros(model.d, dtype=np.int64)
    counts0[start_type] = 1
    out = np.zeros((obs.size, model.d), dtype=np.int64)
    events, capped = _ssa_kernel(
        q,
        move_rate,
        gamma,
        off,
        cum,
        kids,
        obs,
        counts0,
        np.int64(cfg.population_cap),
        stream_base(cfg.seed, replica_index),
        out,
    )
    return Trajectory(
        times=tuple(obs),
        counts=out,
        events=int(events),
        capped=bool(capped),
        start_type=int(start_type),
        replica_index=int(replica_index),
    )


def run_replica_block(model, start_type, cfg, indices, out, events, capped):
    """Fill preallocated slabs for a block of replica indices (thread worker)."""
    q, move_rate, gamma, off, cum, kids = _flat_offspring(model)
    obs = np.asarray(cfg.observation_times, dtype=float)
    counts0 = np.zeros(model.d, dtype=np.int64)
    counts0[start_type] = 1
    cap = np.int64(cfg.population_cap)
    for r in indices:
        ev, cp = _ssa_kernel(
            q,
            move_rate,
            gamma,
            off,
            cum,
            kids,
            obs,
            counts0,
            cap,
            stream_base(cfg.seed, r),
            out[r],
        )
        events[r] = ev
        capped[r] = cp
