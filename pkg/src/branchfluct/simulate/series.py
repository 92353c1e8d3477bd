"""Replica ensembles, martingale paths, limit estimates and fluctuation series."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError, ObservationGridError, RegimePreconditionError
from ..limits import classify_ei, martingale_functional
from ..spectral import classify_regimes
from . import engine as _engine
from .engine import Trajectory
from .exactlaw import UniformStepLaw, replica_rng

_TIME_TOL = 1e-9


@dataclass
class ReplicaSet:
    """Trajectories of independent replicas, stored as one counts slab.

    ``w_estimates`` holds per-replica martingale-limit estimates keyed by
    (eigenvalue, rank, vector) triples once ``estimate_W`` has run.
    """

    times: tuple
    counts: np.ndarray  # (R, n_obs, d) int64
    events: np.ndarray  # (R,)
    capped: np.ndarray  # (R,) bool
    start_type: int
    seed: int
    engine: str
    w_estimates: dict = field(default_factory=dict)
    w_bias: dict = field(default_factory=dict)

    @property
    def n_replicas(self):
        return self.counts.shape[0]

    def pairings(self, f):
        """<X_t, f> as an (R, n_obs) array."""
        vals = self.counts @ np.asarray(f, dtype=complex)
        return vals

    def time_index(self, t):
        for i, s in enumerate(self.times):
            if abs(s - t) <= _TIME_TOL:
                return i
        raise ObservationGridError(
            f"time {t} is not among the recorded observation times "
            f"{self.times}; interpolation is refused"
        )

    def trajectory(self, r):
        return Trajectory(
            times=self.times,
            counts=self.counts[r],
            events=int(self.events[r]),
            capped=bool(self.capped[r]),
            start_type=self.start_type,
            replica_index=r,
        )


def simulate_ensemble(model, start_type, cfg, threads=None, engine="auto"):
    """Simulate cfg.replicas independent trajectories.

    ``engine``: "ssa" (event-driven, always available), "exact" (closed-form
    transitions, uniform-increment models only) or "auto" (exact when the
    model qualifies).  Per-replica streams are derived by hashing
    (master seed, replica index), so results are independent of the thread
    count and merge deterministically by replica index.
    """
    R = cfg.replicas
    obs = np.asarray(cfg.observation_times, dtype=float)
    if engine == "auto":
        engine = "exact" if UniformStepLaw.detect(model) else "ssa"
    if engine == "exact":
        law = UniformStepLaw.detect(model)
        if law is None:
            raise DomainError(
                "closed-form engine requires a uniform-increment model"
            )
        counts0 = np.zeros(model.d, dtype=np.int64)
        counts0[start_type] = 1
        out = np.zeros((R, obs.size, model.d), dtype=np.int64)
        events = np.zeros(R, dtype=np.int64)

        def fill_exact(indices):
            for r in indices:
                rows, k_last = law.sample_counts(
                    counts0, obs, replica_rng(cfg.seed, r)
                )
                out[r] = rows
                events[r] = k_last

        _run_blocks(fill_exact, R, threads)
        return ReplicaSet(
            times=tuple(obs),
            counts=out,
            events=events,
            capped=np.zeros(R, dtype=bool),
            start_type=int(start_type),
            seed=int(cfg.seed),
            engine="exact",
        )
    if engine != "ssa":
        raise ValueError(f"unknown engine {engine!r}")
    out = np.zeros((R, obs.size, model.d), dtype=np.int64)
    events = np.zeros(R, dtype=np.int64)
    capped = np.zeros(R, dtype=bool)

    def fill_ssa(indices):
        _engine.run_replica_block(
            model, start_type, cfg, indices, out, events, capped
        )

    _run_blocks(fill_ssa, R, threads)
    return ReplicaSet(
        times=tuple(obs),
        counts=out,
        events=events,
        capped=capped,
        start_type=int(start_type),
        seed=int(cfg.seed),
        engine="ssa",
    )


def _run_blocks(worker, R, threads):
    if threads is None or threads <= 1 or R < 64:
        worker(range(R))
        return
    blocks = np.array_split(np.arange(R), threads * 4)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(worker, [b for b in blocks if b.size]))


def martingale_path(es, trajectory, i, j, k):
    """(time, martingale value) pairs along one trajectory."""
    out = []
    for idx, t in enumerate(trajectory.times):
        vec = martingale_functional(es, i, j, k, t)
        out.append((t, complex(trajectory.counts[idx] @ vec)))
    return out


def estimate_W(es, replica_set, i, j, k, T_W):
    """Per-replica martingale-limit estimates at horizon T_W.

    Returns (estimates, bias) where bias is the per-replica indicator
    |value at T_W - value at T_W/2| (NaN when T_W/2 was not recorded).
    Only martingales of large-regime eigenvalues converge, so i must not
    exceed the large cutoff.
    """
    reg = classify_regimes(es)
    if i >= reg.m_L:
        raise RegimePreconditionError(
            "martingale not convergent in this regime "
            f"(eigenvalue index {i + 1} exceeds the large cutoff)",
            report=reg,
        )
    idx = replica_set.time_index(T_W)
    vec = martingale_functional(es, i, j, k, T_W)
    west = replica_set.counts[:, idx, :] @ vec
    try:
        half_idx = replica_set.time_index(T_W / 2)
        vec_h = martingale_functional(es, i, j, k, T_W / 2)
        bias = np.abs(west - replica_set.counts[:, half_idx, :] @ vec_h)
    except ObservationGridError:
        bias = np.full(replica_set.n_replicas, np.nan)
    replica_set.w_estimates[(i, j, k)] = west
    replica_set.w_bias[(i, j, k)] = bias
    return west, bias


def large_indices(es, m_L):
    return [
        (i, j, k)
        for (i, j, k) in es.indices()
        if i < m_L
    ]


def _absolute_times(es, f, regime, n, t_grid):
    t_grid = [float(t) for t in t_grid]
    if regime == "large":
        return t_grid, None
    if regime == "small":
        return [n + t for t in t_grid], None
    if regime == "critical":
        cf = classify_ei(es, f)
        return [n * t for t in t_grid], cf
    raise ValueError(f"unknown regime {regime!r}")


def fluctuation_matrix(es, replica_set, f, regime, n, t_grid, w_estimates=None):
    """Regime-normalised centered series for every replica, as an (R, G) array.

    The centering subtracts the retained-spectrum growth terms weighted by
    the per-replica martingale-limit estimates; the normalisation follows the
    regime (growth-rate for large, half-rate over n + t for small, critical
    rate over n*t with the depth-dependent power of n for critical).
    """
    f = np.asarray(f, dtype=complex)
    reg = classify_regimes(es)
    if regime != reg.regime and not (regime == "large"):
        raise RegimePreconditionError(
            f"requested {regime!r} series but the spectrum classifies as "
            f"{reg.regime!r}",
            report=reg,
        )
    w_estimates = w_estimates if w_estimates is not None else replica_set.w_estimates
    needed = large_indices(es, reg.m_L)
    for key in needed:
        if key not in w_estimates:
            raise ValueError(
                f"missing martingale-limit estimates for triple {key}"
            )
    abs_times, cf = _absolute_times(es, f, regime, n, t_grid)
    cols = [replica_set.time_index(t) for t in abs_times]
    lam1 = es.lambda1
    p1 = es.p(0)
    R = replica_set.n_replicas
    out = np.zeros((R, len(abs_times)), dtype=complex)
    for g_idx, (T, col) in enumerate(zip(abs_times, cols)):
        vals = replica_set.counts[:, col, :] @ f
        centering = np.zeros(R, dtype=complex)
        for (i, j, k) in needed:
            coeff = es.dual_semigroup_pairing(i, j, k, T, f)
            if coeff != 0:
                centering += coeff * w_estimates[(i, j, k)]
        if regime == "large":
            norm = math.exp(-es.eigenvalues[reg.m_L - 1].real * T)
        elif regime == "small":
            norm = math.exp(-lam1 / 2.0 * T) * n ** (-(p1 - 1) / 2.0)
        else:
            norm = np.exp(-cf.lam * T) * n ** (-(2 * cf.p + p1 - 2) / 2.0)
        out[:, g_idx] = norm * (vals - centering)
    return out


def fluctuation_exact_mean(model, es, f, regime, n, t_grid, start_type):
    """Exact deterministic mean of the fluctuation series at finite n.

    The limit processes are mean zero, but at finite horizons the series
    keeps a computable deterministic mean: the normalised gap between the
    exact pairing expectation and the retained-spectrum centering terms
    (whose limit-estimate factors are unbiased).  Covariance comparisons
    against the limit kernels subtract this mean.
    """
    import scipy.linalg

    from ..spectral import mean_generator

    f = np.asarray(f, dtype=complex)
    reg = classify_regimes(es)
    abs_times, cf = _absolute_times(es, f, regime, n, t_grid)
    A = mean_generator(model)
    lam1 = es.lambda1
    p1 = es.p(0)
    out = np.zeros(len(abs_times), dtype=complex)
    for g_idx, T in enumerate(abs_times):
        psi = scipy.linalg.expm(T * A) @ f
        mean = psi[start_type]
        for (i, j, k) in large_indices(es, reg.m_L):
            coeff = es.dual_semigroup_pairing(i, j, k, T, f)
            mean -= coeff * es.phi[i][j][k][start_type]
        if regime == "large":
            norm = math.exp(-es.eigenvalues[reg.m_L - 1].real * T)
        elif regime == "small":
            norm = math.exp(-lam1 / 2.0 * T) * n ** (-(p1 - 1) / 2.0)
        else:
            norm = np.exp(-cf.lam * T) * n ** (-(2 * cf.p + p1 - 2) / 2.0)
        out[g_idx] = norm * mean
    return out


def fluctuation_series(es, trajectory, f, regime, W_est, n, t_grid):
    """Single-trajectory fluctuation series as (time, value) pairs.

    ``W_est`` maps (i, j, k) triples to this replica's limit estimates.
    """
    rs = ReplicaSet(
        times=trajectory.times,
        counts=trajectory.counts[None, :, :],
        events=np.array([trajectory.events]),
        capped=np.array([trajectory.capped]),
        start_type=trajectory.start_type,
        seed=0,
        engine="single",
    )
    w = {key: np.array([val]) for key, val in W_est.items()}
    mat = fluctuation_matrix(es, rs, f, regime, n, t_grid, w_estimates=w)
    return [(float(t), complex(v)) for t, v in zip(t_grid, mat[0])]
