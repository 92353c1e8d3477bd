"""Critical-regime functional CLT
=================================

At 2 Re(lambda_2) = lambda_1 the "pull" to the stationary profile matches
the "push" of the fluctuations, and the properly normalised critical pairing
converges over the accelerated clock n*t to a scaled Brownian motion: the
covariance kernel is min(r, t) times the pair-correlation weight times the
leading martingale limit.  The lag ratio kernel(0.5, 1)/kernel(1, 1) = 1/2
pins the Brownian structure.
"""

import numpy as np

from branchfluct import canonical
from branchfluct.limits import MartingaleLimitSet, crit_cov
from branchfluct.simulate import (
    SimConfig,
    estimate_W,
    fluctuation_matrix,
    simulate_ensemble,
)
from branchfluct.simulate.series import fluctuation_exact_mean
from branchfluct.verify import empirical_cov_conditional

model, es = canonical.get_pair("model_c")
n, grid = 8.0, (0.5, 1.0)  # accelerated clock: absolute times n*t
T_W = 5.0
obs = tuple(sorted({T_W / 2, T_W} | {n * t for t in grid}))
cfg = SimConfig(horizon=max(obs), observation_times=obs, seed=5, replicas=8_000)
rs = simulate_ensemble(model, 0, cfg, engine="ssa", threads=4)
w, _ = estimate_W(es, rs, 0, 0, 0, T_W)

phi2 = np.array([1.0, -1.0], dtype=complex)  # the critical eigenfunction
F = fluctuation_matrix(es, rs, phi2, "critical", n, grid).real
mean = fluctuation_exact_mean(model, es, phi2, "critical", n, grid, 0).real

W1 = MartingaleLimitSet.from_estimates({(0, 0, 0): 1.0})
unit = np.zeros((2, 2))
for a in range(2):
    for b in range(2):
        r, t = sorted((grid[a], grid[b]))
        unit[a, b] = crit_cov(es, model, r, t, phi2, phi2, W1).plain.real
print("kernel per unit limit value (Brownian: min(r,t)):\n", unit)

cov = empirical_cov_conditional(F, F, w.real, grid=grid, unit_plain=unit,
                                mean_f=mean, mean_g=mean)
print("empirical covariance:\n", np.round(cov.plain.real, 4))
print("target (kernel x mean limit estimate):\n",
      np.round(np.asarray(cov.target_plain).real, 4))
print("worst |deviation| / jackknife SE:", round(cov.max_deviation_multiple(), 2))

Fc = F - mean[None, :]
ratio = (Fc[:, 0] * Fc[:, 1]).mean() / (Fc[:, 1] ** 2).mean()
print(f"empirical lag ratio cov(0.5,1)/var(1): {ratio:.3f} (Brownian: 0.5)")
