"""Total positivity of kernels, matrices and densities.

Run with ``python3 demos/01_total_positivity.py``.
"""

import math

import numpy as np
from scipy import stats

from peacocks.processes import gw_transition
from peacocks.totpos import (KernelGrid, builtin_kernel, check_log_concave, check_supermodular_logdensity,
                             check_tp2_grid, compose_kernels, log_mixed_differences)

# %% A 3x3 joint law that is not TP2. The worst 2x2 minor sits in the top-left corner.
P = np.array([[3, 3, 1], [3, 2, 2], [1, 2, 3]]) / 20
rep = check_tp2_grid(KernelGrid([1, 2, 3], [1, 2, 3], P))
print("P:", rep.verdict, "minor", rep.witness["minor"], "rows", rep.witness["rows"], "cols", rep.witness["cols"])

# %% The critical Galton-Watson matrix with geometric(1/2) offspring, truncated to 8 states, is TP2.
Q = gw_transition(7)
print("GW Q(8 states):", check_tp2_grid(KernelGrid(np.arange(8.0), np.arange(8.0), Q.matrix)).verdict,
      " largest truncated row mass", float(Q.tail.max()))

# %% Heat and Ornstein-Uhlenbeck kernels: the log mixed difference is 1/t and c/sinh(ct).
g = np.linspace(-2, 2, 41)
for t in (0.5, 1.0, 2.0):
    K = builtin_kernel("brownian", g, t=t)
    D = log_mixed_differences(K)
    print(f"brownian t={t}: TP2 {check_tp2_grid(K).verdict}, mixed difference {D.mean():.6f} (1/t = {1 / t})")
ou = builtin_kernel("ou", g, c=1.0, t=1.0)
print("OU c=1 t=1: log-supermodular", check_supermodular_logdensity(ou).verdict,
      f"mixed difference {log_mixed_differences(ou).mean():.6f} vs 1/sinh(1) = {1 / math.sinh(1):.6f}")

# %% A Cauchy-type displacement kernel 1/(1+(x-y)^2) is not TP2; two points per axis already show it.
cauchy = check_tp2_grid(builtin_kernel("cauchy_counterexample", [0, 1], [-3, -1]))
print("cauchy:", cauchy.verdict, "minor", cauchy.witness["minor"])

# %% Chapman-Kolmogorov on a grid: composing two half-time heat kernels gives the unit-time kernel.
h = np.linspace(-8, 8, 321)
half = builtin_kernel("brownian", h, t=0.5)
err = np.abs(compose_kernels(half, half).values - builtin_kernel("brownian", h, t=1.0).values)
print("composition error on |x|,|y| <= 3:", float(err[np.ix_(np.abs(h) <= 3, np.abs(h) <= 3)].max()))

# %% Log-concavity of increments decides TP2 for independent-increment kernels.
x = np.linspace(0.05, 5, 100)
for shape in (0.5, 2.0):
    print(f"gamma({shape}) density log-concave:", check_log_concave(stats.gamma(shape).pdf, x=x).verdict)
print("poisson(3) pmf log-concave:", check_log_concave(stats.poisson.pmf(np.arange(20), 3.0)).verdict)
