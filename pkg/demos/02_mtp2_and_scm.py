"""MTP2 joint laws, co-monotony and strong conditional monotonicity (SCM).

Run with ``python3 demos/02_mtp2_and_scm.py``.
"""

import numpy as np

from peacocks.mtp2 import (GaussianSpec, ProbTensor, abs_gaussian_mtp2, check_mtp2, comonotony_gap,
                           gaussian_mtp2, random_monotone_function, random_mtp2_tensor)
from peacocks.processes import gamma_subordinator_joint
from peacocks.scm import ScmProbe, cm_check, scm_randomized, scm_ratio

rng = np.random.default_rng(0)

# %% Markov chains with TP2 transitions have MTP2 finite-dimensional laws.
joint = random_mtp2_tensor(rng, (4, 3, 5))
print("random chain joint:", check_mtp2(joint).verdict)
phi = random_monotone_function(rng, joint.shape)
psi = random_monotone_function(rng, joint.shape)
print("co-monotony gap E[phi psi] - E[phi]E[psi] =", comonotony_gap(joint, phi, psi))

# %% Gaussian vectors: MTP2 iff the precision matrix has nonpositive off-diagonal entries.
neg = GaussianSpec([0, 0], [[1, -0.5], [-0.5, 1]])
print("Gaussian with rho=-0.5:", gaussian_mtp2(neg).verdict, "| its absolute values:", abs_gaussian_mtp2(neg).verdict)

# %% MTP2 implies SCM: no random probe finds a decreasing conditional ratio.
print("SCM on the MTP2 joint:", scm_randomized(joint, 1, trials=500, seed=1).verdict)

# %% The matrix P is not TP2, so positive weights refute SCM; monotone weights do not.
P = ProbTensor(None, np.array([[3, 3, 1], [3, 2, 2], [1, 2, 3]]) / 20)
bad = scm_randomized(P, 1, trials=1000, seed=0)
print("P, positive weights:", bad.verdict, "at trial", bad.witness["trial"], "z pair", bad.witness["z_pair"])
replay = scm_ratio(P, ScmProbe.from_dict(bad.witness["probe"]))
print("  replayed K values:", np.round(replay.K_values, 6))
print("P, nondecreasing weights:", scm_randomized(P, 1, trials=5000, seed=0, weight_class="nondecreasing").verdict)

# %% A gamma subordinator observed at two times is conditionally monotone but not SCM.
G = gamma_subordinator_joint(0.3, 0.6, h=0.1, n_cells=20)
print("gamma subordinator CM:", cm_check(G, 1, trials=500, seed=0).verdict,
      "| SCM:", scm_randomized(G, 1, trials=500, seed=0).verdict)
