"""Total positivity, MTP2/SCM checks and peacock verification.

Submodules: :mod:`~peacocks.totpos` (TP2 kernels, log-concavity),
:mod:`~peacocks.mtp2` (joint laws), :mod:`~peacocks.scm` (conditional
monotonicity), :mod:`~peacocks.processes` (finite chains, simulation) and
:mod:`~peacocks.peacock` (functionals and convex order).
"""

__version__ = "0.1.0"

from .errors import DomainError, ExactModeCapError, InputError
from .reports import CheckReport, Verdict
from .totpos import (KernelGrid, builtin_kernel, check_log_concave, check_supermodular_logdensity,
                     check_tp2_grid, compose_kernels, reflect_kernel, smooth_kernel)
from .mtp2 import (GaussianSpec, ProbTensor, abs_gaussian_mtp2, chain_joint, check_mtp2, comonotony_gap,
                   gaussian_mtp2, weighted_marginal)
from .scm import ScmProbe, ScmReport, cm_check, scm_bivariate_tp2, scm_randomized, scm_ratio
from .processes import (FiniteChain, PathEnsemble, ProcessModel, gw_rescaled_chain, gw_transition,
                        simulate)
from .peacock import (FunctionalLaw, PeacockReport, PeacockSpec, QSpec, build_functional,
                      convex_order_exact, convex_order_mc, integrability_diagnostics)

__all__ = [
    "DomainError", "ExactModeCapError", "InputError", "CheckReport", "Verdict",
    "KernelGrid", "builtin_kernel", "check_log_concave", "check_supermodular_logdensity", "check_tp2_grid",
    "compose_kernels", "reflect_kernel", "smooth_kernel",
    "GaussianSpec", "ProbTensor", "abs_gaussian_mtp2", "chain_joint", "check_mtp2", "comonotony_gap",
    "gaussian_mtp2", "weighted_marginal",
    "ScmProbe", "ScmReport", "cm_check", "scm_bivariate_tp2", "scm_randomized", "scm_ratio",
    "FiniteChain", "PathEnsemble", "ProcessModel", "gw_rescaled_chain", "gw_transition", "simulate",
    "FunctionalLaw", "PeacockReport", "PeacockSpec", "QSpec", "build_functional", "convex_order_exact",
    "convex_order_mc", "integrability_diagnostics",
]
