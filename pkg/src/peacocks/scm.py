"""Strong conditional monotonicity (SCM) and conditional monotonicity (CM).

For a discrete joint law of ``X = (X_1, ..., X_n)``, a componentwise
non-decreasing ``phi`` and strictly positive weights ``f_k``, the ratio

    K_i(z) = E[phi(X) prod_k f_k(X_k) | X_i = z] / E[prod_k f_k(X_k) | X_i = z]

is computed exactly by summing over the slice ``X_i = z``. The law is SCM if
``K_i`` is non-decreasing for every such probe. Randomized suites can only
refute this, never certify it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ._parallel import pmap
from .errors import DomainError, InputError
from .mtp2 import ProbTensor
from .reports import CheckReport, Verdict, to_jsonable
from .totpos import KernelGrid, check_tp2_grid

__all__ = [
    "ScmProbe",
    "ScmReport",
    "scm_ratio",
    "scm_randomized",
    "scm_bivariate_tp2",
    "cm_check",
    "draw_probe",
    "WEIGHT_CLASSES",
    "SCM_TOL",
]

SCM_TOL = 1e-10
WEIGHT_CLASSES = ("positive", "nondecreasing", "nonincreasing", "unit")
LOG_WEIGHT_BOUND = 3.0


def _is_monotone_table(phi: np.ndarray) -> bool:
    return all(np.all(np.diff(phi, axis=k) >= 0) for k in range(phi.ndim))


@dataclass
class ScmProbe:
    """Test function ``phi`` on the joint's index space, weights and conditioning index."""

    phi: np.ndarray
    f_list: list
    i: int

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        self.f_list = [np.asarray(f, dtype=float) for f in self.f_list]
        if not np.all(np.isfinite(self.phi)):
            raise InputError("phi must be finite")
        if not _is_monotone_table(self.phi):
            raise InputError("phi must be non-decreasing along every axis")
        if len(self.f_list) != self.phi.ndim:
            raise InputError("need one weight vector per coordinate")
        for k, f in enumerate(self.f_list):
            if f.shape != (self.phi.shape[k],):
                raise InputError(f"weight {k} has length {f.size}, expected {self.phi.shape[k]}")
            if not np.all(np.isfinite(f)) or np.any(f <= 0):
                raise InputError(f"weight {k} must be finite and strictly positive")
        if not 0 <= int(self.i) < self.phi.ndim:
            raise InputError(f"conditioning index {self.i} out of range")
        self.i = int(self.i)

    def to_dict(self) -> dict:
        return {"phi": self.phi.ravel().tolist(), "shape": list(self.phi.shape),
                "f_list": [f.tolist() for f in self.f_list], "i": self.i}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScmProbe":
        phi = np.asarray(d["phi"], dtype=float).reshape(d["shape"])
        return cls(phi, d["f_list"], d["i"])


@dataclass
class ScmReport:
    K_values: np.ndarray
    verdict: Verdict
    worst_decrease: float
    witness: tuple | None
    probe: ScmProbe
    tolerance: float = SCM_TOL
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == Verdict.PASS

    @property
    def failed(self) -> bool:
        return self.verdict == Verdict.FAIL

    def to_dict(self) -> dict:
        return to_jsonable({
            "K_values": self.K_values, "verdict": self.verdict,
            "worst_decrease": self.worst_decrease,
            "witness": list(self.witness) if self.witness is not None else None,
            "probe": self.probe.to_dict(), "tolerance": self.tolerance, "meta": self.meta,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScmReport":
        K = np.array([np.nan if v is None else v for v in d["K_values"]], dtype=float)
        w = tuple(d["witness"]) if d.get("witness") is not None else None
        return cls(K, Verdict(d["verdict"]), d["worst_decrease"], w,
                   ScmProbe.from_dict(d["probe"]), d.get("tolerance", SCM_TOL), dict(d.get("meta", {})))


def _k_values(p: np.ndarray, probe: ScmProbe) -> tuple[np.ndarray, np.ndarray]:
    W = p
    for k, f in enumerate(probe.f_list):
        shape = [1] * p.ndim
        shape[k] = -1
        W = W * f.reshape(shape)
    other = tuple(k for k in range(p.ndim) if k != probe.i)
    num = (probe.phi * W).sum(axis=other)
    den = W.sum(axis=other)
    mass = p.sum(axis=other)
    with np.errstate(invalid="ignore", divide="ignore"):
        K = np.where(mass > 0, num / np.where(den > 0, den, 1.0), np.nan)
    return K, mass > 0


def _monotonicity(K: np.ndarray, defined: np.ndarray) -> tuple[float, tuple | None]:
    """Most negative ``K(z') - max_{z < z'} K(z)`` over defined entries."""
    best = -np.inf
    best_at = -1
    worst, pair = 0.0, None
    for z in np.flatnonzero(defined):
        if best_at >= 0:
            d = K[z] - best
            if d < worst:
                worst, pair = float(d), (int(best_at), int(z))
        if K[z] > best:
            best, best_at = K[z], z
    return worst, pair


def scm_ratio(joint: ProbTensor, probe: ScmProbe, tol: float = SCM_TOL) -> ScmReport:
    """Exact ``K_i(z)`` for every ``z`` on coordinate ``probe.i``.

    Slices of zero mass are reported as NaN and skipped. The verdict is
    ``fail`` iff ``K(z') < K(z) - tol`` for some defined ``z < z'``; the
    witness is that pair of 0-based indices.
    """
    if probe.phi.shape != joint.shape:
        raise InputError(f"probe shape {probe.phi.shape} does not match joint shape {joint.shape}")
    K, defined = _k_values(joint.values, probe)
    if not defined.any():
        raise DomainError("every conditioning slice has zero mass")
    worst, pair = _monotonicity(K, defined)
    verdict = Verdict.FAIL if worst < -tol else Verdict.PASS
    return ScmReport(K, verdict, worst, pair if worst < 0 else None, probe, tol)


def _step_values(rng: np.random.Generator, n: int, weight_class: str) -> np.ndarray:
    n_breaks = int(rng.integers(0, n)) if n > 1 else 0
    cuts = np.sort(rng.choice(np.arange(1, n), size=n_breaks, replace=False)) if n_breaks else np.array([], int)
    levels = rng.uniform(-LOG_WEIGHT_BOUND, LOG_WEIGHT_BOUND, size=n_breaks + 1)
    snap = rng.random(n_breaks + 1) < 0.5
    levels = np.where(snap, np.sign(levels) * LOG_WEIGHT_BOUND, levels)
    if weight_class == "nondecreasing":
        levels = np.sort(levels)
    elif weight_class == "nonincreasing":
        levels = np.sort(levels)[::-1]
    seg = np.searchsorted(cuts, np.arange(n), side="right")
    return np.clip(levels[seg], -LOG_WEIGHT_BOUND, LOG_WEIGHT_BOUND)


def draw_probe(rng: np.random.Generator, shape: Sequence[int], i: int,
               weight_class: str = "positive") -> ScmProbe:
    """Random probe.

    ``phi`` is a positive combination of one to three upper-orthant
    indicators ``1[x >= a]`` scaled to maximum 1; it is always drawn first so
    every weight class sees the same ``phi`` for a given stream. Weights are
    ``exp`` of random step functions with levels in ``[-3, 3]``, sorted for
    the monotone classes; ``unit`` gives ``f == 1``.
    """
    if weight_class not in WEIGHT_CLASSES:
        raise InputError(f"unknown weight_class {weight_class!r}")
    shape = tuple(int(s) for s in shape)
    grids = np.indices(shape)
    phi = np.zeros(shape)
    n_terms = int(rng.integers(1, 4))
    coef = rng.exponential(size=n_terms)
    for c in coef:
        corner = [int(rng.integers(0, s)) for s in shape]
        ind = np.ones(shape, dtype=bool)
        for k, a in enumerate(corner):
            ind &= grids[k] >= a
        phi += c * ind
    phi /= coef.sum()
    if weight_class == "unit":
        f_list = [np.ones(s) for s in shape]
    else:
        f_list = [np.exp(_step_values(rng, s, weight_class)) for s in shape]
    return ScmProbe(phi, f_list, i)


def _trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(trial)])


def _run_chunk(joint, i, trials, seed, weight_class, tol):
    worsts = []
    for t in trials:
        probe = draw_probe(_trial_rng(seed, t), joint.shape, i, weight_class)
        rep = scm_ratio(joint, probe, tol)
        worsts.append((t, rep.worst_decrease))
        if rep.verdict == Verdict.FAIL:
            return worsts, rep
    return worsts, None


def scm_randomized(joint: ProbTensor, i: int, trials: int = 1000, seed: int = 0,
                   weight_class: str = "positive", tol: float = SCM_TOL, jobs: int = 1) -> CheckReport:
    """Search for an SCM violation with ``trials`` random probes.

    Trial ``t`` uses the stream ``default_rng([seed, t])``. The first failing
    trial (lowest index) becomes the witness, with its full probe so it can be
    replayed through :func:`scm_ratio`. The result does not depend on ``jobs``.
    """
    if trials < 1:
        raise InputError("trials must be >= 1")
    if weight_class not in WEIGHT_CLASSES:
        raise InputError(f"unknown weight_class {weight_class!r}")
    if not 0 <= i < joint.ndim:
        raise InputError(f"conditioning index {i} out of range")
    n_chunks = max(1, min(int(jobs), trials))
    chunks = [range(c * trials // n_chunks, (c + 1) * trials // n_chunks) for c in range(n_chunks)]
    results = pmap(lambda ch: _run_chunk(joint, i, ch, seed, weight_class, tol), chunks, jobs)
    # chunks are contiguous and ordered, so the first chunk that failed holds the lowest failing trial
    fail_rep, fail_trial = None, trials
    for worsts, rep in results:
        if rep is not None:
            fail_rep, fail_trial = rep, worsts[-1][0]
            break
    all_worst = [w for ws, _ in results for (t, w) in ws if t <= fail_trial]
    worst = min(0.0, min(all_worst)) if all_worst else 0.0
    meta = {"weight_class": weight_class, "i": int(i), "seed": int(seed), "trials": int(trials)}
    if fail_rep is None:
        meta["note"] = f"no violation in {trials} trials"
        return CheckReport(Verdict.PASS, worst, None, tol, int(trials), meta)
    witness = {"trial": int(fail_trial), "z_pair": list(fail_rep.witness),
               "K_values": fail_rep.K_values.tolist(), "probe": fail_rep.probe.to_dict()}
    return CheckReport(Verdict.FAIL, fail_rep.worst_decrease, witness, tol, int(fail_trial) + 1, meta)


def cm_check(joint: ProbTensor, i: int, trials: int = 1000, seed: int = 0,
             tol: float = SCM_TOL, jobs: int = 1) -> CheckReport:
    """Conditional monotonicity: :func:`scm_randomized` with unit weights and the same ``phi`` stream."""
    rep = scm_randomized(joint, i, trials, seed, "unit", tol, jobs)
    rep.meta["check"] = "cm"
    return rep


def scm_bivariate_tp2(joint: ProbTensor, tol: float = 1e-10) -> CheckReport:
    """Exact SCM decision for a strictly positive bivariate law, via its TP2 minors."""
    if joint.ndim != 2:
        raise InputError("scm_bivariate_tp2 needs a 2-D joint")
    if np.any(joint.values <= 0):
        return CheckReport(Verdict.INCONCLUSIVE, 0.0, None, tol, 0,
                           meta={"reason": "bivariate reduction needs a strictly positive joint"})
    K = KernelGrid(np.asarray(joint.axes[0], float), np.asarray(joint.axes[1], float), joint.values)
    rep = check_tp2_grid(K, tol)
    rep.meta["check"] = "scm_bivariate"
    return rep
