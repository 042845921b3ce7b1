"""Normalized exponential functionals and convex-order (peacock) verification.

A family ``(N_t)`` with constant mean is a peacock when ``E[psi(N_t)]`` is
non-decreasing in ``t`` for convex ``psi``. For equal means this is
equivalent to every call value ``E[(N_t - K)^+]`` being non-decreasing, which
is what the verifiers test on a strike grid.

Forms supported, with ``mu = sum_i a_i delta_{lambda_i}``:

* ``maturity_F1``:   ``N_t ~ exp(sum_{lambda_i <= t} a_i q(lambda_i, X_{lambda_i}))``
* ``volatility_F2``: ``N_t ~ exp(sum_i a_i q(lambda_i, t X_{lambda_i}))``
* ``additive_A``:    ``N_t ~ sum_i a_i exp(t X_{lambda_i}) / E[exp(t X_{lambda_i})]``
* ``asian_CEX``:     ``N_t ~ (1/t) int_0^t exp(B_s - s/2) ds``

each divided by its expectation.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import integrate, special, stats

from .errors import ExactModeCapError, InputError
from .processes import FiniteChain, PathEnsemble, ProcessModel, simulate
from .reports import CheckReport, Verdict, to_jsonable

__all__ = [
    "QSpec",
    "Q_FUNCTIONS",
    "PeacockSpec",
    "FunctionalLaw",
    "PeacockReport",
    "build_functional",
    "default_strikes",
    "convex_order_exact",
    "convex_order_mc",
    "integrability_diagnostics",
    "volatility_hypothesis",
    "asian_scaling_check",
    "psi_c_class",
    "EXACT_CAP",
    "EXACT_TOL",
]

EXACT_CAP = 10_000_000
EXACT_TOL = 1e-10
FORMS = ("additive_A", "maturity_F1", "volatility_F2", "asian_CEX")
_KEY_DECIMALS = 11


def _pwlinear(lam, x, knots, values):
    return np.interp(x, knots, values)


Q_FUNCTIONS: dict[str, Callable] = {
    "identity": lambda lam, x: x,
    "clip": lambda lam, x, lo=-1.0, hi=1.0: np.clip(x, lo, hi),
    "tanh": lambda lam, x, c=1.0: np.tanh(c * x),
    "step": lambda lam, x, b=0.0: (x >= b).astype(float),
    "log1p": lambda lam, x: np.sign(x) * np.log1p(np.abs(x)),
    "vol_example": lambda lam, x: 2 * x + np.sqrt(1 + lam + x * x),
    "cube": lambda lam, x: x ** 3,
    "pwlinear": _pwlinear,
}


@dataclass
class QSpec:
    """Named, serializable ``q(lambda, x)``; ``scale`` multiplies the result (negative flips direction)."""

    name: str
    params: dict = field(default_factory=dict)
    scale: float = 1.0

    def __post_init__(self):
        if self.name not in Q_FUNCTIONS:
            raise InputError(f"unknown q function {self.name!r}; known: {sorted(Q_FUNCTIONS)}")
        try:
            self(0.0, np.linspace(-1, 1, 3))
        except TypeError as e:
            raise InputError(f"bad parameters for q {self.name!r}: {e}") from None

    def __call__(self, lam, x):
        return self.scale * np.asarray(Q_FUNCTIONS[self.name](lam, np.asarray(x, dtype=float), **self.params),
                                       dtype=float)

    def to_dict(self) -> dict:
        return {"name": self.name, "params": to_jsonable(self.params), "scale": self.scale}

    @classmethod
    def from_dict(cls, d) -> "QSpec":
        if isinstance(d, str):
            return cls(d)
        return cls(d["name"], dict(d.get("params", {})), float(d.get("scale", 1.0)))


def _monotone_ok(values: np.ndarray, direction: str, tol: float = 1e-12) -> bool:
    d = np.diff(values)
    scale = tol * max(1.0, float(np.max(np.abs(values))) if values.size else 1.0)
    return bool(np.all(d >= -scale)) if direction == "nondecreasing" else bool(np.all(d <= scale))


@dataclass
class PeacockSpec:
    """Functional to build.

    ``q`` is one :class:`QSpec` shared by all atoms or a list with one per
    atom. ``atoms`` is a list of ``(lambda_i, a_i)`` with ``a_i >= 0`` and
    increasing ``lambda_i``.
    """

    form: str
    t_grid: np.ndarray
    atoms: list = field(default_factory=list)
    q: QSpec | list | None = None
    direction: str = "nondecreasing"

    def __post_init__(self):
        if self.form not in FORMS:
            raise InputError(f"unknown form {self.form!r}")
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        if self.t_grid.ndim != 1 or self.t_grid.size < 1 or np.any(np.diff(self.t_grid) <= 0):
            raise InputError("t_grid must be strictly increasing")
        if self.direction not in ("nondecreasing", "nonincreasing"):
            raise InputError("direction must be 'nondecreasing' or 'nonincreasing'")
        self.atoms = [(float(l), float(a)) for l, a in self.atoms]
        lams = [l for l, _ in self.atoms]
        if any(a < 0 for _, a in self.atoms):
            raise InputError("atom weights must be nonnegative")
        if np.any(np.diff(lams) <= 0):
            raise InputError("atom times must be strictly increasing")
        if self.form == "asian_CEX":
            if np.any(self.t_grid <= 0):
                raise InputError("asian_CEX needs t > 0")
            return
        if not self.atoms:
            raise InputError(f"form {self.form} needs at least one atom")
        if self.form == "additive_A":
            return
        if self.q is None:
            raise InputError(f"form {self.form} needs q")
        if isinstance(self.q, (list, tuple)):
            if len(self.q) != len(self.atoms):
                raise InputError("need one q per atom")
            self.q = [q if isinstance(q, QSpec) else QSpec.from_dict(q) for q in self.q]
        elif not isinstance(self.q, QSpec):
            self.q = QSpec.from_dict(self.q)
        self.validate_direction(np.linspace(-5, 5, 201))

    def q_at(self, k: int) -> QSpec:
        return self.q[k] if isinstance(self.q, list) else self.q

    def validate_direction(self, grid) -> None:
        """Spot-check the declared monotonicity of every atom's ``q`` on ``grid``."""
        grid = np.sort(np.asarray(grid, dtype=float))
        for k, (lam, _) in enumerate(self.atoms):
            if not _monotone_ok(self.q_at(k)(lam, grid), self.direction):
                raise InputError(f"q at atom {k} is not {self.direction} on the validation grid")

    def to_dict(self) -> dict:
        q = None
        if self.q is not None:
            q = [x.to_dict() for x in self.q] if isinstance(self.q, list) else self.q.to_dict()
        return {"form": self.form, "t_grid": self.t_grid.tolist(), "atoms": [list(a) for a in self.atoms],
                "q": q, "direction": self.direction}

    @classmethod
    def from_dict(cls, d: Mapping) -> "PeacockSpec":
        q = d.get("q")
        if isinstance(q, list):
            q = [QSpec.from_dict(x) for x in q]
        elif q is not None:
            q = QSpec.from_dict(q)
        return cls(d["form"], d["t_grid"], d.get("atoms", []), q, d.get("direction", "nondecreasing"))

    def spec_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class FunctionalLaw:
    """Law of ``N_t`` for each ``t``.

    Exact laws hold ``values[j]`` / ``probs[j]``; sampled laws hold
    ``samples[j]`` aligned path-by-path across ``t``. ``log_norm[j]`` is
    ``h(t) = log E[V_t]`` (exact) or the log of the sample mean.
    """

    t_grid: np.ndarray
    exact: bool
    values: list | None = None
    probs: list | None = None
    samples: np.ndarray | None = None
    log_norm: np.ndarray | None = None
    ensemble_key: str | None = None
    meta: dict = field(default_factory=dict)

    def means(self) -> np.ndarray:
        if self.exact:
            return np.array([float(v @ p) for v, p in zip(self.values, self.probs)])
        return self.samples.mean(axis=1)

    def call_values(self, strikes) -> np.ndarray:
        K = np.asarray(strikes, dtype=float)
        if self.exact:
            return np.array([np.maximum(v[:, None] - K[None, :], 0.0).T @ p
                             for v, p in zip(self.values, self.probs)])
        return np.stack([np.maximum(s[:, None] - K[None, :], 0.0).mean(axis=0) for s in self.samples])

    def to_dict(self) -> dict:
        d = {"t_grid": self.t_grid.tolist(), "exact": self.exact,
             "log_norm": None if self.log_norm is None else np.asarray(self.log_norm).tolist(),
             "ensemble_key": self.ensemble_key, "meta": to_jsonable(self.meta)}
        if self.exact:
            d["values"] = [v.tolist() for v in self.values]
            d["probs"] = [p.tolist() for p in self.probs]
        else:
            d["samples"] = self.samples.tolist()
        return d


def _ensemble_key(ens: PathEnsemble) -> str:
    blob = json.dumps(ens.sidecar(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _push_law(chain: FiniteChain, increments: list[tuple[int, np.ndarray]], snapshot_at: Sequence[int],
              cap: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Law of ``S = sum g_k(X_{tau_k})`` accumulated along the chain.

    ``increments`` is a list of (time index, g evaluated on that time's grid)
    in increasing time order. ``snapshot_at[j]`` is the number of increments
    applied when snapshot ``j`` is taken. Returns ``(keys, probs)`` per
    snapshot; state is carried as a (keys x states) matrix so the product
    space is never materialized.
    """
    S = np.zeros(1)
    M = chain.init[None, :].copy()
    step = 0
    snaps: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    wanted = set(snapshot_at)
    if 0 in wanted:
        snaps[0] = (S.copy(), M.sum(axis=1))
    for n, (tau, g) in enumerate(increments, start=1):
        while step < tau:
            M = M @ chain.transitions[step]
            step += 1
        r, c = np.nonzero(M > 0)
        if r.size > cap:
            raise ExactModeCapError(f"exact law needs more than {cap} (value, state) pairs; use sample mode")
        newS = S[r] + g[c]
        keys, inv = np.unique(np.round(newS, _KEY_DECIMALS), return_inverse=True)
        out = np.zeros((keys.size, M.shape[1]))
        np.add.at(out, (inv.ravel(), c), M[r, c])
        S, M = keys, out
        if S.size * M.shape[1] > cap:
            raise ExactModeCapError(f"exact law needs more than {cap} (value, state) pairs; use sample mode")
        if n in wanted:
            snaps[n] = (S.copy(), M.sum(axis=1))
    return [snaps[n] for n in snapshot_at]


def _exp_law(keys: np.ndarray, probs: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    keep = probs > 0
    keys, probs = keys[keep], probs[keep]
    h = float(special.logsumexp(keys, b=probs))
    vals = np.exp(keys - h)
    # tiny correction so that E[N] is 1 to rounding
    vals = vals / float(vals @ probs)
    return vals, probs, h


def _atom_indices(spec: PeacockSpec, chain: FiniteChain) -> list[int]:
    return [chain.index_of(l) for l, _ in spec.atoms]


def _build_exact(spec: PeacockSpec, chain: FiniteChain, cap: int) -> FunctionalLaw:
    if spec.form == "asian_CEX":
        raise InputError("asian_CEX has no exact mode; pass a PathEnsemble")
    idx = _atom_indices(spec, chain)
    lams = [l for l, _ in spec.atoms]
    weights = [a for _, a in spec.atoms]
    if spec.form != "additive_A":
        for k, i in enumerate(idx):
            g = chain.grids[i]
            if spec.form == "volatility_F2":
                g = np.concatenate([g * t for t in spec.t_grid])
            if not _monotone_ok(spec.q_at(k)(lams[k], np.sort(g)), spec.direction):
                raise InputError(f"q at atom {k} is not {spec.direction} on the chain grid")
    values, probs, hs = [], [], []
    if spec.form == "maturity_F1":
        if spec.t_grid[-1] > chain.time_labels[-1] + 1e-12:
            raise InputError("chain does not cover the last t")
        incs = [(i, weights[k] * spec.q_at(k)(lams[k], chain.grids[i])) for k, i in enumerate(idx)]
        counts = [int(np.sum(np.asarray(lams) <= t + 1e-12)) for t in spec.t_grid]
        for keys, p in _push_law(chain, incs, counts, cap):
            v, p, h = _exp_law(keys, p)
            values.append(v), probs.append(p), hs.append(h)
    elif spec.form == "volatility_F2":
        for t in spec.t_grid:
            incs = [(i, weights[k] * spec.q_at(k)(lams[k], t * chain.grids[i])) for k, i in enumerate(idx)]
            keys, p = _push_law(chain, incs, [len(incs)], cap)[0]
            v, p, h = _exp_law(keys, p)
            values.append(v), probs.append(p), hs.append(h)
    else:
        total = sum(weights)
        if total <= 0:
            raise InputError("additive_A needs a positive total weight")
        for t in spec.t_grid:
            incs = []
            for k, i in enumerate(idx):
                e = np.exp(t * chain.grids[i])
                incs.append((i, weights[k] * e / float(chain.marginal(i) @ e)))
            keys, p = _push_law(chain, incs, [len(incs)], cap)[0]
            keep = p > 0
            v = keys[keep] / total
            p = p[keep]
            v = v / float(v @ p)
            values.append(v), probs.append(p), hs.append(float(np.log(total)))
    return FunctionalLaw(spec.t_grid, True, values, probs, None, np.array(hs),
                         meta={"form": spec.form, "support_sizes": [int(v.size) for v in values]})


def _normalize_rows(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    means = X.mean(axis=1)
    return X / means[:, None], np.log(means)


def _build_sampled(spec: PeacockSpec, ens: PathEnsemble) -> FunctionalLaw:
    lams = [l for l, _ in spec.atoms]
    weights = [a for _, a in spec.atoms]
    if spec.form == "asian_CEX":
        if not np.isclose(ens.times[0], 0.0):
            raise InputError("asian_CEX needs an ensemble whose times start at 0")
        rows = []
        E = np.exp(ens.values)
        for t in spec.t_grid:
            k = np.flatnonzero(np.isclose(ens.times, t, rtol=1e-12, atol=1e-12))
            if k.size == 0:
                raise InputError(f"time {t} is not in the ensemble")
            sl = slice(0, k[0] + 1)
            rows.append(integrate.trapezoid(E[:, sl], ens.times[sl], axis=1))
        X = np.stack(rows)
        N, ln = _normalize_rows(X)
        return FunctionalLaw(spec.t_grid, False, samples=N, log_norm=ln, ensemble_key=_ensemble_key(ens),
                             meta={"form": spec.form, "n_paths": ens.n_paths})
    cols = [ens.column(l) for l in lams]
    rows = []
    if spec.form == "maturity_F1":
        S = np.zeros(ens.n_paths)
        acc = []
        for k, x in enumerate(cols):
            S = S + weights[k] * spec.q_at(k)(lams[k], x)
            acc.append(S.copy())
        for t in spec.t_grid:
            n = int(np.sum(np.asarray(lams) <= t + 1e-12))
            rows.append(acc[n - 1] if n else np.zeros(ens.n_paths))
        logs = np.stack(rows)
    elif spec.form == "volatility_F2":
        logs = np.stack([sum(weights[k] * spec.q_at(k)(lams[k], t * x) for k, x in enumerate(cols))
                         for t in spec.t_grid])
    else:
        for t in spec.t_grid:
            A = np.zeros(ens.n_paths)
            for k, x in enumerate(cols):
                e = np.exp(t * x)
                A = A + weights[k] * e / e.mean()
            rows.append(A)
        N, ln = _normalize_rows(np.stack(rows))
        return FunctionalLaw(spec.t_grid, False, samples=N, log_norm=ln, ensemble_key=_ensemble_key(ens),
                             meta={"form": spec.form, "n_paths": ens.n_paths})
    shift = logs.max(axis=1, keepdims=True)
    N, ln = _normalize_rows(np.exp(logs - shift))
    return FunctionalLaw(spec.t_grid, False, samples=N, log_norm=ln + shift[:, 0],
                         ensemble_key=_ensemble_key(ens), meta={"form": spec.form, "n_paths": ens.n_paths})


def build_functional(spec: PeacockSpec, source: FiniteChain | PathEnsemble,
                     cap: int = EXACT_CAP) -> FunctionalLaw:
    """Law of ``N_t`` over ``spec.t_grid``.

    With a :class:`FiniteChain` the law is exact: the chain is pushed forward
    while carrying the joint law of (accumulated exponent, current state),
    merging equal exponents. More than ``cap`` live (exponent, state) pairs
    raises :class:`ExactModeCapError`. With a :class:`PathEnsemble` the
    functional is evaluated pathwise and divided by its sample mean.
    """
    if isinstance(source, FiniteChain):
        return _build_exact(spec, source, cap)
    if isinstance(source, PathEnsemble):
        return _build_sampled(spec, source)
    raise InputError("source must be a FiniteChain or a PathEnsemble")


def _weighted_quantile(x: np.ndarray, w: np.ndarray, q: float) -> float:
    o = np.argsort(x)
    c = np.cumsum(w[o])
    c /= c[-1]
    return float(x[o][min(np.searchsorted(c, q), x.size - 1)])


def default_strikes(laws: Sequence[FunctionalLaw], n: int = 33) -> np.ndarray:
    """``n`` strikes, geometric on each side of 1, spanning the pooled 0.1%-99.9% quantiles."""
    xs, ws = [], []
    for law in laws:
        if law.exact:
            for v, p in zip(law.values, law.probs):
                xs.append(v), ws.append(p / len(law.values))
        else:
            for s in law.samples:
                xs.append(s), ws.append(np.full(s.size, 1.0 / (s.size * len(law.samples))))
    x = np.concatenate(xs)
    w = np.concatenate(ws)
    lo = min(_weighted_quantile(x, w, 0.001), 1.0)
    hi = max(_weighted_quantile(x, w, 0.999), 1.0)
    if hi - lo < 1e-9:
        lo, hi = 0.5, 2.0
    lo = max(lo, 1e-6 * hi)
    if lo >= 1.0:
        lo = 0.5
    if hi <= 1.0:
        hi = 2.0
    half = n // 2
    left = np.geomspace(lo, 1.0, half + 1)
    right = np.geomspace(1.0, hi, n - half)
    return np.concatenate([left[:-1], right])


def psi_c_class(x, a: float, b: float):
    """Convex ``psi`` with ``psi'' = 1`` on ``[a, b]`` and 0 elsewhere, ``psi = 0`` left of ``a``."""
    x = np.asarray(x, dtype=float)
    return np.where(x <= a, 0.0, np.where(x <= b, 0.5 * (x - a) ** 2, 0.5 * (b - a) ** 2 + (b - a) * (x - b)))


@dataclass
class PeacockReport:
    """Call values ``E[(N_t - K)^+]`` indexed ``(t, K)`` and their monotonicity in ``t``.

    ``strike_verdicts[j]`` is the verdict at strike ``j``. In the exact case
    ``worst_violation`` is the most negative ``C(t', K) - max_{t <= t'} C(t, K)``.
    In the Monte Carlo case it is the smallest upper confidence bound of
    ``C(t, K) - C(s, K)`` over ``s < t``; a negative bound is a significant
    decrease.
    """

    t_grid: np.ndarray
    strikes: np.ndarray
    call_values: np.ndarray
    strike_verdicts: list
    verdict: Verdict
    worst_violation: float
    witness: dict | None
    tolerance: float
    mode: str
    ci_half_widths: np.ndarray | None = None
    psi: dict | None = None
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == Verdict.PASS

    @property
    def n_flagged(self) -> int:
        return sum(v == Verdict.FAIL for v in self.strike_verdicts)

    def to_dict(self) -> dict:
        return to_jsonable({
            "mode": self.mode, "t_grid": self.t_grid, "strikes": self.strikes,
            "call_values": self.call_values, "strike_verdicts": self.strike_verdicts,
            "verdict": self.verdict, "worst_violation": self.worst_violation, "witness": self.witness,
            "tolerance": self.tolerance, "ci_half_widths": self.ci_half_widths, "psi": self.psi,
            "meta": self.meta,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_csv(self) -> str:
        """Rows are ``t``, columns are strikes."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [repr(float(k)) for k in self.strikes])
        for t, row in zip(self.t_grid, self.call_values):
            w.writerow([repr(float(t))] + [repr(float(c)) for c in row])
        return buf.getvalue()

    def to_check_report(self) -> CheckReport:
        return CheckReport(self.verdict, min(self.worst_violation, 0.0) if self.verdict == Verdict.FAIL else 0.0,
                           self.witness, self.tolerance, int(self.call_values.size),
                           meta={"mode": self.mode, "n_flagged": self.n_flagged})


def _flatten(laws) -> tuple[np.ndarray, list[FunctionalLaw]]:
    if isinstance(laws, FunctionalLaw):
        laws = [laws]
    laws = list(laws)
    if not laws:
        raise InputError("no laws given")
    t = np.concatenate([l.t_grid for l in laws])
    return t, laws


def _running_decrease(C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per strike, most negative ``C[j] - max_{i < j} C[i]`` and the offending ``(i, j)``."""
    n_t, n_k = C.shape
    worst = np.zeros(n_k)
    where = np.full((n_k, 2), -1)
    best = C[0].copy()
    best_at = np.zeros(n_k, dtype=int)
    for j in range(1, n_t):
        d = C[j] - best
        upd = d < worst
        worst[upd] = d[upd]
        where[upd] = np.stack([best_at[upd], np.full(upd.sum(), j)], axis=1)
        up = C[j] > best
        best[up] = C[j][up]
        best_at[up] = j
    return worst, where


def convex_order_exact(laws, strikes=None, tol: float = EXACT_TOL,
                       psi_intervals: Sequence[tuple[float, float]] | None = None) -> PeacockReport:
    """Exact call values and their monotonicity in ``t``.

    ``laws`` is one exact :class:`FunctionalLaw` or a list of them (their
    ``t`` grids are concatenated in order). A strike fails when some call
    value drops more than ``tol`` below an earlier one. As a secondary check
    ``E[psi(N_t)]`` is evaluated for the C-class functions of
    :func:`psi_c_class` on ``psi_intervals`` (default: four intervals cut
    from the strike grid).
    """
    t, laws = _flatten(laws)
    if not all(l.exact for l in laws):
        raise InputError("convex_order_exact needs exact laws")
    if np.any(np.diff(t) <= 0):
        raise InputError("concatenated t grid must be strictly increasing")
    K = default_strikes(laws) if strikes is None else np.asarray(strikes, dtype=float)
    C = np.concatenate([l.call_values(K) for l in laws])
    worst, where = _running_decrease(C)
    verdicts = [Verdict.FAIL if w < -tol else Verdict.PASS for w in worst]
    j = int(np.argmin(worst))
    w0 = float(worst[j])
    witness = None
    if w0 < -tol:
        a, b = where[j]
        witness = {"strike": float(K[j]), "t_pair": [float(t[a]), float(t[b])],
                   "call_values": [float(C[a, j]), float(C[b, j])]}
    if psi_intervals is None:
        cut = np.linspace(0, K.size - 1, 5).astype(int)
        psi_intervals = [(float(K[cut[i]]), float(K[cut[i + 1]])) for i in range(4)]
    vals, probs = [], []
    for l in laws:
        vals += list(l.values)
        probs += list(l.probs)
    psi_table = np.array([[float(psi_c_class(v, a, b) @ p) for (a, b) in psi_intervals]
                          for v, p in zip(vals, probs)])
    psi_worst, _ = _running_decrease(psi_table)
    psi = {"intervals": [list(x) for x in psi_intervals], "values": psi_table,
           "verdict": Verdict.FAIL if np.min(psi_worst) < -tol else Verdict.PASS,
           "worst": float(min(np.min(psi_worst), 0.0))}
    means = np.concatenate([l.means() for l in laws])
    verdict = Verdict.FAIL if any(v == Verdict.FAIL for v in verdicts) else Verdict.PASS
    return PeacockReport(t, K, C, verdicts, verdict, min(w0, 0.0), witness, tol, "exact", None, psi,
                         meta={"max_mean_error": float(np.max(np.abs(means - 1.0)))})


def convex_order_mc(laws, strikes=None, alpha: float = 0.01) -> PeacockReport:
    """Paired Monte Carlo test of non-decreasing call values.

    For every ``s < t`` and strike ``K`` the paired difference
    ``D = (N_t - K)^+ - (N_s - K)^+`` is formed path by path. A violation is
    flagged when the one-sided upper ``1 - alpha/m`` confidence bound of
    ``E[D]`` is negative, ``m`` being the number of strikes (Bonferroni). A
    pass means "consistent with a peacock", not a proof.
    """
    t, laws = _flatten(laws)
    if any(l.exact for l in laws):
        raise InputError("convex_order_mc needs sampled laws")
    keys = {l.ensemble_key for l in laws}
    sizes = {l.samples.shape[1] for l in laws}
    if len(keys) != 1 or len(sizes) != 1:
        raise InputError("sampled laws must come from one path ensemble (paired)")
    if np.any(np.diff(t) <= 0):
        raise InputError("concatenated t grid must be strictly increasing")
    if not 0 < alpha < 1:
        raise InputError("alpha must be in (0, 1)")
    X = np.concatenate([l.samples for l in laws])
    K = default_strikes(laws) if strikes is None else np.asarray(strikes, dtype=float)
    n_t, n = X.shape
    m = K.size
    zq = float(stats.t.ppf(1 - alpha / m, df=n - 1))
    calls = [np.maximum(X[j][:, None] - K[None, :], 0.0) for j in range(n_t)]
    C = np.stack([c.mean(axis=0) for c in calls])
    half = np.stack([zq * c.std(axis=0, ddof=1) / np.sqrt(n) for c in calls])
    flags = np.zeros(m, dtype=bool)
    worst = np.inf
    witness = None
    pairs = []
    for s in range(n_t):
        for u in range(s + 1, n_t):
            D = calls[u] - calls[s]
            mean = D.mean(axis=0)
            se = D.std(axis=0, ddof=1) / np.sqrt(n)
            upper = mean + zq * se
            flagged = upper < 0
            flags |= flagged
            k = int(np.argmin(upper))
            pairs.append({"s": float(t[s]), "t": float(t[u]), "mean_diff": mean, "upper_bound": upper,
                          "flagged": flagged})
            if upper[k] < worst:
                worst = float(upper[k])
                if flagged[k]:
                    witness = {"strike": float(K[k]), "t_pair": [float(t[s]), float(t[u])],
                               "mean_diff": float(mean[k]), "upper_bound": float(upper[k])}
    verdicts = [Verdict.FAIL if f else Verdict.PASS for f in flags]
    verdict = Verdict.FAIL if flags.any() else Verdict.PASS
    if verdict == Verdict.FAIL and witness is None:
        raise AssertionError("flagged strike without witness")
    return PeacockReport(t, K, C, verdicts, verdict, worst, witness, alpha, "mc", half, None,
                         meta={"alpha": alpha, "bonferroni_m": m, "n_paths": int(n),
                               "sign_convention": "D = (N_t - K)^+ - (N_s - K)^+, s < t; flag iff upper bound < 0",
                               "pairs": pairs})


def volatility_hypothesis(q: QSpec, lam: float, x_grid, tol: float = 1e-9) -> bool:
    """Finite-difference check that ``q`` and ``x q'(x)`` are both non-decreasing on ``x_grid``."""
    x = np.sort(np.asarray(x_grid, dtype=float))
    v = q(lam, x)
    dq = np.gradient(v, x)
    return _monotone_ok(v, "nondecreasing", tol) and _monotone_ok(x * dq, "nondecreasing", tol)


def integrability_diagnostics(spec: PeacockSpec, ens: PathEnsemble, tail_flag: float = 0.5) -> dict:
    """Sample estimates of ``E[Theta_t]`` and ``Delta_t``.

    ``Theta_t = exp(mu([0, t]) sup_{s <= t} q(s, X_s))`` and
    ``Delta_t = E[exp(mu([0, t]) inf_{s <= t} q(s, X_s))]`` with the sup/inf
    over ensemble times. ``tail_share`` is the share of the sample sum of
    ``Theta_t`` carried by its top decile; above ``tail_flag`` the
    ``heavy_tail`` flag is raised. Advisory only: integrability cannot be
    certified from samples. For ``vol_example`` the pointwise envelope
    ``e^{2x} <= e^q < e^{2+3x} + e^{2+x}`` is also checked.
    """
    if spec.form not in ("maturity_F1", "volatility_F2"):
        raise InputError("diagnostics apply to maturity_F1 and volatility_F2")
    out = []
    for t in spec.t_grid:
        if spec.form == "maturity_F1":
            mass = sum(a for l, a in spec.atoms if l <= t + 1e-12)
            sel = ens.times <= t + 1e-12
            scale = 1.0
        else:
            mass = sum(a for _, a in spec.atoms)
            sel = np.ones(ens.times.size, dtype=bool)
            scale = t
        if not sel.any():
            continue
        lam = ens.times[sel]
        X = ens.values[:, sel] * scale
        Qv = np.stack([spec.q_at(0)(l, X[:, k]) for k, l in enumerate(lam)], axis=1)
        theta = np.exp(mass * Qv.max(axis=1))
        delta = float(np.mean(np.exp(mass * Qv.min(axis=1))))
        srt = np.sort(theta)
        top = srt[int(0.9 * srt.size):].sum()
        share = float(top / srt.sum()) if np.isfinite(srt.sum()) and srt.sum() > 0 else 1.0
        row = {"t": float(t), "mu_mass": float(mass), "theta_mean": float(theta.mean()),
               "theta_max": float(theta.max()), "delta": delta, "tail_share": share,
               "heavy_tail": bool(share > tail_flag)}
        if not isinstance(spec.q, list) and spec.q.name == "vol_example":
            eq = np.exp(Qv)
            lower = np.exp(2 * X)
            upper = np.exp(2 + 3 * X) + np.exp(2 + X)
            row["envelope_ok"] = bool(np.all(lower <= eq * (1 + 1e-12)) and np.all(eq < upper))
            row["envelope_upper_mean"] = float(np.mean(np.max(upper, axis=1) ** mass))
        out.append(row)
    return to_jsonable({"form": spec.form, "rows": out, "heavy_tail": any(r["heavy_tail"] for r in out),
                        "note": "advisory: sample estimates cannot certify integrability"})


def asian_scaling_check(t_grid, strikes, n_paths: int, seed: int, dt: float = 1 / 64,
                        n_unit_steps: int = 128, alpha: float = 0.01, jobs: int = 1) -> CheckReport:
    """Compare ``(1/t) int_0^t e^{B_s - s/2} ds`` with ``int_0^1 e^{sqrt(t) W_u - t u/2} du``.

    Brownian scaling makes the two equal in law. Each side is simulated from
    its own ensemble (seeds ``seed`` and ``seed + 1``), so call values are
    compared with the independent two-sample bound, Bonferroni-corrected over
    all ``(t, K)``. Both sides have exact mean 1, so no sample normalization is
    applied.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    K = np.asarray(strikes, dtype=float)
    T = float(t_grid.max())
    n_direct = int(round(T / dt))
    times = np.linspace(0.0, T, n_direct + 1)
    if not all(np.any(np.isclose(times, t)) for t in t_grid):
        raise InputError("every t must be a multiple of dt")
    direct = simulate(ProcessModel("gbm_exponent"), times, n_paths, seed, jobs=jobs)
    u = np.linspace(0.0, 1.0, n_unit_steps + 1)
    unit = simulate(ProcessModel("brownian"), u, n_paths, seed + 1, jobs=jobs)
    m = t_grid.size * K.size
    zq = float(stats.norm.ppf(1 - alpha / (2 * m)))
    worst = 0.0
    witness = None
    rows = []
    E = np.exp(direct.values)
    for t in t_grid:
        k = int(np.flatnonzero(np.isclose(times, t))[0])
        A = integrate.trapezoid(E[:, :k + 1], times[:k + 1], axis=1) / t
        B = integrate.trapezoid(np.exp(np.sqrt(t) * unit.values - t * u / 2), u, axis=1)
        ca = np.maximum(A[:, None] - K[None, :], 0.0)
        cb = np.maximum(B[:, None] - K[None, :], 0.0)
        diff = ca.mean(axis=0) - cb.mean(axis=0)
        se = np.sqrt(ca.var(axis=0, ddof=1) / n_paths + cb.var(axis=0, ddof=1) / n_paths)
        z = np.abs(diff) / np.where(se > 0, se, np.inf)
        excess = zq * se - np.abs(diff)
        rows.append({"t": float(t), "direct": ca.mean(axis=0), "scaled": cb.mean(axis=0), "diff": diff,
                     "half_width": zq * se, "z": z})
        j = int(np.argmin(excess))
        if excess[j] < worst:
            worst = float(excess[j])
            witness = {"t": float(t), "strike": float(K[j]), "diff": float(diff[j]),
                       "half_width": float(zq * se[j])}
    verdict = Verdict.FAIL if worst < 0 else Verdict.PASS
    return CheckReport(verdict, worst, witness, alpha, int(m),
                       meta={"rows": to_jsonable(rows), "strikes": K.tolist(), "n_paths": int(n_paths),
                             "seed": int(seed), "dt": dt, "n_unit_steps": n_unit_steps})
