"""Multivariate total positivity of order 2 on finite joint laws."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DomainError, InputError
from .reports import CheckReport, Verdict, merge_reports
from .totpos import DEFAULT_TOL, KernelGrid, _top2_product, check_tp2_grid

__all__ = [
    "ProbTensor",
    "GaussianSpec",
    "check_mtp2",
    "weighted_marginal",
    "gaussian_mtp2",
    "abs_gaussian_mtp2",
    "discretize_gaussian",
    "chain_joint",
    "comonotony_gap",
    "compose_mtp2",
    "random_tp2_stochastic",
    "random_mtp2_tensor",
    "random_monotone_function",
    "monotone_direction",
]

_PAIR_CHUNK = 2_000_000


@dataclass
class ProbTensor:
    """Nonnegative array over a product of finite, strictly increasing state grids."""

    axes: list
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim < 2:
            raise InputError("a ProbTensor needs at least 2 coordinates")
        if self.axes is None:
            self.axes = [np.arange(s, dtype=float) for s in v.shape]
        axes = [np.asarray(a, dtype=float) for a in self.axes]
        if len(axes) != v.ndim or any(a.ndim != 1 or a.size != s for a, s in zip(axes, v.shape)):
            raise InputError("one state grid per axis, matching the array shape")
        for a in axes:
            if a.size > 1 and np.any(np.diff(a) <= 0):
                raise InputError("state grids must be strictly increasing")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise InputError("values must be finite and nonnegative")
        mass = float(v.sum())
        if not mass > 0:
            raise InputError("total mass must be positive")
        self.axes = axes
        self.values = v

    @classmethod
    def from_array(cls, values, axes=None) -> "ProbTensor":
        return cls(axes, values)

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def shape(self):
        return self.values.shape

    @property
    def total_mass(self) -> float:
        return float(self.values.sum())

    def normalized(self) -> "ProbTensor":
        return ProbTensor(self.axes, self.values / self.total_mass)

    def transpose(self, perm: Sequence[int]) -> "ProbTensor":
        return ProbTensor([self.axes[i] for i in perm], np.transpose(self.values, perm))

    def to_dict(self) -> dict:
        return {
            "axes": [a.tolist() for a in self.axes],
            "shape": list(self.shape),
            "values": self.values.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ProbTensor":
        try:
            shape = tuple(d["shape"])
            vals = np.asarray(d["values"], dtype=float)
        except KeyError as e:
            raise InputError(f"missing field {e}") from None
        if vals.size != int(np.prod(shape)):
            raise InputError("values length does not match shape")
        return cls(d.get("axes"), vals.reshape(shape))


def _mtp2_witness(p, xi, yi, gap, rel):
    x = tuple(int(v) for v in xi)
    y = tuple(int(v) for v in yi)
    meet = tuple(min(a, b) for a, b in zip(x, y))
    join = tuple(max(a, b) for a, b in zip(x, y))
    return {
        "x": x, "y": y, "meet": meet, "join": join,
        "x_coords": [float(p.axes[k][i]) for k, i in enumerate(x)],
        "y_coords": [float(p.axes[k][i]) for k, i in enumerate(y)],
        "p_meet": float(p.values[meet]), "p_join": float(p.values[join]),
        "p_x": float(p.values[x]), "p_y": float(p.values[y]),
        "gap": float(gap), "relative_gap": float(rel),
    }


def _exhaustive_2d(p: ProbTensor, tol: float) -> CheckReport:
    # in two dimensions the only incomparable pairs are the 2x2 minors
    n, m = p.shape
    K = KernelGrid(np.arange(n, dtype=float), np.arange(m, dtype=float), p.values)
    rep = check_tp2_grid(K, tol)
    if rep.witness is not None:
        i1, i2 = rep.witness["rows"]
        j1, j2 = rep.witness["cols"]
        w = rep.witness
        rep.witness = _mtp2_witness(p, (i1, j2), (i2, j1), w["minor"], w["relative_minor"])
    rep.meta.pop("mode", None)
    return rep


def _exhaustive(p: ProbTensor, tol: float) -> CheckReport:
    if p.ndim == 2:
        return _exhaustive_2d(p, tol)
    v = p.values.ravel()
    N = v.size
    idx = np.array(np.unravel_index(np.arange(N), p.shape)).T
    block = max(1, _PAIR_CHUNK // max(N, 1))
    reports = []
    for start in range(0, N, block):
        a = np.arange(start, min(N, start + block))
        A = idx[a][:, None, :]
        B = idx[None, :, :]
        meet = np.ravel_multi_index(np.moveaxis(np.minimum(A, B), -1, 0), p.shape)
        join = np.ravel_multi_index(np.moveaxis(np.maximum(A, B), -1, 0), p.shape)
        pa = v[a][:, None]
        pb = v[None, :]
        pm, pj = v[meet], v[join]
        gap = pm * pj - pa * pb
        upper = a[:, None] < np.arange(N)[None, :]
        scale = _top2_product(pm, pj, pa, pb)
        with np.errstate(invalid="ignore", divide="ignore"):
            rel = np.where(upper & (scale > 0), gap / np.where(scale > 0, scale, 1.0), 0.0)
        n_checked = int(upper.sum())
        k = int(np.argmin(rel))
        worst = min(float(rel.flat[k]), 0.0)
        witness = None
        if worst < 0:
            r, c = np.unravel_index(k, rel.shape)
            witness = _mtp2_witness(p, idx[a[r]], idx[c], gap[r, c], worst)
        verdict = Verdict.FAIL if worst < -tol else Verdict.PASS
        reports.append(CheckReport(verdict, worst, witness, tol, n_checked))
    return merge_reports(reports, tol)


def _pairwise(p: ProbTensor, tol: float) -> CheckReport:
    if np.any(p.values <= 0):
        return CheckReport(Verdict.INCONCLUSIVE, 0.0, None, tol, 0,
                           meta={"reason": "pairwise reduction needs a strictly positive tensor"})
    reports = []
    n = p.ndim
    for a, b in itertools.combinations(range(n), 2):
        rest = [k for k in range(n) if k not in (a, b)]
        T = np.transpose(p.values, rest + [a, b])
        T = T.reshape(-1, p.shape[a], p.shape[b])
        i1, i2 = np.triu_indices(p.shape[a], k=1)
        j1, j2 = np.triu_indices(p.shape[b], k=1)
        a11 = T[:, i1][:, :, j1]
        a12 = T[:, i1][:, :, j2]
        a21 = T[:, i2][:, :, j1]
        a22 = T[:, i2][:, :, j2]
        gap = a11 * a22 - a12 * a21
        rel = gap / _top2_product(a11, a12, a21, a22)
        k = int(np.argmin(rel))
        worst = min(float(rel.flat[k]), 0.0)
        witness = None
        if worst < 0:
            s, r, c = np.unravel_index(k, rel.shape)
            base = list(np.unravel_index(s, [p.shape[q] for q in rest])) if rest else []
            x = [0] * n
            y = [0] * n
            for q, val in zip(rest, base):
                x[q] = y[q] = int(val)
            x[a], x[b] = int(i1[r]), int(j2[c])
            y[a], y[b] = int(i2[r]), int(j1[c])
            witness = _mtp2_witness(p, x, y, gap[s, r, c], worst)
        verdict = Verdict.FAIL if worst < -tol else Verdict.PASS
        reports.append(CheckReport(verdict, worst, witness, tol, int(rel.size)))
    return merge_reports(reports, tol)


def check_mtp2(p: ProbTensor, tol: float = DEFAULT_TOL, mode: str = "exhaustive") -> CheckReport:
    """Check ``p(x ^ y) p(x v y) >= p(x) p(y)`` on a discrete joint law.

    ``exhaustive`` compares every pair of cells. ``pairwise`` only compares
    cells differing in exactly two coordinates, which suffices for strictly
    positive tensors; with zeros it returns ``inconclusive``. Gaps are judged
    relative to the product of the two largest of the four values.
    """
    if tol < 0:
        raise InputError("tol must be nonnegative")
    if mode == "exhaustive":
        rep = _exhaustive(p, tol)
    elif mode == "pairwise":
        rep = _pairwise(p, tol)
    else:
        raise InputError(f"unknown mode {mode!r}")
    rep.meta["mode"] = mode
    return rep


def weighted_marginal(p: ProbTensor, f_list, keep: int) -> ProbTensor:
    """Weight every coordinate by ``f_i`` and sum out coordinates ``keep..n-1``."""
    n = p.ndim
    if not 2 <= keep <= n:
        raise InputError(f"keep must lie in [2, {n}]")
    if len(f_list) != n:
        raise InputError("one weight vector per coordinate")
    W = p.values
    for k, f in enumerate(f_list):
        f = np.asarray(f, dtype=float)
        if f.shape != (p.shape[k],) or np.any(f <= 0):
            raise InputError(f"weights for axis {k} must be strictly positive, length {p.shape[k]}")
        shape = [1] * n
        shape[k] = -1
        W = W * f.reshape(shape)
    if keep < n:
        W = W.sum(axis=tuple(range(keep, n)))
    return ProbTensor(p.axes[:keep], W)


@dataclass
class GaussianSpec:
    mean: np.ndarray
    covariance: np.ndarray
    tol: float = field(default=1e-10, repr=False)

    def __post_init__(self):
        S = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        m = np.atleast_1d(np.asarray(self.mean, dtype=float))
        if S.shape != (m.size, m.size):
            raise InputError("covariance must be square and match the mean")
        if not np.allclose(S, S.T, atol=self.tol * max(1.0, np.abs(S).max())):
            raise InputError("covariance must be symmetric")
        try:
            np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise DomainError("covariance is not positive definite") from None
        self.mean, self.covariance = m, (S + S.T) / 2

    @property
    def precision(self) -> np.ndarray:
        return np.linalg.inv(self.covariance)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "covariance": self.covariance.ravel().tolist()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "GaussianSpec":
        m = np.asarray(d["mean"], dtype=float)
        return cls(m, np.asarray(d["covariance"], dtype=float).reshape(m.size, m.size))


def _normalized_offdiag(Q):
    d = np.sqrt(np.diag(Q))
    R = Q / np.outer(d, d)
    np.fill_diagonal(R, 0.0)
    return R


def gaussian_mtp2(g: GaussianSpec, tol: float = DEFAULT_TOL) -> CheckReport:
    """Gaussian MTP2 criterion: every off-diagonal entry of the precision matrix is ``<= 0``.

    Entries are compared after scaling to unit diagonal.
    """
    R = _normalized_offdiag(g.precision)
    n = R.shape[0]
    if n < 2:
        raise InputError("need at least 2 coordinates")
    k = int(np.argmax(R))
    i, j = divmod(k, n)
    worst = min(-float(R[i, j]), 0.0)
    witness = None
    if worst < 0:
        witness = {"i": i, "j": j, "precision": float(g.precision[i, j]), "scaled": float(R[i, j])}
    verdict = Verdict.FAIL if worst < -tol else Verdict.PASS
    return CheckReport(verdict, worst, witness, tol, n * (n - 1) // 2)


def abs_gaussian_mtp2(g: GaussianSpec, tol: float = DEFAULT_TOL) -> CheckReport:
    """MTP2 of ``(|X_1|, ..., |X_n|)`` for a centred Gaussian vector.

    Searches the ``2^(n-1)`` sign diagonals ``D`` (``D`` and ``-D`` act alike)
    for one making ``D Q D`` have nonpositive off-diagonals, ``Q`` the
    precision matrix. On success the witness holds ``D``; on failure it holds
    the best sign pattern found and its worst entry.
    """
    if np.any(g.mean != 0):
        raise InputError("the absolute-value criterion is stated for zero mean")
    R = _normalized_offdiag(g.precision)
    n = R.shape[0]
    if n > 20:
        raise InputError("exhaustive sign search is capped at n = 20")
    iu, ju = np.triu_indices(n, k=1)
    r = R[iu, ju]
    best_val, best_d = -np.inf, None
    n_checked = 0
    chunk = 1 << 14
    total = 1 << (n - 1)
    for start in range(0, total, chunk):
        codes = np.arange(start, min(total, start + chunk))
        bits = (codes[:, None] >> np.arange(n - 1)[None, :]) & 1
        D = np.concatenate([np.ones((codes.size, 1)), 1 - 2 * bits], axis=1)
        vals = -(D[:, iu] * D[:, ju] * r[None, :])
        score = vals.min(axis=1) if r.size else np.zeros(codes.size)
        n_checked += codes.size
        k = int(np.argmax(score))
        if score[k] > best_val:
            best_val, best_d = float(score[k]), D[k]
        if best_val >= -tol:
            break
    worst = min(best_val, 0.0)
    verdict = Verdict.FAIL if worst < -tol else Verdict.PASS
    witness = {"D": best_d.astype(int).tolist(), "worst_scaled_entry": -best_val}
    return CheckReport(verdict, worst, witness, tol, n_checked)


def discretize_gaussian(g: GaussianSpec, grids) -> ProbTensor:
    """Gaussian density on a product grid, normalized to mass 1."""
    grids = [np.asarray(x, dtype=float) for x in grids]
    if len(grids) != g.mean.size:
        raise InputError("one grid per coordinate")
    mesh = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1) - g.mean
    Q = g.precision
    logp = -0.5 * np.einsum("...i,ij,...j->...", mesh, Q, mesh)
    p = np.exp(logp - logp.max())
    return ProbTensor(grids, p / p.sum())


def chain_joint(chain, time_indices: Sequence[int]) -> ProbTensor:
    """Exact joint law of a finite chain at the given time indices.

    ``chain`` is a :class:`peacocks.processes.FiniteChain`; index 0 is the
    initial time and index ``k`` follows ``k`` transitions.
    """
    idx = [int(i) for i in time_indices]
    T = len(chain.transitions)
    if len(idx) < 2:
        raise InputError("need at least two time indices")
    if any(b <= a for a, b in zip(idx, idx[1:])) or idx[0] < 0 or idx[-1] > T:
        raise InputError(f"time indices must be strictly increasing within [0, {T}]")
    mu = chain.marginal(idx[0])
    W = mu.copy()
    for a, b in zip(idx, idx[1:]):
        M = chain.transition_between(a, b)
        W = W[..., None] * M.reshape((1,) * (W.ndim - 1) + M.shape)
    return ProbTensor([chain.grids[i] for i in idx], W)


def monotone_direction(phi: np.ndarray, tol: float = 0.0) -> str:
    """``"constant"``, ``"increasing"``, ``"decreasing"`` or ``"mixed"`` along all axes."""
    phi = np.asarray(phi, dtype=float)
    up = down = True
    for ax in range(phi.ndim):
        d = np.diff(phi, axis=ax)
        up &= bool(np.all(d >= -tol))
        down &= bool(np.all(d <= tol))
    if up and down:
        return "constant"
    if up:
        return "increasing"
    if down:
        return "decreasing"
    return "mixed"


def comonotony_gap(p: ProbTensor, phi, psi, tol: float = 1e-12) -> float:
    """``E[phi psi] - E[phi] E[psi]`` under the normalized law of ``p``.

    ``phi`` and ``psi`` are tables over the cells of ``p`` that are both
    componentwise non-decreasing or both non-increasing.
    """
    phi = np.asarray(phi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if phi.shape != p.shape or psi.shape != p.shape:
        raise InputError("phi and psi must be tables over the tensor cells")
    d1, d2 = monotone_direction(phi, tol), monotone_direction(psi, tol)
    if "mixed" in (d1, d2):
        raise InputError("phi and psi must be componentwise monotone")
    if {d1, d2} == {"increasing", "decreasing"}:
        raise InputError("phi and psi must be monotone in the same direction")
    w = p.values / p.total_mass
    e_phi = float(np.sum(w * phi))
    e_psi = float(np.sum(w * psi))
    return float(np.sum(w * (phi - e_phi) * (psi - e_psi)))


def compose_mtp2(p: ProbTensor, q: ProbTensor, n_shared: int = 1) -> ProbTensor:
    """``r(x, z) = sum_y p(x, y) q(y, z)`` over ``n_shared`` shared coordinates."""
    if n_shared < 1 or n_shared >= min(p.ndim, q.ndim) + 1:
        raise InputError("invalid number of shared coordinates")
    if p.shape[p.ndim - n_shared:] != q.shape[:n_shared]:
        raise InputError("shared block shapes differ")
    r = np.tensordot(p.values, q.values, axes=n_shared)
    axes = p.axes[: p.ndim - n_shared] + q.axes[n_shared:]
    return ProbTensor(axes, r)


# Random models for property tests

def random_tp2_stochastic(rng: np.random.Generator, n_rows: int, n_cols: int,
                          max_tilt: float = 4.0) -> np.ndarray:
    """Row-stochastic strictly positive TP2 matrix.

    ``log K(i, j) = theta a_i b_j + c_j`` with ``a``, ``b`` increasing
    cumulative sums of exponentials rescaled to [0, 1]; row normalization
    keeps TP2.
    """
    a = np.cumsum(rng.exponential(size=n_rows))
    b = np.cumsum(rng.exponential(size=n_cols))
    a = (a - a[0]) / max(a[-1] - a[0], 1e-12)
    b = (b - b[0]) / max(b[-1] - b[0], 1e-12)
    theta = rng.uniform(0.0, max_tilt)
    c = rng.normal(size=n_cols)
    L = theta * a[:, None] * b[None, :] + c[None, :]
    K = np.exp(L - L.max(axis=1, keepdims=True))
    return K / K.sum(axis=1, keepdims=True)


def random_mtp2_tensor(rng: np.random.Generator, shape: Sequence[int]) -> ProbTensor:
    """Joint law of a Markov chain with random TP2 transitions (hence MTP2)."""
    shape = list(shape)
    mu = rng.gamma(1.0, size=shape[0]) + 1e-3
    W = mu / mu.sum()
    for a, b in zip(shape, shape[1:]):
        M = random_tp2_stochastic(rng, a, b)
        W = W[..., None] * M.reshape((1,) * (W.ndim - 1) + M.shape)
    return ProbTensor(None, W)


def random_monotone_function(rng: np.random.Generator, shape: Sequence[int], n_terms: int | None = None,
                             direction: str = "increasing") -> np.ndarray:
    """Positive combination of upper-orthant indicators ``1[x >= a]``."""
    shape = tuple(shape)
    if n_terms is None:
        n_terms = int(rng.integers(1, 5))
    grids = np.indices(shape)
    phi = np.zeros(shape)
    for _ in range(n_terms):
        thr = [int(rng.integers(0, s)) for s in shape]
        ind = np.ones(shape, dtype=bool)
        for k, t in enumerate(thr):
            ind &= grids[k] >= t
        phi += rng.exponential() * ind
    if direction == "decreasing":
        phi = -phi
    elif direction != "increasing":
        raise InputError("direction must be 'increasing' or 'decreasing'")
    return phi


def random_non_mtp2_bivariate(rng: np.random.Generator, max_states: int = 6,
                              tol: float = DEFAULT_TOL) -> ProbTensor:
    """Bivariate law that fails TP2: a random TP2 law under multiplicative log-normal noise.

    Noise scales are drawn in ``[0.05, 1]`` so many violations are small;
    draws that stay TP2 are rejected.
    """
    while True:
        shape = tuple(int(s) for s in rng.integers(2, max_states + 1, size=2))
        base = random_mtp2_tensor(rng, shape).values
        noisy = base * np.exp(rng.uniform(0.05, 1.0) * rng.standard_normal(shape))
        p = ProbTensor(None, noisy / noisy.sum())
        if check_mtp2(p, tol).verdict == Verdict.FAIL:
            return p
