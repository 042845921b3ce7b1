"""Bivariate total positivity of order 2.

Kernels are sampled on explicit coordinate grids (:class:`KernelGrid`) and
checked either through the full scan of 2x2 minors or through discrete mixed
second differences of the log-kernel. Kernel composition, Gaussian smoothing
and the reflection ``f(x - y) + f(-x - y)`` produce new kernels on grids.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import stats

from ._parallel import pmap
from .errors import DomainError, InputError
from .reports import CheckReport, Verdict, merge_reports

DEFAULT_TOL = 1e-10

__all__ = [
    "KernelGrid",
    "check_tp2_grid",
    "check_supermodular_logdensity",
    "log_mixed_differences",
    "check_log_concave",
    "compose_kernels",
    "reflect_kernel",
    "smooth_kernel",
    "builtin_kernel",
    "trapezoid_weights",
    "satisfies_property_p",
]


def _as_grid(g, name):
    g = np.asarray(g, dtype=float)
    if g.ndim != 1 or g.size < 2:
        raise InputError(f"{name} must be a 1-D grid with at least 2 points")
    if not np.all(np.isfinite(g)):
        raise InputError(f"{name} has non-finite coordinates")
    if np.any(np.diff(g) <= 0):
        raise InputError(f"{name} must be strictly increasing")
    return g


def satisfies_property_p(mask: np.ndarray) -> bool:
    """Check the lattice property of a support mask.

    For rows ``i1 < i2`` and columns ``j1 < j2``, membership of the two
    anti-diagonal corners must imply membership of both diagonal corners.
    Runs in ``O(n^2 m)``.
    """
    mask = np.asarray(mask, dtype=bool)
    n, _ = mask.shape
    for i1 in range(n - 1):
        A = mask[i1]
        B = mask[i1 + 1:]
        # any(A[j+1:]) for each j
        a_after = np.concatenate([np.logical_or.accumulate(A[::-1])[::-1][1:], [False]])
        AnB = A[None, :] & ~B
        anb_after = np.concatenate(
            [np.logical_or.accumulate(AnB[:, ::-1], axis=1)[:, ::-1][:, 1:],
             np.zeros((B.shape[0], 1), dtype=bool)], axis=1)
        # B[j1] & ~A[j1] needs no A[j2] later; B[j1] & A[j1] needs no (A & ~B)[j2] later
        bad1 = B & ~A[None, :] & a_after[None, :]
        bad2 = B & A[None, :] & anb_after
        if bad1.any() or bad2.any():
            return False
    return True


@dataclass
class KernelGrid:
    """Nonnegative kernel ``p(x, y)`` sampled on strictly increasing grids.

    ``support_mask`` (optional) marks the domain; values outside it must be 0
    and the mask must satisfy :func:`satisfies_property_p`.
    """

    x_grid: np.ndarray
    y_grid: np.ndarray
    values: np.ndarray
    support_mask: np.ndarray | None = None

    def __post_init__(self):
        self.x_grid = _as_grid(self.x_grid, "x_grid")
        self.y_grid = _as_grid(self.y_grid, "y_grid")
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.x_grid.size, self.y_grid.size):
            raise InputError(
                f"values shape {v.shape} does not match grids "
                f"({self.x_grid.size}, {self.y_grid.size})")
        if not np.all(np.isfinite(v)):
            raise InputError("kernel values must be finite")
        if np.any(v < 0):
            raise InputError("kernel values must be nonnegative")
        self.values = v
        if self.support_mask is not None:
            m = np.asarray(self.support_mask, dtype=bool)
            if m.shape != v.shape:
                raise InputError("support_mask shape must match values")
            if not m.any():
                raise InputError("empty support")
            if np.any(v[~m] != 0):
                raise InputError("values outside the support mask must be 0")
            if not satisfies_property_p(m):
                raise InputError("support mask violates the lattice property (P)")
            self.support_mask = m

    @property
    def shape(self):
        return self.values.shape

    @property
    def mask(self) -> np.ndarray:
        if self.support_mask is None:
            return np.ones(self.values.shape, dtype=bool)
        return self.support_mask

    def zero_extended(self) -> "KernelGrid":
        return KernelGrid(self.x_grid, self.y_grid, np.where(self.mask, self.values, 0.0))

    def to_dict(self) -> dict:
        d = {
            "x_grid": self.x_grid.tolist(),
            "y_grid": self.y_grid.tolist(),
            "values": self.values.ravel().tolist(),
        }
        if self.support_mask is not None:
            d["mask"] = self.support_mask.ravel().astype(int).tolist()
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "KernelGrid":
        try:
            x = np.asarray(d["x_grid"], dtype=float)
            y = np.asarray(d["y_grid"], dtype=float)
            vals = np.asarray(d["values"], dtype=float)
        except KeyError as e:
            raise InputError(f"missing field {e}") from None
        if vals.ndim == 1:
            if vals.size != x.size * y.size:
                raise InputError("values length does not match grids")
            vals = vals.reshape(x.size, y.size)
        mask = d.get("mask")
        if mask is not None:
            mask = np.asarray(mask, dtype=bool).reshape(x.size, y.size)
        return cls(x, y, vals, mask)


def _top2_product(a11, a12, a21, a22):
    st = np.stack(np.broadcast_arrays(a11, a12, a21, a22))
    part = np.partition(st, 2, axis=0)
    return part[2] * part[3]


def _scan_rows(V, M, i1, tol):
    """Minors with first row ``i1`` against every later row."""
    A = V[i1]
    B = V[i1 + 1:]
    m = V.shape[1]
    j1, j2 = np.triu_indices(m, k=1)
    a11 = A[j1][None, :]
    a12 = A[j2][None, :]
    a21 = B[:, j1]
    a22 = B[:, j2]
    minor = a11 * a22 - a12 * a21
    valid = M[i1][j1][None, :] & M[i1][j2][None, :] & M[i1 + 1:][:, j1] & M[i1 + 1:][:, j2]
    scale = _top2_product(a11, a12, a21, a22)
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(valid & (scale > 0), minor / np.where(scale > 0, scale, 1.0), 0.0)
    n_checked = int(valid.sum())
    if rel.size == 0:
        return CheckReport(Verdict.PASS, 0.0, None, tol, n_checked)
    k = int(np.argmin(rel))
    worst = float(rel.flat[k])
    if worst >= 0:
        return CheckReport(Verdict.PASS, 0.0, None, tol, n_checked)
    r, c = np.unravel_index(k, rel.shape)
    witness = {
        "rows": (i1, i1 + 1 + int(r)),
        "cols": (int(j1[c]), int(j2[c])),
        "values": [[float(a11[0, c]), float(a12[0, c])],
                   [float(a21[r, c]), float(a22[r, c])]],
        "minor": float(minor[r, c]),
        "relative_minor": worst,
    }
    verdict = Verdict.FAIL if worst < -tol else Verdict.PASS
    return CheckReport(verdict, worst, witness, tol, n_checked)


def check_tp2_grid(K: KernelGrid, tol: float = DEFAULT_TOL, mode: str = "full",
                   jobs: int = 1) -> CheckReport:
    """Scan the 2x2 minors of a kernel.

    A minor ``m`` counts as a violation when ``m < -tol * s`` where ``s`` is
    the product of the two largest of its four entries. Only quadruples whose
    four corners lie in the support mask are scanned.

    Parameters
    ----------
    K : KernelGrid
    tol : float
        Relative tolerance.
    mode : {"full", "adjacent"}
        ``adjacent`` only looks at neighbouring rows/columns; that reduction
        needs a strictly positive kernel, otherwise the verdict is
        ``inconclusive``.
    jobs : int
        Worker threads for the row scan (result does not depend on it).

    Returns
    -------
    CheckReport
        ``worst_violation`` is the most negative relative minor. The witness
        holds 0-based ``rows``/``cols``, grid coordinates ``x``/``y``, the four
        entries and the raw ``minor``.
    """
    if tol < 0:
        raise InputError("tol must be nonnegative")
    V = K.values
    M = K.mask
    n, m = V.shape
    if mode == "adjacent":
        if K.support_mask is not None and not M.all() or np.any(V <= 0):
            return CheckReport(Verdict.INCONCLUSIVE, 0.0, None, tol, 0,
                               meta={"reason": "adjacent reduction needs a strictly positive kernel"})
        a11, a12, a21, a22 = V[:-1, :-1], V[:-1, 1:], V[1:, :-1], V[1:, 1:]
        minor = a11 * a22 - a12 * a21
        rel = minor / _top2_product(a11, a12, a21, a22)
        k = int(np.argmin(rel))
        worst = min(float(rel.flat[k]), 0.0)
        witness = None
        if worst < 0:
            r, c = np.unravel_index(k, rel.shape)
            witness = {"rows": (int(r), int(r) + 1), "cols": (int(c), int(c) + 1),
                       "values": [[a11[r, c], a12[r, c]], [a21[r, c], a22[r, c]]],
                       "minor": float(minor[r, c]), "relative_minor": worst}
        verdict = Verdict.FAIL if worst < -tol else Verdict.PASS
        rep = CheckReport(verdict, worst, witness, tol, int(minor.size))
    elif mode == "full":
        parts = pmap(lambda i: _scan_rows(V, M, i, tol), range(n - 1), jobs)
        rep = merge_reports(parts, tol)
    else:
        raise InputError(f"unknown mode {mode!r}")
    if rep.witness is not None:
        i1, i2 = rep.witness["rows"]
        j1, j2 = rep.witness["cols"]
        rep.witness["x"] = (float(K.x_grid[i1]), float(K.x_grid[i2]))
        rep.witness["y"] = (float(K.y_grid[j1]), float(K.y_grid[j2]))
    rep.meta["mode"] = mode
    return rep


def log_mixed_differences(K: KernelGrid, scaled: bool = True) -> np.ndarray:
    """Mixed second differences of ``log K`` over adjacent cells.

    With ``scaled=True`` each difference is divided by the cell area, which
    approximates the mixed partial derivative of ``log p``. Cells with a
    corner outside the mask are NaN.
    """
    M = K.mask
    V = K.values
    if np.any(V[M] <= 0):
        i, j = np.argwhere(M & (V <= 0))[0]
        raise DomainError(f"log-supermodularity needs strictly positive values; "
                          f"value {V[i, j]} at index ({i}, {j})")
    with np.errstate(divide="ignore"):
        L = np.where(M, np.log(np.where(M, V, 1.0)), np.nan)
    d2 = L[1:, 1:] + L[:-1, :-1] - L[1:, :-1] - L[:-1, 1:]
    if scaled:
        d2 = d2 / np.outer(np.diff(K.x_grid), np.diff(K.y_grid))
    return d2


def check_supermodular_logdensity(K: KernelGrid, tol: float = DEFAULT_TOL) -> CheckReport:
    """Sign of the discrete mixed second difference of ``log K``.

    The unscaled difference ``log v(i+1,j+1) + log v(i,j) - log v(i+1,j)
    - log v(i,j+1)`` must be ``>= -tol`` on every cell whose corners are in
    the mask. Raises :class:`DomainError` on zero or negative masked values.
    """
    d2 = log_mixed_differences(K, scaled=False)
    ok = ~np.isnan(d2)
    n_checked = int(ok.sum())
    if n_checked == 0:
        return CheckReport(Verdict.INCONCLUSIVE, 0.0, None, tol, 0,
                           meta={"reason": "no cell with all four corners in the support"})
    filled = np.where(ok, d2, np.inf)
    k = int(np.argmin(filled))
    worst = min(float(filled.flat[k]), 0.0)
    witness = None
    if worst < 0:
        i, j = np.unravel_index(k, d2.shape)
        witness = {"cell": (int(i), int(j)), "x": (float(K.x_grid[i]), float(K.x_grid[i + 1])),
                   "y": (float(K.y_grid[j]), float(K.y_grid[j + 1])),
                   "mixed_difference": float(d2[i, j])}
    scaled = d2 / np.outer(np.diff(K.x_grid), np.diff(K.y_grid))
    meta = {"min_scaled": float(np.nanmin(scaled)), "max_scaled": float(np.nanmax(scaled))}
    verdict = Verdict.FAIL if worst < -tol else Verdict.PASS
    return CheckReport(verdict, worst, witness, tol, n_checked, meta=meta)


def _is_uniform(x, rtol=1e-9):
    d = np.diff(x)
    return np.allclose(d, d[0], rtol=rtol, atol=0)


def check_log_concave(p, tol: float = DEFAULT_TOL, x=None, via_kernel: bool = False) -> CheckReport:
    """Log-concavity of a nonnegative sequence or of a function on a grid.

    Sequence case (``x is None``): ``p(k)^2 >= p(k-1) p(k+1)`` at every
    interior ``k``, compared relative to the larger side, plus a contiguous
    support. Grid case: ``p`` (values or a callable) is sampled on a uniform
    grid ``x``. The displacement kernel ``f(x_0 + x_i - x_j)`` is TP2 exactly
    when the samples form a log-concave sequence without internal zeros, so
    the sequence test is used; ``via_kernel=True`` runs the O(n^4) kernel
    scan through :func:`check_tp2_grid` instead.
    """
    if x is not None:
        x = _as_grid(x, "x")
        if not _is_uniform(x):
            raise InputError("grid case needs a uniform grid")
        vals = np.asarray(p(x) if callable(p) else p, dtype=float)
        if vals.shape != x.shape:
            raise InputError("values and grid differ in length")
        if vals.size < 3:
            raise InputError("need at least 3 points")
        if not via_kernel:
            rep = check_log_concave(vals, tol)
            if rep.witness is not None and "k" in rep.witness:
                rep.witness["x"] = float(x[rep.witness["k"]])
            rep.meta["case"] = "grid"
            return rep
        n = vals.size
        i, j = np.indices((n, n))
        mask = i >= j
        K = KernelGrid(x, x - x[0], np.where(mask, vals[np.clip(i - j, 0, n - 1)], 0.0), mask)
        rep = check_tp2_grid(K, tol)
        rep.meta["case"] = "grid_kernel"
        return rep

    v = np.asarray(p, dtype=float)
    if v.ndim != 1 or v.size < 3:
        raise InputError("need a 1-D sequence with at least 3 points")
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise InputError("sequence must be finite and nonnegative")
    pos = np.flatnonzero(v > 0)
    if pos.size and pos[-1] - pos[0] + 1 != pos.size:
        gap = int(pos[np.flatnonzero(np.diff(pos) > 1)[0]] + 1)
        return CheckReport(Verdict.FAIL, -1.0, {"k": gap, "reason": "support has a gap"}, tol,
                           v.size - 2, meta={"case": "sequence"})
    mid = v[1:-1] ** 2
    side = v[:-2] * v[2:]
    scale = np.maximum(mid, side)
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(scale > 0, (mid - side) / np.where(scale > 0, scale, 1.0), 0.0)
    k = int(np.argmin(rel))
    worst = min(float(rel[k]), 0.0)
    witness = None
    if worst < 0:
        witness = {"k": k + 1, "p_prev": v[k], "p": v[k + 1], "p_next": v[k + 2],
                   "gap": float(mid[k] - side[k])}
    verdict = Verdict.FAIL if worst < -tol else Verdict.PASS
    return CheckReport(verdict, worst, witness, tol, int(mid.size),
                       meta={"case": "sequence", "max_abs_relative_gap": float(np.max(np.abs(rel)))})


def trapezoid_weights(grid) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    w = np.empty_like(g)
    d = np.diff(g)
    w[0] = d[0] / 2
    w[-1] = d[-1] / 2
    w[1:-1] = (d[:-1] + d[1:]) / 2
    return w


def compose_kernels(p: KernelGrid, q: KernelGrid, weights=None) -> KernelGrid:
    """``r(x, z) = sum_y p(x, y) q(y, z) w(y)``; trapezoidal ``w`` by default."""
    if p.y_grid.shape != q.x_grid.shape or not np.allclose(p.y_grid, q.x_grid, rtol=1e-12, atol=1e-14):
        raise InputError("p.y_grid must equal q.x_grid")
    w = trapezoid_weights(p.y_grid) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != p.y_grid.shape or np.any(w < 0):
        raise InputError("weights must be nonnegative with one entry per middle grid point")
    pv = np.where(p.mask, p.values, 0.0)
    qv = np.where(q.mask, q.values, 0.0)
    return KernelGrid(p.x_grid, q.y_grid, pv @ (w[:, None] * qv))


def reflect_kernel(f, grid, tol: float = 1e-12, outside: str = "zero") -> KernelGrid:
    """Kernel ``f(x - y) + f(-x - y)`` on the nonnegative part of ``grid``.

    ``f`` is either a callable (evaluated exactly) or an array of values on a
    uniform grid symmetric about 0. For arrays, ``outside="zero"`` treats the
    array as the whole density (0 off the grid), while ``outside="restrict"``
    keeps only output points ``x, y <= max(grid) / 2`` so that every argument
    is on the grid. Truncating a density with unbounded support is not
    harmless: a Gaussian cut at +-4 is no longer PF-infinity and its
    reflection can fail TP2 near the corner ``x + y > 4``.
    """
    g = _as_grid(grid, "grid")
    h = np.diff(g)
    if not np.allclose(g, -g[::-1], atol=tol * max(1.0, np.abs(g).max())):
        raise InputError("grid must be symmetric about 0")
    if callable(f):
        fv = np.asarray(f(g), dtype=float)
    else:
        fv = np.asarray(f, dtype=float)
    if fv.shape != g.shape:
        raise InputError("f values and grid differ in length")
    if np.any(fv < 0):
        raise InputError("density values must be nonnegative")
    if not np.allclose(fv, fv[::-1], rtol=0, atol=tol * max(fv.max(), 1e-300)):
        raise InputError("f is not symmetric")
    nonneg = g >= -tol * h.min()
    if not callable(f) and outside == "restrict":
        nonneg &= g <= g.max() / 2 + tol * h.min()
    elif outside not in ("zero", "restrict"):
        raise InputError("outside must be 'zero' or 'restrict'")
    xs = np.abs(g[nonneg])
    xs[0] = 0.0 if abs(xs[0]) < tol * h.min() else xs[0]
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    if callable(f):
        vals = np.asarray(f(X - Y), dtype=float) + np.asarray(f(-X - Y), dtype=float)
    else:
        if not _is_uniform(g):
            raise InputError("array input needs a uniform grid")
        if not np.isclose(xs[0], 0.0):
            raise InputError("array input needs 0 on the grid")
        c = g.size // 2
        a, b = np.indices(X.shape)
        a, b = a + c, b + c
        n = g.size

        def lookup(idx):
            ok = (idx >= 0) & (idx < n)
            return np.where(ok, fv[np.clip(idx, 0, n - 1)], 0.0)

        vals = lookup(c + a - b) + lookup(3 * c - a - b)
    return KernelGrid(xs, xs, vals)


def smooth_kernel(q: KernelGrid, eps: float) -> KernelGrid:
    """Gaussian smoothing in ``x`` with bandwidth ``eps``.

    Each output row is a trapezoidal average of ``q`` against the Gaussian
    weights ``exp(-(x - y)^2 / (2 eps^2))``, normalized to unit total weight
    on the grid. Row normalization only rescales rows, so TP2 is kept, and it
    makes the operator reduce to the identity as ``eps`` shrinks below the
    grid step.
    """
    if not eps > 0:
        raise InputError("eps must be positive")
    x = q.x_grid
    logw = -((x[:, None] - x[None, :]) ** 2) / (2 * eps ** 2) + np.log(trapezoid_weights(x))[None, :]
    logw -= logw.max(axis=1, keepdims=True)
    S = np.exp(logw)
    S /= S.sum(axis=1, keepdims=True)
    qv = np.where(q.mask, q.values, 0.0)
    return KernelGrid(x, q.y_grid, S @ qv)


def _gaussian(u, var):
    return np.exp(-u ** 2 / (2 * var)) / np.sqrt(2 * np.pi * var)


def edrei_geometric_density(k, a):
    """Two-sided geometric law ``c exp(-a|k|)`` with ``c = tanh(a/2)`` so it sums to 1."""
    k = np.asarray(k)
    return np.tanh(a / 2) * np.exp(-a * np.abs(k))


def _kernel_values(kind: str, X, Y, params: dict):
    if kind == "brownian":
        t = float(params.get("t", 1.0))
        if not t > 0:
            raise InputError("brownian needs t > 0")
        return _gaussian(X - Y, t), None
    if kind == "ou":
        c = float(params.get("c", 1.0))
        nu = float(params.get("nu", 0.0))
        t = float(params.get("t", 1.0))
        if c == 0 or not t > 0:
            raise InputError("ou needs c != 0 and t > 0")
        ect = np.exp(-c * t)
        var = np.sinh(c * t) / (c * np.exp(c * t))
        if not var > 0:
            raise InputError("ou parameters give a nonpositive variance")
        return _gaussian(Y - X * ect - nu * (1 - ect), var), None
    if kind == "cauchy_counterexample":
        return 1.0 / (1.0 + (X - Y) ** 2), None
    if kind == "gamma_increment":
        shape = float(params.get("shape", 1.0))
        scale = float(params.get("scale", 1.0))
        if not (shape > 0 and scale > 0):
            raise InputError("gamma_increment needs shape > 0 and scale > 0")
        D = Y - X
        mask = D > 0
        vals = np.where(mask, stats.gamma.pdf(np.where(mask, D, 1.0), shape, scale=scale), 0.0)
        return vals, mask
    if kind == "edrei_geometric":
        a = float(params.get("a", 1.0))
        if not a > 0:
            raise InputError("edrei_geometric needs a > 0")
        D = X - Y
        if not np.allclose(D, np.round(D)):
            raise InputError("edrei_geometric lives on integer grids")
        return edrei_geometric_density(np.round(D), a), None
    raise InputError(f"unknown kernel kind {kind!r}")


def builtin_kernel(spec, x_grid, y_grid=None, **params) -> KernelGrid:
    """Closed-form kernels evaluated on grids.

    ``spec`` is a kind name or a mapping ``{"kind": ..., **params}``. Kinds:

    - ``brownian`` (``t``): heat kernel with variance ``t``.
    - ``ou`` (``c``, ``nu``, ``t``): Ornstein-Uhlenbeck transition density.
    - ``cauchy_counterexample``: ``1 / (1 + (x - y)^2)``.
    - ``gamma_increment`` (``shape``, ``scale``): ``g(y - x)`` for the gamma
      density ``g``, with support mask ``y > x``.
    - ``edrei_geometric`` (``a``): ``f(x - y)`` for the two-sided geometric
      law on integer grids.
    """
    if isinstance(spec, Mapping):
        params = {**{k: v for k, v in spec.items() if k != "kind"}, **params}
        kind = spec["kind"]
    else:
        kind = spec
    x = _as_grid(x_grid, "x_grid")
    y = x if y_grid is None else _as_grid(y_grid, "y_grid")
    X, Y = np.meshgrid(x, y, indexing="ij")
    vals, mask = _kernel_values(kind, X, Y, params)
    return KernelGrid(x, y, vals, mask)
