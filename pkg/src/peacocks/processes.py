"""Finite Markov chains and seeded path simulation.

Exact objects (``FiniteChain``, the truncated Galton-Watson matrix and its
rescaled chain) feed the exact checkers; ``simulate`` produces path ensembles
for the Monte Carlo side. Paths are generated in fixed blocks whose random
streams derive from ``(seed, block_index)``, so an ensemble does not depend on
the number of worker threads.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from ._parallel import pmap
from .errors import InputError

__all__ = [
    "FiniteChain",
    "GWTransition",
    "ProcessModel",
    "PathEnsemble",
    "gw_transition",
    "gw_default_imax",
    "gw_rescaled_chain",
    "simulate",
    "gamma_subordinator_joint",
    "BLOCK_SIZE",
]

BLOCK_SIZE = 8192
ROW_TOL = 1e-9


def _stochastic(M, name):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or np.any(M < 0) or not np.all(np.isfinite(M)):
        raise InputError(f"{name} must be a finite nonnegative matrix")
    if not np.allclose(M.sum(axis=1), 1.0, rtol=0, atol=ROW_TOL):
        raise InputError(f"{name} rows must sum to 1")
    return M


@dataclass
class FiniteChain:
    """Time-inhomogeneous chain on finite grids.

    ``grids[k]`` is the state grid after ``k`` transitions, ``transitions[k]``
    maps ``grids[k]`` to ``grids[k + 1]``.
    """

    grids: list
    init: np.ndarray
    transitions: list
    time_labels: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.transitions = [_stochastic(M, f"transition {k}") for k, M in enumerate(self.transitions)]
        T = len(self.transitions)
        if self.grids is None:
            sizes = [len(self.init)] + [M.shape[1] for M in self.transitions]
            self.grids = [np.arange(s, dtype=float) for s in sizes]
        self.grids = [np.asarray(g, dtype=float) for g in self.grids]
        if len(self.grids) != T + 1:
            raise InputError("need one state grid per time point")
        for g in self.grids:
            if g.ndim != 1 or (g.size > 1 and np.any(np.diff(g) <= 0)):
                raise InputError("state grids must be strictly increasing")
        init = np.asarray(self.init, dtype=float)
        if init.shape != self.grids[0].shape or np.any(init < 0) or abs(init.sum() - 1) > ROW_TOL:
            raise InputError("init must be a probability vector on the first grid")
        self.init = init
        for k, M in enumerate(self.transitions):
            if M.shape != (self.grids[k].size, self.grids[k + 1].size):
                raise InputError(f"transition {k} has shape {M.shape}, grids do not chain")
        if self.time_labels is None:
            self.time_labels = np.arange(T + 1, dtype=float)
        self.time_labels = np.asarray(self.time_labels, dtype=float)
        if self.time_labels.shape != (T + 1,) or np.any(np.diff(self.time_labels) <= 0):
            raise InputError("time_labels must be strictly increasing, one per time point")

    @classmethod
    def from_joint(cls, P, axes=None) -> "FiniteChain":
        """Two-time chain whose joint law at (0, 1) is the matrix ``P``."""
        P = np.asarray(P, dtype=float)
        P = P / P.sum()
        rows = P.sum(axis=1)
        M = np.where(rows[:, None] > 0, P / np.where(rows > 0, rows, 1.0)[:, None], 1.0 / P.shape[1])
        grids = axes if axes is not None else [np.arange(1, s + 1, dtype=float) for s in P.shape]
        return cls(grids, rows, [M])

    @property
    def n_steps(self) -> int:
        return len(self.transitions)

    def index_of(self, label: float) -> int:
        k = np.flatnonzero(np.isclose(self.time_labels, label, rtol=1e-12, atol=1e-12))
        if k.size == 0:
            raise InputError(f"time {label} is not on the chain's time grid")
        return int(k[0])

    def marginal(self, k: int) -> np.ndarray:
        mu = self.init
        for M in self.transitions[:k]:
            mu = mu @ M
        return mu

    def transition_between(self, a: int, b: int) -> np.ndarray:
        M = np.eye(self.grids[a].size)
        for T in self.transitions[a:b]:
            M = M @ T
        return M

    def to_dict(self) -> dict:
        return {
            "grids": [g.tolist() for g in self.grids],
            "init": self.init.tolist(),
            "transitions": [M.ravel().tolist() for M in self.transitions],
            "time_labels": self.time_labels.tolist(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FiniteChain":
        grids = [np.asarray(g, dtype=float) for g in d["grids"]]
        mats = [np.asarray(M, dtype=float).reshape(grids[k].size, grids[k + 1].size)
                for k, M in enumerate(d["transitions"])]
        return cls(grids, d["init"], mats, d.get("time_labels"))


@dataclass
class GWTransition:
    matrix: np.ndarray
    tail: np.ndarray

    @property
    def i_max(self) -> int:
        return self.matrix.shape[0] - 1


def _gw_raw(i_max: int) -> np.ndarray:
    i = np.arange(i_max + 1)
    Q = np.zeros((i_max + 1, i_max + 1))
    Q[0, 0] = 1.0
    if i_max >= 1:
        Q[1:] = stats.nbinom.pmf(i[None, :], i[1:, None], 0.5)
    return Q


def gw_transition(i_max: int) -> GWTransition:
    """Galton-Watson matrix for geometric(1/2) offspring, truncated to ``0..i_max``.

    ``Q(0, j) = 1[j = 0]`` and ``Q(i, j) = C(i + j - 1, j) 2^-(i + j)``.
    Rows are renormalized over the truncation; ``tail[i]`` is the mass row
    ``i`` had beyond ``i_max``.
    """
    if i_max < 1:
        raise InputError("i_max must be >= 1")
    Q = _gw_raw(int(i_max))
    kept = Q.sum(axis=1)
    tail = np.clip(1.0 - kept, 0.0, None)
    return GWTransition(Q / kept[:, None], tail)


def _escaped_mass(i_max: int, start: int, n_steps: int) -> float:
    Q = _gw_raw(i_max)
    mu = np.zeros(i_max + 1)
    mu[start] = 1.0
    for _ in range(n_steps):
        mu = mu @ Q
    return max(0.0, 1.0 - mu.sum())


def gw_default_imax(k: int, n_steps: int, eps: float = 1e-9) -> int:
    """Smallest tried truncation level whose escaped mass from ``k`` over ``n_steps`` is below ``eps``."""
    if n_steps <= 0:
        return max(k + 1, 2)
    i_max = int(k + 6 * math.sqrt(2 * k * n_steps) + 20)
    while _escaped_mass(i_max, k, n_steps) >= eps:
        i_max = int(i_max * 1.25) + 1
    return i_max


def _floor_steps(k: int, lam: float) -> int:
    return int(math.floor(k * lam + 1e-9))


def gw_rescaled_chain(k: int, lam_grid: Sequence[float], i_max: int | None = None,
                      eps: float = 1e-9) -> FiniteChain:
    """Chain of ``Y_lam = Z_[k lam] / k`` for the GW process started from ``k`` individuals.

    Between labels ``zeta < eta`` the transition is the exact matrix power
    ``Q^([k eta] - [k zeta])`` of the truncated matrix. The chain's ``meta``
    reports ``i_max`` and the probability mass lost to truncation.
    """
    if k < 1:
        raise InputError("k must be >= 1")
    lam = np.asarray(lam_grid, dtype=float)
    if lam.ndim != 1 or lam.size < 1 or np.any(lam < 0) or np.any(np.diff(lam) <= 0):
        raise InputError("lam_grid must be strictly increasing and nonnegative")
    steps = [_floor_steps(k, x) for x in lam]
    if i_max is None:
        i_max = gw_default_imax(k, steps[-1], eps)
    if i_max < k:
        raise InputError("i_max must be at least the initial population k")
    Q = gw_transition(i_max).matrix
    powers: dict[int, np.ndarray] = {}

    def power(n):
        if n not in powers:
            powers[n] = np.linalg.matrix_power(Q, n)
        return powers[n]

    init = np.zeros(i_max + 1)
    init[k] = 1.0
    if steps[0] > 0:
        init = init @ power(steps[0])
        init /= init.sum()
    mats = []
    for a, b in zip(steps, steps[1:]):
        M = power(b - a)
        mats.append(M / M.sum(axis=1, keepdims=True))
    grid = np.arange(i_max + 1) / k
    chain = FiniteChain([grid] * lam.size, init, mats, lam)
    chain.meta.update({"k": k, "i_max": int(i_max), "steps": steps,
                       "tail_mass": _escaped_mass(i_max, k, steps[-1])})
    return chain


_KINDS = ("brownian", "ou", "gbm_exponent", "gamma_subordinator", "gw", "besq0", "finite")


@dataclass
class ProcessModel:
    """Process to simulate.

    ``kind`` is one of ``brownian``, ``ou`` (``c``, ``nu``), ``gbm_exponent``
    (paths of ``B_s - s/2``), ``gamma_subordinator`` (``a``), ``gw`` (``k``),
    ``besq0`` (``method`` = ``"gw"`` with ``k``, or ``"euler"`` with
    ``n_steps``) and ``finite`` (``chain``). ``x0`` is the value at time 0
    where it applies.
    """

    kind: str
    params: dict = field(default_factory=dict)
    chain: FiniteChain | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InputError(f"unknown process kind {self.kind!r}")
        p = self.params
        if self.kind == "ou" and float(p.get("c", 1.0)) == 0:
            raise InputError("ou needs c != 0")
        if self.kind == "gamma_subordinator" and not float(p.get("a", 1.0)) > 0:
            raise InputError("gamma_subordinator needs a > 0")
        if self.kind == "gw" and not (int(p.get("k", 1)) >= 1 and float(p.get("k", 1)) == int(p.get("k", 1))):
            raise InputError("gw needs an integer k >= 1")
        if self.kind == "besq0" and p.get("method", "gw") not in ("gw", "euler"):
            raise InputError("besq0 method must be 'gw' or 'euler'")
        if self.kind == "finite" and self.chain is None:
            raise InputError("finite model needs a chain")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "params": dict(self.params)}
        if self.chain is not None:
            d["chain"] = self.chain.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ProcessModel":
        chain = FiniteChain.from_dict(d["chain"]) if d.get("chain") else None
        return cls(d["kind"], dict(d.get("params", {})), chain)


@dataclass
class PathEnsemble:
    times: np.ndarray
    values: np.ndarray
    seed: int
    model: ProcessModel

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != self.times.size:
            raise InputError("values must be n_paths x n_times")

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    def column(self, t: float) -> np.ndarray:
        k = np.flatnonzero(np.isclose(self.times, t, rtol=1e-12, atol=1e-12))
        if k.size == 0:
            raise InputError(f"time {t} is not in the ensemble")
        return self.values[:, k[0]]

    def sidecar(self) -> dict:
        return {"model": self.model.to_dict(), "times": self.times.tolist(), "seed": int(self.seed),
                "n_paths": self.n_paths}

    def to_csv(self, path) -> tuple[Path, Path]:
        """Write one row per path plus a JSON sidecar ``<path>.json``."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"t={t!r}" for t in self.times.tolist()])
            for row in self.values:
                w.writerow([repr(float(v)) for v in row])
        side = path.with_suffix(path.suffix + ".json")
        side.write_text(json.dumps(self.sidecar(), sort_keys=True))
        return path, side

    @classmethod
    def from_csv(cls, path) -> "PathEnsemble":
        path = Path(path)
        meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        vals = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(meta["times"], vals, meta["seed"], ProcessModel.from_dict(meta["model"]))


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(int(block),)))


def _simulate_block(model: ProcessModel, times: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    p = model.params
    out = np.empty((n, times.size))
    kind = model.kind
    prev_t = np.concatenate([[0.0], times[:-1]])
    dts = times - prev_t

    if kind in ("brownian", "gbm_exponent"):
        x = np.full(n, float(p.get("x0", 0.0)))
        b = x.copy()
        for j, dt in enumerate(dts):
            if dt > 0:
                b = b + rng.standard_normal(n) * math.sqrt(dt)
            out[:, j] = b - times[j] / 2 if kind == "gbm_exponent" else b
        return out

    if kind == "ou":
        c = float(p.get("c", 1.0))
        nu = float(p.get("nu", 0.0))
        x = np.full(n, float(p.get("x0", 0.0)))
        for j, dt in enumerate(dts):
            if dt > 0:
                e = math.exp(-c * dt)
                sd = math.sqrt((1 - math.exp(-2 * c * dt)) / (2 * c))
                x = x * e + nu * (1 - e) + sd * rng.standard_normal(n)
            out[:, j] = x
        return out

    if kind == "gamma_subordinator":
        a = float(p.get("a", 1.0))
        x = np.full(n, float(p.get("x0", 0.0)))
        for j, dt in enumerate(dts):
            if dt > 0:
                x = x + rng.gamma(a * dt, 1.0, size=n)
            out[:, j] = x
        return out

    if kind == "gw" or (kind == "besq0" and p.get("method", "gw") == "gw"):
        k = int(p.get("k", 64))
        z = np.full(n, k, dtype=np.int64)
        gen = 0
        for j, t in enumerate(times):
            target = _floor_steps(k, t)
            while gen < target:
                draw = rng.negative_binomial(np.maximum(z, 1), 0.5)
                z = np.where(z > 0, draw, 0)
                gen += 1
            out[:, j] = z / k
        return out

    if kind == "besq0":
        n_steps = int(p.get("n_steps", 200))
        h = times[-1] / n_steps
        z = np.full(n, float(p.get("x0", 1.0)))
        for j, dt in enumerate(dts):
            m = max(1, int(math.ceil(dt / h - 1e-9))) if dt > 0 else 0
            for _ in range(m):
                z = z + np.sqrt(2 * z) * rng.standard_normal(n) * math.sqrt(dt / m)
                z = np.maximum(z, 0.0)
            out[:, j] = z
        return out

    if kind == "finite":
        chain = model.chain
        idx = [chain.index_of(t) for t in times]
        cdf0 = np.cumsum(chain.init)
        s = np.minimum(np.searchsorted(cdf0, rng.random(n) * cdf0[-1], side="right"), cdf0.size - 1)
        step = 0
        for j, target in enumerate(idx):
            while step < target:
                C = np.cumsum(chain.transitions[step], axis=1)
                u = rng.random(n) * C[s, -1]
                s = np.minimum((C[s] <= u[:, None]).sum(axis=1), C.shape[1] - 1)
                step += 1
            out[:, j] = chain.grids[step][s]
        return out

    raise InputError(f"cannot simulate kind {kind!r}")


def simulate(model: ProcessModel, times, n_paths: int, seed: int, jobs: int = 1,
             block_size: int = BLOCK_SIZE) -> PathEnsemble:
    """Simulate ``n_paths`` paths of ``model`` observed at ``times``.

    Sampling is exact for every kind except the Euler branch of ``besq0``:
    Gaussian increments, the Gaussian OU transition, gamma increments with
    shape ``a * dt``, negative-binomial offspring sums for GW (reported as
    ``Z / k``), categorical steps for finite chains. Euler BESQ0 uses
    ``dZ = sqrt(2Z) dB`` with ``max(times) / n_steps`` steps and absorption
    at 0.

    The first ``m * block_size`` paths of a run coincide with a run of that
    many paths; a trailing partial block does not.

    Paths start at time 0 (``x0``; ``Y_0 = 1`` for GW and BESQ0). Path block
    ``b`` always uses the stream ``SeedSequence(seed, spawn_key=(b,))``.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or np.any(np.diff(times) <= 0):
        raise InputError("times must be strictly increasing")
    if model.kind != "finite" and times[0] < 0:
        raise InputError("times must be nonnegative")
    if n_paths < 1:
        raise InputError("n_paths must be >= 1")
    n_blocks = -(-int(n_paths) // block_size)

    def run(b):
        n = min(block_size, n_paths - b * block_size)
        return _simulate_block(model, times, n, _block_rng(seed, b))

    blocks = pmap(run, range(n_blocks), jobs)
    return PathEnsemble(times, np.concatenate(blocks, axis=0), int(seed), model)


def gamma_subordinator_joint(shape1: float = 0.3, shape2: float = 0.6, h: float = 0.1,
                             n_cells: int = 20):
    """Two-time law of a unit-rate gamma subordinator, binned on cells ``[kh, (k+1)h)``.

    ``X_1`` has shape ``shape1``; ``X_2 - X_1`` is an independent gamma with
    shape ``shape2 - shape1``. Cell index of ``X_2`` is taken as the sum of
    the two cell indices, which keeps the independent-increment structure
    exact on the lattice. Mass beyond ``n_cells`` is dropped and the result
    renormalized.
    """
    from .mtp2 import ProbTensor

    if not 0 < shape1 < shape2:
        raise InputError("need 0 < shape1 < shape2")
    if h <= 0 or n_cells < 2:
        raise InputError("need h > 0 and n_cells >= 2")
    edges = np.arange(n_cells + 1) * h
    w = np.diff(stats.gamma.cdf(edges, shape1))
    v = np.diff(stats.gamma.cdf(edges, shape2 - shape1))
    p = np.zeros((n_cells, n_cells))
    for i in range(n_cells):
        p[i, i:] = w[i] * v[:n_cells - i]
    return ProbTensor([edges[:-1], edges[:-1]], p / p.sum())
