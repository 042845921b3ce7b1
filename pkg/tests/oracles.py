"""Brute-force reference implementations used to cross-check the library.

Everything here is written with plain loops and the standard library so it
shares no code path with ``peacocks``.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction


def tp2_minors(V):
    """Yield ``(i1, i2, j1, j2, minor)`` over every 2x2 minor of a nested list."""
    n, m = len(V), len(V[0])
    for i1 in range(n):
        for i2 in range(i1 + 1, n):
            for j1 in range(m):
                for j2 in range(j1 + 1, m):
                    yield i1, i2, j1, j2, V[i1][j1] * V[i2][j2] - V[i1][j2] * V[i2][j1]


def min_minor(V):
    return min((mm for *_, mm in tp2_minors(V)), default=0.0)


def is_tp2(V, rel_tol=1e-10):
    for i1, i2, j1, j2, mm in tp2_minors(V):
        vals = sorted([V[i1][j1], V[i2][j2], V[i1][j2], V[i2][j1]])
        if mm < -rel_tol * vals[-1] * vals[-2]:
            return False
    return True


def cells(shape):
    return list(itertools.product(*[range(s) for s in shape]))


def is_mtp2(values, shape, rel_tol=1e-10):
    """Every pair of cells; ``values`` is a dict cell -> probability."""
    cs = cells(shape)
    for a in cs:
        for b in cs:
            lo = tuple(min(x, y) for x, y in zip(a, b))
            hi = tuple(max(x, y) for x, y in zip(a, b))
            gap = values[lo] * values[hi] - values[a] * values[b]
            vals = sorted([values[lo], values[hi], values[a], values[b]])
            if gap < -rel_tol * vals[-1] * vals[-2]:
                return False
    return True


def gw_q(i, j):
    """Galton-Watson transition for geometric(1/2) offspring, as an exact fraction."""
    if i == 0:
        return Fraction(1 if j == 0 else 0)
    return Fraction(math.comb(i + j - 1, j), 2 ** (i + j))


def scm_k(values, shape, phi, f_list, i):
    """``K_i(z)`` by explicit summation; ``None`` for zero-mass slices."""
    out = []
    for z in range(shape[i]):
        num = den = mass = 0.0
        for c in cells(shape):
            if c[i] != z:
                continue
            w = values[c]
            for k, x in enumerate(c):
                w *= f_list[k][x]
            num += phi[c] * w
            den += w
            mass += values[c]
        out.append(num / den if mass > 0 else None)
    return out


def chain_paths(init, transitions):
    """Every trajectory of a finite chain with its probability."""
    sizes = [len(init)] + [len(T[0]) for T in transitions]
    for path in itertools.product(*[range(s) for s in sizes]):
        p = init[path[0]]
        for k, T in enumerate(transitions):
            p *= T[path[k]][path[k + 1]]
        if p > 0:
            yield path, p


def call_value(law, K):
    """``E[(N - K)^+]`` for a list of ``(value, prob)`` pairs."""
    return sum(p * max(v - K, 0.0) for v, p in law)


def normalized_exp_law(pairs):
    """Law of ``exp(S) / E[exp(S)]`` from ``(S, prob)`` pairs."""
    Z = sum(p * math.exp(s) for s, p in pairs)
    return [(math.exp(s) / Z, p) for s, p in pairs]


def lognormal_call(sigma, K):
    """``E[(e^{sigma X - sigma^2/2} - K)^+]`` for standard normal ``X`` (Black-Scholes with unit spot)."""
    if sigma == 0:
        return max(1.0 - K, 0.0)
    d1 = (-math.log(K) + sigma * sigma / 2) / sigma
    d2 = d1 - sigma
    Phi = lambda x: 0.5 * (1 + math.erf(x / math.sqrt(2)))
    return Phi(d1) - K * Phi(d2)
