import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from peacocks.errors import DomainError, InputError
from peacocks.mtp2 import (GaussianSpec, ProbTensor, abs_gaussian_mtp2, chain_joint, check_mtp2, comonotony_gap,
                           compose_mtp2, discretize_gaussian, gaussian_mtp2, monotone_direction,
                           random_monotone_function, random_mtp2_tensor, random_non_mtp2_bivariate,
                           random_tp2_stochastic, weighted_marginal)
from peacocks.processes import FiniteChain
from peacocks.reports import Verdict

import oracles

P = np.array([[3, 3, 1], [3, 2, 2], [1, 2, 3]]) / 20
seeds = st.integers(0, 2 ** 32 - 1)


def as_dict(p: ProbTensor):
    return {c: float(p.values[c]) for c in oracles.cells(p.shape)}


def test_p_fails_as_joint():
    rep = check_mtp2(ProbTensor(None, P))
    assert rep.failed
    w = rep.witness
    assert w["gap"] == pytest.approx(-0.0075, abs=1e-15)
    assert {w["x"], w["y"]} == {(0, 1), (1, 0)}
    assert w["meet"] == (0, 0) and w["join"] == (1, 1)


def test_independent_law_passes_both_modes():
    a, b, c = np.array([.2, .3, .5]), np.array([.6, .4]), np.array([.1, .2, .3, .4])
    p = ProbTensor(None, np.einsum("i,j,k->ijk", a, b, c))
    assert check_mtp2(p).passed
    assert check_mtp2(p, mode="pairwise").passed


def test_pairwise_inconclusive_with_zeros():
    v = np.ones((2, 2, 2))
    v[0, 1, 1] = 0.0
    assert check_mtp2(ProbTensor(None, v), mode="pairwise").verdict == Verdict.INCONCLUSIVE


def test_bad_mode():
    with pytest.raises(InputError):
        check_mtp2(ProbTensor(None, P), mode="fast")


@pytest.mark.parametrize("bad", [
    dict(axes=None, values=[0.5, 0.5]),
    dict(axes=None, values=[[0.5, -0.1], [0.3, 0.3]]),
    dict(axes=None, values=np.zeros((2, 2))),
    dict(axes=[[0, 0], [0, 1]], values=np.ones((2, 2))),
    dict(axes=[[0, 1]], values=np.ones((2, 2))),
])
def test_probtensor_validation(bad):
    with pytest.raises(InputError):
        ProbTensor(**bad)


def test_probtensor_roundtrip():
    p = random_mtp2_tensor(np.random.default_rng(1), (2, 3, 4))
    q = ProbTensor.from_dict(json.loads(json.dumps(p.to_dict())))
    assert np.array_equal(p.values, q.values)


def test_gaussian_criterion():
    good = GaussianSpec([0, 0, 0], [[1, .5, .25], [.5, 1, .5], [.25, .5, 1]])
    assert gaussian_mtp2(good).passed
    bad = GaussianSpec([0, 0], [[1, -.5], [-.5, 1]])
    rep = gaussian_mtp2(bad)
    assert rep.failed and rep.witness["scaled"] == pytest.approx(0.5)


def test_gaussian_not_pd():
    with pytest.raises(DomainError):
        GaussianSpec([0, 0], [[1, 2], [2, 1]])


def test_abs_gaussian_sign_flip():
    # negative correlation is undone by flipping one sign
    g = GaussianSpec([0, 0], [[1, -.5], [-.5, 1]])
    rep = abs_gaussian_mtp2(g)
    assert rep.passed and rep.witness["D"] in ([1, -1], [-1, 1])


def test_abs_gaussian_frustrated_triangle():
    Q = np.array([[2.0, .5, .5], [.5, 2.0, .5], [.5, .5, 2.0]])
    rep = abs_gaussian_mtp2(GaussianSpec(np.zeros(3), np.linalg.inv(Q)))
    assert rep.failed and rep.checks_performed == 4


def test_discretized_gaussian_matches_precision_sign():
    g = GaussianSpec([0, 0], [[1, .6], [.6, 1]])
    x = np.linspace(-2, 2, 9)
    assert check_mtp2(discretize_gaussian(g, [x, x])).passed
    g2 = GaussianSpec([0, 0], [[1, -.6], [-.6, 1]])
    assert check_mtp2(discretize_gaussian(g2, [x, x])).failed


def test_chain_joint_matches_path_enumeration():
    rng = np.random.default_rng(7)
    init = np.array([.2, .5, .3])
    Ts = [random_tp2_stochastic(rng, 3, 3) for _ in range(3)]
    chain = FiniteChain([np.arange(3.0)] * 4, init, Ts)
    J = chain_joint(chain, [0, 1, 2, 3])
    brute = np.zeros((3, 3, 3, 3))
    for path, pr in oracles.chain_paths(init.tolist(), [T.tolist() for T in Ts]):
        brute[path] += pr
    assert np.allclose(J.values, brute, atol=1e-15)
    sub = chain_joint(chain, [0, 2])
    assert np.allclose(sub.values, brute.sum(axis=(1, 3)), atol=1e-15)


def test_chain_joint_bad_indices():
    chain = FiniteChain([np.arange(2.0)] * 2, [.5, .5], [np.eye(2)])
    with pytest.raises(InputError):
        chain_joint(chain, [1, 0])


def test_order_statistics_mtp2():
    # (min, max) of two iid uniforms on 6 points is MTP2
    n = 6
    v = np.zeros((n, n))
    for a in range(n):
        for b in range(n):
            v[min(a, b), max(a, b)] += 1 / n ** 2
    p = ProbTensor(None, v)
    assert check_mtp2(p).passed
    assert oracles.is_mtp2(as_dict(p), p.shape)


def test_monotone_direction():
    assert monotone_direction(np.ones((2, 2))) == "constant"
    assert monotone_direction(np.array([[0, 1], [1, 2]])) == "increasing"
    assert monotone_direction(-np.array([[0, 1], [1, 2]])) == "decreasing"
    assert monotone_direction(np.array([[0, 1], [1, 0]])) == "mixed"


def test_comonotony_equality_cases():
    p = ProbTensor(None, np.outer([.3, .7], [.4, .6]))
    phi = np.array([[0, 0], [1, 1.0]])
    psi = np.array([[0, 1], [0, 1.0]])
    assert abs(comonotony_gap(p, phi, psi)) <= 1e-12
    with pytest.raises(InputError):
        comonotony_gap(p, phi, -psi)


def test_weighted_marginal_and_compose():
    rng = np.random.default_rng(2)
    p = random_mtp2_tensor(rng, (3, 4, 2))
    f = [np.exp(rng.normal(size=s)) for s in p.shape]
    m = weighted_marginal(p, f, 2)
    assert m.shape == (3, 4)
    assert check_mtp2(m).passed
    a = ProbTensor(None, random_tp2_stochastic(rng, 3, 4))
    b = ProbTensor(None, random_tp2_stochastic(rng, 4, 5))
    c = compose_mtp2(a, b)
    assert np.allclose(c.values, a.values @ b.values)
    assert check_mtp2(c).passed


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_random_mtp2_tensor_passes_oracle(seed):
    rng = np.random.default_rng(seed)
    shape = tuple(int(s) for s in rng.integers(2, 4, size=3))
    p = random_mtp2_tensor(rng, shape)
    assert oracles.is_mtp2(as_dict(p), shape)
    assert check_mtp2(p).passed and check_mtp2(p, mode="pairwise").passed


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_exhaustive_agrees_with_oracle_on_noise(seed):
    rng = np.random.default_rng(seed)
    shape = tuple(int(s) for s in rng.integers(2, 4, size=int(rng.integers(2, 4))))
    p = ProbTensor(None, rng.random(shape) + 0.01)
    expected = oracles.is_mtp2(as_dict(p), shape)
    assert check_mtp2(p).passed == expected
    assert check_mtp2(p, mode="pairwise").passed == expected


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_non_mtp2_generator(seed):
    p = random_non_mtp2_bivariate(np.random.default_rng(seed))
    assert not oracles.is_mtp2(as_dict(p), p.shape)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_comonotony_nonnegative(seed):
    rng = np.random.default_rng(seed)
    shape = tuple(int(s) for s in rng.integers(2, 5, size=3))
    p = random_mtp2_tensor(rng, shape)
    d = "increasing" if rng.random() < 0.5 else "decreasing"
    phi = random_monotone_function(rng, shape, direction=d)
    psi = random_monotone_function(rng, shape, direction=d)
    assert comonotony_gap(p, phi, psi) >= -1e-12


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_transpose_and_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    p = ProbTensor(None, rng.random((2, 3, 2)) + 0.05)
    q = p.transpose([2, 0, 1])
    assert check_mtp2(p).verdict == check_mtp2(q).verdict
