import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from peacocks.errors import InputError
from peacocks.mtp2 import chain_joint, check_mtp2, random_tp2_stochastic
from peacocks.processes import (BLOCK_SIZE, FiniteChain, PathEnsemble, ProcessModel, gamma_subordinator_joint,
                                gw_default_imax, gw_rescaled_chain, gw_transition, simulate)
from peacocks.totpos import KernelGrid, check_tp2_grid

import oracles


def test_gw_matrix_matches_fraction_oracle():
    Q = gw_transition(7)
    raw = Q.matrix * (1 - Q.tail)[:, None]
    for i in range(8):
        for j in range(8):
            assert raw[i, j] == pytest.approx(float(oracles.gw_q(i, j)), rel=1e-12, abs=1e-300)
    assert np.allclose(Q.matrix.sum(axis=1), 1.0)
    assert Q.tail[0] == 0.0
    assert Q.tail[3] == pytest.approx(float(1 - sum(oracles.gw_q(3, j) for j in range(8))), rel=1e-10)


def test_gw_exact_rows_sum_to_one():
    # sum_j C(i+j-1, j) 2^-(i+j) = 1 for every i >= 1
    for i in range(1, 5):
        s = sum(oracles.gw_q(i, j) for j in range(200))
        assert abs(float(s) - 1) < 1e-40 or s < 1
        assert 1 - s < Fraction(1, 10 ** 40)


def test_gw_matrix_is_tp2_and_critical():
    Q = gw_transition(7)
    K = KernelGrid(np.arange(8.0), np.arange(8.0), Q.matrix)
    assert check_tp2_grid(K).passed
    big = gw_transition(200)
    means = big.matrix[1:20] @ np.arange(201)
    assert np.allclose(means, np.arange(1, 20), rtol=1e-10)


def test_gw_transition_bad_imax():
    with pytest.raises(InputError):
        gw_transition(0)


def test_gw_joint_small_truncation():
    chain = gw_rescaled_chain(1, [1, 2], i_max=12)
    J = chain_joint(chain, [0, 1])
    assert J.shape == (13, 13)
    assert check_mtp2(J).passed
    # starting from k=1, after one step the law is geometric(1/2) on {0,1,...}
    assert chain.init[0] == pytest.approx(0.5 / (1 - 0.5 ** 13), rel=1e-12)


def test_gw_rescaled_chain_tail_and_mean():
    chain = gw_rescaled_chain(8, [0.25, 0.5, 1.0])
    assert chain.meta["tail_mass"] < 1e-9
    assert chain.meta["steps"] == [2, 4, 8]
    for k in range(3):
        mu = chain.marginal(k)
        assert mu @ chain.grids[k] == pytest.approx(1.0, abs=1e-8)
    # offspring variance 2 gives Var Z_n = 2 k n, so Var Y_lam = 2 lam
    mu = chain.marginal(2)
    var = mu @ chain.grids[2] ** 2 - 1
    assert var == pytest.approx(2 * 1.0, rel=1e-6)


def test_default_imax_grows_with_horizon():
    assert gw_default_imax(8, 8) < gw_default_imax(8, 64)
    assert gw_default_imax(4, 0) == 5


def test_gw_chain_errors():
    with pytest.raises(InputError):
        gw_rescaled_chain(0, [1])
    with pytest.raises(InputError):
        gw_rescaled_chain(2, [1, 0.5])
    with pytest.raises(InputError):
        gw_rescaled_chain(10, [1], i_max=5)


def test_finite_chain_validation():
    with pytest.raises(InputError):
        FiniteChain(None, [0.5, 0.5], [[[0.5, 0.6], [0.5, 0.5]]])
    with pytest.raises(InputError):
        FiniteChain(None, [0.5, 0.4], [np.eye(2)])
    with pytest.raises(InputError):
        FiniteChain([[0, 1], [1, 0]], [0.5, 0.5], [np.eye(2)])
    with pytest.raises(InputError):
        FiniteChain(None, [0.5, 0.5], [np.eye(2)], time_labels=[1, 1])
    with pytest.raises(InputError):
        FiniteChain(None, [0.5, 0.5], [np.eye(2)]).index_of(3.5)


def test_from_joint_reproduces_matrix():
    P = np.array([[3, 3, 1], [3, 2, 2], [1, 2, 3]]) / 20
    chain = FiniteChain.from_joint(P)
    assert np.allclose(chain_joint(chain, [0, 1]).values, P)
    assert chain.grids[0].tolist() == [1, 2, 3]


def test_chain_dict_roundtrip():
    rng = np.random.default_rng(0)
    c = FiniteChain(None, [0.3, 0.7], [random_tp2_stochastic(rng, 2, 3), random_tp2_stochastic(rng, 3, 2)],
                    time_labels=[0, 0.5, 2])
    d = FiniteChain.from_dict(c.to_dict())
    assert np.array_equal(d.transitions[1], c.transitions[1])
    assert d.index_of(0.5) == 1


def test_chapman_kolmogorov_on_chain():
    rng = np.random.default_rng(1)
    Ts = [random_tp2_stochastic(rng, 4, 4) for _ in range(3)]
    c = FiniteChain(None, np.full(4, 0.25), Ts)
    assert np.allclose(c.transition_between(0, 3), Ts[0] @ Ts[1] @ Ts[2])
    assert np.allclose(c.marginal(2), np.full(4, 0.25) @ Ts[0] @ Ts[1])


def test_gamma_joint():
    J = gamma_subordinator_joint()
    assert J.total_mass == pytest.approx(1.0)
    assert np.all(np.tril(J.values, -1) == 0)
    with pytest.raises(InputError):
        gamma_subordinator_joint(0.6, 0.3)


@pytest.mark.parametrize("model,expect_mean,expect_var", [
    (ProcessModel("brownian"), lambda t: 0 * t, lambda t: t),
    (ProcessModel("gbm_exponent"), lambda t: -t / 2, lambda t: t),
    (ProcessModel("ou", {"c": 1.0, "nu": 0.5}), lambda t: 0.5 * (1 - np.exp(-t)),
     lambda t: (1 - np.exp(-2 * t)) / 2),
    (ProcessModel("gamma_subordinator", {"a": 2.0}), lambda t: 2 * t, lambda t: 2 * t),
    (ProcessModel("gw", {"k": 16}), lambda t: 0 * t + 1, lambda t: 2 * np.floor(16 * t + 1e-9) / 16),
])
def test_simulated_moments(model, expect_mean, expect_var):
    times = np.array([0.5, 1.0, 2.0])
    ens = simulate(model, times, 40000, seed=11)
    m, v = ens.values.mean(axis=0), ens.values.var(axis=0)
    ev = expect_var(times)
    se_m = np.sqrt(ev / ens.n_paths)
    assert np.all(np.abs(m - expect_mean(times)) < 5 * se_m + 1e-12)
    assert np.allclose(v, ev, rtol=0.05)


def test_finite_chain_sampling_matches_marginals():
    rng = np.random.default_rng(2)
    Ts = [random_tp2_stochastic(rng, 3, 3) for _ in range(2)]
    c = FiniteChain([np.array([1.0, 2.0, 4.0])] * 3, [0.2, 0.3, 0.5], Ts)
    ens = simulate(ProcessModel("finite", chain=c), [0, 1, 2], 50000, seed=5)
    for k in range(3):
        freq = np.array([(ens.values[:, k] == g).mean() for g in c.grids[k]])
        assert np.max(np.abs(freq - c.marginal(k))) < 0.01


def test_besq0_euler_mean_and_absorption():
    ens = simulate(ProcessModel("besq0", {"method": "euler", "n_steps": 200}), [0.5, 1.0], 40000, seed=3)
    assert np.all(ens.values >= 0)
    assert abs(ens.values[:, 1].mean() - 1) < 0.03
    # P(Z_1 = 0) = exp(-1/1) for BESQ0 started at 1
    assert abs((ens.values[:, 1] == 0).mean() - math.exp(-1)) < 0.03


def test_simulate_jobs_and_block_independence():
    m = ProcessModel("gw", {"k": 8})
    a = simulate(m, [0.5, 1.0], 20000, seed=9, jobs=1)
    b = simulate(m, [0.5, 1.0], 20000, seed=9, jobs=3)
    assert np.array_equal(a.values, b.values)
    # whole blocks are stable prefixes; a partial block is drawn as its own vector
    c = simulate(m, [0.5, 1.0], BLOCK_SIZE, seed=9)
    assert np.array_equal(a.values[:BLOCK_SIZE], c.values)
    d = simulate(m, [0.5, 1.0], BLOCK_SIZE, seed=10)
    assert not np.array_equal(c.values, d.values)


def test_simulate_errors():
    with pytest.raises(InputError):
        simulate(ProcessModel("brownian"), [1.0, 0.5], 10, 0)
    with pytest.raises(InputError):
        simulate(ProcessModel("brownian"), [1.0], 0, 0)
    with pytest.raises(InputError):
        ProcessModel("levy")
    with pytest.raises(InputError):
        ProcessModel("finite")
    with pytest.raises(InputError):
        ProcessModel("gw", {"k": 1.5})


def test_ensemble_csv_roundtrip(tmp_path):
    ens = simulate(ProcessModel("ou", {"c": 2.0}), [0.1, 0.3], 50, seed=1)
    path, side = ens.to_csv(tmp_path / "paths.csv")
    back = PathEnsemble.from_csv(path)
    assert np.array_equal(back.values, ens.values)
    assert back.model.params == {"c": 2.0} and back.seed == 1
    assert side.exists()
    with pytest.raises(InputError):
        ens.column(0.2)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 30), st.integers(0, 40))
def test_gw_rows_are_negative_binomial(i, j):
    Q = gw_transition(80)
    raw = Q.matrix[i, j] * (1 - Q.tail[i])
    assert raw == pytest.approx(stats.nbinom.pmf(j, i, 0.5), rel=1e-12)
    assert raw == pytest.approx(float(oracles.gw_q(i, j)), rel=1e-12)
