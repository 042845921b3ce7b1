import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import peacocks
from peacocks.errors import InputError
from peacocks.mtp2 import ProbTensor, random_mtp2_tensor, random_tp2_stochastic
from peacocks.processes import gamma_subordinator_joint
from peacocks.reports import CheckReport, Verdict
from peacocks.scm import (ScmProbe, ScmReport, cm_check, draw_probe, scm_bivariate_tp2, scm_randomized,
                          scm_ratio)

import oracles

FIXTURES = Path(peacocks.__file__).parent / "fixtures"
P = ProbTensor(None, np.array([[3, 3, 1], [3, 2, 2], [1, 2, 3]]) / 20)
PSTAR = ProbTensor(None, np.array([[3, 2, 1], [2, 2, 3], [1, 3, 3]]) / 20)
seeds = st.integers(0, 2 ** 32 - 1)


def _oracle_K(joint, probe):
    vals = {c: float(joint.values[c]) for c in oracles.cells(joint.shape)}
    phi = {c: float(probe.phi[c]) for c in oracles.cells(joint.shape)}
    return oracles.scm_k(vals, joint.shape, phi, [f.tolist() for f in probe.f_list], probe.i)


def test_ratio_matches_explicit_sum():
    rng = np.random.default_rng(0)
    joint = random_mtp2_tensor(rng, (3, 2, 4))
    for i in range(3):
        probe = draw_probe(rng, joint.shape, i)
        rep = scm_ratio(joint, probe)
        assert np.allclose(rep.K_values, _oracle_K(joint, probe), rtol=1e-12)


def test_zero_mass_slice_is_nan_and_skipped():
    v = np.array([[0.3, 0.2], [0.0, 0.0], [0.1, 0.4]])
    probe = ScmProbe(np.array([[0, 1], [0, 1], [0, 1.0]]), [np.ones(3), np.ones(2)], 0)
    rep = scm_ratio(ProbTensor(None, v), probe)
    assert np.isnan(rep.K_values[1])
    assert _oracle_K(ProbTensor(None, v), probe)[1] is None
    assert rep.passed


def test_empty_column_skipped():
    v = np.array([[0.5, 0.0], [0.5, 0.0]])
    probe = ScmProbe(np.zeros((2, 2)), [np.ones(2), np.ones(2)], 1)
    rep = scm_ratio(ProbTensor(None, v), probe)
    assert np.isnan(rep.K_values[1]) and rep.passed and rep.witness is None


@pytest.mark.parametrize("kw", [
    dict(phi=[[1, 0], [0, 1]], f_list=[[1, 1], [1, 1]], i=0),
    dict(phi=[[0, 1], [1, 2]], f_list=[[1, 0], [1, 1]], i=0),
    dict(phi=[[0, 1], [1, 2]], f_list=[[1, 1]], i=0),
    dict(phi=[[0, 1], [1, 2]], f_list=[[1, 1], [1, 1]], i=2),
    dict(phi=[[0, 1], [1, 2]], f_list=[[1, 1, 1], [1, 1]], i=0),
])
def test_probe_validation(kw):
    with pytest.raises(InputError):
        ScmProbe(np.asarray(kw["phi"], float), kw["f_list"], kw["i"])


def test_probe_shape_mismatch():
    probe = ScmProbe(np.zeros((2, 2)), [np.ones(2), np.ones(2)], 0)
    with pytest.raises(InputError):
        scm_ratio(P, probe)


def test_fixture_P_fails_positive():
    for i in (0, 1):
        rep = scm_randomized(P, i, trials=1000, seed=0)
        assert rep.failed
        w = rep.witness
        replay = scm_ratio(P, ScmProbe.from_dict(w["probe"]))
        assert replay.failed and list(replay.witness) == w["z_pair"]
        assert rep.checks_performed == w["trial"] + 1


def test_fixture_weak_scm_passes():
    assert scm_randomized(P, 1, trials=2000, seed=0, weight_class="nondecreasing").passed
    assert scm_randomized(PSTAR, 0, trials=2000, seed=0, weight_class="nonincreasing").passed


def test_pass_report_carries_note():
    rep = scm_randomized(P, 0, trials=50, seed=1, weight_class="nondecreasing")
    assert rep.meta["note"] == "no violation in 50 trials"
    assert rep.checks_performed == 50


def test_jobs_invariance():
    a = scm_randomized(P, 1, trials=200, seed=3, jobs=1).to_dict()
    b = scm_randomized(P, 1, trials=200, seed=3, jobs=3).to_dict()
    assert a == b


def test_unit_class_shares_phi_stream():
    a = draw_probe(np.random.default_rng([5, 2]), (3, 3), 0, "unit")
    b = draw_probe(np.random.default_rng([5, 2]), (3, 3), 0, "positive")
    assert np.array_equal(a.phi, b.phi)
    assert all(np.all(f == 1) for f in a.f_list)


def test_monotone_weight_classes():
    rng = np.random.default_rng(0)
    for _ in range(50):
        up = draw_probe(rng, (6, 4), 0, "nondecreasing")
        down = draw_probe(rng, (6, 4), 0, "nonincreasing")
        assert all(np.all(np.diff(f) >= 0) for f in up.f_list)
        assert all(np.all(np.diff(f) <= 0) for f in down.f_list)
        assert up.phi.max() <= 1 + 1e-12 and up.phi.min() >= 0


def test_bad_arguments():
    with pytest.raises(InputError):
        scm_randomized(P, 0, trials=0)
    with pytest.raises(InputError):
        scm_randomized(P, 0, weight_class="weird")
    with pytest.raises(InputError):
        scm_randomized(P, 5)


def test_bivariate_reduction():
    assert scm_bivariate_tp2(P).failed
    rng = np.random.default_rng(4)
    assert scm_bivariate_tp2(ProbTensor(None, random_tp2_stochastic(rng, 4, 3))).passed
    z = ProbTensor(None, np.array([[0.5, 0.0], [0.25, 0.25]]))
    assert scm_bivariate_tp2(z).verdict == Verdict.INCONCLUSIVE
    with pytest.raises(InputError):
        scm_bivariate_tp2(random_mtp2_tensor(rng, (2, 2, 2)))


def test_gamma_joint_cm_but_not_scm():
    joint = gamma_subordinator_joint()
    assert cm_check(joint, 1, trials=300, seed=0).passed
    assert cm_check(joint, 0, trials=300, seed=0).passed
    assert scm_randomized(joint, 1, trials=300, seed=0).failed


def test_gamma_witness_fixture_replays():
    d = json.loads((FIXTURES / "_gamma_scm_witness.json").read_text())
    joint = gamma_subordinator_joint(**d["joint"])
    probe = ScmProbe.from_dict(d["probe"])
    rep = scm_ratio(joint, probe)
    assert rep.failed
    assert list(rep.witness) == d["z_pair"]
    assert rep.worst_decrease == pytest.approx(d["worst_decrease"], rel=1e-9)
    # the same probe regenerated from the recorded stream
    s = d["search"]
    regen = draw_probe(np.random.default_rng([s["seed"], s["trial"]]), joint.shape, probe.i, s["weight_class"])
    assert np.array_equal(regen.phi, probe.phi)


def test_scm_report_roundtrip():
    rep = scm_ratio(P, draw_probe(np.random.default_rng(0), P.shape, 0))
    back = ScmReport.from_dict(json.loads(rep.to_json()))
    assert back.verdict == rep.verdict
    assert np.allclose(back.K_values, rep.K_values, equal_nan=True)
    fail = scm_randomized(P, 1, trials=1000, seed=0)
    assert CheckReport.from_dict(json.loads(fail.to_json())).witness["z_pair"] == fail.witness["z_pair"]


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_mtp2_joint_never_refuted(seed):
    rng = np.random.default_rng(seed)
    shape = tuple(int(s) for s in rng.integers(2, 5, size=3))
    joint = random_mtp2_tensor(rng, shape)
    i = int(rng.integers(0, 3))
    assert scm_randomized(joint, i, trials=20, seed=seed % 1000).passed


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_probe_scaling_invariance(seed):
    rng = np.random.default_rng(seed)
    joint = random_mtp2_tensor(rng, (3, 3))
    probe = draw_probe(rng, joint.shape, 0)
    scaled = ScmProbe(probe.phi, [f * rng.uniform(0.1, 10) for f in probe.f_list], 0)
    assert np.allclose(scm_ratio(joint, probe).K_values, scm_ratio(joint, scaled).K_values, rtol=1e-10)
