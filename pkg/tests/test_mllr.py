import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from nnasr.errors import EstimationError, UsageError
from nnasr.mllr import MllrAdapter, MllrStats, MllrTransform, apply_mllr, estimate_mllr
from nnasr.model import ModelSet, check_trans, log_emission
from nnasr.train import corpus_log_likelihood
from worlds import mllr_world, shifted_corpus


def test_self_adaptation_is_near_identity():
    ms = mllr_world()
    t = estimate_mllr(ms, shifted_corpus(ms, [0.0, 0.0], seed=1))
    assert np.max(np.abs(t.A - np.eye(2))) <= 0.1
    assert np.max(np.abs(t.b)) <= 0.1


def test_planted_shift_recovered_and_likelihood_rises():
    ms = mllr_world()
    s = np.array([0.7, -0.4])
    corpus = shifted_corpus(ms, s, seed=2)
    t = estimate_mllr(ms, corpus)
    assert np.max(np.abs(t.b - s)) <= 0.1
    assert np.max(np.abs(t.A - np.eye(2))) <= 0.1
    assert corpus_log_likelihood(apply_mllr(ms, t), corpus) >= corpus_log_likelihood(ms, corpus)


def test_two_point_system_solved_exactly():
    mu1, mu2, y1, y2 = 1.0, 4.0, 2.5, 11.5
    stats = MllrStats(1)
    stats.add(np.array([mu1]), np.array([1.0]), 10.0, np.array([10.0 * y1]))
    stats.add(np.array([mu2]), np.array([1.0]), 10.0, np.array([10.0 * y2]))
    t = stats.solve()
    a = (y1 - y2) / (mu1 - mu2)
    assert t.A[0, 0] == pytest.approx(a, abs=1e-12)
    assert t.b[0] == pytest.approx(y1 - a * mu1, abs=1e-12)


def test_insufficient_data_names_the_problem():
    stats = MllrStats(2)
    stats.add(np.zeros(2), np.ones(2), 5.0, np.zeros(2))
    with pytest.raises(EstimationError, match="at least 3"):
        stats.solve()
    stats = MllrStats(2)
    for k in range(3):
        stats.add(np.array([float(k), 0.0]), np.ones(2), 5.0, np.zeros(2))
    with pytest.raises(EstimationError, match="row 0"):
        stats.solve()


def test_identity_transform_leaves_scores_unchanged():
    ms = mllr_world()
    out = apply_mllr(ms, MllrTransform.identity(2))
    frames = oracles.random_frames(np.random.default_rng(0), 10, 2)
    for a, b in zip(ms, out):
        for s, t in zip(a.states, b.states):
            assert np.max(np.abs(s.log_likelihood(frames) - t.log_likelihood(frames))) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_translation_invariance(seed):
    rng = np.random.default_rng(seed)
    ms = oracles.random_model_set(rng, 2, 3)
    b = rng.normal(size=3)
    out = apply_mllr(ms, MllrTransform(np.eye(3), b))
    frame = rng.normal(size=3)
    for m, n in zip(ms, out):
        for s, t in zip(m.states, n.states):
            assert log_emission(t, frame + b) == pytest.approx(log_emission(s, frame), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_apply_preserves_invariants(seed):
    rng = np.random.default_rng(seed)
    ms = oracles.random_model_set(rng, 3, 2)
    t = MllrTransform(rng.normal(size=(2, 2)), rng.normal(size=2))
    out = apply_mllr(ms, t)
    assert out.phone_ids == ms.phone_ids
    for m, n in zip(ms, out):
        check_trans(n.trans, n.n_states)
        assert np.array_equal(m.trans, n.trans)
        for s, u in zip(m.states, n.states):
            assert np.array_equal(s.vars, u.vars) and np.array_equal(s.weights, u.weights)
            np.testing.assert_allclose(u.means, s.means @ t.A.T + t.b)


def test_dimension_mismatch():
    with pytest.raises(UsageError):
        apply_mllr(mllr_world(), MllrTransform.identity(3))


def test_transform_round_trip_and_compose(tmp_path):
    t = MllrTransform(np.array([[1.0, 0.5], [0.0, 2.0]]), np.array([0.1, -0.2]))
    t.save(tmp_path / "t.json")
    back = MllrTransform.load(tmp_path / "t.json")
    assert np.array_equal(back.A, t.A) and np.array_equal(back.b, t.b)
    u = MllrTransform(np.eye(2) * 3, np.array([1.0, 1.0]))
    x = np.array([0.3, 0.7])
    c = u.compose(t)
    np.testing.assert_allclose(c.A @ x + c.b, u.A @ (t.A @ x + t.b) + u.b)


def test_adapter_estimator():
    ms = mllr_world()
    corpus = shifted_corpus(ms, [1.0, 0.0], n_frames=2000, seed=3)
    X, y = zip(*corpus)
    est = MllrAdapter(ms).fit(X, y)
    assert est.transform_.b[0] == pytest.approx(1.0, abs=0.15)
    assert isinstance(est.transform(), ModelSet)
