import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from nnasr.errors import UsageError
from nnasr.labels import Segment, Transcription
from nnasr.model import VAR_FLOOR, GmmState, ModelSet, PhoneHmm, PhoneSymbol, check_trans, left_right_trans, sample_utterance
from nnasr.train import GmmHmmTrainer, baum_welch, corpus_log_likelihood, init_flat, mix_up


def bounded_self_loops(hmm, low=0.3, high=0.9):
    """Clamp every self-loop into [low, high] so sampled utterances are finite, short and of any length."""
    t = np.array(hmm.trans, dtype=np.float64)
    n = len(t) - 2
    for i in range(1, n + 1):
        loop = min(max(t[i, i], low), high)
        out = t[i].sum() - t[i, i]
        if out > 0:
            t[i] *= (1 - loop) / out
        else:  # absorbing state: open the arc to the next one
            t[i, i + 1] = 1 - loop
        t[i, i] = loop
    return PhoneHmm(hmm.phone, hmm.states, t)


def random_training_set(seed, n_utts=100, dim=2, n_phones=3):
    """A random generating model set and a labelled corpus sampled from it."""
    rng = np.random.default_rng(seed)
    truth = ModelSet([bounded_self_loops(oracles.random_phone(rng, f"p{k}", dim, n_states=2, scale=4.0))
                      for k in range(n_phones)])
    corpus = []
    for u in range(n_utts):
        phones = [truth.phone_ids[i] for i in rng.integers(n_phones, size=int(rng.integers(1, 4)))]
        frames, _ = sample_utterance(truth, phones, seed=[seed, u])
        retry = 0
        while len(frames) < 2 * len(phones):  # a 2-state flat start needs 2 frames per phone
            retry += 1
            frames, _ = sample_utterance(truth, phones, seed=[seed, u, retry])
        corpus.append((frames, phones))
    return truth, corpus


def test_identical_frames_give_floor_variance():
    frame = np.array([1.5, -2.0])
    corpus = [(np.tile(frame, (9, 1)), ["a"])]
    ms = init_flat(["a"], 3, 1, 2, corpus)
    for s in ms["a"].states:
        np.testing.assert_array_equal(s.means[0], frame)
        np.testing.assert_array_equal(s.vars[0], [VAR_FLOOR, VAR_FLOOR])


def test_unseen_phone_gets_global_statistics():
    rng = np.random.default_rng(0)
    frames = rng.normal(size=(20, 2))
    warnings = []
    ms = init_flat(["a", "z"], 2, 1, 2, [(frames, ["a"])], warnings=warnings)
    assert any("'z'" in w for w in warnings)
    for s in ms["z"].states:
        np.testing.assert_allclose(s.means[0], frames.mean(axis=0))
        np.testing.assert_allclose(s.vars[0], frames.var(axis=0))


def test_three_state_topology():
    frames = np.random.default_rng(0).normal(size=(12, 1))
    ms = init_flat(["a"], 3, 1, 1, [(frames, ["a"])])
    t = ms["a"].trans
    for i in range(1, 4):
        assert np.count_nonzero(t[i]) <= 2 and t[i, i] > 0


def test_empty_corpus_rejected():
    with pytest.raises(UsageError):
        init_flat(["a"], 1, 1, 1, [])


def test_single_gaussian_closed_form_step():
    rng = np.random.default_rng(2)
    frames = rng.normal(loc=3.0, scale=0.5, size=(40, 2))
    frames[:, 1] = 7.0  # constant dimension: variance falls to the floor
    ms = ModelSet([PhoneHmm(PhoneSymbol("a"), [GmmState.single([0.0, 0.0], [1.0, 1.0])], left_right_trans(1, 0.5))])
    new, _ = baum_welch(ms, [(frames, ["a"])], n_iters=1)
    s = new["a"].states[0]
    np.testing.assert_allclose(s.means[0], frames.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(s.vars[0], np.maximum(frames.var(axis=0), VAR_FLOOR), atol=1e-12)


def test_self_consistency_on_model_samples():
    rng = np.random.default_rng(0)
    means = [(0.0, 0.0), (8.0, 0.0)]
    states = [GmmState.single(m, [1.0, 1.0]) for m in means]
    truth = ModelSet([PhoneHmm(PhoneSymbol("a"), states, left_right_trans(2, 0.9))])
    corpus = []
    while sum(len(f) for f, _ in corpus) < 1000:
        corpus.append((sample_utterance(truth, ["a"], seed=int(rng.integers(1 << 30)))[0], ["a"]))
    new, hist = baum_welch(truth, corpus, n_iters=1)
    assert corpus_log_likelihood(new, corpus) - hist[0] >= -1e-6
    rel = lambda a, b: np.linalg.norm(a - b) / np.linalg.norm(b)
    old, cur = truth["a"], new["a"]
    assert rel(np.array([s.means for s in cur.states]), np.array([s.means for s in old.states])) < 0.05
    assert rel(np.array([s.vars for s in cur.states]), np.array([s.vars for s in old.states])) < 0.05 * 2
    assert rel(cur.trans, old.trans) < 0.05


@pytest.mark.parametrize("seed", range(3))
def test_ten_iterations_are_monotone(seed):
    _, corpus = random_training_set(seed, n_utts=40)
    init = init_flat(["p0", "p1", "p2"], 2, 2, 2, corpus)
    _, hist = baum_welch(init, corpus, n_iters=10)
    assert all(b >= a - 1e-6 for a, b in zip(hist, hist[1:]))


def test_parameters_keep_invariants_every_iteration():
    _, corpus = random_training_set(7, n_utts=30)
    ms = init_flat(["p0", "p1", "p2"], 2, 2, 2, corpus)
    for _ in range(4):
        ms, _ = baum_welch(ms, corpus, n_iters=1)
        for m in ms:
            check_trans(m.trans, m.n_states)
            for s in m.states:
                assert abs(s.weights.sum() - 1) < 1e-6 and s.vars.min() >= VAR_FLOOR


def test_short_utterances_skipped_and_all_skipped_rejected():
    ms = init_flat(["a"], 3, 1, 1, [(np.zeros((6, 1)), ["a"])])
    skipped = []
    corpus = [(np.zeros((2, 1)), ["a"]), (np.arange(6.0)[:, None], ["a"])]
    baum_welch(ms, corpus, skipped=skipped)
    assert len(skipped) == 1
    with pytest.raises(UsageError):
        baum_welch(ms, corpus[:1])


def test_update_flags_restrict_changes():
    _, corpus = random_training_set(3, n_utts=20)
    ms = init_flat(["p0", "p1", "p2"], 2, 1, 2, corpus)
    new, _ = baum_welch(ms, corpus, update="m")
    for a, b in zip(ms, new):
        assert np.array_equal(a.trans, b.trans)
        for s, t in zip(a.states, b.states):
            assert np.array_equal(s.vars, t.vars)
    with pytest.raises(UsageError):
        baum_welch(ms, corpus, update="q")


def test_mix_up_split_definition():
    ms = ModelSet([PhoneHmm(PhoneSymbol("a"), [GmmState.single([1.0, -1.0], [4.0, 0.25])])])
    s = mix_up(ms, 2)["a"].states[0]
    np.testing.assert_allclose(s.weights, [0.5, 0.5])
    np.testing.assert_allclose(s.means.mean(axis=0), [1.0, -1.0])
    np.testing.assert_allclose(s.means[0] - s.means[1], [0.8, 0.2])


def test_mix_up_identity_and_guard():
    ms = ModelSet([PhoneHmm(PhoneSymbol("a"), [GmmState([0.5, 0.5], [[0.0], [1.0]], [[1.0], [1.0]])])])
    assert mix_up(ms, 2) == ms
    with pytest.raises(UsageError):
        mix_up(ms, 1)


def test_mix_up_then_iteration_does_not_lose_likelihood():
    _, corpus = random_training_set(4, n_utts=40)
    ms, _ = baum_welch(init_flat(["p0", "p1", "p2"], 2, 1, 2, corpus), corpus, n_iters=3)
    before = corpus_log_likelihood(ms, corpus)
    split = mix_up(ms, 2)
    after, _ = baum_welch(split, corpus, n_iters=1)
    assert corpus_log_likelihood(after, corpus) >= before - 1e-6


def test_segment_labels_drive_flat_start():
    frames = np.concatenate([np.zeros((4, 1)), np.full((4, 1), 10.0)])
    labels = Transcription([Segment("a", 0, 4), Segment("b", 4, 8)])
    ms = init_flat(["a", "b"], 1, 1, 1, [(frames, labels)])
    assert ms["a"].states[0].means[0][0] == 0.0 and ms["b"].states[0].means[0][0] == 10.0


def test_trainer_estimator():
    _, corpus = random_training_set(5, n_utts=20)
    X, y = zip(*corpus)
    est = GmmHmmTrainer(n_states=2, n_iters=3).fit(list(X), list(y))
    assert est.model_set_.phone_ids == ["p0", "p1", "p2"]
    assert len(est.log_likelihood_) == 3
    assert est.score(list(X), list(y)) >= est.log_likelihood_[-1] - 1e-6


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_monotone_on_random_inputs(seed):
    _, corpus = random_training_set(seed, n_utts=10, dim=1, n_phones=2)
    _, hist = baum_welch(init_flat(["p0", "p1"], 2, 2, 1, corpus), corpus, n_iters=5)
    assert all(b >= a - 1e-6 for a, b in zip(hist, hist[1:]))
