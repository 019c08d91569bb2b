"""Small hand-built model sets shared by several test modules."""

import numpy as np

from nnasr.corpus import Grammar, Lexicon
from nnasr.model import GmmState, Lang, ModelSet, PhoneHmm, PhoneSymbol, left_right_trans


def blob_phone(pid, center, lang=Lang.L2, n_states=2, var=0.05, self_loop=0.5, step=3.0):
    center = np.asarray(center, dtype=float)
    states = []
    for s in range(n_states):
        m = center.copy()
        m[0] += s * step
        states.append(GmmState.single(m, np.full(center.size, var)))
    return PhoneHmm(PhoneSymbol(pid, lang), states, left_right_trans(n_states, self_loop))


def separated_world(var=0.05):
    """Three L2 phones and three L1 phones, all far apart in two dimensions."""
    l2 = ModelSet([blob_phone("A", (0, 0), var=var), blob_phone("B", (20, 0), var=var),
                   blob_phone("C", (0, 20), var=var)])
    l1 = ModelSet([blob_phone("a", (40, 0), Lang.L1, var=var), blob_phone("e", (40, 20), Lang.L1, var=var),
                   blob_phone("i", (20, 40), Lang.L1, var=var)])
    lex = Lexicon({"AB": [["A", "B"]], "CA": [["C", "A"]], "BC": [["B", "C"], ["B", "A", "C"]]})
    grammar = Grammar({0, 1, 2}, 0, {2}, [(0, 1, "AB"), (0, 1, "CA"), (1, 2, "BC"), (1, 2, "AB"), (1, 1, "CA")])
    return l2, l1, lex, grammar


def mllr_world():
    """Two phones, two states each, two well-separated components per state (D=2)."""
    from nnasr.model import GmmState
    layout = {"x": [((-6, -6), (6, 6)), ((-6, 6), (6, -6))], "y": [((0, -9), (9, 0)), ((-9, 0), (0, 9))]}
    models = []
    for pid, states in layout.items():
        gmms = [GmmState([0.5, 0.5], np.array(means, dtype=float), np.ones((2, 2))) for means in states]
        models.append(PhoneHmm(PhoneSymbol(pid), gmms, left_right_trans(2, 0.8)))
    return ModelSet(models)


def shifted_corpus(model_set, shift, n_frames=5000, seed=0, A=None):
    """Labelled utterances sampled from the set, with frames mapped through ``A x + shift``."""
    from nnasr.model import sample_utterance
    rng = np.random.default_rng(seed)
    corpus, total = [], 0
    while total < n_frames:
        phones = [model_set.phone_ids[i] for i in rng.integers(len(model_set), size=int(rng.integers(2, 6)))]
        frames, _ = sample_utterance(model_set, phones, seed=[seed, len(corpus)])
        if A is not None:
            frames = frames @ np.asarray(A).T
        corpus.append((frames + np.asarray(shift), phones))
        total += len(frames)
    return corpus
