"""A small synthetic L2/L1 world with planted confusions, for experiments and tests.

Phones are Gaussian blobs in four dimensions. The L2 diphthong [aI] sits apart
from everything, and non-native speakers realise it as the L1 sequences
[a][e] or [a][I]. Competitor words built from L2 [A][E] are nearer to [a][e]
than [aI] is, so a native-only recognizer hears "bit" spoken as [b a e t] as
"baet". The L2 schwa is
realised as L1 [a] when spelled "a" and as L1 [O] when spelled "o".
"""

import os

import numpy as np

from .corpus import Grammar, Lexicon, PlantedRuleSpec, build_word_loop, format_grammar, format_lexicon
from .corpus import dump_planted_rules, synth_corpus
from .model import GmmState, Lang, ModelSet, PhoneHmm, PhoneSymbol, left_right_trans
from .modelio import atomic_write, save_model_set

DIM = 4
N_STATES = 3
SELF_LOOP = 0.6
STATE_STEP = 2.0  # offset between consecutive states along dimension 1
TWIN_OFFSET = 1.0

CONSONANTS = ["b", "t", "p", "n", "k", "d", "m", "s"]

L2_VOWELS = {
    "aI": (5.0, 3.0, 6.0, 0.0),
    "A": (0.0, 0.0, 0.0, 6.0),
    "E": (10.0, 0.0, 0.0, 6.0),
    "@": (-5.0, -9.0, 0.0, 0.0),
}
L1_VOWELS = {
    "a": (0.0, 0.0, 0.0, 0.0),
    "e": (10.0, 0.0, 0.0, 0.0),
    "I": (5.0, 9.0, 0.0, 0.0),
    "O": (-9.0, 5.0, 0.0, 0.0),
    "@1": (-5.0, -9.0, 1.5, 0.0),
    "A1": (1.0, 0.0, 0.0, 6.0),
    "E1": (11.0, 0.0, 0.0, 6.0),
}

SPELLING = {c: (c,) for c in CONSONANTS}
SPELLING.update({"aI": ("i", "y"), "A": ("a",), "E": ("e",), "@": ("a", "o", "u")})

# word -> pronunciation; each letter spells one phone
SLOT_A = {
    "bit": "b aI t", "baet": "b A E t",
    "pin": "p aI n", "paen": "p A E n",
    "kid": "k aI d", "kaed": "k A E d",
}
SLOT_B = {
    "mad": "m @ d", "nab": "n @ b", "sap": "s @ p",
    "tom": "t @ m", "dot": "d @ t", "son": "s @ n",
    "bus": "b @ s", "ten": "t E n", "dak": "d A k",
}


def _consonant_center(k):
    ang = 2 * np.pi * k / len(CONSONANTS)
    return (0.0, 0.0, 20.0 * np.cos(ang), 20.0 * np.sin(ang))


def _phone(pid, lang, center):
    center = np.asarray(center, dtype=np.float64)
    states = []
    for s in range(N_STATES):
        mean = center.copy()
        mean[1] += (s - (N_STATES - 1) / 2) * STATE_STEP
        states.append(GmmState.single(mean, np.ones(DIM)))
    return PhoneHmm(PhoneSymbol(pid, lang), states, left_right_trans(N_STATES, SELF_LOOP))


def demo_models():
    """``(l2, l1)`` model sets; L1 has a near twin of every L2 consonant."""
    l2, l1 = [], []
    for k, c in enumerate(CONSONANTS):
        center = np.array(_consonant_center(k))
        l2.append(_phone(c, Lang.L2, center))
        twin = center.copy()
        twin[0] += TWIN_OFFSET
        l1.append(_phone(c + "1", Lang.L1, twin))
    l2 += [_phone(p, Lang.L2, c) for p, c in L2_VOWELS.items()]
    l1 += [_phone(p, Lang.L1, c) for p, c in L1_VOWELS.items()]
    return ModelSet(l2, dim=DIM), ModelSet(l1, dim=DIM)


def demo_lexicon():
    lex = Lexicon()
    for table in (SLOT_A, SLOT_B):
        for word, pron in table.items():
            lex.add(word, pron.split())
    return lex


def demo_grammar():
    """Three-slot sentences: SLOT_A SLOT_B SLOT_A."""
    arcs = [(0, 1, w) for w in SLOT_A] + [(1, 2, w) for w in SLOT_B] + [(2, 3, w) for w in SLOT_A]
    return Grammar(states={0, 1, 2, 3}, start=0, finals={3}, arcs=arcs)


def demo_loop_grammar(loop_penalty=0.0):
    return build_word_loop(list(SLOT_A) + list(SLOT_B), loop_penalty)


def demo_rules(x_rules=True, grapheme_rules=True, p_a=0.7, p_o=0.6):
    rules = []
    if x_rules:
        rules.append(PlantedRuleSpec("aI", [(("a", "e"), 0.4), (("a", "I"), 0.6)]))
    if grapheme_rules:
        rules.append(PlantedRuleSpec("@", [(("a",), p_a)], grapheme="a"))
        rules.append(PlantedRuleSpec("@", [(("O",), p_o)], grapheme="o"))
    return rules


def true_clusters(lexicon):
    """Letter-per-phone clusters, exact for the demo words."""
    return {(w, v): list(w) for w in lexicon for v in range(len(lexicon[w]))}


def g2p_dictionary(n_words=300, seed=0):
    """Random pronunciations spelled through SPELLING, plus the demo words."""
    rng = np.random.default_rng(seed)
    phones = sorted(SPELLING)
    entries = [(w, tuple(p.split())) for table in (SLOT_A, SLOT_B) for w, p in table.items()]
    seen = {w for w, _ in entries}
    while len(entries) < n_words:
        pron = tuple(phones[i] for i in rng.integers(len(phones), size=int(rng.integers(2, 7))))
        word = "".join(SPELLING[p][int(rng.integers(len(SPELLING[p])))] for p in pron)
        if word not in seen:
            seen.add(word)
            entries.append((word, pron))
    return entries


def demo_corpus(n_utts=240, n_speakers=4, seed=0, speaker_shift=0.5, rules=None, out_dir=None):
    l2, l1 = demo_models()
    lex = demo_lexicon()
    rules = demo_rules() if rules is None else rules
    return synth_corpus(l2, l1, lex, demo_grammar(), rules, n_utts=n_utts, seed=seed, out_dir=out_dir,
                        n_speakers=n_speakers, speaker_shift=speaker_shift, clusters=true_clusters(lex))


def write_demo(out_dir, n_utts=240, n_speakers=4, seed=0, speaker_shift=0.5):
    """Write models, lexicon, grammars, planted rules, g2p dictionary, corpus and a pipeline config."""
    os.makedirs(out_dir, exist_ok=True)
    l2, l1 = demo_models()
    lex = demo_lexicon()
    save_model_set(l2, os.path.join(out_dir, "l2.json"))
    save_model_set(l1, os.path.join(out_dir, "l1.json"))
    atomic_write(os.path.join(out_dir, "lexicon.txt"), format_lexicon(lex))
    atomic_write(os.path.join(out_dir, "grammar.fsg"), format_grammar(demo_grammar()))
    atomic_write(os.path.join(out_dir, "planted_rules.json"), dump_planted_rules(demo_rules()) + "\n")
    g2p_lex = Lexicon()
    for w, p in g2p_dictionary(seed=seed):
        g2p_lex.add(w, p)
    atomic_write(os.path.join(out_dir, "g2p_dict.txt"), format_lexicon(g2p_lex))
    demo_corpus(n_utts, n_speakers, seed, speaker_shift, out_dir=os.path.join(out_dir, "corpus"))
    conf = [
        "l2_models = l2.json",
        "l1_models = l1.json",
        "lexicon = lexicon.txt",
        "grammar = grammar.fsg",
        "corpus = corpus/manifest.json",
        "g2p_dictionary = g2p_dict.txt",
        f"seed = {seed}",
        "out_dir = run",
    ]
    atomic_write(os.path.join(out_dir, "pipeline.conf"), "\n".join(conf) + "\n")
    return os.path.join(out_dir, "pipeline.conf")
