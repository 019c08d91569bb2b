import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import binom

from nnasr.corpus import (
    Grammar, PlantedRuleSpec, build_word_loop, format_grammar, format_lexicon, linear_grammar, load_manifest,
    parse_grammar, parse_lexicon, synth_corpus,
)
from nnasr.decode import viterbi_align
from nnasr.errors import FormatError, PhoneLookupError, UsageError
from nnasr.labels import Segment, Transcription, format_labels, parse_labels
from worlds import separated_world


def test_lexicon_single_entry():
    lex = parse_lexicon("NO\tn oU\n")
    assert list(lex) == ["NO"] and lex["NO"] == [("n", "oU")]


def test_lexicon_two_variants():
    lex = parse_lexicon("READ\tr i d\nREAD\tr E d\n")
    assert len(lex) == 1 and len(lex["READ"]) == 2


def test_lexicon_empty_pronunciation_rejected():
    with pytest.raises(FormatError, match="line 1"):
        parse_lexicon("X\t\n")


def test_lexicon_bad_word_rejected():
    with pytest.raises(FormatError, match="line 2"):
        parse_lexicon("A\ta\nB@D\tb\n")


def test_lexicon_round_trip():
    lex = parse_lexicon("A\ta b\nA\ta c\nB\tb\n")
    assert parse_lexicon(format_lexicon(lex)) == lex


def test_word_loop_accepts_repetitions():
    g = build_word_loop(["A"])
    for n in range(1, 6):
        assert g.accepts(["A"] * n)
    assert not g.accepts(["B"])


def test_word_loop_guards():
    with pytest.raises(UsageError):
        build_word_loop([])
    with pytest.raises(UsageError):
        build_word_loop(["A"], float("-inf"))


def test_grammar_round_trip_and_validation():
    g = Grammar({0, 1, 2}, 0, {2}, [(0, 1, "A"), (1, 2, None), (1, 1, "B")], word_penalty=-1.5)
    back = parse_grammar(format_grammar(g))
    assert back.arcs == g.arcs and back.finals == g.finals and back.word_penalty == -1.5
    with pytest.raises(UsageError):
        Grammar({0, 1}, 0, {1}, [(1, 0, "A")])
    with pytest.raises(FormatError):
        parse_grammar("state 0\nstart 0\nfinal 0\narc 0 x A\n")


def test_linear_grammar_accepts_only_its_sentence():
    g = linear_grammar(["ONE", "TWO"])
    assert g.accepts(["ONE", "TWO"]) and not g.accepts(["ONE"]) and not g.accepts(["TWO", "ONE"])


def test_transcription_invariants():
    with pytest.raises(FormatError):
        Transcription([Segment("a", 0, 5), Segment("b", 3, 6)])
    with pytest.raises(FormatError):
        Transcription([Segment("a", 4, 5), Segment("b", 4, 6)])
    with pytest.raises(FormatError):
        Segment("a", 3, 3)


def test_label_file_round_trip():
    tr = Transcription([Segment("a", 0, 4), Segment("b", 4, 9)])
    assert parse_labels(format_labels(tr)) == tr
    with pytest.raises(FormatError):
        parse_labels("0 5 a\n3 7 b\n")


def test_clean_corpus_alignment_recovers_true_boundaries():
    l2, l1, lex, grammar = separated_world()
    corpus = synth_corpus(l2, l1, lex, grammar, rules=[], n_utts=20, seed=3)
    for u in corpus:
        assert u.replacements == []
        res = viterbi_align(u.features, u.phones, l2)
        assert res.phones.boundaries == u.segments.boundaries


def test_probability_one_rule_fires_every_time():
    l2, l1, lex, grammar = separated_world()
    rule = PlantedRuleSpec("A", [(("a", "e"), 1.0)])
    corpus = synth_corpus(l2, l1, lex, grammar, rules=[rule], n_utts=30, seed=1)
    fires = corpus.fire_counts()[("A", None)]
    assert fires[("a", "e")] == fires["occurrences"]
    assert fires["occurrences"] == sum(u.phones.count("A") for u in corpus)


def test_fire_rate_concentrates():
    l2, l1, lex, grammar = separated_world()
    rule = PlantedRuleSpec("A", [(("a",), 0.6)])
    corpus = synth_corpus(l2, l1, lex, grammar, rules=[rule], n_utts=400, seed=2)
    fires = corpus.fire_counts()[("A", None)]
    n = fires["occurrences"]
    assert n >= 500
    rate = fires[("a",)] / n
    assert abs(rate - 0.6) <= 0.06
    # the tolerance is far outside the binomial spread at this size
    assert binom.cdf(int(0.54 * n), n, 0.6) < 1e-3


def test_synth_is_deterministic_and_round_trips(tmp_path):
    l2, l1, lex, grammar = separated_world()
    rule = PlantedRuleSpec("B", [(("i",), 0.5)])
    a = synth_corpus(l2, l1, lex, grammar, rules=[rule], n_utts=6, seed=9, out_dir=tmp_path / "c",
                     n_speakers=2, speaker_shift=0.3)
    b = synth_corpus(l2, l1, lex, grammar, rules=[rule], n_utts=6, seed=9, n_speakers=2, speaker_shift=0.3)
    back = load_manifest(tmp_path / "c" / "manifest.json")
    for x, y, z in zip(a, b, back):
        assert np.array_equal(x.features, y.features) and np.array_equal(x.features, z.features)
        assert x.segments == z.segments and x.l2_segments == z.l2_segments and x.words == z.words
    assert back.speaker_ids() == ["spk0", "spk1"]


def test_synth_guards():
    l2, l1, lex, grammar = separated_world()
    with pytest.raises(PhoneLookupError):
        synth_corpus(l2, l1, lex, grammar, rules=[PlantedRuleSpec("Z", [(("a",), 0.5)])])
    with pytest.raises(PhoneLookupError):
        synth_corpus(l2, l1, lex, grammar, rules=[PlantedRuleSpec("A", [(("zz",), 0.5)])])
    with pytest.raises(UsageError):
        PlantedRuleSpec("A", [(("a",), 0.7), (("e",), 0.4)])
    with pytest.raises(UsageError):
        synth_corpus(l2, l1, lex, grammar, rules=[PlantedRuleSpec("A", [(("a",), 0.5)], grapheme="x")])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000))
def test_synth_transcriptions_tile_frames(seed):
    l2, l1, lex, grammar = separated_world(var=1.0)
    rule = PlantedRuleSpec("C", [(("e", "i"), 0.5)])
    corpus = synth_corpus(l2, l1, lex, grammar, rules=[rule], n_utts=3, seed=seed)
    for u in corpus:
        T = len(u.features)
        assert u.segments.is_contiguous(T) and u.l2_segments.is_contiguous(T)
        assert u.l2_segments.phones == u.phones
        assert grammar.accepts(u.words)
