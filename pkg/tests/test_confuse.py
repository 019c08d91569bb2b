from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from nnasr.confuse import (
    AssociationPair, ConfusionRule, ConfusionRuleExtractor, associate, count_associations, extract_rules,
    format_rules, parse_rules, rules_from_counts,
)
from nnasr.errors import FormatError, UsageError
from nnasr.labels import Segment, Transcription


def tr(*items):
    return Transcription(Segment(p, a, b) for p, a, b in items)


def pairs_from(counts, source="aI"):
    return [AssociationPair(source, tuple(t.split())) for t, n in counts.items() for _ in range(n)]


def test_identical_segmentations_pair_one_to_one():
    segs = [("x", 0, 3), ("y", 3, 8), ("z", 8, 9)]
    out = associate(tr(*segs), tr(*[("q" + p, a, b) for p, a, b in segs]))
    assert [(p.source, p.target) for p in out] == [("x", ("qx",)), ("y", ("qy",)), ("z", ("qz",))]


def test_diphthong_split_into_two_l1_phones():
    out = associate(tr(("aI", 10, 30)), tr(("a", 10, 20), ("I", 20, 30)))
    assert [(p.source, p.target) for p in out] == [("aI", ("a", "I"))]


def test_max_overlap_assignment():
    out = associate(tr(("p", 0, 10), ("q", 10, 30)), tr(("s", 8, 14)))
    assert [p.target for p in out] == [(), ("s",)]


def test_overlap_tie_goes_to_earlier_segment():
    out = associate(tr(("p", 0, 10), ("q", 10, 20)), tr(("s", 7, 13)))
    assert [p.target for p in out] == [("s",), ()]


def test_empty_input_gives_empty_result():
    assert associate(tr(), tr(("a", 0, 3))) == []
    assert associate(tr(("a", 0, 3)), tr()) == []


def test_unoverlapped_l1_segment_dropped():
    out = associate(tr(("p", 5, 10)), tr(("s", 0, 5), ("t", 5, 10)))
    assert [p.target for p in out] == [("t",)]


def random_transcription(draw, prefix):
    cuts = sorted(draw(st.sets(st.integers(1, 39), max_size=8)))
    bounds = [0] + cuts + [40]
    keep = draw(st.lists(st.booleans(), min_size=len(bounds) - 1, max_size=len(bounds) - 1))
    return Transcription(Segment(f"{prefix}{k}", a, b) for k, (a, b, on) in enumerate(zip(bounds, bounds[1:], keep)) if on)


@st.composite
def two_transcriptions(draw):
    return random_transcription(draw, "L"), random_transcription(draw, "m")


@settings(max_examples=200, deadline=None)
@given(two_transcriptions())
def test_association_is_a_partition_by_max_overlap(pair):
    l2, l1 = pair
    out = associate(l2, l1)
    if not len(l2) or not len(l1):
        assert out == []
        return
    assert [p.source for p in out] == l2.phones
    assigned = [t for p in out for t in p.target]
    assert len(assigned) == len(set(assigned))
    for seg in l1:
        ovs = [seg.overlap(s) for s in l2]
        best = max(ovs)
        owner = [k for k, p in enumerate(out) if seg.phone in p.target]
        if best == 0:
            assert owner == []
        else:
            assert owner == [ovs.index(best)]
    for p in out:
        starts = [int(t[1:]) for t in p.target]
        assert starts == sorted(starts)


def test_rule_probabilities_from_counts():
    rules = extract_rules(pairs_from({"a e": 40, "a I": 60}))
    assert [(r.targets, r.probability, r.count) for r in rules] == [(("a", "I"), 0.6, 60), (("a", "e"), 0.4, 40)]


def test_single_target_probability_one():
    rules = extract_rules(pairs_from({"a": 100}))
    assert len(rules) == 1 and rules[0].probability == 1.0


def test_min_count_then_renormalise():
    rules = extract_rules(pairs_from({"a": 50, "b": 3}, "X"), min_count=10)
    assert [(r.targets, r.probability) for r in rules] == [(("a",), 1.0)]


def test_without_renormalisation_probabilities_are_relative_frequencies():
    rules = extract_rules(pairs_from({"a": 50, "b": 3}, "X"), min_count=10, renormalize=False)
    assert rules[0].probability == pytest.approx(50 / 53)


def test_top_k_and_tie_order():
    counts = Counter({("X", "", ("b", "c")): 20, ("X", "", ("a",)): 20, ("X", "", ("z",)): 20, ("X", "", ("y",)): 5})
    rules = rules_from_counts(counts, min_count=1, top_k=2, min_rel_freq=0.0)
    assert [r.targets for r in rules] == [("a",), ("z",)]


def test_deletions_discarded_unless_kept():
    pairs = pairs_from({"a": 30}, "X") + [AssociationPair("X", ())] * 30
    assert [r.targets for r in extract_rules(pairs)] == [("a",)]
    counts = count_associations(pairs, keep_deletions=True)
    assert counts[("X", "", ())] == 30


def test_clusters_must_cover_every_pair():
    pairs = pairs_from({"a": 3}, "X")
    with pytest.raises(UsageError):
        count_associations(pairs, clusters=["a"])
    with pytest.raises(UsageError, match="rerun alignment"):
        count_associations(pairs, clusters=["a", None, "a"])


@settings(max_examples=100, deadline=None)
@given(st.dictionaries(st.sampled_from(["a", "b", "c", "a b", "b c", "c a b"]), st.integers(1, 60), min_size=1),
       st.integers(1, 20), st.integers(1, 4), st.floats(0, 0.5), st.booleans())
def test_retained_probabilities_sum_to_at_most_one(counts, min_count, top_k, rel, renorm):
    rules = extract_rules(pairs_from(counts, "X"), min_count, top_k, rel, renormalize=renorm)
    assert sum(r.probability for r in rules) <= 1 + 1e-9
    assert len(rules) <= top_k
    if renorm and rules:
        assert sum(r.probability for r in rules) == pytest.approx(1.0)


def test_rules_text_round_trip():
    rules = [ConfusionRule("aI", ("a", "e"), 0.4, 40), ConfusionRule("@", ("O",), 0.1 + 0.2, 7, "o")]
    back = parse_rules(format_rules(rules))
    assert sorted(back, key=str) == sorted(rules, key=str)
    with pytest.raises(FormatError, match="line 1"):
        parse_rules("aI a e\t0.4\t40\n")


def test_extractor_estimator():
    pairs = pairs_from({"a e": 40, "a I": 60})
    est = ConfusionRuleExtractor().fit(pairs)
    assert est.transform() == extract_rules(pairs)
    keyed = ConfusionRuleExtractor().fit(pairs, clusters=["i"] * len(pairs))
    assert {r.grapheme for r in keyed.rules_} == {"i"}
