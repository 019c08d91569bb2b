"""Confusion-rule extraction from paired L2 alignments and L1 phone recognitions."""

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Optional

from sklearn.base import BaseEstimator

from .errors import FormatError, UsageError
from .labels import Segment

log = logging.getLogger(__name__)

MAX_RULE_LEN = 4


@dataclass(frozen=True)
class AssociationPair:
    source: str
    target: tuple
    utterance: Optional[str] = None
    segment: Optional[Segment] = None


@dataclass(frozen=True)
class ConfusionRule:
    source: str
    targets: tuple
    probability: float
    count: int
    grapheme: str = ""

    @property
    def key(self):
        return (self.source, self.grapheme)


def associate(l2_align, l1_recog, utterance=None):
    """Pair each L2 segment with the L1 segments it overlaps most.

    Every L1 segment goes to the single L2 segment with the largest frame
    overlap (earlier segment on ties); L1 segments overlapping nothing are
    dropped. Returns one pair per L2 segment, targets in time order.
    """
    l2 = list(l2_align)
    l1 = list(l1_recog)
    if not l2 or not l1:
        log.warning("utterance %s: empty transcription, no associations", utterance)
        return []
    assigned = [[] for _ in l2]
    dropped = 0
    lo = 0
    for seg in l1:
        while lo < len(l2) and l2[lo].end <= seg.start:
            lo += 1
        best, best_ov = None, 0
        k = lo
        while k < len(l2) and l2[k].start < seg.end:
            ov = seg.overlap(l2[k])
            if ov > best_ov:
                best, best_ov = k, ov
            k += 1
        if best is None:
            dropped += 1
        else:
            assigned[best].append(seg.phone)
    if dropped:
        log.warning("utterance %s: %d L1 segments overlap no L2 segment and were dropped", utterance, dropped)
    return [AssociationPair(s.phone, tuple(t), utterance, s) for s, t in zip(l2, assigned)]


def count_associations(pairs, clusters=None, keep_deletions=False, max_len=MAX_RULE_LEN):
    """Counter over ``(source, grapheme, target)``; grapheme is "" when unconstrained."""
    pairs = list(pairs)
    if clusters is not None:
        clusters = list(clusters)
        if len(clusters) != len(pairs):
            raise UsageError("one grapheme cluster is needed per association pair")
    counts = Counter()
    too_long = 0
    for k, pair in enumerate(pairs):
        if not pair.target and not keep_deletions:
            continue
        if len(pair.target) > max_len:
            too_long += 1
            continue
        g = ""
        if clusters is not None:
            if clusters[k] is None:
                raise UsageError(
                    f"pair {k} ({pair.source} in {pair.utterance}) has no grapheme cluster; "
                    "rerun alignment with word/phone occurrence tracking")
            g = normalize_cluster(clusters[k])
        counts[(pair.source, g, pair.target)] += 1
    if too_long:
        log.warning("%d associations longer than %d phones discarded", too_long, max_len)
    return counts


def normalize_cluster(text):
    from .g2p import normalize_spelling
    return normalize_spelling(text)


def rules_from_counts(counts, min_count=10, top_k=3, min_rel_freq=0.1, renormalize=True):
    """Threshold and normalise per (source, grapheme) key."""
    by_key = {}
    for (src, g, tgt), c in counts.items():
        by_key.setdefault((src, g), []).append((tgt, c))
    rules = []
    for (src, g), items in by_key.items():
        total = sum(c for _, c in items)
        kept = [(t, c) for t, c in items if t and c >= min_count and c / total >= min_rel_freq]
        kept.sort(key=lambda tc: (-tc[1], len(tc[0]), tc[0]))
        kept = kept[:top_k]
        if not kept:
            continue
        denom = sum(c for _, c in kept) if renormalize else total
        rules.extend(ConfusionRule(src, t, c / denom, c, g) for t, c in kept)
    return sort_rules(rules)


def sort_rules(rules):
    return sorted(rules, key=lambda r: (r.source, r.grapheme, -r.count, len(r.targets), r.targets))


def extract_rules(pairs, min_count=10, top_k=3, min_rel_freq=0.1, keep_deletions=False, renormalize=True,
                  max_len=MAX_RULE_LEN):
    """Most frequent L1 realisations of each L2 phone, as probability-weighted rules."""
    counts = count_associations(pairs, keep_deletions=keep_deletions, max_len=max_len)
    return rules_from_counts(counts, min_count, top_k, min_rel_freq, renormalize)


def format_rules(rules):
    lines = []
    for r in sort_rules(rules):
        key = f"{r.source}/{r.grapheme}" if r.grapheme else r.source
        lines.append(f"{key} -> {' '.join(r.targets)}\t{r.probability!r}\t{r.count}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_rules(text):
    rules = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        parts = raw.split("\t")
        if len(parts) != 3 or " -> " not in parts[0]:
            raise FormatError(f"line {lineno}: expected 'SRC[/GRAPHEME] -> targets<TAB>prob<TAB>count'")
        key, _, tgt = parts[0].partition(" -> ")
        src, _, g = key.strip().partition("/")
        targets = tuple(tgt.split())
        if not src or not targets:
            raise FormatError(f"line {lineno}: empty source or target")
        try:
            prob, count = float(parts[1]), int(parts[2])
        except ValueError:
            raise FormatError(f"line {lineno}: bad probability or count") from None
        if not (0 < prob <= 1) or count < 1:
            raise FormatError(f"line {lineno}: probability must lie in (0, 1] and count be >= 1")
        rules.append(ConfusionRule(src, targets, prob, count, g))
    return rules


class ConfusionRuleExtractor(BaseEstimator):
    """``fit(pairs[, clusters])`` -> ``rules_``; clusters switch on grapheme keys."""

    def __init__(self, min_count=10, top_k=3, min_rel_freq=0.1, keep_deletions=False, renormalize=True,
                 max_len=MAX_RULE_LEN):
        self.min_count = min_count
        self.top_k = top_k
        self.min_rel_freq = min_rel_freq
        self.keep_deletions = keep_deletions
        self.renormalize = renormalize
        self.max_len = max_len

    def fit(self, pairs, clusters=None):
        self.counts_ = count_associations(pairs, clusters, self.keep_deletions, self.max_len)
        self.rules_ = rules_from_counts(self.counts_, self.min_count, self.top_k, self.min_rel_freq,
                                        self.renormalize)
        return self

    def transform(self, pairs=None):
        return self.rules_
