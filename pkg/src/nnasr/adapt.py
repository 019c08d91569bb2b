"""Merged phone models: the canonical L2 path plus weighted L1 alternative paths.

A merged model branches at a shared non-emitting entry into the native phone
model (weight ``beta``) and one concatenation of L1 phone models per confusion
rule (weight ``(1 - beta) * p_rule``); all branches rejoin at a shared exit.
Constituent models keep their own transition structure untouched.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

from .confuse import ConfusionRule
from .errors import FormatError, PhoneLookupError, UsageError
from .model import Lang, ModelSet
from .modelio import model_set_from_dict, phone_to_dict
from .validation import check_beta


@dataclass
class MergedPhoneHmm:
    native: object  # PhoneHmm
    alternatives: list  # [(ConfusionRule, [PhoneHmm, ...])]
    native_weight: float
    grapheme: str = ""

    @property
    def phone(self):
        return self.native.phone

    def entry_weights(self):
        """Linear entry weights: native first, then one per alternative.

        Rule probabilities summing to less than 1 (no renormalisation) leave
        their residual share of ``1 - beta`` on the native path.
        """
        rest = 1.0 - self.native_weight
        alts = [rest * r.probability for r, _ in self.alternatives]
        native = self.native_weight
        residual = 1.0 - sum(r.probability for r, _ in self.alternatives)
        if alts and residual > 1e-12:
            native += rest * residual
        return [native] + alts

    def branches(self):
        """``[(log_weight, [PhoneHmm, ...])]`` with zero-weight branches dropped."""
        out = []
        for w, chain in zip(self.entry_weights(), [[self.native]] + [c for _, c in self.alternatives]):
            if w > 0:
                out.append((math.log(w), chain))
        return out


def build_merged(native, rules, l1, beta=0.5, grapheme=""):
    """Attach one alternative path per rule to ``native``."""
    beta = check_beta(beta)
    rules = list(rules)
    total = sum(r.probability for r in rules)
    if total > 1 + 1e-9:
        raise UsageError(f"rule probabilities for {native.id} sum to {total}, more than 1")
    alternatives = []
    for r in rules:
        try:
            chain = [l1[p] for p in r.targets]
        except PhoneLookupError as exc:
            raise PhoneLookupError(f"rule {r.source} -> {' '.join(r.targets)}: {exc}") from None
        alternatives.append((r, chain))
    return MergedPhoneHmm(native, alternatives, beta, grapheme)


@dataclass
class AdaptedModelSet:
    """L2 set whose phone occurrences resolve to merged models.

    ``merged`` is keyed by ``(phone, grapheme)`` with "" for the unconstrained
    entry; ``bindings`` maps ``(word, variant, position)`` to the grapheme key
    chosen for that lexicon occurrence.
    """

    l2: ModelSet
    l1: Optional[ModelSet]
    merged: dict
    beta: float
    bindings: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.l2.dim

    @property
    def phone_ids(self):
        return self.l2.phone_ids

    def __len__(self):
        return len(self.l2)

    def __contains__(self, phone_id):
        return phone_id in self.l2

    def __getitem__(self, phone_id):
        return self.l2[phone_id]

    def __iter__(self):
        return iter(self.l2)

    @property
    def base(self):
        return self.l2

    def merged_for(self, phone_id, word=None, variant=None, position=None):
        key = ""
        if word is not None:
            key = self.bindings.get((word, variant, position), "")
        m = self.merged.get((phone_id, key))
        if m is None:
            m = self.merged.get((phone_id, ""))
        return m

    def unit_for(self, phone_id, word=None, variant=None, position=None):
        m = self.merged_for(phone_id, word, variant, position)
        if m is None:
            return [(0.0, [self.l2[phone_id]])]
        return m.branches()

    def rules(self):
        return [r for m in self.merged.values() for r, _ in m.alternatives]

    def to_dict(self):
        phones = [phone_to_dict(m) for m in self.l2]
        if self.l1 is not None:
            phones += [phone_to_dict(m) for m in self.l1]
        merged = []
        for (ph, g), m in sorted(self.merged.items()):
            merged.append({
                "phone": ph, "grapheme": g, "native": m.native.id, "beta": m.native_weight,
                "branches": [{"targets": list(r.targets), "prob": r.probability, "count": r.count,
                              "weight": w}
                             for (r, _), w in zip(m.alternatives, m.entry_weights()[1:])],
            })
        bindings = [{"word": w, "variant": v, "position": p, "grapheme": g}
                    for (w, v, p), g in sorted(self.bindings.items())]
        return {"dim": self.dim, "phones": phones, "beta": self.beta, "merged": merged, "bindings": bindings}

    @classmethod
    def from_dict(cls, data, var_floor=None):
        kw = {} if var_floor is None else {"var_floor": var_floor}
        full = model_set_from_dict(data, **kw)
        l2 = ModelSet([m for m in full if m.phone.lang == Lang.L2], dim=full.dim)
        l1_models = [m for m in full if m.phone.lang == Lang.L1]
        l1 = ModelSet(l1_models, dim=full.dim) if l1_models else None
        merged = {}
        for k, entry in enumerate(data.get("merged", [])):
            try:
                ph, g = entry["phone"], entry.get("grapheme", "")
                rules = [ConfusionRule(ph, tuple(b["targets"]), float(b["prob"]), int(b.get("count", 1)), g)
                         for b in entry["branches"]]
                merged[(ph, g)] = build_merged(l2[entry["native"]], rules, l1, float(entry["beta"]), g)
            except (KeyError, TypeError) as exc:
                raise FormatError(f"merged[{k}]: malformed entry ({exc})") from None
        bindings = {(b["word"], b["variant"], b["position"]): b["grapheme"] for b in data.get("bindings", [])}
        return cls(l2, l1, merged, float(data.get("beta", 1.0)), bindings)


def compile_adapted_set(l2, l1, rules, beta=0.5, g2p=None, lexicon=None):
    """Build merged models for every (phone, grapheme) key present in ``rules``.

    Phones without retained rules get a native-only wrapper that leaves scores
    unchanged. With grapheme-keyed rules, each lexicon pronunciation is aligned
    to its spelling and every phone occurrence bound to the matching key.
    """
    beta = check_beta(beta)
    rules = list(rules)
    if l1 is not None:
        shared = sorted(set(l2.phone_ids) & set(l1.phone_ids))
        if shared:
            raise UsageError(f"L1 and L2 phone ids must be distinct; shared: {', '.join(shared)}")
    keyed = {}
    for r in rules:
        if r.source not in l2:
            raise PhoneLookupError(f"rule source {r.source!r} is not an L2 phone")
        keyed.setdefault((r.source, r.grapheme), []).append(r)
    uses_graphemes = any(g for _, g in keyed)
    if uses_graphemes and (g2p is None or lexicon is None):
        raise UsageError("grapheme-keyed rules need both a g2p model and a lexicon")
    merged = {}
    for m in l2:
        if (m.id, "") not in keyed:
            merged[(m.id, "")] = build_merged(m, [], l1, 1.0)
    for (ph, g), group in keyed.items():
        merged[(ph, g)] = build_merged(l2[ph], group, l1, beta, g)
    bindings = {}
    if uses_graphemes:
        from .g2p import lexicon_clusters
        for (word, v), clusters in lexicon_clusters(g2p, lexicon).items():
            for pos, (ph, c) in enumerate(zip(lexicon[word][v], clusters)):
                if c and (ph, c) in merged:
                    bindings[(word, v, pos)] = c
    return AdaptedModelSet(l2, l1, merged, beta, bindings)
