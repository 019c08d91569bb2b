"""Lexicons, finite-state grammars, corpus manifests and the synthetic corpus generator."""

import json
import logging
import os
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import FormatError, PhoneLookupError, UsageError
from .labels import Segment, Transcription, format_labels, parse_labels  # noqa: F401  (re-exported)
from .model import sample_models
from .modelio import atomic_write, dumps, read_features, read_json, write_features
from .validation import check_log_weight

log = logging.getLogger(__name__)

_WORD_RE = re.compile(r"^[\w'.\-]+$")
EPSILON = "<eps>"


# ---------------------------------------------------------------------------
# lexicon

class Lexicon:
    """Word -> ordered list of pronunciation variants (tuples of L2 phone ids)."""

    def __init__(self, entries=None):
        self.entries = {}
        for word, prons in (entries or {}).items():
            for pron in prons:
                self.add(word, pron)

    def add(self, word, pron):
        pron = tuple(pron)
        if not pron:
            raise FormatError(f"word {word!r}: empty pronunciation")
        variants = self.entries.setdefault(word, [])
        if pron not in variants:
            variants.append(pron)

    def __getitem__(self, word):
        try:
            return self.entries[word]
        except KeyError:
            raise UsageError(f"word {word!r} is missing from the lexicon") from None

    def __contains__(self, word):
        return word in self.entries

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        return isinstance(other, Lexicon) and self.entries == other.entries

    def phones(self):
        return sorted({p for prons in self.entries.values() for pron in prons for p in pron})

    def check_phones(self, model_set):
        for word, prons in self.entries.items():
            for pron in prons:
                for p in pron:
                    if p not in model_set:
                        raise PhoneLookupError(f"word {word!r} uses phone {p!r} missing from the model set")


def parse_lexicon(text):
    lex = Lexicon()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if "\t" not in line:
            raise FormatError(f"line {lineno}: expected 'WORD<TAB>phones'")
        word, _, phones = line.partition("\t")
        word = word.strip()
        if not word or not _WORD_RE.match(word):
            raise FormatError(f"line {lineno}: invalid characters in word {word!r}")
        pron = phones.split()
        if not pron:
            raise FormatError(f"line {lineno}: empty pronunciation for {word!r}")
        lex.add(word, pron)
    return lex


def format_lexicon(lexicon):
    return "".join(f"{w}\t{' '.join(p)}\n" for w, prons in lexicon.entries.items() for p in prons)


# ---------------------------------------------------------------------------
# grammar

@dataclass
class Grammar:
    """Finite-state word grammar; arcs carry one word or ``None`` (epsilon).

    ``word_penalty`` is a log-domain cost the decoder adds per word arc taken.
    """

    states: set
    start: int
    finals: set
    arcs: list
    word_penalty: float = 0.0

    def __post_init__(self):
        self.states = set(self.states)
        self.finals = set(self.finals)
        self.arcs = [(int(a), int(b), w) for a, b, w in self.arcs]
        if self.start not in self.states:
            raise FormatError(f"start state {self.start} is not declared")
        if not self.finals:
            raise FormatError("grammar has no final state")
        for f in self.finals:
            if f not in self.states:
                raise FormatError(f"final state {f} is not declared")
        for a, b, _ in self.arcs:
            if a not in self.states or b not in self.states:
                raise FormatError(f"arc {a} -> {b} uses an undeclared state")
        if not (self.coaccessible() & self.reachable()):
            raise UsageError("no final state is reachable from the start state")

    @property
    def words(self):
        return sorted({w for _, _, w in self.arcs if w is not None})

    def reachable(self):
        seen, todo = {self.start}, [self.start]
        while todo:
            s = todo.pop()
            for a, b, _ in self.arcs:
                if a == s and b not in seen:
                    seen.add(b)
                    todo.append(b)
        return seen

    def coaccessible(self):
        seen, todo = set(self.finals), list(self.finals)
        while todo:
            s = todo.pop()
            for a, b, _ in self.arcs:
                if b == s and a not in seen:
                    seen.add(a)
                    todo.append(a)
        return seen

    def _closure(self, states):
        out, todo = set(states), list(states)
        while todo:
            s = todo.pop()
            for a, b, w in self.arcs:
                if a == s and w is None and b not in out:
                    out.add(b)
                    todo.append(b)
        return out

    def accepts(self, words):
        cur = self._closure({self.start})
        for word in words:
            cur = self._closure({b for a, b, w in self.arcs if a in cur and w == word})
            if not cur:
                return False
        return bool(cur & self.finals)

    def sample(self, rng, max_words=50):
        """Uniform walk over arcs that can still reach a final state.

        At a final state the walk stops with probability 0.5.
        """
        live = self.coaccessible()
        state, words = self.start, []
        for _ in range(100 * max_words):
            choices = [(b, w) for a, b, w in self.arcs if a == state and b in live]
            if state in self.finals and (not choices or rng.random() < 0.5):
                return words
            b, w = choices[int(rng.integers(len(choices)))]
            if w is not None:
                words.append(w)
                if len(words) > max_words:
                    break
            state = b
        raise UsageError(f"grammar sampler exceeded {max_words} words without stopping")


def build_word_loop(words, loop_penalty=0.0):
    """Free grammar: state 0 loops on every word, epsilon to final state 1."""
    words = list(dict.fromkeys(words))
    if not words:
        raise UsageError("word loop needs at least one word")
    loop_penalty = check_log_weight(loop_penalty, "loop_penalty")
    arcs = [(0, 0, w) for w in words] + [(0, 1, None)]
    return Grammar({0, 1}, 0, {1}, arcs, word_penalty=loop_penalty)


def linear_grammar(words):
    """Grammar accepting exactly the given word sequence."""
    words = list(words)
    if not words:
        raise UsageError("linear grammar needs at least one word")
    arcs = [(i, i + 1, w) for i, w in enumerate(words)]
    return Grammar(set(range(len(words) + 1)), 0, {len(words)}, arcs)


def parse_grammar(text):
    states, finals, arcs = set(), set(), []
    start, penalty = None, 0.0
    for lineno, raw in enumerate(text.splitlines(), 1):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "state" and len(parts) == 2:
                states.add(int(parts[1]))
            elif parts[0] == "start" and len(parts) == 2:
                start = int(parts[1])
            elif parts[0] == "final" and len(parts) == 2:
                finals.add(int(parts[1]))
            elif parts[0] == "arc" and len(parts) == 4:
                word = None if parts[3] == EPSILON else parts[3]
                if word is not None and not _WORD_RE.match(word):
                    raise FormatError(f"line {lineno}: invalid word {word!r}")
                arcs.append((int(parts[1]), int(parts[2]), word))
            elif parts[0] == "penalty" and len(parts) == 2:
                penalty = float(parts[1])
            else:
                raise FormatError(f"line {lineno}: unrecognised grammar line {raw!r}")
        except ValueError:
            raise FormatError(f"line {lineno}: expected integer state ids in {raw!r}") from None
    if start is None:
        raise FormatError("grammar has no 'start' line")
    return Grammar(states, start, finals, arcs, word_penalty=penalty)


def format_grammar(grammar):
    lines = [f"state {s}" for s in sorted(grammar.states)]
    lines.append(f"start {grammar.start}")
    lines.extend(f"final {f}" for f in sorted(grammar.finals))
    lines.extend(f"arc {a} {b} {EPSILON if w is None else w}" for a, b, w in grammar.arcs)
    if grammar.word_penalty:
        lines.append(f"penalty {grammar.word_penalty!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# corpus

@dataclass(frozen=True)
class PlantedRuleSpec:
    """Ground-truth replacement of an L2 phone by L1 sequences.

    ``targets`` is a list of (L1 phone sequence, probability); leftover mass
    keeps the canonical pronunciation. ``grapheme`` restricts the rule to
    occurrences aligned to that spelling cluster.
    """

    source: str
    targets: tuple
    grapheme: Optional[str] = None
    max_rule_len: int = 4

    def __post_init__(self):
        targets = tuple((tuple(seq), float(p)) for seq, p in self.targets)
        object.__setattr__(self, "targets", targets)
        total = sum(p for _, p in targets)
        if any(p < 0 for _, p in targets) or total > 1 + 1e-9:
            raise UsageError(f"rule {self.source}: target probabilities must be >= 0 and sum to <= 1")
        for seq, _ in targets:
            if not 1 <= len(seq) <= self.max_rule_len:
                raise UsageError(f"rule {self.source}: target length must be in [1, {self.max_rule_len}]")


@dataclass
class Utterance:
    id: str
    features: np.ndarray
    words: list
    speaker: str = "spk0"
    phones: list = field(default_factory=list)  # canonical L2 phones
    variants: list = field(default_factory=list)
    segments: Optional[Transcription] = None  # realised phones, true boundaries
    l2_segments: Optional[Transcription] = None  # canonical occurrences, true spans
    replacements: list = field(default_factory=list)
    feature_path: Optional[str] = None


@dataclass
class Corpus:
    utterances: list
    speakers: dict = field(default_factory=dict)  # speaker -> metadata
    rules: list = field(default_factory=list)
    seed: Optional[int] = None

    def __len__(self):
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def speaker_ids(self):
        return list(dict.fromkeys(u.speaker for u in self.utterances))

    def by_speaker(self, speaker):
        return [u for u in self.utterances if u.speaker == speaker]

    def fire_counts(self):
        """(source, grapheme, target) -> [fired, occurrences-eligible]."""
        counts = {}
        for u in self.utterances:
            for r in u.replacements:
                if r.get("eligible"):
                    key = (r["source"], r.get("grapheme"))
                    counts.setdefault(key, {"occurrences": 0})
                    counts[key]["occurrences"] += 1
                    if r["target"] is not None:
                        t = tuple(r["target"])
                        counts[key][t] = counts[key].get(t, 0) + 1
        return counts


def _utterance_rng(seed, index, stream=0):
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream, int(index)]))


def _match_rule(specs, phone, cluster):
    best = None
    for spec in specs:
        if spec.source != phone:
            continue
        if spec.grapheme is not None:
            if cluster is not None and spec.grapheme == cluster:
                return spec
        elif best is None:
            best = spec
    return best


def synth_corpus(l2, l1, lexicon, grammar, rules=(), n_utts=10, seed=0, out_dir=None,
                 n_speakers=1, speaker_shift=0.0, g2p=None, clusters=None, max_words=20):
    """Generate a non-native corpus with planted confusion rules.

    Each utterance: sample words from ``grammar``, pick a pronunciation per word
    uniformly, replace every occurrence of a rule's source phone independently
    with a target L1 sequence at the planted probability, then sample frames.
    Speaker ``k`` adds a fixed random offset of norm ``speaker_shift`` to all its
    frames. Grapheme-conditional rules need ``g2p`` (or a precomputed
    ``clusters`` map ``(word, variant) -> [cluster per phone]``).

    Writes FEAT1 files plus ``manifest.json`` under ``out_dir`` when given.
    """
    rules = list(rules)
    for spec in rules:
        if spec.source not in l2:
            raise PhoneLookupError(f"rule source {spec.source!r} is not an L2 phone")
        for seq, _ in spec.targets:
            for p in seq:
                if p not in l1:
                    raise PhoneLookupError(f"rule target {p!r} is not an L1 phone")
    if not (grammar.reachable() & grammar.finals):
        raise UsageError("grammar cannot reach a final state")
    for w in grammar.words:
        lexicon[w]
    lexicon.check_phones(l2)
    need_graphemes = any(s.grapheme is not None for s in rules)
    if need_graphemes and clusters is None:
        if g2p is None:
            raise UsageError("grapheme-conditional rules need a g2p model or explicit clusters")
        from .g2p import lexicon_clusters
        clusters = lexicon_clusters(g2p, lexicon)
    if n_speakers < 1 or n_utts < 1:
        raise UsageError("n_utts and n_speakers must be positive")

    speakers = {}
    for k in range(n_speakers):
        rng = _utterance_rng(seed, k, stream=1)
        v = rng.standard_normal(l2.dim)
        shift = speaker_shift * v / np.linalg.norm(v) if speaker_shift else np.zeros(l2.dim)
        speakers[f"spk{k}"] = {"shift": [float(x) for x in shift]}

    utts = []
    for i in range(n_utts):
        rng = _utterance_rng(seed, i)
        spk = f"spk{i * n_speakers // n_utts}"
        words = []
        for _ in range(100):
            words = grammar.sample(rng, max_words=max_words)
            if words:
                break
        if not words:
            raise UsageError("grammar keeps producing empty sentences")
        variants = [int(rng.integers(len(lexicon[w]))) for w in words]
        canon, realised, labels, owner, reps = [], [], [], [], []
        for wi, (w, v) in enumerate(zip(words, variants)):
            pron = lexicon[w][v]
            word_clusters = clusters.get((w, v)) if clusters is not None else None
            for pos, ph in enumerate(pron):
                idx = len(canon)
                canon.append((ph, wi, pos, v))
                cluster = word_clusters[pos] if word_clusters is not None else None
                spec = _match_rule(rules, ph, cluster)
                target = None
                if spec is not None:
                    u = rng.random()
                    acc = 0.0
                    for seq, p in spec.targets:
                        acc += p
                        if u < acc:
                            target = seq
                            break
                    reps.append({"index": idx, "source": ph, "grapheme": spec.grapheme, "cluster": cluster,
                                 "eligible": True, "target": None if target is None else list(target)})
                if target is None:
                    realised.append(l2[ph])
                    labels.append(ph)
                    owner.append(idx)
                else:
                    for t in target:
                        realised.append(l1[t])
                        labels.append(t)
                        owner.append(idx)
        frames, segs = sample_models(realised, rng, labels=labels)
        frames = frames + np.asarray(speakers[spk]["shift"])
        l2_segs = []
        for idx, (ph, wi, pos, v) in enumerate(canon):
            mine = [s for s, o in zip(segs, owner) if o == idx]
            l2_segs.append(Segment(ph, mine[0].start, mine[-1].end, wi, pos, v))
        utts.append(Utterance(
            id=f"utt{i:05d}", features=frames, words=words, speaker=spk,
            phones=[c[0] for c in canon], variants=variants, segments=segs,
            l2_segments=Transcription(l2_segs), replacements=reps))
    corpus = Corpus(utts, speakers, rules=[_rule_to_dict(r) for r in rules], seed=seed)
    if out_dir is not None:
        write_corpus(corpus, out_dir)
    return corpus


def _rule_to_dict(spec):
    return {"source": spec.source, "grapheme": spec.grapheme,
            "targets": [[list(seq), p] for seq, p in spec.targets]}


def _seg_rows(transcription, extended=False):
    if transcription is None:
        return None
    if extended:
        return [[s.start, s.end, s.phone, s.word_index, s.position, s.variant] for s in transcription]
    return [[s.start, s.end, s.phone] for s in transcription]


def _rows_to_segs(rows):
    if rows is None:
        return None
    return Transcription(Segment(r[2], int(r[0]), int(r[1]), *r[3:6]) for r in rows)


def corpus_to_manifest(corpus, feature_paths):
    return {
        "version": 1,
        "seed": corpus.seed,
        "speakers": corpus.speakers,
        "rules": corpus.rules,
        "utterances": [
            {
                "id": u.id,
                "speaker": u.speaker,
                "features": path,
                "words": u.words,
                "variants": u.variants,
                "phones": u.phones,
                "segments": _seg_rows(u.segments),
                "l2_segments": _seg_rows(u.l2_segments, extended=True),
                "replacements": u.replacements,
            }
            for u, path in zip(corpus.utterances, feature_paths)
        ],
    }


def write_corpus(corpus, out_dir):
    os.makedirs(os.path.join(out_dir, "feats"), exist_ok=True)
    paths = []
    for u in corpus.utterances:
        rel = os.path.join("feats", f"{u.id}.feat")
        write_features(u.features, os.path.join(out_dir, rel))
        u.feature_path = rel
        paths.append(rel)
    atomic_write(os.path.join(out_dir, "manifest.json"), dumps(corpus_to_manifest(corpus, paths)))
    return os.path.join(out_dir, "manifest.json")


def load_manifest(path):
    data = read_json(path)
    if not isinstance(data, dict) or not isinstance(data.get("utterances"), list):
        raise FormatError(f"{path}: expected a manifest object with 'utterances'")
    base = os.path.dirname(os.path.abspath(path))
    utts = []
    for k, entry in enumerate(data["utterances"]):
        try:
            feat = entry["features"]
            frames = read_features(feat if os.path.isabs(feat) else os.path.join(base, feat))
            utts.append(Utterance(
                id=entry["id"], features=frames, words=list(entry.get("words", [])),
                speaker=entry.get("speaker", "spk0"), phones=list(entry.get("phones", [])),
                variants=list(entry.get("variants", [])),
                segments=_rows_to_segs(entry.get("segments")),
                l2_segments=_rows_to_segs(entry.get("l2_segments")),
                replacements=list(entry.get("replacements", [])), feature_path=feat))
        except (KeyError, TypeError, IndexError) as exc:
            raise FormatError(f"{path}: utterances[{k}]: malformed entry ({exc})") from None
    return Corpus(utts, data.get("speakers", {}), data.get("rules", []), data.get("seed"))


def read_text(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def load_lexicon(path):
    try:
        return parse_lexicon(read_text(path))
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


def load_grammar(path):
    try:
        return parse_grammar(read_text(path))
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


def planted_rules_from_json(data):
    return [PlantedRuleSpec(r["source"], [(tuple(t), p) for t, p in r["targets"]], r.get("grapheme"))
            for r in data]


def dump_planted_rules(rules):
    return json.dumps([_rule_to_dict(r) for r in rules], indent=1)
