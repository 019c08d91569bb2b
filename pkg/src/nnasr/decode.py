"""Forced alignment, phone-loop recognition and grammar-constrained word decoding."""

from dataclasses import dataclass
from typing import Optional

from sklearn.base import BaseEstimator

from .corpus import linear_grammar
from .errors import UsageError
from .labels import Transcription
from .network import EPS, WORD_IN, GraphBuilder
from .validation import check_features, check_log_weight


@dataclass
class DecodeResult:
    words: Optional[list]
    phones: Transcription
    log_score: float
    branches: Optional[list] = None  # per segment, which merged-model branch was taken


def _result(net, frames, beam, with_words):
    score, states, arcs = net.viterbi(frames, beam=beam)
    phones, words = net.segments(states, arcs)
    starts = [s.start for s in phones]
    branches = [net.info[int(states[t])].branch for t in starts]
    return DecodeResult(words if with_words else None, phones, score, branches)


def compile_alignment(phones, model_set, tags=None):
    phones = list(phones)
    if not phones:
        raise UsageError("cannot align an empty phone sequence")
    g = GraphBuilder()
    prev = g.start
    for k, ph in enumerate(phones):
        nxt = g.final if k == len(phones) - 1 else g.add_node(EPS)
        info = {"phone": ph, "tag": k}
        if tags is not None:
            info.update(tags[k])
        g.add_unit(model_set.unit_for(ph, info.get("word"), info.get("variant"), info.get("position")),
                   prev, nxt, info)
        prev = nxt
    return g.compile()


def compile_phone_loop(model_set, phone_penalty=0.0):
    phone_penalty = check_log_weight(phone_penalty, "phone_penalty")
    if len(model_set) == 0:
        raise UsageError("phone recognition needs a non-empty model set")
    g = GraphBuilder()
    loop = g.add_node(EPS)
    g.add_arc(g.start, loop)
    g.add_arc(loop, g.final)
    for ph in model_set.phone_ids:
        g.add_unit(model_set.unit_for(ph), loop, loop, {"phone": ph}, logw=phone_penalty)
    return g.compile()


def compile_grammar(grammar, lexicon, model_set, word_penalty=0.0):
    """Expand grammar arcs through the lexicon into phone units."""
    word_penalty = check_log_weight(word_penalty, "word_penalty") + check_log_weight(
        grammar.word_penalty, "grammar word penalty")
    for w in grammar.words:
        if w not in lexicon:
            raise UsageError(f"grammar word {w!r} is missing from the lexicon")
    g = GraphBuilder()
    node = {s: g.add_node(EPS) for s in sorted(grammar.states)}
    g.add_arc(g.start, node[grammar.start])
    for f in sorted(grammar.finals):
        g.add_arc(node[f], g.final)
    for a, b, word in grammar.arcs:
        if word is None:
            g.add_arc(node[a], node[b])
            continue
        entry = g.add_node(WORD_IN)
        g.add_arc(node[a], entry, word_penalty)
        for v, pron in enumerate(lexicon[word]):
            prev = entry
            for pos, ph in enumerate(pron):
                nxt = node[b] if pos == len(pron) - 1 else g.add_node(EPS)
                info = {"phone": ph, "word": word, "position": pos, "variant": v}
                g.add_unit(model_set.unit_for(ph, word, v, pos), prev, nxt, info)
                prev = nxt
    return g.compile()


def viterbi_align(features, phones, model_set, beam=None):
    """Best state path through the concatenated models of ``phones``."""
    frames = check_features(features, model_set.dim)
    return _result(compile_alignment(phones, model_set), frames, beam, with_words=False)


def phone_recognize(features, model_set, phone_penalty=0.0, beam=None):
    frames = check_features(features, model_set.dim)
    return _result(compile_phone_loop(model_set, phone_penalty), frames, beam, with_words=False)


def grammar_decode(features, grammar, lexicon, model_set, word_penalty=0.0, beam=None):
    frames = check_features(features, model_set.dim)
    return _result(compile_grammar(grammar, lexicon, model_set, word_penalty), frames, beam, with_words=True)


def align_words(features, words, lexicon, model_set, beam=None):
    """Forced alignment to a word transcript, choosing the best pronunciation variant.

    Segments carry word index, position and variant for grapheme lookup.
    """
    return grammar_decode(features, linear_grammar(words), lexicon, model_set, beam=beam)


class GrammarDecoder(BaseEstimator):
    """Grammar decoding as an estimator: the graph is compiled once in ``fit``."""

    def __init__(self, model_set=None, grammar=None, lexicon=None, word_penalty=0.0, beam=None):
        self.model_set = model_set
        self.grammar = grammar
        self.lexicon = lexicon
        self.word_penalty = word_penalty
        self.beam = beam

    def fit(self, X=None, y=None):
        self.network_ = compile_grammar(self.grammar, self.lexicon, self.model_set, self.word_penalty)
        return self

    def decode(self, features):
        if not hasattr(self, "network_"):
            self.fit()
        frames = check_features(features, self.model_set.dim)
        return _result(self.network_, frames, self.beam, with_words=True)

    def predict(self, X):
        return [self.decode(x).words for x in X]


class PhoneRecognizer(BaseEstimator):
    def __init__(self, model_set=None, phone_penalty=0.0, beam=None):
        self.model_set = model_set
        self.phone_penalty = phone_penalty
        self.beam = beam

    def fit(self, X=None, y=None):
        self.network_ = compile_phone_loop(self.model_set, self.phone_penalty)
        return self

    def decode(self, features):
        if not hasattr(self, "network_"):
            self.fit()
        frames = check_features(features, self.model_set.dim)
        return _result(self.network_, frames, self.beam, with_words=False)

    def predict(self, X):
        return [self.decode(x).phones for x in X]
