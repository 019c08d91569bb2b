"""Discrete-HMM alignment of pronunciations to spellings, and grapheme-keyed confusion rules.

Each word is a left-right chain whose states are the pronounced phones and
whose observations are the letters. A phone state either is skipped (emits no
letter, probability ``skip``) or emits one letter and then keeps emitting with
probability ``stay`` before handing over to the next phone. Emission, stay and
skip parameters are tied across words and trained by EM on a dictionary.
"""

import logging
import unicodedata
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator

from .confuse import count_associations, rules_from_counts
from .errors import AlignmentInfeasibleError, FormatError, PhoneLookupError, UsageError
from .modelio import atomic_write, dumps, read_json

log = logging.getLogger(__name__)


def normalize_spelling(text):
    """Lowercase, strip accents, keep alphabetic characters only."""
    decomposed = unicodedata.normalize("NFKD", text)
    return "".join(c for c in decomposed if not unicodedata.combining(c) and c.isalpha()).lower()


class G2PModel:
    def __init__(self, phones, alphabet, emission, stay, skip):
        self.phones = list(phones)
        self.alphabet = list(alphabet)
        self.emission = np.asarray(emission, dtype=np.float64)
        self.stay = np.asarray(stay, dtype=np.float64)
        self.skip = np.asarray(skip, dtype=np.float64)
        P, A = len(self.phones), len(self.alphabet)
        if self.emission.shape != (P, A) or self.stay.shape != (P,) or self.skip.shape != (P,):
            raise FormatError("g2p model tables have inconsistent shapes")
        if np.any(self.emission < 0) or np.any(np.abs(self.emission.sum(axis=1) - 1) > 1e-6):
            raise FormatError("g2p emission rows must be distributions")
        if np.any((self.stay < 0) | (self.stay >= 1)) or np.any((self.skip < 0) | (self.skip >= 1)):
            raise FormatError("g2p stay and skip must lie in [0, 1)")
        self.phone_index = {p: i for i, p in enumerate(self.phones)}
        self.char_index = {c: i for i, c in enumerate(self.alphabet)}

    def emission_prob(self, phone, char):
        return float(self.emission[self.phone_index[phone], self.char_index[char]])

    def to_dict(self):
        return {
            "alphabet": self.alphabet,
            "emission": {p: {c: float(self.emission[i, j]) for j, c in enumerate(self.alphabet)}
                         for i, p in enumerate(self.phones)},
            "stay": {p: float(v) for p, v in zip(self.phones, self.stay)},
            "skip": {p: float(v) for p, v in zip(self.phones, self.skip)},
        }

    @classmethod
    def from_dict(cls, data):
        try:
            alphabet = list(data["alphabet"])
            phones = list(data["emission"])
            emission = [[data["emission"][p][c] for c in alphabet] for p in phones]
            stay = [data["stay"][p] for p in phones]
            skip = [data["skip"][p] for p in phones]
        except (KeyError, TypeError) as exc:
            raise FormatError(f"g2p model: missing table entry {exc}") from None
        return cls(phones, alphabet, emission, stay, skip)

    def save(self, path):
        atomic_write(path, dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(read_json(path))


@dataclass(frozen=True)
class GraphemeAlignment:
    spelling: str
    phones: tuple
    clusters: tuple

    def __iter__(self):
        return iter(zip(self.phones, self.clusters))

    def __getitem__(self, i):
        return self.clusters[i]


def _encode(model, spelling, pron):
    try:
        chars = np.array([model.char_index[c] for c in spelling], dtype=np.intp)
    except KeyError as exc:
        raise PhoneLookupError(f"character {exc.args[0]!r} is not in the g2p alphabet") from None
    try:
        phones = np.array([model.phone_index[p] for p in pron], dtype=np.intp)
    except KeyError as exc:
        raise PhoneLookupError(f"phone {exc.args[0]!r} is unknown to the g2p model") from None
    return chars, phones


def _segment_scores(model, chars, phones):
    """``seg[i, j, k]``: log prob that phone i covers letters [j, k) (-inf for k < j)."""
    n, K = chars.size, phones.size
    with np.errstate(divide="ignore"):
        log_e = np.log(model.emission)
        log_stay = np.log(model.stay)
        log_go = np.log1p(-model.stay)
        log_skip = np.log(model.skip)
        log_enter = np.log1p(-model.skip)
    seg = np.full((K, n + 1, n + 1), -np.inf)
    for i, p in enumerate(phones):
        e = log_e[p, chars]
        for j in range(n):
            # prefix sums from j; zero-probability letters make later entries -inf
            length = np.arange(1, n - j + 1)
            stays = log_stay[p] * (length - 1) if log_stay[p] > -np.inf else np.where(length > 1, -np.inf, 0.0)
            seg[i, j, j + 1:] = log_enter[p] + np.cumsum(e[j:]) + stays + log_go[p]
        np.fill_diagonal(seg[i], log_skip[p])
    return seg


def _forward_backward(seg):
    K, n1, _ = seg.shape
    alpha = np.full((K + 1, n1), -np.inf)
    alpha[0, 0] = 0.0
    for i in range(K):
        alpha[i + 1] = logsumexp(alpha[i][:, None] + seg[i], axis=0)
    beta = np.full((K + 1, n1), -np.inf)
    beta[K, n1 - 1] = 0.0
    for i in range(K - 1, -1, -1):
        beta[i] = logsumexp(seg[i] + beta[i + 1][None, :], axis=1)
    return alpha, beta, float(alpha[K, n1 - 1])


def word_log_likelihood(model, spelling, pron):
    chars, phones = _encode(model, normalize_spelling(spelling), pron)
    return _forward_backward(_segment_scores(model, chars, phones))[2]


def init_g2p(phones, alphabet, stay=0.3, skip=0.05, noise=1e-3, seed=0):
    rng = np.random.default_rng(seed)
    P, A = len(phones), len(alphabet)
    em = np.full((P, A), 1.0 / A) + noise * rng.uniform(-1.0, 1.0, size=(P, A)) / A
    em /= em.sum(axis=1, keepdims=True)
    return G2PModel(phones, alphabet, em, np.full(P, stay), np.full(P, skip))


def _prepare(dictionary):
    words = []
    for spelling, pron in dictionary:
        norm = normalize_spelling(spelling)
        pron = tuple(pron)
        if not norm or not pron:
            raise UsageError(f"dictionary entry {spelling!r}: empty spelling or pronunciation")
        words.append((norm, pron))
    return words


def train_g2p(dictionary, n_iters=10, stay=0.3, skip=0.05, seed=0, model=None, skipped=None):
    """EM training on ``[(spelling, phones), ...]``.

    Returns the model and the total dictionary log-likelihood measured in each
    iteration's E-step.
    """
    words = _prepare(dictionary)
    if model is None:
        phones = sorted({p for _, pron in words for p in pron})
        alphabet = sorted({c for w, _ in words for c in w})
        model = init_g2p(phones, alphabet, stay, skip, seed=seed)
    encoded = [(w, pron) + _encode(model, w, pron) for w, pron in words]
    history = []
    for it in range(n_iters):
        P, A = model.emission.shape
        em_c = np.zeros((P, A))
        stay_c, stop_c = np.zeros(P), np.zeros(P)
        skip_c, enter_c = np.zeros(P), np.zeros(P)
        total = 0.0
        for spelling, pron, chars, phones in encoded:
            seg = _segment_scores(model, chars, phones)
            alpha, beta, ll = _forward_backward(seg)
            if not np.isfinite(ll):
                if it == 0:
                    msg = f"word {spelling!r} /{' '.join(pron)}/ cannot be aligned; skipped"
                    log.warning(msg)
                    if skipped is not None:
                        skipped.append(msg)
                continue
            total += ll
            n = chars.size
            for i, p in enumerate(phones):
                post = np.exp(alpha[i][:, None] + seg[i] + beta[i + 1][None, :] - ll)
                skip_p = np.trace(post)
                np.fill_diagonal(post, 0.0)
                nonskip = post.sum()
                skip_c[p] += skip_p
                enter_c[p] += nonskip
                stop_c[p] += nonskip
                lengths = np.arange(n + 1)[None, :] - np.arange(n + 1)[:, None]
                stay_c[p] += (post * np.maximum(lengths - 1, 0)).sum()
                if n:
                    # letter m is covered by every segment [j, k) with j <= m < k
                    c = np.cumsum(post, axis=0)
                    r = np.cumsum(c[:, ::-1], axis=1)[:, ::-1]
                    cover = r[np.arange(n), np.arange(1, n + 1)]
                    np.add.at(em_c[p], chars, cover)
        history.append(total)
        emission = model.emission.copy()
        rows = em_c.sum(axis=1) > 0
        emission[rows] = em_c[rows] / em_c[rows].sum(axis=1, keepdims=True)
        stay_new = model.stay.copy()
        ok = (stay_c + stop_c) > 0
        stay_new[ok] = stay_c[ok] / (stay_c[ok] + stop_c[ok])
        skip_new = model.skip.copy()
        ok = (skip_c + enter_c) > 0
        skip_new[ok] = skip_c[ok] / (skip_c[ok] + enter_c[ok])
        model = G2PModel(model.phones, model.alphabet, emission, stay_new, skip_new)
    return model, history


def align_g2p(model, spelling, pron):
    """Viterbi partition of the normalised spelling into one cluster per phone.

    Ties go to the split where earlier phones hand over sooner, and a letter-
    emitting split beats a skip.
    """
    norm = normalize_spelling(spelling)
    pron = tuple(pron)
    chars, phones = _encode(model, norm, pron)
    seg = _segment_scores(model, chars, phones)
    K, n1 = len(phones), len(norm) + 1
    delta = np.full((K + 1, n1), -np.inf)
    back = np.zeros((K + 1, n1), dtype=np.intp)
    delta[0, 0] = 0.0
    for i in range(K):
        for k in range(n1):
            best, arg = -np.inf, -1
            for j in range(k):
                v = delta[i, j] + seg[i, j, k]
                if v > best:
                    best, arg = v, j
            v = delta[i, k] + seg[i, k, k]
            if v > best:
                best, arg = v, k
            delta[i + 1, k], back[i + 1, k] = best, arg
    if not np.isfinite(delta[K, n1 - 1]):
        raise AlignmentInfeasibleError(f"cannot align /{' '.join(pron)}/ to {norm!r}")
    bounds = [n1 - 1]
    for i in range(K, 0, -1):
        bounds.append(back[i, bounds[-1]])
    bounds.reverse()
    clusters = tuple(norm[bounds[i]:bounds[i + 1]] for i in range(K))
    return GraphemeAlignment(norm, pron, clusters)


def lexicon_clusters(model, lexicon):
    """``{(word, variant): [cluster per phone]}``; unalignable entries are left out."""
    out = {}
    for word in lexicon:
        for v, pron in enumerate(lexicon[word]):
            try:
                out[(word, v)] = list(align_g2p(model, word, pron).clusters)
            except (AlignmentInfeasibleError, PhoneLookupError) as exc:
                log.warning("no grapheme alignment for %s: %s", word, exc)
    return out


def format_alignment(word, alignment):
    return f"{word}\t" + " ".join(f"{p}:{c}" for p, c in alignment) + "\n"


def occurrence_clusters(pairs, utterance_words, lexicon, model):
    """Grapheme cluster of each pair's source occurrence, via its word/position trace.

    ``utterance_words`` maps utterance id -> word list. Pairs without occurrence
    tracking yield ``None``.
    """
    cache = {}
    out = []
    for pair in pairs:
        seg = pair.segment
        if seg is None or seg.word_index is None or seg.position is None:
            out.append(None)
            continue
        word = utterance_words[pair.utterance][seg.word_index]
        v = seg.variant or 0
        if (word, v) not in cache:
            try:
                cache[(word, v)] = align_g2p(model, word, lexicon[word][v]).clusters
            except (AlignmentInfeasibleError, PhoneLookupError):
                cache[(word, v)] = None
        clusters = cache[(word, v)]
        out.append("" if clusters is None else clusters[seg.position])
    return out


def graphemic_rules(pairs, clusters, min_count=10, top_k=3, min_rel_freq=0.1, keep_deletions=False,
                    renormalize=True):
    """Confusion rules keyed by (source phone, aligned grapheme cluster).

    An empty cluster falls back to the unconstrained key.
    """
    counts = count_associations(pairs, clusters, keep_deletions=keep_deletions)
    return rules_from_counts(counts, min_count, top_k, min_rel_freq, renormalize)


class G2PAligner(BaseEstimator):
    """``fit(spellings, pronunciations)`` then ``predict`` alignments."""

    def __init__(self, n_iters=10, stay=0.3, skip=0.05, seed=0):
        self.n_iters = n_iters
        self.stay = stay
        self.skip = skip
        self.seed = seed

    def fit(self, X, y):
        self.skipped_ = []
        self.model_, self.log_likelihood_ = train_g2p(list(zip(X, y)), self.n_iters, self.stay, self.skip,
                                                      self.seed, skipped=self.skipped_)
        return self

    def predict(self, X, y):
        return [align_g2p(self.model_, w, p) for w, p in zip(X, y)]
