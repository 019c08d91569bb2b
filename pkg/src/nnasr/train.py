"""Maximum-likelihood training of GMM-HMM phone sets (flat start, embedded Baum-Welch, mixture splitting)."""

import logging

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator

from .errors import UsageError
from .labels import Transcription
from .model import VAR_FLOOR, GmmState, ModelSet, PhoneHmm, PhoneSymbol, backward, concatenate, forward, left_right_trans
from .validation import check_features

log = logging.getLogger(__name__)

OCCUPANCY_FLOOR = 3.0
PRUNE_WEIGHT = 1e-5
ALL_UPDATES = frozenset("mvwt")


def _phones_of(labels):
    if isinstance(labels, Transcription):
        return labels.phones
    return list(labels)


def _pairs(corpus):
    """Normalise a corpus to [(frames, labels)]; accepts Utterance objects too."""
    out = []
    for item in corpus:
        if hasattr(item, "features"):
            labels = item.segments if item.segments is not None else item.phones
            out.append((item.features, labels))
        else:
            out.append((item[0], item[1]))
    return out


def _gaussian_stats(frames):
    mean = frames.mean(axis=0)
    var = frames.var(axis=0)
    return mean, var


def init_flat(inventory, n_states, n_components, dim, corpus, var_floor=VAR_FLOOR, self_loop=0.5, warnings=None):
    """Flat-start models from uniform segmentation of labelled utterances.

    Each phone segment is cut into ``n_states`` equal chunks and chunk k feeds
    state k. Unlabelled utterances (phone lists) are first split uniformly
    across their phones. Phones never seen get the global mean and variance and
    are reported in ``warnings`` when a list is supplied.
    """
    corpus = _pairs(corpus)
    if not corpus:
        raise UsageError("cannot initialise from an empty corpus")
    symbols = [p if isinstance(p, PhoneSymbol) else PhoneSymbol(p) for p in inventory]
    pooled = {(p.id, k): [] for p in symbols for k in range(n_states)}
    everything = []
    for frames, labels in corpus:
        frames = check_features(frames, dim)
        everything.append(frames)
        if isinstance(labels, Transcription):
            spans = [(s.phone, s.start, s.end) for s in labels]
        else:
            cuts = np.linspace(0, len(frames), len(labels) + 1).round().astype(int)
            spans = [(p, cuts[i], cuts[i + 1]) for i, p in enumerate(labels)]
        for phone, a, b in spans:
            for k, chunk in enumerate(np.array_split(np.arange(a, b), n_states)):
                if (phone, k) in pooled and chunk.size:
                    pooled[(phone, k)].append(frames[chunk])
    allframes = np.concatenate(everything)
    gmean, gvar = _gaussian_stats(allframes)
    models = []
    for sym in symbols:
        seen = any(pooled[(sym.id, k)] for k in range(n_states))
        if not seen:
            msg = f"phone {sym.id!r} unseen in the corpus; initialised to global statistics"
            log.warning(msg)
            if warnings is not None:
                warnings.append(msg)
        states = []
        for k in range(n_states):
            data = pooled[(sym.id, k)]
            if data:
                mean, var = _gaussian_stats(np.concatenate(data))
            else:
                # state too short to get frames of its own: borrow the phone's pooled data
                spare = [x for j in range(n_states) for x in pooled[(sym.id, j)]]
                mean, var = _gaussian_stats(np.concatenate(spare)) if spare else (gmean, gvar)
            states.append(GmmState.single(mean, np.maximum(var, var_floor), var_floor=var_floor))
        models.append(PhoneHmm(sym, states, left_right_trans(n_states, self_loop)))
    model_set = ModelSet(models, dim=dim)
    if n_components > 1:
        model_set = mix_up(model_set, n_components, var_floor=var_floor)
    return model_set


def mix_up(model_set, target_components, var_floor=VAR_FLOOR):
    """Split the heaviest component of every state until it has ``target_components``.

    A split keeps the variance, halves the weight and moves the two means to
    ``mean +/- 0.2 * sqrt(var)``.
    """
    current = max(s.n_components for m in model_set for s in m.states)
    if target_components < current:
        raise UsageError(f"target {target_components} components is below the current maximum {current}")
    models = []
    for m in model_set:
        states = []
        for st in m.states:
            w, mu, var = list(st.weights), list(st.means), list(st.vars)
            while len(w) < target_components:
                h = int(np.argmax(w))
                delta = 0.2 * np.sqrt(var[h])
                w[h] /= 2.0
                w.append(w[h])
                mu.append(mu[h] - delta)
                mu[h] = mu[h] + delta
                var.append(var[h])
            states.append(st if len(w) == st.n_components else GmmState(w, mu, var, var_floor=var_floor))
        models.append(m.replace(states=states))
    return ModelSet(models, dim=model_set.dim)


class _PhoneStats:
    def __init__(self, hmm):
        n = hmm.n_states
        self.occ = [np.zeros(s.n_components) for s in hmm.states]
        self.sum = [np.zeros((s.n_components, hmm.dim)) for s in hmm.states]
        self.sumsq = [np.zeros((s.n_components, hmm.dim)) for s in hmm.states]
        self.trans = np.zeros((n + 2, n + 2))


class Accumulator:
    """Sufficient statistics of one EM pass (fixed utterance order)."""

    def __init__(self, model_set):
        self.model_set = model_set
        self.stats = {m.id: _PhoneStats(m) for m in model_set}
        self.log_likelihood = 0.0
        self.n_used = 0
        self.skipped = []

    def add(self, frames, phones, uid=None):
        models = [self.model_set[p] for p in phones]
        comp = concatenate(models)
        frames = check_features(frames, self.model_set.dim)
        per_gmm = {}
        cols = []
        for st in comp.states:
            if id(st) not in per_gmm:
                cl = st.component_log_likelihood(frames)
                per_gmm[id(st)] = (cl, logsumexp(cl, axis=1))
            cols.append(per_gmm[id(st)][1])
        em = np.stack(cols, axis=1)
        alpha, ll = forward(comp.log_init, comp.log_trans, comp.log_final, em)
        if not np.isfinite(ll):
            msg = f"utterance {uid if uid is not None else '?'}: {len(frames)} frames cannot cover {len(phones)} phones; skipped"
            log.warning(msg)
            self.skipped.append(msg)
            return None
        beta = backward(comp.log_trans, comp.log_final, em)
        gamma = np.exp(alpha + beta - ll)
        self.log_likelihood += ll
        self.n_used += 1

        for s, (k, i) in enumerate(comp.owners):
            st = comp.states[s]
            cl, sl = per_gmm[id(st)]
            post = gamma[:, s, None] * np.exp(cl - sl[:, None])
            acc = self.stats[comp.phones[k]]
            acc.occ[i] += post.sum(axis=0)
            acc.sum[i] += post.T @ frames
            acc.sumsq[i] += post.T @ (frames * frames)

        T = len(frames)
        S = comp.n_states
        if T > 1:
            xi = np.exp(alpha[:-1, :, None] + comp.log_trans[None] + (em[1:] + beta[1:])[:, None, :] - ll).sum(axis=0)
        else:
            xi = np.zeros((S, S))
        first = np.exp(comp.log_init + em[0] + beta[0] - ll)
        last = np.exp(alpha[-1] + comp.log_final - ll)
        owners = comp.owners
        for r in np.flatnonzero(np.isfinite(comp.log_init)):
            k, j = owners[r]
            self.stats[comp.phones[k]].trans[0, j + 1] += first[r]
        for s in np.flatnonzero(np.isfinite(comp.log_final)):
            k, i = owners[s]
            n = self.model_set[comp.phones[k]].n_states
            self.stats[comp.phones[k]].trans[i + 1, n + 1] += last[s]
        for s, r in zip(*np.nonzero(np.isfinite(comp.log_trans))):
            (k, i), (k2, j) = owners[s], owners[r]
            c = xi[s, r]
            if k == k2:
                self.stats[comp.phones[k]].trans[i + 1, j + 1] += c
            else:
                n = self.model_set[comp.phones[k]].n_states
                self.stats[comp.phones[k]].trans[i + 1, n + 1] += c
                self.stats[comp.phones[k2]].trans[0, j + 1] += c
        return ll

    def maximize(self, update=ALL_UPDATES, var_floor=VAR_FLOOR):
        models = []
        for m in self.model_set:
            acc = self.stats[m.id]
            states = [_update_state(st, acc.occ[i], acc.sum[i], acc.sumsq[i], update, var_floor)
                      for i, st in enumerate(m.states)]
            trans = m.trans
            if "t" in update:
                trans = m.trans.copy()
                for i in range(m.n_states + 1):
                    total = acc.trans[i].sum()
                    if total > 0:
                        trans[i] = acc.trans[i] / total
            models.append(PhoneHmm(m.phone, states, trans))
        return ModelSet(models, dim=self.model_set.dim)


def _update_state(st, occ, s1, s2, update, var_floor):
    total = occ.sum()
    if total < OCCUPANCY_FLOOR:
        return st
    weights, means, variances = st.weights.copy(), st.means.copy(), st.vars.copy()
    live = occ > 0
    if "w" in update:
        weights = occ / total
    if "m" in update:
        means[live] = s1[live] / occ[live, None]
    if "v" in update:
        mu = means[live]
        ex = s1[live] / occ[live, None]
        ex2 = s2[live] / occ[live, None]
        variances[live] = np.maximum(ex2 - 2 * mu * ex + mu * mu, var_floor)
    keep = weights >= PRUNE_WEIGHT
    if not keep.all():
        heavy = int(np.argmax(weights))
        weights[heavy] += weights[~keep].sum()
        weights, means, variances = weights[keep], means[keep], variances[keep]
    weights = weights / weights.sum()
    return GmmState(weights, means, variances, var_floor=var_floor)


def corpus_log_likelihood(model_set, corpus):
    """Total forward log-likelihood of the labelled corpus (skipping infeasible utterances)."""
    total = 0.0
    for frames, labels in _pairs(corpus):
        comp = concatenate([model_set[p] for p in _phones_of(labels)])
        ll = comp.log_likelihood(frames)
        if np.isfinite(ll):
            total += ll
    return total


def baum_welch(model_set, corpus, n_iters=1, update=ALL_UPDATES, var_floor=VAR_FLOOR, skipped=None):
    """Embedded EM over each utterance's concatenated phone chain.

    Returns the re-estimated set and the total corpus log-likelihood measured
    in each iteration's E-step (i.e. under the parameters entering it).
    """
    update = frozenset(update)
    if not update <= ALL_UPDATES:
        raise UsageError(f"unknown update flags {sorted(update - ALL_UPDATES)}; use any of m, v, w, t")
    pairs = [(f, _phones_of(lbl)) for f, lbl in _pairs(corpus)]
    for _, phones in pairs:
        for p in phones:
            model_set[p]
    history = []
    for it in range(n_iters):
        acc = Accumulator(model_set)
        for u, (frames, phones) in enumerate(pairs):
            acc.add(frames, phones, uid=u)
        if acc.n_used == 0:
            raise UsageError("every utterance was skipped: none is long enough for its phone chain")
        if skipped is not None and it == 0:
            skipped.extend(acc.skipped)
        history.append(acc.log_likelihood)
        model_set = acc.maximize(update, var_floor)
    return model_set, history


class GmmHmmTrainer(BaseEstimator):
    """Flat start followed by Baum-Welch; ``fit(X, y)`` with X frames and y labels."""

    def __init__(self, inventory=None, n_states=3, n_components=1, n_iters=5, update="mvwt",
                 var_floor=VAR_FLOOR, self_loop=0.5):
        self.inventory = inventory
        self.n_states = n_states
        self.n_components = n_components
        self.n_iters = n_iters
        self.update = update
        self.var_floor = var_floor
        self.self_loop = self_loop

    def fit(self, X, y):
        X = [check_features(x) for x in X]
        if not X:
            raise UsageError("no training data")
        corpus = list(zip(X, y))
        inventory = self.inventory
        if inventory is None:
            inventory = sorted({p for labels in y for p in _phones_of(labels)})
        self.warnings_ = []
        init = init_flat(inventory, self.n_states, self.n_components, X[0].shape[1], corpus,
                         var_floor=self.var_floor, self_loop=self.self_loop, warnings=self.warnings_)
        self.model_set_, self.log_likelihood_ = baum_welch(init, corpus, self.n_iters, set(self.update),
                                                           self.var_floor, skipped=self.warnings_)
        return self

    def score(self, X, y):
        return corpus_log_likelihood(self.model_set_, list(zip(X, y)))
