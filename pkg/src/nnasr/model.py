"""Continuous-density phone HMMs: types, emission scoring, concatenation, sampling.

Transition matrices are stored in the linear domain (as in model files) and
converted to natural logs wherever a decoder or trainer consumes them.
"""

from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .errors import FormatError, PhoneLookupError, UsageError
from .labels import Segment, Transcription
from .validation import check_features, check_random_state

VAR_FLOOR = 1e-4
ROW_TOL = 1e-6
LOG_2PI = float(np.log(2.0 * np.pi))


class Lang(str, Enum):
    L2 = "L2"  # spoken (target) language
    L1 = "L1"  # speaker's mother tongue


@dataclass(frozen=True)
class PhoneSymbol:
    id: str
    lang: Lang = Lang.L2

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id or any(c.isspace() for c in self.id) or "/" in self.id:
            raise FormatError(f"invalid phone id {self.id!r}: must be a non-empty token without whitespace or '/'")
        object.__setattr__(self, "lang", Lang(self.lang))

    def __str__(self):
        return self.id


class GaussianComponent(NamedTuple):
    weight: float
    mean: np.ndarray
    var: np.ndarray


class GmmState:
    """Diagonal-covariance Gaussian mixture emitting density."""

    def __init__(self, weights, means, variances, var_floor=VAR_FLOOR):
        self.weights = np.array(weights, dtype=np.float64).reshape(-1)
        self.means = np.array(means, dtype=np.float64, ndmin=2)
        self.vars = np.array(variances, dtype=np.float64, ndmin=2)
        k = self.weights.size
        if k < 1:
            raise FormatError("GMM state needs at least one component")
        if self.means.shape != self.vars.shape or self.means.shape[0] != k:
            raise FormatError(f"GMM state shape mismatch: {k} weights, means {self.means.shape}, vars {self.vars.shape}")
        if np.any(self.weights <= 0) or np.any(self.weights > 1):
            raise FormatError("component weights must lie in (0, 1]")
        if abs(self.weights.sum() - 1.0) > ROW_TOL:
            raise FormatError(f"component weights sum to {self.weights.sum():.9g}, expected 1")
        if not (np.all(np.isfinite(self.means)) and np.all(np.isfinite(self.vars))):
            raise FormatError("non-finite mean or variance")
        bad = np.argwhere(self.vars < var_floor)
        if bad.size:
            c, d = bad[0]
            raise FormatError(f"components[{c}].var[{d}] = {self.vars[c, d]!r} is below the variance floor {var_floor}")
        for arr in (self.weights, self.means, self.vars):
            arr.flags.writeable = False
        self._log_w = np.log(self.weights)
        self._gconst = -0.5 * (self.dim * LOG_2PI + np.log(self.vars).sum(axis=1))
        self._inv_var = 1.0 / self.vars

    @classmethod
    def single(cls, mean, var, **kw):
        mean = np.asarray(mean, dtype=np.float64).reshape(-1)
        var = np.broadcast_to(np.asarray(var, dtype=np.float64), mean.shape)
        return cls([1.0], mean[None, :], var[None, :], **kw)

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def n_components(self):
        return self.weights.size

    @property
    def components(self):
        return [GaussianComponent(float(w), m, v) for w, m, v in zip(self.weights, self.means, self.vars)]

    def component_log_likelihood(self, frames):
        """(T, K) array of ``log w_k + log N(o_t; mu_k, var_k)``."""
        diff = frames[:, None, :] - self.means[None, :, :]
        quad = np.einsum("tkd,kd->tk", diff * diff, self._inv_var)
        return self._log_w + self._gconst - 0.5 * quad

    def log_likelihood(self, frames):
        comp = self.component_log_likelihood(frames)
        if comp.shape[1] == 1:
            return comp[:, 0]
        return logsumexp(comp, axis=1)

    def __eq__(self, other):
        return (isinstance(other, GmmState) and np.array_equal(self.weights, other.weights)
                and np.array_equal(self.means, other.means) and np.array_equal(self.vars, other.vars))

    __hash__ = object.__hash__

    def __repr__(self):
        return f"GmmState(K={self.n_components}, D={self.dim})"


def log_emission(state, frame):
    """Natural-log density of one frame under a GMM state."""
    frame = np.asarray(frame, dtype=np.float64).reshape(-1)
    if frame.size != state.dim:
        raise FormatError(f"frame dimension {frame.size} does not match state dimension {state.dim}")
    return float(state.log_likelihood(frame[None, :])[0])


def left_right_trans(n_states, self_loop=0.5):
    """Entry -> s1, each state self-loops or advances, last state exits."""
    trans = np.zeros((n_states + 2, n_states + 2))
    trans[0, 1] = 1.0
    for i in range(1, n_states + 1):
        trans[i, i] = self_loop
        trans[i, i + 1] = 1.0 - self_loop
    trans[-1, -1] = 1.0
    return trans


def check_trans(trans, n_states, where="trans"):
    trans = np.array(trans, dtype=np.float64)
    size = n_states + 2
    if trans.shape != (size, size):
        raise FormatError(f"{where}: expected a {size}x{size} matrix, got {trans.shape}")
    if not np.all(np.isfinite(trans)) or np.any(trans < 0):
        raise FormatError(f"{where}: entries must be finite and non-negative")
    lower = np.tril(trans, -1)
    if np.any(lower != 0):
        i, j = np.argwhere(lower != 0)[0]
        raise FormatError(f"{where}[{i}][{j}]: backward transition in a left-right model")
    for i, s in enumerate(trans.sum(axis=1)):
        if abs(s - 1.0) > ROW_TOL:
            raise FormatError(f"{where}[{i}]: row sums to {s:.9g}, expected 1")
    if trans[0, 0] != 0:
        raise FormatError(f"{where}[0][0]: entry state may not self-loop")
    if trans[0, -1] != 0:
        raise FormatError(f"{where}[0][{size - 1}]: entry-to-exit transitions are not supported")
    if trans[-1, -1] != 1.0:
        raise FormatError(f"{where}[{size - 1}]: exit row must be absorbing")
    return trans


class PhoneHmm:
    """Left-right phone model with non-emitting entry (index 0) and exit (N+1)."""

    def __init__(self, phone, states, trans=None):
        if not isinstance(phone, PhoneSymbol):
            phone = PhoneSymbol(phone)
        self.phone = phone
        self.states = tuple(states)
        if not self.states:
            raise FormatError(f"phone {phone.id}: no emitting states")
        dims = {s.dim for s in self.states}
        if len(dims) != 1:
            raise FormatError(f"phone {phone.id}: states disagree on dimension {sorted(dims)}")
        if trans is None:
            trans = left_right_trans(len(self.states))
        self.trans = check_trans(trans, len(self.states), where=f"phone {phone.id} trans")
        self.trans.flags.writeable = False

    @property
    def id(self):
        return self.phone.id

    @property
    def n_states(self):
        return len(self.states)

    @property
    def dim(self):
        return self.states[0].dim

    @property
    def log_trans(self):
        with np.errstate(divide="ignore"):
            return np.log(self.trans)

    def replace(self, states=None, trans=None):
        return PhoneHmm(self.phone, self.states if states is None else states,
                        self.trans if trans is None else trans)

    def __eq__(self, other):
        return (isinstance(other, PhoneHmm) and self.phone == other.phone
                and self.states == other.states and np.array_equal(self.trans, other.trans))

    __hash__ = object.__hash__

    def __repr__(self):
        return f"PhoneHmm({self.phone.id!r}, N={self.n_states})"


class ModelSet:
    """Immutable collection of phone models sharing one feature dimension."""

    def __init__(self, models, dim=None):
        models = list(models)
        if not models:
            raise UsageError("model set is empty")
        self.models = {}
        for m in models:
            if m.id in self.models:
                raise FormatError(f"duplicate phone id {m.id!r}")
            self.models[m.id] = m
        dims = {m.dim for m in models}
        if dim is None:
            dim = models[0].dim
        if dims != {dim}:
            raise FormatError(f"model dimensions {sorted(dims)} do not all equal {dim}")
        self.dim = dim

    @property
    def inventory(self):
        return [m.phone for m in self.models.values()]

    @property
    def phone_ids(self):
        return list(self.models)

    def __getitem__(self, phone_id):
        try:
            return self.models[phone_id]
        except KeyError:
            raise PhoneLookupError(f"unknown phone {phone_id!r}") from None

    def __contains__(self, phone_id):
        return phone_id in self.models

    def __iter__(self):
        return iter(self.models.values())

    def __len__(self):
        return len(self.models)

    def __eq__(self, other):
        return isinstance(other, ModelSet) and self.dim == other.dim and self.models == other.models

    __hash__ = object.__hash__

    def __repr__(self):
        return f"ModelSet({len(self)} phones, D={self.dim})"

    def subset(self, lang):
        return ModelSet([m for m in self if m.phone.lang == Lang(lang)], dim=self.dim)

    def unit_for(self, phone_id, word=None, variant=None, position=None):
        """Branches ``[(log_weight, [PhoneHmm, ...])]`` realising one phone occurrence."""
        return [(0.0, [self[phone_id]])]

    @property
    def base(self):
        return self


class CompositeHmm:
    """Concatenated phone models collapsed onto their emitting states.

    ``log_init[s]`` is the entry-to-state log probability, ``log_final[s]`` the
    state-to-exit one and ``log_trans`` the dense state-to-state matrix; the
    non-emitting junctions are folded into these terms.
    ``owners[s] = (constituent index, state index within its phone)``.
    """

    def __init__(self, states, log_init, log_trans, log_final, owners, phones):
        self.states = list(states)
        self.log_init = log_init
        self.log_trans = log_trans
        self.log_final = log_final
        self.owners = owners
        self.phones = phones

    @classmethod
    def from_phone(cls, hmm):
        lt = hmm.log_trans
        n = hmm.n_states
        return cls(hmm.states, lt[0, 1:n + 1].copy(), lt[1:n + 1, 1:n + 1].copy(), lt[1:n + 1, n + 1].copy(),
                   [(0, i) for i in range(n)], [hmm.id])

    @property
    def n_states(self):
        return len(self.states)

    @property
    def dim(self):
        return self.states[0].dim

    def emission_matrix(self, frames):
        """(T, S) log emissions, computing each distinct GMM once."""
        cache = {}
        cols = []
        for st in self.states:
            key = id(st)
            if key not in cache:
                cache[key] = st.log_likelihood(frames)
            cols.append(cache[key])
        return np.stack(cols, axis=1)

    def viterbi_score(self, frames):
        frames = check_features(frames, self.dim)
        b = self.emission_matrix(frames)
        delta = self.log_init + b[0]
        for t in range(1, len(frames)):
            delta = np.max(delta[:, None] + self.log_trans, axis=0) + b[t]
        return float(np.max(delta + self.log_final))

    def log_likelihood(self, frames):
        frames = check_features(frames, self.dim)
        return forward(self.log_init, self.log_trans, self.log_final, self.emission_matrix(frames))[1]


def forward(log_init, log_trans, log_final, emissions):
    """Log-domain forward pass. Returns (alpha, total log-likelihood)."""
    T, S = emissions.shape
    alpha = np.empty((T, S))
    alpha[0] = log_init + emissions[0]
    for t in range(1, T):
        alpha[t] = logsumexp(alpha[t - 1][:, None] + log_trans, axis=0) + emissions[t]
    return alpha, float(logsumexp(alpha[-1] + log_final))


def backward(log_trans, log_final, emissions):
    T, S = emissions.shape
    beta = np.empty((T, S))
    beta[-1] = log_final
    for t in range(T - 2, -1, -1):
        beta[t] = logsumexp(log_trans + (emissions[t + 1] + beta[t + 1])[None, :], axis=1)
    return beta


def _as_composite(m):
    return m if isinstance(m, CompositeHmm) else CompositeHmm.from_phone(m)


def concatenate(models):
    """Splice models in order: the exit of each feeds the entry of the next.

    Accepts PhoneHmm or CompositeHmm items; the result is a CompositeHmm whose
    complete paths are exactly the ordered products of constituent paths.
    """
    parts = [_as_composite(m) for m in models]
    if not parts:
        raise UsageError("concatenate needs at least one model")
    dims = {p.dim for p in parts}
    if len(dims) != 1:
        raise FormatError(f"cannot concatenate models of dimensions {sorted(dims)}")
    sizes = [p.n_states for p in parts]
    total = sum(sizes)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    log_trans = np.full((total, total), -np.inf)
    log_init = np.full(total, -np.inf)
    log_final = np.full(total, -np.inf)
    states, owners, phones = [], [], []
    n_before = 0
    for k, p in enumerate(parts):
        lo, hi = offsets[k], offsets[k + 1]
        log_trans[lo:hi, lo:hi] = p.log_trans
        if k + 1 < len(parts):
            nxt = parts[k + 1]
            log_trans[lo:hi, hi:hi + nxt.n_states] = p.log_final[:, None] + nxt.log_init[None, :]
        states.extend(p.states)
        owners.extend((c + n_before, i) for c, i in p.owners)
        phones.extend(p.phones)
        n_before += len(p.phones)
    log_init[:sizes[0]] = parts[0].log_init
    log_final[offsets[-2]:] = parts[-1].log_final
    return CompositeHmm(states, log_init, log_trans, log_final, owners, phones)


def sample_models(models, rng, labels=None):
    """Sample frames by walking the given phone models in order.

    Returns the (T, D) frames and one Segment per model. ``labels`` overrides
    the segment phone labels.
    """
    frames = []
    segments = []
    for k, hmm in enumerate(models):
        start = len(frames)
        n = hmm.n_states
        state = int(rng.choice(n + 2, p=hmm.trans[0]))
        while state != n + 1:
            gmm = hmm.states[state - 1]
            c = int(rng.choice(gmm.n_components, p=gmm.weights)) if gmm.n_components > 1 else 0
            frames.append(gmm.means[c] + np.sqrt(gmm.vars[c]) * rng.standard_normal(gmm.dim))
            state = int(rng.choice(n + 2, p=hmm.trans[state]))
        segments.append(Segment(hmm.id if labels is None else labels[k], start, len(frames)))
    return np.array(frames), Transcription(segments)


def sample_utterance(model_set, phones, seed):
    """Deterministic sample of features and true segments for a phone sequence."""
    models = [model_set[p] for p in phones]
    if not models:
        raise UsageError("cannot sample an empty phone sequence")
    return sample_models(models, check_random_state(seed))
