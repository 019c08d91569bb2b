"""Global (single regression class) MLLR mean adaptation for diagonal-covariance GMM-HMMs."""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .errors import EstimationError, FormatError, UsageError
from .model import GmmState, ModelSet
from .modelio import atomic_write, dumps, read_json
from .train import Accumulator, _pairs, _phones_of

MIN_OCCUPANCY = 1e-8
MAX_CONDITION = 1e12


@dataclass
class MllrTransform:
    """Affine map ``mean' = A @ mean + b``."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.A = np.array(self.A, dtype=np.float64, ndmin=2)
        self.b = np.array(self.b, dtype=np.float64).reshape(-1)
        d = self.b.size
        if self.A.shape != (d, d):
            raise FormatError(f"MLLR transform: A has shape {self.A.shape}, b has {d} entries")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))):
            raise FormatError("MLLR transform has non-finite entries")

    @classmethod
    def identity(cls, dim):
        return cls(np.eye(dim), np.zeros(dim))

    @property
    def dim(self):
        return self.b.size

    def compose(self, first):
        """The transform applying ``first`` then ``self``."""
        return MllrTransform(self.A @ first.A, self.A @ first.b + self.b)

    def to_dict(self):
        return {"A": self.A.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(data["A"], data["b"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"MLLR transform file: {exc}") from None

    def save(self, path):
        atomic_write(path, dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(read_json(path))


class MllrStats:
    """Row-wise normal equations ``G_d w_d = k_d`` with extended means ``[1, mean]``."""

    def __init__(self, dim):
        self.dim = dim
        self.G = np.zeros((dim, dim + 1, dim + 1))
        self.k = np.zeros((dim, dim + 1))
        self.n_components = 0

    def add(self, mean, var, occupancy, obs_sum):
        """One Gaussian: total occupancy and the occupancy-weighted sum of its frames."""
        if occupancy <= MIN_OCCUPANCY:
            return
        xi = np.concatenate([[1.0], mean])
        outer = np.outer(xi, xi)
        inv = 1.0 / np.asarray(var)
        self.G += occupancy * inv[:, None, None] * outer[None]
        self.k += (inv * np.asarray(obs_sum))[:, None] * xi[None, :]
        self.n_components += 1

    def solve(self):
        if self.n_components < self.dim + 1:
            raise EstimationError(
                f"MLLR needs at least {self.dim + 1} occupied Gaussians, got {self.n_components}")
        W = np.empty((self.dim, self.dim + 1))
        for d in range(self.dim):
            cond = np.linalg.cond(self.G[d])
            if not np.isfinite(cond) or cond > MAX_CONDITION:
                raise EstimationError(f"MLLR row {d}: normal equations are singular (condition {cond:.3g})")
            W[d] = np.linalg.solve(self.G[d], self.k[d])
        return MllrTransform(W[:, 1:], W[:, 0])


def mllr_statistics(model_set, corpus):
    acc = Accumulator(model_set)
    for u, (frames, labels) in enumerate(_pairs(corpus)):
        acc.add(frames, _phones_of(labels), uid=u)
    if acc.n_used == 0:
        raise EstimationError("no adaptation utterance could be aligned")
    stats = MllrStats(model_set.dim)
    for m in model_set:
        ps = acc.stats[m.id]
        for i, st in enumerate(m.states):
            for c in range(st.n_components):
                stats.add(st.means[c], st.vars[c], ps.occ[i][c], ps.sum[i][c])
    return stats


def estimate_mllr(model_set, corpus):
    """Supervised global mean transform from labelled adaptation data.

    Component occupancies come from forward-backward over each utterance's
    reference phone chain.
    """
    return mllr_statistics(model_set, corpus).solve()


def apply_mllr(model_set, transform):
    if transform.dim != model_set.dim:
        raise UsageError(f"transform dimension {transform.dim} does not match model dimension {model_set.dim}")
    cache = {}
    models = []
    for m in model_set:
        states = []
        for st in m.states:
            if id(st) not in cache:
                means = st.means @ transform.A.T + transform.b
                cache[id(st)] = GmmState(st.weights, means, st.vars, var_floor=0.0)
            states.append(cache[id(st)])
        models.append(m.replace(states=states))
    return ModelSet(models, dim=model_set.dim)


class MllrAdapter(BaseEstimator):
    """``fit(X, y)`` estimates a transform for ``model_set``; ``transform()`` applies it."""

    def __init__(self, model_set=None):
        self.model_set = model_set

    def fit(self, X, y):
        self.transform_ = estimate_mllr(self.model_set, list(zip(X, y)))
        return self

    def transform(self, model_set=None):
        return apply_mllr(self.model_set if model_set is None else model_set, self.transform_)
