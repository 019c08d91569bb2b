"""Input validation helpers, in the spirit of ``sklearn.utils.validation``."""

import math

import numpy as np

from .errors import FormatError, UsageError


def check_features(frames, dim=None, name="features"):
    """Return ``frames`` as a C-contiguous float64 array of shape (T, D).

    A 1-D input is read as a single frame. Raises FormatError on empty or
    non-finite input and on a dimension mismatch with ``dim``.
    """
    arr = np.asarray(getattr(frames, "frames", frames), dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise FormatError(f"{name}: expected a 2-D (frames x dim) array, got {arr.ndim}-D")
    if arr.shape[0] < 1:
        raise FormatError(f"{name}: no frames")
    if dim is not None and arr.shape[1] != dim:
        raise FormatError(f"{name}: dimension {arr.shape[1]} does not match model dimension {dim}")
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{name}: non-finite values")
    return np.ascontiguousarray(arr)


def check_log_weight(value, name):
    """A log-domain penalty must be a finite real."""
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise UsageError(f"{name} must be a real number, got {value!r}") from None
    if not math.isfinite(value):
        raise UsageError(f"{name} must be finite, got {value}")
    return value


def check_beta(beta):
    beta = float(beta)
    if not (0.0 < beta <= 1.0):
        raise UsageError(f"beta must lie in (0, 1], got {beta}")
    return beta


def check_random_state(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
