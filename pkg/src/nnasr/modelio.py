"""Model-set JSON files and FEAT1 feature files."""

import json
import os
import tempfile

import numpy as np

from .errors import FormatError
from .model import VAR_FLOOR, GmmState, ModelSet, PhoneHmm, PhoneSymbol


def atomic_write(path, text):
    """Write via a temporary sibling then rename, so readers never see partial files."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _floats(values):
    return [float(v) for v in np.asarray(values).ravel()]


def phone_to_dict(hmm):
    return {
        "id": hmm.id,
        "lang": hmm.phone.lang.value,
        "states": [
            {"components": [
                {"weight": float(w), "mean": _floats(m), "var": _floats(v)}
                for w, m, v in zip(s.weights, s.means, s.vars)
            ]}
            for s in hmm.states
        ],
        "trans": [_floats(row) for row in hmm.trans],
    }


def model_set_to_dict(model_set):
    return {"dim": model_set.dim, "phones": [phone_to_dict(m) for m in model_set]}


def dumps(obj):
    # repr-based float output is the shortest string that round-trips exactly
    return json.dumps(obj, indent=1, ensure_ascii=False) + "\n"


def _expect(cond, path, msg):
    if not cond:
        raise FormatError(f"{path}: {msg}")


def _vector(value, path, dim):
    _expect(isinstance(value, list), path, "expected a list of numbers")
    _expect(len(value) == dim, path, f"expected {dim} values, got {len(value)}")
    for i, v in enumerate(value):
        _expect(isinstance(v, (int, float)) and not isinstance(v, bool), f"{path}[{i}]", "not a number")
        _expect(np.isfinite(v), f"{path}[{i}]", "not finite")
    return value


def phone_from_dict(entry, path, dim, var_floor=VAR_FLOOR):
    _expect(isinstance(entry, dict), path, "expected an object")
    for key in ("id", "states", "trans"):
        _expect(key in entry, path, f"missing field {key!r}")
    try:
        symbol = PhoneSymbol(entry["id"], entry.get("lang", "L2"))
    except (FormatError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    states = []
    _expect(isinstance(entry["states"], list) and entry["states"], f"{path}.states", "expected a non-empty list")
    for si, st in enumerate(entry["states"]):
        spath = f"{path}.states[{si}]"
        _expect(isinstance(st, dict) and isinstance(st.get("components"), list) and st["components"],
                spath, "expected {components: [...]} with at least one component")
        weights, means, variances = [], [], []
        for ci, comp in enumerate(st["components"]):
            cpath = f"{spath}.components[{ci}]"
            _expect(isinstance(comp, dict), cpath, "expected an object")
            w = comp.get("weight")
            _expect(isinstance(w, (int, float)) and 0 < w <= 1, f"{cpath}.weight", f"must lie in (0, 1], got {w!r}")
            means.append(_vector(comp.get("mean"), f"{cpath}.mean", dim))
            var = _vector(comp.get("var"), f"{cpath}.var", dim)
            for d, v in enumerate(var):
                _expect(v > 0, f"{cpath}.var[{d}]", f"variance must be positive, got {v!r}")
                _expect(v >= var_floor, f"{cpath}.var[{d}]", f"variance {v!r} below floor {var_floor}")
            variances.append(var)
            weights.append(w)
        _expect(abs(sum(weights) - 1.0) <= 1e-6, spath, f"component weights sum to {sum(weights)!r}, expected 1")
        states.append(GmmState(weights, means, variances, var_floor=var_floor))
    trans = entry["trans"]
    n = len(states)
    _expect(isinstance(trans, list) and len(trans) == n + 2, f"{path}.trans", f"expected {n + 2} rows")
    for i, row in enumerate(trans):
        _vector(row, f"{path}.trans[{i}]", n + 2)
    try:
        return PhoneHmm(symbol, states, trans)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


def model_set_from_dict(data, var_floor=VAR_FLOOR):
    _expect(isinstance(data, dict), "<root>", "expected an object")
    _expect(isinstance(data.get("dim"), int) and data["dim"] >= 1, "dim", "expected a positive integer")
    _expect(isinstance(data.get("phones"), list) and data["phones"], "phones", "expected a non-empty list")
    dim = data["dim"]
    models = [phone_from_dict(p, f"phones[{i}]", dim, var_floor) for i, p in enumerate(data["phones"])]
    return ModelSet(models, dim=dim)


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def save_model_set(model_set, path):
    if hasattr(model_set, "to_dict"):
        atomic_write(path, dumps(model_set.to_dict()))
    else:
        atomic_write(path, dumps(model_set_to_dict(model_set)))


def load_model_set(path, var_floor=VAR_FLOOR):
    """Load a plain model set, or an adapted one when the file has a ``merged`` section."""
    data = read_json(path)
    try:
        if isinstance(data, dict) and "merged" in data:
            from .adapt import AdaptedModelSet
            return AdaptedModelSet.from_dict(data, var_floor=var_floor)
        return model_set_from_dict(data, var_floor=var_floor)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


def format_features(frames):
    frames = np.asarray(frames, dtype=np.float64)
    lines = [f"FEAT1 {frames.shape[1]} {frames.shape[0]}"]
    lines.extend(" ".join(repr(float(v)) for v in row) for row in frames)
    return "\n".join(lines) + "\n"


def parse_features(text, where="features"):
    lines = text.splitlines()
    if not lines:
        raise FormatError(f"{where}: empty file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "FEAT1":
        raise FormatError(f"{where}: line 1: expected 'FEAT1 D T'")
    try:
        dim, n = int(head[1]), int(head[2])
    except ValueError:
        raise FormatError(f"{where}: line 1: D and T must be integers") from None
    if dim < 1 or n < 1:
        raise FormatError(f"{where}: line 1: D and T must be positive")
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != n:
        raise FormatError(f"{where}: header announces {n} frames, found {len(body)}")
    out = np.empty((n, dim))
    for t, ln in enumerate(body):
        parts = ln.split()
        if len(parts) != dim:
            raise FormatError(f"{where}: line {t + 2}: expected {dim} values, got {len(parts)}")
        try:
            out[t] = [float(p) for p in parts]
        except ValueError:
            raise FormatError(f"{where}: line {t + 2}: not a number") from None
    if not np.all(np.isfinite(out)):
        raise FormatError(f"{where}: non-finite values")
    return out


def write_features(frames, path):
    atomic_write(path, format_features(frames))


def read_features(path):
    with open(path, encoding="utf-8") as fh:
        return parse_features(fh.read(), where=os.fspath(path))
