import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from nnasr.errors import FormatError
from nnasr.model import concatenate
from nnasr.modelio import (
    format_features, load_model_set, model_set_to_dict, parse_features, read_features, save_model_set,
    write_features,
)


def _set(seed=0, n=2, dim=2):
    return oracles.random_model_set(np.random.default_rng(seed), n, dim)


def test_round_trip_two_phone_set(tmp_path):
    ms = _set()
    path = tmp_path / "m.json"
    save_model_set(ms, path)
    back = load_model_set(path)
    assert back == ms
    frames = oracles.random_frames(np.random.default_rng(1), 5, 2)
    for p in ms.phone_ids:
        a = concatenate([ms[p]]).log_likelihood(frames)
        b = concatenate([back[p]]).log_likelihood(frames)
        assert abs(a - b) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_round_trip_is_exact(seed):
    rng = np.random.default_rng(seed)
    ms = oracles.random_model_set(rng, int(rng.integers(1, 4)), int(rng.integers(1, 4)))
    text = json.dumps(model_set_to_dict(ms))
    from nnasr.modelio import model_set_from_dict
    assert model_set_from_dict(json.loads(text)) == ms


def _tamper(tmp_path, fn):
    ms = _set(n=1, dim=1)
    data = model_set_to_dict(ms)
    fn(data)
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(data))
    return path


def test_row_sum_violation_rejected(tmp_path):
    def bad(d):
        d["phones"][0]["trans"] = [[0, 1, 0], [0, 0.5, 0.4], [0, 0, 1]]
        d["phones"][0]["states"] = d["phones"][0]["states"][:1]
    with pytest.raises(FormatError, match="row"):
        load_model_set(_tamper(tmp_path, bad))


def test_var_below_floor_names_field(tmp_path):
    def bad(d):
        d["phones"][0]["states"][0]["components"][0]["var"] = [1e-9]
    with pytest.raises(FormatError, match=r"phones\[0\].*states\[0\].*var"):
        load_model_set(_tamper(tmp_path, bad))


def test_negative_variance_rejected(tmp_path):
    def bad(d):
        d["phones"][0]["states"][0]["components"][0]["var"] = [-1.0]
    with pytest.raises(FormatError):
        load_model_set(_tamper(tmp_path, bad))


def test_malformed_json_rejected(tmp_path):
    path = tmp_path / "x.json"
    path.write_text("{not json")
    with pytest.raises(FormatError):
        load_model_set(path)


def test_features_round_trip(tmp_path):
    frames = np.random.default_rng(0).normal(size=(7, 3))
    write_features(frames, tmp_path / "f.feat")
    assert np.array_equal(read_features(tmp_path / "f.feat"), frames)
    assert format_features(frames).startswith("FEAT1 3 7\n")


@pytest.mark.parametrize("text", ["FEAT1 2 2\n1 2\n", "FEAT2 1 1\n0\n", "FEAT1 2 1\n1 x\n", "FEAT1 1 0\n"])
def test_bad_feature_files(text):
    with pytest.raises(FormatError):
        parse_features(text)


def test_saved_numbers_keep_full_precision(tmp_path):
    ms = _set(seed=5)
    save_model_set(ms, tmp_path / "m.json")
    data = json.loads((tmp_path / "m.json").read_text())
    orig = ms[ms.phone_ids[0]].states[0].means[0][0]
    assert data["phones"][0]["states"][0]["components"][0]["mean"][0] == orig
