import json

import numpy as np
import pytest

from gsjflow.errors import DimensionMismatchError, ModelFormatError, ModelVersionError
from gsjflow.model_io import load_model, model_json_bytes, save_model

from .conftest import make_model


@pytest.fixture
def model():
    return make_model(seed=20, channels=3, blocks=2, depth=2, seq_len=8,
                      weight_scale=0.17)


def test_roundtrip_bit_exact(model, tmp_path):
    path = tmp_path / "model.json"
    save_model(model, path)
    loaded = load_model(path)
    assert model_json_bytes(loaded) == model_json_bytes(model)
    for orig, back in zip(model.blocks, loaded.blocks):
        assert np.array_equal(orig.w_s, back.w_s)
        assert np.array_equal(orig.layers[0].wq, back.layers[0].wq)
        assert orig.flip == back.flip


def test_truncated_file_is_malformed(model, tmp_path):
    path = tmp_path / "model.json"
    save_model(model, path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(ModelFormatError):
        load_model(path)


def test_unknown_format_tag(model, tmp_path):
    path = tmp_path / "model.json"
    save_model(model, path)
    doc = json.loads(path.read_text())
    doc["format"] = "gsjf-99"
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelVersionError):
        load_model(path)


def test_missing_format_tag(model, tmp_path):
    path = tmp_path / "model.json"
    save_model(model, path)
    doc = json.loads(path.read_text())
    del doc["format"]
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelFormatError):
        load_model(path)


def test_inconsistent_dims_detected(model, tmp_path):
    path = tmp_path / "model.json"
    save_model(model, path)
    doc = json.loads(path.read_text())
    doc["config"]["channels"] = 5  # payload still has width 3
    path.write_text(json.dumps(doc))
    with pytest.raises(DimensionMismatchError):
        load_model(path)


def test_wrong_block_count_detected(model, tmp_path):
    path = tmp_path / "model.json"
    save_model(model, path)
    doc = json.loads(path.read_text())
    doc["blocks"] = doc["blocks"][:1]
    path.write_text(json.dumps(doc))
    with pytest.raises(DimensionMismatchError):
        load_model(path)


def test_non_finite_weight_rejected(model, tmp_path):
    path = tmp_path / "model.json"
    save_model(model, path)
    doc = json.loads(path.read_text())
    doc["blocks"][0]["w_s"][0][0] = "NaN"
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelFormatError):
        load_model(path)


def test_missing_file(tmp_path):
    with pytest.raises(ModelFormatError):
        load_model(tmp_path / "nope.json")
