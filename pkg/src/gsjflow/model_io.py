"""Model file format (UTF-8 JSON, format tag "gsjf-1").

Floats are written in shortest-roundtrip decimal (up to 17 significant
digits), so load(save(m)) reproduces every weight bit-exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DimensionMismatchError, ModelFormatError, ModelVersionError
from .flow import AttentionLayer, FlowBlock, FlowModel, ModelConfig

MODEL_FORMAT = "gsjf-1"

_LAYER_KEYS = ("wq", "wk", "wv", "wo", "mlp_w1", "mlp_w2",
               "ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias")
_CONFIG_KEYS = ("channels", "blocks", "depth", "hidden",
                "patch_size", "noise_std", "seq_len")


def model_to_dict(model: FlowModel) -> dict:
    cfg = model.config
    if cfg is None:
        raise ModelFormatError("model has no config; cannot serialize")
    return {
        "format": MODEL_FORMAT,
        "config": {key: getattr(cfg, key) for key in _CONFIG_KEYS},
        "blocks": [
            {
                "flip": block.flip,
                "layers": [
                    {key: getattr(layer, key).tolist() for key in _LAYER_KEYS}
                    for layer in block.layers
                ],
                "ln_f_gain": block.ln_f_gain.tolist(),
                "ln_f_bias": block.ln_f_bias.tolist(),
                "w_s": block.w_s.tolist(),
                "b_s": block.b_s.tolist(),
                "w_u": block.w_u.tolist(),
                "b_u": block.b_u.tolist(),
            }
            for block in model.blocks
        ],
    }


def model_json_bytes(model: FlowModel) -> bytes:
    return json.dumps(model_to_dict(model)).encode("utf-8")


def save_model(model: FlowModel, path) -> None:
    Path(path).write_bytes(model_json_bytes(model))


def _weight(raw, shape: tuple[int, ...], where: str) -> np.ndarray:
    try:
        arr = np.asarray(raw, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"{where}: not a numeric array") from exc
    if arr.shape != shape:
        raise DimensionMismatchError(
            f"{where}: payload shape {arr.shape} inconsistent with declared {shape}")
    if not np.all(np.isfinite(arr)):
        raise ModelFormatError(f"{where}: non-finite weight")
    return arr


def model_from_dict(doc) -> FlowModel:
    if not isinstance(doc, dict):
        raise ModelFormatError("model document is not a JSON object")
    fmt = doc.get("format")
    if fmt is None:
        raise ModelFormatError("missing format tag")
    if fmt != MODEL_FORMAT:
        raise ModelVersionError(f"unsupported model format {fmt!r}")
    try:
        cfg_raw = doc["config"]
        cfg = ModelConfig(**{key: cfg_raw[key] for key in _CONFIG_KEYS})
        blocks_raw = doc["blocks"]
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"malformed model document: {exc}") from exc
    except DimensionMismatchError:
        raise
    except ValueError as exc:
        raise ModelFormatError(f"malformed config: {exc}") from exc
    if not isinstance(blocks_raw, list) or len(blocks_raw) != cfg.blocks:
        raise DimensionMismatchError(
            f"config declares {cfg.blocks} blocks, file has "
            f"{len(blocks_raw) if isinstance(blocks_raw, list) else 'no'} blocks")
    c, h = cfg.channels, cfg.hidden
    layer_shapes = {
        "wq": (c, c), "wk": (c, c), "wv": (c, c), "wo": (c, c),
        "mlp_w1": (c, h), "mlp_w2": (h, c),
        "ln1_gain": (c,), "ln1_bias": (c,), "ln2_gain": (c,), "ln2_bias": (c,),
    }
    blocks = []
    for bi, braw in enumerate(blocks_raw):
        if not isinstance(braw, dict):
            raise ModelFormatError(f"block {bi} is not a JSON object")
        try:
            flip = bool(braw["flip"])
            layers_raw = braw["layers"]
        except KeyError as exc:
            raise ModelFormatError(f"block {bi}: missing {exc}") from exc
        if not isinstance(layers_raw, list) or len(layers_raw) != cfg.depth:
            raise DimensionMismatchError(
                f"block {bi}: expected {cfg.depth} layers")
        layers = []
        for li, lraw in enumerate(layers_raw):
            if not isinstance(lraw, dict):
                raise ModelFormatError(f"block {bi} layer {li}: not an object")
            kwargs = {}
            for key in _LAYER_KEYS:
                if key not in lraw:
                    raise ModelFormatError(f"block {bi} layer {li}: missing {key}")
                kwargs[key] = _weight(lraw[key], layer_shapes[key],
                                      f"block {bi} layer {li} {key}")
            layers.append(AttentionLayer(**kwargs))
        proj = {}
        for key, shape in (("ln_f_gain", (c,)), ("ln_f_bias", (c,)),
                           ("w_s", (c, c)), ("b_s", (c,)),
                           ("w_u", (c, c)), ("b_u", (c,))):
            if key not in braw:
                raise ModelFormatError(f"block {bi}: missing {key}")
            proj[key] = _weight(braw[key], shape, f"block {bi} {key}")
        blocks.append(FlowBlock(layers=layers, flip=flip, **proj))
    model = FlowModel(blocks=blocks, config=cfg)
    model.validate()
    return model


def load_model(path) -> FlowModel:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelFormatError(f"cannot read model file {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise ModelFormatError(f"model file {path} is not UTF-8") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file {path} is malformed JSON: {exc}") from exc
    return model_from_dict(doc)
