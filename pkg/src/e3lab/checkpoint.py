"""Checkpoints: a directory holding ``manifest.json`` and ``payload.bin``.

The payload is every parameter tensor as contiguous little-endian float32, in
manifest order. The manifest records the format version, the model kind, the
metadata needed to rebuild the architecture, and one ``{name, shape, offset,
length}`` entry per tensor (offset and length in bytes).

Kinds: ``detector`` (one DetectorModel), ``e3`` (the k+1 frozen embedders and
the fusion network) and ``detector_ensemble`` (experts with heads, as used by
majority voting).
"""
from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np

from .detector import DetectorModel, build_detector
from .e3 import E3Model, ExpertEnsemble, FusionConfig, FusionNetwork, freeze
from .errors import FormatError

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
PAYLOAD = "payload.bin"
_LE_F32 = np.dtype("<f4")

Checkpointable = Union[DetectorModel, E3Model, Sequence[DetectorModel]]


def _detector_meta(model: DetectorModel) -> dict:
    return {"preset": model.preset, "embed_dim": model.embed_dim, "highpass": model.embedder.highpass,
            "patch_size": model.patch_size, "has_head": model.head is not None}


def _flatten(obj: Checkpointable) -> tuple:
    if isinstance(obj, DetectorModel):
        return "detector", _detector_meta(obj), obj.state_dict()
    if isinstance(obj, E3Model):
        ens = obj.ensemble
        first = ens.embedders[0]
        meta = {"num_experts": len(ens), "embed_dim": ens.embed_dim, "patch_size": ens.patch_size,
                "preset": _preset_of(first), "highpass": first.highpass, "fusion": asdict(obj.ekfn.arch)}
        state = OrderedDict()
        for i, emb in enumerate(ens.embedders):
            for name, arr in emb.state_dict().items():
                state[f"expert.{i}.{name}"] = arr
        for name, arr in obj.ekfn.state_dict().items():
            state[f"ekfn.{name}"] = arr
        return "e3", meta, state
    models = list(obj)
    if not models or not all(isinstance(m, DetectorModel) for m in models):
        raise TypeError("expected a DetectorModel, an E3Model or a non-empty list of DetectorModels")
    state = OrderedDict()
    for i, m in enumerate(models):
        for name, arr in m.state_dict().items():
            state[f"model.{i}.{name}"] = arr
    return "detector_ensemble", {"models": [_detector_meta(m) for m in models]}, state


def _preset_of(embedder) -> str:
    from .detector import PRESETS

    widths = (embedder.convs[0].weight.shape[0], embedder.convs[1].weight.shape[0])
    for name, w in PRESETS.items():
        if tuple(w) == widths:
            return name
    raise FormatError(f"embedder widths {widths} match no preset")


def save_checkpoint(obj: Checkpointable, path) -> Path:
    kind, meta, state = _flatten(obj)
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for name, arr in state.items():
        raw = np.ascontiguousarray(arr, dtype=_LE_F32).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "length": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {"format_version": FORMAT_VERSION, "kind": kind, "meta": meta, "payload_bytes": offset,
                "tensors": entries}
    (out / PAYLOAD).write_bytes(b"".join(chunks))
    (out / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return out


def read_manifest(path) -> dict:
    try:
        manifest = json.loads((Path(path) / MANIFEST).read_text())
    except FileNotFoundError:
        raise FormatError(f"no {MANIFEST} in {path}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed manifest: {exc}") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint format_version {manifest.get('format_version')!r}")
    return manifest


def _read_tensors(path, manifest: dict) -> "OrderedDict[str, np.ndarray]":
    try:
        payload = (Path(path) / PAYLOAD).read_bytes()
    except FileNotFoundError:
        raise FormatError(f"no {PAYLOAD} in {path}") from None
    expected = manifest.get("payload_bytes")
    if len(payload) != expected:
        raise FormatError(f"payload has {len(payload)} bytes, manifest says {expected}")
    tensors, cursor = OrderedDict(), 0
    for e in manifest["tensors"]:
        shape = tuple(e["shape"])
        if e["offset"] != cursor:
            raise FormatError(f"tensor {e['name']} at offset {e['offset']}, expected {cursor}")
        if e["length"] != 4 * math.prod(shape):
            raise FormatError(f"tensor {e['name']} length {e['length']} does not match shape {shape}")
        if e["name"] in tensors:
            raise FormatError(f"duplicate tensor {e['name']}")
        tensors[e["name"]] = np.frombuffer(payload, _LE_F32, math.prod(shape), cursor).reshape(shape).astype(np.float32)
        cursor += e["length"]
    if cursor != len(payload):
        raise FormatError("tensor lengths do not cover the payload")
    return tensors


def _prefixed(tensors: Dict[str, np.ndarray], prefix: str) -> "OrderedDict[str, np.ndarray]":
    return OrderedDict((k[len(prefix):], v) for k, v in tensors.items() if k.startswith(prefix))


def _rebuild_detector(meta: dict, state: Dict[str, np.ndarray]) -> DetectorModel:
    model = build_detector(meta["preset"], meta["embed_dim"], seed=0, highpass=meta["highpass"],
                           patch_size=meta["patch_size"])
    if not meta.get("has_head", True):
        model.head = None
    own = model.state_dict()
    if set(own) != set(state):
        raise FormatError(f"tensor names do not match a {meta['preset']} detector")
    for name, p in model.named_parameters():
        if p.shape != state[name].shape:
            raise FormatError(f"{name}: shape {state[name].shape} != expected {p.shape}")
    model.embedder.load_state_dict(_prefixed(state, "embedder."))
    if model.head is not None:
        model.head.load_state_dict(_prefixed(state, "head."))
    return model


def load_checkpoint(path) -> Checkpointable:
    """Rebuild the saved object; raises FormatError before constructing anything on bad input."""
    manifest = read_manifest(path)
    tensors = _read_tensors(path, manifest)
    kind, meta = manifest.get("kind"), manifest.get("meta", {})
    try:
        if kind == "detector":
            return _rebuild_detector(meta, tensors)
        if kind == "detector_ensemble":
            return [_rebuild_detector(m, _prefixed(tensors, f"model.{i}.")) for i, m in enumerate(meta["models"])]
        if kind == "e3":
            return _rebuild_e3(meta, tensors)
    except KeyError as exc:
        raise FormatError(f"manifest metadata lacks {exc}") from None
    raise FormatError(f"unknown checkpoint kind {kind!r}")


def _rebuild_e3(meta: dict, tensors: Dict[str, np.ndarray]) -> E3Model:
    embedders: List = []
    for i in range(meta["num_experts"]):
        det = build_detector(meta["preset"], meta["embed_dim"], seed=0, highpass=meta["highpass"],
                             patch_size=meta["patch_size"])
        det.embedder.load_state_dict(_prefixed(tensors, f"expert.{i}."))
        embedders.append(freeze(det.embedder))
    ensemble = ExpertEnsemble(embedders, meta["embed_dim"], meta["patch_size"])
    ekfn = FusionNetwork(meta["num_experts"], meta["embed_dim"], FusionConfig(**meta["fusion"]), seed=0)
    ekfn.load_state_dict(_prefixed(tensors, "ekfn."))
    return E3Model(ensemble, ekfn)


def payload_bytes(path) -> bytes:
    return (Path(path) / PAYLOAD).read_bytes()
