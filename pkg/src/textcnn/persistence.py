"""Single-file model container.

Layout::

    b"TCNN" | version (u32 LE) | manifest length (u64 LE) | manifest (UTF-8 JSON) | payload

The manifest holds the training config, labels and vocabulary tokens in id
order, and a tensor directory of ``{name, dims, byte_offset, byte_length}``.
Tensors are row-major little-endian float64, with offsets relative to the
payload start.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ModelParams
from .text import LabelMap, Vocabulary
from .training import TrainConfig

MAGIC = b"TCNN"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")


class ModelFormatError(ValueError):
    pass


class NotAModelFileError(ModelFormatError):
    pass


class UnsupportedVersionError(ModelFormatError):
    pass


class TruncatedFileError(ModelFormatError):
    pass


class ManifestMismatchError(ModelFormatError):
    pass


@dataclass(eq=False)
class ModelBundle:
    params: ModelParams
    vocab: Vocabulary
    label_map: LabelMap
    train_config: TrainConfig

    def validate(self) -> None:
        self.params.validate()
        if self.params.vocab_size != len(self.vocab):
            raise ValueError(f"embedding has {self.params.vocab_size} rows but vocabulary has {len(self.vocab)} tokens")
        if self.params.fc_weight.shape[1] != len(self.label_map):
            raise ValueError("fc_weight columns do not match the label count")
        if self.train_config.model != self.params.config:
            raise ValueError("train_config.model differs from the parameters' config")


def _expected_dims(config) -> dict[str, list[int]]:
    D, K, L = config.embedding_dim, config.kernels_per_height, config.num_classes
    dims = {}
    for H in config.heights:
        dims[f"conv{H}.weight"] = [K, H, D]
        dims[f"conv{H}.bias"] = [K]
    dims["fc.weight"] = [config.feature_dim, L]
    dims["fc.bias"] = [L]
    return dims


def to_bytes(bundle: ModelBundle) -> bytes:
    bundle.validate()
    directory, chunks, offset = [], [], 0
    for name, arr in bundle.params.named():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        directory.append({"name": name, "dims": list(arr.shape), "byte_offset": offset, "byte_length": len(data)})
        chunks.append(data)
        offset += len(data)
    manifest = {
        "train_config": bundle.train_config.to_dict(),
        "labels": list(bundle.label_map.labels),
        "vocabulary": list(bundle.vocab.tokens),
        "tensors": directory,
    }
    blob = json.dumps(manifest, ensure_ascii=False, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _HEADER.pack(MAGIC, VERSION, len(blob)) + blob + b"".join(chunks)


def save(bundle: ModelBundle, path) -> int:
    data = to_bytes(bundle)
    Path(path).write_bytes(data)
    return len(data)


def from_bytes(data: bytes) -> ModelBundle:
    if len(data) < 4 or data[:4] != MAGIC:
        raise NotAModelFileError("not a model file (bad magic)")
    if len(data) < _HEADER.size:
        raise TruncatedFileError(f"truncated header: expected {_HEADER.size} bytes, got {len(data)}")
    _, version, mlen = _HEADER.unpack_from(data)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported format version {version} (supported: {VERSION})")
    start = _HEADER.size
    if len(data) < start + mlen:
        raise TruncatedFileError(f"truncated manifest: expected {mlen} bytes, got {len(data) - start}")
    try:
        manifest = json.loads(data[start:start + mlen].decode("utf-8"))
        config = TrainConfig.from_dict(manifest["train_config"])
        labels, tokens, directory = manifest["labels"], manifest["vocabulary"], manifest["tensors"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ManifestMismatchError(f"invalid manifest: {exc}") from None
    payload = memoryview(data)[start + mlen:]

    if not isinstance(directory, list) or not all(isinstance(t, dict) for t in directory):
        raise ManifestMismatchError("tensor directory must be a list of objects")
    expected = _expected_dims(config.model)
    expected_names = ["embedding", *(n for H in config.model.heights for n in (f"conv{H}.weight", f"conv{H}.bias")),
                      "fc.weight", "fc.bias"]
    names = [t.get("name") for t in directory]
    if names != expected_names:
        raise ManifestMismatchError(f"tensor directory {names} does not match config {expected_names}")
    declared = 0
    for t in directory:
        dims = t["dims"]
        want = expected.get(t["name"], [len(tokens), config.model.embedding_dim])
        if dims != want:
            raise ManifestMismatchError(f"tensor {t['name']} has dims {dims}, config implies {want}")
        if t["byte_length"] != int(np.prod(dims)) * 8:
            raise ManifestMismatchError(f"tensor {t['name']}: byte_length {t['byte_length']} != {int(np.prod(dims))} x 8")
        if t["byte_offset"] != declared:
            raise ManifestMismatchError(f"tensor {t['name']}: byte_offset {t['byte_offset']} != expected {declared}")
        declared += t["byte_length"]
    if len(payload) < declared:
        raise TruncatedFileError(f"truncated payload: expected {declared} bytes, got {len(payload)}")
    if len(payload) > declared:
        raise ManifestMismatchError(f"payload has {len(payload) - declared} trailing bytes")

    arrays = {
        t["name"]: np.frombuffer(payload, dtype="<f8", count=int(np.prod(t["dims"])), offset=t["byte_offset"])
        .reshape(t["dims"]).astype(np.float64)
        for t in directory
    }
    H = config.model.heights
    params = ModelParams(
        arrays["embedding"],
        [arrays[f"conv{h}.weight"] for h in H],
        [arrays[f"conv{h}.bias"] for h in H],
        arrays["fc.weight"],
        arrays["fc.bias"],
        config.model,
    )
    try:
        bundle = ModelBundle(params, Vocabulary(tuple(tokens), min_count=config.min_count),
                             LabelMap(tuple(labels)), config)
        bundle.validate()
    except ValueError as exc:
        raise ManifestMismatchError(str(exc)) from None
    return bundle


def load(path) -> ModelBundle:
    return from_bytes(Path(path).read_bytes())
